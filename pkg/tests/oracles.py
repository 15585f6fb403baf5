"""Independent reference computations used by the tests.

Nothing here calls into ``qkdrate``: closed forms are evaluated with mpmath,
photon-number sums are done term by term, and the LP cross-check is an
exhaustive grid search.
"""

import itertools
import math

import mpmath
import numpy as np

mpmath.mp.dps = 40


def h2_mp(x):
    x = mpmath.mpf(x)
    if x in (0, 1):
        return mpmath.mpf(0)
    return -x * mpmath.log(x, 2) - (1 - x) * mpmath.log(1 - x, 2)


def model_mp(mu, eta, y0, e_d):
    """Signal-intensity quantities of the threshold-detector model at 40 digits."""
    mu, eta, y0, e_d = map(mpmath.mpf, (mu, eta, y0, e_d))
    half = mpmath.mpf(1) / 2
    q = y0 + (1 - y0) * (1 - mpmath.exp(-eta * mu))
    e = (half * y0 + e_d * (1 - mpmath.exp(-eta * mu))) / q
    y1 = y0 + eta - y0 * eta
    e1 = (half * y0 + e_d * eta) / y1
    omega0 = mpmath.exp(-mu) * y0 / q
    omega1 = mu * mpmath.exp(-mu) * y1 / q
    return {"q": q, "e": e, "y1": y1, "e1": e1, "omega0": omega0, "omega1": omega1,
            "omega_m": 1 - omega0 - omega1}


def rates_mp(q, e, omega0, omega1, e1):
    base = -h2_mp(e) + omega1 * (1 - h2_mp(e1))
    return q * base, q * (base + omega0)


def truncated_sums(mu, eta, y0, e_d, n_max):
    """Term-by-term ``sum p_n Y_n`` and ``sum p_n e_n Y_n`` plus the dropped tail mass."""
    gain = err = mass = 0.0
    for n in range(n_max + 1):
        p = math.exp(-mu) * mu**n / math.factorial(n)
        eta_n = 1.0 - (1.0 - eta) ** n
        y = y0 + eta_n - y0 * eta_n
        gain += p * y
        err += p * (0.5 * y0 + e_d * eta_n)
        mass += p
    return gain, err, 1.0 - mass


# --- grid search over truncated yields ------------------------------------------------------

def _pn(mu, n):
    return math.exp(-mu) * mu**n / math.factorial(n)


def _band(target, samples, n_sigma):
    if math.isinf(samples):
        return target, target
    d = n_sigma * math.sqrt(target * (1 - target) / samples)
    return max(target - d, 0.0), min(target + d, 1.0)


def _constraints(obs, n_max, key, n_sigma):
    """Rows ``(p, low, high)`` meaning ``low <= p . x <= high``."""
    rows = []
    for mu, q, e, samples in obs:
        target = q if key == "gain" else q * e
        lo, hi = _band(target, samples, n_sigma)
        p = np.array([_pn(mu, n) for n in range(n_max + 1)])
        tail = 1.0 - p.sum()
        rows.append((p, lo - tail, hi))
    return rows


def _grid_scan(rows, ranges, points):
    """Enumerate a grid over every coordinate except x1 and solve x1 exactly.

    ``ranges[k]`` is the search interval of coordinate ``k`` (entry 1 is
    ignored; x1 always lives in [0, 1]). For each grid node the rows reduce
    to an interval for x1, empty when the node is infeasible. Returns the
    node array, the x1 interval ends, the feasibility mask and the grid step
    of each coordinate.
    """
    dim = len(ranges)
    free = [k for k in range(dim) if k != 1]
    axes, steps = [], np.zeros(dim)
    for k in free:
        lo, hi = ranges[k]
        n = points if hi > lo else 1
        axes.append(np.linspace(lo, hi, n))
        steps[k] = (hi - lo) / (n - 1) if n > 1 else 0.0
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(free))
    nodes = np.zeros((len(mesh), dim))
    nodes[:, free] = mesh
    x1_lo = np.zeros(len(nodes))
    x1_hi = np.ones(len(nodes))
    ok = np.ones(len(nodes), dtype=bool)
    for p, r_lo, r_hi in rows:
        rest = nodes[:, free] @ p[free]
        if p[1] == 0.0:
            ok &= (rest >= r_lo) & (rest <= r_hi)
        else:
            x1_lo = np.maximum(x1_lo, (r_lo - rest) / p[1])
            x1_hi = np.minimum(x1_hi, (r_hi - rest) / p[1])
    ok &= x1_lo <= x1_hi
    return nodes, x1_lo, x1_hi, ok, steps


def _x1_resolution(rows, steps):
    """Worst shift of x1 needed to absorb a one-step move of the other coordinates."""
    worst = 0.0
    for p, _, _ in rows:
        if p[1] > 0.0:
            worst = max(worst, float(np.dot(p, steps)) / p[1])
    return worst


def _vacuum_range(rows):
    for p, r_lo, r_hi in rows:
        if p[0] > 0.0 and not p[1:].any():
            return max(r_lo / p[0], 0.0), min(r_hi / p[0], 1.0)
    return 0.0, 1.0


def grid_search_bounds(obs, n_max=3, n_sigma=5.0, points=121):
    """Grid-search estimates of the Y0 range, the Y1 minimum and the b1 maximum.

    ``obs`` is a list of ``(mu, q, e, samples)``. Every coordinate except the
    single-photon one is enumerated on ``points`` nodes (Y0 and b0 only over
    the vacuum band); the single-photon coordinate is solved exactly at each
    node, so every reported value is attained by a feasible point. Error
    masses use ``b0 = Y0/2`` over the Y0 range found by the yield search.

    Returns ``(values, resolution)`` dicts; ``resolution`` is the grid's
    accuracy for each quantity.
    """
    dim = n_max + 1
    rows_y = _constraints(obs, n_max, "gain", n_sigma)
    ranges = [_vacuum_range(rows_y)] + [(0.0, 1.0)] * n_max
    nodes, y1_lo, _, ok, steps = _grid_scan(rows_y, ranges, points)
    if not ok.any():
        raise ValueError("grid search found no feasible yields")
    values = {
        "y0_low": float(nodes[ok, 0].min()),
        "y0_high": float(nodes[ok, 0].max()),
        "y1_low": float(y1_lo[ok].min()),
    }
    resolution = {"y0_low": steps[0], "y0_high": steps[0],
                  "y1_low": _x1_resolution(rows_y, steps)}

    rows_b = _constraints(obs, n_max, "error", n_sigma)
    ranges_b = [(0.5 * values["y0_low"], 0.5 * values["y0_high"])] + [(0.0, 1.0)] * n_max
    nodes, _, b1_hi, ok, steps = _grid_scan(rows_b, ranges_b, points)
    if not ok.any():
        raise ValueError("grid search found no feasible error masses")
    values["b1_high"] = float(b1_hi[ok].max())
    resolution["b1_high"] = _x1_resolution(rows_b, steps) + 0.5 * resolution["y0_low"]
    return values, resolution


# --- toy memory accounting -----------------------------------------------------------------

def toy_scenarios(pulses=4):
    """Every assignment of emission class and detection to ``pulses`` pulses.

    Yields ``(classes, detected)`` tuples where classes are 0 (vacuum),
    1 (single photon) or 2 (multi photon).
    """
    for classes in itertools.product((0, 1, 2), repeat=pulses):
        for detected in itertools.product((False, True), repeat=pulses):
            yield classes, detected


def toy_count(classes, detected):
    """Sifted bits, Eve's bits and secure bits counted one pulse at a time.

    Noiseless channel: every detected pulse adds one sifted bit, every
    detected multi-photon pulse adds one bit to Eve's memory, and the rest are
    secure.
    """
    sifted = sum(detected)
    eve = sum(1 for c, d in zip(classes, detected) if d and c == 2)
    secure = sum(1 for c, d in zip(classes, detected) if d and c != 2)
    return sifted, eve, secure
