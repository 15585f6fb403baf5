"""Decoy-state estimation of Y0, Y1 and e1 from observable statistics.

Two estimators are provided. ``estimate_y1_e1`` is the closed-form
vacuum + weak decoy bound. With signal intensity ``mu`` and weak decoy
``nu < mu``::

    Y1 >= mu / (mu*nu - nu**2) * (Q_nu e^nu - nu**2/mu**2 * Q_mu e^mu
                                  - (mu**2 - nu**2)/mu**2 * Y0_high)
    e1 <= (E_nu Q_nu e^nu - e0 * Y0_low) / (nu * Y1_low)

``estimate_lp`` solves the truncated linear program over all observed
intensities and serves as a cross-check; it is never looser than the
closed form on the same data.

Finite samples are handled by widening each observed probability by
``n_sigma`` binomial standard deviations before the bounds are evaluated.
Observations with ``samples = inf`` skip the widening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .channel import E0, ChannelParams, cutoff_for, overall_error_mass, overall_gain, poisson_pn, poisson_tail
from .core import RateTerms, key_rate_new
from .errors import InfeasibleError, InsufficientDataError, OrderingError, ValidationError
from .sim import ObservableView

DEFAULT_N_SIGMA = 5.0


@dataclass(frozen=True)
class Observation:
    """Measured gain ``q`` and QBER ``e`` of intensity ``mu`` over ``samples`` trials."""

    mu: float
    q: float
    e: float
    samples: float = math.inf

    def __post_init__(self):
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ValidationError(f"observation mu must be finite and >= 0, got {self.mu!r}")
        for name in ("q", "e"):
            v = getattr(self, name)
            if not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValidationError(f"observation {name} must lie in [0, 1], got {v!r}")
        if math.isnan(self.samples) or self.samples < 0:
            raise ValidationError(f"observation samples must be >= 0, got {self.samples!r}")

    @property
    def error_mass(self) -> float:
        return self.e * self.q


@dataclass(frozen=True)
class Interval:
    low: float
    high: float


@dataclass(frozen=True)
class DecoyBounds:
    """Pessimistic bounds on the photon-number-resolved quantities.

    ``omega0_low`` and ``omega1_low`` refer to ``signal_mu``. ``flags`` records
    every fallback or clamp that fired while the bounds were computed.
    """

    y0_low: float
    y0_high: float
    y1_low: float
    e1_high: float
    omega0_low: float
    omega1_low: float
    signal_mu: float
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.y0_low <= self.y0_high <= 1.0:
            raise ValidationError(f"invalid Y0 interval [{self.y0_low}, {self.y0_high}]")
        for name in ("y1_low", "e1_high", "omega0_low", "omega1_low"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"DecoyBounds.{name} must lie in [0, 1], got {v!r}")
        if self.omega0_low + self.omega1_low > 1.0 + 1e-12:
            raise ValidationError("DecoyBounds omega0_low + omega1_low exceeds 1")


def _sigma(p: float, n: float) -> float:
    if math.isinf(n):
        return 0.0
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _widen(p: float, n: float, n_sigma: float) -> Interval:
    d = n_sigma * _sigma(p, n)
    return Interval(max(p - d, 0.0), min(p + d, 1.0))


def _clamp(value: float, name: str, flags: list, hi: float = 1.0) -> float:
    if value < 0.0:
        flags.append(f"clamped:{name}")
        return 0.0
    if value > hi:
        flags.append(f"clamped:{name}")
        return hi
    return value


def _find(obs_list, mu):
    for o in obs_list:
        if o.mu == mu:
            return o
    return None


def _check_distinct(obs_list):
    mus = [o.mu for o in obs_list]
    if len(set(mus)) != len(mus):
        raise ValidationError(f"observation intensities must be distinct, got {mus}")


def estimate_y0(obs: Observation, *, n_sigma: float = DEFAULT_N_SIGMA) -> Interval:
    """Background yield interval from the vacuum decoy's gain.

    Raises
    ------
    ValidationError
        If ``obs`` is not a vacuum observation.
    InsufficientDataError
        If the observation is backed by zero samples.
    """
    if obs.mu != 0.0:
        raise ValidationError(f"estimate_y0 needs the vacuum intensity, got mu={obs.mu}")
    if obs.samples == 0:
        raise InsufficientDataError("vacuum observation has zero samples")
    return _widen(obs.q, obs.samples, n_sigma)


def estimate_y1_e1(
    obs_list,
    signal_mu: float,
    weak_mu: float,
    *,
    n_sigma: float = DEFAULT_N_SIGMA,
) -> DecoyBounds:
    """Closed-form vacuum + weak decoy bounds.

    Without a vacuum observation ``Y0`` falls back to ``[0, Q_nu e^nu]`` and the
    result carries the ``no-vacuum`` flag.

    Raises
    ------
    OrderingError
        If ``weak_mu`` is not strictly between 0 and ``signal_mu``.
    InsufficientDataError
        If the signal or weak observation is missing or empty.
    """
    obs_list = list(obs_list)
    _check_distinct(obs_list)
    mu, nu = float(signal_mu), float(weak_mu)
    if not 0.0 < nu < mu:
        raise OrderingError(f"need 0 < weak ({nu}) < signal ({mu})")
    sig, weak = _find(obs_list, mu), _find(obs_list, nu)
    if sig is None or weak is None:
        missing = "signal" if sig is None else "weak decoy"
        raise InsufficientDataError(f"no observation for the {missing} intensity")
    for o in (sig, weak):
        if o.samples == 0:
            raise InsufficientDataError(f"observation at mu={o.mu} has zero samples")
    if sig.q <= 0.0:
        raise InsufficientDataError("signal gain is zero")

    flags: list[str] = []
    q_mu = _widen(sig.q, sig.samples, n_sigma)
    q_nu = _widen(weak.q, weak.samples, n_sigma)
    eq_nu = _widen(weak.error_mass, weak.samples, n_sigma)

    vac = _find(obs_list, 0.0)
    if vac is not None:
        y0 = estimate_y0(vac, n_sigma=n_sigma)
    else:
        flags.append("no-vacuum")
        y0 = Interval(0.0, min(q_nu.high * math.exp(nu), 1.0))

    y1 = (mu / (mu * nu - nu * nu)) * (
        q_nu.low * math.exp(nu)
        - (nu * nu) / (mu * mu) * q_mu.high * math.exp(mu)
        - (mu * mu - nu * nu) / (mu * mu) * y0.high
    )
    if y1 <= 0.0:
        flags.append("y1-nonpositive")
        y1_low, e1_high = 0.0, 1.0
    else:
        y1_low = _clamp(y1, "y1_low", flags)
        e1 = (eq_nu.high * math.exp(nu) - E0 * y0.low) / (nu * y1_low)
        e1_high = _clamp(e1, "e1_high", flags)

    return _finish(y0, y1_low, e1_high, mu, sig.q, flags)


def _finish(y0: Interval, y1_low, e1_high, mu, q_signal, flags):
    omega0 = _clamp(poisson_pn(mu, 0) * y0.low / q_signal, "omega0_low", flags)
    omega1 = _clamp(poisson_pn(mu, 1) * y1_low / q_signal, "omega1_low", flags, hi=1.0 - omega0)
    return DecoyBounds(
        y0_low=y0.low, y0_high=y0.high, y1_low=y1_low, e1_high=e1_high,
        omega0_low=omega0, omega1_low=omega1, signal_mu=mu, flags=tuple(flags),
    )


def pessimistic_rate(bounds: DecoyBounds, q_signal: float, e_signal: float, *, f_ec: float = 1.0) -> float:
    """Vacuum-credited rate with the worst-case decoy estimates substituted.

    ``Omega0 -> omega0_low``, ``Omega1 -> omega1_low``, ``e1 -> e1_high``; every
    unaccounted detection is charged to the multi-photon class.
    """
    t = RateTerms.from_fractions(q_signal, e_signal, bounds.omega0_low, bounds.omega1_low,
                                 bounds.e1_high)
    return key_rate_new(t, f_ec=f_ec)


# --- linear-programming cross-check -------------------------------------------------------

_LP_OPTS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _sandwich_rows(obs_list, target, n_max, n_sigma):
    """Rows ``A x <= b`` for ``target - tail <= sum_n p_n x_n <= target``.

    Each row pair is scaled by its upper bound so that tiny gains and large
    gains are enforced to the same relative precision.
    """
    rows, rhs, owner = [], [], []
    for o in obs_list:
        p = np.array([poisson_pn(o.mu, n) for n in range(n_max + 1)])
        tail = poisson_tail(o.mu, n_max)
        iv = _widen(target(o), o.samples, n_sigma)
        scale = max(iv.high, 1e-300)
        rows.append(p / scale)
        rhs.append(iv.high / scale)
        rows.append(-p / scale)
        rhs.append(-(iv.low - tail) / scale)
        owner += [o.mu, o.mu]
    return np.array(rows), np.array(rhs), owner


def _solve(c, a_ub, b_ub, bounds):
    return linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs", options=_LP_OPTS)


def _violated(a_ub, b_ub, bounds, owner):
    """Intensities whose sandwich must be relaxed to make the program feasible."""
    n_var, n_row = a_ub.shape[1], a_ub.shape[0]
    a = np.hstack([a_ub, -np.eye(n_row)])
    c = np.concatenate([np.zeros(n_var), np.ones(n_row)])
    res = _solve(c, a, b_ub, list(bounds) + [(0, None)] * n_row)
    if res.status != 0:
        return sorted(set(owner))
    return sorted({owner[i] for i in np.flatnonzero(res.x[n_var:] > 1e-9)})


def _optimise(c, a_ub, b_ub, bounds, owner, what):
    res = _solve(c, a_ub, b_ub, bounds)
    if res.status == 2:
        bad = _violated(a_ub, b_ub, bounds, owner)
        raise InfeasibleError(
            f"observations are inconsistent with any {what}; violated sandwich at mu={bad}",
            violated=bad,
        )
    if res.status != 0:
        raise InsufficientDataError(f"linear program for {what} failed: {res.message}")
    return res.fun


def estimate_lp(
    obs_list,
    n_max: int | None = None,
    *,
    signal_mu: float | None = None,
    n_sigma: float = DEFAULT_N_SIGMA,
    max_tail: float | None = 1e-10,
) -> DecoyBounds:
    """Truncated linear-program bounds on Y0, Y1 and e1.

    Yields ``Y_n`` for ``n <= n_max`` are bounded by the gain sandwich of every
    intensity; the Poisson mass above ``n_max`` may hold any yield, which
    loosens each lower side by the tail mass. Error masses ``b_n = e_n Y_n``
    obey the same sandwich on ``E * Q`` with ``b_0 = Y0 / 2`` and
    ``0 <= b_n <= 1``. The error program uses the Y0 range from the yield
    program but is otherwise solved separately.

    ``signal_mu`` defaults to the largest intensity. ``max_tail`` rejects
    cutoffs whose Poisson tail is too large; pass ``None`` to allow any cutoff.

    Raises
    ------
    InfeasibleError
        If no yields reproduce the observations.
    """
    obs_list = list(obs_list)
    _check_distinct(obs_list)
    if len(obs_list) < 2:
        raise InsufficientDataError("estimate_lp needs at least two intensities")
    mu_top = max(o.mu for o in obs_list)
    if n_max is None:
        n_max = cutoff_for(mu_top)
    if max_tail is not None and poisson_tail(mu_top, n_max) >= max_tail:
        raise ValidationError(
            f"n_max={n_max} leaves Poisson tail {poisson_tail(mu_top, n_max):.3g} at mu={mu_top}"
        )
    signal_mu = mu_top if signal_mu is None else float(signal_mu)
    sig = _find(obs_list, signal_mu)
    if sig is None or sig.q <= 0.0:
        raise InsufficientDataError(f"no positive-gain observation at signal mu={signal_mu}")

    size = n_max + 1
    unit = [(0.0, 1.0)] * size

    def basis(k, sign=1.0):
        v = np.zeros(size)
        v[k] = sign
        return v

    a_y, b_y, owner = _sandwich_rows(obs_list, lambda o: o.q, n_max, n_sigma)
    y0_low = _optimise(basis(0), a_y, b_y, unit, owner, "yield set")
    y0_high = -_optimise(basis(0, -1.0), a_y, b_y, unit, owner, "yield set")
    y1_low = _optimise(basis(1), a_y, b_y, unit, owner, "yield set")

    flags: list[str] = []
    y0 = Interval(min(max(y0_low, 0.0), 1.0), min(max(y0_high, y0_low, 0.0), 1.0))
    y1_low = _clamp(y1_low, "y1_low", flags)

    a_b, b_b, owner = _sandwich_rows(obs_list, lambda o: o.error_mass, n_max, n_sigma)
    b_bounds = [(E0 * y0.low, E0 * y0.high)] + [(0.0, 1.0)] * n_max
    b1_high = -_optimise(basis(1, -1.0), a_b, b_b, b_bounds, owner, "error-mass set")

    if y1_low <= 0.0:
        flags.append("y1-nonpositive")
        e1_high = 1.0
    else:
        e1_high = _clamp(b1_high / y1_low, "e1_high", flags)
    return _finish(y0, y1_low, e1_high, signal_mu, sig.q, flags)


# --- observation sources ------------------------------------------------------------------

def model_observations(intensities, c: ChannelParams) -> list[Observation]:
    """Infinite-sample observations generated exactly by the channel model."""
    out = []
    for mu in intensities:
        q = overall_gain(mu, c)
        e = overall_error_mass(mu, c) / q if q > 0 else 0.0
        out.append(Observation(float(mu), q, min(e, 1.0), math.inf))
    return out


def observations_from_view(view: ObservableView) -> list[Observation]:
    """Gains and QBERs from tag-free Monte Carlo totals.

    The gain is sifted counts over expected basis matches and the sample size
    is that expected match count.
    """
    out = []
    sf = view.sifting_factor
    for r in view.rows:
        trials = r.emitted * sf
        if trials == 0:
            continue
        q = min(r.sifted / trials, 1.0)
        e = r.errors / r.sifted if r.sifted else 0.0
        out.append(Observation(r.mu, q, e, trials))
    return out
