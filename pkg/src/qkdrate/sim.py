"""Pulse-level Monte Carlo of decoy-state BB84 with photon-number tagging.

Every pulse draws an intensity, Alice's bit and basis, a Poisson photon
number ``n``, a detection with probability ``Y_n``, an error with probability
``e_n`` and Bob's basis. Detections are tallied by the true photon-number class
(0, 1, >=2) so the omniscient rate terms can be computed; ``observable_view``
drops the tags to give what Alice and Bob actually see.

Sampling happens at the ``(n, Y_n, e_n)`` level of :mod:`qkdrate.channel`, not
at detector-click level, so the statistics match the analytic model exactly.

Random streams come from numpy's counter-based Philox generator. Shard ``k``
uses the ``k``-th child of ``SeedSequence(seed)``, so results are reproducible
for a fixed ``(seed, shards)`` pair but differ across shard counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import E0, ChannelParams, transmittance
from .core import RateTerms, key_rate_new
from .errors import InsufficientDataError, ValidationError

N_CLASSES = 3  # vacuum, single photon, multi photon
CLASS_NAMES = ("vacuum", "single", "multi")

_CHUNK = 1 << 20


@dataclass(frozen=True)
class SimConfig:
    pulses: int
    intensities: tuple[float, ...]
    intensity_probs: tuple[float, ...]
    p_z: float = 0.95
    seed: int = 0
    shards: int = 1

    def __post_init__(self):
        object.__setattr__(self, "intensities", tuple(float(m) for m in self.intensities))
        object.__setattr__(self, "intensity_probs", tuple(float(p) for p in self.intensity_probs))
        if int(self.pulses) != self.pulses or self.pulses <= 0:
            raise ValidationError(f"sim.pulses must be a positive integer, got {self.pulses!r}")
        if not self.intensities:
            raise ValidationError("sim.intensities must not be empty")
        if len(self.intensities) != len(self.intensity_probs):
            raise ValidationError("sim.intensity_probs must have one entry per intensity")
        if any(not math.isfinite(m) or m < 0 for m in self.intensities):
            raise ValidationError(f"sim.intensities must be finite and >= 0, got {self.intensities}")
        if len(set(self.intensities)) != len(self.intensities):
            raise ValidationError(f"sim.intensities must be distinct, got {self.intensities}")
        if any(not 0.0 <= p <= 1.0 for p in self.intensity_probs):
            raise ValidationError("sim.intensity_probs entries must lie in [0, 1]")
        if abs(math.fsum(self.intensity_probs) - 1.0) > 1e-12:
            raise ValidationError(
                f"sim.intensity_probs must sum to 1, got {math.fsum(self.intensity_probs)!r}"
            )
        if not 0.5 <= self.p_z < 1.0:
            raise ValidationError(f"sim.p_z must lie in [0.5, 1), got {self.p_z!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError(f"sim.seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if int(self.shards) != self.shards or self.shards < 1:
            raise ValidationError(f"sim.shards must be an integer >= 1, got {self.shards!r}")
        if self.pulses < self.shards:
            raise ValidationError("sim.pulses must be at least sim.shards")

    @property
    def sifting_factor(self) -> float:
        return self.p_z**2 + (1.0 - self.p_z) ** 2


@dataclass(frozen=True, eq=False)
class TallyResult:
    """Per-intensity counters, split by true photon-number class.

    ``emitted`` has shape ``(k,)``; ``detected``, ``sifted`` and ``errors`` have
    shape ``(k, 3)`` with columns vacuum, single, multi.
    """

    intensities: tuple[float, ...]
    p_z: float
    emitted: np.ndarray
    detected: np.ndarray
    sifted: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        k = len(self.intensities)
        for name, shape in (("emitted", (k,)), ("detected", (k, N_CLASSES)),
                            ("sifted", (k, N_CLASSES)), ("errors", (k, N_CLASSES))):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != shape:
                raise ValidationError(f"tally.{name} must have shape {shape}, got {arr.shape}")
            if (arr < 0).any():
                raise ValidationError(f"tally.{name} has negative counts")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if (self.detected.sum(axis=1) > self.emitted).any():
            raise ValidationError("tally has more detections than emitted pulses")
        if (self.sifted > self.detected).any() or (self.errors > self.sifted).any():
            raise ValidationError("tally violates errors <= sifted <= detected")

    @classmethod
    def empty(cls, intensities, p_z) -> TallyResult:
        k = len(intensities)
        zeros = np.zeros((k, N_CLASSES), dtype=np.int64)
        return cls(tuple(intensities), p_z, np.zeros(k, dtype=np.int64), zeros, zeros, zeros)

    @property
    def sifting_factor(self) -> float:
        return self.p_z**2 + (1.0 - self.p_z) ** 2

    def __eq__(self, other):
        if not isinstance(other, TallyResult):
            return NotImplemented
        return (
            self.intensities == other.intensities
            and self.p_z == other.p_z
            and all(np.array_equal(getattr(self, f), getattr(other, f))
                    for f in ("emitted", "detected", "sifted", "errors"))
        )

    def to_dict(self) -> dict:
        rows = []
        for i, mu in enumerate(self.intensities):
            rows.append({
                "mu": mu,
                "emitted": int(self.emitted[i]),
                "detected": dict(zip(CLASS_NAMES, map(int, self.detected[i]))),
                "sifted": dict(zip(CLASS_NAMES, map(int, self.sifted[i]))),
                "errors": dict(zip(CLASS_NAMES, map(int, self.errors[i]))),
            })
        return {"p_z": self.p_z, "intensities": rows}

    @classmethod
    def from_dict(cls, data: dict) -> TallyResult:
        try:
            rows = data["intensities"]
            return cls(
                intensities=tuple(float(r["mu"]) for r in rows),
                p_z=float(data["p_z"]),
                emitted=np.array([r["emitted"] for r in rows], dtype=np.int64),
                detected=np.array([[r["detected"][c] for c in CLASS_NAMES] for r in rows],
                                  dtype=np.int64).reshape(-1, N_CLASSES),
                sifted=np.array([[r["sifted"][c] for c in CLASS_NAMES] for r in rows],
                                dtype=np.int64).reshape(-1, N_CLASSES),
                errors=np.array([[r["errors"][c] for c in CLASS_NAMES] for r in rows],
                                dtype=np.int64).reshape(-1, N_CLASSES),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed tally document: {exc!r}") from exc


def merge(a: TallyResult, b: TallyResult) -> TallyResult:
    """Field-wise sum of two tallies over the same intensity schema."""
    if a.intensities != b.intensities or a.p_z != b.p_z:
        raise ValidationError(
            f"cannot merge tallies with different schemas: "
            f"{a.intensities}/p_z={a.p_z} vs {b.intensities}/p_z={b.p_z}"
        )
    return TallyResult(
        a.intensities, a.p_z,
        a.emitted + b.emitted,
        a.detected + b.detected,
        a.sifted + b.sifted,
        a.errors + b.errors,
    )


def _yield_table(n_max, eta, y0, e_d):
    n = np.arange(n_max + 1, dtype=float)
    if eta >= 1.0:
        eta_n = (n > 0).astype(float)
    else:
        eta_n = -np.expm1(n * np.log1p(-eta))
    y = np.where(eta_n == 1.0, 1.0, y0 + eta_n - y0 * eta_n)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(y > 0, (E0 * y0 + e_d * eta_n) / np.where(y > 0, y, 1.0), E0)
    e[0] = E0
    return y, np.clip(e, 0.0, 1.0)


def _run_shard(pulses, cfg: SimConfig, eta, c: ChannelParams, seed_seq):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    mus = np.asarray(cfg.intensities)
    cum = np.cumsum(cfg.intensity_probs)
    cum[-1] = 1.0
    k = len(mus)
    emitted = np.zeros(k, dtype=np.int64)
    counts = np.zeros((3, k * N_CLASSES), dtype=np.int64)
    y_tab, e_tab = _yield_table(16, eta, c.y0, c.e_d)
    done = 0
    while done < pulses:
        m = min(_CHUNK, pulses - done)
        done += m
        idx = np.searchsorted(cum, rng.random(m), side="right")
        alice_bit = rng.integers(0, 2, m, dtype=np.int8)
        alice_z = rng.random(m) < cfg.p_z
        n = rng.poisson(mus[idx])
        if n.max(initial=0) >= len(y_tab):
            y_tab, e_tab = _yield_table(int(n.max()) + 16, eta, c.y0, c.e_d)
        detected = rng.random(m) < y_tab[n]
        flipped = rng.random(m) < e_tab[n]
        bob_z = rng.random(m) < cfg.p_z
        bob_bit = np.where(detected, alice_bit ^ flipped, 0)
        sifted = detected & (alice_z == bob_z)
        error = sifted & (bob_bit != alice_bit)

        cell = idx * N_CLASSES + np.minimum(n, 2)
        emitted += np.bincount(idx, minlength=k)
        size = k * N_CLASSES
        counts[0] += np.bincount(cell[detected], minlength=size)
        counts[1] += np.bincount(cell[sifted], minlength=size)
        counts[2] += np.bincount(cell[error], minlength=size)
    shape = (k, N_CLASSES)
    return TallyResult(cfg.intensities, cfg.p_z, emitted,
                       counts[0].reshape(shape), counts[1].reshape(shape), counts[2].reshape(shape))


def simulate(cfg: SimConfig, c: ChannelParams) -> TallyResult:
    """Run the Monte Carlo and return merged tallies.

    Shards run on a thread pool, each with its own Philox stream.
    """
    if not isinstance(cfg, SimConfig) or not isinstance(c, ChannelParams):
        raise ValidationError("simulate needs a SimConfig and a ChannelParams")
    eta = transmittance(c)
    children = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.shards)
    base, extra = divmod(cfg.pulses, cfg.shards)
    sizes = [base + (1 if i < extra else 0) for i in range(cfg.shards)]
    if cfg.shards == 1:
        parts = [_run_shard(sizes[0], cfg, eta, c, children[0])]
    else:
        with ThreadPoolExecutor(max_workers=cfg.shards) as pool:
            parts = list(pool.map(lambda a: _run_shard(a[0], cfg, eta, c, a[1]),
                                  zip(sizes, children)))
    total = TallyResult.empty(cfg.intensities, cfg.p_z)
    for part in parts:
        total = merge(total, part)
    return total


def empirical_rate_terms(t: TallyResult, signal_index: int) -> RateTerms:
    """Omniscient ``RateTerms`` from the ground-truth tags of one intensity.

    The gain is the sifted detection count divided by the expected number of
    basis matches, ``emitted * sifting_factor``; every other term comes from
    the sifted sample. With no single-photon detections ``e1`` is set to 1/2.

    Raises
    ------
    InsufficientDataError
        If the intensity has no sifted detections.
    """
    if not 0 <= signal_index < len(t.intensities):
        raise ValidationError(f"signal_index {signal_index} out of range")
    sifted = t.sifted[signal_index]
    errors = t.errors[signal_index]
    total = int(sifted.sum())
    if total == 0:
        raise InsufficientDataError(
            f"no sifted detections at intensity mu={t.intensities[signal_index]}"
        )
    q = total / (int(t.emitted[signal_index]) * t.sifting_factor)
    e1 = errors[1] / sifted[1] if sifted[1] else E0
    return RateTerms.from_fractions(
        min(q, 1.0),
        int(errors.sum()) / total,
        sifted[0] / total,
        sifted[1] / total,
        float(e1),
    )


def rate_new_stderr(t: TallyResult, signal_index: int, *, f_ec: float = 1.0) -> float:
    """Delta-method standard error of the empirical vacuum-credited rate.

    Each emitted pulse of the intensity is one multinomial draw over
    (class, sifted, error) outcomes; the gradient of the rate with respect to
    the cell frequencies is taken by central differences.
    """
    m = int(t.emitted[signal_index])
    if m == 0:
        raise InsufficientDataError("no emitted pulses at this intensity")
    sf = t.sifting_factor
    ok = (t.sifted[signal_index] - t.errors[signal_index]).astype(float)
    bad = t.errors[signal_index].astype(float)
    freq = np.concatenate([ok, bad]) / m

    def rate(p):
        good, err = p[:3], p[3:]
        s = good + err
        total = s.sum()
        if total <= 0:
            return 0.0
        q = total / sf
        e_sig = err.sum() / total
        e1 = err[1] / s[1] if s[1] > 0 else E0
        omega0, omega1 = s[0] / total, s[1] / total
        h = lambda x: 0.0 if x <= 0 or x >= 1 else -x * math.log2(x) - (1 - x) * math.log2(1 - x)
        return q * (-f_ec * h(e_sig) + omega0 + omega1 * (1 - h(e1)))

    grad = np.zeros(6)
    for j in range(6):
        step = max(freq[j] * 1e-4, 1e-12)
        up, dn = freq.copy(), freq.copy()
        up[j] += step
        dn[j] = max(dn[j] - step, 0.0)
        grad[j] = (rate(up) - rate(dn)) / (up[j] - dn[j])
    var = (grad**2 @ freq - (grad @ freq) ** 2) / m
    return math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class IntensityCounts:
    mu: float
    emitted: int
    detected: int
    sifted: int
    errors: int


@dataclass(frozen=True)
class ObservableView:
    """Tag-free per-intensity totals, i.e. what the two parties can measure."""

    p_z: float
    rows: tuple[IntensityCounts, ...] = field(default_factory=tuple)

    @property
    def sifting_factor(self) -> float:
        return self.p_z**2 + (1.0 - self.p_z) ** 2

    def to_dict(self) -> dict:
        return {"p_z": self.p_z,
                "intensities": [
                    {"mu": r.mu, "emitted": r.emitted, "detected": r.detected,
                     "sifted": r.sifted, "errors": r.errors} for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict) -> ObservableView:
        try:
            rows = tuple(
                IntensityCounts(float(r["mu"]), int(r["emitted"]), int(_total(r["detected"])),
                                int(_total(r["sifted"])), int(_total(r["errors"])))
                for r in data["intensities"]
            )
            return cls(float(data["p_z"]), rows)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed observable document: {exc!r}") from exc


def _total(value):
    # tally documents carry per-class dicts, observable documents plain totals
    return sum(value.values()) if isinstance(value, dict) else value


def observable_view(t: TallyResult) -> ObservableView:
    """Erase the photon-number tags, keeping per-intensity totals."""
    rows = tuple(
        IntensityCounts(mu, int(t.emitted[i]), int(t.detected[i].sum()),
                        int(t.sifted[i].sum()), int(t.errors[i].sum()))
        for i, mu in enumerate(t.intensities)
    )
    return ObservableView(t.p_z, rows)


def merge_views(a: ObservableView, b: ObservableView) -> ObservableView:
    if a.p_z != b.p_z or [r.mu for r in a.rows] != [r.mu for r in b.rows]:
        raise ValidationError("cannot merge observable views with different schemas")
    return ObservableView(a.p_z, tuple(
        IntensityCounts(x.mu, x.emitted + y.emitted, x.detected + y.detected,
                        x.sifted + y.sifted, x.errors + y.errors)
        for x, y in zip(a.rows, b.rows)))


def empirical_rate_new(t: TallyResult, signal_index: int, *, f_ec: float = 1.0) -> float:
    return key_rate_new(empirical_rate_terms(t, signal_index), f_ec=f_ec)
