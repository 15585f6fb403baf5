"""Analytic photon-number-resolved channel model.

A Poisson source of mean photon number ``mu`` feeds a lossy fiber and a
threshold detector with background yield ``y0``. Each photon survives
independently with overall transmittance ``eta``, so an ``n``-photon pulse
has ``eta_n = 1 - (1 - eta)**n`` and

    Y_n       = y0 + eta_n - y0 * eta_n
    e_n * Y_n = e0 * y0 + e_d * eta_n,       e0 = 1/2

Summing over the Poisson distribution gives the closed forms

    Q_mu       = y0 + (1 - y0) * (1 - exp(-eta * mu))
    E_mu * Q_mu = e0 * y0 + e_d * (1 - exp(-eta * mu))
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from .core import RateTerms, key_rate_new, key_rate_prior
from .errors import (
    DegenerateScenarioError,
    DomainError,
    NoPositiveRateError,
    ValidationError,
)

#: Error rate of a background click (random bit).
E0 = 0.5

DEFAULT_TAIL_BOUND = 1e-10


def poisson_pn(mu: float, n: int) -> float:
    """Probability that a coherent pulse of mean ``mu`` holds exactly ``n`` photons."""
    if not math.isfinite(mu) or mu < 0:
        raise DomainError(f"mu must be finite and >= 0, got {mu!r}")
    if int(n) != n or n < 0:
        raise DomainError(f"n must be a non-negative integer, got {n!r}")
    n = int(n)
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - math.lgamma(n + 1))


def poisson_tail(mu: float, n_max: int) -> float:
    """Poisson mass strictly above ``n_max``."""
    if mu == 0.0:
        return 0.0
    # P(N <= n) = Q(n + 1, mu), so the tail is the regularised lower gamma
    return float(gammainc(n_max + 1, mu))


def cutoff_for(mu: float, tail_bound: float = DEFAULT_TAIL_BOUND) -> int:
    """Smallest ``n_max >= 2`` whose Poisson tail for ``mu`` is below ``tail_bound``."""
    n = 2
    while poisson_tail(mu, n) >= tail_bound:
        n += 1
    return n


@dataclass(frozen=True)
class SourceParams:
    """Weak-coherent-pulse source.

    ``n_max`` defaults to the smallest cutoff meeting ``tail_bound``.
    """

    mu: float
    n_max: int | None = None
    tail_bound: float = DEFAULT_TAIL_BOUND

    def __post_init__(self):
        if not isinstance(self.mu, (int, float)) or not math.isfinite(self.mu) or self.mu < 0:
            raise ValidationError(f"source.mu must be finite and >= 0, got {self.mu!r}")
        if not 0.0 < self.tail_bound < 1.0:
            raise ValidationError(f"source.tail_bound must lie in (0, 1), got {self.tail_bound!r}")
        if self.n_max is None:
            object.__setattr__(self, "n_max", cutoff_for(self.mu, self.tail_bound))
        elif int(self.n_max) != self.n_max or self.n_max < 2:
            raise ValidationError(f"source.n_max must be an integer >= 2, got {self.n_max!r}")
        elif poisson_tail(self.mu, self.n_max) >= self.tail_bound:
            raise ValidationError(
                f"source.n_max={self.n_max} leaves Poisson tail "
                f"{poisson_tail(self.mu, self.n_max):.3g} >= tail_bound {self.tail_bound:g}"
            )


@dataclass(frozen=True)
class ChannelParams:
    """Fiber plus detector scenario.

    Defaults are common fiber-experiment values; they are a starting point for
    configuration, not reference data.
    """

    alpha_db_per_km: float = 0.21
    distance_km: float = 0.0
    eta_det: float = 0.045
    y0: float = 1.7e-6
    e_d: float = 0.033

    def __post_init__(self):
        checks = {
            "alpha_db_per_km": (0.0, math.inf),
            "distance_km": (0.0, math.inf),
            "eta_det": (0.0, 1.0),
            "y0": (0.0, 1.0),
            "e_d": (0.0, 0.5),
        }
        for name, (lo, hi) in checks.items():
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or math.isnan(value):
                raise ValidationError(f"channel.{name} must be a number, got {value!r}")
            if not lo <= value <= hi or (hi == math.inf and not math.isfinite(value)):
                raise ValidationError(f"channel.{name} must lie in [{lo}, {hi}], got {value!r}")

    def at_distance(self, distance_km: float) -> ChannelParams:
        return ChannelParams(self.alpha_db_per_km, distance_km, self.eta_det, self.y0, self.e_d)


@dataclass(frozen=True)
class PhotonNumberStats:
    """Per-photon-number quantities for ``n = 0 .. n_max``."""

    p_n: np.ndarray
    y_n: np.ndarray
    q_n: np.ndarray
    e_n: np.ndarray
    eta: float
    tail: float = field(default=0.0)


def transmittance(c: ChannelParams) -> float:
    """Overall single-photon transmittance of fiber and detector."""
    return c.eta_det * 10.0 ** (-c.alpha_db_per_km * c.distance_km / 10.0)


def _check_prob(name, value, hi=1.0):
    if not math.isfinite(value) or not 0.0 <= value <= hi:
        raise DomainError(f"{name} must lie in [0, {hi}], got {value!r}")


def _eta_n(n: int, eta: float) -> float:
    if n == 0 or eta == 0.0:
        return 0.0
    if eta == 1.0:
        return 1.0
    return -math.expm1(n * math.log1p(-eta))


def yield_n(n: int, eta: float, y0: float) -> float:
    """Detection probability given an ``n``-photon emission."""
    if int(n) != n or n < 0:
        raise DomainError(f"n must be a non-negative integer, got {n!r}")
    _check_prob("eta", eta)
    _check_prob("y0", y0)
    en = _eta_n(int(n), eta)
    if en == 1.0:
        return 1.0
    return y0 + en - y0 * en


def error_n(n: int, eta: float, y0: float, e_d: float) -> float:
    """Error rate of detections given an ``n``-photon emission.

    Raises
    ------
    DegenerateScenarioError
        If the ``n``-photon yield is zero, leaving the error rate undefined.
    """
    _check_prob("e_d", e_d, 0.5)
    y = yield_n(n, eta, y0)
    if y == 0.0:
        raise DegenerateScenarioError(f"yield Y_{n} is zero; e_{n} is undefined")
    if n == 0:
        return E0
    e = (E0 * y0 + e_d * _eta_n(int(n), eta)) / y
    return min(max(e, 0.0), 1.0)


def _detect_prob(eta: float, mu: float) -> float:
    # 1 - exp(-eta*mu) without cancellation at small eta*mu
    return -math.expm1(-eta * mu)


def _gain(mu: float, eta: float, y0: float) -> float:
    return y0 + (1.0 - y0) * _detect_prob(eta, mu)


def overall_gain(mu: float, c: ChannelParams) -> float:
    """Closed-form gain ``Q_mu`` of intensity ``mu``."""
    if not math.isfinite(mu) or mu < 0:
        raise DomainError(f"mu must be finite and >= 0, got {mu!r}")
    return _gain(mu, transmittance(c), c.y0)


def overall_error_mass(mu: float, c: ChannelParams) -> float:
    """Closed-form ``E_mu * Q_mu``, the probability of an erroneous detection."""
    if not math.isfinite(mu) or mu < 0:
        raise DomainError(f"mu must be finite and >= 0, got {mu!r}")
    return E0 * c.y0 + c.e_d * _detect_prob(transmittance(c), mu)


def overall_qber(mu: float, c: ChannelParams) -> float:
    """Closed-form QBER ``E_mu`` of intensity ``mu``."""
    q = overall_gain(mu, c)
    if q == 0.0:
        raise DegenerateScenarioError(f"gain is zero at mu={mu}; QBER is undefined")
    return min(overall_error_mass(mu, c) / q, 1.0)


def photon_number_stats(s: SourceParams, c: ChannelParams) -> PhotonNumberStats:
    """Tabulate ``p_n, Y_n, Q_n, e_n`` up to the source cutoff."""
    eta = transmittance(c)
    ns = range(s.n_max + 1)
    p = np.array([poisson_pn(s.mu, n) for n in ns])
    y = np.array([yield_n(n, eta, c.y0) for n in ns])
    e = np.array([error_n(n, eta, c.y0, c.e_d) if yv > 0 else E0 for n, yv in zip(ns, y)])
    return PhotonNumberStats(p_n=p, y_n=y, q_n=p * y, e_n=e, eta=eta,
                             tail=poisson_tail(s.mu, s.n_max))


def rate_terms_from_model(s: SourceParams, c: ChannelParams) -> RateTerms:
    """``RateTerms`` for signal intensity ``s.mu`` over channel ``c``.

    ``omega_m`` is the remainder after the vacuum and single-photon fractions,
    so truncated Poisson mass is charged to the multi-photon class.

    Raises
    ------
    DegenerateScenarioError
        If the signal gain is zero.
    """
    eta = transmittance(c)
    q = _gain(s.mu, eta, c.y0)
    if q == 0.0:
        raise DegenerateScenarioError(
            f"signal gain is zero (mu={s.mu}, eta={eta:.3g}, y0={c.y0}); no detections to rate"
        )
    e_sig = min((E0 * c.y0 + c.e_d * _detect_prob(eta, s.mu)) / q, 1.0)
    omega0 = poisson_pn(s.mu, 0) * c.y0 / q
    y1 = yield_n(1, eta, c.y0)
    omega1 = min(poisson_pn(s.mu, 1) * y1 / q, 1.0 - omega0)
    e1 = error_n(1, eta, c.y0, c.e_d) if y1 > 0 else E0
    return RateTerms.from_fractions(q, e_sig, omega0, omega1, e1)


_BOUNDS = {"prior": key_rate_prior, "new": key_rate_new}


def _rate_at(s, c, distance, rate_fn, f_ec):
    try:
        t = rate_terms_from_model(s, c.at_distance(distance))
    except DegenerateScenarioError:
        return 0.0
    return rate_fn(t, f_ec=f_ec)


def cutoff_distance(
    s: SourceParams,
    c: ChannelParams,
    bound: str = "new",
    *,
    f_ec: float = 1.0,
    resolution_km: float = 0.01,
    max_km: float = 1e6,
) -> float:
    """Largest distance at which the selected bound is still positive.

    ``bound`` is ``"prior"`` or ``"new"``; ``c.distance_km`` is ignored. The
    search doubles an upper bracket from 1 km and then bisects to
    ``resolution_km``. A gain that underflows to zero counts as a
    non-positive rate.

    Raises
    ------
    NoPositiveRateError
        If the bound is not positive at zero distance.
    """
    if bound not in _BOUNDS:
        raise ValidationError(f"bound must be one of {sorted(_BOUNDS)}, got {bound!r}")
    rate_fn = _BOUNDS[bound]
    if _rate_at(s, c, 0.0, rate_fn, f_ec) <= 0.0:
        raise NoPositiveRateError(f"{bound} bound is not positive at distance 0")
    lo, hi = 0.0, 1.0
    while _rate_at(s, c, hi, rate_fn, f_ec) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > max_km:
            return math.inf
    while hi - lo > resolution_km:
        mid = 0.5 * (lo + hi)
        if _rate_at(s, c, mid, rate_fn, f_ec) > 0.0:
            lo = mid
        else:
            hi = mid
    return lo
