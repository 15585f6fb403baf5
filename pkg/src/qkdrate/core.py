"""Key-rate bounds for weak-coherent-pulse BB84.

Two asymptotic lower bounds on the secure key rate per emitted pulse are
provided:

* ``key_rate_prior`` -- the GLLP/decoy bound
  ``Q * (-H2(E) + Omega1 * (1 - H2(e1)))``.
* ``key_rate_new`` -- the vacuum-credited bound
  ``Q * (-H2(E) + Omega0 + Omega1 * (1 - H2(e1)))``.

The vacuum-credited bound is obtained by counting Eve's memory. Detections
seeded by vacuum emissions leak nothing about Alice's bit, single-photon
detections leak ``H2(e1)`` (phase error taken equal to bit error), and
multi-photon detections are assumed fully known to Eve. Error correction
publishes ``H2(E)`` more bits. ``sifted_length`` and ``eve_memory`` expose the
two sides of that count and ``rate_from_memory`` subtracts them.

Rates are returned unclamped; a negative value means the bound is vacuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, ValidationError

#: Absolute tolerance on ``omega0 + omega1 + omega_m == 1``.
OMEGA_SUM_TOL = 1e-12


def binary_entropy(x: float) -> float:
    """Shannon binary entropy in bits.

    ``H2(x) = -x log2 x - (1 - x) log2(1 - x)`` with ``H2(0) = H2(1) = 0``.

    Raises
    ------
    DomainError
        If ``x`` is not finite or lies outside ``[0, 1]``.
    """
    x = float(x)
    if not math.isfinite(x) or x < 0.0 or x > 1.0:
        raise DomainError(f"binary_entropy needs x in [0, 1], got {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


@dataclass(frozen=True)
class RateTerms:
    """Observable quantities consumed by the key-rate bounds.

    Attributes
    ----------
    q_signal : float
        Gain of the signal intensity, detections per emitted pulse.
    e_signal : float
        QBER of the signal intensity.
    omega0, omega1, omega_m : float
        Fractions of Bob's detections that originate from vacuum,
        single-photon and multi-photon emissions. They sum to one.
    e1 : float
        Bit error rate of single-photon detections. It also stands in for
        the single-photon phase error rate.
    """

    q_signal: float
    e_signal: float
    omega0: float
    omega1: float
    omega_m: float
    e1: float

    def __post_init__(self):
        for name in ("q_signal", "e_signal", "omega0", "omega1", "omega_m", "e1"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValidationError(f"RateTerms.{name} must be a finite number, got {value!r}")
            if value < 0.0 or value > 1.0:
                raise ValidationError(f"RateTerms.{name} must lie in [0, 1], got {value!r}")
        total = self.omega0 + self.omega1 + self.omega_m
        if abs(total - 1.0) > OMEGA_SUM_TOL:
            raise ValidationError(
                f"RateTerms omegas must sum to 1 within {OMEGA_SUM_TOL:g}, got {total!r}"
            )

    @classmethod
    def from_fractions(cls, q_signal, e_signal, omega0, omega1, e1):
        """Build terms with ``omega_m`` taken as the remainder ``1 - omega0 - omega1``.

        A remainder that is negative only by rounding is set to zero.
        """
        omega_m = 1.0 - omega0 - omega1
        if -OMEGA_SUM_TOL <= omega_m < 0.0:
            omega_m = 0.0
        return cls(q_signal, e_signal, omega0, omega1, omega_m, e1)


@dataclass(frozen=True)
class KeyRateResult:
    """Both bounds and the memory accounting for one set of ``RateTerms``.

    All fields are in bits per emitted pulse.
    """

    rate_prior: float
    rate_new: float
    vacuum_bonus: float
    sifted_length_n: float
    eve_memory_s: float


def _check_terms(t: RateTerms) -> None:
    if not isinstance(t, RateTerms):
        raise ValidationError(f"expected RateTerms, got {type(t).__name__}")
    if t.q_signal <= 0.0:
        raise ValidationError("RateTerms.q_signal must be > 0 to evaluate a key rate")


def _check_knobs(f_ec: float, sifting: float) -> None:
    if not math.isfinite(f_ec) or f_ec < 1.0:
        raise ValidationError(f"f_ec must be >= 1, got {f_ec!r}")
    if not math.isfinite(sifting) or not 0.0 < sifting <= 1.0:
        raise ValidationError(f"sifting factor must lie in (0, 1], got {sifting!r}")


def key_rate_prior(t: RateTerms, *, f_ec: float = 1.0, sifting: float = 1.0) -> float:
    """Prior-art lower bound ``Q * (-f_ec*H2(E) + Omega1 * (1 - H2(e1)))``.

    ``f_ec`` scales the error-correction cost above the Shannon limit and
    ``sifting`` multiplies the result; both default to the asymptotic value 1.
    """
    _check_terms(t)
    _check_knobs(f_ec, sifting)
    single = t.omega1 * (1.0 - binary_entropy(t.e1))
    return sifting * t.q_signal * (-f_ec * binary_entropy(t.e_signal) + single)


def key_rate_new(t: RateTerms, *, f_ec: float = 1.0, sifting: float = 1.0) -> float:
    """Vacuum-credited lower bound ``Q * (-f_ec*H2(E) + Omega0 + Omega1 * (1 - H2(e1)))``."""
    _check_terms(t)
    _check_knobs(f_ec, sifting)
    single = t.omega1 * (1.0 - binary_entropy(t.e1))
    return sifting * t.q_signal * (-f_ec * binary_entropy(t.e_signal) + t.omega0 + single)


def eve_memory(t: RateTerms, *, f_ec: float = 1.0, sifting: float = 1.0) -> float:
    """Upper bound on Eve's memory about the key, ``Q * (f_ec*H2(E) + Omega1*H2(e1) + Omega_m)``.

    The three terms are the error-correction leakage, the single-photon
    phase-error leakage, and full knowledge of every multi-photon detection.
    Vacuum detections contribute nothing.
    """
    _check_terms(t)
    _check_knobs(f_ec, sifting)
    leak = f_ec * binary_entropy(t.e_signal) + t.omega1 * binary_entropy(t.e1) + t.omega_m
    return sifting * t.q_signal * leak


def sifted_length(t: RateTerms, *, sifting: float = 1.0) -> float:
    """Sifted key length per pulse, ``Q * (Omega0 + Omega1 + Omega_m)``."""
    _check_terms(t)
    _check_knobs(1.0, sifting)
    return sifting * t.q_signal * (t.omega0 + t.omega1 + t.omega_m)


def rate_from_memory(n: float, s_eve: float) -> float:
    """Key rate left after hashing away Eve's memory: ``n - s_eve``."""
    for name, value in (("n", n), ("s_eve", s_eve)):
        if not math.isfinite(value):
            raise ValidationError(f"{name} must be finite, got {value!r}")
        if value < 0.0:
            raise ValidationError(f"{name} must be >= 0, got {value!r}")
    return n - s_eve


def evaluate(t: RateTerms, *, f_ec: float = 1.0, sifting: float = 1.0) -> KeyRateResult:
    """Evaluate both bounds and the memory accounting in one record."""
    prior = key_rate_prior(t, f_ec=f_ec, sifting=sifting)
    n = sifted_length(t, sifting=sifting)
    s_eve = eve_memory(t, f_ec=f_ec, sifting=sifting)
    return KeyRateResult(
        rate_prior=prior,
        rate_new=key_rate_new(t, f_ec=f_ec, sifting=sifting),
        vacuum_bonus=sifting * t.q_signal * t.omega0,
        sifted_length_n=n,
        eve_memory_s=s_eve,
    )
