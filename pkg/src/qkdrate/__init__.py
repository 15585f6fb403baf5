"""Key-rate bounds, channel model, Monte Carlo and decoy estimation for WCP BB84."""

from .channel import ChannelParams, SourceParams, cutoff_distance, rate_terms_from_model
from .core import (
    KeyRateResult,
    RateTerms,
    binary_entropy,
    evaluate,
    eve_memory,
    key_rate_new,
    key_rate_prior,
    rate_from_memory,
    sifted_length,
)
from .decoy import DecoyBounds, Observation, estimate_lp, estimate_y1_e1, pessimistic_rate
from .sim import SimConfig, TallyResult, empirical_rate_terms, merge, observable_view, simulate

__version__ = "0.1.0"
