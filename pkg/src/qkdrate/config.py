"""JSON run configuration with embedded defaults."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

from .channel import ChannelParams, SourceParams
from .errors import QKDError, ValidationError
from .sim import SimConfig

DEFAULTS: dict = {
    "source": {"mu": 0.48, "n_max": None, "tail_bound": 1e-10},
    "channel": {
        "alpha_db_per_km": 0.21,
        "distance_km": 0.0,
        "eta_det": 0.045,
        "y0": 1.7e-6,
        "e_d": 0.033,
    },
    "key_rate": {"f_ec": 1.0, "sifting": 1.0},
    "sim": {
        "pulses": 1_000_000,
        "intensities": [0.48, 0.05, 0.0],
        "intensity_probs": [0.8, 0.1, 0.1],
        "p_z": 0.95,
        "seed": 0,
        "shards": 1,
    },
    "estimation": {
        "signal": None,
        "weak": 0.05,
        "vacuum": 0.0,
        "n_sigma": 5.0,
        "method": "analytic",
    },
    "sweep": {"start_km": 0.0, "stop_km": 200.0, "step_km": 5.0},
    "output": {"format": "csv", "path": None, "clamp": False},
}

_SECTIONS = tuple(DEFAULTS)


class ConfigError(QKDError):
    """The configuration document cannot be parsed or fails validation."""


@dataclass(frozen=True)
class EstimationRoles:
    signal: float
    weak: float
    vacuum: float | None
    n_sigma: float
    method: str


@dataclass(frozen=True)
class RunConfig:
    source: SourceParams
    channel: ChannelParams
    sim: SimConfig | None
    estimation: EstimationRoles
    f_ec: float
    sifting: float
    sweep: dict
    output_format: str
    output_path: str | None
    clamp: bool


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown field {where}.{key}")
        out[key] = value
    return out


def load(path) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(doc)


def from_dict(doc: dict) -> RunConfig:
    """Validate a parsed config document; omitted fields take their defaults.

    The ``sim`` section is only configured when present in ``doc``.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
    sections = {}
    for name in _SECTIONS:
        given = doc.get(name, {})
        if name == "sim" and doc.get("sim") is None:
            sections[name] = None
            continue
        if not isinstance(given, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        sections[name] = _merge(DEFAULTS[name], given, name)

    try:
        source = SourceParams(**sections["source"])
        channel = ChannelParams(**sections["channel"])
        sim = SimConfig(**sections["sim"]) if sections["sim"] is not None else None
    except (ValidationError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    est = sections["estimation"]
    try:
        roles = EstimationRoles(
            signal=source.mu if est["signal"] is None else float(est["signal"]),
            weak=float(est["weak"]),
            vacuum=None if est["vacuum"] is None else float(est["vacuum"]),
            n_sigma=float(est["n_sigma"]),
            method=str(est["method"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"estimation roles must be numbers: {exc}") from exc
    if roles.method not in ("analytic", "lp"):
        raise ConfigError(f"estimation.method must be 'analytic' or 'lp', got {roles.method!r}")
    if not math.isfinite(roles.n_sigma) or roles.n_sigma < 0:
        raise ConfigError(f"estimation.n_sigma must be >= 0, got {roles.n_sigma!r}")
    if sim is not None:
        for role in ("signal", "weak", "vacuum"):
            mu = getattr(roles, role)
            if mu is not None and mu not in sim.intensities:
                raise ConfigError(
                    f"estimation.{role}={mu} is not one of sim.intensities {list(sim.intensities)}"
                )

    kr = sections["key_rate"]
    try:
        f_ec, sifting = float(kr["f_ec"]), float(kr["sifting"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key_rate fields must be numbers: {exc}") from exc
    if not f_ec >= 1.0 or not math.isfinite(f_ec):
        raise ConfigError(f"key_rate.f_ec must be >= 1, got {kr['f_ec']!r}")
    if not 0.0 < sifting <= 1.0:
        raise ConfigError(f"key_rate.sifting must lie in (0, 1], got {kr['sifting']!r}")
    out = sections["output"]
    if out["format"] not in ("csv", "structured"):
        raise ConfigError(f"output.format must be 'csv' or 'structured', got {out['format']!r}")
    sweep = sections["sweep"]
    for key in ("start_km", "stop_km", "step_km"):
        if not isinstance(sweep[key], (int, float)):
            raise ConfigError(f"sweep.{key} must be a number")
    return RunConfig(
        source=source,
        channel=channel,
        sim=sim,
        estimation=roles,
        f_ec=f_ec,
        sifting=sifting,
        sweep=dict(sweep),
        output_format=out["format"],
        output_path=out["path"],
        clamp=bool(out["clamp"]),
    )


def defaults_json() -> str:
    return json.dumps(DEFAULTS, indent=2)
