"""Command-line front end.

Subcommands: ``rate``, ``sweep``, ``simulate``, ``estimate``, ``verify``,
``defaults``. Exit codes are 0 on success, 1 when ``verify`` finds a
violated identity, 2 for configuration errors and 3 for runtime or data
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, replace

import numpy as np

from . import config as cfgmod
from . import verify as verifymod
from .channel import SourceParams, cutoff_distance, rate_terms_from_model, transmittance
from .core import evaluate
from .decoy import (
    estimate_lp,
    estimate_y1_e1,
    model_observations,
    observations_from_view,
    pessimistic_rate,
)
from .errors import NoPositiveRateError, QKDError, ValidationError
from .sim import (
    ObservableView,
    TallyResult,
    empirical_rate_terms,
    observable_view,
    rate_new_stderr,
    simulate,
)

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SWEEP_COLUMNS = (
    "distance_km", "eta", "q_signal", "e_signal", "omega0", "omega1", "e1",
    "rate_prior", "rate_new", "vacuum_bonus",
)
RATE_COLUMNS = (
    "q_signal", "e_signal", "omega0", "omega1", "omega_m", "e1",
    "rate_prior", "rate_new", "vacuum_bonus",
)


class UsageError(Exception):
    """Bad command-line arguments; reported with exit code 2."""


def fmt(x) -> str:
    """Numbers as text with 9 significant digits."""
    if isinstance(x, bool) or x is None:
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def _clamp(x: float, on: bool) -> float:
    return max(x, 0.0) if on else x


def _rate_record(t, cfg: cfgmod.RunConfig, clamp: bool) -> dict:
    r = evaluate(t, f_ec=cfg.f_ec, sifting=cfg.sifting)
    return {
        "q_signal": t.q_signal, "e_signal": t.e_signal, "omega0": t.omega0,
        "omega1": t.omega1, "omega_m": t.omega_m, "e1": t.e1,
        "rate_prior": _clamp(r.rate_prior, clamp),
        "rate_new": _clamp(r.rate_new, clamp),
        "vacuum_bonus": r.vacuum_bonus,
    }


def _structured(doc) -> str:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, (float, np.floating)):
            v = float(v)
            return v if math.isfinite(v) else str(v)
        if isinstance(v, np.integer):
            return int(v)
        return v
    return json.dumps(conv(doc), indent=2) + "\n"


def _csv_rows(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def _summary(pairs) -> str:
    return "".join(f"# {k},{fmt(v)}\n" for k, v in pairs)


def cmd_rate(cfg: cfgmod.RunConfig, args) -> str:
    t = rate_terms_from_model(cfg.source, cfg.channel)
    rec = _rate_record(t, cfg, args.clamp)
    if args.format == "structured":
        return _structured({"scenario": {"source": asdict(cfg.source), "channel": asdict(cfg.channel)},
                            "rate": rec})
    return _csv_rows(RATE_COLUMNS, [rec])


def _sweep_points(cfg, args):
    start = cfg.sweep["start_km"] if args.start is None else args.start
    stop = cfg.sweep["stop_km"] if args.stop is None else args.stop
    step = cfg.sweep["step_km"] if args.step is None else args.step
    if not (math.isfinite(start) and math.isfinite(stop) and math.isfinite(step)):
        raise cfgmod.ConfigError("sweep range must be finite")
    if step <= 0 or start < 0 or stop < start:
        raise cfgmod.ConfigError(
            f"sweep range is empty: start={start}, stop={stop}, step={step}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


def _cutoff(cfg, bound):
    try:
        return cutoff_distance(cfg.source, cfg.channel, bound, f_ec=cfg.f_ec)
    except NoPositiveRateError:
        return 0.0


def cmd_sweep(cfg: cfgmod.RunConfig, args) -> str:
    rows = []
    for d in _sweep_points(cfg, args):
        c = cfg.channel.at_distance(d)
        try:
            t = rate_terms_from_model(cfg.source, c)
        except QKDError:
            continue
        rec = _rate_record(t, cfg, args.clamp)
        rec.update(distance_km=d, eta=transmittance(c))
        rows.append(rec)
    cut_prior, cut_new = _cutoff(cfg, "prior"), _cutoff(cfg, "new")
    if args.format == "structured":
        return _structured({"rows": [{k: r[k] for k in SWEEP_COLUMNS} for r in rows],
                            "summary": {"cutoff_prior_km": cut_prior, "cutoff_new_km": cut_new}})
    return _csv_rows(SWEEP_COLUMNS, rows) + _summary(
        [("cutoff_prior_km", cut_prior), ("cutoff_new_km", cut_new)])


def _require_sim(cfg):
    if cfg.sim is None:
        raise cfgmod.ConfigError("config has no 'sim' section; simulate needs sim.pulses, sim.intensities, ...")
    return cfg.sim


def cmd_simulate(cfg: cfgmod.RunConfig, args) -> str:
    sim_cfg = _require_sim(cfg)
    if args.seed is not None:
        sim_cfg = replace(sim_cfg, seed=args.seed)
    tally = simulate(sim_cfg, cfg.channel)
    sig = sim_cfg.intensities.index(cfg.estimation.signal)
    t = empirical_rate_terms(tally, sig)
    emp = _rate_record(t, cfg, args.clamp)
    emp["rate_new_stderr"] = rate_new_stderr(tally, sig, f_ec=cfg.f_ec)
    analytic = _rate_record(
        rate_terms_from_model(SourceParams(cfg.estimation.signal), cfg.channel), cfg, args.clamp)
    if args.format == "structured":
        return _structured({
            "seed": sim_cfg.seed, "shards": sim_cfg.shards,
            "sifting_factor": sim_cfg.sifting_factor,
            "tally": tally.to_dict(), "empirical": emp, "analytic": analytic,
        })
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("mu", "class", "emitted", "detected", "sifted", "errors"))
    for i, mu in enumerate(tally.intensities):
        for k, name in enumerate(("vacuum", "single", "multi")):
            w.writerow((fmt(mu), name, fmt(tally.emitted[i]), fmt(tally.detected[i, k]),
                        fmt(tally.sifted[i, k]), fmt(tally.errors[i, k])))
    pairs = [("seed", sim_cfg.seed), ("sifting_factor", sim_cfg.sifting_factor)]
    pairs += [(f"empirical_{k}", v) for k, v in emp.items()]
    pairs += [(f"analytic_{k}", v) for k, v in analytic.items()]
    return buf.getvalue() + _summary(pairs)


def _load_observations(path):
    """Observations plus omniscient tally (when the file carries class tags)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise cfgmod.ConfigError(f"cannot read observations {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise cfgmod.ConfigError(f"observations {path} are not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "tally" in doc:
        doc = doc["tally"]
    rows = doc.get("intensities") if isinstance(doc, dict) else None
    tagged = bool(rows) and isinstance(rows[0].get("detected"), dict)
    if tagged:
        tally = TallyResult.from_dict(doc)
        return observations_from_view(observable_view(tally)), tally
    return observations_from_view(ObservableView.from_dict(doc)), None


def cmd_estimate(cfg: cfgmod.RunConfig, args) -> str:
    roles = cfg.estimation
    if args.observations:
        obs, tally = _load_observations(args.observations)
        n_sigma = roles.n_sigma
    else:
        mus = [roles.signal, roles.weak] + ([roles.vacuum] if roles.vacuum is not None else [])
        obs, tally = model_observations(mus, cfg.channel), None
        n_sigma = 0.0
    if roles.vacuum is None:
        obs = [o for o in obs if o.mu != 0.0]
    if roles.method == "lp":
        keep = {roles.signal, roles.weak, roles.vacuum}
        bounds = estimate_lp([o for o in obs if o.mu in keep], signal_mu=roles.signal,
                             n_sigma=n_sigma)
    else:
        bounds = estimate_y1_e1(obs, roles.signal, roles.weak, n_sigma=n_sigma)
    sig = next(o for o in obs if o.mu == roles.signal)
    pess = pessimistic_rate(bounds, sig.q, sig.e, f_ec=cfg.f_ec)
    report = {"bounds": asdict(bounds), "q_signal": sig.q, "e_signal": sig.e,
              "pessimistic_rate": _clamp(pess, args.clamp)}
    if tally is not None:
        omni_t = empirical_rate_terms(tally, tally.intensities.index(roles.signal))
    elif not args.observations:
        omni_t = rate_terms_from_model(SourceParams(roles.signal), cfg.channel)
    else:
        omni_t = None
    if omni_t is not None:
        omni = evaluate(omni_t, f_ec=cfg.f_ec).rate_new
        report["omniscient_rate"] = _clamp(omni, args.clamp)
        report["gap"] = omni - pess
    if args.format == "structured":
        return _structured(report)
    b = report.pop("bounds")
    flags = b.pop("flags")
    pairs = list(b.items()) + list(report.items())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("quantity", "value"))
    for k, v in pairs:
        w.writerow((k, fmt(v)))
    w.writerow(("flags", ";".join(flags)))
    return buf.getvalue()


def cmd_verify(args) -> tuple[str, int]:
    seed = 0 if args.seed is None else args.seed
    results = verifymod.run_all(seed)
    lines = [f"seed {seed}"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.name} ({r.cases} cases)" + (f": {r.detail}" if r.detail else ""))
    ok = all(r.passed for r in results)
    lines.append("all checks passed" if ok else "verification FAILED")
    return "\n".join(lines) + "\n", (EXIT_OK if ok else EXIT_VERIFY)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--format", choices=("csv", "structured"))
    common.add_argument("--seed", type=_u64, help="override sim.seed / verify seed")
    common.add_argument("--clamp", action="store_true", default=None,
                        help="report negative rates as 0")

    p = argparse.ArgumentParser(prog="qkdrate", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("rate", parents=[common], help="both bounds for the analytic model")
    sw = sub.add_parser("sweep", parents=[common], help="rates versus distance as CSV")
    sw.add_argument("--start", type=float)
    sw.add_argument("--stop", type=float)
    sw.add_argument("--step", type=float)
    sub.add_parser("simulate", parents=[common], help="Monte Carlo tallies and empirical rates")
    est = sub.add_parser("estimate", parents=[common], help="decoy bounds and pessimistic rate")
    est.add_argument("--observations", help="tally or observable JSON; default: analytic model")
    sub.add_parser("verify", parents=[common], help="run the identity suite")
    sub.add_parser("defaults", parents=[common], help="print the default config")
    return p


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


_COMMANDS = {"rate": cmd_rate, "sweep": cmd_sweep, "simulate": cmd_simulate,
             "estimate": cmd_estimate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK

    if args.command == "defaults":
        _emit(cfgmod.defaults_json() + "\n", args.out)
        return EXIT_OK
    if args.command == "verify":
        text, code = cmd_verify(args)
        _emit(text, args.out)
        return code

    try:
        if not args.config:
            raise cfgmod.ConfigError(f"--config is required for '{args.command}'")
        cfg = cfgmod.load(args.config)
        if args.format is None:
            args.format = cfg.output_format
        if args.clamp is None:
            args.clamp = cfg.clamp
        text = _COMMANDS[args.command](cfg, args)
    except (cfgmod.ConfigError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(text, args.out or cfg.output_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
