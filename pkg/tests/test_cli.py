import csv
import io
import json

import pytest

import qkdrate.core
from qkdrate.channel import ChannelParams, SourceParams, rate_terms_from_model
from qkdrate.cli import SWEEP_COLUMNS, main
from qkdrate.config import DEFAULTS


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def summary(text):
    out = {}
    for ln in text.splitlines():
        if ln.startswith("# "):
            key, value = ln[2:].split(",", 1)
            out[key] = value
    return out


SMALL_SIM = {"pulses": 200_000, "intensities": [0.48, 0.05, 0.0],
             "intensity_probs": [0.8, 0.1, 0.1], "seed": 7}


# --- defaults and rate -----------------------------------------------------------------------

def test_defaults_roundtrip(capsys, tmp_path):
    code, out, _ = run(capsys, "defaults")
    assert code == 0
    assert json.loads(out) == DEFAULTS
    path = write_config(tmp_path, json.loads(out))
    assert run(capsys, "rate", "--config", path)[0] == 0


def test_rate_matches_model(capsys, tmp_path):
    code, out, _ = run(capsys, "rate", "--config", write_config(tmp_path, {}))
    assert code == 0
    (row,) = table(out)
    t = rate_terms_from_model(SourceParams(0.48), ChannelParams())
    for field in ("q_signal", "e_signal", "omega0", "omega1", "omega_m", "e1"):
        assert float(row[field]) == pytest.approx(getattr(t, field), rel=1e-8)
    assert float(row["rate_new"]) > float(row["rate_prior"])


def test_rate_vacuum_source_is_zero(capsys, tmp_path):
    path = write_config(tmp_path, {"source": {"mu": 0.0}})
    code, out, _ = run(capsys, "rate", "--config", path)
    assert code == 0
    (row,) = table(out)
    assert abs(float(row["rate_new"])) <= 1e-12


def test_rate_without_background_has_no_bonus(capsys, tmp_path):
    path = write_config(tmp_path, {"channel": {"y0": 0.0}})
    code, out, _ = run(capsys, "rate", "--config", path, "--format", "structured")
    assert code == 0
    doc = json.loads(out)
    assert doc["rate"]["vacuum_bonus"] == 0.0
    assert doc["rate"]["rate_new"] == doc["rate"]["rate_prior"]


def test_clamp_flag(capsys, tmp_path):
    path = write_config(tmp_path, {"channel": {"e_d": 0.3}})
    _, out, _ = run(capsys, "rate", "--config", path)
    assert float(table(out)[0]["rate_new"]) < 0
    _, out, _ = run(capsys, "rate", "--config", path, "--clamp")
    assert float(table(out)[0]["rate_new"]) == 0.0


# --- config errors ---------------------------------------------------------------------------

@pytest.mark.parametrize("doc,field", [
    ({"channel": {"e_d": 0.7}}, "channel.e_d"),
    ({"channel": {"bogus": 1}}, "channel.bogus"),
    ({"source": {"mu": -1}}, "source.mu"),
    ({"key_rate": {"f_ec": 0.5}}, "key_rate.f_ec"),
    ({"sim": {"intensity_probs": [0.5, 0.1, 0.1]}}, "sim.intensity_probs"),
    ({"sim": {}, "estimation": {"weak": 0.2}}, "estimation.weak"),
    ({"output": {"format": "xml"}}, "output.format"),
])
def test_config_errors_name_the_field(capsys, tmp_path, doc, field):
    code, _, err = run(capsys, "rate", "--config", write_config(tmp_path, doc))
    assert code == 2
    assert field in err


def test_unreadable_config(capsys, tmp_path):
    assert run(capsys, "rate", "--config", str(tmp_path / "missing.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "rate", "--config", str(bad))[0] == 2
    assert run(capsys, "rate")[0] == 2
    assert run(capsys, "nonsense")[0] == 2


# --- sweep -----------------------------------------------------------------------------------

def test_sweep_columns_and_summary(capsys, tmp_path):
    path = write_config(tmp_path, {})
    code, out, _ = run(capsys, "sweep", "--config", path, "--start", "0", "--stop", "200",
                       "--step", "10")
    assert code == 0
    assert out.splitlines()[0] == ",".join(SWEEP_COLUMNS)
    rows = table(out)
    assert len(rows) == 21
    assert rows[0]["distance_km"] == "0"
    assert rows[0]["q_signal"] == f"{rate_terms_from_model(SourceParams(0.48), ChannelParams()).q_signal:.9g}"
    assert all(float(r["rate_new"]) >= float(r["rate_prior"]) for r in rows)
    s = summary(out)
    cut_prior, cut_new = float(s["cutoff_prior_km"]), float(s["cutoff_new_km"])
    assert cut_new > cut_prior > 0
    # non-increasing while positive; past the cutoff the deficit shrinks with Q
    new = [float(r["rate_new"]) for r in rows if float(r["distance_km"]) <= cut_new]
    assert all(b <= a for a, b in zip(new, new[1:]))
    assert float(rows[-1]["rate_new"]) < 0


def test_sweep_clamped_rates_non_increasing(capsys, tmp_path):
    path = write_config(tmp_path, {})
    _, out, _ = run(capsys, "sweep", "--config", path, "--stop", "300", "--step", "5", "--clamp")
    new = [float(r["rate_new"]) for r in table(out)]
    assert all(b <= a for a, b in zip(new, new[1:]))
    assert new[-1] == 0.0


def test_sweep_lossless_first_row(capsys, tmp_path):
    path = write_config(tmp_path, {"channel": {"alpha_db_per_km": 0.0}})
    _, out, _ = run(capsys, "sweep", "--config", path, "--stop", "10", "--step", "5")
    first = table(out)[0]
    assert float(first["rate_new"]) >= float(first["rate_prior"])


@pytest.mark.parametrize("args", [("--step", "0"), ("--start", "10", "--stop", "5"),
                                  ("--step", "-1")])
def test_sweep_empty_range(capsys, tmp_path, args):
    code, _, err = run(capsys, "sweep", "--config", write_config(tmp_path, {}), *args)
    assert code == 2
    assert "sweep" in err


def test_sweep_structured(capsys, tmp_path):
    path = write_config(tmp_path, {"output": {"format": "structured"}})
    _, out, _ = run(capsys, "sweep", "--config", path, "--stop", "20")
    doc = json.loads(out)
    assert list(doc["rows"][0]) == list(SWEEP_COLUMNS)
    assert doc["summary"]["cutoff_new_km"] > doc["summary"]["cutoff_prior_km"]


# --- simulate --------------------------------------------------------------------------------

def test_simulate_deterministic_files(capsys, tmp_path):
    path = write_config(tmp_path, {"sim": SMALL_SIM})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run(capsys, "simulate", "--config", path, "--format", "structured",
                   "--out", str(out))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["seed"] == 7
    assert {"tally", "empirical", "analytic", "sifting_factor"} <= set(doc)
    assert doc["empirical"]["rate_new_stderr"] > 0


def test_simulate_seed_override(capsys, tmp_path):
    path = write_config(tmp_path, {"sim": SMALL_SIM})
    _, one, _ = run(capsys, "simulate", "--config", path)
    _, two, _ = run(capsys, "simulate", "--config", path, "--seed", "8")
    assert one != two
    assert summary(two)["seed"] == "8"
    rows = table(one)
    assert {r["class"] for r in rows} == {"vacuum", "single", "multi"}


def test_simulate_rate_within_stderr(capsys, tmp_path):
    doc = {"sim": dict(SMALL_SIM, pulses=1_000_000, intensities=[0.48],
                       intensity_probs=[1.0]),
           "estimation": {"weak": 0.48, "vacuum": None}}
    path = write_config(tmp_path, doc)
    code, out, _ = run(capsys, "simulate", "--config", path, "--format", "structured")
    assert code == 0
    rep = json.loads(out)
    emp, ana = rep["empirical"], rep["analytic"]
    assert abs(emp["rate_new"] - ana["rate_new"]) <= 4 * emp["rate_new_stderr"]


def test_simulate_requires_sim_section(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--config", write_config(tmp_path, {}))
    assert code == 2
    assert "sim" in err


def test_simulate_vacuum_only_without_background(capsys, tmp_path):
    doc = {"channel": {"y0": 0.0},
           "sim": {"pulses": 1000, "intensities": [0.0], "intensity_probs": [1.0]},
           "estimation": {"signal": 0.0, "weak": 0.0, "vacuum": 0.0}}
    code, _, err = run(capsys, "simulate", "--config", write_config(tmp_path, doc))
    assert code == 3
    assert "no sifted detections" in err


# --- estimate --------------------------------------------------------------------------------

def test_estimate_analytic_observations(capsys, tmp_path):
    path = write_config(tmp_path, {"output": {"format": "structured"}})
    code, out, _ = run(capsys, "estimate", "--config", path)
    assert code == 0
    rep = json.loads(out)
    assert rep["pessimistic_rate"] <= rep["omniscient_rate"]
    assert rep["gap"] == pytest.approx(rep["omniscient_rate"] - rep["pessimistic_rate"])
    assert rep["bounds"]["y1_low"] > 0


def test_estimate_lp_method(capsys, tmp_path):
    path = write_config(tmp_path, {"estimation": {"method": "lp"}})
    code, out, _ = run(capsys, "estimate", "--config", path)
    assert code == 0
    values = dict(csv.reader(io.StringIO(out)))
    assert float(values["pessimistic_rate"]) <= float(values["omniscient_rate"])


def test_estimate_from_simulated_tally(capsys, tmp_path):
    doc = {"sim": dict(SMALL_SIM, pulses=2_000_000)}
    path = write_config(tmp_path, doc)
    tally = tmp_path / "tally.json"
    run(capsys, "simulate", "--config", path, "--format", "structured", "--out", str(tally))
    code, out, _ = run(capsys, "estimate", "--config", path, "--observations", str(tally),
                       "--format", "structured")
    assert code == 0
    rep = json.loads(out)
    assert "omniscient_rate" in rep
    assert rep["pessimistic_rate"] <= rep["omniscient_rate"]


def test_estimate_from_observable_view(capsys, tmp_path):
    view = {"p_z": 0.95, "intensities": [
        {"mu": 0.48, "emitted": 10**7, "detected": 10000, "sifted": 9050, "errors": 300},
        {"mu": 0.05, "emitted": 10**6, "detected": 110, "sifted": 100, "errors": 5},
        {"mu": 0.0, "emitted": 10**6, "detected": 2, "sifted": 2, "errors": 1},
    ]}
    obs = tmp_path / "view.json"
    obs.write_text(json.dumps(view))
    code, out, _ = run(capsys, "estimate", "--config", write_config(tmp_path, {}),
                       "--observations", str(obs), "--format", "structured")
    assert code == 0
    assert "omniscient_rate" not in json.loads(out)


def test_estimate_missing_weak(capsys, tmp_path):
    view = {"p_z": 0.95, "intensities": [
        {"mu": 0.48, "emitted": 1000, "detected": 10, "sifted": 9, "errors": 1}]}
    obs = tmp_path / "view.json"
    obs.write_text(json.dumps(view))
    code, _, err = run(capsys, "estimate", "--config", write_config(tmp_path, {}),
                       "--observations", str(obs))
    assert code == 3
    assert "weak" in err


def test_estimate_bad_ordering(capsys, tmp_path):
    path = write_config(tmp_path, {"estimation": {"weak": 0.6}})
    code, _, err = run(capsys, "estimate", "--config", path)
    assert code == 3
    assert "weak" in err and "signal" in err


# --- verify ----------------------------------------------------------------------------------

def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0
    assert out.splitlines()[0] == "seed 0"
    assert "FAIL" not in out


def test_verify_detects_flipped_vacuum_term(capsys, monkeypatch):
    prior = qkdrate.core.key_rate_prior

    def broken(t, *, f_ec=1.0, sifting=1.0):
        return prior(t, f_ec=f_ec, sifting=sifting) - sifting * t.q_signal * t.omega0

    monkeypatch.setattr(qkdrate.core, "key_rate_new", broken)
    code, out, _ = run(capsys, "verify", "--seed", "5")
    assert code == 1
    assert "FAIL rate_new - rate_prior = Q*omega0" in out
    assert "FAIL all-vacuum rate is zero" in out
    # the failing inputs are reproducible from the printed seed
    again = run(capsys, "verify", "--seed", "5")[1]
    assert again == out


def test_verify_writes_file(capsys, tmp_path):
    dest = tmp_path / "verify.txt"
    assert run(capsys, "verify", "--seed", "3", "--out", str(dest))[0] == 0
    assert dest.read_text().startswith("seed 3\n")
