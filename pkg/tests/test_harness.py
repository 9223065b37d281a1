import csv
import json
import math

import numpy as np
import pytest

from ofdm_amp import SystemConfig
from ofdm_amp.harness import (
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentSpec,
    grid_points,
    load_spec,
    parse_spec,
    point_key,
    run_experiment,
    run_trial,
    summary_path,
    trial_rngs,
    write_results,
)
from ofdm_amp.model import ConfigError

SMALL = {"N": 40, "L": 64, "M": 2, "P": 2, "trials": 2, "iterations": 5}


def write_json(tmp_path, doc, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_empty_spec_gives_defaults(tmp_path):
    spec = load_spec(write_json(tmp_path, {}))
    assert spec.base == SystemConfig()
    assert spec.trials == 100 and spec.sweep == () and spec.format == "csv"
    assert spec.algorithms == ("amp_a_ec", "amp_a_ac")


@pytest.mark.parametrize("doc, key", [
    ({"L": 100}, "L"),
    ({"bogus": 1}, "bogus"),
    ({"trials": 0}, "trials"),
    ({"algorithms": ["omp"]}, "algorithms"),
    ({"format": "xml"}, "format"),
    ({"sweep": {"L": [64, 100]}}, "L=100"),
    ({"sweep": {"K": [8]}}, "axis"),
    ({"distance_model": {"ring": 3}}, "distance_model"),
    ({"stop_policy": "sometimes"}, "stop_policy"),
    ({"rho": "high"}, "rho"),
])
def test_invalid_specs_rejected(doc, key):
    with pytest.raises(ConfigError, match=key):
        parse_spec(doc)


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_spec(bad)
    with pytest.raises(ConfigError):
        load_spec(tmp_path / "missing.json")


def test_sweep_expansion_and_special_fields():
    spec = parse_spec({"sweep": {"L": [64, 96, 128]}})
    assert [c.L for c in grid_points(spec)] == [64, 96, 128]
    spec = parse_spec({"sweep": {"L": [64, 96], "M": [4, 8]}})
    assert len(grid_points(spec)) == 4
    spec = parse_spec({"distance_model": {"uniform": [50, 100]}, "stop_policy": {"rel_tau_change": 1e-4}})
    assert spec.base.distance_model == ("uniform", 50.0, 100.0) and spec.base.stop_tol == 1e-4
    assert parse_spec({"stop_policy": "fixed"}).base.stop_tol is None


def test_point_key_stable_and_parameter_driven():
    a = SystemConfig(L=64)
    assert point_key(a) == point_key(SystemConfig(L=64))
    assert point_key(a) != point_key(SystemConfig(L=96))
    # seed and tracking are not scenario parameters
    assert point_key(a) == point_key(SystemConfig(L=64, master_seed=5, tracking_enabled=False))


def test_trial_streams_independent():
    r = trial_rngs(0, 1, 2)
    draws = {k: g.random() for k, g in r.items()}
    assert len(set(draws.values())) == len(draws)
    assert trial_rngs(0, 1, 2)["noise"].random() == draws["noise"]
    assert trial_rngs(0, 1, 3)["noise"].random() != draws["noise"]


def test_adding_sweep_points_keeps_existing_realizations():
    one = run_experiment(parse_spec(dict(SMALL, sweep={"L": [64]})), workers=1)
    two = run_experiment(parse_spec(dict(SMALL, sweep={"L": [96, 64]})), workers=1)
    rows1 = [r for r in one.records if r["L"] == 64]
    rows2 = [r for r in two.records if r["L"] == 64]
    assert rows1 == rows2


def test_row_accounting():
    spec = parse_spec(dict(SMALL, trials=1, iterations=20))
    res = run_experiment(spec, workers=1)
    assert len(res.records) == 40
    assert len(res.summary) == 40
    assert {r["algorithm"] for r in res.records} == {"amp_a_ec", "amp_a_ac"}


def test_records_ordered_by_algorithm_trial_iteration():
    spec = parse_spec(dict(SMALL, trials=3, algorithms=["amp_a_ac", "amp_a_ec_iter"]))
    res = run_experiment(spec, workers=1)
    keys = [(r["algorithm"], r["trial"], r["iteration"]) for r in res.records]
    order = {"amp_a_ac": 0, "amp_a_ec_iter": 1}
    assert keys == sorted(keys, key=lambda k: (order[k[0]], k[1], k[2]))


def test_summary_means_match_records():
    spec = parse_spec(dict(SMALL, trials=4))
    res = run_experiment(spec, workers=1)
    for alg in ("amp_a_ec", "amp_a_ac"):
        for t in (1, 5):
            vals = [r["error_prob"] for r in res.records if r["algorithm"] == alg and r["iteration"] == t]
            row = next(s for s in res.summary if s["algorithm"] == alg and s["iteration"] == t)
            assert row["error_prob_mean"] == pytest.approx(np.mean(vals), abs=1e-15)
            assert row["error_prob_stderr"] == pytest.approx(np.std(vals, ddof=1) / 2, abs=1e-15)
            assert row["trials"] == 4 and row["failed_trials"] == 0


def test_iter_variant_differs_only_in_reporting():
    cfg = SystemConfig(N=40, L=64, M=2, P=2, iterations=5)
    out = dict((name, tr) for name, tr, _ in run_trial(cfg, 0, ["amp_a_ec", "amp_a_ec_iter"]))
    assert [r.tau_mean for r in out["amp_a_ec"]] == [r.tau_mean for r in out["amp_a_ec_iter"]]


def test_failed_trials_recorded_and_excluded(monkeypatch):
    import ofdm_amp.harness as h
    from ofdm_amp._common import NumericalAbort

    real = h._RUNNERS["amp_a_ec"][0]

    def flaky(Y, A, beta, rho, cfg, trial=0, **kw):
        if trial == 1:
            raise NumericalAbort(3, "Z", (0, 0))
        return real(Y, A, beta, rho, cfg, trial=trial, **kw)

    monkeypatch.setitem(h._RUNNERS, "amp_a_ec", (flaky, None))
    res = run_experiment(parse_spec(dict(SMALL, trials=3, algorithms=["amp_a_ec"])), workers=1)
    failed = [r for r in res.records if r["status"] == "failed"]
    assert len(failed) == 1 and failed[0]["trial"] == 1
    assert res.numerical_aborts == 1
    assert all(s["trials"] == 2 and s["failed_trials"] == 1 for s in res.summary)


def test_se_rows(tmp_path):
    spec = parse_spec(dict(SMALL, algorithms=["se_analysis"], rho=0.0))
    res = run_experiment(spec, workers=1)
    assert [r["iteration"] for r in res.records] == [1, 2, 3, 4, 5]
    assert all(r["error_prob"] == 0 for r in res.records)


def test_csv_output_schema_and_determinism(tmp_path):
    spec = parse_spec(dict(SMALL, algorithms=["amp_a_ec", "se_analysis"]))
    p1, s1 = write_results(run_experiment(spec, workers=1), tmp_path / "a.csv")
    p2, _ = write_results(run_experiment(spec, workers=2), tmp_path / "b.csv")
    assert p1.read_bytes() == p2.read_bytes()
    assert s1 == summary_path(p1) and s1.name == "a_summary.csv"
    with open(p1) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == RECORD_COLUMNS
    with open(s1) as fh:
        assert next(csv.reader(fh)) == SUMMARY_COLUMNS
    # floats round-trip exactly
    res = run_experiment(spec, workers=1)
    idx = RECORD_COLUMNS.index("mse_effective")
    assert float(rows[1][idx]) == res.records[0]["mse_effective"]


def test_jsonl_output(tmp_path):
    spec = parse_spec(dict(SMALL, format="jsonl"))
    path, spath = write_results(run_experiment(spec, workers=1), tmp_path / "r.jsonl", "jsonl")
    lines = path.read_text().splitlines()
    first = json.loads(lines[0])
    assert list(first) == RECORD_COLUMNS and len(lines) == 2 * 2 * 5
    assert all(json.loads(l) for l in spath.read_text().splitlines())


def test_timing_column():
    spec = parse_spec(dict(SMALL, trials=1, timing=True))
    res = run_experiment(spec, workers=1)
    assert all(r["wall_time_us"] > 0 for r in res.records)
    assert all(s["wall_time_us_median"] > 0 for s in res.summary)
    res = run_experiment(parse_spec(SMALL), workers=1)
    assert all(r["wall_time_us"] is None for r in res.records)


def test_workers_env(monkeypatch):
    from ofdm_amp.harness import resolve_workers

    monkeypatch.setenv("OFDM_AMP_WORKERS", "3")
    assert resolve_workers() == 3 and resolve_workers(2) == 2
    monkeypatch.setenv("OFDM_AMP_WORKERS", "x")
    with pytest.raises(ConfigError):
        resolve_workers()
    monkeypatch.delenv("OFDM_AMP_WORKERS")
    assert resolve_workers() == 1
    with pytest.raises(ConfigError):
        resolve_workers(0)


def test_stop_policy_pads_aggregates():
    spec = parse_spec(dict(SMALL, trials=2, iterations=20, L=128, stop_policy={"rel_tau_change": 1e-2}))
    res = run_experiment(spec, workers=1)
    per_alg = [s for s in res.summary if s["algorithm"] == "amp_a_ec"]
    assert len(per_alg) == 20
    assert len([r for r in res.records if r["algorithm"] == "amp_a_ec"]) < 40
    assert not any(math.isnan(s["tau_mean_mean"]) for s in per_alg)


def test_spec_dataclass_defaults():
    assert ExperimentSpec().trials == 100
