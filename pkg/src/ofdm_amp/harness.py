"""Seeded Monte Carlo experiments: spec loading, parallel trials, aggregation and output.

Every random quantity of a trial comes from its own stream seeded by
``SeedSequence([master_seed, point_key, trial, purpose])``. ``point_key`` is a
64-bit BLAKE2b digest of the grid point's parameters, so adding or reordering
sweep values leaves the realizations of existing points untouched, and the
results do not depend on how trials are spread over workers.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._common import NumericalAbort
from .amp_ac import ac_run
from .amp_ec import ec_run
from .model import ConfigError, SystemConfig, make_scenario
from .se import SeParams, predict

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "load_spec",
    "parse_spec",
    "grid_points",
    "point_key",
    "trial_rngs",
    "run_trial",
    "run_experiment",
    "write_results",
    "RECORD_COLUMNS",
    "SUMMARY_COLUMNS",
]

ALGORITHMS = ("amp_a_ec", "amp_a_ac", "amp_a_ec_iter", "amp_a_ac_iter", "se_analysis")
SWEEP_AXES = ("L", "M", "P", "N", "pt_dbm", "rho", "distance_model")
FORMATS = ("csv", "jsonl")
PURPOSES = {"pilots": 1, "distances": 2, "activities": 3, "channels": 4, "noise": 5}
WORKERS_ENV = "OFDM_AMP_WORKERS"

POINT_COLUMNS = ["N", "K", "L", "M", "P", "rho", "pt_dbm", "distance_model"]
METRIC_COLUMNS = ["error_prob", "false_alarm", "missed_detection", "mse_active",
                  "mse_effective", "f_obj", "tau_mean"]
RECORD_COLUMNS = POINT_COLUMNS + ["algorithm", "trial", "iteration", "status"] + METRIC_COLUMNS + [
    "wall_time_us"]
SUMMARY_COLUMNS = POINT_COLUMNS + ["algorithm", "iteration", "trials", "failed_trials"] + [
    f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "stderr")] + ["wall_time_us_median"]

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)} - {"stop_tol"}
_SPEC_KEYS = _CONFIG_FIELDS | {"stop_policy", "sweep", "trials", "algorithms", "output", "format",
                               "timing"}


@dataclass(frozen=True)
class ExperimentSpec:
    base: SystemConfig = field(default_factory=SystemConfig)
    sweep: tuple = ()  # ((axis, (values...)), ...), in document order
    trials: int = 100
    algorithms: tuple = ("amp_a_ec", "amp_a_ac")
    output: str = "results.csv"
    format: str = "csv"
    timing: bool = False


@dataclass
class ExperimentResult:
    records: list
    summary: list
    failed_trials: int = 0
    numerical_aborts: int = 0


# -- spec parsing ------------------------------------------------------------

def _distance_from_json(value, key="distance_model"):
    if isinstance(value, dict) and len(value) == 1:
        kind, arg = next(iter(value.items()))
        if kind == "constant" and isinstance(arg, (int, float)):
            return ("constant", float(arg))
        if kind == "uniform" and isinstance(arg, list) and len(arg) == 2:
            return ("uniform", float(arg[0]), float(arg[1]))
    raise ConfigError(f"{key}: expected {{\"constant\": d}} or {{\"uniform\": [lo, hi]}}, got {value!r}")


def _stop_from_json(value):
    if value == "fixed" or value is None:
        return None
    if isinstance(value, dict) and set(value) == {"rel_tau_change"}:
        return float(value["rel_tau_change"])
    raise ConfigError(f"stop_policy: expected \"fixed\" or {{\"rel_tau_change\": eps}}, got {value!r}")


def _make_config(key_hint, **kwargs):
    try:
        return SystemConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{key_hint}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{key_hint}: {exc}") from None


def parse_spec(doc: dict) -> ExperimentSpec:
    """Validate a decoded JSON spec; every grid point is checked before returning."""
    if not isinstance(doc, dict):
        raise ConfigError("spec must be a JSON object")
    unknown = sorted(set(doc) - _SPEC_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    cfg_kwargs = {k: v for k, v in doc.items() if k in _CONFIG_FIELDS}
    if "distance_model" in cfg_kwargs:
        cfg_kwargs["distance_model"] = _distance_from_json(cfg_kwargs["distance_model"])
    if "stop_policy" in doc:
        cfg_kwargs["stop_tol"] = _stop_from_json(doc["stop_policy"])
    bad = [k for k in cfg_kwargs if k in ("sigma2_mw", "rho", "pt_dbm", "eta_pl", "wavelength_m")
           and not isinstance(cfg_kwargs[k], (int, float))]
    if bad:
        raise ConfigError(f"{bad[0]}: expected a number")
    base = _make_config("base", **cfg_kwargs)

    sweep_doc = doc.get("sweep", {})
    if not isinstance(sweep_doc, dict):
        raise ConfigError("sweep: expected an object of axis -> list")
    sweep = []
    for axis, values in sweep_doc.items():
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep: unknown axis {axis!r}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{axis}: expected a non-empty list")
        if axis == "distance_model":
            values = [_distance_from_json(v, "sweep.distance_model") for v in values]
        sweep.append((axis, tuple(values)))

    trials = doc.get("trials", 100)
    if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
        raise ConfigError(f"trials: expected a positive integer, got {trials!r}")
    algorithms = doc.get("algorithms", ["amp_a_ec", "amp_a_ac"])
    if not isinstance(algorithms, list) or not algorithms or any(a not in ALGORITHMS for a in algorithms):
        raise ConfigError(f"algorithms: expected a non-empty subset of {list(ALGORITHMS)}")
    fmt = doc.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError(f"format: expected one of {list(FORMATS)}")
    output = doc.get("output", "results.csv" if fmt == "csv" else "results.jsonl")
    if not isinstance(output, str):
        raise ConfigError("output: expected a path string")
    timing = doc.get("timing", False)
    if not isinstance(timing, bool):
        raise ConfigError("timing: expected true or false")

    spec = ExperimentSpec(base, tuple(sweep), trials, tuple(dict.fromkeys(algorithms)), output, fmt,
                          timing)
    grid_points(spec)
    return spec


def load_spec(path) -> ExperimentSpec:
    """Read and validate a JSON spec file; ``{}`` gives the default experiment."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_spec(doc)


def grid_points(spec: ExperimentSpec) -> list:
    """All grid points (Cartesian product of the sweep axes), validated."""
    if not spec.sweep:
        return [spec.base]
    axes = [a for a, _ in spec.sweep]
    points = []
    for combo in itertools.product(*(v for _, v in spec.sweep)):
        changes = dict(zip(axes, combo))
        label = ", ".join(f"{a}={v!r}" for a, v in changes.items())
        kwargs = {f.name: getattr(spec.base, f.name) for f in dataclasses.fields(SystemConfig)}
        kwargs.update(changes)
        points.append(_make_config(f"sweep point ({label})", **kwargs))
    return points


# -- seeding -----------------------------------------------------------------

def _point_params(cfg: SystemConfig) -> dict:
    fields = dataclasses.asdict(cfg)
    fields.pop("master_seed")
    fields.pop("tracking_enabled")
    fields["distance_model"] = list(cfg.distance_model)
    return fields


def point_key(cfg: SystemConfig) -> int:
    """Stable 64-bit identifier of a grid point's scenario parameters."""
    blob = json.dumps(_point_params(cfg), sort_keys=True).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def trial_rngs(master_seed: int, key: int, trial: int) -> dict:
    return {
        name: np.random.default_rng(np.random.SeedSequence([master_seed, key, trial, tag]))
        for name, tag in PURPOSES.items()
    }


# -- trials ------------------------------------------------------------------

_RUNNERS = {
    "amp_a_ec": (ec_run, None),
    "amp_a_ac": (ac_run, None),
    "amp_a_ec_iter": (ec_run, False),
    "amp_a_ac_iter": (ac_run, False),
}


def run_trial(cfg: SystemConfig, trial: int, algorithms, timing: bool = False) -> list:
    """Simulate one realization under every requested algorithm.

    Returns ``(algorithm, trace or None, error message or None)`` triples;
    a numerical abort in one algorithm does not affect the others.
    """
    sc = make_scenario(cfg, trial_rngs(cfg.master_seed, point_key(cfg), trial))
    out = []
    for name in algorithms:
        if name not in _RUNNERS:
            continue
        fn, tracking = _RUNNERS[name]
        try:
            res = fn(sc.Y, sc.A, sc.beta_eff, cfg.rho, cfg, truth=(sc.a, sc.H), trial=trial,
                     timing=timing, tracking=tracking)
            out.append((name, res.trace, None))
        except NumericalAbort as exc:
            out.append((name, None, str(exc)))
    return out


def _run_task(task):
    cfg, trial, algorithms, timing = task
    with threadpool_limits(1):
        return run_trial(cfg, trial, algorithms, timing)


def _se_rows(cfg: SystemConfig, point: dict) -> list:
    params = SeParams(cfg.N, cfg.P, cfg.L, cfg.M, cfg.rho, cfg.mean_beta_eff(), cfg.sigma2_mw)
    T = cfg.iterations
    pred = predict(params, max(T - 1, 0), method="quad")
    rows = []
    # empirical iteration t is driven by tau^(t-1)
    for t in range(1, T + 1):
        row = dict(point, algorithm="se_analysis", trial=None, iteration=t, status="ok")
        row.update(error_prob=float(pred.p_err[t - 1]), false_alarm=None, missed_detection=None,
                   mse_active=float(pred.mse[t - 1]), mse_effective=None, f_obj=None,
                   tau_mean=float(pred.tau[t - 1]), wall_time_us=None)
        rows.append(row)
    return rows


def resolve_workers(workers=None) -> int:
    """Explicit value, else ``$OFDM_AMP_WORKERS``, else 1."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        else:
            workers = 1
    if workers < 1:
        raise ConfigError(f"worker count must be positive, got {workers}")
    return workers


def _point_dict(cfg):
    d = {c: getattr(cfg, c) for c in POINT_COLUMNS}
    d["distance_model"] = ":".join(str(v) for v in cfg.distance_model)
    return d


def run_experiment(spec: ExperimentSpec, workers=None) -> ExperimentResult:
    """Run every (grid point, trial) and aggregate per (point, algorithm, iteration).

    Output order is fixed by (point, algorithm, trial, iteration) whatever the
    worker count.
    """
    workers = resolve_workers(workers)
    points = grid_points(spec)
    sim_algs = tuple(a for a in spec.algorithms if a in _RUNNERS)
    tasks = [(cfg, trial, sim_algs, spec.timing) for cfg in points for trial in range(spec.trials)]

    if not sim_algs:
        outcomes = []
    elif workers == 1:
        outcomes = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))

    records, summary = [], []
    n_failed = 0
    for i, cfg in enumerate(points):
        point = _point_dict(cfg)
        block = outcomes[i * spec.trials:(i + 1) * spec.trials] if sim_algs else []
        for alg in spec.algorithms:
            if alg == "se_analysis":
                rows = _se_rows(cfg, point)
                records.extend(rows)
                summary.extend(_summarize_se(rows))
                continue
            traces, failed = [], 0
            for trial, outcome in enumerate(block):
                _, trace, err = next(o for o in outcome if o[0] == alg)
                if trace is None:
                    failed += 1
                    records.append(_failed_row(point, alg, trial))
                    continue
                traces.append(trace)
                for rec in trace:
                    row = dict(point, algorithm=alg, status="ok", **rec.as_dict())
                    records.append(row)
            n_failed += failed
            summary.extend(_summarize(point, alg, traces, failed, cfg.iterations))
    # every failed trial is a numerical abort; nothing else is caught
    return ExperimentResult(records, summary, n_failed, n_failed)


def _failed_row(point, alg, trial):
    row = dict(point, algorithm=alg, trial=trial, iteration=None, status="failed")
    row.update({c: None for c in METRIC_COLUMNS})
    row["wall_time_us"] = None
    return row


def _mean_stderr(values):
    vals = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if vals.size == 0:
        return None, None
    if vals.size == 1:
        return float(vals[0]), None
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def _summarize(point, alg, traces, failed, T):
    rows = []
    if not traces:
        return rows
    for t in range(1, T + 1):
        # a trial that stopped early keeps reporting its last iterate
        recs = [tr[min(t, len(tr)) - 1] for tr in traces if tr]
        if not recs:
            break
        row = dict(point, algorithm=alg, iteration=t, trials=len(recs), failed_trials=failed)
        for c in METRIC_COLUMNS:
            row[f"{c}_mean"], row[f"{c}_stderr"] = _mean_stderr([getattr(r, c) for r in recs])
        walls = [r.wall_time_us for r in recs if r.wall_time_us is not None]
        row["wall_time_us_median"] = float(np.median(walls)) if walls else None
        rows.append(row)
    return rows


def _summarize_se(rows):
    out = []
    for r in rows:
        row = {c: r[c] for c in POINT_COLUMNS}
        row.update(algorithm="se_analysis", iteration=r["iteration"], trials=0, failed_trials=0)
        for c in METRIC_COLUMNS:
            row[f"{c}_mean"], row[f"{c}_stderr"] = r[c], None
        row["wall_time_us_median"] = None
        out.append(row)
    return out


# -- output ------------------------------------------------------------------

def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _json_cell(v):
    if isinstance(v, (float, np.floating)):
        return None if math.isnan(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def format_rows(rows, columns, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_csv_cell(r.get(c)) for c in columns])
        return buf.getvalue()
    if fmt == "jsonl":
        return "".join(json.dumps({c: _json_cell(r.get(c)) for c in columns}) + "\n" for r in rows)
    raise ConfigError(f"unknown format {fmt!r}")


def summary_path(path) -> Path:
    p = Path(path)
    return p.with_name(f"{p.stem}_summary{p.suffix}")


def write_results(result: ExperimentResult, path, fmt: str = "csv") -> tuple:
    """Write the per-iteration records to ``path`` and the aggregates next to it."""
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_rows(result.records, RECORD_COLUMNS, fmt), encoding="utf-8")
    spath = summary_path(path)
    spath.write_text(format_rows(result.summary, SUMMARY_COLUMNS, fmt), encoding="utf-8")
    return path, spath
