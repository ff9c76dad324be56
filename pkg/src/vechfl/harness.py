"""Batch experiment runner and report comparison.

A run directory holds five CSV files plus ``run.json``. Every CSV row carries
``schema_version``, ``config_hash`` and ``seed`` so rows copied out of their
directory keep their provenance. Nothing time-dependent is written, which
makes repeated runs byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .config import (SCHEDULERS, SIM_MODES, ConfigError, HyperParams, SimParams, SystemConfig, Violation,
                     config_from_dict, config_hash, config_to_dict, require_valid)
from .config import _obj
from .instances import default_config
from .simulator import ExperimentResult, run_until_convergence

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 2, 3

_PROV = ("schema_version", "config_hash", "seed")
COLUMNS = {
    "balance.csv": _PROV + ("scheduler", "task", "rounds", "mean_count", "min_count", "max_count"),
    "convergence.csv": _PROV + ("scheduler", "mode", "task", "completion_time", "target_time", "delta_time",
                                "final_distance", "status"),
    "makespan.csv": _PROV + ("scheduler", "mode", "n_vehicles", "n_tasks", "rounds", "time_to_target",
                             "makespan", "mean_round_makespan"),
    "ntt.csv": _PROV + ("scheduler", "g", "es", "vehicles", "antt", "lntt"),
    "hybrid_vs_sync.csv": _PROV + ("scheduler", "g", "hybrid_makespan", "full_sync_makespan", "saving"),
}
GENERATOR_FIELDS = ("n_vehicles", "n_tasks", "n_es", "data_volume", "seed", "hyper", "sim", "scheduler")
LOWER_IS_BETTER = ("time_to_target", "makespan", "mean_round_makespan", "mean_antt")


class InstanceMismatch(ValueError):
    """Reports being compared were not produced on the same instances."""


# ---------------------------------------------------------------------------
# config ingestion
# ---------------------------------------------------------------------------

def config_from_doc(doc: Mapping, seed: Optional[int] = None, n_vehicles: Optional[int] = None,
                    n_tasks: Optional[int] = None) -> SystemConfig:
    """Full config document, or ``{"generator": {...}}`` for a seeded default
    instance. Command-line overrides apply on top."""
    if not isinstance(doc, Mapping):
        raise ConfigError([Violation("BAD_TYPE", "config: expected an object")])
    if "generator" in doc:
        if len(doc) != 1:
            raise ConfigError([Violation("UNKNOWN_FIELD", "config: 'generator' must be the only key")])
        gen = doc["generator"]
        if not isinstance(gen, Mapping):
            raise ConfigError([Violation("BAD_TYPE", "generator: expected an object")])
        errors = [Violation("UNKNOWN_FIELD", f"generator: unknown field '{k}'") for k in gen
                  if k not in GENERATOR_FIELDS]
        hyper = _obj(HyperParams, gen["hyper"], "generator.hyper", errors) if "hyper" in gen else None
        sim = _obj(SimParams, gen["sim"], "generator.sim", errors) if "sim" in gen else None
        if errors:
            raise ConfigError(errors)
        kw = dict(seed=gen.get("seed", 0), n_vehicles=gen.get("n_vehicles", 25), n_tasks=gen.get("n_tasks", 4),
                  n_es=gen.get("n_es", 4), data_volume=gen.get("data_volume", 400))
        if seed is not None:
            kw["seed"] = seed
        if n_vehicles is not None:
            kw["n_vehicles"] = n_vehicles
        if n_tasks is not None:
            kw["n_tasks"] = n_tasks
        for name in ("seed", "n_vehicles", "n_tasks", "n_es", "data_volume"):
            if not isinstance(kw[name], int) or isinstance(kw[name], bool) or kw[name] < 0:
                raise ConfigError([Violation("BAD_TYPE", f"generator.{name}: expected a non-negative integer")])
        try:
            cfg = default_config(hyper=hyper, sim=sim, scheduler=gen.get("scheduler", "heart"), **kw)
        except ValueError as exc:
            raise ConfigError([Violation("HYPER_OUT_OF_RANGE", f"generator: {exc}")]) from exc
    else:
        cfg = config_from_dict(doc)
        if n_vehicles is not None and n_vehicles != len(cfg.vehicles):
            raise ConfigError([Violation("BAD_TYPE", "--vehicles only applies to generator configs")])
        if n_tasks is not None and n_tasks != len(cfg.tasks):
            raise ConfigError([Violation("BAD_TYPE", "--tasks only applies to generator configs")])
        if seed is not None:
            cfg = cfg.replace(seed=seed)
    return require_valid(cfg)


def load_run_config(path: Optional[str], **overrides) -> SystemConfig:
    if path is None:
        return config_from_doc({"generator": {}}, **overrides)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([Violation("BAD_JSON", f"cannot read {path}: {exc}")]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([Violation("BAD_JSON", str(exc))]) from exc
    return config_from_doc(doc, **overrides)


# ---------------------------------------------------------------------------
# metric tables
# ---------------------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv(name: str, rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS[name])
    for row in rows:
        w.writerow([_num(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _mean_round(res: ExperimentResult) -> float:
    vals = [r["makespan"] for r in res.rounds if r["cloud_time"]]
    return float(np.mean(vals)) if vals else 0.0


def _mean_antt(res: ExperimentResult) -> float:
    vals = [v["antt"] for r in res.rounds for v in r["ntt"].values()]
    return float(np.mean(vals)) if vals else 0.0


def metric_tables(cfg: SystemConfig, results: Sequence[ExperimentResult]) -> dict:
    """File name -> CSV text for a finished set of runs on one instance."""
    prov = (SCHEMA_VERSION, config_hash(cfg), cfg.seed)
    tables: dict = {name: [] for name in COLUMNS}
    for res in results:
        kind = res.scheduler
        for j in cfg.task_ids:
            counts = [r["counts"][str(j)] for r in res.rounds if str(j) in r["counts"]]
            tables["balance.csv"].append(prov + (kind, j, len(counts),
                                                 float(np.mean(counts)) if counts else 0.0,
                                                 min(counts, default=0), max(counts, default=0)))
            if j in res.unconverged:
                status = "unconverged"
            elif j in res.far_from_optimum:
                status = "far_from_optimum"
            else:
                status = "converged"
            tables["convergence.csv"].append(prov + (kind, res.mode, j, res.completion.get(j),
                                                     res.target_time.get(j), res.delta_time.get(j),
                                                     res.final_distance[j], status))
        tables["makespan.csv"].append(prov + (kind, res.mode, len(cfg.vehicles), len(cfg.tasks), len(res.rounds),
                                              res.time_to_target, res.makespan, _mean_round(res)))
        for r in res.rounds:
            for m, v in r["ntt"].items():
                tables["ntt.csv"].append(prov + (kind, r["g"], int(m), v["vehicles"], v["antt"], v["lntt"]))
            if "replay" in r and r["cloud_time"]:
                h, f = r["replay"]["hybrid"], r["replay"]["full-sync"]
                tables["hybrid_vs_sync.csv"].append(prov + (kind, r["g"], h, f, f - h))
    return {name: _csv(name, rows) for name, rows in tables.items()}


def run_document(cfg: SystemConfig, results: Sequence[ExperimentResult], mode: str, exit_code: int) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "mode": mode,
        "schedulers": [r.scheduler for r in results],
        "versions": {"vechfl": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "config": config_to_dict(cfg),
        "results": {r.scheduler: r.to_json() for r in results},
        "metrics": {r.scheduler: {"time_to_target": _finite_or_none(r.time_to_target),
                                  "makespan": _finite_or_none(r.makespan),
                                  "mean_round_makespan": _mean_round(r), "mean_antt": _mean_antt(r)}
                    for r in results},
        "exit_code": exit_code,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@dataclass
class RunOutcome:
    exit_code: int
    results: list
    out_dir: Path


def expand_schedulers(spec: str) -> list[str]:
    if spec == "all":
        return list(SCHEDULERS)
    kinds = [s.strip() for s in spec.split(",") if s.strip()]
    bad = [k for k in kinds if k not in SCHEDULERS]
    if bad or not kinds:
        raise ConfigError([Violation("UNKNOWN_SCHEDULER", f"unknown scheduler(s): {bad or spec!r}")])
    return kinds


def run_experiment(cfg: SystemConfig, schedulers: Sequence[str], out_dir, mode: Optional[str] = None,
                   log_events: bool = False) -> RunOutcome:
    """Run each scheduler to convergence on ``cfg`` and write the artifacts.

    Runs that hit the round cap still write their partial outputs; the exit
    code is then ``EXIT_CAP``.
    """
    require_valid(cfg)
    mode = mode or cfg.sim.mode
    if mode not in SIM_MODES:
        raise ConfigError([Violation("BAD_MODE", f"unknown mode {mode!r}")])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for kind in schedulers:
        log.info("running %s on seed %d (%s)", kind, cfg.seed, mode)
        results.append(run_until_convergence(cfg, kind, mode=mode, log_events=log_events, raise_on_cap=False,
                                             keep_schedules=False, replay_sync=True))
    code = EXIT_CAP if any(r.unconverged for r in results) else EXIT_OK
    for name, text in metric_tables(cfg, results).items():
        (out / name).write_text(text, encoding="utf-8")
    (out / "run.json").write_text(run_document(cfg, results, mode, code), encoding="utf-8")
    if log_events:
        with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
            for r in results:
                for ev in r.events:
                    fh.write(json.dumps(dict(ev, scheduler=r.scheduler), sort_keys=True) + "\n")
    return RunOutcome(code, results, out)


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def load_report(path) -> dict:
    """(config_hash, seed, scheduler) -> metrics for every run.json under ``path``."""
    root = Path(path)
    files = [root] if root.is_file() else sorted(root.rglob("run.json"))
    if not files:
        raise FileNotFoundError(f"no run.json under {path}")
    entries = {}
    for f in files:
        doc = json.loads(f.read_text(encoding="utf-8"))
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InstanceMismatch(f"{f}: schema version {doc.get('schema_version')} != {SCHEMA_VERSION}")
        for kind, met in doc["metrics"].items():
            key = (doc["config_hash"], doc["seed"], kind)
            if key in entries:
                raise InstanceMismatch(f"{f}: duplicate run for seed {doc['seed']} / {kind}")
            entries[key] = {m: (math.inf if met[m] is None else met[m]) for m in LOWER_IS_BETTER}
    return entries


def _pairs(ref: dict, other: dict) -> list:
    inst_ref = {(h, s) for h, s, _ in ref}
    inst_other = {(h, s) for h, s, _ in other}
    if inst_ref != inst_other:
        raise InstanceMismatch(f"instances differ: {len(inst_ref ^ inst_other)} unmatched (config hash, seed)")
    kinds_ref = {k for *_, k in ref}
    kinds_other = {k for *_, k in other}
    if kinds_ref == kinds_other:
        return [(ref[key], other[key], key) for key in sorted(ref)]
    if len(kinds_ref) == 1 and len(kinds_other) == 1:
        (a,), (b,) = kinds_ref, kinds_other
        return [(ref[(h, s, a)], other[(h, s, b)], (h, s, f"{a}|{b}")) for h, s in sorted(inst_ref)]
    raise InstanceMismatch("reports hold different scheduler sets")


def compare(paths: Sequence) -> list[dict]:
    """Paired deltas of every later report against the first one.

    ``delta = other - reference`` (negative means the other report is faster);
    ``win_rate`` is the share of pairs where the reference is strictly lower,
    ties counting one half.
    """
    if len(paths) < 2:
        raise ValueError("compare needs at least two reports")
    reports = [load_report(p) for p in paths]
    rows = []
    for idx, other in enumerate(reports[1:], start=1):
        pairs = _pairs(reports[0], other)
        for metric in LOWER_IS_BETTER:
            a = np.array([p[0][metric] for p in pairs], dtype=float)
            b = np.array([p[1][metric] for p in pairs], dtype=float)
            both_inf = np.isinf(a) & np.isinf(b)
            finite = np.isfinite(a) & np.isfinite(b)
            delta = np.where(both_inf, 0.0, b - np.where(both_inf, 0.0, a))
            wins = np.where(both_inf | (a == b), 0.5, (a < b).astype(float))
            rows.append({
                "reference": str(paths[0]), "other": str(paths[idx]), "metric": metric, "pairs": len(pairs),
                "mean_delta": float(np.mean(delta[finite])) if finite.any() else math.nan,
                "median_delta": float(np.median(delta[finite])) if finite.any() else math.nan,
                "win_rate": float(np.mean(wins)) if len(wins) else math.nan,
            })
    return rows


def format_table(rows: Sequence[Mapping]) -> str:
    cols = ("reference", "other", "metric", "pairs", "mean_delta", "median_delta", "win_rate")
    cells = [[c for c in cols]]
    for r in rows:
        cells.append([r[c] if isinstance(r[c], str) else (str(r[c]) if isinstance(r[c], int) else f"{r[c]:.6g}")
                      for c in cols])
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells) + "\n"


def log_level_from_env(default: str = "WARNING") -> int:
    level = logging.getLevelName(os.environ.get("VECHFL_LOG_LEVEL", default).upper())
    return level if isinstance(level, int) else logging.WARNING
