"""Independent reference computations used by the oracle and acceptance tests.

These re-derive quantities from raw config fields instead of calling the
library's own helpers wherever that is practical.
"""
import itertools
import math

import numpy as np

from vechfl.config import TrainingSequence
from vechfl.mobility import dwell_time
from vechfl._rng import stream
from vechfl.timing import evaluate_round


def raw_required_time(cfg, n, j):
    t, v = cfg.task(j), cfg.vehicle(n)
    return t.edge_iters * t.local_iters * (t.batch_size * t.cycles_per_sample / v.cpu_freq[j] + t.setup_overhead)


def raw_train_time(cfg, n, j):
    t, v = cfg.task(j), cfg.vehicle(n)
    return t.local_iters * (t.batch_size * t.cycles_per_sample / v.cpu_freq[j] + t.setup_overhead)


def schedule_feasible(cfg, schedule, t0):
    """Dwell recomputed on a fresh trajectory; required time from raw fields."""
    for n, tasks in schedule.tasks.items():
        if not tasks:
            continue
        m = schedule.es_of[n]
        stay = dwell_time(cfg.vehicle(n), cfg.es(m), cfg.road, t0, stream(cfg.seed, "mobility", n))
        if not sum(raw_required_time(cfg, n, j) for j in tasks) < stay:
            return False
    return True


def greedy_scores(ctx, schedule, m, k, prefixes):
    """Aggregate score of every remaining level-k task given the partial
    sequences ``prefixes`` (n -> list), computed from scratch."""
    cfg = ctx.cfg
    vehicles = sorted(n for n, mm in schedule.es_of.items() if mm == m)
    level = {n: [j for j in schedule.tasks[n] if cfg.task(j).edge_iters >= k] for n in vehicles}
    placed = {j for p in prefixes.values() for j in p}
    cands = sorted({j for n in vehicles for j in level[n]} - placed)
    out = {}
    for j in cands:
        holders = [n for n in vehicles if j in level[n]]
        pairs = sum(1 for a, b in itertools.combinations(holders, 2)
                    if len(prefixes.get(a, [])) == len(prefixes.get(b, [])))
        ups = 0.0
        for n in holders:
            offset = sum(raw_train_time(cfg, n, jj) for kk in range(1, k) for jj in schedule.tasks[n]
                         if cfg.task(jj).edge_iters >= kk)
            offset += sum(raw_train_time(cfg, n, jj) for jj in prefixes.get(n, []))
            t_up = offset + raw_train_time(cfg, n, j)
            rate = ctx.rate_fn(n, m, ctx.t0 + t_up)
            ups += ctx.xi6 / (cfg.task(j).model_size_v2e / rate)
        out[j] = cfg.hyper.xi7 * pairs + (1 - cfg.hyper.xi7) * ups
    return out


def _orders_to_sequences(cfg, schedule, es_perm):
    """One task permutation per ES, applied at every edge iteration."""
    out = {}
    for n, m in schedule.es_of.items():
        tasks = schedule.tasks[n]
        if not tasks:
            continue
        order = [j for j in es_perm[m] if j in tasks]
        for k in range(1, max(cfg.task(j).edge_iters for j in tasks) + 1):
            out.setdefault(k, {})[(m, n)] = tuple(j for j in order if cfg.task(j).edge_iters >= k)
    return {k: TrainingSequence(v) for k, v in out.items()}


def best_joint_permutation_makespan(ctx, schedule):
    """Exhaustive minimum makespan over per-ES task permutations shared by all
    vehicles of that ES and all edge iterations. ES timelines are independent,
    so per-ES arrival vectors are enumerated separately and combined."""
    cfg = ctx.cfg
    ess = sorted({m for n, m in schedule.es_of.items() if schedule.tasks[n]})
    tasks = sorted({j for t in schedule.tasks.values() for j in t})
    per_es = {m: sorted({j for n, mm in schedule.es_of.items() if mm == m for j in schedule.tasks[n]})
              for m in ess}
    arrivals = {}
    for m in ess:
        rows = []
        for perm in itertools.permutations(per_es[m]):
            es_perm = {mm: (perm if mm == m else tuple(per_es[mm])) for mm in ess}
            timing = evaluate_round(cfg, schedule, _orders_to_sequences(cfg, schedule, es_perm), ctx.rate_fn, ctx.t0)
            rows.append([timing.cloud_arrival.get((j, m), math.inf) for j in tasks])
        arrivals[m] = np.array(rows)
    quorum = {}
    for idx, j in enumerate(tasks):
        part = sum(bool(np.isfinite(arrivals[m][0, idx])) for m in ess)
        quorum[idx] = min(cfg.task(j).cloud_quorum, part)
    *head, last = ess
    best = math.inf
    for combo in itertools.product(*[range(len(arrivals[m])) for m in head]):
        fixed = np.array([arrivals[m][c] for m, c in zip(head, combo)]).reshape(len(head), len(tasks))
        ends = np.full(len(arrivals[last]), -math.inf)
        for idx in range(len(tasks)):
            col = np.concatenate([np.broadcast_to(fixed[:, idx], (len(arrivals[last]), len(head))),
                                  arrivals[last][:, idx:idx + 1]], axis=1)
            ends = np.maximum(ends, np.sort(col, axis=1)[:, quorum[idx] - 1])
        best = min(best, float(ends.min()))
    return best - ctx.t0
