"""Greedy training-order selection per edge server and edge iteration.

At every step each unranked task is scored by how many pairs of its vehicles
would train it at the same position (so their uploads line up for the
synchronous edge aggregation) blended with how fast those vehicles could
upload it at the predicted finish instant. The best task is appended to the
sequence of every vehicle that trains it.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .config import Schedule, TrainingSequence
from .context import RoundContext
from .timing import v2e_upload_time

NEG_INF = float("-inf")


class ZeroUploadTime(ValueError):
    pass


def overlap_score(partial: Mapping[int, Sequence[int]], holders: Iterable[int]) -> int:
    """Vehicle pairs among ``holders`` whose next free position coincides."""
    by_pos = Counter(len(partial.get(n, ())) + 1 for n in holders)
    return sum(c * (c - 1) // 2 for c in by_pos.values())


def overlap_pairs(seqs: Mapping[int, Sequence[int]], j: int) -> int:
    """Pairs of vehicles that already hold ``j`` at the same rank."""
    by_pos = Counter(list(s).index(j) + 1 for s in seqs.values() if j in s)
    return sum(c * (c - 1) // 2 for c in by_pos.values())


def upload_score(upload_time: float, xi6: float) -> float:
    if not upload_time > 0:
        raise ZeroUploadTime(upload_time)
    return xi6 / upload_time


def aggregate_score(s_lap: float, s_ups: Iterable[float], xi7: float) -> float:
    return xi7 * s_lap + (1.0 - xi7) * sum(s_ups)


def level_offsets(ctx: RoundContext, schedule: Schedule, n: int, k: int) -> float:
    """Compute time of vehicle ``n`` over edge iterations before ``k``."""
    total = 0.0
    for kk in range(1, k):
        for j in schedule.tasks[n]:
            if ctx.cfg.task(j).edge_iters >= kk:
                total += ctx.train_time(n, j)
    return total


@dataclass
class GreedyStep:
    scores: dict  # candidate task -> aggregate score
    chosen: int


@dataclass
class GreedyResult:
    sequences: dict  # n -> tuple of tasks
    steps: list = field(default_factory=list)


class UploadScorer:
    """Upload scores at predicted finish instants, cached per query."""

    def __init__(self, ctx: RoundContext, m: int):
        self.ctx = ctx
        self.m = m
        self._cache: dict = {}

    def __call__(self, n: int, j: int, t_rel: float) -> float:
        key = (n, j, t_rel)
        s = self._cache.get(key)
        if s is None:
            rate = self.ctx.rate_fn(n, self.m, self.ctx.t0 + t_rel)
            s = upload_score(v2e_upload_time(self.ctx.cfg.task(j), rate), self.ctx.xi6)
            self._cache[key] = s
        return s


def greedy_rank(ctx: RoundContext, schedule: Schedule, m: int, k: int,
                scorer: Optional[UploadScorer] = None) -> GreedyResult:
    """Level-k sequences for the vehicles under ES ``m``.

    Candidates are the tasks assigned under ``m`` with at least ``k`` edge
    iterations. Selection uses a strict ``>`` over candidates in ascending id
    order, so ties go to the lowest task id.
    """
    cfg = ctx.cfg
    xi7 = cfg.hyper.xi7
    scorer = scorer or UploadScorer(ctx, m)
    vehicles = schedule.vehicles_under(m)
    level = {n: [j for j in schedule.tasks[n] if cfg.task(j).edge_iters >= k] for n in vehicles}
    holders: dict = {}
    for n in vehicles:
        for j in level[n]:
            holders.setdefault(j, []).append(n)
    partial = {n: [] for n in vehicles if level[n]}
    clock = {n: level_offsets(ctx, schedule, n, k) for n in partial}
    remaining = sorted(holders)
    steps = []
    while remaining:
        best, best_q = NEG_INF, None
        scores = {}
        for j in remaining:
            s_lap = overlap_score(partial, holders[j])
            s_up = [scorer(n, j, clock[n] + ctx.train_time(n, j)) for n in holders[j]]
            s = aggregate_score(s_lap, s_up, xi7)
            scores[j] = s
            if s > best:
                best, best_q = s, j
        steps.append(GreedyStep(scores, best_q))
        for n in holders[best_q]:
            partial[n].append(best_q)
            clock[n] += ctx.train_time(n, best_q)
        remaining.remove(best_q)
    return GreedyResult({n: tuple(s) for n, s in partial.items()}, steps)


def run_stage2(ctx: RoundContext, schedule: Schedule) -> dict:
    """Sequences for every edge server and edge iteration: k -> TrainingSequence."""
    cfg = ctx.cfg
    order: dict = {}
    for m in sorted(set(schedule.es_of.values())):
        vehicles = [n for n in schedule.vehicles_under(m) if schedule.tasks[n]]
        if not vehicles:
            continue
        k_max = max(cfg.task(j).edge_iters for n in vehicles for j in schedule.tasks[n])
        scorer = UploadScorer(ctx, m)
        for k in range(1, k_max + 1):
            res = greedy_rank(ctx, schedule, m, k, scorer)
            for n, seq in res.sequences.items():
                order.setdefault(k, {})[(m, n)] = seq
    return {k: TrainingSequence(o) for k, o in sorted(order.items())}


def sequences_from_orders(schedule: Schedule, cfg, orders: Mapping[int, Sequence[int]]) -> dict:
    """Expand one task order per vehicle to all edge iterations.

    Level k keeps the order restricted to tasks with at least k iterations.
    """
    out: dict = {}
    for n, m in schedule.es_of.items():
        tasks = schedule.tasks[n]
        if not tasks:
            continue
        order = [j for j in orders[n] if j in tasks]
        k_max = max(cfg.task(j).edge_iters for j in tasks)
        for k in range(1, k_max + 1):
            out.setdefault(k, {})[(m, n)] = tuple(j for j in order if cfg.task(j).edge_iters >= k)
    return {k: TrainingSequence(o) for k, o in sorted(out.items())}
