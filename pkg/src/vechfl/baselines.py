"""Comparison schedulers and the scheduler registry.

Every scheduler maps ``(RoundContext, rng)`` to ``(Schedule, sequences)``
where ``sequences`` is ``{k: TrainingSequence}``.

* ``heart``: sequential PSO-GA assignment, then greedy sequencing.
* ``tsso``: random feasible assignment (rejection sampling, then repair) and
  a random task order drawn once per round.
* ``tspso``: plain binary PSO (constant inertia, random pull coefficients, no
  GA) over the joint assignment of all vehicles; random-key PSO for the task
  order under each edge server.
* ``tsga``: generational GA over the joint assignment; random-key GA for the
  order.
* ``tsgd``: per-vehicle greedy on ``rho_j / (1 + count_j)``, then greedy
  sequencing.

The joint searches score a whole round's assignment by the same balance
trade-off the per-vehicle fitness uses, with the final per-task counts.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .config import Schedule
from .context import RoundContext
from .stage1 import MaskTables, mask_bits, run_stage1
from .stage2 import UploadScorer, aggregate_score, overlap_score, run_stage2, sequences_from_orders

Scheduler = Callable[[RoundContext, np.random.Generator], tuple]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def vehicle_repair_tables(ctx: RoundContext, bits: np.ndarray):
    """Per covered vehicle: (feasible flags, repaired mask) over all masks."""
    J = len(ctx.active)
    feas, reps = [], []
    zeros = np.zeros(J)
    rho = np.zeros(J)
    for n in ctx.vehicles:
        t = MaskTables.build(ctx.req_vector(n), ctx.dwell[n], zeros, 0.0, 0.0, rho, bits=bits)
        feas.append(np.isfinite(t.fit))
        reps.append(np.array(t.rep, dtype=np.int64))
    return np.array(feas), np.array(reps)


def schedule_from_masks(ctx: RoundContext, masks, bits: np.ndarray) -> Schedule:
    tasks = {}
    for n, s in zip(ctx.vehicles, masks):
        tasks[n] = tuple(j for j, b in zip(ctx.active, bits[int(s)]) if b)
    return Schedule(ctx.es_of, tasks)


def joint_fitness_masks(ctx: RoundContext, masks: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Round-level fitness of (P, N) mask populations."""
    h = ctx.cfg.hyper
    rho = np.array([ctx.rho[j] for j in ctx.active])
    b = bits[masks].astype(float)  # (P, N, J)
    psi = b.sum(axis=1)
    if h.psi_mode == "binary":
        psi = (psi > 0).astype(float)
    gap = np.abs(psi - ctx.chi)
    return b.sum(axis=(1, 2)) - (h.xi3 * gap.sum(axis=1) - gap @ rho)


def joint_fitness(ctx: RoundContext, schedule: Schedule) -> float:
    """Round-level fitness of a finished schedule (comparable across schedulers)."""
    J = len(ctx.active)
    bits = mask_bits(J)
    idx = {j: i for i, j in enumerate(ctx.active)}
    masks = np.array([[sum(1 << idx[j] for j in schedule.tasks.get(n, ())) for n in ctx.vehicles]])
    return float(joint_fitness_masks(ctx, masks, bits)[0])


def order_score(ctx: RoundContext, schedule: Schedule, m: int, order, scorer: UploadScorer) -> float:
    """Summed aggregate score of appending tasks in ``order`` at edge iteration 1."""
    xi7 = ctx.cfg.hyper.xi7
    vehicles = [n for n in schedule.vehicles_under(m) if schedule.tasks[n]]
    partial = {n: [] for n in vehicles}
    clock = {n: 0.0 for n in vehicles}
    total = 0.0
    for j in order:
        holders = [n for n in vehicles if j in schedule.tasks[n]]
        s_up = [scorer(n, j, clock[n] + ctx.train_time(n, j)) for n in holders]
        total += aggregate_score(overlap_score(partial, holders), s_up, xi7)
        for n in holders:
            partial[n].append(j)
            clock[n] += ctx.train_time(n, j)
    return total


class _OrderObjective:
    """Random-key decoding plus cached scoring for one edge server."""

    def __init__(self, ctx, schedule, m):
        self.ctx, self.schedule, self.m = ctx, schedule, m
        self.tasks = sorted({j for n in schedule.vehicles_under(m) for j in schedule.tasks[n]})
        self.scorer = UploadScorer(ctx, m)
        self.cache: dict = {}

    def decode(self, keys) -> tuple:
        return tuple(self.tasks[i] for i in np.argsort(keys, kind="stable"))

    def __call__(self, keys) -> float:
        order = self.decode(keys)
        s = self.cache.get(order)
        if s is None:
            s = order_score(self.ctx, self.schedule, self.m, order, self.scorer)
            self.cache[order] = s
        return s


def _orders_per_vehicle(schedule: Schedule, es_orders: dict) -> dict:
    return {n: es_orders.get(m, ()) for n, m in schedule.es_of.items()}


# ---------------------------------------------------------------------------
# HEART
# ---------------------------------------------------------------------------

def heart(ctx: RoundContext, rng: np.random.Generator):
    schedule = run_stage1(ctx, rng)
    return schedule, run_stage2(ctx, schedule)


# ---------------------------------------------------------------------------
# TSSO
# ---------------------------------------------------------------------------

def tsso_assign(ctx: RoundContext, rng: np.random.Generator) -> Schedule:
    J = len(ctx.active)
    bits = mask_bits(J)
    pow2 = 1 << np.arange(J)
    feas, reps = vehicle_repair_tables(ctx, bits)
    masks = []
    for i, n in enumerate(ctx.vehicles):
        s = 0
        for _ in range(ctx.cfg.hyper.tsso_attempts):
            s = int((rng.random(J) < 0.5) @ pow2)
            if feas[i][s]:
                break
        else:
            s = int(reps[i][s])
        masks.append(s)
    return schedule_from_masks(ctx, masks, bits)


def tsso(ctx: RoundContext, rng: np.random.Generator):
    schedule = tsso_assign(ctx, rng)
    keys = rng.random(len(ctx.active))
    order = tuple(ctx.active[i] for i in np.argsort(keys, kind="stable"))
    orders = {n: order for n in schedule.es_of}
    return schedule, sequences_from_orders(schedule, ctx.cfg, orders)


# ---------------------------------------------------------------------------
# TSPSO
# ---------------------------------------------------------------------------

def tspso_assign(ctx: RoundContext, rng: np.random.Generator, trace: list | None = None) -> Schedule:
    h = ctx.cfg.hyper
    J, N, P = len(ctx.active), len(ctx.vehicles), h.particles
    bits = mask_bits(J)
    if N == 0 or J == 0:
        return Schedule(ctx.es_of, {})
    pow2 = 1 << np.arange(J)
    _, reps = vehicle_repair_tables(ctx, bits)
    rows = np.arange(N)

    def repaired(raw):  # (P, N, J) bits -> repaired (P, N) masks
        return reps[rows[None, :], raw.astype(np.int64) @ pow2]

    masks = repaired(rng.random((P, N, J)) < 0.5)
    vel = rng.uniform(-1.0, 1.0, (P, N, J))
    f = joint_fitness_masks(ctx, masks, bits)
    lb, lf = masks.copy(), f.copy()
    gi = int(np.argmax(f))
    gb, gf = masks[gi].copy(), float(f[gi])
    w = (h.pi_max + h.pi_min) / 2.0
    for _ in range(h.iterations):
        x = bits[masks].astype(float)
        r1 = rng.random((P, N, J))
        r2 = rng.random((P, N, J))
        vel = np.clip(w * vel + h.xi4 * r1 * (bits[lb] - x) + h.xi5 * r2 * (bits[gb][None] - x),
                      -h.v_max, h.v_max)
        e1 = rng.random((P, N, J))
        masks = repaired(e1 <= 1.0 / (1.0 + np.exp(-vel)))
        f = joint_fitness_masks(ctx, masks, bits)
        better = f > lf
        lb[better] = masks[better]
        lf = np.where(better, f, lf)
        bi = int(np.argmax(f))
        if f[bi] > gf:
            gb, gf = masks[bi].copy(), float(f[bi])
        if trace is not None:
            trace.append(gf)
    return schedule_from_masks(ctx, gb, bits)


def pso_orders(ctx: RoundContext, schedule: Schedule, rng: np.random.Generator) -> dict:
    """Random-key PSO per edge server maximizing the summed aggregate score."""
    h = ctx.cfg.hyper
    out = {}
    w = (h.pi_max + h.pi_min) / 2.0
    for m in sorted(set(schedule.es_of.values())):
        obj = _OrderObjective(ctx, schedule, m)
        T = len(obj.tasks)
        if T <= 1:
            out[m] = tuple(obj.tasks)
            continue
        P = h.seq_population
        x = rng.random((P, T))
        v = rng.uniform(-0.5, 0.5, (P, T))
        f = np.array([obj(k) for k in x])
        lb, lf = x.copy(), f.copy()
        gi = int(np.argmax(f))
        gb, gf = x[gi].copy(), f[gi]
        for _ in range(h.seq_iterations):
            r1, r2 = rng.random((P, T)), rng.random((P, T))
            v = np.clip(w * v + h.xi4 * r1 * (lb - x) + h.xi5 * r2 * (gb - x), -1.0, 1.0)
            x = np.clip(x + v, 0.0, 1.0)
            f = np.array([obj(k) for k in x])
            better = f > lf
            lb[better], lf[better] = x[better], f[better]
            bi = int(np.argmax(f))
            if f[bi] > gf:
                gb, gf = x[bi].copy(), f[bi]
        out[m] = obj.decode(gb)
    return out


def tspso(ctx: RoundContext, rng: np.random.Generator):
    schedule = tspso_assign(ctx, rng)
    orders = pso_orders(ctx, schedule, rng)
    return schedule, sequences_from_orders(schedule, ctx.cfg, _orders_per_vehicle(schedule, orders))


# ---------------------------------------------------------------------------
# TSGA
# ---------------------------------------------------------------------------

def _tournament(f: np.ndarray, picks: np.ndarray) -> np.ndarray:
    """Winner index per row of ``picks`` (highest fitness, first on ties)."""
    return picks[np.arange(len(picks)), np.argmax(f[picks], axis=1)]


def tsga_assign(ctx: RoundContext, rng: np.random.Generator, trace: list | None = None) -> Schedule:
    h = ctx.cfg.hyper
    J, N, P = len(ctx.active), len(ctx.vehicles), h.particles
    bits = mask_bits(J)
    if N == 0 or J == 0:
        return Schedule(ctx.es_of, {})
    pow2 = 1 << np.arange(J)
    _, reps = vehicle_repair_tables(ctx, bits)
    rows = np.arange(N)
    G = N * J

    def repaired(genes):  # (P, G) -> (P, N) masks
        raw = genes.reshape(len(genes), N, J).astype(np.int64)
        return reps[rows[None, :], raw @ pow2]

    masks = repaired(rng.random((P, G)) < 0.5)
    f = joint_fitness_masks(ctx, masks, bits)
    for _ in range(h.iterations):
        elite = int(np.argmax(f))
        C = P - 1
        if C == 0:
            if trace is not None:
                trace.append(float(f[elite]))
            continue
        genes = bits[masks].reshape(P, G)
        pa = _tournament(f, rng.integers(0, P, size=(C, h.tournament_size)))
        pb = _tournament(f, rng.integers(0, P, size=(C, h.tournament_size)))
        do_cross = rng.random(C) < h.ga_crossover_rate
        cut = rng.integers(1, G, size=C) if G > 1 else np.ones(C, dtype=int)
        take_a = np.arange(G)[None, :] < cut[:, None]
        child = np.where(take_a | ~do_cross[:, None], genes[pa], genes[pb])
        flip = rng.random(C) < h.phi_max
        where = rng.integers(0, G, size=C)
        child[np.arange(C)[flip], where[flip]] ^= 1
        new = repaired(child)
        masks = np.vstack([masks[elite][None], new])
        f = np.concatenate([[f[elite]], joint_fitness_masks(ctx, new, bits)])
        if trace is not None:
            trace.append(float(f.max()))
    return schedule_from_masks(ctx, masks[int(np.argmax(f))], bits)


def ga_orders(ctx: RoundContext, schedule: Schedule, rng: np.random.Generator) -> dict:
    """Random-key GA per edge server maximizing the summed aggregate score."""
    h = ctx.cfg.hyper
    out = {}
    for m in sorted(set(schedule.es_of.values())):
        obj = _OrderObjective(ctx, schedule, m)
        T = len(obj.tasks)
        if T <= 1:
            out[m] = tuple(obj.tasks)
            continue
        P = h.seq_population
        x = rng.random((P, T))
        f = np.array([obj(k) for k in x])
        for _ in range(h.seq_iterations):
            elite = int(np.argmax(f))
            C = P - 1
            if C == 0:
                continue
            pa = _tournament(f, rng.integers(0, P, size=(C, h.tournament_size)))
            pb = _tournament(f, rng.integers(0, P, size=(C, h.tournament_size)))
            do_cross = rng.random(C) < h.ga_crossover_rate
            cut = rng.integers(1, T, size=C)
            take_a = np.arange(T)[None, :] < cut[:, None]
            child = np.where(take_a | ~do_cross[:, None], x[pa], x[pb])
            flip = rng.random(C) < h.phi_max
            where = rng.integers(0, T, size=C)
            fresh = rng.random(C)
            child[np.arange(C)[flip], where[flip]] = fresh[flip]
            x = np.vstack([x[elite][None], child])
            f = np.concatenate([[f[elite]], [obj(k) for k in child]])
        out[m] = obj.decode(x[int(np.argmax(f))])
    return out


def tsga(ctx: RoundContext, rng: np.random.Generator):
    schedule = tsga_assign(ctx, rng)
    orders = ga_orders(ctx, schedule, rng)
    return schedule, sequences_from_orders(schedule, ctx.cfg, _orders_per_vehicle(schedule, orders))


# ---------------------------------------------------------------------------
# TSGD
# ---------------------------------------------------------------------------

def tsgd_assign(ctx: RoundContext, steps: list | None = None) -> Schedule:
    """Per vehicle, keep adding the fitting task with the best
    ``rho_j / (1 + count_j)``; counts include the picks made so far."""
    counts = {j: 0 for j in ctx.active}
    tasks = {}
    for n in ctx.vehicles:
        chosen: list = []
        load = 0.0
        while True:
            best, best_j = -np.inf, None
            for j in ctx.active:
                if j in chosen or not load + ctx.req_time(n, j) < ctx.dwell[n]:
                    continue
                s = ctx.rho[j] / (1.0 + counts[j])
                if s > best:
                    best, best_j = s, j
            if best_j is None:
                break
            if steps is not None:
                steps.append((n, dict(counts), best_j))
            chosen.append(best_j)
            load += ctx.req_time(n, best_j)
            counts[best_j] += 1
        tasks[n] = tuple(chosen)
    return Schedule(ctx.es_of, tasks)


def tsgd(ctx: RoundContext, rng: np.random.Generator):
    schedule = tsgd_assign(ctx)
    return schedule, run_stage2(ctx, schedule)


SCHEDULER_FUNCS = {"heart": heart, "tsso": tsso, "tspso": tspso, "tsga": tsga, "tsgd": tsgd}


def get_scheduler(kind: str) -> Scheduler:
    try:
        return SCHEDULER_FUNCS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown scheduler '{kind}', expected one of {sorted(SCHEDULER_FUNCS)}") from None
