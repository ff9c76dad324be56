"""Task assignment by binary PSO with GA crossover and adaptive mutation.

Vehicles are optimized one at a time in ascending id order. Each vehicle's
swarm searches its J-bit assignment vector; the fitness rewards assigned
tasks and penalizes the gap between the running per-task counts and the
target ``chi``. The winning assignment updates the running counts before the
next vehicle is optimized.

Inside one vehicle's run every assignment is a J-bit mask, so feasibility,
repair and fitness are precomputed over all 2^J masks and looked up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import HyperParams, Schedule
from .context import RoundContext

NEG_INF = float("-inf")
MAX_TASKS = 20  # 2^J lookup tables


class InvalidCrossoverPoint(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar / vector operators
# ---------------------------------------------------------------------------

def fitness(assignment, counts, chi: float, xi3: float, rho, req_times, dwell: float,
            psi_mode: str = "count") -> float:
    """Assigned-task count minus the weighted balance penalty; ``-inf`` when
    the assignment does not fit the dwell window.

    ``counts`` are the assignments already made to earlier vehicles; the
    candidate's own bits are added on top.
    """
    x = np.asarray(assignment, dtype=float)
    req = np.asarray(req_times, dtype=float)
    if x.any() and not float(np.dot(x, req)) < dwell:
        return NEG_INF
    psi = np.asarray(counts, dtype=float) + x
    if psi_mode == "binary":
        psi = (psi > 0).astype(float)
    gap = np.abs(psi - chi)
    return float(x.sum() - (xi3 * gap.sum() - np.dot(np.asarray(rho, dtype=float), gap)))


def inertia(tau: int, hyper: HyperParams) -> float:
    if hyper.iterations == 0:
        return hyper.pi_max
    return hyper.pi_max - (hyper.pi_max - hyper.pi_min) * tau / hyper.iterations


def velocity_update(v, x, local_best, global_best, pi_tau: float, xi4: float, xi5: float,
                    v_max: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    new = pi_tau * v + xi4 * (np.asarray(local_best) - x) + xi5 * (np.asarray(global_best) - x)
    return np.clip(new, -v_max, v_max)


def assignment_prob(v):
    return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=float)))


def binarize(phi, e1):
    return (np.asarray(e1) <= np.asarray(phi)).astype(np.int8)


def crossover(a, b, r: int):
    """One-point crossover: children swap the tails after position ``r``."""
    a, b = list(a), list(b)
    J = len(a)
    if len(b) != J or not (1 < r < J):
        raise InvalidCrossoverPoint(f"need 1 < r < {J}, got r={r}")
    return a[:r] + b[r:], b[:r] + a[r:]


def mutation_rate(tau: float, phi_max: float) -> float:
    return phi_max / (1.0 + math.log(1.0 + tau))


def mutate(bit: int, e2: float, phi_tau: float) -> int:
    return 1 - bit if e2 < phi_tau else bit


def repair(assignment, req_times, dwell: float) -> list:
    """Drop the longest assigned task until the rest fits the dwell window.

    Ties drop the lowest task index first.
    """
    x = [int(b) for b in assignment]
    req = [float(t) for t in req_times]
    while any(x) and not sum(t for b, t in zip(x, req) if b) < dwell:
        idx = max((i for i, b in enumerate(x) if b), key=lambda i: (req[i], -i))
        x[idx] = 0
    return x


# ---------------------------------------------------------------------------
# mask tables
# ---------------------------------------------------------------------------

def mask_bits(J: int) -> np.ndarray:
    """(2^J, J) matrix; row ``s`` holds the bits of mask ``s`` (bit i = task i)."""
    s = np.arange(1 << J, dtype=np.int64)[:, None]
    return ((s >> np.arange(J)) & 1).astype(np.int8)


@dataclass
class MaskTables:
    bits: np.ndarray  # (2^J, J)
    fit: np.ndarray  # fitness per mask, -inf where infeasible
    rep: list  # repaired mask per mask

    @classmethod
    def build(cls, req: np.ndarray, dwell: float, counts: np.ndarray, chi: float, xi3: float,
              rho: np.ndarray, psi_mode: str = "count", bits: Optional[np.ndarray] = None):
        J = len(req)
        if J > MAX_TASKS:
            raise ValueError(f"at most {MAX_TASKS} tasks supported, got {J}")
        bits = mask_bits(J) if bits is None else bits
        bf = bits.astype(float)
        load = bf @ req
        feasible = (load < dwell) | (bits.sum(axis=1) == 0)
        psi = counts[None, :] + bf
        if psi_mode == "binary":
            psi = (psi > 0).astype(float)
        gap = np.abs(psi - chi)
        fit = bf.sum(axis=1) - (xi3 * gap.sum(axis=1) - gap @ rho)
        fit = np.where(feasible, fit, NEG_INF)
        # repair: drop the longest task (lowest index on ties) until feasible
        order = sorted(range(J), key=lambda i: (-req[i], i))
        rep = []
        for s in range(1 << J):
            t = s
            if not feasible[s]:
                for i in order:
                    if t >> i & 1:
                        t &= ~(1 << i)
                        if feasible[t]:
                            break
            rep.append(t)
        return cls(bits, fit, rep)


# ---------------------------------------------------------------------------
# one vehicle's swarm
# ---------------------------------------------------------------------------

@dataclass
class SwarmResult:
    mask: int
    fitness: float
    trace: list = field(default_factory=list)  # f_global after init and each iteration

    def assignment(self, J: int) -> np.ndarray:
        return (self.mask >> np.arange(J)) & 1


def optimize_vehicle(tables: MaskTables, hyper: HyperParams, rng: np.random.Generator,
                     ga: bool = True, adaptive: bool = True) -> SwarmResult:
    """Run a swarm over one vehicle's assignment masks.

    RNG draw order per run: initial bits (P, J), initial velocities (P, J);
    then per iteration: e1 (P, J), crossover points (P-1,) when random,
    e2 (P-1, 2, J). With ``ga=False`` the crossover/mutation phase is skipped;
    with ``adaptive=False`` inertia is held at (pi_max + pi_min) / 2 and the
    standard random cognitive/social coefficients are drawn as (P, J) arrays
    after e1.
    """
    bits = tables.bits
    fit = tables.fit
    rep = tables.rep
    P = hyper.particles
    J = bits.shape[1]
    pow2 = (1 << np.arange(J)).astype(np.int64)
    full = (1 << J) - 1

    init = (rng.random((P, J)) < 0.5).astype(np.int64) @ pow2
    masks = np.array([rep[s] for s in init], dtype=np.int64)
    vel = rng.uniform(-1.0, 1.0, (P, J))
    f = fit[masks]
    local_masks = masks.copy()
    local_f = f.copy()
    gi = int(np.argmax(f))
    g_mask, g_f = int(masks[gi]), float(f[gi])
    trace = [g_f]

    fixed_r = hyper.crossover == "fixed"
    r_fixed = hyper.crossover_point
    const_pi = (hyper.pi_max + hyper.pi_min) / 2.0
    for tau in range(1, hyper.iterations + 1):
        x = bits[masks].astype(float)
        lb = bits[local_masks]
        gb = bits[g_mask]
        pi_tau = inertia(tau - 1, hyper) if adaptive else const_pi
        e1 = rng.random((P, J))
        if adaptive:
            c1 = c2 = 1.0
        else:
            c1 = rng.random((P, J))
            c2 = rng.random((P, J))
        vel = np.clip(pi_tau * vel + hyper.xi4 * c1 * (lb - x) + hyper.xi5 * c2 * (gb - x),
                      -hyper.v_max, hyper.v_max)
        prob = 1.0 / (1.0 + np.exp(-vel))
        masks = (e1 <= prob).astype(np.int64) @ pow2
        f = fit[masks]
        better = f > local_f
        local_masks = np.where(better, masks, local_masks)
        local_f = np.where(better, f, local_f)
        bi = int(np.argmax(f))
        if f[bi] > g_f:
            g_mask, g_f = int(masks[bi]), float(f[bi])
        trace.append(g_f)

        if ga and P > 1:
            if fixed_r:
                rs = [r_fixed] * (P - 1)
            elif J >= 3:
                rs = rng.integers(2, J, size=P - 1).tolist()
            else:
                rs = [0] * (P - 1)
            e2 = rng.random((P - 1, 2, J))
            mut = ((e2 < mutation_rate(tau, hyper.phi_max)).astype(np.int64) @ pow2).tolist()
            cur = masks.tolist()
            for p in range(P - 1):
                a, b = cur[p], cur[p + 1]
                r = rs[p]
                if 1 < r < J:
                    low = (1 << r) - 1
                    hi = full & ~low
                    a, b = (a & low) | (b & hi), (b & low) | (a & hi)
                cur[p] = rep[a ^ mut[p][0]]
                cur[p + 1] = rep[b ^ mut[p][1]]
            masks = np.array(cur, dtype=np.int64)
    return SwarmResult(g_mask, g_f, trace)


# ---------------------------------------------------------------------------
# whole round
# ---------------------------------------------------------------------------

@dataclass
class Stage1Result:
    schedule: Schedule
    fitness: dict  # vehicle -> winning fitness
    traces: dict  # vehicle -> f_global series


def vehicle_tables(ctx: RoundContext, n: int, counts: np.ndarray, bits=None) -> MaskTables:
    h = ctx.cfg.hyper
    rho = np.array([ctx.rho[j] for j in ctx.active], dtype=float)
    return MaskTables.build(ctx.req_vector(n), ctx.dwell[n], counts, ctx.chi, h.xi3, rho, h.psi_mode, bits)


def sequential_assign(ctx: RoundContext, rng: np.random.Generator, ga: bool = True,
                      adaptive: bool = True) -> Stage1Result:
    """Optimize vehicles in ascending id order with shared running counts."""
    J = len(ctx.active)
    counts = np.zeros(J)
    bits = mask_bits(J)
    tasks, fits, traces = {}, {}, {}
    for n in ctx.vehicles:
        tables = vehicle_tables(ctx, n, counts, bits)
        res = optimize_vehicle(tables, ctx.cfg.hyper, rng, ga=ga, adaptive=adaptive)
        chosen = bits[res.mask]
        tasks[n] = tuple(j for j, b in zip(ctx.active, chosen) if b)
        fits[n] = res.fitness
        traces[n] = res.trace
        counts = counts + chosen
    return Stage1Result(Schedule(ctx.es_of, tasks), fits, traces)


def run_stage1(ctx: RoundContext, rng: np.random.Generator) -> Schedule:
    return sequential_assign(ctx, rng).schedule


def balance_bounds(N: int, J: int, xi1: int, xi2: int) -> tuple[float, float]:
    """Allowed per-task assignment count range ``[N/J - xi1, N/J + xi2]``."""
    return N / J - xi1, N / J + xi2


def balance_violations(counts: dict, N: int, xi1: int, xi2: int) -> dict:
    lo, hi = balance_bounds(N, len(counts), xi1, xi2)
    return {j: c for j, c in counts.items() if not (lo <= c <= hi)}
