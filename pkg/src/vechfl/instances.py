"""Seeded instance generators.

``default_config`` builds the desk-scale suite: a 4 km wrap-around square
with two vertical and two horizontal roads, an edge server of 1 km radius at
each of the four intersections, and 4 (or 9) synthetic regression tasks with
iteration counts, cycle counts and clock frequencies drawn from the usual
ranges. ``micro_config`` builds the tiny instances the brute-force oracles
enumerate.
"""
from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from ._rng import stream
from .config import (EdgeServerSpec, HyperParams, Schedule, SimParams, SystemConfig, TaskSpec,
                     TrainingSequence, VehicleSpec)
from .mobility import ChannelParams, RoadNetwork

DATA_VOLUMES = (200, 400, 600, 800)
CYCLES_UNIT = 4e6  # cycles per sample = U[20, 30] * CYCLES_UNIT


def _place_vehicle(rng, road: RoadNetwork, es: EdgeServerSpec):
    """Uniform point on one of the two roads through ``es``, inside its disk."""
    off = float(rng.uniform(-0.95, 0.95)) * es.coverage_radius
    sign = 1.0 if rng.random() < 0.5 else -1.0
    x, y = es.position
    if rng.random() < 0.5:
        pos, heading = ((x + off) % road.width, y), (sign, 0.0)
    else:
        pos, heading = (x, (y + off) % road.height), (0.0, sign)
    return pos, heading


def base_tasks(rng, n_tasks: int = 4, n_es: int = 4) -> list[TaskSpec]:
    tasks = []
    for j in range(1, n_tasks + 1):
        size = float(rng.uniform(2e6, 20e6))
        tasks.append(TaskSpec(
            id=j,
            local_iters=int(rng.integers(4, 7)),
            edge_iters=int(rng.integers(8, 11)),
            cloud_quorum=int(rng.integers(2, min(3, n_es) + 1)) if n_es >= 2 else 1,
            model_size_v2e=size,
            model_size_e2c=size,
            cycles_per_sample=float(rng.uniform(20, 30)) * CYCLES_UNIT,
            setup_overhead=float(rng.uniform(0.02, 0.1)),
            batch_size=int(rng.integers(32, 65)),
            learning_rate=float(rng.uniform(0.001, 0.005)),
            blend_alpha=0.2,
            conv_threshold=0.01,
            model_dim=10,
            noise_scale=0.1,
            target_distance=0.1,
        ))
    return tasks


def clone_tasks(rng, base: list[TaskSpec], total: int) -> list[TaskSpec]:
    """Extend ``base`` to ``total`` tasks; clones vary only the parameters
    that change training time (cycles per sample and local iterations)."""
    out = list(base)
    for j in range(len(base) + 1, total + 1):
        src = base[(j - 1) % len(base)]
        out.append(dataclasses.replace(
            src, id=j,
            cycles_per_sample=src.cycles_per_sample * float(rng.uniform(0.6, 1.4)),
            local_iters=int(rng.integers(4, 7)),
        ))
    return out


def default_config(seed: int = 0, n_vehicles: int = 25, n_tasks: int = 4, n_es: int = 4,
                   data_volume: int = 400, hyper: Optional[HyperParams] = None,
                   sim: Optional[SimParams] = None, scheduler: str = "heart") -> SystemConfig:
    if n_tasks not in (4, 9) and n_tasks > 4:
        raise ValueError("n_tasks must be <= 4 or exactly 9")
    if not 1 <= n_es <= 4:
        raise ValueError("the grid has four intersections; n_es must be 1..4")
    rng = stream(seed, "instance")
    road = RoadNetwork()
    sites = road.intersections[:n_es]
    ess = [EdgeServerSpec(m, sites[m - 1], 1000.0, float(rng.uniform(20e6, 50e6))) for m in range(1, n_es + 1)]
    if n_tasks == 9:
        tasks = clone_tasks(rng, base_tasks(rng, 4, n_es), 9)
    else:
        tasks = base_tasks(rng, n_tasks, n_es)
    vehicles = []
    for n in range(1, n_vehicles + 1):
        home = ess[int(rng.integers(n_es))]
        pos, heading = _place_vehicle(rng, road, home)
        sizes = {}
        for t in tasks:
            if t.id <= 4:
                sizes[t.id] = data_volume
            else:
                sizes[t.id] = max(t.batch_size, int(data_volume * rng.uniform(0.5, 1.5)))
        vehicles.append(VehicleSpec(
            id=n, home_es=home.id,
            cpu_freq={t.id: float(rng.uniform(1e9, 1e10)) for t in tasks},
            dataset_size=sizes, initial_position=pos, speed=float(rng.uniform(8.0, 20.0)), heading=heading,
        ))
    return SystemConfig(
        tasks=tuple(tasks), vehicles=tuple(vehicles), edge_servers=tuple(ess),
        hyper=hyper or HyperParams(), seed=seed, road=road,
        channel=ChannelParams(bandwidth=2e6, snr_ref=1e9, pathloss_exponent=3.0),
        sim=sim or SimParams(stop_rule="target", max_rounds=300), scheduler=scheduler,
    )


# ---------------------------------------------------------------------------
# micro-instances for the brute-force oracles
# ---------------------------------------------------------------------------

def micro_config(seed: int, max_es: int = 3, max_vehicles: int = 6, max_tasks: int = 4, max_k: int = 3,
                 n_es: Optional[int] = None, n_vehicles: Optional[int] = None, n_tasks: Optional[int] = None,
                 hyper: Optional[HyperParams] = None) -> SystemConfig:
    """Tiny random instance with short, mixed-length tasks."""
    rng = stream(seed, "micro")
    road = RoadNetwork()
    M = n_es or int(rng.integers(1, max_es + 1))
    N = n_vehicles or int(rng.integers(max(M, 2), max_vehicles + 1))
    J = n_tasks or int(rng.integers(1, max_tasks + 1))
    sites = road.intersections
    ess = [EdgeServerSpec(m, sites[m - 1], 1000.0, float(rng.uniform(5e6, 50e6))) for m in range(1, M + 1)]
    tasks = []
    for j in range(1, J + 1):
        size = float(rng.uniform(1e6, 10e6))
        tasks.append(TaskSpec(
            id=j, local_iters=int(rng.integers(1, 4)), edge_iters=int(rng.integers(1, max_k + 1)),
            cloud_quorum=int(rng.integers(1, M + 1)), model_size_v2e=size,
            model_size_e2c=float(rng.uniform(1e6, 10e6)), cycles_per_sample=float(rng.uniform(20, 30)) * 1e6,
            setup_overhead=float(rng.uniform(0.01, 0.1)), batch_size=int(rng.integers(8, 33)),
            learning_rate=0.01, blend_alpha=float(rng.uniform(0, 1)), conv_threshold=0.01, model_dim=3,
        ))
    vehicles = []
    for n in range(1, N + 1):
        home = ess[(n - 1) % M] if n <= M else ess[int(rng.integers(M))]
        pos, heading = _place_vehicle(rng, road, home)
        vehicles.append(VehicleSpec(
            id=n, home_es=home.id, cpu_freq={t.id: float(rng.uniform(1e9, 1e10)) for t in tasks},
            dataset_size={t.id: 64 for t in tasks}, initial_position=pos,
            speed=float(rng.uniform(8.0, 20.0)), heading=heading,
        ))
    return SystemConfig(tasks=tuple(tasks), vehicles=tuple(vehicles), edge_servers=tuple(ess),
                        hyper=hyper or HyperParams(), seed=seed, road=road)


def random_schedule(cfg: SystemConfig, rng: np.random.Generator, es_of: Optional[dict] = None) -> Schedule:
    """Every vehicle gets a random non-empty subset of tasks."""
    es_of = es_of or {v.id: v.home_es for v in cfg.vehicles}
    ids = cfg.task_ids
    tasks = {}
    for n in sorted(es_of):
        bits = rng.random(len(ids)) < 0.5
        if not bits.any():
            bits[int(rng.integers(len(ids)))] = True
        tasks[n] = tuple(j for j, b in zip(ids, bits) if b)
    return Schedule(es_of, tasks)


def random_sequences(cfg: SystemConfig, schedule: Schedule, rng: np.random.Generator,
                     per_level: bool = True) -> dict:
    """Random task orders; independent per edge iteration if ``per_level``."""
    out: dict = {}
    base = {}
    for n, m in schedule.es_of.items():
        tasks = list(schedule.tasks[n])
        if not tasks:
            continue
        base[n] = [tasks[i] for i in rng.permutation(len(tasks))]
        k_max = max(cfg.task(j).edge_iters for j in tasks)
        for k in range(1, k_max + 1):
            order = [tasks[i] for i in rng.permutation(len(tasks))] if per_level else base[n]
            out.setdefault(k, {})[(m, n)] = tuple(j for j in order if cfg.task(j).edge_iters >= k)
    return {k: TrainingSequence(o) for k, o in sorted(out.items())}
