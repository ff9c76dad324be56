"""Per-round scheduling inputs shared by every scheduler.

A ``RoundContext`` freezes what a scheduler may know at the start of global
iteration g: which vehicles each edge server covers, how long they will stay,
the per-task compute each vehicle needs, and how fast it could upload at any
future instant (rates follow the deterministic trajectories).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .config import SystemConfig
from .mobility import Mobility, associate, v2e_rate
from .timing import RateFn, required_time, task_training_time


@dataclass
class RoundContext:
    cfg: SystemConfig
    g: int
    t0: float
    active: tuple[int, ...]  # task ids still training, ascending
    es_of: dict  # covered vehicle -> ES id
    dwell: dict  # vehicle -> seconds of coverage left from t0
    rate_fn: RateFn
    rho: dict  # task -> weight coefficient
    chi: int
    xi6: float

    @property
    def vehicles(self) -> list[int]:
        return sorted(self.es_of)

    def req_time(self, n: int, j: int) -> float:
        return required_time(self.cfg.task(j), self.cfg.vehicle(n))

    def req_vector(self, n: int) -> np.ndarray:
        return np.array([self.req_time(n, j) for j in self.active], dtype=float)

    def train_time(self, n: int, j: int) -> float:
        return task_training_time(self.cfg.task(j), self.cfg.vehicle(n))

    def feasible(self, n: int, tasks: Sequence[int]) -> bool:
        if not tasks:
            return True
        return sum(self.req_time(n, j) for j in tasks) < self.dwell[n]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_chi(cfg: SystemConfig, n_active: int) -> int:
    if cfg.hyper.chi is not None:
        return int(cfg.hyper.chi)
    return round_half_up(len(cfg.vehicles) / max(n_active, 1))


def default_rho(cfg: SystemConfig, active: Sequence[int]) -> dict:
    """Explicit weights win; others are mean training time relative to the
    mean over active tasks, clipped to [0.5, 2]."""
    est = {j: float(np.mean([required_time(cfg.task(j), v) for v in cfg.vehicles])) for j in active}
    mean = float(np.mean(list(est.values()))) if est else 1.0
    out = {}
    for j in active:
        w = cfg.task(j).weight_coeff
        out[j] = float(w) if w is not None else float(np.clip(est[j] / mean, 0.5, 2.0))
    return out


def mobility_rate_fn(cfg: SystemConfig, mob: Mobility) -> RateFn:
    def rate(n: int, m: int, t: float) -> float:
        return v2e_rate(mob.position(n, t), cfg.es(m), cfg.channel)
    return rate


def calibrate_xi6(cfg: SystemConfig, mob: Mobility) -> float:
    """Scale so a typical task's summed upload score matches a typical
    overlap score.

    With ``c = chi / M`` vehicles per task per edge server, a task collects
    about ``C(c, 2)`` overlapping pairs (at least 1) and ``c`` upload scores of
    mean ``xi6 / t_up``; equating the two at round-start positions gives xi6.
    """
    if cfg.hyper.xi6 is not None:
        return float(cfg.hyper.xi6)
    inv = []
    for v in cfg.vehicles:
        pos = mob.position(v.id, 0.0)
        m = associate(pos, cfg.edge_servers)
        if m is None:
            continue
        rate = v2e_rate(pos, cfg.es(m), cfg.channel)
        inv.extend(rate / t.model_size_v2e for t in cfg.tasks)
    if not inv:
        return 1.0
    c = max(default_chi(cfg, len(cfg.tasks)) / len(cfg.edge_servers), 1.0)
    return max(c * (c - 1) / 2.0, 1.0) / (c * float(np.mean(inv)))


def associate_vehicles(cfg: SystemConfig, mob: Mobility, t0: float,
                       previous: Optional[Mapping[int, Optional[int]]] = None) -> dict:
    """Vehicle -> ES at ``t0``; a vehicle keeps its previous ES (its home ES
    in round 1) while still covered, else joins the nearest covering one."""
    out = {}
    for v in cfg.vehicles:
        pos = mob.position(v.id, t0)
        prev = v.home_es if previous is None else previous.get(v.id)
        if prev is not None:
            es = cfg.es(prev)
            if math.hypot(pos[0] - es.position[0], pos[1] - es.position[1]) <= es.coverage_radius:
                out[v.id] = prev
                continue
        m = associate(pos, cfg.edge_servers)
        if m is not None:
            out[v.id] = m
    return out


def build_context(cfg: SystemConfig, g: int, t0: float, active: Sequence[int], mob: Mobility,
                  xi6: float, es_of: Mapping[int, int], rho: Optional[dict] = None) -> RoundContext:
    dwell = {n: mob.dwell(n, cfg.es(m), t0) for n, m in es_of.items()}
    active = tuple(sorted(active))
    return RoundContext(
        cfg=cfg, g=g, t0=t0, active=active, es_of=dict(sorted(es_of.items())), dwell=dwell,
        rate_fn=mobility_rate_fn(cfg, mob), rho=rho if rho is not None else default_rho(cfg, active),
        chi=default_chi(cfg, len(active)), xi6=xi6,
    )
