"""Event-driven execution of global rounds and the outer convergence loop.

One round: every covered vehicle walks its job list, uploads after each job,
edge servers aggregate a task's iteration once all its vehicles' uploads have
landed and broadcast the new edge model at once (downlinks are free), the
last edge iteration is pushed to the cloud, and the cloud aggregates a task
as soon as its quorum of edge models is in. The round ends when every task
that had participants has been aggregated; unfinished straggler work is
cancelled and the next round starts from the fresh global models.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from ._rng import stream
from .config import Schedule, SystemConfig, TrainingSequence, config_hash, require_valid
from .context import RoundContext, associate_vehicles, build_context, calibrate_xi6
from .fl import ModelVector, SyntheticTask, check_convergence, edge_aggregate, global_aggregate, local_sgd
from .mobility import Mobility
from .timing import (Cell, ExecutionCase, InfeasibleSchedule, e2c_upload_time, evaluate_round, level_jobs,
                     required_time, settle_cell, task_training_time, v2e_upload_time)

log = logging.getLogger(__name__)

EVENT_KINDS = ("TrainDone", "UploadDone", "EdgeAggregated", "EdgeBroadcast", "CloudAggregated", "CloudBroadcast")
_KIND_RANK = {k: i for i, k in enumerate(EVENT_KINDS)}


class IterationCapExceeded(RuntimeError):
    def __init__(self, result):
        self.result = result
        super().__init__(f"stopped after {len(result.rounds)} rounds with tasks {result.unconverged} unconverged")


@dataclass(order=True)
class Event:
    time: float
    rank: int
    m: int
    n: int
    j: int
    k: int
    seq: int
    kind: str = field(compare=False)

    def record(self, g: int) -> dict:
        return {"t": self.time, "kind": self.kind, "m": self.m if self.m >= 0 else None,
                "n": self.n if self.n >= 0 else None, "j": self.j, "k": self.k if self.k >= 0 else None,
                "g": g}


# ---------------------------------------------------------------------------
# one round
# ---------------------------------------------------------------------------

@dataclass
class RoundReport:
    g: int
    t0: float
    round_end: float
    cells: dict  # (m, n, j, k) -> Cell
    cloud_time: dict  # j -> absolute time
    quorum: dict  # j -> ES ids whose edge models were aggregated
    edge_time: dict  # (m, j, k) -> absolute edge aggregation time
    events: list
    coverage_overruns: int = 0

    @property
    def makespan(self) -> float:
        return self.round_end - self.t0

    def ntt_by_vehicle(self) -> dict:
        out: dict = {}
        for c in self.cells.values():
            out[(c.m, c.n)] = out.get((c.m, c.n), 0.0) + c.ntt
        return out


@dataclass
class FLState:
    """Global models and straggler buffers that persist across rounds."""

    tasks: dict  # j -> SyntheticTask
    globals: dict  # j -> ModelVector
    buffered: dict = field(default_factory=dict)  # j -> list of late edge models

    @classmethod
    def fresh(cls, cfg: SystemConfig) -> "FLState":
        tasks = {t.id: SyntheticTask(t.id, t.model_dim, t.noise_scale, cfg.seed) for t in cfg.tasks}
        return cls(tasks, {t.id: ModelVector(np.zeros(t.model_dim), 1.0) for t in cfg.tasks})


def run_round(cfg: SystemConfig, schedule: Schedule, sequences: Mapping[int, TrainingSequence], g: int,
              models: Optional[FLState], rate_fn, t0: float = 0.0, mode: Optional[str] = None,
              dwell: Optional[Mapping[int, float]] = None, log_events: bool = True) -> RoundReport:
    """Simulate global round ``g`` from absolute time ``t0``.

    ``models`` (updated in place) may be ``None`` to simulate timing only.
    ``dwell`` enables the compute-only coverage check (raises
    ``InfeasibleSchedule``); realized upload/idle time beyond the dwell is
    only counted in ``coverage_overruns``.
    """
    mode = mode or cfg.sim.mode
    full_sync = mode == "full-sync"
    buffer_late = cfg.sim.straggler_mode == "buffer-next-round"

    jobs: dict = {}
    for n, m in schedule.es_of.items():
        if not schedule.tasks[n]:
            continue
        k_max = max(cfg.task(j).edge_iters for j in schedule.tasks[n])
        jobs[n] = [(j, k) for k in range(1, k_max + 1) for j in level_jobs(cfg, schedule, sequences, m, n, k)]
        if dwell is not None:
            need = sum(required_time(cfg.task(j), cfg.vehicle(n)) for j in schedule.tasks[n])
            if not need < dwell[n]:
                raise InfeasibleSchedule(f"vehicle {n} needs {need:.6g}s but stays {dwell[n]:.6g}s")

    holders: dict = {}  # (m, j) -> vehicles
    for n in jobs:
        for j in schedule.tasks[n]:
            holders.setdefault((schedule.es_of[n], j), []).append(n)
    participants: dict = {}  # j -> ES ids
    for (m, j) in holders:
        participants.setdefault(j, []).append(m)
    need_q = {j: (len(ms) if full_sync else min(cfg.task(j).cloud_quorum, len(ms)))
              for j, ms in participants.items()}

    heap: list = []
    counter = [0]

    def push(t, kind, m=-1, n=-1, j=-1, k=-1):
        counter[0] += 1
        heapq.heappush(heap, Event(t, _KIND_RANK[kind], m, n, j, k, counter[0], kind))

    pos = {n: 0 for n in jobs}  # index of the job in progress
    cells: dict = {}
    trained: set = set()  # cells whose compute finished
    waiting: dict = {}  # n -> [cell, uploaded?, needed edge model key, its broadcast time]
    broadcast: dict = {}  # (m, j, k) -> time
    arrived: dict = {}  # (m, j, k) -> vehicles whose upload landed
    edge_models: dict = {}  # (m, j, k) -> ModelVector
    edge_time: dict = {}
    cloud_in: dict = {}  # j -> ES ids in arrival order
    cloud_time: dict = {}
    quorum: dict = {}
    vehicle_models: dict = {}
    events: list = []
    overruns = 0

    def model_for(m, j, k):
        if k == 1:
            return models.globals[j]
        return edge_models[(m, j, k - 1)]

    def begin(n, t):
        m = schedule.es_of[n]
        j, k = jobs[n][pos[n]]
        train = task_training_time(cfg.task(j), cfg.vehicle(n))
        cells[(m, n, j, k)] = Cell(m, n, j, k, train, t, t + train, 0.0, 0.0)
        push(t + train, "TrainDone", m, n, j, k)

    def resume(n, t):
        cell, _, _, ready = waiting.pop(n)
        settle_cell(cell, ExecutionCase.DELAYED, ready)
        begin(n, t)

    for n in sorted(jobs):
        begin(n, t0)

    while heap:
        ev = heapq.heappop(heap)
        t = ev.time
        m, n, j, k = ev.m, ev.n, ev.j, ev.k
        if log_events:
            events.append(ev.record(g))
        if ev.kind == "TrainDone":
            cell = cells[(m, n, j, k)]
            trained.add((m, n, j, k))
            task = cfg.task(j)
            cell.upload = v2e_upload_time(task, rate_fn(n, m, t))
            cell.upload_done = t + cell.upload
            if models is not None:
                X, y = models.tasks[j].dataset(n, cfg.vehicle(n).dataset_size[j])
                rng = stream(cfg.seed, "sgd", g, j, n, k)
                vehicle_models[(m, n, j, k)] = local_sgd(model_for(m, j, k), X, y, task.local_iters,
                                                         task.learning_rate, task.batch_size, rng)
            if dwell is not None and cell.upload_done - t0 > dwell[n]:
                overruns += 1
            push(cell.upload_done, "UploadDone", m, n, j, k)
            pos[n] += 1
            if pos[n] >= len(jobs[n]):
                settle_cell(cell, ExecutionCase.DELAYED, None, last=True)
                continue
            nj, nk = jobs[n][pos[n]]
            need = (m, nj, nk - 1)
            if nk == 1 or need in broadcast:
                settle_cell(cell, ExecutionCase.IMMEDIATE, broadcast.get(need, t0))
                begin(n, t)
            else:
                waiting[n] = [cell, False, need, None]
        elif ev.kind == "UploadDone" and n >= 0:
            key = (m, j, k)
            arrived.setdefault(key, []).append(n)
            w = waiting.get(n)
            if w is not None and (w[0].j, w[0].k) == (j, k):
                w[1] = True
                if w[3] is not None:
                    resume(n, t)
            if len(arrived[key]) == len(holders[(m, j)]):
                push(t, "EdgeAggregated", m, -1, j, k)
        elif ev.kind == "UploadDone":  # an edge model reached the cloud
            if j in cloud_time:
                if buffer_late and models is not None:
                    models.buffered.setdefault(j, []).append(edge_models[(m, j, cfg.task(j).edge_iters)])
                continue
            cloud_in.setdefault(j, []).append(m)
            if len(cloud_in[j]) == need_q[j]:
                push(t, "CloudAggregated", -1, -1, j, -1)
        elif ev.kind == "EdgeAggregated":
            if models is not None:
                edge_models[(m, j, k)] = edge_aggregate(
                    [vehicle_models[(m, nn, j, k)] for nn in sorted(holders[(m, j)])])
            edge_time[(m, j, k)] = t
            push(t, "EdgeBroadcast", m, -1, j, k)
            if k == cfg.task(j).edge_iters:
                push(t + e2c_upload_time(cfg.task(j), cfg.es(m)), "UploadDone", m, -1, j, -1)
        elif ev.kind == "EdgeBroadcast":
            key = (m, j, k)
            broadcast[key] = t
            for nn in sorted(waiting):
                w = waiting[nn]
                if w[2] != key:
                    continue
                if t <= w[0].finish:
                    # arrived at the very instant compute finished: no wait
                    del waiting[nn]
                    settle_cell(w[0], ExecutionCase.IMMEDIATE, t)
                    begin(nn, t)
                    continue
                w[3] = t
                if w[1]:
                    resume(nn, t)
        elif ev.kind == "CloudAggregated":
            quorum[j] = tuple(cloud_in[j])
            cloud_time[j] = t
            if models is not None:
                K = cfg.task(j).edge_iters
                ems = [edge_models[(mm, j, K)] for mm in quorum[j]]
                extra = models.buffered.pop(j, []) if buffer_late else []
                models.globals[j] = global_aggregate(models.globals[j], ems + extra, cfg.task(j).blend_alpha,
                                                     quorum=None if extra else len(ems))
            push(t, "CloudBroadcast", -1, -1, j, -1)
        elif ev.kind == "CloudBroadcast":
            if len(cloud_time) == len(participants):
                break

    round_end = max(cloud_time.values()) if cloud_time else t0
    # drop jobs cancelled before finishing compute; a vehicle still waiting
    # when the round closed is charged its upload like a last job
    cells = {key: c for key, c in cells.items() if key in trained}
    for c in cells.values():
        if c.case is None:
            settle_cell(c, ExecutionCase.DELAYED, None, last=True)
    return RoundReport(g, t0, round_end, cells, cloud_time, quorum, edge_time, events, overruns)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def schedule_json(schedule: Schedule, sequences: Mapping[int, TrainingSequence]) -> dict:
    return {
        "assignment": {str(n): list(t) for n, t in schedule.tasks.items()},
        "es_of": {str(n): m for n, m in schedule.es_of.items()},
        "sequences": [{"m": m, "n": n, "k": k, "order": list(seq)}
                      for k, ts in sorted(sequences.items()) for (m, n), seq in ts.order.items()],
    }


def ntt_summary(report: RoundReport, schedule: Schedule) -> dict:
    """Per-ES mean and max of each vehicle's total non-task-training time."""
    per_vehicle = report.ntt_by_vehicle()
    out = {}
    for m in sorted(set(schedule.es_of.values())):
        vals = [v for (mm, _), v in per_vehicle.items() if mm == m]
        if vals:
            out[m] = {"antt": float(np.mean(vals)), "lntt": float(max(vals)), "vehicles": len(vals)}
    return out


@dataclass
class ExperimentResult:
    scheduler: str
    seed: int
    config_hash: str
    mode: str
    rounds: list  # per-round dict records
    completion: dict  # j -> absolute time the task stopped training
    target_time: dict  # j -> first cloud aggregation with distance <= target (None if never)
    delta_time: dict  # j -> first cloud aggregation meeting the consecutive-model threshold
    final_distance: dict
    far_from_optimum: list  # tasks stopped by the delta rule while far from the optimum
    unconverged: list
    events: list = field(default_factory=list)

    @property
    def makespan(self) -> float:
        return max(self.completion.values()) if len(self.completion) and not self.unconverged else math.inf

    @property
    def time_to_target(self) -> float:
        vals = list(self.target_time.values())
        return max(vals) if vals and all(v is not None for v in vals) else math.inf

    def to_json(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
        return {
            "scheduler": self.scheduler, "seed": self.seed, "config_hash": self.config_hash, "mode": self.mode,
            "makespan": num(self.makespan), "time_to_target": num(self.time_to_target),
            "completion": {str(j): t for j, t in sorted(self.completion.items())},
            "target_time": {str(j): t for j, t in sorted(self.target_time.items())},
            "delta_time": {str(j): t for j, t in sorted(self.delta_time.items())},
            "final_distance": {str(j): d for j, d in sorted(self.final_distance.items())},
            "far_from_optimum": self.far_from_optimum, "unconverged": self.unconverged,
            "rounds": self.rounds,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _stopped(rule: str, delta_ok: bool, target_ok: bool) -> bool:
    if rule == "delta":
        return delta_ok
    if rule == "target":
        return target_ok
    return delta_ok or target_ok


def run_until_convergence(cfg: SystemConfig, scheduler: Optional[str] = None, mode: Optional[str] = None,
                          log_events: bool = False, raise_on_cap: bool = True,
                          keep_schedules: bool = True, replay_sync: bool = False) -> ExperimentResult:
    """Repeat schedule -> round -> per-task stop check until every task has
    stopped or ``cfg.sim.max_rounds`` rounds have run.

    ``replay_sync`` also evaluates each round's schedule in closed form under
    both cloud modes from the same start time and stores the two makespans in
    the round record as ``replay``."""
    from .baselines import get_scheduler

    require_valid(cfg)
    kind = scheduler or cfg.scheduler
    sched_fn = get_scheduler(kind)
    mode = mode or cfg.sim.mode
    mob = Mobility(cfg.vehicles, cfg.road, cfg.seed)
    xi6 = calibrate_xi6(cfg, mob)
    fl_state = FLState.fresh(cfg)
    active = list(cfg.task_ids)
    t = 0.0
    assoc = None
    rounds, events = [], []
    completion, target_time, delta_time, far = {}, {j: None for j in active}, {j: None for j in active}, []
    for g in range(1, cfg.sim.max_rounds + 1):
        if not active:
            break
        assoc = associate_vehicles(cfg, mob, t, assoc)
        ctx = build_context(cfg, g, t, active, mob, xi6, assoc)
        schedule, sequences = sched_fn(ctx, stream(cfg.seed, "sched", kind, g))
        prev = dict(fl_state.globals)
        report = run_round(cfg, schedule, sequences, g, fl_state, ctx.rate_fn, t0=t, mode=mode,
                           dwell=ctx.dwell, log_events=log_events)
        if log_events:
            events.extend(report.events)
        rec = {
            "g": g, "t_start": t, "t_end": report.round_end if report.cloud_time else t + cfg.sim.idle_step,
            "makespan": report.makespan, "covered": len(assoc),
            "counts": {str(j): c for j, c in sorted(schedule.counts_per_task(ctx.active).items())},
            "cloud_time": {str(j): tt for j, tt in sorted(report.cloud_time.items())},
            "quorum": {str(j): list(q) for j, q in sorted(report.quorum.items())},
            "ntt": {str(m): v for m, v in ntt_summary(report, schedule).items()},
            "coverage_overruns": report.coverage_overruns,
            "distance": {}, "delta": {}, "stopped": [],
        }
        if replay_sync:
            rec["replay"] = {
                name: (evaluate_round(cfg, schedule, sequences, ctx.rate_fn, t0=t, full_sync=fs).makespan
                       if report.cloud_time else 0.0)
                for name, fs in (("hybrid", False), ("full-sync", True))}
        if keep_schedules:
            rec["schedule"] = schedule_json(schedule, sequences)
        for j in sorted(report.cloud_time):
            task = cfg.task(j)
            dist = fl_state.tasks[j].distance(fl_state.globals[j])
            step = float(np.linalg.norm(fl_state.globals[j].params - prev[j].params))
            delta_ok = check_convergence(fl_state.globals[j], prev[j], task.conv_threshold)
            target_ok = dist <= task.target_distance
            rec["distance"][str(j)] = dist
            rec["delta"][str(j)] = step
            tj = report.cloud_time[j]
            if target_ok and target_time[j] is None:
                target_time[j] = tj
            if delta_ok and delta_time[j] is None:
                delta_time[j] = tj
            if _stopped(cfg.sim.stop_rule, delta_ok, target_ok):
                completion[j] = tj
                rec["stopped"].append(j)
                if delta_ok and not target_ok:
                    far.append(j)
                active.remove(j)
        rounds.append(rec)
        log.debug("round %d [%s]: %.3fs, active=%s", g, kind, report.makespan, active)
        t = rec["t_end"]
    result = ExperimentResult(
        scheduler=kind, seed=cfg.seed, config_hash=config_hash(cfg), mode=mode, rounds=rounds,
        completion=completion, target_time=target_time, delta_time=delta_time,
        final_distance={j: fl_state.tasks[j].distance(fl_state.globals[j]) for j in cfg.task_ids},
        far_from_optimum=sorted(far), unconverged=sorted(active), events=events,
    )
    if active and raise_on_cap:
        raise IterationCapExceeded(result)
    return result
