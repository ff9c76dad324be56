"""Latency model for one global round and its closed-form evaluation.

A vehicle walks through a flat job list: for edge iteration k = 1, 2, ... it
trains the tasks of its level-k sequence in order (only tasks with K >= k).
When job (j, k) finishes computing at ``F`` it starts uploading at once. The
next job (j', k') needs the edge model of j' from iteration k'-1, available
at ``A(j', k'-1)``:

* case (i), ``A <= F``: the next job starts at ``F``; the upload overlaps
  training and costs nothing (non-task-training time 0);
* case (ii), ``A > F``: the vehicle uploads, then idles until ``A``; the
  non-task-training time is upload + idle.

The last job of a vehicle always pays its upload. ``A(j, k)`` is the time the
slowest vehicle's upload of (j, k) lands at the edge server, ``A(j, 0)`` the
round start. All arithmetic here is shared with the event simulator so the
two agree to rounding.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .config import EdgeServerSpec, Schedule, SystemConfig, TaskSpec, TrainingSequence, VehicleSpec

TIME_TOL = 1e-9

RateFn = Callable[[int, int, float], float]  # (vehicle, es, absolute time) -> bits/s


class ZeroRateError(ValueError):
    pass


class TaskNotAssigned(KeyError):
    pass


class EmptyAssignment(ValueError):
    pass


class WrongIterationCount(ValueError):
    pass


class InfeasibleSchedule(RuntimeError):
    pass


class ExecutionCase(enum.Enum):
    IMMEDIATE = "i"
    DELAYED = "ii"


# ---------------------------------------------------------------------------
# per-cell formulas
# ---------------------------------------------------------------------------

def local_round_time(task: TaskSpec, vehicle: VehicleSpec) -> float:
    """One local SGD round: batch compute plus CPU/GPU model migration."""
    f = vehicle.cpu_freq[task.id]
    return task.batch_size * task.cycles_per_sample / f + task.setup_overhead


def task_training_time(task: TaskSpec, vehicle: VehicleSpec) -> float:
    """All ``H`` local rounds of one edge iteration."""
    return task.local_iters * local_round_time(task, vehicle)


def required_time(task: TaskSpec, vehicle: VehicleSpec) -> float:
    """Compute time of a task over all its edge iterations (dwell check term)."""
    return task.edge_iters * task_training_time(task, vehicle)


def v2e_upload_time(task: TaskSpec, rate: float) -> float:
    if not rate > 0:
        raise ZeroRateError(f"upload rate must be > 0, got {rate}")
    return task.model_size_v2e / rate


def inactive_time(others_end: Iterable[float], own_prev_end: float) -> float:
    """Idle wait for the slowest peer: ``max(max(others) - own, 0)``."""
    others = list(others_end)
    if not others:
        return 0.0
    return max(max(others) - own_prev_end, 0.0)


def ntt_time(case: ExecutionCase, upload: float, inactive: float) -> float:
    if case is ExecutionCase.IMMEDIATE:
        return 0.0
    return upload + inactive


def end_time(sequence: Sequence[int], per_task_totals: Mapping[int, float], j: int) -> float:
    """Prefix sum of totals over tasks ranked at or before ``j``."""
    if j not in sequence:
        raise TaskNotAssigned(j)
    total = 0.0
    for jj in sequence:
        total += per_task_totals[jj]
        if jj == j:
            return total
    raise AssertionError("unreachable")


def es_edge_iteration_time(end_times: Iterable[float]) -> float:
    vals = list(end_times)
    if not vals:
        raise EmptyAssignment("no vehicle assigned to this task under the edge server")
    return max(vals)


def e2c_upload_time(task: TaskSpec, es: EdgeServerSpec) -> float:
    return task.model_size_e2c / es.e2c_rate


def es_global_round_time(task: TaskSpec, per_k: Sequence[float], es: EdgeServerSpec) -> float:
    """Edge-to-cloud upload plus the durations of all ``K`` edge iterations."""
    if len(per_k) != task.edge_iters:
        raise WrongIterationCount(f"expected {task.edge_iters} edge iterations, got {len(per_k)}")
    return e2c_upload_time(task, es) + sum(per_k)


def global_objective(per_task_per_es: Mapping[tuple[int, int], float]) -> float:
    """Max over tasks and quorum edge servers of the round completion time."""
    if not per_task_per_es:
        raise EmptyAssignment("objective needs at least one (task, es) value")
    return max(per_task_per_es.values())


def is_feasible(req_times: Iterable[float], dwell: float) -> bool:
    """Total required compute strictly inside the dwell window.

    The empty assignment is always feasible.
    """
    req = list(req_times)
    return not req or sum(req) < dwell


def quorum_of(arrivals: Mapping[int, float], quorum: int, full_sync: bool = False):
    """(completion time, quorum ES ids) for one task's edge-to-cloud arrivals.

    Simultaneous arrivals are ordered by ES id. ``quorum`` is capped at the
    number of participating edge servers.
    """
    order = sorted(arrivals.items(), key=lambda kv: (kv[1], kv[0]))
    q = len(order) if full_sync else min(quorum, len(order))
    chosen = order[:q]
    return chosen[-1][1], tuple(m for m, _ in chosen)


# ---------------------------------------------------------------------------
# closed-form round evaluation
# ---------------------------------------------------------------------------

@dataclass
class Cell:
    m: int
    n: int
    j: int
    k: int
    train: float
    start: float
    finish: float
    upload: float
    upload_done: float
    inactive: float = 0.0
    ntt: float = 0.0
    case: Optional[ExecutionCase] = None
    last: bool = False
    end: float = math.nan  # when the vehicle is free for its next job

    @property
    def total(self) -> float:
        return self.train + self.ntt


def resolve_cell(cell: Cell, next_ready: Optional[float]) -> None:
    """Fix case/idle/Ntt of ``cell`` given the next job's model arrival time
    (``None`` when the cell is the vehicle's last job of the round)."""
    if next_ready is None:
        settle_cell(cell, ExecutionCase.DELAYED, None, last=True)
    elif next_ready <= cell.finish:
        settle_cell(cell, ExecutionCase.IMMEDIATE, next_ready)
    else:
        settle_cell(cell, ExecutionCase.DELAYED, next_ready)


def settle_cell(cell: Cell, case: ExecutionCase, next_ready: Optional[float], last: bool = False) -> None:
    """Record the case, idle time, non-task-training time and end of a cell."""
    cell.case, cell.last = case, last
    if case is ExecutionCase.IMMEDIATE:
        cell.inactive, cell.end = 0.0, cell.finish
    elif next_ready is None:
        cell.inactive, cell.end = 0.0, cell.upload_done
    else:
        cell.inactive = inactive_time([next_ready], cell.upload_done)
        cell.end = max(cell.upload_done, next_ready)
    cell.ntt = ntt_time(case, cell.upload, cell.inactive)


def start_cell(cfg: SystemConfig, m: int, n: int, j: int, k: int, start: float, rate_fn: RateFn) -> Cell:
    task, veh = cfg.task(j), cfg.vehicle(n)
    train = task_training_time(task, veh)
    finish = start + train
    up = v2e_upload_time(task, rate_fn(n, m, finish))
    return Cell(m, n, j, k, train, start, finish, up, finish + up)


def level_jobs(cfg: SystemConfig, schedule: Schedule, sequences: Mapping[int, TrainingSequence],
               m: int, n: int, k: int) -> tuple[int, ...]:
    """Level-k job order of vehicle n, checked against its assignment."""
    want = sorted(j for j in schedule.tasks.get(n, ()) if cfg.task(j).edge_iters >= k)
    seq = sequences[k].sequence(m, n) if k in sequences else ()
    if sorted(seq) != want:
        raise ValueError(f"sequence {seq} of vehicle {n} at k={k} is not a permutation of {want}")
    return tuple(seq)


@dataclass
class RoundTiming:
    t0: float
    cells: dict  # (m, n, j, k) -> Cell
    ready: dict  # (m, j, k) -> absolute arrival of the last upload (k >= 1)
    edge_increments: dict  # (m, j) -> [T_{m,k} for k = 1..K]
    cloud_arrival: dict  # (j, m) -> absolute edge-model arrival at the cloud
    cloud_time: dict  # j -> absolute cloud aggregation time
    quorum: dict  # j -> tuple of ES ids
    round_end: float
    per_es_round: dict = field(default_factory=dict)  # (j, m) -> relative completion

    @property
    def makespan(self) -> float:
        return self.round_end - self.t0

    @property
    def objective(self) -> float:
        vals = {(j, m): self.per_es_round[(j, m)] for j, q in self.quorum.items() for m in q}
        return global_objective(vals) if vals else 0.0

    def ntt_by_vehicle(self) -> dict:
        out: dict = {}
        for c in self.cells.values():
            out[(c.m, c.n)] = out.get((c.m, c.n), 0.0) + c.ntt
        return out

    def to_csv(self) -> str:
        return timing_csv(self.cells.values())


CELL_COLUMNS = ("m", "n", "j", "k", "train_time", "upload_time", "inactive_time", "ntt_time",
                "total_time", "start", "finish", "upload_done", "end_time", "case")


def timing_csv(cells: Iterable[Cell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CELL_COLUMNS)
    for c in sorted(cells, key=lambda c: (c.m, c.n, c.j, c.k)):
        w.writerow([c.m, c.n, c.j, c.k] + [repr(float(x)) for x in
                   (c.train, c.upload, c.inactive, c.ntt, c.total, c.start, c.finish, c.upload_done, c.end)]
                   + [c.case.value if c.case else ""])
    return buf.getvalue()


def evaluate_round(cfg: SystemConfig, schedule: Schedule, sequences: Mapping[int, TrainingSequence],
                   rate_fn: RateFn, t0: float = 0.0, full_sync: bool = False) -> RoundTiming:
    """Closed-form timeline of one global round starting at absolute ``t0``.

    Per edge server, levels k = 1..K are processed in order. Within a level a
    job's start is its predecessor's end, so only arrivals from level k-1 are
    needed; the vehicle's last level-k job is settled once level k+1 starts.
    """
    cells: dict = {}
    ready: dict = {}
    for m in sorted({mm for mm in schedule.es_of.values()}):
        vehicles = [n for n in schedule.vehicles_under(m) if schedule.tasks[n]]
        if not vehicles:
            continue
        k_max = max(cfg.task(j).edge_iters for n in vehicles for j in schedule.tasks[n])
        cur = {n: t0 for n in vehicles}  # end of the previous (settled) job
        pending: dict = {}  # n -> last job of the previous level, not yet settled
        for k in range(1, k_max + 1):
            level: dict = {}
            for n in vehicles:
                jobs = level_jobs(cfg, schedule, sequences, m, n, k)
                if not jobs:
                    continue
                if n in pending:
                    prev = pending.pop(n)
                    resolve_cell(prev, ready.get((m, jobs[0], k - 1), t0))
                    cur[n] = prev.end
                row = []
                for i, j in enumerate(jobs):
                    if row:
                        resolve_cell(row[-1], ready.get((m, j, k - 1), t0))
                        cur[n] = row[-1].end
                    row.append(start_cell(cfg, m, n, j, k, cur[n], rate_fn))
                pending[n] = row[-1]
                level[n] = row
            for n, row in level.items():
                for c in row:
                    cells[(m, n, c.j, k)] = c
                    key = (m, c.j, k)
                    ready[key] = max(ready.get(key, -math.inf), c.upload_done)
        for n, c in pending.items():
            resolve_cell(c, None)

    edge_inc: dict = {}
    per_es_round: dict = {}
    arrivals: dict = {}
    for (m, j, k) in sorted(ready):
        if k != 1:
            continue
        task = cfg.task(j)
        prevs = [t0] + [ready[(m, j, kk)] for kk in range(1, task.edge_iters + 1)]
        inc = [prevs[i] - prevs[i - 1] for i in range(1, len(prevs))]
        edge_inc[(m, j)] = inc
        es = cfg.es(m)
        per_es_round[(j, m)] = es_global_round_time(task, inc, es)
        arrivals.setdefault(j, {})[m] = ready[(m, j, task.edge_iters)] + e2c_upload_time(task, es)
    cloud_time, quorum = {}, {}
    for j, arr in sorted(arrivals.items()):
        cloud_time[j], quorum[j] = quorum_of(arr, cfg.task(j).cloud_quorum, full_sync)
    cloud_arrival = {(j, m): t for j, arr in arrivals.items() for m, t in arr.items()}
    round_end = max(cloud_time.values()) if cloud_time else t0
    return RoundTiming(t0, cells, ready, edge_inc, cloud_arrival, cloud_time, quorum, round_end, per_es_round)
