"""Domain types and the validated instance configuration.

Everything here is immutable once built. ``SystemConfig`` round-trips through
a JSON document whose field names match the dataclass fields; unknown fields
are rejected so a typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .mobility import ChannelParams, RoadNetwork

SCHEDULERS = ("heart", "tsso", "tspso", "tsga", "tsgd")
SIM_MODES = ("hybrid", "full-sync")
STRAGGLER_MODES = ("discard", "buffer-next-round")
STOP_RULES = ("delta", "target", "either")
CROSSOVER_POLICIES = ("fixed", "random")
PSI_MODES = ("count", "binary")


# ---------------------------------------------------------------------------
# instance types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    id: int
    local_iters: int  # H
    edge_iters: int  # K
    cloud_quorum: int  # Q
    model_size_v2e: float  # bits
    model_size_e2c: float  # bits
    cycles_per_sample: float
    setup_overhead: float  # seconds per local round
    batch_size: int
    learning_rate: float
    blend_alpha: float
    conv_threshold: float
    weight_coeff: Optional[float] = None  # rho; None -> derived from training times
    # synthetic learning problem
    model_dim: int = 10
    noise_scale: float = 0.1
    target_distance: float = 0.1


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    home_es: int
    cpu_freq: Mapping[int, float]  # task id -> Hz
    dataset_size: Mapping[int, int]  # task id -> samples
    initial_position: tuple[float, float]
    speed: float
    heading: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "cpu_freq", {int(k): float(v) for k, v in dict(self.cpu_freq).items()})
        object.__setattr__(self, "dataset_size", {int(k): int(v) for k, v in dict(self.dataset_size).items()})
        object.__setattr__(self, "initial_position", tuple(float(c) for c in self.initial_position))
        object.__setattr__(self, "heading", tuple(float(c) for c in self.heading))

    def __hash__(self):
        return hash((self.id, self.home_es, tuple(sorted(self.cpu_freq.items())),
                     tuple(sorted(self.dataset_size.items())), self.initial_position, self.speed, self.heading))


@dataclass(frozen=True)
class EdgeServerSpec:
    id: int
    position: tuple[float, float]
    coverage_radius: float
    e2c_rate: float  # bits/s

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))


@dataclass(frozen=True)
class HyperParams:
    xi1: int = 2  # lower slack on per-task counts
    xi2: int = 2  # upper slack on per-task counts
    xi3: float = 4.0  # balance penalty weight
    xi4: float = 1.5  # cognitive pull
    xi5: float = 1.5  # social pull
    xi6: Optional[float] = None  # upload-score scale; None -> calibrated per instance
    xi7: float = 0.6  # overlap vs upload blend
    chi: Optional[int] = None  # target assignments per task; None -> round(N / J)
    pi_max: float = 0.9
    pi_min: float = 0.4
    particles: int = 30
    iterations: int = 100
    phi_max: float = 0.3
    crossover: str = "fixed"
    crossover_point: int = 2
    v_max: float = 4.0
    psi_mode: str = "count"
    # baselines
    tsso_attempts: int = 50
    tournament_size: int = 3
    ga_crossover_rate: float = 0.8
    seq_population: int = 20
    seq_iterations: int = 30


@dataclass(frozen=True)
class SimParams:
    mode: str = "hybrid"
    straggler_mode: str = "discard"
    stop_rule: str = "delta"
    max_rounds: int = 200
    idle_step: float = 1.0  # clock advance for a round with no trainable vehicle


@dataclass(frozen=True)
class SystemConfig:
    tasks: tuple[TaskSpec, ...]
    vehicles: tuple[VehicleSpec, ...]
    edge_servers: tuple[EdgeServerSpec, ...]
    hyper: HyperParams = field(default_factory=HyperParams)
    seed: int = 0
    road: RoadNetwork = field(default_factory=RoadNetwork)
    channel: ChannelParams = field(default_factory=ChannelParams)
    sim: SimParams = field(default_factory=SimParams)
    scheduler: str = "heart"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "edge_servers", tuple(self.edge_servers))

    # lookups
    def task(self, j: int) -> TaskSpec:
        return self._index("tasks")[j]

    def vehicle(self, n: int) -> VehicleSpec:
        return self._index("vehicles")[n]

    def es(self, m: int) -> EdgeServerSpec:
        return self._index("edge_servers")[m]

    def _index(self, name):
        cache = self.__dict__.setdefault("_idx", {})
        if name not in cache:
            cache[name] = {x.id: x for x in getattr(self, name)}
        return cache[name]

    @property
    def task_ids(self) -> list[int]:
        return [t.id for t in self.tasks]

    def replace(self, **kw) -> "SystemConfig":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# schedule and sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Binary assignment for one global iteration.

    ``es_of`` maps every covered vehicle to its edge server; ``tasks`` maps a
    vehicle to the ascending tuple of task ids it trains this round.
    """

    es_of: Mapping[int, int]
    tasks: Mapping[int, tuple[int, ...]]

    def __post_init__(self):
        object.__setattr__(self, "es_of", dict(sorted(self.es_of.items())))
        t = {n: tuple(sorted(int(j) for j in self.tasks.get(n, ()))) for n in self.es_of}
        extra = set(self.tasks) - set(self.es_of)
        if extra:
            raise ValueError(f"assigned vehicles without an edge server: {sorted(extra)}")
        object.__setattr__(self, "tasks", t)

    def x(self, m: int, n: int, j: int) -> int:
        return int(self.es_of.get(n) == m and j in self.tasks.get(n, ()))

    def entries(self, task_ids: Iterable[int]) -> dict[tuple[int, int, int], int]:
        ids = list(task_ids)
        return {(m, n, j): int(j in self.tasks[n]) for n, m in self.es_of.items() for j in ids}

    def counts_per_task(self, task_ids: Iterable[int]) -> dict[int, int]:
        counts = {j: 0 for j in task_ids}
        for assigned in self.tasks.values():
            for j in assigned:
                counts[j] = counts.get(j, 0) + 1
        return counts

    def counts_per_vehicle(self) -> dict[int, int]:
        return {n: len(a) for n, a in self.tasks.items()}

    def vehicles_under(self, m: int) -> list[int]:
        return [n for n, mm in self.es_of.items() if mm == m]

    def assigned(self, m: int, j: int) -> list[int]:
        return [n for n in self.vehicles_under(m) if j in self.tasks[n]]

    def to_json(self) -> dict:
        return {
            "es_of": {str(n): m for n, m in self.es_of.items()},
            "tasks": {str(n): list(a) for n, a in self.tasks.items()},
        }


@dataclass(frozen=True)
class TrainingSequence:
    """Ordered task list per (m, n) for one edge iteration."""

    order: Mapping[tuple[int, int], tuple[int, ...]]

    def __post_init__(self):
        o = {}
        for key, seq in sorted(self.order.items()):
            seq = tuple(int(j) for j in seq)
            if len(set(seq)) != len(seq):
                raise ValueError(f"sequence {seq} for {key} repeats a task")
            o[(int(key[0]), int(key[1]))] = seq
        object.__setattr__(self, "order", o)

    def sequence(self, m: int, n: int) -> tuple[int, ...]:
        return self.order.get((m, n), ())

    def position(self, m: int, n: int, j: int) -> int:
        """1-based rank of task ``j`` in the sequence of (m, n)."""
        seq = self.sequence(m, n)
        if j not in seq:
            raise KeyError(f"task {j} not in sequence of vehicle {n}")
        return seq.index(j) + 1

    def positions(self, m: int, n: int) -> dict[int, int]:
        return {j: i + 1 for i, j in enumerate(self.sequence(m, n))}

    @staticmethod
    def from_positions(pos: Mapping[int, int]) -> tuple[int, ...]:
        """Invert a task -> rank map back to the ordered list."""
        ranks = sorted(pos.values())
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError("ranks must be a bijection onto 1..len")
        out = [0] * len(ranks)
        for j, r in pos.items():
            out[r - 1] = j
        return tuple(out)


Sequences = dict  # k (1-based) -> TrainingSequence


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


class ConfigError(ValueError):
    def __init__(self, violations: Iterable[Violation]):
        self.violations = tuple(violations)
        super().__init__("; ".join(f"{v.code}: {v.message}" for v in self.violations))


def _finite_pos(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0


def validate_config(cfg: SystemConfig) -> ValidationResult:
    """Collect every invariant violation of ``cfg`` (never stops at the first)."""
    out: list[Violation] = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    if not cfg.tasks:
        bad("EMPTY_TASKS", "at least one task is required")
    if not cfg.vehicles:
        bad("EMPTY_VEHICLES", "at least one vehicle is required")
    if not cfg.edge_servers:
        bad("EMPTY_EDGE_SERVERS", "at least one edge server is required")
    for name in ("tasks", "vehicles", "edge_servers"):
        ids = [x.id for x in getattr(cfg, name)]
        if len(set(ids)) != len(ids):
            bad("DUPLICATE_ID", f"{name} ids are not unique")
        if any(not isinstance(i, int) or isinstance(i, bool) or i < 0 for i in ids):
            bad("BAD_ID", f"{name} ids must be non-negative integers")
    M = len(cfg.edge_servers)
    es_ids = {e.id for e in cfg.edge_servers}
    task_ids = {t.id for t in cfg.tasks}

    for t in cfg.tasks:
        w = f"task {t.id}"
        if t.local_iters < 1:
            bad("LOCAL_ITERS_BELOW_ONE", f"{w}: local_iters={t.local_iters}")
        if t.edge_iters < 1:
            bad("EDGE_ITERS_BELOW_ONE", f"{w}: edge_iters={t.edge_iters}")
        if t.cloud_quorum < 1:
            bad("QUORUM_BELOW_ONE", f"{w}: cloud_quorum={t.cloud_quorum}")
        elif t.cloud_quorum > M:
            bad("QUORUM_EXCEEDS_M", f"{w}: cloud_quorum={t.cloud_quorum} > M={M}")
        for fname in ("model_size_v2e", "model_size_e2c", "cycles_per_sample", "setup_overhead",
                      "learning_rate", "conv_threshold", "target_distance"):
            if not _finite_pos(getattr(t, fname)):
                bad("NONPOSITIVE_VALUE", f"{w}: {fname} must be > 0")
        if t.batch_size < 1:
            bad("NONPOSITIVE_VALUE", f"{w}: batch_size must be >= 1")
        if t.model_dim < 1:
            bad("NONPOSITIVE_VALUE", f"{w}: model_dim must be >= 1")
        if not (t.noise_scale >= 0 and math.isfinite(t.noise_scale)):
            bad("NEGATIVE_VALUE", f"{w}: noise_scale must be >= 0")
        if not (0.0 <= t.blend_alpha <= 1.0):
            bad("ALPHA_OUT_OF_RANGE", f"{w}: blend_alpha={t.blend_alpha} not in [0, 1]")
        if t.weight_coeff is not None and not (t.weight_coeff >= 0 and math.isfinite(t.weight_coeff)):
            bad("NEGATIVE_WEIGHT", f"{w}: weight_coeff must be >= 0")

    for v in cfg.vehicles:
        w = f"vehicle {v.id}"
        if v.home_es not in es_ids:
            bad("UNKNOWN_ES", f"{w}: home_es={v.home_es} does not exist")
        for j in task_ids:
            f = v.cpu_freq.get(j)
            if f is None:
                bad("MISSING_TASK_PARAM", f"{w}: no cpu_freq for task {j}")
            elif not _finite_pos(f):
                bad("NONPOSITIVE_VALUE", f"{w}: cpu_freq for task {j} must be > 0")
            d = v.dataset_size.get(j)
            if d is None:
                bad("MISSING_TASK_PARAM", f"{w}: no dataset_size for task {j}")
            elif j in task_ids and d < cfg.task(j).batch_size:
                bad("DATASET_BELOW_BATCH", f"{w}: dataset_size {d} < batch size for task {j}")
        for j in set(v.cpu_freq) | set(v.dataset_size):
            if j not in task_ids:
                bad("UNKNOWN_TASK", f"{w}: parameters given for unknown task {j}")
        if not (v.speed >= 0 and math.isfinite(v.speed)):
            bad("NEGATIVE_VALUE", f"{w}: speed must be >= 0")
        if not cfg.road.on_road(v.initial_position):
            bad("OFF_ROAD", f"{w}: initial position {v.initial_position} is not on a road")
        elif not cfg.road.heading_ok(v.initial_position, v.heading):
            bad("BAD_HEADING", f"{w}: heading {v.heading} does not follow a road")

    for e in cfg.edge_servers:
        if not _finite_pos(e.coverage_radius):
            bad("NONPOSITIVE_VALUE", f"es {e.id}: coverage_radius must be > 0")
        if not _finite_pos(e.e2c_rate):
            bad("NONPOSITIVE_VALUE", f"es {e.id}: e2c_rate must be > 0")

    h = cfg.hyper
    for fname in ("xi1", "xi2"):
        x = getattr(h, fname)
        if not isinstance(x, int) or isinstance(x, bool) or x < 1:
            bad("XI_NOT_POSITIVE_INT", f"{fname}={x} must be a positive integer")
    for fname in ("xi3", "xi4", "xi5", "v_max", "pi_max", "pi_min"):
        x = getattr(h, fname)
        if not (x >= 0 and math.isfinite(x)):
            bad("HYPER_OUT_OF_RANGE", f"{fname}={x} must be finite and >= 0")
    if h.xi6 is not None and not _finite_pos(h.xi6):
        bad("HYPER_OUT_OF_RANGE", f"xi6={h.xi6} must be > 0")
    if not (0.0 <= h.xi7 <= 1.0):
        bad("HYPER_OUT_OF_RANGE", f"xi7={h.xi7} not in [0, 1]")
    if h.chi is not None and h.chi < 0:
        bad("HYPER_OUT_OF_RANGE", f"chi={h.chi} must be >= 0")
    if h.pi_min > h.pi_max:
        bad("HYPER_OUT_OF_RANGE", "pi_min must not exceed pi_max")
    if h.particles < 1:
        bad("HYPER_OUT_OF_RANGE", "particles must be >= 1")
    if h.iterations < 0:
        bad("HYPER_OUT_OF_RANGE", "iterations must be >= 0")
    if not (0.0 <= h.phi_max <= 1.0):
        bad("HYPER_OUT_OF_RANGE", f"phi_max={h.phi_max} not in [0, 1]")
    if h.crossover not in CROSSOVER_POLICIES:
        bad("HYPER_OUT_OF_RANGE", f"crossover must be one of {CROSSOVER_POLICIES}")
    if h.psi_mode not in PSI_MODES:
        bad("HYPER_OUT_OF_RANGE", f"psi_mode must be one of {PSI_MODES}")
    for fname in ("tsso_attempts", "tournament_size", "seq_population"):
        if getattr(h, fname) < 1:
            bad("HYPER_OUT_OF_RANGE", f"{fname} must be >= 1")
    if h.seq_iterations < 0:
        bad("HYPER_OUT_OF_RANGE", "seq_iterations must be >= 0")
    if not (0.0 <= h.ga_crossover_rate <= 1.0):
        bad("HYPER_OUT_OF_RANGE", "ga_crossover_rate not in [0, 1]")

    s = cfg.sim
    if s.mode not in SIM_MODES:
        bad("BAD_MODE", f"sim.mode must be one of {SIM_MODES}")
    if s.straggler_mode not in STRAGGLER_MODES:
        bad("BAD_MODE", f"sim.straggler_mode must be one of {STRAGGLER_MODES}")
    if s.stop_rule not in STOP_RULES:
        bad("BAD_MODE", f"sim.stop_rule must be one of {STOP_RULES}")
    if s.max_rounds < 1:
        bad("NONPOSITIVE_VALUE", "sim.max_rounds must be >= 1")
    if not _finite_pos(s.idle_step):
        bad("NONPOSITIVE_VALUE", "sim.idle_step must be > 0")
    if cfg.scheduler not in SCHEDULERS:
        bad("UNKNOWN_SCHEDULER", f"scheduler must be one of {SCHEDULERS}")

    ch = cfg.channel
    for fname in ("bandwidth", "snr_ref"):
        if not _finite_pos(getattr(ch, fname)):
            bad("NONPOSITIVE_VALUE", f"channel.{fname} must be > 0")
    if not (2.0 <= ch.pathloss_exponent <= 4.0):
        bad("HYPER_OUT_OF_RANGE", "channel.pathloss_exponent not in [2, 4]")
    r = cfg.road
    if not (_finite_pos(r.width) and _finite_pos(r.height)):
        bad("NONPOSITIVE_VALUE", "road width/height must be > 0")
    if not r.xs or not r.ys:
        bad("EMPTY_ROADS", "road network needs at least one vertical and one horizontal road")
    if any(not (0 <= x < r.width) for x in r.xs) or any(not (0 <= y < r.height) for y in r.ys):
        bad("ROAD_OUTSIDE_AREA", "roads must lie inside the area")
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed < 2 ** 64):
        bad("BAD_SEED", "seed must be an unsigned 64-bit integer")
    return ValidationResult(tuple(out))


def require_valid(cfg: SystemConfig) -> SystemConfig:
    res = validate_config(cfg)
    if not res.ok:
        raise ConfigError(res.violations)
    return cfg


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: SystemConfig) -> dict:
    return _plain(cfg)


def dumps_config(cfg: SystemConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2)


def config_hash(cfg: SystemConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, doc, where: str, errors: list):
    if not isinstance(doc, Mapping):
        errors.append(Violation("BAD_TYPE", f"{where}: expected an object"))
        return None
    names = {f.name for f in dataclasses.fields(cls)}
    for k in doc:
        if k not in names:
            errors.append(Violation("UNKNOWN_FIELD", f"{where}: unknown field '{k}'"))
    required = [f.name for f in dataclasses.fields(cls)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    for k in required:
        if k not in doc:
            errors.append(Violation("MISSING_FIELD", f"{where}: missing field '{k}'"))
    kw = {k: v for k, v in doc.items() if k in names}
    return kw


def _obj(cls, doc, where, errors):
    before = len(errors)
    kw = _build(cls, doc, where, errors)
    if kw is None or any(e.code == "MISSING_FIELD" for e in errors[before:]):
        return None
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        errors.append(Violation("BAD_TYPE", f"{where}: {exc}"))
        return None


def config_from_dict(doc: Mapping[str, Any]) -> SystemConfig:
    """Strict parse; raises ``ConfigError`` listing every problem found."""
    errors: list[Violation] = []
    kw = _build(SystemConfig, doc, "config", errors)
    if kw is None:
        raise ConfigError(errors)
    tasks = [_obj(TaskSpec, t, f"tasks[{i}]", errors) for i, t in enumerate(kw.get("tasks", []))]
    vehicles = [_obj(VehicleSpec, v, f"vehicles[{i}]", errors) for i, v in enumerate(kw.get("vehicles", []))]
    ess = [_obj(EdgeServerSpec, e, f"edge_servers[{i}]", errors) for i, e in enumerate(kw.get("edge_servers", []))]
    extra = {}
    for name, cls in (("hyper", HyperParams), ("road", RoadNetwork), ("channel", ChannelParams), ("sim", SimParams)):
        if name in kw:
            extra[name] = _obj(cls, kw[name], name, errors)
    for name in ("seed", "scheduler"):
        if name in kw:
            extra[name] = kw[name]
    if errors:
        raise ConfigError(errors)
    return SystemConfig(tasks=tuple(tasks), vehicles=tuple(vehicles), edge_servers=tuple(ess), **extra)


def loads_config(text: str) -> SystemConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([Violation("BAD_JSON", str(exc))]) from exc
    return config_from_dict(doc)


def load_config(path) -> SystemConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read())
