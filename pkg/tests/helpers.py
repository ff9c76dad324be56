"""Small builders shared by the test modules."""
import dataclasses

from vechfl.config import EdgeServerSpec, HyperParams, SystemConfig, TaskSpec, VehicleSpec


def make_task(j=1, **kw):
    base = dict(id=j, local_iters=1, edge_iters=1, cloud_quorum=1, model_size_v2e=1e6, model_size_e2c=1e6,
                cycles_per_sample=20.0, setup_overhead=0.0, batch_size=10, learning_rate=0.01,
                blend_alpha=0.5, conv_threshold=0.01)
    base.update(kw)
    return TaskSpec(**base)


def make_vehicle(n=1, tasks=(1,), f=1e9, size=100, home_es=1, pos=(1000.0, 1000.0), speed=10.0,
                 heading=(1.0, 0.0)):
    return VehicleSpec(id=n, home_es=home_es, cpu_freq={j: f for j in tasks},
                       dataset_size={j: size for j in tasks}, initial_position=pos, speed=speed, heading=heading)


def make_es(m=1, pos=(1000.0, 1000.0), radius=1000.0, e2c=1e6):
    return EdgeServerSpec(id=m, position=pos, coverage_radius=radius, e2c_rate=e2c)


def small_config(**kw):
    tasks = kw.pop("tasks", (make_task(1), make_task(2)))
    ids = [t.id for t in tasks]
    vehicles = kw.pop("vehicles", (make_vehicle(1, ids), make_vehicle(2, ids, pos=(1200.0, 1000.0))))
    ess = kw.pop("edge_servers", (make_es(1),))
    return SystemConfig(tasks=tuple(tasks), vehicles=tuple(vehicles), edge_servers=tuple(ess),
                        hyper=kw.pop("hyper", HyperParams()), **kw)


def with_dwell(ctx, value):
    """Same round context with every vehicle's dwell replaced."""
    return dataclasses.replace(ctx, dwell={n: float(value) for n in ctx.dwell})


def round_context(cfg, g=1, t0=0.0, active=None):
    from vechfl.context import associate_vehicles, build_context, calibrate_xi6
    from vechfl.mobility import Mobility

    mob = Mobility(cfg.vehicles, cfg.road, cfg.seed)
    assoc = associate_vehicles(cfg, mob, t0, None)
    return build_context(cfg, g, t0, list(active or cfg.task_ids), mob, calibrate_xi6(cfg, mob), assoc)
