"""Walk through one global round on the default instance.

Stage 1 assigns tasks to vehicles, stage 2 orders them, and the closed-form
timeline evaluates the round under hybrid and full-sync cloud aggregation.
"""
from vechfl._rng import stream
from vechfl.baselines import get_scheduler
from vechfl.context import associate_vehicles, build_context, calibrate_xi6
from vechfl.instances import default_config
from vechfl.mobility import Mobility
from vechfl.timing import evaluate_round

cfg = default_config(seed=0)
mob = Mobility(cfg.vehicles, cfg.road, cfg.seed)
assoc = associate_vehicles(cfg, mob, 0.0, None)
ctx = build_context(cfg, 1, 0.0, list(cfg.task_ids), mob, calibrate_xi6(cfg, mob), assoc)

print(f"{len(cfg.vehicles)} vehicles, {len(cfg.edge_servers)} edge servers, tasks {cfg.task_ids}")
print(f"target vehicles per task chi={ctx.chi}, task weights", {j: round(r, 2) for j, r in ctx.rho.items()})

sched, seqs = get_scheduler("heart")(ctx, stream(cfg.seed, "sched", "heart", 1))
counts = {j: sum(j in t for t in sched.tasks.values()) for j in cfg.task_ids}
print("assignment counts:", counts)
idle = [n for n, t in sched.tasks.items() if not t]
print(f"idle vehicles: {len(idle)}")

for n in sorted(sched.tasks)[:5]:
    m = sched.es_of[n]
    used = sum(ctx.req_time(n, j) for j in sched.tasks[n])
    print(f"  vehicle {n:2d} @ ES {m}: tasks {sched.tasks[n]}, order at k=1 {seqs[1].sequence(m, n)}, "
          f"busy {used:.1f}s of {ctx.dwell[n]:.1f}s dwell")

hyb = evaluate_round(cfg, sched, seqs, ctx.rate_fn, 0.0)
full = evaluate_round(cfg, sched, seqs, ctx.rate_fn, 0.0, full_sync=True)
print(f"round makespan: hybrid {hyb.makespan:.1f}s, full-sync {full.makespan:.1f}s")
for j in cfg.task_ids:
    print(f"  task {j}: quorum {hyb.quorum.get(j)}, cloud aggregation at {hyb.cloud_time.get(j, float('nan')):.1f}s")
