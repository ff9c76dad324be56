"""Run every scheduler to the convergence target on a few seeds and compare
time-to-target, rounds and mean per-round makespan."""
import sys

import numpy as np

from vechfl.config import SCHEDULERS
from vechfl.instances import default_config
from vechfl.simulator import run_until_convergence

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
table = {k: [] for k in SCHEDULERS}
for seed in seeds:
    cfg = default_config(seed)
    for kind in SCHEDULERS:
        res = run_until_convergence(cfg, kind, raise_on_cap=False, keep_schedules=False)
        busy = [r["makespan"] for r in res.rounds if r["cloud_time"]]
        table[kind].append((res.time_to_target, len(res.rounds), np.mean(busy)))
        print(f"seed {seed} {kind:6s} time-to-target {res.time_to_target:9.1f}s  rounds {len(res.rounds):3d}  "
              f"mean round {np.mean(busy):6.1f}s")

print("\nmedians over seeds")
for kind, rows in table.items():
    tt, rounds, mk = np.median(np.array(rows), axis=0)
    print(f"  {kind:6s} {tt:9.1f}s  {rounds:5.1f} rounds  {mk:6.1f}s per round")
