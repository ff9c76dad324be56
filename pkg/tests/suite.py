"""Paired-seed runs on the default 4-task / 25-vehicle suite, computed once
per test session and shared by every check that needs them."""
import functools
import time

from vechfl.config import SCHEDULERS
from vechfl.instances import default_config
from vechfl.simulator import run_until_convergence

N_SEEDS = 30


@functools.lru_cache(maxsize=None)
def default_suite(n_seeds: int = N_SEEDS):
    """kind -> list of results by seed, plus the wall time it took."""
    start = time.perf_counter()
    out = {k: [] for k in SCHEDULERS}
    for seed in range(n_seeds):
        cfg = default_config(seed)
        for kind in SCHEDULERS:
            out[kind].append(run_until_convergence(cfg, kind, raise_on_cap=False, keep_schedules=False))
    return out, time.perf_counter() - start
