import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import make_es, make_task, make_vehicle
from vechfl.timing import (EmptyAssignment, ExecutionCase, TaskNotAssigned, WrongIterationCount, ZeroRateError,
                           end_time, es_edge_iteration_time, es_global_round_time, global_objective,
                           inactive_time, is_feasible, local_round_time, ntt_time, quorum_of, required_time,
                           task_training_time, v2e_upload_time)


def test_local_round_time_examples():
    t = make_task(batch_size=100, cycles_per_sample=20, setup_overhead=0.005)
    assert local_round_time(t, make_vehicle(f=1e9)) == pytest.approx(0.005002, abs=1e-15)
    t = make_task(batch_size=64, cycles_per_sample=25, setup_overhead=0.01)
    assert local_round_time(t, make_vehicle(f=2e9)) == pytest.approx(0.0100008, abs=1e-15)


def test_local_round_time_zero():
    t = make_task(batch_size=0, setup_overhead=0.0)
    assert local_round_time(t, make_vehicle()) == 0.0


def test_training_time_scales_with_local_iters():
    t = make_task(local_iters=4, batch_size=0, setup_overhead=0.01)
    assert task_training_time(t, make_vehicle()) == pytest.approx(0.04, abs=1e-15)
    t = make_task(local_iters=6, batch_size=100, cycles_per_sample=20, setup_overhead=0.005)
    assert task_training_time(t, make_vehicle(f=1e9)) == pytest.approx(0.030012, abs=1e-15)


def test_required_time_is_k_times_training():
    t = make_task(local_iters=3, edge_iters=5, batch_size=10, cycles_per_sample=1e6, setup_overhead=0.1)
    v = make_vehicle(f=1e9)
    assert required_time(t, v) == pytest.approx(5 * task_training_time(t, v))


def test_upload_time_examples():
    assert v2e_upload_time(make_task(model_size_v2e=1e6), 1e6) == 1.0
    assert v2e_upload_time(make_task(model_size_v2e=5e6), 2e6) == 2.5
    with pytest.raises(ZeroRateError):
        v2e_upload_time(make_task(), 0.0)


def test_inactive_time_examples():
    assert inactive_time([10.0], 8.0) == 2.0
    assert inactive_time([10.0], 12.0) == 0.0
    assert inactive_time([], 3.0) == 0.0


def test_ntt_cases():
    assert ntt_time(ExecutionCase.IMMEDIATE, 5.0, 7.0) == 0.0
    assert ntt_time(ExecutionCase.DELAYED, 1.0, 2.0) == 3.0
    assert ntt_time(ExecutionCase.DELAYED, 0.5, 0.0) == 0.5


def test_end_time_prefix_sum():
    seq, totals = [4, 1, 3], {4: 2.0, 1: 3.0, 3: 1.0}
    assert end_time(seq, totals, 3) == 6.0
    assert end_time(seq, totals, 1) == 5.0
    with pytest.raises(TaskNotAssigned):
        end_time(seq, totals, 2)


def test_edge_iteration_time_is_max():
    assert es_edge_iteration_time([3.0, 5.5, 4.2]) == 5.5
    with pytest.raises(EmptyAssignment):
        es_edge_iteration_time([])


def test_es_global_round_time():
    es = make_es(e2c=1e6)
    assert es_global_round_time(make_task(edge_iters=3, model_size_e2c=1e6), [2, 3, 4], es) == 10.0
    assert es_global_round_time(make_task(edge_iters=1, model_size_e2c=5e5), [10], es) == 10.5
    with pytest.raises(WrongIterationCount):
        es_global_round_time(make_task(edge_iters=3), [1.0, 2.0], es)


def test_global_objective():
    assert global_objective({(1, "A"): 10.0, (1, "B"): 12.0, (2, "A"): 9.0}) == 12.0
    with pytest.raises(EmptyAssignment):
        global_objective({})


def test_feasibility_strict_and_empty():
    assert is_feasible([], 0.0)
    assert is_feasible([1.0, 2.0], 3.5)
    assert not is_feasible([1.0, 2.0], 3.0)


def test_quorum_of_orders_by_time_then_id():
    arr = {3: 5.0, 1: 5.0, 2: 7.0}
    assert quorum_of(arr, 2) == (5.0, (1, 3))
    assert quorum_of(arr, 5) == (7.0, (1, 3, 2))
    assert quorum_of(arr, 1, full_sync=True) == (7.0, (1, 3, 2))


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(1, 8), st.floats(0, 1e4, allow_nan=False), min_size=1),
       st.integers(1, 10))
def test_quorum_time_never_exceeds_full_sync(arrivals, q):
    t_q, chosen = quorum_of(arrivals, q)
    t_all, _ = quorum_of(arrivals, q, full_sync=True)
    assert t_q <= t_all
    assert len(chosen) == min(q, len(arrivals))
    # the quorum is exactly the earliest arrivals
    assert all(arrivals[m] <= t_q for m in chosen)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100))
def test_ntt_nonnegative(upload, others, own):
    idle = inactive_time([others], own)
    assert idle >= 0.0
    assert ntt_time(ExecutionCase.DELAYED, upload, idle) >= 0.0
    assert ntt_time(ExecutionCase.IMMEDIATE, upload, idle) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 50.0), min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_end_time_last_is_total(vals, rnd):
    seq = list(range(1, len(vals) + 1))
    rnd.shuffle(seq)
    totals = dict(zip(range(1, len(vals) + 1), vals))
    assert end_time(seq, totals, seq[-1]) == pytest.approx(sum(vals))
    ends = [end_time(seq, totals, j) for j in seq]
    assert all(a <= b for a, b in zip(ends, ends[1:]))


def test_round_time_monotone_in_cpu_frequency():
    t = make_task(batch_size=32, cycles_per_sample=1e8, setup_overhead=0.05)
    times = [local_round_time(t, make_vehicle(f=f)) for f in np.linspace(1e9, 1e10, 10)]
    assert all(a > b for a, b in zip(times, times[1:]))
    assert math.isclose(times[-1], 32 * 1e8 / 1e10 + 0.05)
