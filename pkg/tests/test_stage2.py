import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from helpers import round_context
from oracles import greedy_scores
from vechfl._rng import stream
from vechfl.config import Schedule
from vechfl.instances import micro_config, random_schedule
from vechfl.stage2 import (ZeroUploadTime, aggregate_score, greedy_rank, overlap_pairs, overlap_score,
                           run_stage2, upload_score)


def test_overlap_example():
    seqs = {1: [1, 3, 4], 2: [2, 3]}
    assert overlap_pairs(seqs, 3) == 1
    assert overlap_pairs(seqs, 4) == 0
    assert overlap_pairs(seqs, 1) == 0


def test_overlap_three_at_same_position():
    assert overlap_score({1: [], 2: [], 3: []}, [1, 2, 3]) == 3
    assert overlap_score({1: [5], 2: [], 3: []}, [1, 2, 3]) == 1


def test_upload_and_aggregate_score():
    assert upload_score(0.5, 1.0) == 2.0
    assert aggregate_score(3, [4], 0.6) == pytest.approx(3.4)
    with pytest.raises(ZeroUploadTime):
        upload_score(0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.integers(1, 8), st.lists(st.integers(0, 4), max_size=4), min_size=1))
def test_overlap_score_counts_pairs(partial):
    holders = sorted(partial)
    brute = sum(1 for a in holders for b in holders if a < b and len(partial[a]) == len(partial[b]))
    assert overlap_score(partial, holders) == brute


def greedy_argmax_violations(seeds):
    """Number of greedy steps whose choice is not the independent argmax."""
    bad = steps = 0
    for seed in seeds:
        cfg = micro_config(seed, max_tasks=5)
        ctx = round_context(cfg)
        sched = random_schedule(cfg, stream(seed, "assign"), ctx.es_of)
        for m in sorted(set(sched.es_of.values())):
            k_max = max((cfg.task(j).edge_iters for n in sched.vehicles_under(m) for j in sched.tasks[n]),
                        default=0)
            for k in range(1, k_max + 1):
                res = greedy_rank(ctx, sched, m, k)
                prefixes = {n: [] for n in sched.vehicles_under(m)}
                for step in res.steps:
                    ref = greedy_scores(ctx, sched, m, k, prefixes)
                    top = max(ref.values())
                    want = min(j for j, s in ref.items() if s >= top - 1e-9 * max(1.0, abs(top)))
                    steps += 1
                    bad += step.chosen != want
                    assert set(step.scores) == set(ref)
                    for j in ref:
                        assert step.scores[j] == pytest.approx(ref[j], rel=1e-9, abs=1e-12)
                    for n in prefixes:
                        if step.chosen in sched.tasks[n] and cfg.task(step.chosen).edge_iters >= k:
                            prefixes[n].append(step.chosen)
                assert {n: tuple(p) for n, p in prefixes.items() if p} == res.sequences
    return bad, steps


def test_greedy_picks_argmax_each_step():
    bad, steps = greedy_argmax_violations(range(10))
    assert steps > 0 and bad == 0


def test_greedy_ties_lowest_id():
    base = micro_config(1, n_tasks=1, n_vehicles=2, n_es=1)
    t1 = base.tasks[0]
    vehicles = tuple(dataclasses.replace(v, cpu_freq={1: v.cpu_freq[1], 2: v.cpu_freq[1]},
                                         dataset_size={1: 64, 2: 64}) for v in base.vehicles)
    cfg = base.replace(tasks=(t1, dataclasses.replace(t1, id=2)), vehicles=vehicles)
    ctx = round_context(cfg)
    sched = Schedule(ctx.es_of, {n: (1, 2) for n in ctx.es_of})
    res = greedy_rank(ctx, sched, ctx.es_of[ctx.vehicles[0]], 1)
    assert res.steps[0].scores[1] == res.steps[0].scores[2]
    assert res.steps[0].chosen == 1


def test_stage2_sequences_are_permutations():
    for seed in range(5):
        cfg = micro_config(seed)
        ctx = round_context(cfg)
        sched = random_schedule(cfg, stream(seed, "a"), ctx.es_of)
        seqs = run_stage2(ctx, sched)
        for n, m in sched.es_of.items():
            for k, ts in seqs.items():
                want = sorted(j for j in sched.tasks[n] if cfg.task(j).edge_iters >= k)
                got = ts.sequence(m, n) if want else ()
                assert sorted(got) == want
