import math
import random

import pytest

from surebuild.corpus import gen_configuration, random_configuration, random_dag
from surebuild.errors import LimitExceeded
from surebuild.executor import MutableStore, run_interleaved, run_sequential
from surebuild.graph import Configuration, DependencyGraph, list_schedule
from surebuild.oracle import enumerate_builds, optimal_makespan, theorem_check
from surebuild.resources import Bytes, SharedState
from surebuild.scripts import Lit, TaskScript, WriteFrom


class TestEnumeration:
    def test_gen_without_edge_uniformly_invalid(self):
        enum = enumerate_builds(gen_configuration())
        assert enum.verdicts == {"Invalid"}
        # 2 + 3 accesses with no edges: C(5, 2) feasible interleavings.
        assert enum.build_count == math.comb(5, 2)

    def test_gen_with_edge_uniformly_valid_single_state(self):
        enum = enumerate_builds(gen_configuration(with_edge=True))
        assert enum.verdicts == {"Valid"}
        assert enum.build_count == 1
        assert len(enum.final_digests) == 1

    def test_single_task(self):
        scripts = {"t": TaskScript.of(WriteFrom("x", Lit(Bytes(b"1"))))}
        cfg = Configuration(DependencyGraph(("t",)), scripts, SharedState({}))
        enum = enumerate_builds(cfg)
        assert enum.build_count == 1
        assert enum.verdicts == {"Valid"}

    def test_empty_configuration(self):
        cfg = Configuration(DependencyGraph(()), {}, SharedState({}))
        result = theorem_check(cfg)
        assert result.passed

    @pytest.mark.parametrize("a,b", [(1, 1), (2, 2), (2, 3), (3, 3)])
    def test_completeness_two_independent_tasks(self, a, b):
        # Independent oracle for the count: the binomial coefficient.
        scripts = {
            "p": TaskScript.of(*(WriteFrom(f"pa{i}", Lit(Bytes(b"1"))) for i in range(a))),
            "q": TaskScript.of(*(WriteFrom(f"qb{i}", Lit(Bytes(b"1"))) for i in range(b))),
        }
        cfg = Configuration(DependencyGraph(("p", "q")), scripts, SharedState({}))
        expected = math.comb(a + b, a)
        assert enumerate_builds(cfg, memoize=False).build_count == expected
        # DP aggregation over the memo keeps counts exact.
        assert enumerate_builds(cfg, memoize=True).build_count == expected

    def test_memoized_outcomes_match_unmemoized(self):
        rng = random.Random(99)
        for _ in range(20):
            cfg = random_configuration(rng, min_tasks=2)
            with_memo = enumerate_builds(cfg, memoize=True)
            without = enumerate_builds(cfg, memoize=False)
            assert with_memo.verdicts == without.verdicts
            assert with_memo.all_digests == without.all_digests
            assert with_memo.build_count == without.build_count

    def test_task_limit(self):
        rng = random.Random(1)
        cfg = random_configuration(rng, max_tasks=4, min_tasks=4)
        with pytest.raises(LimitExceeded):
            enumerate_builds(cfg, max_tasks=3)

    def test_work_limit(self):
        cfg = gen_configuration()
        with pytest.raises(LimitExceeded):
            enumerate_builds(cfg, max_interleavings=3, memoize=False)


class TestTheorem:
    def test_random_batch_passes(self):
        rng = random.Random(4242)
        for _ in range(60):
            cfg = random_configuration(rng)
            result = theorem_check(cfg)
            assert result.passed, result.reason

    def test_counterexamples_are_replayable(self):
        # Break the frame property: every write also clobbers a victim
        # resource. Interleaving order then leaks into the final state.
        original = MutableStore.apply

        def broken(self, name, value):
            original(self, name, value)
            if name != "file:victim":
                original(self, "file:victim", value)

        MutableStore.apply = broken
        try:
            rng = random.Random(777)
            found = None
            for _ in range(50):
                cfg = random_configuration(rng, min_tasks=2)
                result = theorem_check(cfg)
                if not result.passed:
                    found = (cfg, result)
                    break
            assert found is not None, "fault injection went undetected"
            cfg, result = found
            choice_a, choice_b = result.counterexample
            trace_a = run_interleaved(cfg, choice_a)
            trace_b = run_interleaved(cfg, choice_b)
            assert trace_a.final_state.digest() != trace_b.final_state.digest()
        finally:
            MutableStore.apply = original

    def test_valid_state_equals_sequential(self):
        rng = random.Random(5150)
        for _ in range(30):
            cfg = random_configuration(rng)
            result = theorem_check(cfg)
            assert result.passed
            if result.enumeration.verdicts == {"Valid"}:
                (digest,) = result.enumeration.final_digests
                assert digest == run_sequential(cfg).final_state.digest()


class TestOptimalMakespan:
    def test_diamond(self):
        g = DependencyGraph(
            ("A", "B", "C", "D"),
            frozenset({("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")}),
        )
        assert optimal_makespan(g, None, 2) == 3

    def test_independent_tasks(self):
        assert optimal_makespan(DependencyGraph(("a", "b", "c", "d")), None, 2) == 2

    def test_never_above_list_schedule(self):
        rng = random.Random(88)
        for _ in range(25):
            g = random_dag(rng, rng.randint(2, 6))
            m = rng.choice([2, 3])
            opt = optimal_makespan(g, None, m)
            greedy = list_schedule(g, m).makespan
            assert opt <= greedy + 1e-9
            assert greedy <= (2 - 1 / m) * opt + 1e-9

    def test_weighted_durations(self):
        g = DependencyGraph(("a", "b", "c"))
        # One long task dominates.
        assert optimal_makespan(g, {"a": 5, "b": 1, "c": 1}, 2) == 5

    def test_task_limit(self):
        g = DependencyGraph(tuple(f"t{i}" for i in range(9)))
        with pytest.raises(LimitExceeded):
            optimal_makespan(g, None, 2)
