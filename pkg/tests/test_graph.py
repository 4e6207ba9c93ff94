import random

import pytest

from surebuild.corpus import gen_configuration, random_dag
from surebuild.errors import CycleDetected, MissingTrace, SerialOrderViolation
from surebuild.executor import run_sequential
from surebuild.graph import (
    DependencyGraph,
    check_validity,
    critical_path_lengths,
    incremental_frontier,
    list_schedule,
    priority_schedule,
    serial_schedule,
    verify_schedule,
)
from surebuild.oracle import optimal_makespan


class TestGraphInvariants:
    def test_backward_edge_rejected(self):
        with pytest.raises(SerialOrderViolation):
            DependencyGraph(("a", "b"), frozenset({("b", "a")}))

    def test_self_edge_rejected(self):
        with pytest.raises(CycleDetected):
            DependencyGraph(("a",), frozenset({("a", "a")}))

    def test_unknown_endpoint_rejected(self):
        with pytest.raises(SerialOrderViolation):
            DependencyGraph(("a",), frozenset({("a", "zz")}))

    def test_reachability(self):
        g = DependencyGraph(("a", "b", "c", "d"), frozenset({("a", "b"), ("b", "d")}))
        assert g.has_path("a", "d")
        assert not g.has_path("a", "c")
        assert g.descendants("a") == {"b", "d"}


class TestValidity:
    def test_gen_pair_flagged(self):
        cfg = gen_configuration()
        trace = run_sequential(cfg)
        report = check_validity(cfg.graph, trace.per_task)
        assert not report.valid
        assert report.violations == {("gen", "gcc"): frozenset({"file:generated.h"})}

    def test_edge_makes_valid(self):
        cfg = gen_configuration(with_edge=True)
        trace = run_sequential(cfg)
        assert check_validity(cfg.graph, trace.per_task).valid

    def test_shared_read_is_valid(self):
        from surebuild.graph import Configuration
        from surebuild.resources import Bytes, SharedState
        from surebuild.scripts import Lit, ReadInto, TaskScript, WriteFrom

        scripts = {
            "a": TaskScript.of(ReadInto("file:shared", "v"), WriteFrom("file:a", Lit(Bytes(b"1")))),
            "b": TaskScript.of(ReadInto("file:shared", "v"), WriteFrom("file:b", Lit(Bytes(b"2")))),
        }
        cfg = Configuration(DependencyGraph(("a", "b")), scripts, SharedState({}))
        trace = run_sequential(cfg)
        assert check_validity(cfg.graph, trace.per_task).valid

    def test_missing_trace(self):
        cfg = gen_configuration()
        trace = run_sequential(cfg)
        with pytest.raises(MissingTrace):
            check_validity(cfg.graph, {"gen": trace.per_task["gen"]})


class TestSerialSchedule:
    def test_chain(self):
        g = DependencyGraph(("a", "b", "c"), frozenset({("a", "b"), ("b", "c")}))
        assert serial_schedule(g) == ("a", "b", "c")

    def test_declared_order_wins(self):
        g = DependencyGraph(("t2", "t1"))
        assert serial_schedule(g) == ("t2", "t1")

    def test_diamond(self):
        g = DependencyGraph(
            ("A", "B", "C", "D"),
            frozenset({("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")}),
        )
        assert serial_schedule(g) == ("A", "B", "C", "D")


DIAMOND = DependencyGraph(
    ("A", "B", "C", "D"),
    frozenset({("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")}),
)


class TestListSchedule:
    def test_diamond_two_workers(self):
        s = list_schedule(DIAMOND, 2)
        assert s.makespan == 3
        assert not verify_schedule(s, DIAMOND)

    def test_independent_tasks(self):
        g = DependencyGraph(("a", "b", "c", "d"))
        s = list_schedule(g, 2)
        assert s.makespan == 2
        assert not verify_schedule(s, g)

    def test_single_worker_is_serial(self):
        s = list_schedule(DIAMOND, 1)
        assert s.makespan == 4
        assert [a.task for a in sorted(s.assignments, key=lambda a: a.start)] == list(DIAMOND.tasks)

    def test_greedy_and_graham_bound_random(self):
        # Brute-force optimum as the scheduling oracle.
        rng = random.Random(42)
        for _ in range(30):
            n = rng.randint(2, 8)
            g = random_dag(rng, n)
            m = rng.choice([2, 3])
            s = list_schedule(g, m)
            assert not verify_schedule(s, g)
            opt = optimal_makespan(g, None, m)
            assert s.makespan <= (2 - 1 / m) * opt + 1e-9

    def test_positive_durations_required(self):
        with pytest.raises(ValueError):
            list_schedule(DIAMOND, 2, {"A": 0})


class TestPrioritySchedule:
    def test_critical_path_first(self):
        # Independents declared first trap plain list scheduling at makespan 4;
        # the critical-path heuristic reaches the optimum 3.
        g = DependencyGraph(
            ("i1", "i2", "i3", "c1", "c2", "c3"),
            frozenset({("c1", "c2"), ("c2", "c3")}),
        )
        plain = list_schedule(g, 2)
        smart = priority_schedule(g, 2)
        assert plain.makespan == 4
        assert smart.makespan == 3
        assert smart.by_task()["c1"].start == 0
        assert optimal_makespan(g, None, 2) == 3

    def test_no_edges_matches_list(self):
        g = DependencyGraph(("a", "b", "c"))
        assert priority_schedule(g, 2).to_json() == list_schedule(g, 2).to_json()

    def test_single_task(self):
        g = DependencyGraph(("only",))
        s = priority_schedule(g, 3)
        assert s.assignments[0].start == 0
        assert s.makespan == 1

    def test_critical_path_lengths(self):
        cpl = critical_path_lengths(DIAMOND)
        assert cpl == {"A": 3, "B": 2, "C": 2, "D": 1}


class TestFrontier:
    def _valid_gen(self):
        cfg = gen_configuration().with_edges([("gen", "gcc")])
        trace = run_sequential(cfg)
        return cfg, trace

    def test_source_change_hits_compiler_only(self):
        cfg, trace = self._valid_gen()
        assert incremental_frontier(cfg.graph, trace.per_task, {"file:foo.c"}) == {"gcc"}

    def test_config_change_cascades(self):
        cfg, trace = self._valid_gen()
        assert incremental_frontier(cfg.graph, trace.per_task, {"file:config"}) == {"gen", "gcc"}

    def test_empty_change_set(self):
        cfg, trace = self._valid_gen()
        assert incremental_frontier(cfg.graph, trace.per_task, set()) == frozenset()

    def test_changed_task_seeds_frontier(self):
        cfg, trace = self._valid_gen()
        assert incremental_frontier(cfg.graph, trace.per_task, set(), {"gen"}) == {"gen", "gcc"}
