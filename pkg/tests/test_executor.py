import random

import pytest

from surebuild.corpus import (
    GEN_EXPECTED_BINARY,
    GEN_EXPECTED_HEADER,
    gen_configuration,
    random_configuration,
)
from surebuild.errors import InfeasibleChoice, TaskFailed
from surebuild.executor import (
    random_interleaving,
    run_interleaved,
    run_parallel,
    run_sequential,
    run_with_policy,
    trace_lines,
    trace_skeletons,
)
from surebuild.graph import Configuration, DependencyGraph
from surebuild.resources import Bytes, SharedState
from surebuild.scripts import Lit, ReadInto, TaskScript, Var, WriteFrom


class TestSequential:
    def test_gen_expected_outputs(self):
        trace = run_sequential(gen_configuration())
        assert trace.final_state.read("file:generated.h") == Bytes(GEN_EXPECTED_HEADER)
        assert trace.final_state.read("file:foo") == Bytes(GEN_EXPECTED_BINARY)

    def test_empty_configuration(self):
        cfg = Configuration(DependencyGraph(()), {}, SharedState({"x": Bytes(b"1")}))
        trace = run_sequential(cfg)
        assert trace.final_state == cfg.initial
        assert trace.events == ()

    def test_chain_visibility(self):
        scripts = {
            "a": TaskScript.of(WriteFrom("file:mid", Lit(Bytes(b"from-a")))),
            "b": TaskScript.of(ReadInto("file:mid", "v"), WriteFrom("file:out", Var("v"))),
        }
        cfg = Configuration(
            DependencyGraph(("a", "b"), frozenset({("a", "b")})), scripts, SharedState({})
        )
        trace = run_sequential(cfg)
        assert trace.final_state.read("file:out") == Bytes(b"from-a")

    def test_task_attribution_on_failure(self):
        from surebuild.scripts import Var

        scripts = {"bad": TaskScript.of(WriteFrom("x", Var("unbound")))}
        cfg = Configuration(DependencyGraph(("bad",)), scripts, SharedState({}))
        with pytest.raises(TaskFailed) as err:
            run_sequential(cfg)
        assert err.value.task == "bad"


class TestParallel:
    def test_single_worker_matches_sequential(self):
        cfg = gen_configuration()
        seq = run_sequential(cfg)
        par, _report = run_parallel(cfg, 1)
        assert par.final_state.digest() == seq.final_state.digest()

    def test_valid_config_matches_sequential(self):
        cfg = gen_configuration(with_edge=True)
        seq = run_sequential(cfg)
        for workers in (2, 4):
            for _ in range(5):
                par, report = run_parallel(cfg, workers)
                assert report.valid
                assert par.final_state.digest() == seq.final_state.digest()

    def test_invalid_verdict_is_configuration_level(self):
        # The verdict does not depend on the interleaving that happened.
        cfg = gen_configuration()
        for _ in range(10):
            _trace, report = run_parallel(cfg, 2)
            assert not report.valid
            assert set(report.violations) == {("gen", "gcc")}

    def test_realized_interleaving_replays(self):
        cfg = gen_configuration(with_edge=True)
        par, _ = run_parallel(cfg, 2)
        replay = run_interleaved(cfg, par.steps)
        assert replay.final_state.digest() == par.final_state.digest()
        assert replay.events == par.events


class TestInterleaved:
    def test_compiler_first_sees_missing_header(self):
        # Header read before the generator ran: the output embeds the absent
        # marker instead of the header text.
        trace = run_interleaved(gen_configuration(), ("gcc", "gcc", "gcc", "gen", "gen"))
        assert trace.final_state.read("file:foo") == Bytes(b"src<absent>")
        assert trace.final_state.read("file:generated.h") == Bytes(GEN_EXPECTED_HEADER)

    def test_serial_choice_matches_sequential(self):
        cfg = gen_configuration()
        seq = run_sequential(cfg)
        replay = run_interleaved(cfg, seq.steps)
        assert replay.events == seq.events
        assert replay.final_state.digest() == seq.final_state.digest()

    def test_single_task_one_choice(self):
        scripts = {"t": TaskScript.of(WriteFrom("x", Lit(Bytes(b"1"))))}
        cfg = Configuration(DependencyGraph(("t",)), scripts, SharedState({}))
        trace = run_interleaved(cfg, ("t",))
        assert trace.final_state.read("x") == Bytes(b"1")
        with pytest.raises(InfeasibleChoice):
            run_interleaved(cfg, ())
        with pytest.raises(InfeasibleChoice):
            run_interleaved(cfg, ("t", "t"))

    def test_determinism(self):
        cfg = gen_configuration()
        choice = ("gcc", "gen", "gcc", "gen", "gcc")
        a = run_interleaved(cfg, choice)
        b = run_interleaved(cfg, choice)
        assert a.events == b.events
        assert a.final_state.digest() == b.final_state.digest()

    def test_graph_constraint_enforced(self):
        cfg = gen_configuration(with_edge=True)
        with pytest.raises(InfeasibleChoice):
            run_interleaved(cfg, ("gcc", "gcc", "gcc", "gen", "gen"))

    def test_unknown_task_rejected(self):
        with pytest.raises(InfeasibleChoice):
            run_interleaved(gen_configuration(), ("nope",))

    def test_edges_order_events_globally(self):
        # Every executor must place all of f's events before g's when f -> g.
        rng = random.Random(5)
        for _ in range(30):
            cfg = random_configuration(rng, edge_prob=0.5)
            choice = random_interleaving(cfg, rng)
            trace = run_interleaved(cfg, choice)
            first = {}
            last = {}
            for i, e in enumerate(trace.events):
                first.setdefault(e.task, i)
                last[e.task] = i
            for f, g in cfg.graph.edges:
                if f in last and g in first:
                    assert last[f] < first[g]


def test_run_with_policy_round_robin():
    cfg = gen_configuration()
    trace = run_with_policy(cfg, lambda cands, tick: cands[tick % len(cands)])
    assert len(trace.steps) == 5
    assert run_interleaved(cfg, trace.steps).events == trace.events


class TestTraceExport:
    def test_lines_format(self):
        trace = run_sequential(gen_configuration())
        text = trace_lines(trace)
        lines = text.splitlines()
        assert len(lines) == 5
        seq, task, kind, target, digest = lines[0].split(" ")
        assert (seq, task, kind, target) == ("0", "gen", "read", "file:config")
        assert len(digest) == 16

    def test_skeleton_round_trip_preserves_conflict_structure(self):
        from surebuild.graph import check_validity

        cfg = gen_configuration()
        trace = run_sequential(cfg)
        skeletons = trace_skeletons(trace_lines(trace), cfg.graph.tasks)
        report_a = check_validity(cfg.graph, trace.per_task)
        report_b = check_validity(cfg.graph, skeletons)
        assert report_a.violations == report_b.violations

    def test_skeleton_restores_listing_targets(self):
        from surebuild.resources import PrefixSet

        scripts = {"l": TaskScript.of(ReadInto(PrefixSet("dir/"), "v"))}
        cfg = Configuration(DependencyGraph(("l",)), scripts, SharedState({}))
        trace = run_sequential(cfg)
        skel = trace_skeletons(trace_lines(trace), ("l",))
        assert skel["l"].events[0].target == PrefixSet("dir/")
