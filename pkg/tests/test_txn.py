import random

import pytest

from surebuild.corpus import (
    cascade_configuration,
    gen_configuration,
    random_configuration,
)
from surebuild.errors import LivelockGuard
from surebuild.executor import run_sequential
from surebuild.graph import Configuration, DependencyGraph
from surebuild.inference import infer_until_valid
from surebuild.resources import Bytes, SharedState
from surebuild.scripts import Lit, ReadInto, TaskScript, Var, WriteFrom
from surebuild.txn import (
    REASON_DEADLOCK,
    REASON_STALE,
    VersionedStore,
    abort_log_lines,
    fixed_policy,
    predicted_sets,
    random_policy,
    run_locking,
    run_mvto,
    serial_first,
)


def crossing_pair():
    """t1 writes a then b; t2 writes b then a. Classic lock-order deadlock."""
    scripts = {
        "t1": TaskScript.of(WriteFrom("file:a", Lit(Bytes(b"1a"))), WriteFrom("file:b", Lit(Bytes(b"1b")))),
        "t2": TaskScript.of(WriteFrom("file:b", Lit(Bytes(b"2b"))), WriteFrom("file:a", Lit(Bytes(b"2a")))),
    }
    return Configuration(DependencyGraph(("t1", "t2")), scripts, SharedState({}))


class TestLocking:
    def test_gen_with_predictions_blocks_and_matches(self):
        cfg = gen_configuration()
        seq = run_sequential(cfg)
        out = run_locking(cfg, predicted_sets(seq), respect_edges=False)
        assert out.final_state.digest() == seq.final_state.digest()
        assert out.abort_log == ()
        assert out.total_restarts == 0

    def test_disjoint_tasks_commit_without_blocking(self):
        scripts = {
            "a": TaskScript.of(WriteFrom("file:a", Lit(Bytes(b"1")))),
            "b": TaskScript.of(WriteFrom("file:b", Lit(Bytes(b"2")))),
        }
        cfg = Configuration(DependencyGraph(("a", "b")), scripts, SharedState({}))
        out = run_locking(cfg, {}, respect_edges=False)
        assert out.abort_log == ()
        assert out.final_state.read("file:a") == Bytes(b"1")
        assert out.final_state.read("file:b") == Bytes(b"2")

    def test_deadlock_aborts_latest_timestamp(self):
        cfg = crossing_pair()
        seq = run_sequential(cfg)
        out = run_locking(cfg, {}, respect_edges=False)
        assert [(r.task, r.reason) for r in out.abort_log] == [("t2", REASON_DEADLOCK)]
        assert out.restarts["t2"] == 1
        assert out.final_state.digest() == seq.final_state.digest()

    def test_restart_budget_guard(self):
        with pytest.raises(LivelockGuard):
            run_locking(crossing_pair(), {}, respect_edges=False, restart_budget=0)

    def test_equivalence_with_predictions_random(self):
        rng = random.Random(21)
        for _ in range(40):
            cfg = random_configuration(rng)
            seq = run_sequential(cfg)
            out = run_locking(
                cfg,
                predicted_sets(seq),
                policy=random_policy(rng),
                respect_edges=False,
            )
            assert out.final_state.digest() == seq.final_state.digest()


class TestMvto:
    def test_gen_forced_stale_read(self):
        # The compiler runs fully before the generator commits; the
        # generator's commit rolls it back, and the rerun converges.
        cfg = gen_configuration()
        seq = run_sequential(cfg)
        out = run_mvto(cfg, policy=fixed_policy(["gcc", "gcc", "gcc", "gen", "gen"]), respect_edges=False)
        assert out.final_state.digest() == seq.final_state.digest()
        stale = [r for r in out.abort_log if r.reason == REASON_STALE]
        assert stale and stale[0].task == "gcc"

    def test_valid_config_dependency_dispatch_zero_aborts(self):
        cfg = gen_configuration(with_edge=True)
        out = run_mvto(cfg, policy=serial_first, respect_edges=True)
        assert out.abort_log == ()
        assert out.final_state.digest() == run_sequential(cfg).final_state.digest()

    def test_cascade_rolls_back_influence_closure(self):
        cfg = cascade_configuration()
        seq = run_sequential(cfg)
        # b and c run and commit before a; a's commit invalidates b's read of
        # x, and c read b's published y, so exactly {b, c} roll back. The
        # orderly tail re-runs b before c so no second-generation abort races.
        policy = fixed_policy(["b", "b", "c", "c", "a", "b", "b", "c", "c"])
        out = run_mvto(cfg, policy=policy, respect_edges=False)
        assert out.final_state.digest() == seq.final_state.digest()
        cascades = [r for r in out.abort_log if r.reason == REASON_STALE]
        assert {r.task for r in cascades} == {"b", "c"}
        assert all(set(r.cascade) == {"b", "c"} for r in cascades)
        assert not any(r.task == "a" for r in out.abort_log)

    def test_already_serial_run_zero_aborts(self):
        cfg = gen_configuration()  # invalid graph, but serial dispatch never races
        out = run_mvto(cfg, policy=serial_first, respect_edges=True)
        assert out.abort_log == ()

    def test_equivalence_random_adversarial(self):
        rng = random.Random(31)
        for _ in range(40):
            cfg = random_configuration(rng)
            seq = run_sequential(cfg)
            out = run_mvto(cfg, policy=random_policy(rng), respect_edges=False)
            assert out.final_state.digest() == seq.final_state.digest()

    def test_buffered_isolation(self):
        # A reader never observes another task's uncommitted write: let the
        # writer publish x then y, and step the reader between the two writes.
        scripts = {
            "w": TaskScript.of(WriteFrom("file:x", Lit(Bytes(b"new"))), WriteFrom("file:y", Lit(Bytes(b"new")))),
            "r": TaskScript.of(ReadInto("file:x", "v"), WriteFrom("file:saw", Var("v"))),
        }
        cfg = Configuration(
            DependencyGraph(("w", "r")), scripts, SharedState({"file:x": Bytes(b"old")})
        )
        # Interleave: w writes x (buffered), r reads x, then both finish.
        out = run_mvto(cfg, policy=fixed_policy(["w", "r", "r", "w"]), respect_edges=False)
        # r read the committed (old) value mid-run, got rolled back at w's
        # commit, and re-ran against the published value.
        assert out.final_state.read("file:saw") == Bytes(b"new")
        seq = run_sequential(cfg)
        assert out.final_state.digest() == seq.final_state.digest()

    def test_abort_log_lines_format(self):
        cfg = cascade_configuration()
        out = run_mvto(cfg, policy=fixed_policy(["b", "b", "c", "c", "a"]), respect_edges=False)
        text = abort_log_lines(out)
        assert text.startswith("abort b 1 StaleRead b,c")


class TestRollbackOp:
    def _store_after(self, cfg, policy):
        # Build a populated store by hand-driving commits.
        seq = run_sequential(cfg)
        return seq

    def test_rollback_without_readers_removes_only_own_versions(self):
        store = VersionedStore(SharedState({}), ("a", "b"))
        store.commit(0, {"file:x": Bytes(b"ax")})
        store.commit(1, {"file:y": Bytes(b"by")})
        affected = store.rollback("a")
        assert affected == {"a"}
        assert store.committed_versions("file:x") == ()
        assert store.committed_versions("file:y") == ((1, Bytes(b"by")),)

    def test_rollback_cascades_through_read_from(self):
        store = VersionedStore(SharedState({}), ("gen", "gcc"))
        store.commit(0, {"file:gen.h": Bytes(b"h")})
        value, version = store.read_at("file:gen.h", 1)
        store.log_read("file:gen.h", 1, version)
        store.commit(1, {"file:foo": Bytes(b"out")})
        affected = store.rollback("gen")
        assert affected == {"gen", "gcc"}
        assert store.committed_versions("file:gen.h") == ()
        assert store.committed_versions("file:foo") == ()

    def test_rollback_never_started_is_noop(self):
        store = VersionedStore(SharedState({"file:x": Bytes(b"init")}), ("a", "b"))
        store.commit(0, {"file:x": Bytes(b"ax")})
        affected = store.rollback("b")
        assert affected == {"b"}
        assert store.committed_versions("file:x") == ((0, Bytes(b"ax")),)

    def test_read_serves_older_version(self):
        # A later-timestamp commit never hides the version an earlier reader
        # should see.
        store = VersionedStore(SharedState({"file:x": Bytes(b"v0")}), ("a", "b", "c"))
        store.commit(2, {"file:x": Bytes(b"v2")})
        value, version = store.read_at("file:x", 1)
        assert value == Bytes(b"v0")
        assert version == VersionedStore.INIT_TS


class TestProgress:
    def test_restart_counts_bounded(self):
        # Each restart is caused by a strictly earlier commit; with n tasks,
        # totals stay well under the 2n^2 budget.
        rng = random.Random(77)
        for _ in range(20):
            cfg = random_configuration(rng, min_tasks=2)
            n = len(cfg.graph.tasks)
            out = run_mvto(cfg, policy=random_policy(rng), respect_edges=False)
            assert out.total_restarts <= 2 * n * n

    def test_valid_configs_after_inference_zero_aborts(self):
        rng = random.Random(78)
        for _ in range(10):
            cfg = random_configuration(rng, min_tasks=2)
            valid_cfg, _, _ = infer_until_valid(cfg)
            out = run_mvto(valid_cfg, policy=serial_first, respect_edges=True)
            assert out.abort_log == ()
