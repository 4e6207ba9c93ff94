"""Transactional executors that keep invalid builds from producing bad states.

Two strategies, both with writes buffered until commit so rollback is cheap:

* run_locking: pessimistic exclusive locks taken at first access and held to
  commit, plus predicted locks taken at task start from a prior build's
  accesses. Predicted locks block only later-timestamp tasks. Deadlocks are
  broken by aborting the latest timestamp in the waits-for cycle.
* run_mvto: optimistic multiversion timestamp ordering. Each task runs at a
  virtual timestamp equal to its serial position; a commit that exposes a
  stale read rolls back the reader and everything influenced by its writes,
  transitively, and never the earlier writer.

Both run in virtual time under a pluggable step policy, which is what lets
tests pin adversarial interleavings exactly.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .errors import BuildError, LivelockGuard, TaskFailed
from .graph import Configuration
from .resources import (
    ABSENT,
    AccessEvent,
    AccessPort,
    PrefixSet,
    SharedState,
)
from .scripts import ScriptRunner

REASON_STALE = "StaleRead"
REASON_DEADLOCK = "DeadlockVictim"
REASON_UNREALIZABLE = "UnrealizableRead"

StepPolicy = Callable[[Sequence[str], int], str]


def round_robin(candidates: Sequence[str], tick: int) -> str:
    return candidates[tick % len(candidates)]


def serial_first(candidates: Sequence[str], tick: int) -> str:
    return candidates[0]


def random_policy(rng) -> StepPolicy:
    return lambda candidates, _tick: rng.choice(candidates)


def fixed_policy(sequence: Iterable[str], fallback: StepPolicy = round_robin) -> StepPolicy:
    """Follow an explicit task sequence while its entries are steppable, then
    fall back. Entries that are not currently steppable are retried later."""
    seq = list(sequence)
    cursor = {"i": 0}

    def policy(candidates, tick):
        i = cursor["i"]
        if i < len(seq) and seq[i] in candidates:
            cursor["i"] = i + 1
            return seq[i]
        return fallback(candidates, tick)

    return policy


@dataclass(frozen=True)
class AbortRecord:
    task: str
    timestamp: int
    reason: str
    cascade: tuple[str, ...]
    restart_count: int


@dataclass(frozen=True)
class TxnOutcome:
    final_state: SharedState
    abort_log: tuple[AbortRecord, ...]
    restarts: Mapping[str, int]

    @property
    def total_restarts(self) -> int:
        return sum(self.restarts.values())


def abort_log_lines(outcome: TxnOutcome) -> str:
    lines = []
    for rec in outcome.abort_log:
        cascade = ",".join(rec.cascade) if rec.cascade else "-"
        lines.append(f"abort {rec.task} {rec.timestamp} {rec.reason} {cascade}")
    return "\n".join(lines) + ("\n" if lines else "")


def predicted_sets(trace) -> dict[str, frozenset]:
    """Lock predictions from a prior build: every raw target each task touched."""
    return {
        task: frozenset(e.target for e in tt.events)
        for task, tt in trace.per_task.items()
    }


def default_restart_budget(task_count: int) -> int:
    return max(1, 2 * task_count * task_count)


# ---------------------------------------------------------------------------
# Pessimistic locking.

class _WouldBlock(Exception):
    def __init__(self, blockers: set[str]):
        super().__init__(f"blocked by {sorted(blockers)}")
        self.blockers = blockers


def _keys_conflict(a, b) -> bool:
    a_pref = isinstance(a, PrefixSet)
    b_pref = isinstance(b, PrefixSet)
    if not a_pref and not b_pref:
        return a == b
    if a_pref and not b_pref:
        return a.matches(b)
    if b_pref and not a_pref:
        return b.matches(a)
    return a.prefix.startswith(b.prefix) or b.prefix.startswith(a.prefix)


class _LockTable:
    """Exclusive locks over names and listing prefixes, plus predicted locks."""

    def __init__(self, timestamps: Mapping[str, int]):
        self._ts = timestamps
        self.holders: dict = {}            # key -> task
        self.predictions: dict = {}        # task -> frozenset of keys

    def predict(self, task: str, keys: frozenset):
        self.predictions[task] = keys

    def acquire(self, task: str, key):
        if self.holders.get(key) == task:
            return
        blockers = {
            holder
            for held, holder in self.holders.items()
            if holder != task and _keys_conflict(held, key)
        }
        my_ts = self._ts[task]
        for other, keys in self.predictions.items():
            if other == task or self._ts[other] >= my_ts:
                continue
            if any(_keys_conflict(k, key) for k in keys):
                blockers.add(other)
        if blockers:
            raise _WouldBlock(blockers)
        self.holders[key] = task

    def release_all(self, task: str):
        self.holders = {k: h for k, h in self.holders.items() if h != task}
        self.predictions.pop(task, None)


class _LockingPort(AccessPort):
    def __init__(self, task, space, sink, locks: _LockTable, committed: dict, buffer: dict):
        super().__init__(task, space, sink)
        self._locks = locks
        self._committed = committed
        self._buffer = buffer

    def _fetch(self, name):
        self._locks.acquire(self._task, name)
        if name in self._buffer:
            return self._buffer[name]
        return self._committed.get(name, ABSENT)

    def _apply(self, name, value):
        self._locks.acquire(self._task, name)
        self._buffer[name] = value

    def _listing_names(self, prefix):
        self._locks.acquire(self._task, PrefixSet(prefix))
        names = {n for n, v in self._committed.items()}
        for n, v in self._buffer.items():
            if v is ABSENT:
                names.discard(n)
            else:
                names.add(n)
        return names


# ---------------------------------------------------------------------------
# Multiversion timestamp ordering.

class _Unrealizable(Exception):
    pass


class VersionedStore:
    """Committed versions per resource plus read-from logs.

    Version 0 of every resource is its initial value at virtual timestamp -1,
    so a read at timestamp t can always be served with the newest committed
    version older than t.
    """

    INIT_TS = -1

    def __init__(self, initial: SharedState, serial_order: Sequence[str]):
        self._initial = initial
        self._order = tuple(serial_order)
        self._ts_of = {t: i for i, t in enumerate(self._order)}
        self._versions: dict[str, list[tuple[int, object]]] = {}
        self._read_log: dict[str, list[tuple[int, int]]] = {}   # name -> [(reader_ts, version_ts)]
        self._listing_log: list[tuple[str, int]] = []           # (prefix, reader_ts)
        self._writes_by_ts: dict[int, frozenset[str]] = {}

    def timestamp(self, task: str) -> int:
        return self._ts_of[task]

    def task_name(self, ts: int) -> str:
        return self._order[ts]

    def read_at(self, name: str, ts: int) -> tuple[object, int]:
        best_ts, best_value = self.INIT_TS, self._initial.read(name)
        for wts, value in self._versions.get(name, ()):
            if best_ts < wts < ts:
                best_ts, best_value = wts, value
        if best_ts >= ts:
            raise _Unrealizable(name)
        return best_value, best_ts

    def log_read(self, name: str, reader_ts: int, version_ts: int):
        self._read_log.setdefault(name, []).append((reader_ts, version_ts))

    def log_listing(self, prefix: str, reader_ts: int):
        self._listing_log.append((prefix, reader_ts))

    def names_at(self, ts: int) -> set[str]:
        candidates = set(self._initial.entries) | set(self._versions)
        out = set()
        for name in candidates:
            value, _ = self.read_at(name, ts)
            if value is not ABSENT:
                out.add(name)
        return out

    def commit(self, ts: int, writes: Mapping[str, object]) -> frozenset[int]:
        """Publish buffered writes; return reader timestamps made stale by them."""
        for name, value in writes.items():
            bisect.insort(self._versions.setdefault(name, []), (ts, value))
        self._writes_by_ts[ts] = frozenset(writes)
        stale: set[int] = set()
        for name in writes:
            for reader_ts, version_ts in self._read_log.get(name, ()):
                if reader_ts > ts and version_ts < ts:
                    stale.add(reader_ts)
        for prefix, reader_ts in self._listing_log:
            if reader_ts > ts and any(n.startswith(prefix) for n in writes):
                stale.add(reader_ts)
        return frozenset(stale)

    def readers_of(self, ts: int) -> frozenset[int]:
        """Timestamps that read a committed version or listing produced by ts."""
        out: set[int] = set()
        written = self._writes_by_ts.get(ts, frozenset())
        for name in written:
            for reader_ts, version_ts in self._read_log.get(name, ()):
                if version_ts == ts:
                    out.add(reader_ts)
            for prefix, reader_ts in self._listing_log:
                if reader_ts > ts and name.startswith(prefix):
                    out.add(reader_ts)
        return frozenset(out)

    def influence_closure(self, ts: int) -> frozenset[int]:
        closure = {ts}
        frontier = [ts]
        while frontier:
            current = frontier.pop()
            for reader in self.readers_of(current):
                if reader not in closure:
                    closure.add(reader)
                    frontier.append(reader)
        return frozenset(closure)

    def rollback_ts(self, ts: int) -> frozenset[int]:
        """Remove the task's versions and those of its influence closure; drop
        the closure's read logs. Returns the closure (including ts itself)."""
        closure = self.influence_closure(ts)
        for name in list(self._versions):
            kept = [(w, v) for w, v in self._versions[name] if w not in closure]
            if kept:
                self._versions[name] = kept
            else:
                del self._versions[name]
        for name in list(self._read_log):
            kept = [(r, w) for r, w in self._read_log[name] if r not in closure]
            if kept:
                self._read_log[name] = kept
            else:
                del self._read_log[name]
        self._listing_log = [(p, r) for p, r in self._listing_log if r not in closure]
        for member in closure:
            self._writes_by_ts.pop(member, None)
        return closure

    def rollback(self, task: str) -> frozenset[str]:
        """Task-name wrapper over rollback_ts; a no-op for never-started tasks."""
        closure = self.rollback_ts(self._ts_of[task])
        return frozenset(self._order[ts] for ts in closure)

    def committed_versions(self, name: str) -> tuple[tuple[int, object], ...]:
        return tuple(self._versions.get(name, ()))

    def final_state(self) -> SharedState:
        entries = dict(self._initial.entries)
        for name, versions in self._versions.items():
            ts, value = versions[-1]
            if value is ABSENT:
                entries.pop(name, None)
            else:
                entries[name] = value
        return SharedState(entries)


class _MvtoPort(AccessPort):
    def __init__(self, task, space, sink, store: VersionedStore, ts: int, buffer: dict):
        super().__init__(task, space, sink)
        self._store = store
        self._ts = ts
        self._buffer = buffer

    def _fetch(self, name):
        if name in self._buffer:
            return self._buffer[name]
        value, version_ts = self._store.read_at(name, self._ts)
        self._store.log_read(name, self._ts, version_ts)
        return value

    def _apply(self, name, value):
        self._buffer[name] = value

    def _listing_names(self, prefix):
        self._store.log_listing(prefix, self._ts)
        names = self._store.names_at(self._ts)
        for n, v in self._buffer.items():
            if v is ABSENT:
                names.discard(n)
            else:
                names.add(n)
        return names


# ---------------------------------------------------------------------------
# Shared driver plumbing.

PENDING = "pending"
ACTIVE = "active"
COMMITTED = "committed"


class _Slots:
    def __init__(self, config: Configuration, respect_edges: bool, restart_budget: int):
        self.config = config
        self.order = config.graph.tasks
        self.state = {t: PENDING for t in self.order}
        self.runners: dict[str, ScriptRunner] = {}
        self.buffers: dict[str, dict] = {}
        self.restarts = {t: 0 for t in self.order}
        self.respect_edges = respect_edges
        self.restart_budget = restart_budget
        self.abort_log: list[AbortRecord] = []
        self.events: list[AccessEvent] = []

    def eligible(self, task: str) -> bool:
        if self.state[task] != PENDING:
            return False
        if not self.respect_edges:
            return True
        return all(self.state[p] == COMMITTED for p in self.config.graph.predecessors(task))

    def note_restart(self, task: str):
        self.restarts[task] += 1
        if sum(self.restarts.values()) > self.restart_budget:
            raise LivelockGuard(
                f"restart budget {self.restart_budget} exceeded (pathological configuration?)"
            )

    def all_committed(self) -> bool:
        return all(s == COMMITTED for s in self.state.values())


def _find_cycle(waits: Mapping[str, set[str]], start: str) -> list[str] | None:
    """DFS for a cycle reachable from start in the waits-for graph."""
    path: list[str] = []
    on_path: set[str] = set()
    visited: set[str] = set()

    def visit(node: str) -> list[str] | None:
        if node in on_path:
            return path[path.index(node):]
        if node in visited:
            return None
        visited.add(node)
        path.append(node)
        on_path.add(node)
        for nxt in sorted(waits.get(node, ())):
            found = visit(nxt)
            if found is not None:
                return found
        path.pop()
        on_path.discard(node)
        return None

    return visit(start)


def run_locking(
    config: Configuration,
    predicted: Mapping[str, frozenset] | None = None,
    *,
    policy: StepPolicy | None = None,
    respect_edges: bool = True,
    restart_budget: int | None = None,
) -> TxnOutcome:
    """Two-phase locking with predicted locks and deadlock-victim restarts."""
    policy = policy or round_robin
    predicted = predicted or {}
    order = config.graph.tasks
    timestamps = {t: i for i, t in enumerate(order)}
    budget = restart_budget if restart_budget is not None else default_restart_budget(len(order))
    slots = _Slots(config, respect_edges, budget)
    locks = _LockTable(timestamps)
    committed_entries = dict(config.initial.entries)
    waits: dict[str, set[str]] = {}

    def dispatch(task: str):
        slots.state[task] = ACTIVE
        buffer: dict = {}
        slots.buffers[task] = buffer
        locks.predict(task, frozenset(predicted.get(task, frozenset())))
        port = _LockingPort(task, config.space, slots.events.append, locks, committed_entries, buffer)
        try:
            runner = ScriptRunner(task, config.scripts[task], port)
        except BuildError as exc:
            raise TaskFailed(task, exc) from exc
        slots.runners[task] = runner
        if runner.done:
            commit(task)

    def commit(task: str):
        for name, value in slots.buffers[task].items():
            if value is ABSENT:
                committed_entries.pop(name, None)
            else:
                committed_entries[name] = value
        locks.release_all(task)
        slots.state[task] = COMMITTED
        waits.clear()

    def abort(task: str, reason: str):
        slots.runners.pop(task, None)
        slots.buffers.pop(task, None)
        locks.release_all(task)
        slots.state[task] = PENDING
        slots.note_restart(task)
        slots.abort_log.append(
            AbortRecord(task, timestamps[task], reason, (), slots.restarts[task])
        )
        waits.clear()

    tick = 0
    guard = 0
    while not slots.all_committed():
        guard += 1
        if guard > 100_000:
            raise LivelockGuard("driver made no progress")
        for task in order:
            if slots.eligible(task):
                dispatch(task)
        candidates = [
            t for t in order if slots.state[t] == ACTIVE and t not in waits and not slots.runners[t].done
        ]
        if not candidates:
            if slots.all_committed():
                break
            raise BuildError("locking driver stalled with no steppable task")
        task = policy(candidates, tick)
        tick += 1
        runner = slots.runners[task]
        try:
            runner.step()
        except _WouldBlock as block:
            waits[task] = set(block.blockers)
            cycle = _find_cycle(waits, task)
            if cycle:
                victim = max(cycle, key=lambda t: timestamps[t])
                abort(victim, REASON_DEADLOCK)
            continue
        except BuildError as exc:
            raise TaskFailed(task, exc) from exc
        if runner.done:
            commit(task)

    return TxnOutcome(
        SharedState(committed_entries),
        tuple(slots.abort_log),
        dict(slots.restarts),
    )


def run_mvto(
    config: Configuration,
    *,
    policy: StepPolicy | None = None,
    respect_edges: bool = True,
    restart_budget: int | None = None,
) -> TxnOutcome:
    """Optimistic multiversion execution with cascading reader rollback."""
    policy = policy or round_robin
    order = config.graph.tasks
    budget = restart_budget if restart_budget is not None else default_restart_budget(len(order))
    slots = _Slots(config, respect_edges, budget)
    store = VersionedStore(config.initial, order)

    def dispatch(task: str):
        slots.state[task] = ACTIVE
        buffer: dict = {}
        slots.buffers[task] = buffer
        port = _MvtoPort(task, config.space, slots.events.append, store, store.timestamp(task), buffer)
        try:
            runner = ScriptRunner(task, config.scripts[task], port)
        except BuildError as exc:
            raise TaskFailed(task, exc) from exc
        slots.runners[task] = runner
        if runner.done:
            commit(task)

    def roll_back_all(stale: frozenset[int], reason: str):
        handled: set[int] = set()
        for victim_ts in sorted(stale):
            if victim_ts in handled:
                continue
            closure = store.rollback_ts(victim_ts)
            handled |= closure
            names = tuple(sorted(store.task_name(m) for m in closure))
            for member_ts in sorted(closure):
                member = store.task_name(member_ts)
                slots.runners.pop(member, None)
                slots.buffers.pop(member, None)
                slots.state[member] = PENDING
                slots.note_restart(member)
                slots.abort_log.append(
                    AbortRecord(member, member_ts, reason, names, slots.restarts[member])
                )

    def commit(task: str):
        ts = store.timestamp(task)
        stale = store.commit(ts, slots.buffers[task])
        slots.state[task] = COMMITTED
        slots.buffers.pop(task, None)
        slots.runners.pop(task, None)
        if stale:
            roll_back_all(stale, REASON_STALE)

    tick = 0
    guard = 0
    while not slots.all_committed():
        guard += 1
        if guard > 1_000_000:
            raise LivelockGuard("driver made no progress")
        for task in order:
            if slots.eligible(task):
                dispatch(task)
        candidates = [
            t for t in order if slots.state[t] == ACTIVE and not slots.runners[t].done
        ]
        if not candidates:
            if slots.all_committed():
                break
            continue
        task = policy(candidates, tick)
        tick += 1
        runner = slots.runners[task]
        try:
            runner.step()
        except _Unrealizable:
            # Unreachable with version retention (an initial version always
            # exists); kept as a defensive abort path.
            ts = store.timestamp(task)
            closure = store.rollback_ts(ts)
            slots.runners.pop(task, None)
            slots.buffers.pop(task, None)
            slots.state[task] = PENDING
            slots.note_restart(task)
            slots.abort_log.append(
                AbortRecord(task, ts, REASON_UNREALIZABLE, tuple(sorted(store.task_name(m) for m in closure)), slots.restarts[task])
            )
            continue
        except BuildError as exc:
            raise TaskFailed(task, exc) from exc
        if runner.done:
            commit(task)

    return TxnOutcome(store.final_state(), tuple(slots.abort_log), dict(slots.restarts))
