"""Build executors: sequential, multi-worker parallel, and driven interleaving.

The shared state has a single logical owner per build, a MutableStore whose
lock serializes accesses; the global event order is simply the order events
land in the store. The parallel executor uses immediate-visibility writes on
purpose, so an invalid configuration can actually produce wrong outputs, and
it logs its realized interleaving so any run can be replayed exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import BuildError, InfeasibleChoice, TaskFailed
from .graph import Configuration, ValidityReport, check_validity, serial_schedule
from .resources import (
    ABSENT,
    AccessEvent,
    AccessPort,
    SharedState,
    value_digest,
)
from .scripts import ScriptRunner, TaskTrace


class MutableStore:
    """Live entries plus the globally ordered event and step logs.

    apply() is the single mutation choke point; every executor and the
    enumeration oracle funnel writes through it.
    """

    def __init__(self, initial: SharedState):
        self._entries: dict = dict(initial.entries)
        self.lock = threading.Lock()
        self.events: list[AccessEvent] = []
        self.steps: list[str] = []

    def get(self, name):
        return self._entries.get(name, ABSENT)

    def apply(self, name, value):
        if value is ABSENT:
            self._entries.pop(name, None)
        else:
            self._entries[name] = value

    def present(self):
        return list(self._entries)

    def record(self, event: AccessEvent):
        self.events.append(event)

    def snapshot(self) -> SharedState:
        return SharedState(dict(self._entries))


class StorePort(AccessPort):
    def __init__(self, store: MutableStore, task: str, space, sink=None):
        super().__init__(task, space, sink if sink is not None else store.record)
        self._store = store

    def _fetch(self, name):
        return self._store.get(name)

    def _apply(self, name, value):
        self._store.apply(name, value)

    def _listing_names(self, prefix):
        return self._store.present()


@dataclass(frozen=True)
class BuildTrace:
    """Everything one build did: global order, per-task traces, final state,
    and the per-step interleaving log (one task id per access instruction)."""

    events: tuple[AccessEvent, ...]
    per_task: Mapping[str, TaskTrace]
    final_state: SharedState
    steps: tuple[str, ...]


def _finish(config: Configuration, store: MutableStore) -> BuildTrace:
    events = tuple(store.events)
    per_task = {
        t: TaskTrace(t, tuple(e for e in events if e.task == t)) for t in config.graph.tasks
    }
    return BuildTrace(events, per_task, store.snapshot(), tuple(store.steps))


def _runner_for(config: Configuration, task: str, store: MutableStore) -> ScriptRunner:
    try:
        return ScriptRunner(task, config.scripts[task], StorePort(store, task, config.space))
    except BuildError as exc:
        raise TaskFailed(task, exc) from exc


def run_sequential(config: Configuration) -> BuildTrace:
    """Execute tasks one at a time in the serial order; the canonical result."""
    store = MutableStore(config.initial)
    for task in serial_schedule(config.graph):
        runner = _runner_for(config, task, store)
        while not runner.done:
            store.steps.append(task)
            try:
                runner.step()
            except BuildError as exc:
                raise TaskFailed(task, exc) from exc
    return _finish(config, store)


class _RunState:
    """Readiness tracking and auto-completion shared by the driven executors.

    A task activates once all graph predecessors completed; activation that
    yields no pending access completes immediately (in serial order), so every
    interleaving decision corresponds to exactly one access instruction.
    """

    def __init__(self, config: Configuration, store: MutableStore):
        self.config = config
        self.store = store
        self.runners: dict[str, ScriptRunner] = {}
        self.completed: set[str] = set()
        self.preds_left = {t: len(config.graph.predecessors(t)) for t in config.graph.tasks}
        for t in config.graph.tasks:
            if self.preds_left[t] == 0:
                self._activate(t)

    def _activate(self, task: str):
        runner = _runner_for(self.config, task, self.store)
        self.runners[task] = runner
        if runner.done:
            self._complete(task)

    def _complete(self, task: str):
        self.completed.add(task)
        for s in self.config.graph.successors(task):
            self.preds_left[s] -= 1
            if self.preds_left[s] == 0:
                self._activate(s)

    def steppable(self) -> list[str]:
        return [
            t
            for t in self.config.graph.tasks
            if t in self.runners and t not in self.completed
        ]

    def step(self, task: str):
        runner = self.runners.get(task)
        if runner is None or task in self.completed:
            raise InfeasibleChoice(f"task {task!r} cannot perform an access here")
        self.store.steps.append(task)
        try:
            runner.step()
        except BuildError as exc:
            raise TaskFailed(task, exc) from exc
        if runner.done:
            self._complete(task)

    def done(self) -> bool:
        return len(self.completed) == len(self.config.graph.tasks)


def run_interleaved(config: Configuration, choice: Sequence[str]) -> BuildTrace:
    """Deterministically replay one access interleaving in virtual time."""
    store = MutableStore(config.initial)
    rs = _RunState(config, store)
    for task in choice:
        if task not in rs.preds_left:
            raise InfeasibleChoice(f"unknown task {task!r}")
        rs.step(task)
    if not rs.done():
        missing = sorted(set(config.graph.tasks) - rs.completed)
        raise InfeasibleChoice(f"choice ends with unfinished tasks {missing}")
    return _finish(config, store)


StepPolicy = Callable[[Sequence[str], int], str]


def run_with_policy(config: Configuration, policy: StepPolicy) -> BuildTrace:
    """Drive a build in virtual time, asking the policy which task steps next."""
    store = MutableStore(config.initial)
    rs = _RunState(config, store)
    tick = 0
    while not rs.done():
        candidates = rs.steppable()
        if not candidates:
            raise BuildError("no steppable task but the build is unfinished")
        rs.step(policy(candidates, tick))
        tick += 1
    return _finish(config, store)


def random_interleaving(config: Configuration, rng) -> tuple[str, ...]:
    """A feasible access interleaving sampled uniformly-ish at each step."""
    return run_with_policy(config, lambda cands, _t: rng.choice(cands)).steps


def run_parallel(config: Configuration, workers: int) -> tuple[BuildTrace, ValidityReport]:
    """Dispatch ready tasks to real worker threads; validity checked afterwards.

    On an invalid configuration the final state is still returned, flagged by
    the report, because inference needs the traces.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    store = MutableStore(config.initial)
    graph = config.graph
    cond = threading.Condition()
    preds_left = {t: len(graph.predecessors(t)) for t in graph.tasks}
    ready: list[str] = [t for t in graph.tasks if preds_left[t] == 0]
    completed: set[str] = set()
    failures: list[TaskFailed] = []

    def complete(task: str):
        completed.add(task)
        for s in graph.successors(task):
            preds_left[s] -= 1
            if preds_left[s] == 0:
                ready.append(s)
        ready.sort(key=graph.index)
        cond.notify_all()

    def loop():
        while True:
            with cond:
                while not ready and len(completed) < len(graph.tasks) and not failures:
                    cond.wait()
                if failures or len(completed) == len(graph.tasks):
                    return
                task = ready.pop(0)
            try:
                runner = _runner_for(config, task, store)
                while not runner.done:
                    with store.lock:
                        store.steps.append(task)
                        runner.step()
            except BuildError as exc:
                failure = exc if isinstance(exc, TaskFailed) else TaskFailed(task, exc)
                with cond:
                    failures.append(failure)
                    cond.notify_all()
                return
            with cond:
                complete(task)

    threads = [threading.Thread(target=loop, daemon=True) for _ in range(workers)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if failures:
        raise failures[0]
    trace = _finish(config, store)
    return trace, check_validity(graph, trace.per_task)


def trace_lines(trace: BuildTrace) -> str:
    """Line-oriented export: `seq task kind resource valuehash`, byte-exact."""
    lines = []
    for seq, e in enumerate(trace.events):
        lines.append(f"{seq} {e.task} {e.kind} {e.target} {value_digest(e.value)[:16]}")
    return "\n".join(lines) + ("\n" if lines else "")


def trace_skeletons(text: str, tasks: Sequence[str]) -> dict[str, TaskTrace]:
    """Rebuild per-task traces from an exported trace file.

    Values are not recoverable from the export (only their hashes), so events
    carry ABSENT placeholders; targets and kinds are exact, which is all that
    conflict detection and frontier computation need. A trailing `*` marks a
    collection listing target (concrete names may not end in `*`).
    """
    from .resources import PrefixSet

    per_task: dict[str, list[AccessEvent]] = {t: [] for t in tasks}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 5:
            raise BuildError(f"trace line {lineno}: expected 5 fields, got {len(parts)}")
        _seq, task, kind, target, _digest = parts
        resolved = PrefixSet(target[:-1]) if target.endswith("*") else target
        per_task.setdefault(task, []).append(AccessEvent(task, kind, resolved, ABSENT))
    return {t: TaskTrace(t, tuple(events)) for t, events in per_task.items()}


def durations_from_trace(trace: BuildTrace) -> dict[str, int]:
    """Virtual durations measured as access-instruction counts, minimum 1."""
    counts: dict[str, int] = {}
    for task in trace.steps:
        counts[task] = counts.get(task, 0) + 1
    return {t: max(1, counts.get(t, 0)) for t in trace.per_task}
