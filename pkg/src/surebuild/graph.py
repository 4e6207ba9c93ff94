"""Dependency graphs, configurations, validity checking, and scheduling.

The declared task list is the serial order and must topologically sort the
edge set; every schedule and every inference step preserves that invariant, so
builds are reproducible run to run.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .errors import CycleDetected, MissingTrace, SerialOrderViolation
from .resources import (
    ABSENT,
    AccessEvent,
    EMPTY_SPACE,
    ResourceSpace,
    SharedState,
    WRITE,
    conflicts,
    contract_state,
)
from .scripts import TaskScript, TaskTrace

DECLARED = "declared"
INFERRED = "inferred"


@dataclass(frozen=True)
class DependencyGraph:
    """DAG over tasks; an edge (f, g) means g depends on f."""

    tasks: tuple[str, ...]
    edges: frozenset[tuple[str, str]] = frozenset()
    tags: Mapping[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "edges", frozenset(self.edges))
        if len(set(self.tasks)) != len(self.tasks):
            raise SerialOrderViolation("duplicate task names")
        pos = {t: i for i, t in enumerate(self.tasks)}
        for f, t in self.edges:
            if f not in pos or t not in pos:
                raise SerialOrderViolation(f"edge ({f!r}, {t!r}) names an unknown task")
            if f == t:
                raise CycleDetected(f"self edge on {f!r}")
            if pos[f] >= pos[t]:
                raise SerialOrderViolation(
                    f"edge ({f!r}, {t!r}) points backwards in the serial order"
                )
        tags = {e: self.tags.get(e, DECLARED) for e in self.edges}
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "_pos", pos)

    def index(self, task: str) -> int:
        return self._pos[task]

    def successors(self, task: str) -> tuple[str, ...]:
        return tuple(t for f, t in sorted(self.edges, key=lambda e: self._pos[e[1]]) if f == task)

    def predecessors(self, task: str) -> tuple[str, ...]:
        return tuple(f for f, t in sorted(self.edges, key=lambda e: self._pos[e[0]]) if t == task)

    @cached_property
    def _descendants(self) -> dict[str, frozenset[str]]:
        succ: dict[str, set[str]] = {t: set() for t in self.tasks}
        for f, t in self.edges:
            succ[f].add(t)
        desc: dict[str, frozenset[str]] = {}
        for t in reversed(self.tasks):
            acc: set[str] = set()
            for s in succ[t]:
                acc.add(s)
                acc |= desc[s]
            desc[t] = frozenset(acc)
        return desc

    def descendants(self, task: str) -> frozenset[str]:
        return self._descendants[task]

    def has_path(self, a: str, b: str) -> bool:
        return b in self._descendants[a]

    def ordered(self, a: str, b: str) -> bool:
        """True iff a directed path joins the two tasks in either direction."""
        return self.has_path(a, b) or self.has_path(b, a)

    def with_edges(self, new_edges: Iterable[tuple[str, str]], tag: str = INFERRED) -> "DependencyGraph":
        tags = dict(self.tags)
        merged = set(self.edges)
        for e in new_edges:
            e = (e[0], e[1])
            if e not in merged:
                merged.add(e)
                tags[e] = tag
        return DependencyGraph(self.tasks, frozenset(merged), tags)

    def without_inferred(self) -> "DependencyGraph":
        kept = {e for e in self.edges if self.tags[e] == DECLARED}
        return DependencyGraph(self.tasks, frozenset(kept), {e: DECLARED for e in kept})

    def inferred_edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(e for e in self.edges if self.tags[e] == INFERRED)


@dataclass(frozen=True)
class Configuration:
    """A dependency graph plus scripts, an initial state, and a resource space."""

    graph: DependencyGraph
    scripts: Mapping[str, TaskScript]
    initial: SharedState
    space: ResourceSpace = EMPTY_SPACE

    def __post_init__(self):
        missing = [t for t in self.graph.tasks if t not in self.scripts]
        if missing:
            raise SerialOrderViolation(f"tasks without scripts: {missing}")

    def with_graph(self, graph: DependencyGraph) -> "Configuration":
        return Configuration(graph, self.scripts, self.initial, self.space)

    def with_edges(self, edges: Iterable[tuple[str, str]], tag: str = INFERRED) -> "Configuration":
        return self.with_graph(self.graph.with_edges(edges, tag))

    def with_initial(self, state: SharedState) -> "Configuration":
        return Configuration(self.graph, self.scripts, state, self.space)

    def with_space(self, space: ResourceSpace) -> "Configuration":
        """Swap the resource space, rewriting the initial state into merged form."""
        return Configuration(self.graph, self.scripts, contract_state(self.initial, space), space)


@dataclass(frozen=True)
class ValidityReport:
    """Verdict plus every conflicting unordered pair and its witness resources."""

    valid: bool
    violations: Mapping[tuple[str, str], frozenset[str]]

    @property
    def verdict(self) -> str:
        return "Valid" if self.valid else "Invalid"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "violations": [
                {"tasks": list(pair), "resources": sorted(res)}
                for pair, res in sorted(self.violations.items())
            ],
        }


def check_validity(graph: DependencyGraph, traces: Mapping[str, TaskTrace]) -> ValidityReport:
    """Conflicting pairs with no directed path either way are violations."""
    for t in graph.tasks:
        if t not in traces:
            raise MissingTrace(t)
    violations: dict[tuple[str, str], frozenset[str]] = {}
    for i, a in enumerate(graph.tasks):
        for b in graph.tasks[i + 1:]:
            if graph.ordered(a, b):
                continue
            clash = conflicts(traces[a].events, traces[b].events)
            if clash:
                violations[(a, b)] = clash
    return ValidityReport(not violations, violations)


def serial_schedule(graph: DependencyGraph) -> tuple[str, ...]:
    """The declared serial order, which the graph invariant keeps topological."""
    return graph.tasks


@dataclass(frozen=True)
class Assignment:
    task: str
    worker: int
    start: float
    end: float


@dataclass(frozen=True)
class Schedule:
    workers: int
    assignments: tuple[Assignment, ...]

    @property
    def makespan(self) -> float:
        return max((a.end for a in self.assignments), default=0.0)

    def by_task(self) -> dict[str, Assignment]:
        return {a.task: a for a in self.assignments}

    def to_json(self) -> dict:
        return {
            "workers": self.workers,
            "makespan": self.makespan,
            "assignments": [
                {"task": a.task, "worker": a.worker, "start": a.start, "end": a.end}
                for a in self.assignments
            ],
        }


def _normalize_durations(graph: DependencyGraph, durations: Mapping[str, float] | None) -> dict[str, float]:
    out = {}
    for t in graph.tasks:
        d = 1.0 if durations is None else float(durations.get(t, 1.0))
        if d <= 0:
            raise ValueError(f"duration for {t!r} must be positive")
        out[t] = d
    return out


def critical_path_lengths(graph: DependencyGraph, durations: Mapping[str, float] | None = None) -> dict[str, float]:
    """Downstream critical path length including the task itself."""
    dur = _normalize_durations(graph, durations)
    succ: dict[str, list[str]] = {t: [] for t in graph.tasks}
    for f, t in graph.edges:
        succ[f].append(t)
    cpl: dict[str, float] = {}
    for t in reversed(graph.tasks):
        cpl[t] = dur[t] + max((cpl[s] for s in succ[t]), default=0.0)
    return cpl


def _greedy_schedule(graph: DependencyGraph, workers: int, durations, rank) -> Schedule:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    dur = _normalize_durations(graph, durations)
    preds_left = {t: len(graph.predecessors(t)) for t in graph.tasks}
    ready = [t for t in graph.tasks if preds_left[t] == 0]
    running: list[tuple[float, int, str]] = []  # (end, worker, task)
    free = list(range(workers))
    assignments: list[Assignment] = []
    now = 0.0
    scheduled = 0
    while ready or running:
        ready.sort(key=rank)
        while ready and free:
            task = ready.pop(0)
            worker = heapq.heappop(free)
            end = now + dur[task]
            assignments.append(Assignment(task, worker, now, end))
            heapq.heappush(running, (end, worker, task))
            scheduled += 1
        if not running:
            break
        now = running[0][0]
        while running and running[0][0] == now:
            _, worker, task = heapq.heappop(running)
            heapq.heappush(free, worker)
            for s in graph.successors(task):
                preds_left[s] -= 1
                if preds_left[s] == 0:
                    ready.append(s)
    if scheduled != len(graph.tasks):
        raise CycleDetected("not all tasks became ready")
    return Schedule(workers, tuple(assignments))


def list_schedule(graph: DependencyGraph, workers: int, durations: Mapping[str, float] | None = None) -> Schedule:
    """Greedy online schedule; ready-queue ties break by serial position."""
    return _greedy_schedule(graph, workers, durations, rank=lambda t: graph.index(t))


def priority_schedule(graph: DependencyGraph, workers: int, durations: Mapping[str, float] | None = None) -> Schedule:
    """Greedy schedule preferring the longest downstream critical path."""
    cpl = critical_path_lengths(graph, durations)
    return _greedy_schedule(graph, workers, durations, rank=lambda t: (-cpl[t], graph.index(t)))


def verify_schedule(schedule: Schedule, graph: DependencyGraph, durations: Mapping[str, float] | None = None) -> list[str]:
    """Structural checks: every task once, edges respected, workers not overlapped,
    durations honored, and the greedy no-idle property. Returns found problems."""
    dur = _normalize_durations(graph, durations)
    problems: list[str] = []
    by_task = schedule.by_task()
    if set(by_task) != set(graph.tasks):
        problems.append("schedule does not cover the task set exactly")
        return problems
    for a in schedule.assignments:
        if abs((a.end - a.start) - dur[a.task]) > 1e-9:
            problems.append(f"{a.task}: wrong duration")
        if not 0 <= a.worker < schedule.workers:
            problems.append(f"{a.task}: bad worker {a.worker}")
    for f, t in graph.edges:
        if by_task[t].start + 1e-9 < by_task[f].end:
            problems.append(f"edge ({f}, {t}) not respected")
    per_worker: dict[int, list[Assignment]] = {}
    for a in schedule.assignments:
        per_worker.setdefault(a.worker, []).append(a)
    for worker, items in per_worker.items():
        items.sort(key=lambda a: a.start)
        for x, y in zip(items, items[1:]):
            if y.start + 1e-9 < x.end:
                problems.append(f"worker {worker}: {x.task} and {y.task} overlap")
    times = sorted({a.start for a in schedule.assignments} | {a.end for a in schedule.assignments})
    for t0 in times:
        if t0 >= schedule.makespan:
            break
        running = sum(1 for a in schedule.assignments if a.start <= t0 < a.end)
        idle = schedule.workers - running
        ready = [
            t
            for t in graph.tasks
            if by_task[t].start > t0
            and all(by_task[p].end <= t0 + 1e-9 for p in graph.predecessors(t))
        ]
        if idle > 0 and ready:
            problems.append(f"t={t0}: {idle} idle workers while {ready} ready")
    return problems


def incremental_frontier(
    graph: DependencyGraph,
    traces: Mapping[str, TaskTrace],
    d_writes: Iterable[str],
    changed_tasks: Iterable[str] = (),
) -> frozenset[str]:
    """Tasks conflicting with the synthetic developer task, closed under descendants.

    The developer task writes exactly d_writes; tasks whose scripts changed are
    seeded into the frontier directly.
    """
    for t in graph.tasks:
        if t not in traces:
            raise MissingTrace(t)
    d_events = tuple(AccessEvent("(d)", WRITE, name, ABSENT) for name in sorted(set(d_writes)))
    seed = {t for t in graph.tasks if conflicts(traces[t].events, d_events)}
    seed.update(changed_tasks)
    closure = set(seed)
    for t in seed:
        closure |= graph.descendants(t)
    return frozenset(closure)
