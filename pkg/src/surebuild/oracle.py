"""Brute-force ground truth: exhaustive interleaving enumeration and optimal
schedules on tiny configurations.

The enumeration explores every feasible access interleaving depth-first,
executing through the same store and interpreter as the real executors, so a
fault injected into the store surfaces here. Memoization keys capture the
full future-determining state (shared state digest, each live task's program
point and bound variables, and the completed set); outcome sets compose
upward, and build counts stay exact through DP aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

from .errors import LimitExceeded
from .executor import MutableStore, StorePort, run_sequential
from .graph import Configuration, DependencyGraph
from .resources import PrefixSet, WRITE
from .scripts import ScriptRunner

DEFAULT_MAX_TASKS = 5
DEFAULT_MAX_EVENTS = 4
DEFAULT_MAX_INTERLEAVINGS = 200_000


@dataclass(frozen=True)
class EnumerationResult:
    build_count: int
    verdicts: frozenset[str]
    final_digests: frozenset[str]     # digests of valid builds only
    all_digests: frozenset[str]
    explored_steps: int
    outcomes: tuple[tuple[str, bool, tuple[str, ...]], ...]  # (digest, valid, witness)


@dataclass(frozen=True)
class TheoremResult:
    passed: bool
    reason: str
    counterexample: tuple[tuple[str, ...], tuple[str, ...]] | None
    enumeration: EnumerationResult | None


_EMPTY_SUMMARY = (frozenset(), frozenset(), frozenset())


def _merge_summaries(order, a, b):
    if a is None:
        return b
    return tuple(
        (aw | bw, ar | br, ap | bp)
        for (aw, ar, ap), (bw, br, bp) in zip(a, b)
    )


def _summary_of_events(order, index_of, events):
    per = [None] * len(order)
    for e in events:
        i = index_of[e.task]
        w, r, p = per[i] or _EMPTY_SUMMARY
        if e.kind == WRITE:
            w = w | {e.target}
        elif isinstance(e.target, PrefixSet):
            p = p | {e.target.prefix}
        else:
            r = r | {e.target}
        per[i] = (w, r, p)
    return tuple(s or _EMPTY_SUMMARY for s in per)


def _pair_conflicts(summary, i, j) -> bool:
    wi, ri, pi = summary[i]
    wj, rj, pj = summary[j]
    if wi & (wj | rj) or wj & (wi | ri):
        return True
    if any(w.startswith(p) for w in wi for p in pj):
        return True
    return any(w.startswith(p) for w in wj for p in pi)


class _Node:
    """One point in the interleaving search: a store plus live runners."""

    __slots__ = ("config", "store", "runners", "completed", "preds_left")

    def __init__(self, config: Configuration):
        self.config = config
        self.store = MutableStore(config.initial)
        self.runners: dict[str, ScriptRunner] = {}
        self.completed: set[str] = set()
        self.preds_left = {t: len(config.graph.predecessors(t)) for t in config.graph.tasks}
        for t in config.graph.tasks:
            if self.preds_left[t] == 0:
                self._activate(t)

    def _activate(self, task):
        runner = ScriptRunner(
            task, self.config.scripts[task], StorePort(self.store, task, self.config.space)
        )
        self.runners[task] = runner
        if runner.done:
            self._complete(task)

    def _complete(self, task):
        self.completed.add(task)
        for s in self.config.graph.successors(task):
            self.preds_left[s] -= 1
            if self.preds_left[s] == 0:
                self._activate(s)

    def steppable(self):
        return [
            t for t in self.config.graph.tasks if t in self.runners and t not in self.completed
        ]

    def step_capture(self, task):
        """Advance one access instruction; return the events it produced."""
        before = len(self.store.events)
        self.runners[task].step()
        produced = tuple(self.store.events[before:])
        if self.runners[task].done:
            self._complete(task)
        return produced

    def key(self):
        live = tuple(
            (t, r.local_key())
            for t, r in sorted(self.runners.items())
            if t not in self.completed
        )
        return (self.store.snapshot().digest(), frozenset(self.completed), live)

    def clone(self):
        dup = object.__new__(_Node)
        dup.config = self.config
        dup.store = MutableStore(self.store.snapshot())
        dup.runners = {
            t: r.clone(StorePort(dup.store, t, self.config.space)) for t, r in self.runners.items()
        }
        dup.completed = set(self.completed)
        dup.preds_left = dict(self.preds_left)
        return dup


def enumerate_builds(
    config: Configuration,
    *,
    max_tasks: int = DEFAULT_MAX_TASKS,
    max_events_per_task: int = DEFAULT_MAX_EVENTS,
    max_interleavings: int = DEFAULT_MAX_INTERLEAVINGS,
    memoize: bool = True,
) -> EnumerationResult:
    """Execute every feasible maximal interleaving and collect the outcomes.

    The interleaving limit caps explored steps (work); with memoization the
    exact DP build count can legitimately exceed it.
    """
    order = config.graph.tasks
    if len(order) > max_tasks:
        raise LimitExceeded(f"{len(order)} tasks exceeds the limit of {max_tasks}")
    index_of = {t: i for i, t in enumerate(order)}
    memo: dict = {}
    explored = 0

    def explore(node: _Node):
        nonlocal explored
        if not node.steppable():
            # All tasks complete: one finished build.
            return {(node.store.snapshot().digest(), tuple([_EMPTY_SUMMARY] * len(order))): ()}, 1
        key = node.key() if memoize else None
        if memoize and key in memo:
            return memo[key]
        outcomes: dict = {}
        count = 0
        for task in node.steppable():
            explored += 1
            if explored > max_interleavings:
                raise LimitExceeded(
                    f"exploration exceeded {max_interleavings} steps; tighten the configuration"
                )
            child = node.clone()
            events = child.step_capture(task)
            if child.runners[task].steps_taken > max_events_per_task:
                raise LimitExceeded(
                    f"task {task!r} exceeded {max_events_per_task} accesses"
                )
            delta = _summary_of_events(order, index_of, events)
            sub, sub_count = explore(child)
            count += sub_count
            for (digest, summary), witness in sub.items():
                merged = _merge_summaries(order, delta, summary)
                k = (digest, merged)
                if k not in outcomes:
                    outcomes[k] = (task,) + witness
        if memoize:
            memo[key] = (outcomes, count)
        return outcomes, count

    outcomes, count = explore(_Node(config))

    detail = []
    verdicts = set()
    valid_digests = set()
    all_digests = set()
    for (digest, summary), witness in sorted(outcomes.items(), key=lambda kv: kv[1]):
        valid = True
        for i, j in combinations(range(len(order)), 2):
            if _pair_conflicts(summary, i, j) and not config.graph.ordered(order[i], order[j]):
                valid = False
                break
        detail.append((digest, valid, witness))
        verdicts.add("Valid" if valid else "Invalid")
        all_digests.add(digest)
        if valid:
            valid_digests.add(digest)
    return EnumerationResult(
        count,
        frozenset(verdicts),
        frozenset(valid_digests),
        frozenset(all_digests),
        explored,
        tuple(detail),
    )


def theorem_check(
    config: Configuration,
    *,
    max_tasks: int = DEFAULT_MAX_TASKS,
    max_events_per_task: int = DEFAULT_MAX_EVENTS,
    max_interleavings: int = DEFAULT_MAX_INTERLEAVINGS,
    memoize: bool = True,
) -> TheoremResult:
    """Machine-check verdict uniformity and valid-state uniqueness.

    Pass iff every enumerated build shares one verdict and, when that verdict
    is Valid, exactly one final state equal to the sequential build's. A
    counterexample is two replayable interleavings that disagree; its
    existence indicates an engine bug.
    """
    enum = enumerate_builds(
        config,
        max_tasks=max_tasks,
        max_events_per_task=max_events_per_task,
        max_interleavings=max_interleavings,
        memoize=memoize,
    )
    by_verdict: dict[bool, tuple[str, ...]] = {}
    by_digest: dict[str, tuple[str, ...]] = {}
    for digest, valid, witness in enum.outcomes:
        by_verdict.setdefault(valid, witness)
        by_digest.setdefault(digest, witness)
    if len(by_verdict) > 1:
        return TheoremResult(
            False,
            "mixed verdicts across interleavings",
            (by_verdict[True], by_verdict[False]),
            enum,
        )
    if "Valid" in enum.verdicts:
        sequential = run_sequential(config)
        if len(enum.final_digests) > 1:
            a, b = sorted(enum.final_digests)[:2]
            return TheoremResult(
                False, "valid builds disagree on the final state", (by_digest[a], by_digest[b]), enum
            )
        (only,) = enum.final_digests
        if only != sequential.final_state.digest():
            return TheoremResult(
                False,
                "valid builds diverge from the sequential final state",
                (sequential.steps, by_digest[only]),
                enum,
            )
    return TheoremResult(True, "uniform verdict" + (", single final state" if "Valid" in enum.verdicts else ""), None, enum)


def optimal_makespan(
    graph: DependencyGraph,
    durations: Mapping[str, float] | None = None,
    workers: int = 2,
    *,
    max_tasks: int = 8,
) -> float:
    """Exhaustive branch-and-bound over non-preemptive schedules."""
    if len(graph.tasks) > max_tasks:
        raise LimitExceeded(f"{len(graph.tasks)} tasks exceeds the limit of {max_tasks}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    from .graph import critical_path_lengths, list_schedule

    if not graph.tasks:
        return 0.0
    dur = {t: (1.0 if durations is None else float(durations.get(t, 1.0))) for t in graph.tasks}
    cpl = critical_path_lengths(graph, dur)
    best = list_schedule(graph, workers, dur).makespan
    total = sum(dur.values())
    preds = {t: graph.predecessors(t) for t in graph.tasks}
    seen: dict = {}

    def search(completed: frozenset, running: tuple, now: float):
        nonlocal best
        remaining_tasks = [t for t in graph.tasks if t not in completed]
        if not remaining_tasks:
            best = min(best, now)
            return
        running_tasks = {t for _e, t in running}
        bound = now
        for t in remaining_tasks:
            if t in running_tasks:
                end = next(e for e, rt in running if rt == t)
                bound = max(bound, end + cpl[t] - dur[t])
            else:
                bound = max(bound, now + cpl[t])
        work_left = sum(dur[t] for t in remaining_tasks if t not in running_tasks)
        work_left += sum(e - now for e, _t in running)
        bound = max(bound, now + work_left / workers)
        if bound >= best - 1e-9:
            return
        key = (completed, tuple(sorted((round(e - now, 9), t) for e, t in running)))
        prior = seen.get(key)
        if prior is not None and prior <= now + 1e-9:
            return
        seen[key] = now

        ready = [
            t
            for t in graph.tasks
            if t not in completed and t not in running_tasks and all(p in completed for p in preds[t])
        ]
        free = workers - len(running)
        options: list[tuple] = []
        for k in range(min(free, len(ready)), 0, -1):
            options.extend(combinations(ready, k))
        if running:
            options.append(())
        for chosen in options:
            new_running = list(running) + [(now + dur[t], t) for t in chosen]
            if not new_running:
                continue
            new_running.sort()
            horizon = new_running[0][0]
            finished = frozenset(completed | {t for e, t in new_running if e <= horizon + 1e-9})
            still = tuple((e, t) for e, t in new_running if e > horizon + 1e-9)
            search(finished, still, horizon)

    search(frozenset(), (), 0.0)
    return best
