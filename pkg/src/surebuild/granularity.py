"""Task and resource coarsening that preserves build semantics.

Contractions trade tracking overhead for extra conflicts and can only add
conflicting pairs, never remove them, so coarsening cannot mask invalidity.
Task merging collapses partitions into single tasks whose scripts run as
fresh-scope segments in serial order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DescriptionError, NonContiguousPartition
from .executor import BuildTrace
from .graph import DECLARED, Configuration, DependencyGraph
from .inference import ResourceDigestDb
from .resources import PrefixSet, ResourceSpace, WRITE, contract
from .scripts import TaskScript

OWNED_PREFIX = "merged:owned:"
SYSTEM_RESOURCE = "merged:system"


@dataclass(frozen=True)
class UsageStats:
    """Reader/writer sets per resource plus cross-build modification counts,
    derived purely from stored build traces and digest-db history."""

    readers: Mapping[str, frozenset[str]]
    writers: Mapping[str, frozenset[str]]
    mod_counts: Mapping[str, int]
    task_count: int


def _touched(trace: BuildTrace) -> tuple[dict, dict]:
    readers: dict[str, set[str]] = {}
    writers: dict[str, set[str]] = {}
    concrete = {e.target for e in trace.events if isinstance(e.target, str)}
    for e in trace.events:
        if isinstance(e.target, PrefixSet):
            continue
        bucket = writers if e.kind == WRITE else readers
        bucket.setdefault(e.target, set()).add(e.task)
    # A listing read counts as reading every matching name seen anywhere.
    universe = set(concrete) | set(trace.final_state.entries)
    for e in trace.events:
        if isinstance(e.target, PrefixSet):
            for name in universe:
                if e.target.matches(name):
                    readers.setdefault(name, set()).add(e.task)
    return readers, writers


def usage_stats(traces: Sequence[BuildTrace], dbs: Sequence[ResourceDigestDb] = ()) -> UsageStats:
    readers: dict[str, set[str]] = {}
    writers: dict[str, set[str]] = {}
    tasks: set[str] = set()
    for trace in traces:
        tasks.update(trace.per_task)
        r, w = _touched(trace)
        for name, who in r.items():
            readers.setdefault(name, set()).update(who)
        for name, who in w.items():
            writers.setdefault(name, set()).update(who)
    mods: dict[str, int] = {}
    for before, after in zip(dbs, dbs[1:]):
        for name in set(before.resources) | set(after.resources):
            if before.resources.get(name) != after.resources.get(name):
                mods[name] = mods.get(name, 0) + 1
    return UsageStats(
        {n: frozenset(s) for n, s in readers.items()},
        {n: frozenset(s) for n, s in writers.items()},
        mods,
        len(tasks),
    )


def _contractable(config: Configuration, name: str) -> bool:
    if config.space.resolve(name) is not None:
        return False
    if any(name == c.merged for c in config.space.contractions):
        return False
    return not any(name.startswith(col.prefix) for col in config.space.collections)


def collapse_owned(config: Configuration, trace: BuildTrace) -> ResourceSpace:
    """Contract each task's owned resources (touched by that task alone).

    A resource covered by another task's listing read is not owned. Owned
    resources cannot create cross-task conflicts, so the validity verdict and
    all executor final states are unchanged.
    """
    readers, writers = _touched(trace)
    space = config.space
    for task in config.graph.tasks:
        owned = []
        for name in sorted(set(readers) | set(writers)):
            who = readers.get(name, set()) | writers.get(name, set())
            if who == {task} and _contractable(config, name):
                owned.append(name)
        if len(owned) >= 2:
            space = contract(space, owned, OWNED_PREFIX + task)
    return space


def aggregate_system(
    config: Configuration,
    stats: UsageStats,
    read_threshold: float = 0.75,
    mod_threshold: int = 0,
) -> ResourceSpace:
    """Contract rarely-updated, widely-read resources into one system resource.

    Any later change to the merged resource puts every reader into the
    incremental frontier, which is the intended cost model: long incremental
    builds only on a system update.
    """
    if stats.task_count == 0:
        return config.space
    candidates = []
    for name, readers in sorted(stats.readers.items()):
        if len(readers) / stats.task_count < read_threshold:
            continue
        if stats.mod_counts.get(name, 0) > mod_threshold:
            continue
        if not _contractable(config, name):
            continue
        candidates.append(name)
    if len(candidates) < 2:
        return config.space
    return contract(config.space, candidates, SYSTEM_RESOURCE)


def merge_tasks(config: Configuration, partition: Mapping[str, str]) -> Configuration:
    """Collapse each partition into a single task running member scripts in
    serial order. The quotient graph must stay acyclic and consistent with the
    quotient serial order (partitions ordered by earliest member)."""
    for task in config.graph.tasks:
        if task not in partition:
            raise NonContiguousPartition(f"task {task!r} not assigned to a partition")
    members: dict[str, list[str]] = {}
    for task in config.graph.tasks:
        members.setdefault(partition[task], []).append(task)
    order = sorted(members, key=lambda p: config.graph.index(members[p][0]))
    induced: set[tuple[str, str]] = set()
    tags: dict[tuple[str, str], str] = {}
    for f, t in config.graph.edges:
        pf, pt = partition[f], partition[t]
        if pf == pt:
            continue
        induced.add((pf, pt))
        tag = config.graph.tags[(f, t)]
        if tags.get((pf, pt)) != DECLARED:
            tags[(pf, pt)] = tag
    pos = {p: i for i, p in enumerate(order)}
    for f, t in induced:
        if pos[f] >= pos[t]:
            raise NonContiguousPartition(
                f"partitions {f!r} and {t!r} are not contiguous (quotient edge goes backwards)"
            )
    scripts = {
        p: TaskScript.concatenated(config.scripts[m] for m in members[p]) for p in order
    }
    graph = DependencyGraph(tuple(order), frozenset(induced), tags)
    return Configuration(graph, scripts, config.initial, config.space)


@dataclass(frozen=True)
class Proposal:
    """Advisory coarsening plan; applying it is a separate, explicit step."""

    contractions: tuple[tuple[str, tuple[str, ...]], ...]  # (merged, members)
    task_partition: Mapping[str, str]

    def to_json(self) -> dict:
        return {
            "contractions": [
                {"merged": merged, "members": list(ms)} for merged, ms in self.contractions
            ],
            "task_partition": dict(sorted(self.task_partition.items())),
        }

    @classmethod
    def from_json(cls, obj, where: str = "proposal") -> "Proposal":
        if not isinstance(obj, dict):
            raise DescriptionError("expected an object", where)
        contractions = []
        for i, rec in enumerate(obj.get("contractions", [])):
            if not isinstance(rec, dict) or "merged" not in rec or "members" not in rec:
                raise DescriptionError("contraction needs merged/members", f"{where}.contractions[{i}]")
            contractions.append((rec["merged"], tuple(rec["members"])))
        tp = obj.get("task_partition", {})
        if not isinstance(tp, dict):
            raise DescriptionError("task_partition must be an object", where)
        return cls(tuple(contractions), dict(tp))


def dumps_proposal(proposal: Proposal) -> str:
    return json.dumps(proposal.to_json(), sort_keys=True, indent=2) + "\n"


def loads_proposal(text: str, where: str = "proposal") -> Proposal:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptionError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", where) from exc
    return Proposal.from_json(obj, where)


def suggest_partitions(stats: UsageStats, serial_order: Sequence[str]) -> Proposal:
    """Frequency-banded resource grouping plus greedy task merging.

    Hot resources (modified more than never) stay atomic; cold resources with
    the same reader/writer signature group together. Consecutive serial tasks
    that conflict pairwise already execute sequentially, so merging them costs
    no parallelism.
    """
    groups: dict[tuple, list[str]] = {}
    for name in sorted(set(stats.readers) | set(stats.writers)):
        if stats.mod_counts.get(name, 0) > 0:
            continue
        signature = (
            tuple(sorted(stats.readers.get(name, frozenset()))),
            tuple(sorted(stats.writers.get(name, frozenset()))),
        )
        groups.setdefault(signature, []).append(name)
    contractions = []
    for i, (_sig, names) in enumerate(sorted(groups.items())):
        if len(names) >= 2:
            contractions.append((f"merged:group{i}", tuple(sorted(names))))

    def conflict(a: str, b: str) -> bool:
        for name in set(stats.writers):
            wa = a in stats.writers.get(name, frozenset())
            wb = b in stats.writers.get(name, frozenset())
            ra = a in stats.readers.get(name, frozenset())
            rb = b in stats.readers.get(name, frozenset())
            if (wa and (wb or rb)) or (wb and (wa or ra)):
                return True
        return False

    partition: dict[str, str] = {}
    group_id = 0
    current: list[str] = []
    for task in serial_order:
        if current and all(conflict(task, member) for member in current):
            current.append(task)
        else:
            if current:
                for member in current:
                    partition[member] = f"part{group_id}"
                group_id += 1
            current = [task]
    if current:
        for member in current:
            partition[member] = f"part{group_id}"
    return Proposal(tuple(contractions), partition)
