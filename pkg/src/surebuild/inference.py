"""Offline dependency inference and hash-based change detection.

Edges are inferred from the violations of an invalid build, directed by the
serial order, and the build is repeated until valid; termination is bounded
because at most n(n-1)/2 forward edges exist. Change detection digests every
resource value and every task script, and the diff between snapshots is the
write set of the synthetic developer task.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import BuildError, DescriptionError, IncrementalIneligible
from .executor import BuildTrace, run_sequential
from .graph import (
    Configuration,
    DependencyGraph,
    ValidityReport,
    check_validity,
    incremental_frontier,
)
from .resources import SharedState, encode_value
from .scripts import TaskScript, run_task, script_canonical


def script_digest(script: TaskScript) -> str:
    return hashlib.sha256(script_canonical(script).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ResourceDigestDb:
    """Content digests of a state plus script digests, with the incremental
    eligibility verdict computed while the snapshotted state still existed."""

    resources: Mapping[str, str]
    scripts: Mapping[str, str]
    incremental_eligible: bool | None = None

    def to_json(self) -> dict:
        out = {
            "resources": dict(sorted(self.resources.items())),
            "scripts": dict(sorted(self.scripts.items())),
        }
        if self.incremental_eligible is not None:
            out["incremental_eligible"] = self.incremental_eligible
        return out

    @classmethod
    def from_json(cls, obj, where: str = "digest-db") -> "ResourceDigestDb":
        if not isinstance(obj, dict):
            raise DescriptionError("expected an object", where)
        res = obj.get("resources", {})
        scr = obj.get("scripts", {})
        if not isinstance(res, dict) or not isinstance(scr, dict):
            raise DescriptionError("resources and scripts must be objects", where)
        return cls(dict(res), dict(scr), obj.get("incremental_eligible"))


def dumps_db(db: ResourceDigestDb) -> str:
    return json.dumps(db.to_json(), sort_keys=True, indent=2) + "\n"


def loads_db(text: str, where: str = "digest-db") -> ResourceDigestDb:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptionError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", where) from exc
    return ResourceDigestDb.from_json(obj, where)


def snapshot(state: SharedState, scripts: Mapping[str, TaskScript]) -> ResourceDigestDb:
    """Digest every mapped resource and every script; absent resources are implicit."""
    return ResourceDigestDb(
        {name: hashlib.sha256(encode_value(value)).hexdigest() for name, value in state.entries.items()},
        {task: script_digest(s) for task, s in scripts.items()},
    )


def diff(
    db: ResourceDigestDb,
    state: SharedState,
    scripts: Mapping[str, TaskScript],
) -> tuple[frozenset[str], frozenset[str]]:
    """Changed resources (the developer task's write set) and changed-script tasks."""
    fresh = snapshot(state, scripts)
    changed = {
        name
        for name in set(db.resources) | set(fresh.resources)
        if db.resources.get(name) != fresh.resources.get(name)
    }
    changed_tasks = {
        task
        for task in set(db.scripts) | set(fresh.scripts)
        if db.scripts.get(task) != fresh.scripts.get(task)
    }
    return frozenset(changed), frozenset(changed_tasks)


# ---------------------------------------------------------------------------
# Edge inference.

@dataclass(frozen=True)
class InferredEdge:
    src: str
    dst: str
    build_id: str
    conflict: frozenset[str]

    def to_json(self) -> dict:
        return {
            "from": self.src,
            "to": self.dst,
            "build": self.build_id,
            "conflict": sorted(self.conflict),
        }


def infer_edges(
    report: ValidityReport,
    serial_order: Sequence[str],
    build_id: str = "build-0",
) -> tuple[InferredEdge, ...]:
    """One edge per violating pair, directed earlier to later in serial order."""
    pos = {t: i for i, t in enumerate(serial_order)}
    out = []
    for (a, b), clash in sorted(report.violations.items()):
        src, dst = (a, b) if pos[a] < pos[b] else (b, a)
        out.append(InferredEdge(src, dst, build_id, clash))
    return tuple(out)


def infer_until_valid(config: Configuration) -> tuple[Configuration, int, tuple[InferredEdge, ...]]:
    """Run, check, add inferred edges, and repeat until the build is valid.

    Traces come from sequential execution, which is always feasible and
    already reflects serial-order behavior. Returns the augmented
    configuration, the number of edge-adding iterations, and the new edges.
    """
    added: list[InferredEdge] = []
    iterations = 0
    n = len(config.graph.tasks)
    limit = n * (n - 1) // 2 + 1
    while True:
        trace = run_sequential(config)
        report = check_validity(config.graph, trace.per_task)
        if report.valid:
            return config, iterations, tuple(added)
        iterations += 1
        if iterations > limit:
            raise BuildError("edge inference failed to converge")
        delta = infer_edges(report, config.graph.tasks, build_id=f"seq-{iterations}")
        added.extend(delta)
        config = config.with_edges([(e.src, e.dst) for e in delta])


def prune_inferred(config: Configuration) -> tuple[Configuration, tuple[InferredEdge, ...]]:
    """Erase all inferred edges, then re-infer from scratch."""
    bare = config.with_graph(config.graph.without_inferred())
    rebuilt, _iterations, added = infer_until_valid(bare)
    return rebuilt, added


def edges_to_text(edges: Iterable[InferredEdge]) -> str:
    payload = {"edges": [e.to_json() for e in sorted(edges, key=lambda e: (e.src, e.dst))]}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def edges_from_text(text: str, where: str = "edges") -> tuple[InferredEdge, ...]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptionError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", where) from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("edges"), list):
        raise DescriptionError("expected {\"edges\": [...]}", where)
    out = []
    for i, rec in enumerate(obj["edges"]):
        if not isinstance(rec, dict) or "from" not in rec or "to" not in rec:
            raise DescriptionError("edge needs from/to", f"{where}.edges[{i}]")
        out.append(
            InferredEdge(
                rec["from"],
                rec["to"],
                rec.get("build", "unknown"),
                frozenset(rec.get("conflict", ())),
            )
        )
    return tuple(out)


# ---------------------------------------------------------------------------
# Incremental pipeline.

def no_effect_offenders(config: Configuration, final_state: SharedState) -> tuple[str, ...]:
    """Tasks whose solo re-run on the final state changes it.

    Right after a build, re-running any one task must change nothing; a task
    that does change the state makes incremental mode unsound (its effects
    depend on mid-build intermediate values).
    """
    offenders = []
    for task in config.graph.tasks:
        _trace, after = run_task(
            config.scripts[task], final_state, space=config.space, task=task
        )
        if after.digest() != final_state.digest():
            offenders.append(task)
    return tuple(offenders)


def make_snapshot(config: Configuration, final_state: SharedState) -> ResourceDigestDb:
    """Snapshot a finished build and record incremental eligibility."""
    db = snapshot(final_state, config.scripts)
    eligible = not no_effect_offenders(config, final_state)
    return ResourceDigestDb(db.resources, db.scripts, eligible)


@dataclass(frozen=True)
class IncrementalResult:
    final_state: SharedState
    executed: tuple[str, ...]
    skipped: tuple[str, ...]
    d_writes: frozenset[str]
    changed_tasks: frozenset[str]
    trace: BuildTrace
    db: ResourceDigestDb


def run_incremental(
    config: Configuration,
    db: ResourceDigestDb,
    prior_traces: Mapping[str, "object"],
    current_state: SharedState,
) -> IncrementalResult:
    """Diff, compute the frontier, and execute exactly the frontier in order."""
    if db.incremental_eligible is not True:
        raise IncrementalIneligible(
            "snapshot does not certify the no-effect assumption; rerun a full build"
        )
    d_writes, changed_tasks = diff(db, current_state, config.scripts)
    # Tasks that vanished from the description cannot run; new tasks are in
    # the change set because their digest is new.
    changed_tasks = changed_tasks & set(config.graph.tasks)
    frontier = incremental_frontier(config.graph, prior_traces, d_writes, changed_tasks)
    ordered = tuple(t for t in config.graph.tasks if t in frontier)
    skipped = tuple(t for t in config.graph.tasks if t not in frontier)

    sub_graph = DependencyGraph(
        ordered,
        frozenset(e for e in config.graph.edges if e[0] in frontier and e[1] in frontier),
        {e: config.graph.tags[e] for e in config.graph.edges if e[0] in frontier and e[1] in frontier},
    )
    sub_config = Configuration(
        sub_graph,
        {t: config.scripts[t] for t in ordered},
        current_state,
        config.space,
    )
    trace = run_sequential(sub_config)
    new_db = make_snapshot(config, trace.final_state)
    return IncrementalResult(
        trace.final_state,
        ordered,
        skipped,
        d_writes,
        changed_tasks,
        trace,
        new_db,
    )
