"""Build description files: parsing, validation, and round-trip serialization.

A description is JSON with the task list (which is the serial order), declared
edges, and resource-space declarations. The initial shared state lives in a
separate state file so one description can build many states.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DescriptionError
from .graph import DECLARED, INFERRED, Configuration, DependencyGraph
from .granularity import Proposal, merge_tasks
from .resources import (
    CollectionSpec,
    ResourceSpace,
    SharedState,
    contract,
    dumps_state,
    loads_state,
)
from .scripts import TaskScript, script_from_json, script_to_json


def _check_name(name, what: str, where: str) -> str:
    if not isinstance(name, str) or not name:
        raise DescriptionError(f"{what} must be a non-empty string", where)
    if any(ch.isspace() for ch in name):
        raise DescriptionError(f"{what} {name!r} must not contain whitespace", where)
    if name.endswith("*"):
        raise DescriptionError(f"{what} {name!r} must not end with '*'", where)
    return name


def parse_description(obj, state: SharedState, where: str = "description") -> Configuration:
    if not isinstance(obj, dict):
        raise DescriptionError("expected a JSON object", where)
    raw_tasks = obj.get("tasks")
    if not isinstance(raw_tasks, list):
        raise DescriptionError("\"tasks\" must be a list", where)
    names: list[str] = []
    scripts: dict[str, TaskScript] = {}
    for i, rec in enumerate(raw_tasks):
        spot = f"{where}.tasks[{i}]"
        if not isinstance(rec, dict):
            raise DescriptionError("task must be an object", spot)
        name = _check_name(rec.get("name"), "task name", spot)
        if name in scripts:
            raise DescriptionError(f"duplicate task {name!r}", spot)
        names.append(name)
        scripts[name] = script_from_json(rec.get("script", []), f"{spot}.script")

    edges = set()
    tags = {}
    for i, rec in enumerate(obj.get("edges", [])):
        spot = f"{where}.edges[{i}]"
        if not isinstance(rec, dict):
            raise DescriptionError("edge must be an object", spot)
        src = _check_name(rec.get("from"), "edge source", spot)
        dst = _check_name(rec.get("to"), "edge target", spot)
        tag = rec.get("tag", DECLARED)
        if tag not in (DECLARED, INFERRED):
            raise DescriptionError(f"unknown edge tag {tag!r}", spot)
        edges.add((src, dst))
        tags[(src, dst)] = tag

    space = ResourceSpace(
        tuple(
            CollectionSpec(_check_name(rec.get("prefix"), "collection prefix", f"{where}.collections[{i}]"))
            for i, rec in enumerate(obj.get("collections", []))
        ),
    )
    for i, rec in enumerate(obj.get("contractions", [])):
        spot = f"{where}.contractions[{i}]"
        if not isinstance(rec, dict):
            raise DescriptionError("contraction must be an object", spot)
        merged = _check_name(rec.get("merged"), "merged resource", spot)
        members = rec.get("members")
        if not isinstance(members, list) or not members:
            raise DescriptionError("members must be a non-empty list", spot)
        space = contract(space, [_check_name(m, "member", spot) for m in members], merged)

    try:
        graph = DependencyGraph(tuple(names), frozenset(edges), tags)
        config = Configuration(graph, scripts, state)
    except Exception as exc:
        raise DescriptionError(str(exc), where) from exc
    return config.with_space(space)


def description_to_json(config: Configuration) -> dict:
    out = {
        "tasks": [
            {"name": t, "script": script_to_json(config.scripts[t])} for t in config.graph.tasks
        ],
        "edges": [
            {"from": f, "to": t, "tag": config.graph.tags[(f, t)]}
            for f, t in sorted(config.graph.edges, key=lambda e: (config.graph.index(e[0]), config.graph.index(e[1])))
        ],
    }
    if config.space.collections:
        out["collections"] = [{"prefix": c.prefix} for c in config.space.collections]
    if config.space.contractions:
        out["contractions"] = [
            {"merged": c.merged, "members": list(c.members)} for c in config.space.contractions
        ]
    return out


def dumps_description(config: Configuration) -> str:
    return json.dumps(description_to_json(config), sort_keys=True, indent=2) + "\n"


def load_json(path: Path, where: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DescriptionError(str(exc), where) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptionError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", where) from exc


def load_configuration(desc_path: Path, state_path: Path) -> Configuration:
    state = loads_state(Path(state_path).read_text(encoding="utf-8"), where=str(state_path))
    return parse_description(load_json(desc_path, str(desc_path)), state, where=str(desc_path))


def save_state(state: SharedState, path: Path) -> None:
    Path(path).write_text(dumps_state(state), encoding="utf-8")


def apply_proposal(config: Configuration, proposal: Proposal) -> Configuration:
    """Apply suggested contractions and task partitions to a configuration."""
    space = config.space
    for merged, members in proposal.contractions:
        space = contract(space, members, merged)
    out = config.with_space(space)
    if proposal.task_partition:
        out = merge_tasks(out, proposal.task_partition)
    return out
