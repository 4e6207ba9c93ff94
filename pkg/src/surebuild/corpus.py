"""Canonical and randomly generated configurations for tests and demos.

The header-generation example ships as the canonical configuration: a
generator task writes a header from a config file, and a compile task reads a
source file plus that header to produce a binary. With no declared edge the
configuration is invalid; one inferred edge fixes it.
"""

from __future__ import annotations

import random

from .graph import Configuration, DependencyGraph
from .resources import (
    ABSENT,
    Bytes,
    CollectionSpec,
    PrefixSet,
    ResourceSpace,
    SharedState,
    contract,
)
from .scripts import Branch, Concat, Lit, ReadInto, TaskScript, Var, WriteFrom

GEN_CONFIG = "file:config"
GEN_SOURCE = "file:foo.c"
GEN_HEADER = "file:generated.h"
GEN_BINARY = "file:foo"

GEN_EXPECTED_HEADER = b"h:c1"
GEN_EXPECTED_BINARY = b"srch:c1"


def gen_scripts() -> dict[str, TaskScript]:
    return {
        "gen": TaskScript.of(
            ReadInto(GEN_CONFIG, "cfg"),
            WriteFrom(GEN_HEADER, Concat((Lit(Bytes(b"h:")), Var("cfg")))),
        ),
        "gcc": TaskScript.of(
            ReadInto(GEN_SOURCE, "src"),
            ReadInto(GEN_HEADER, "hdr"),
            WriteFrom(GEN_BINARY, Concat((Var("src"), Var("hdr")))),
        ),
    }


def gen_initial_state() -> SharedState:
    return SharedState({GEN_CONFIG: Bytes(b"c1"), GEN_SOURCE: Bytes(b"src")})


def gen_configuration(with_edge: bool = False) -> Configuration:
    edges = frozenset({("gen", "gcc")}) if with_edge else frozenset()
    return Configuration(
        DependencyGraph(("gen", "gcc"), edges),
        gen_scripts(),
        gen_initial_state(),
    )


def gen_description(with_edge: bool = False) -> dict:
    """JSON build description for the canonical configuration."""
    desc = {
        "tasks": [
            {
                "name": "gen",
                "script": [
                    {"op": "read", "target": GEN_CONFIG, "var": "cfg"},
                    {
                        "op": "write",
                        "target": GEN_HEADER,
                        "value": {"concat": [{"lit": "h:"}, {"var": "cfg"}]},
                    },
                ],
            },
            {
                "name": "gcc",
                "script": [
                    {"op": "read", "target": GEN_SOURCE, "var": "src"},
                    {"op": "read", "target": GEN_HEADER, "var": "hdr"},
                    {
                        "op": "write",
                        "target": GEN_BINARY,
                        "value": {"concat": [{"var": "src"}, {"var": "hdr"}]},
                    },
                ],
            },
        ],
        "edges": [],
    }
    if with_edge:
        desc["edges"].append({"from": "gen", "to": "gcc"})
    return desc


def gen_state_json() -> dict:
    return gen_initial_state().to_json()


# ---------------------------------------------------------------------------
# Random generation.

_VALUE_POOL = (b"a", b"b", b"c", b"d")


def _random_value(rng: random.Random):
    return Bytes(rng.choice(_VALUE_POOL))


def _random_expr(rng: random.Random, bound: list[str]):
    roll = rng.random()
    if bound and roll < 0.35:
        return Var(rng.choice(bound))
    if bound and roll < 0.55:
        return Concat((Var(rng.choice(bound)), Lit(_random_value(rng))))
    return Lit(_random_value(rng))


def random_configuration(
    rng: random.Random,
    *,
    max_tasks: int = 4,
    max_events: int = 3,
    max_resources: int = 4,
    edge_prob: float = 0.3,
    branch_prob: float = 0.15,
    min_tasks: int = 1,
) -> Configuration:
    """A small random configuration with random scripts, state, and edge set.

    Every task performs at most max_events access instructions on any branch
    path, which keeps exhaustive enumeration tractable.
    """
    n = rng.randint(min_tasks, max_tasks)
    tasks = tuple(f"t{i}" for i in range(n))
    resources = [f"file:r{i}" for i in range(max_resources)]
    scripts: dict[str, TaskScript] = {}
    for task in tasks:
        budget = rng.randint(1, max_events)
        instrs = []
        bound: list[str] = []
        while budget > 0:
            if bound and budget >= 1 and rng.random() < branch_prob:
                then_i, else_i = (
                    WriteFrom(rng.choice(resources), _random_expr(rng, bound)),
                    WriteFrom(rng.choice(resources), _random_expr(rng, bound)),
                )
                instrs.append(Branch(rng.choice(bound), Lit(_random_value(rng)), (then_i,), (else_i,)))
                budget -= 1
            elif rng.random() < 0.5:
                var = f"v{len(bound)}"
                instrs.append(ReadInto(rng.choice(resources), var))
                bound.append(var)
                budget -= 1
            else:
                value = _random_expr(rng, bound) if rng.random() < 0.8 else Lit(ABSENT)
                instrs.append(WriteFrom(rng.choice(resources), value))
                budget -= 1
        scripts[task] = TaskScript.of(*instrs)
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                edges.add((tasks[i], tasks[j]))
    entries = {}
    for name in resources:
        if rng.random() < 0.7:
            entries[name] = _random_value(rng)
    return Configuration(DependencyGraph(tasks, frozenset(edges)), scripts, SharedState(entries))


def random_mutation(rng: random.Random, state: SharedState, *, max_changes: int = 2) -> SharedState:
    """Developer edits between builds: change, create, or delete a few resources."""
    universe = sorted(set(state.entries) | {f"file:m{i}" for i in range(2)})
    k = rng.randint(1, max_changes)
    writes = {}
    for _ in range(k):
        name = rng.choice(universe)
        writes[name] = ABSENT if rng.random() < 0.2 else Bytes(rng.choice(_VALUE_POOL) + b"!")
    return state.write(writes)


def pairwise_conflicting(n: int) -> Configuration:
    """n tasks all writing one shared resource: every pair conflicts."""
    tasks = tuple(f"w{i}" for i in range(n))
    scripts = {
        t: TaskScript.of(WriteFrom("file:shared", Lit(Bytes(f"v{i}".encode()))))
        for i, t in enumerate(tasks)
    }
    return Configuration(DependencyGraph(tasks, frozenset()), scripts, SharedState({}))


def cascade_configuration() -> Configuration:
    """Three tasks chained through shared resources with no declared edges.

    Running the middle and last tasks before the first commits forces a stale
    read whose rollback cascades through the read-from edge.
    """
    scripts = {
        "a": TaskScript.of(WriteFrom("file:x", Lit(Bytes(b"X1")))),
        "b": TaskScript.of(
            ReadInto("file:x", "x"),
            WriteFrom("file:y", Concat((Lit(Bytes(b"y:")), Var("x")))),
        ),
        "c": TaskScript.of(
            ReadInto("file:y", "y"),
            WriteFrom("file:z", Concat((Lit(Bytes(b"z:")), Var("y")))),
        ),
    }
    return Configuration(
        DependencyGraph(("a", "b", "c"), frozenset()),
        scripts,
        SharedState({"file:x": Bytes(b"X0")}),
    )


def random_dag(rng: random.Random, n: int, edge_prob: float = 0.3) -> DependencyGraph:
    tasks = tuple(f"t{i}" for i in range(n))
    edges = {
        (tasks[i], tasks[j])
        for i in range(n)
        for j in range(i + 1, n)
        if rng.random() < edge_prob
    }
    return DependencyGraph(tasks, frozenset(edges))


def random_collection_configuration(rng: random.Random) -> Configuration:
    """Random configuration exercising listings, deletions, and contraction.

    Tasks mix plain resource accesses with directory membership writes and
    listing reads; half the time two plain resources are contracted.
    """
    n = rng.randint(2, 4)
    tasks = tuple(f"t{i}" for i in range(n))
    plain = [f"file:r{i}" for i in range(3)]
    members = [f"dir/m{i}" for i in range(3)]
    scripts = {}
    for t in tasks:
        instrs = []
        bound: list[str] = []
        for _ in range(rng.randint(1, 3)):
            roll = rng.random()
            if roll < 0.2:
                var = f"v{len(bound)}"
                instrs.append(ReadInto(PrefixSet("dir/"), var))
                bound.append(var)
            elif roll < 0.45:
                var = f"v{len(bound)}"
                instrs.append(ReadInto(rng.choice(plain + members), var))
                bound.append(var)
            elif roll < 0.6:
                value = Lit(ABSENT) if rng.random() < 0.3 else Lit(_random_value(rng))
                instrs.append(WriteFrom(rng.choice(members), value))
            else:
                instrs.append(WriteFrom(rng.choice(plain), _random_expr(rng, bound)))
        scripts[t] = TaskScript.of(*instrs)
    edges = {
        (tasks[i], tasks[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3
    }
    entries = {}
    for name in plain + members:
        if rng.random() < 0.6:
            entries[name] = _random_value(rng)
    space = ResourceSpace(collections=(CollectionSpec("dir/"),))
    if rng.random() < 0.5:
        space = contract(space, {"file:r0", "file:r1"}, "merged:r01")
    cfg = Configuration(DependencyGraph(tasks, frozenset(edges)), scripts, SharedState(entries))
    return cfg.with_space(space)
