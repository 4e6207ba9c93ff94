"""Deterministic task scripts: a loop-free DSL plus a steppable interpreter.

Every read yields exactly one resource value (or one collection listing) and
nothing else, so the set of resources that can influence a task equals the set
it actually read. Scripts have no loops and no nondeterminism; an instruction
budget guards against malformed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

from .errors import BuildError, DescriptionError, NonTermination, UnboundVariable
from .resources import (
    ABSENT,
    AccessEvent,
    AccessPort,
    Bytes,
    DictPort,
    EMPTY_SPACE,
    PrefixSet,
    ResourceSpace,
    ResourceValue,
    SharedState,
    Target,
    TupleValue,
    component,
    flatten_bytes,
    value_digest,
    value_from_json,
    value_to_json,
)

DEFAULT_BUDGET = 10_000


# ---------------------------------------------------------------------------
# Expressions: pure functions of bound variables.

@dataclass(frozen=True)
class Lit:
    value: ResourceValue


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Concat:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class Proj:
    base: "Expr"
    index: int


@dataclass(frozen=True)
class TupleExpr:
    parts: tuple["Expr", ...]


Expr = Union[Lit, Var, Concat, Proj, TupleExpr]


def eval_expr(expr: Expr, env: Mapping[str, ResourceValue]) -> ResourceValue:
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Var):
        if expr.name not in env:
            raise UnboundVariable(expr.name)
        return env[expr.name]
    if isinstance(expr, Concat):
        return Bytes(b"".join(flatten_bytes(eval_expr(p, env)) for p in expr.parts))
    if isinstance(expr, Proj):
        return component(eval_expr(expr.base, env), expr.index)
    if isinstance(expr, TupleExpr):
        return TupleValue(tuple(eval_expr(p, env) for p in expr.parts))
    raise TypeError(f"not an expression: {expr!r}")


# ---------------------------------------------------------------------------
# Instructions.

@dataclass(frozen=True)
class ReadInto:
    target: Target
    var: str


@dataclass(frozen=True)
class WriteFrom:
    target: str
    value: Expr


@dataclass(frozen=True)
class Branch:
    var: str
    equals: Expr
    then: tuple["Instr", ...]
    orelse: tuple["Instr", ...] = ()


@dataclass(frozen=True)
class Halt:
    pass


Instr = Union[ReadInto, WriteFrom, Branch, Halt]


@dataclass(frozen=True)
class TaskScript:
    """An ordered list of instructions, possibly in several fresh-scope segments.

    Plain tasks have one segment. Merged tasks carry one segment per original
    task; each segment starts with an empty variable environment and a Halt
    only ends its own segment.
    """

    segments: tuple[tuple[Instr, ...], ...]

    @classmethod
    def of(cls, *instructions: Instr) -> "TaskScript":
        return cls((tuple(instructions),))

    @classmethod
    def concatenated(cls, scripts: Iterable["TaskScript"]) -> "TaskScript":
        segs: list[tuple[Instr, ...]] = []
        for s in scripts:
            segs.extend(s.segments)
        return cls(tuple(segs))


@dataclass(frozen=True)
class TaskTrace:
    task: str
    events: tuple[AccessEvent, ...]


class ScriptRunner:
    """Steps one task through its script, one access instruction at a time.

    advance() moves the program counter to the next access instruction without
    touching shared state; step() performs that access. A task whose remaining
    instructions perform no access completes during advance, so interleaving
    decisions correspond one-to-one with accesses.
    """

    def __init__(self, task: str, script: TaskScript, port: AccessPort, budget: int = DEFAULT_BUDGET):
        self.task = task
        self.script = script
        self.port = port
        self.budget = budget
        self._spent = 0
        self._seg = -1
        self._frames: list[list] = []  # [block tuple, next index]
        self._trail: list[int] = []    # branch arms taken, for state digests
        self._env: dict[str, ResourceValue] = {}
        self._pending: Instr | None = None
        self._done = False
        self.steps_taken = 0
        self._next_segment()
        self._advance()

    @property
    def done(self) -> bool:
        return self._done

    @property
    def pending(self) -> bool:
        return self._pending is not None

    def _next_segment(self):
        self._seg += 1
        if self._seg >= len(self.script.segments):
            self._done = True
            self._frames = []
            return
        self._frames = [[self.script.segments[self._seg], 0]]
        self._env = {}

    def _advance(self):
        while not self._done:
            if not self._frames:
                self._next_segment()
                continue
            block, idx = self._frames[-1][0], self._frames[-1][1]
            if idx >= len(block):
                self._frames.pop()
                continue
            self._frames[-1][1] = idx + 1
            instr = block[idx]
            self._spent += 1
            if self._spent > self.budget:
                raise NonTermination(f"task {self.task!r} exceeded {self.budget} instructions")
            if isinstance(instr, Halt):
                self._frames.clear()
                continue
            if isinstance(instr, Branch):
                if instr.var not in self._env:
                    raise UnboundVariable(f"task {self.task!r}: {instr.var!r}")
                taken = self._env[instr.var] == eval_expr(instr.equals, self._env)
                self._trail.append(1 if taken else 0)
                self._frames.append([instr.then if taken else instr.orelse, 0])
                continue
            self._pending = instr
            return
        self._pending = None

    def step(self) -> None:
        """Perform the pending access. Raises whatever the port raises, in
        which case the runner is left unchanged and the step can be retried."""
        instr = self._pending
        if instr is None:
            raise BuildError(f"task {self.task!r} has no pending access")
        if isinstance(instr, ReadInto):
            value = self.port.read(instr.target)
            self._env[instr.var] = value
        else:
            value = eval_expr(instr.value, self._env)
            self.port.write(instr.target, value)
        self.steps_taken += 1
        self._pending = None
        self._advance()

    def local_key(self):
        """Hashable snapshot of the interpreter state (program point + environment)."""
        return (
            self._seg,
            self._done,
            tuple(self._trail),
            tuple(f[1] for f in self._frames),
            tuple(sorted((k, value_digest(v)) for k, v in self._env.items())),
        )

    def clone(self, port: AccessPort) -> "ScriptRunner":
        dup = object.__new__(ScriptRunner)
        dup.task = self.task
        dup.script = self.script
        dup.port = port
        dup.budget = self.budget
        dup._spent = self._spent
        dup._seg = self._seg
        dup._frames = [[f[0], f[1]] for f in self._frames]
        dup._trail = list(self._trail)
        dup._env = dict(self._env)
        dup._pending = self._pending
        dup._done = self._done
        dup.steps_taken = self.steps_taken
        return dup


def run_task(
    script: TaskScript,
    state: SharedState,
    *,
    space: ResourceSpace = EMPTY_SPACE,
    task: str = "task",
    budget: int = DEFAULT_BUDGET,
) -> tuple[TaskTrace, SharedState]:
    """Run a single script to completion against a private copy of the state."""
    entries = dict(state.entries)
    events: list[AccessEvent] = []
    runner = ScriptRunner(task, script, DictPort(entries, task, space, events.append), budget)
    while not runner.done:
        runner.step()
    return TaskTrace(task, tuple(events)), SharedState(entries)


class _TracePort(AccessPort):
    """Serves reads from a recorded trace, in order; writes go nowhere."""

    def __init__(self, task, space, sink, expected: Sequence[AccessEvent]):
        super().__init__(task, space, sink)
        self._expected = list(expected)
        self._cursor = 0

    def _take_read(self, target):
        if self._cursor < len(self._expected):
            e = self._expected[self._cursor]
            if e.kind == "read" and e.target == target:
                self._cursor += 1
                return e.value
        # Divergence: serve ABSENT and let the final comparison fail.
        self._cursor = len(self._expected) + 1
        return ABSENT

    def _fetch(self, name):
        return self._take_read(name)

    def _apply(self, name, value):
        pass

    def _listing_names(self, prefix):
        value = self._take_read(PrefixSet(prefix))
        names = []
        if isinstance(value, TupleValue):
            for item in value.items:
                if isinstance(item, Bytes):
                    names.append(item.data.decode("utf-8", "replace"))
        return names


def replay_check(
    trace: TaskTrace,
    script: TaskScript,
    *,
    space: ResourceSpace = EMPTY_SPACE,
    budget: int = DEFAULT_BUDGET,
) -> bool:
    """True iff feeding the trace's read values into the script reproduces it exactly."""
    generated: list[AccessEvent] = []
    port = _TracePort(trace.task, space, generated.append, trace.events)
    try:
        runner = ScriptRunner(trace.task, script, port, budget)
        while not runner.done:
            runner.step()
    except BuildError:
        return False
    return tuple(generated) == trace.events


# ---------------------------------------------------------------------------
# JSON serialization (build description format and script digests).

def target_to_json(target: Target):
    if isinstance(target, PrefixSet):
        return {"prefix": target.prefix}
    return target


def _check_resource_name(name: str, where: str) -> str:
    if not name or any(ch.isspace() for ch in name) or name.endswith("*"):
        raise DescriptionError(
            f"resource name {name!r} must be non-empty, whitespace-free, and not end with '*'",
            where,
        )
    return name


def target_from_json(obj, where: str) -> Target:
    if isinstance(obj, str):
        return _check_resource_name(obj, where)
    if isinstance(obj, dict) and isinstance(obj.get("prefix"), str):
        return PrefixSet(obj["prefix"])
    raise DescriptionError("target must be a resource name or {\"prefix\": ...}", where)


def expr_to_json(expr: Expr):
    if isinstance(expr, Lit):
        v = expr.value
        if isinstance(v, Bytes):
            try:
                text = v.data.decode("ascii")
                if text.isprintable():
                    return {"lit": text}
            except UnicodeDecodeError:
                pass
        if v is ABSENT:
            return {"absent": True}
        return {"lit_value": value_to_json(v)}
    if isinstance(expr, Var):
        return {"var": expr.name}
    if isinstance(expr, Concat):
        return {"concat": [expr_to_json(p) for p in expr.parts]}
    if isinstance(expr, Proj):
        return {"proj": [expr_to_json(expr.base), expr.index]}
    if isinstance(expr, TupleExpr):
        return {"tuple": [expr_to_json(p) for p in expr.parts]}
    raise TypeError(f"not an expression: {expr!r}")


def expr_from_json(obj, where: str) -> Expr:
    if not isinstance(obj, dict):
        raise DescriptionError("expression must be an object", where)
    if "lit" in obj:
        if not isinstance(obj["lit"], str):
            raise DescriptionError("lit must be a string", where)
        return Lit(Bytes(obj["lit"].encode("utf-8")))
    if "lit_b64" in obj:
        import base64

        try:
            return Lit(Bytes(base64.b64decode(obj["lit_b64"], validate=True)))
        except Exception as exc:
            raise DescriptionError(f"bad base64: {exc}", where) from exc
    if obj.get("absent"):
        return Lit(ABSENT)
    if "lit_value" in obj:
        return Lit(value_from_json(obj["lit_value"], where))
    if "var" in obj:
        if not isinstance(obj["var"], str):
            raise DescriptionError("var must be a string", where)
        return Var(obj["var"])
    if "concat" in obj:
        parts = obj["concat"]
        if not isinstance(parts, list):
            raise DescriptionError("concat must be a list", where)
        return Concat(tuple(expr_from_json(p, f"{where}.concat[{i}]") for i, p in enumerate(parts)))
    if "proj" in obj:
        pair = obj["proj"]
        if not (isinstance(pair, list) and len(pair) == 2 and isinstance(pair[1], int)):
            raise DescriptionError("proj must be [expression, index]", where)
        return Proj(expr_from_json(pair[0], f"{where}.proj[0]"), pair[1])
    if "tuple" in obj:
        parts = obj["tuple"]
        if not isinstance(parts, list):
            raise DescriptionError("tuple must be a list", where)
        return TupleExpr(tuple(expr_from_json(p, f"{where}.tuple[{i}]") for i, p in enumerate(parts)))
    raise DescriptionError(f"unknown expression keys {sorted(obj)}", where)


def instr_to_json(instr: Instr) -> dict:
    if isinstance(instr, ReadInto):
        return {"op": "read", "target": target_to_json(instr.target), "var": instr.var}
    if isinstance(instr, WriteFrom):
        return {"op": "write", "target": instr.target, "value": expr_to_json(instr.value)}
    if isinstance(instr, Branch):
        return {
            "op": "branch",
            "var": instr.var,
            "equals": expr_to_json(instr.equals),
            "then": [instr_to_json(i) for i in instr.then],
            "else": [instr_to_json(i) for i in instr.orelse],
        }
    if isinstance(instr, Halt):
        return {"op": "halt"}
    raise TypeError(f"not an instruction: {instr!r}")


def instr_from_json(obj, where: str) -> Instr:
    if not isinstance(obj, dict) or "op" not in obj:
        raise DescriptionError("instruction must be an object with an \"op\" key", where)
    op = obj["op"]
    if op == "read":
        if not isinstance(obj.get("var"), str):
            raise DescriptionError("read needs a string \"var\"", where)
        return ReadInto(target_from_json(obj.get("target"), f"{where}.target"), obj["var"])
    if op == "write":
        if not isinstance(obj.get("target"), str):
            raise DescriptionError("write target must be a resource name", where)
        return WriteFrom(
            _check_resource_name(obj["target"], f"{where}.target"),
            expr_from_json(obj.get("value"), f"{where}.value"),
        )
    if op == "branch":
        if not isinstance(obj.get("var"), str):
            raise DescriptionError("branch needs a string \"var\"", where)
        then = obj.get("then", [])
        orelse = obj.get("else", [])
        if not isinstance(then, list) or not isinstance(orelse, list):
            raise DescriptionError("branch arms must be lists", where)
        return Branch(
            obj["var"],
            expr_from_json(obj.get("equals"), f"{where}.equals"),
            tuple(instr_from_json(i, f"{where}.then[{k}]") for k, i in enumerate(then)),
            tuple(instr_from_json(i, f"{where}.else[{k}]") for k, i in enumerate(orelse)),
        )
    if op == "halt":
        return Halt()
    raise DescriptionError(f"unknown op {op!r}", where)


def script_to_json(script: TaskScript):
    if len(script.segments) == 1:
        return [instr_to_json(i) for i in script.segments[0]]
    return {"segments": [[instr_to_json(i) for i in seg] for seg in script.segments]}


def script_from_json(obj, where: str = "script") -> TaskScript:
    if isinstance(obj, list):
        return TaskScript.of(*(instr_from_json(i, f"{where}[{k}]") for k, i in enumerate(obj)))
    if isinstance(obj, dict) and isinstance(obj.get("segments"), list):
        segs = []
        for s, seg in enumerate(obj["segments"]):
            if not isinstance(seg, list):
                raise DescriptionError("segment must be a list", f"{where}.segments[{s}]")
            segs.append(tuple(instr_from_json(i, f"{where}.segments[{s}][{k}]") for k, i in enumerate(seg)))
        return TaskScript(tuple(segs))
    raise DescriptionError("script must be a list of instructions or {\"segments\": ...}", where)


def script_canonical(script: TaskScript) -> str:
    return json.dumps(script_to_json(script), sort_keys=True, separators=(",", ":"))
