"""Shared state space: resource values, states, spaces, access events, conflicts.

Resources are opaque string names ordered lexicographically. A state maps names
to values; anything unmapped reads as ABSENT, which is a first-class value (it
models nonexistent files and deletions). Collections are represented concisely
as prefix descriptors, and sets of resources can be contracted into one
tuple-valued merged resource.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

from .errors import DescriptionError, OverlappingContraction, WriteIntoCollectionListing

ResourceId = str

READ = "read"
WRITE = "write"

# Rendering of ABSENT inside byte concatenation, so that a task consuming a
# missing input produces a recognizably wrong (but deterministic) output.
ABSENT_MARKER = b"<absent>"


class _Absent:
    """Singleton value of an unmapped resource."""

    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ABSENT"


ABSENT = _Absent()


@dataclass(frozen=True)
class Bytes:
    data: bytes

    def __repr__(self):
        return f"Bytes({self.data!r})"


@dataclass(frozen=True)
class TupleValue:
    items: tuple["ResourceValue", ...]

    def __repr__(self):
        return f"TupleValue({list(self.items)!r})"


ResourceValue = Union[_Absent, Bytes, TupleValue]


def encode_value(value: ResourceValue) -> bytes:
    """Canonical length-prefixed encoding, the basis for digests and equality checks."""
    if value is ABSENT:
        return b"A"
    if isinstance(value, Bytes):
        return b"B" + len(value.data).to_bytes(8, "big") + value.data
    if isinstance(value, TupleValue):
        body = b"".join(encode_value(item) for item in value.items)
        return b"T" + len(value.items).to_bytes(8, "big") + body
    raise TypeError(f"not a resource value: {value!r}")


def value_digest(value: ResourceValue) -> str:
    return hashlib.sha256(encode_value(value)).hexdigest()


def flatten_bytes(value: ResourceValue) -> bytes:
    """Byte rendering used by script concatenation."""
    if value is ABSENT:
        return ABSENT_MARKER
    if isinstance(value, Bytes):
        return value.data
    if isinstance(value, TupleValue):
        return b"(" + b",".join(flatten_bytes(item) for item in value.items) + b")"
    raise TypeError(f"not a resource value: {value!r}")


def value_to_json(value: ResourceValue) -> dict:
    if value is ABSENT:
        return {"absent": True}
    if isinstance(value, Bytes):
        return {"bytes": base64.b64encode(value.data).decode("ascii")}
    if isinstance(value, TupleValue):
        return {"tuple": [value_to_json(item) for item in value.items]}
    raise TypeError(f"not a resource value: {value!r}")


def value_from_json(obj, where: str = "value") -> ResourceValue:
    if not isinstance(obj, dict):
        raise DescriptionError("expected an object", where)
    if obj.get("absent"):
        return ABSENT
    if "bytes" in obj:
        try:
            return Bytes(base64.b64decode(obj["bytes"], validate=True))
        except Exception as exc:
            raise DescriptionError(f"bad base64: {exc}", where) from exc
    if "tuple" in obj:
        items = obj["tuple"]
        if not isinstance(items, list):
            raise DescriptionError("tuple must be a list", where)
        return TupleValue(tuple(value_from_json(item, f"{where}.tuple[{i}]") for i, item in enumerate(items)))
    raise DescriptionError("expected one of absent/bytes/tuple", where)


@dataclass(frozen=True)
class PrefixSet:
    """Concise descriptor for the infinite membership set of a collection."""

    prefix: str

    def matches(self, name: str) -> bool:
        return name.startswith(self.prefix)

    def __str__(self):
        return self.prefix + "*"


Target = Union[ResourceId, PrefixSet]


@dataclass(frozen=True)
class AccessEvent:
    """One read or write by one task; writes always target concrete resources."""

    task: str
    kind: str
    target: Target
    value: ResourceValue


@dataclass(frozen=True)
class SharedState:
    """Immutable resource map. Entries never hold ABSENT; deletion unmaps."""

    entries: Mapping[str, ResourceValue]

    def __init__(self, entries: Mapping[str, ResourceValue] | None = None):
        normalized = {}
        for name, value in (entries or {}).items():
            if isinstance(name, PrefixSet):
                raise WriteIntoCollectionListing(str(name))
            if value is not ABSENT:
                normalized[name] = value
        object.__setattr__(self, "entries", normalized)

    def read(self, name: str) -> ResourceValue:
        return self.entries.get(name, ABSENT)

    def write(self, writes: Mapping[str, ResourceValue]) -> "SharedState":
        """Return a state updated exactly at the written names (frame property)."""
        for name in writes:
            if isinstance(name, PrefixSet):
                raise WriteIntoCollectionListing(str(name))
        merged = dict(self.entries)
        for name, value in writes.items():
            if value is ABSENT:
                merged.pop(name, None)
            else:
                merged[name] = value
        return SharedState(merged)

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.entries):
            raw = name.encode("utf-8")
            h.update(len(raw).to_bytes(8, "big"))
            h.update(raw)
            h.update(encode_value(self.entries[name]))
        return h.hexdigest()

    def to_json(self) -> dict:
        return {name: value_to_json(value) for name, value in sorted(self.entries.items())}

    @classmethod
    def from_json(cls, obj, where: str = "state") -> "SharedState":
        if not isinstance(obj, dict):
            raise DescriptionError("expected an object of name -> value", where)
        return cls({name: value_from_json(value, f"{where}[{name!r}]") for name, value in obj.items()})


def dumps_state(state: SharedState) -> str:
    """Byte-stable text form: lexicographic keys, fixed indentation."""
    return json.dumps(state.to_json(), sort_keys=True, indent=2) + "\n"


def loads_state(text: str, where: str = "state") -> SharedState:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptionError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", where) from exc
    return SharedState.from_json(obj, where)


@dataclass(frozen=True)
class CollectionSpec:
    """One membership resource per potential element under the prefix."""

    prefix: str


@dataclass(frozen=True)
class Contraction:
    merged: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class ResourceSpace:
    """The addressable universe plus declared collections and contractions."""

    collections: tuple[CollectionSpec, ...] = ()
    contractions: tuple[Contraction, ...] = ()

    def __post_init__(self):
        seen_members: set[str] = set()
        seen_merged: set[str] = set()
        for c in self.contractions:
            if not c.members:
                raise OverlappingContraction(f"contraction {c.merged!r} has no members")
            if len(set(c.members)) != len(c.members):
                raise OverlappingContraction(f"contraction {c.merged!r} repeats a member")
            if c.merged in c.members:
                raise OverlappingContraction(f"{c.merged!r} cannot be its own member")
            if c.merged in seen_merged or c.merged in seen_members:
                raise OverlappingContraction(f"{c.merged!r} already used by another contraction")
            overlap = seen_members.intersection(c.members)
            if overlap or seen_merged.intersection(c.members):
                raise OverlappingContraction(f"members {sorted(overlap)} already contracted")
            for name in c.members + (c.merged,):
                for col in self.collections:
                    if name.startswith(col.prefix):
                        raise OverlappingContraction(
                            f"{name!r} overlaps collection prefix {col.prefix!r}"
                        )
            seen_members.update(c.members)
            seen_merged.add(c.merged)
        member_map = {}
        for c in self.contractions:
            for i, name in enumerate(c.members):
                member_map[name] = (c.merged, i, len(c.members))
        object.__setattr__(self, "_member_map", member_map)

    def resolve(self, name: str):
        """Map a member name to (merged, index, arity), or None for plain resources."""
        return self._member_map.get(name)


EMPTY_SPACE = ResourceSpace()


def contract(space: ResourceSpace, members: Iterable[str], merged: str) -> ResourceSpace:
    """Add a contraction; members are ordered lexicographically for determinism."""
    ordered = tuple(sorted(set(members)))
    return ResourceSpace(space.collections, space.contractions + (Contraction(merged, ordered),))


def component(value: ResourceValue, index: int) -> ResourceValue:
    """Tuple projection; anything out of range or non-tuple projects to ABSENT."""
    if isinstance(value, TupleValue) and 0 <= index < len(value.items):
        return value.items[index]
    return ABSENT


def merged_with_component(old: ResourceValue, index: int, arity: int, value: ResourceValue) -> TupleValue:
    base = list(old.items) if isinstance(old, TupleValue) else []
    base = (base + [ABSENT] * arity)[:arity]
    base[index] = value
    return TupleValue(tuple(base))


def contract_state(state: SharedState, space: ResourceSpace) -> SharedState:
    """Rewrite a member-form state into merged-tuple form for the given space."""
    entries = dict(state.entries)
    for c in space.contractions:
        values = [state.read(m) for m in c.members]
        for m in c.members:
            entries.pop(m, None)
        if any(v is not ABSENT for v in values):
            entries[c.merged] = TupleValue(tuple(values))
        elif c.merged in state.entries:
            entries[c.merged] = state.entries[c.merged]
    return SharedState(entries)


def expand_state(state: SharedState, space: ResourceSpace) -> SharedState:
    """Inverse of contract_state: distribute merged tuples back onto member names."""
    entries = dict(state.entries)
    for c in space.contractions:
        whole = entries.pop(c.merged, ABSENT)
        for i, m in enumerate(c.members):
            part = component(whole, i)
            if part is not ABSENT:
                entries[m] = part
    return SharedState(entries)


def conflicts(a: Sequence[AccessEvent], b: Sequence[AccessEvent]) -> frozenset[str]:
    """Resources written by one side and read or written by the other.

    Prefix listing reads conflict with any write whose name matches the prefix;
    the concrete written name is reported as the witness.
    """
    def split(events):
        writes, reads, prefixes = set(), set(), set()
        for e in events:
            if e.kind == WRITE:
                writes.add(e.target)
            elif isinstance(e.target, PrefixSet):
                prefixes.add(e.target)
            else:
                reads.add(e.target)
        return writes, reads, prefixes

    wa, ra, pa = split(a)
    wb, rb, pb = split(b)
    out = (wa & (wb | rb)) | (wb & (wa | ra))
    out |= {w for w in wa if any(p.matches(w) for p in pb)}
    out |= {w for w in wb if any(p.matches(w) for p in pa)}
    return frozenset(out)


class AccessPort:
    """Routes one task's accesses through a resource space, recording every event.

    Subclasses provide raw storage hooks. The port rewrites contracted member
    accesses into tuple-component accesses of the merged resource: a member
    read becomes a read of the merged tuple, and a member write becomes an
    atomic read-modify-write pair on the merged resource so traces stay
    replayable from recorded read values alone.
    """

    def __init__(self, task: str, space: ResourceSpace, sink: Callable[[AccessEvent], None]):
        self._task = task
        self._space = space
        self._sink = sink

    # storage hooks
    def _fetch(self, name: str) -> ResourceValue:
        raise NotImplementedError

    def _apply(self, name: str, value: ResourceValue) -> None:
        raise NotImplementedError

    def _listing_names(self, prefix: str) -> Iterable[str]:
        raise NotImplementedError

    def _emit(self, kind: str, target: Target, value: ResourceValue) -> None:
        self._sink(AccessEvent(self._task, kind, target, value))

    def read(self, target: Target) -> ResourceValue:
        if isinstance(target, PrefixSet):
            names = sorted(n for n in self._listing_names(target.prefix) if target.matches(n))
            value = TupleValue(tuple(Bytes(n.encode("utf-8")) for n in names))
            self._emit(READ, target, value)
            return value
        hit = self._space.resolve(target)
        if hit is None:
            value = self._fetch(target)
            self._emit(READ, target, value)
            return value
        merged, index, _arity = hit
        whole = self._fetch(merged)
        self._emit(READ, merged, whole)
        return component(whole, index)

    def write(self, target: Target, value: ResourceValue) -> None:
        if isinstance(target, PrefixSet):
            raise WriteIntoCollectionListing(str(target))
        hit = self._space.resolve(target)
        if hit is None:
            self._apply(target, value)
            self._emit(WRITE, target, value)
            return
        merged, index, arity = hit
        whole = self._fetch(merged)
        self._emit(READ, merged, whole)
        updated = merged_with_component(whole, index, arity, value)
        self._apply(merged, updated)
        self._emit(WRITE, merged, updated)


class DictPort(AccessPort):
    """Port over a plain dict of live entries (no ABSENT values stored)."""

    def __init__(self, entries: dict, task: str, space: ResourceSpace, sink):
        super().__init__(task, space, sink)
        self._entries = entries

    def _fetch(self, name):
        return self._entries.get(name, ABSENT)

    def _apply(self, name, value):
        if value is ABSENT:
            self._entries.pop(name, None)
        else:
            self._entries[name] = value

    def _listing_names(self, prefix):
        return list(self._entries)
