"""
Type model for the target library's API surface.

A :class:`TypeRegistry` owns every :class:`TypeDesc` known for one target.
Type references are canonical name strings ("i32", "char*", "Vec<char>",
"cJSON"); derived types (pointers, arrays) are interned on demand so the same
spelling always resolves to the same descriptor. The registry is immutable
after manifest load and safe to share between threads.

Values are typed literal trees (:class:`Value`). Generation and mutation are
pure given an explicit ``random.Random``; pointer mutations that need new
statements in the surrounding program signal the caller through
:class:`MutationRequest` instead of mutating anything themselves.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import Enum, auto
from random import Random
from typing import Iterable, Optional, Sequence, Union


class TypeKind(Enum):
    PRIMITIVE = auto()
    ARRAY = auto()
    RECORD = auto()
    ALIAS = auto()
    POINTER = auto()
    FUNCPTR = auto()
    OPAQUE = auto()
    VOID = auto()


@dataclass(frozen=True)
class Field:
    """One named record member with an explicit byte offset."""

    name: str
    type: str
    offset: int


@dataclass(frozen=True)
class FuncSig:
    """Signature of one target-API function (or function-pointer type)."""

    name: str
    params: tuple[tuple[str, str], ...]  # (param name, type ref)
    ret: str

    def __post_init__(self) -> None:
        names = [p for p, _ in self.params]
        if len(names) != len(set(names)):
            raise TypeModelError(f"duplicate parameter names in {self.name!r}")

    def param_types(self) -> tuple[str, ...]:
        return tuple(t for _, t in self.params)


@dataclass(frozen=True)
class TypeDesc:
    """Description of one target-API type.

    Only the fields relevant to ``kind`` are meaningful; the rest keep their
    defaults. ``length is None`` marks a variable-length array. ``variants``
    turns a primitive into an enum-like type whose interesting-value table is
    the declared variant list.
    """

    name: str
    kind: TypeKind
    width_bits: int = 0
    signed: bool = True
    is_float: bool = False
    variants: tuple[int, ...] = ()
    element: str = ""
    length: Optional[int] = None
    fields: tuple[Field, ...] = ()
    size: Optional[int] = None  # explicit record size override (trailing padding)
    of: str = ""
    pointee: str = ""
    trivial: bool = True
    sig: Optional[FuncSig] = None


class TypeModelError(Exception):
    """Unknown type, dangling reference, alias cycle, or layout violation."""


_POINTER_BYTES = 8  # 64-bit target model

_BUILTIN_ALIASES = {
    "int": "i32",
    "uint": "u32",
    "short": "i16",
    "ushort": "u16",
    "long": "i64",
    "ulong": "u64",
    "size_t": "u64",
    "float": "f32",
    "double": "f64",
    "int32": "i32",
    "int64": "i64",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _builtin_types() -> list[TypeDesc]:
    out = [
        TypeDesc("void", TypeKind.VOID),
        TypeDesc("bool", TypeKind.PRIMITIVE, width_bits=8, signed=False),
        TypeDesc("char", TypeKind.PRIMITIVE, width_bits=8, signed=True),
    ]
    for bits in (8, 16, 32, 64):
        out.append(TypeDesc(f"i{bits}", TypeKind.PRIMITIVE, width_bits=bits, signed=True))
        out.append(TypeDesc(f"u{bits}", TypeKind.PRIMITIVE, width_bits=bits, signed=False))
    out.append(TypeDesc("f32", TypeKind.PRIMITIVE, width_bits=32, is_float=True))
    out.append(TypeDesc("f64", TypeKind.PRIMITIVE, width_bits=64, is_float=True))
    for alias, target in _BUILTIN_ALIASES.items():
        out.append(TypeDesc(alias, TypeKind.ALIAS, of=target))
    return out


class TypeRegistry:
    """Name -> TypeDesc table with on-demand interning of derived types."""

    def __init__(self) -> None:
        self._defs: dict[str, TypeDesc] = {}
        for desc in _builtin_types():
            self._defs[desc.name] = desc

    def register(self, desc: TypeDesc) -> None:
        if desc.name in self._defs:
            raise TypeModelError(f"type {desc.name!r} already registered")
        self._defs[desc.name] = desc

    def __contains__(self, name: str) -> bool:
        return name in self._defs

    def names(self) -> list[str]:
        return sorted(self._defs)

    def get(self, name: str) -> TypeDesc:
        try:
            return self._defs[name]
        except KeyError:
            raise TypeModelError(f"unknown type {name!r}") from None

    def resolve(self, name: str) -> TypeDesc:
        """Chase aliases to a non-alias descriptor (bounded, cycle-checked)."""
        seen = set()
        desc = self.get(name)
        while desc.kind is TypeKind.ALIAS:
            if desc.name in seen:
                raise TypeModelError(f"alias cycle through {desc.name!r}")
            seen.add(desc.name)
            desc = self.get(desc.of)
        return desc

    # -- derived-type interning ------------------------------------------

    def pointer_to(self, name: str, trivial: Optional[bool] = None) -> str:
        pname = f"{name}*"
        if pname not in self._defs:
            if trivial is None:
                pointee = self.resolve(name)
                trivial = pointee.kind not in (TypeKind.OPAQUE, TypeKind.VOID, TypeKind.FUNCPTR)
            self._defs[pname] = TypeDesc(pname, TypeKind.POINTER, pointee=name, trivial=trivial)
        return pname

    def vec_of(self, element: str) -> str:
        vname = f"Vec<{element}>"
        if vname not in self._defs:
            self.get(element)
            self._defs[vname] = TypeDesc(vname, TypeKind.ARRAY, element=element, length=None)
        return vname

    def array_of(self, element: str, length: int) -> str:
        aname = f"{element}[{length}]"
        if aname not in self._defs:
            self.get(element)
            self._defs[aname] = TypeDesc(aname, TypeKind.ARRAY, element=element, length=length)
        return aname

    def ensure(self, text: str) -> str:
        """Parse a type spelling ("char**", "Vec<i32>", "u8[7]") and intern it.

        Returns the canonical name. Base identifiers must already be
        registered; only pointer/array derivations are created on demand.
        """
        name, rest = self._parse_type(text.strip())
        if rest:
            raise TypeModelError(f"trailing characters in type {text!r}: {rest!r}")
        return name

    def _parse_type(self, text: str) -> tuple[str, str]:
        text = text.lstrip()
        if text.startswith("Vec<"):
            inner, rest = self._parse_type(text[4:])
            rest = rest.lstrip()
            if not rest.startswith(">"):
                raise TypeModelError(f"unterminated Vec<...> in {text!r}")
            name = self.vec_of(inner)
            rest = rest[1:]
        else:
            m = _IDENT_RE.match(text)
            if not m:
                raise TypeModelError(f"cannot parse type {text!r}")
            name = m.group(0)
            self.get(name)  # base must exist
            rest = text[m.end():]
        while True:
            rest = rest.lstrip()
            if rest.startswith("*"):
                name = self.pointer_to(name)
                rest = rest[1:]
            elif rest.startswith("["):
                close = rest.index("]")
                length = int(rest[1:close])
                name = self.array_of(name, length)
                rest = rest[close + 1:]
            else:
                return name, rest

    # -- layout -----------------------------------------------------------

    def layout_size(self, name: str) -> int:
        """Deterministic byte size of a type per the declared layout rules."""
        desc = self.resolve(name)
        if desc.kind is TypeKind.PRIMITIVE:
            return desc.width_bits // 8
        if desc.kind in (TypeKind.POINTER, TypeKind.FUNCPTR):
            return _POINTER_BYTES
        if desc.kind is TypeKind.ARRAY:
            if desc.length is None:
                raise TypeModelError(f"variable-length array {desc.name!r} has no static size")
            return self.layout_size(desc.element) * desc.length
        if desc.kind is TypeKind.RECORD:
            if desc.size is not None:
                return desc.size
            end = 0
            for f in desc.fields:
                end = max(end, f.offset + self.layout_size(f.type))
            return end
        raise TypeModelError(f"type {desc.name!r} ({desc.kind.name.lower()}) has no size")

    def check_recursion(self) -> None:
        """Reject records/arrays containing themselves by value."""
        for name, desc in self._defs.items():
            if desc.kind in (TypeKind.RECORD, TypeKind.ARRAY):
                self._walk_by_value(name, set())

    def _walk_by_value(self, name: str, active: set[str]) -> None:
        desc = self.resolve(name)
        if desc.name in active:
            raise TypeModelError(f"type {desc.name!r} contains itself by value")
        if desc.kind is TypeKind.RECORD:
            active = active | {desc.name}
            for f in desc.fields:
                self._walk_by_value(f.type, active)
        elif desc.kind is TypeKind.ARRAY:
            self._walk_by_value(desc.element, active | {desc.name})


# ---------------------------------------------------------------------------
# Values


class _NullType:
    _instance: Optional["_NullType"] = None

    def __new__(cls) -> "_NullType":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NULL"


NULL = _NullType()


@dataclass(frozen=True)
class LocRef:
    """Pointer aimed at the value produced by an earlier statement."""

    index: int


@dataclass(frozen=True)
class FnStub:
    """Deterministic synthesized callback for a function-pointer type."""

    type_name: str


Payload = Union[int, float, _NullType, LocRef, FnStub, list, dict]


@dataclass(frozen=True)
class Value:
    """A typed literal: the payload variant must match the resolved kind.

    Arrays of primitives carry a plain number list; arrays of composites and
    records carry nested Values. Opaque values never appear as literals; they
    exist only at runtime as call results.
    """

    type: str
    payload: Payload

    def is_null(self) -> bool:
        return isinstance(self.payload, _NullType)


def check_value(registry: TypeRegistry, value: Value) -> None:
    """Raise TypeModelError unless the payload shape matches the type."""
    desc = registry.resolve(value.type)
    p = value.payload
    if desc.kind is TypeKind.PRIMITIVE:
        if not isinstance(p, (int, float)) or isinstance(p, bool):
            raise TypeModelError(f"primitive {desc.name} got {type(p).__name__}")
        if desc.is_float and not isinstance(p, float):
            raise TypeModelError(f"float type {desc.name} got int payload")
        if not desc.is_float and not isinstance(p, int):
            raise TypeModelError(f"integer type {desc.name} got float payload")
    elif desc.kind is TypeKind.ARRAY:
        if not isinstance(p, list):
            raise TypeModelError(f"array {desc.name} got {type(p).__name__}")
        if desc.length is not None and len(p) != desc.length:
            raise TypeModelError(
                f"fixed array {desc.name} expects {desc.length} elements, got {len(p)}"
            )
        elem = registry.resolve(desc.element)
        for e in p:
            if elem.kind is TypeKind.PRIMITIVE:
                if not isinstance(e, (int, float)):
                    raise TypeModelError(f"array {desc.name}: bad element {e!r}")
            else:
                check_value(registry, e)
    elif desc.kind is TypeKind.RECORD:
        if not isinstance(p, dict):
            raise TypeModelError(f"record {desc.name} got {type(p).__name__}")
        declared = [f.name for f in desc.fields]
        if list(p) != declared:
            raise TypeModelError(f"record {desc.name}: fields {list(p)} != {declared}")
        for f in desc.fields:
            check_value(registry, p[f.name])
    elif desc.kind in (TypeKind.POINTER, TypeKind.FUNCPTR):
        if desc.kind is TypeKind.FUNCPTR:
            ok = isinstance(p, (_NullType, FnStub))
        else:
            ok = isinstance(p, (_NullType, LocRef))
        if not ok:
            raise TypeModelError(f"pointer {desc.name} got {type(p).__name__}")
    elif desc.kind is TypeKind.VOID:
        raise TypeModelError("void has no values")
    elif desc.kind is TypeKind.OPAQUE:
        raise TypeModelError(f"opaque {desc.name} cannot be written as a literal")


# ---------------------------------------------------------------------------
# Generation

GEN_RANGE = 256  # fresh primitives are drawn uniformly from [-GEN_RANGE, GEN_RANGE]
DEFAULT_MAX_ARRAY_LEN = 64  # generation-time cap for variable arrays
MUTATE_MAX_ARRAY_LEN = 4096  # resize cap during mutation


def _int_bounds(desc: TypeDesc) -> tuple[int, int]:
    if desc.signed:
        lo = -(1 << (desc.width_bits - 1))
        return lo, -lo - 1
    return 0, (1 << desc.width_bits) - 1


def _clamp(v: int, desc: TypeDesc) -> int:
    lo, hi = _int_bounds(desc)
    return max(lo, min(hi, v))


def _wrap(v: int, desc: TypeDesc) -> int:
    mask = (1 << desc.width_bits) - 1
    v &= mask
    if desc.signed and v >= 1 << (desc.width_bits - 1):
        v -= 1 << desc.width_bits
    return v


def generate_primitive(desc: TypeDesc, rng: Random) -> Union[int, float]:
    if desc.is_float:
        return round(rng.uniform(-GEN_RANGE, GEN_RANGE), 4)
    if desc.variants:
        return rng.choice(desc.variants)
    return _clamp(rng.randint(-GEN_RANGE, GEN_RANGE), desc)


def generate_value(
    registry: TypeRegistry,
    type_name: str,
    rng: Random,
    budget: int,
    max_array_len: int = DEFAULT_MAX_ARRAY_LEN,
) -> Value:
    """Build a fresh Value for ``type_name``.

    ``budget`` is the remaining recursion depth: at 0, pointers become null
    and variable arrays empty. Pointers are always generated null here; a
    non-null pointer needs a statement to point at, which is the program
    generator's job, not the value model's.
    """
    if budget < 0:
        raise TypeModelError("negative generation budget")
    desc = registry.resolve(type_name)
    if desc.kind is TypeKind.PRIMITIVE:
        return Value(type_name, generate_primitive(desc, rng))
    if desc.kind is TypeKind.POINTER:
        return Value(type_name, NULL)
    if desc.kind is TypeKind.FUNCPTR:
        return Value(type_name, FnStub(desc.name))
    if desc.kind is TypeKind.ARRAY:
        if desc.length is not None:
            n = desc.length
        elif budget == 0:
            n = 0
        else:
            n = rng.randint(0, max_array_len)
        elem = registry.resolve(desc.element)
        if elem.kind is TypeKind.PRIMITIVE:
            payload: Payload = [generate_primitive(elem, rng) for _ in range(n)]
        else:
            payload = [
                generate_value(registry, desc.element, rng, max(budget - 1, 0), max_array_len)
                for _ in range(n)
            ]
        return Value(type_name, payload)
    if desc.kind is TypeKind.RECORD:
        fields = {
            f.name: generate_value(registry, f.type, rng, max(budget - 1, 0), max_array_len)
            for f in desc.fields
        }
        return Value(type_name, fields)
    raise TypeModelError(f"cannot generate a value of kind {desc.kind.name.lower()}")


# ---------------------------------------------------------------------------
# Mutation


class RequestKind(Enum):
    NEW_ARRAY = auto()  # insert a Load of an array of `type_name`, point here
    NEW_CALL = auto()  # insert a producing Call returning `type_name`, point here


@dataclass(frozen=True)
class MutationRequest:
    """Ask the program generator to insert a statement and patch a LocRef.

    ``path`` addresses the pointer inside the mutated value (empty = the
    value itself); ``type_name`` is the pointee (NEW_ARRAY) or the required
    return type (NEW_CALL).
    """

    kind: RequestKind
    path: tuple[Union[int, str], ...]
    type_name: str


def interesting_values(desc: TypeDesc) -> list[Union[int, float]]:
    if desc.is_float:
        return [0.0, 1.0, -1.0, 1e9, -1e9]
    if desc.variants:
        return list(desc.variants)
    lo, hi = _int_bounds(desc)
    table = [0, 1, -1 if desc.signed else hi, hi, lo, hi // 2]
    if desc.width_bits == 32:
        table.append(_wrap(0x80000000, desc))
    elif desc.width_bits == 64:
        table.append(_wrap(0x8000000000000000, desc))
    return table


def _mutate_primitive(
    desc: TypeDesc, v: Union[int, float], rng: Random, cmp_literals: Sequence[int]
) -> Union[int, float]:
    if desc.is_float:
        strat = rng.choice(("interesting", "delta", "scale"))
        if strat == "interesting":
            return rng.choice(interesting_values(desc))
        if strat == "delta":
            return v + rng.choice((-1.0, 1.0)) * rng.uniform(0.0, 16.0)
        return v * rng.choice((0.5, 2.0, -1.0))
    strategies = ["interesting", "flip", "delta"]
    lits = [c for c in cmp_literals if isinstance(c, int)]
    if lits:
        strategies.append("cmp")
    strat = rng.choice(strategies)
    if strat == "interesting":
        return rng.choice(interesting_values(desc))
    if strat == "flip":
        if rng.random() < 0.5:
            bit = rng.randrange(desc.width_bits)
            return _wrap(v ^ (1 << bit), desc)
        byte = rng.randrange(desc.width_bits // 8)
        return _wrap(v ^ (0xFF << (8 * byte)), desc)
    if strat == "delta":
        return _wrap(v + rng.choice((-1, 1)) * rng.randint(1, 16), desc)
    return _wrap(rng.choice(lits), desc)


def _mutate_byte_array(payload: list, desc: TypeDesc, elem: TypeDesc, rng: Random,
                       cmp_literals: Sequence[int], max_len: int) -> list:
    out = list(payload)
    ops = ["elements"]
    if desc.length is None:
        ops.append("resize")
    if out:
        ops.append("blind")
    op = rng.choice(ops)
    if op == "resize":
        # grow/shrink around the current size; repeated mutations can still
        # climb to max_len without quadratic per-step cost
        cap = min(max_len, max(16, len(out) * 2 + 16))
        n = rng.randint(0, cap)
        if n < len(out):
            start = rng.randint(0, len(out) - n)
            return out[start:start + n]
        grown = [generate_primitive(elem, rng) for _ in range(n - len(out))]
        pos = rng.randint(0, len(out))
        return out[:pos] + grown + out[pos:]
    if op == "blind" or not out:
        if not out:
            return out
        for _ in range(rng.randint(1, min(8, len(out)))):
            out[rng.randrange(len(out))] = _wrap(rng.getrandbits(elem.width_bits), elem)
        return out
    for _ in range(rng.randint(1, min(4, max(1, len(out))))):
        if not out:
            break
        i = rng.randrange(len(out))
        out[i] = _mutate_primitive(elem, out[i], rng, cmp_literals)
    return out


def mutate_value(
    registry: TypeRegistry,
    value: Value,
    rng: Random,
    cmp_literals: Sequence[int] = (),
    pointer_candidates: Sequence[int] = (),
    max_array_len: int = MUTATE_MAX_ARRAY_LEN,
) -> tuple[Value, list[MutationRequest]]:
    """Apply exactly one type-aware mutation; never changes the type.

    ``pointer_candidates`` lists statement indices already holding the same
    pointer type. Returns the new Value plus any statement-insertion requests
    the caller must fulfil (fresh arrays / fresh call results for pointers).
    """
    new, reqs = _mutate_at(registry, value, rng, cmp_literals, pointer_candidates,
                           max_array_len, path=())
    return new, reqs


def _mutate_at(
    registry: TypeRegistry,
    value: Value,
    rng: Random,
    cmp_literals: Sequence[int],
    pointer_candidates: Sequence[int],
    max_array_len: int,
    path: tuple,
) -> tuple[Value, list[MutationRequest]]:
    desc = registry.resolve(value.type)
    if desc.kind is TypeKind.PRIMITIVE:
        return Value(value.type, _mutate_primitive(desc, value.payload, rng, cmp_literals)), []
    if desc.kind is TypeKind.ARRAY:
        elem = registry.resolve(desc.element)
        payload = value.payload
        if elem.kind is TypeKind.PRIMITIVE:
            return Value(value.type,
                         _mutate_byte_array(payload, desc, elem, rng, cmp_literals,
                                            max_array_len)), []
        out = list(payload)
        if desc.length is None and (not out or rng.random() < 0.25):
            n = rng.randint(0, min(max_array_len, max(8, len(out) * 2)))
            if n < len(out):
                start = rng.randint(0, len(out) - n)
                out = out[start:start + n]
            else:
                pos = rng.randint(0, len(out))
                grown = [generate_value(registry, desc.element, rng, 1, max_array_len)
                         for _ in range(n - len(out))]
                out = out[:pos] + grown + out[pos:]
            return Value(value.type, out), []
        i = rng.randrange(len(out))
        mutated, reqs = _mutate_at(registry, out[i], rng, cmp_literals, pointer_candidates,
                                   max_array_len, path + (i,))
        out[i] = mutated
        return Value(value.type, out), reqs
    if desc.kind is TypeKind.RECORD:
        fields = dict(value.payload)
        fname = rng.choice([f.name for f in desc.fields])
        mutated, reqs = _mutate_at(registry, fields[fname], rng, cmp_literals,
                                   pointer_candidates, max_array_len, path + (fname,))
        fields[fname] = mutated
        return Value(value.type, fields), reqs
    if desc.kind is TypeKind.FUNCPTR:
        if isinstance(value.payload, _NullType):
            return Value(value.type, FnStub(desc.name)), []
        return Value(value.type, NULL), []
    if desc.kind is TypeKind.POINTER:
        return _mutate_pointer(registry, value, desc, rng, pointer_candidates, path)
    raise TypeModelError(f"cannot mutate kind {desc.kind.name.lower()}")


def _mutate_pointer(
    registry: TypeRegistry,
    value: Value,
    desc: TypeDesc,
    rng: Random,
    pointer_candidates: Sequence[int],
    path: tuple,
) -> tuple[Value, list[MutationRequest]]:
    pointee = registry.resolve(desc.pointee)
    options = ["null"]
    if pointer_candidates:
        options.append("existing")
    if desc.trivial and pointee.kind in (TypeKind.PRIMITIVE, TypeKind.RECORD, TypeKind.ARRAY,
                                         TypeKind.POINTER):
        options.append("fresh_array")
    options.append("fresh_call")
    choice = rng.choice(options)
    if choice == "null":
        return Value(value.type, NULL), []
    if choice == "existing":
        return Value(value.type, LocRef(rng.choice(list(pointer_candidates)))), []
    if choice == "fresh_array":
        return value, [MutationRequest(RequestKind.NEW_ARRAY, path, desc.pointee)]
    return value, [MutationRequest(RequestKind.NEW_CALL, path, value.type)]


def value_at(value: Value, path: Iterable[Union[int, str]]) -> Value:
    """Fetch the sub-Value addressed by a field path (composites only)."""
    cur = value
    for seg in path:
        if isinstance(seg, int):
            cur = cur.payload[seg]
        else:
            cur = cur.payload[seg]
    return cur


def replace_at(value: Value, path: Sequence[Union[int, str]], new: Value) -> Value:
    """Return a copy of ``value`` with the sub-Value at ``path`` replaced."""
    if not path:
        return new
    seg, rest = path[0], path[1:]
    if isinstance(value.payload, list):
        out = list(value.payload)
        out[seg] = replace_at(out[seg], rest, new)
        return Value(value.type, out)
    if isinstance(value.payload, dict):
        fields = dict(value.payload)
        fields[seg] = replace_at(fields[seg], rest, new)
        return Value(value.type, fields)
    raise TypeModelError(f"cannot descend into payload {value.payload!r}")


def count_mutation_points(registry: TypeRegistry, value: Value) -> int:
    """Number of leaf slots a mutation could touch (drives statement weights)."""
    desc = registry.resolve(value.type)
    if desc.kind is TypeKind.ARRAY:
        elem = registry.resolve(desc.element)
        extra = 0 if desc.length is not None else 1  # resize slot
        if elem.kind is TypeKind.PRIMITIVE:
            return max(1, len(value.payload)) + extra
        return sum(count_mutation_points(registry, e) for e in value.payload) + extra + 1
    if desc.kind is TypeKind.RECORD:
        return sum(count_mutation_points(registry, v) for v in value.payload.values())
    return 1


def pack_primitives(values: Sequence[Union[int, float]], elem: TypeDesc) -> bytes:
    """Little-endian packing of a primitive array (Base64 payloads, casting)."""
    if elem.is_float:
        fmt = "<f" if elem.width_bits == 32 else "<d"
        return b"".join(struct.pack(fmt, float(v)) for v in values)
    width = elem.width_bits // 8
    mask = (1 << elem.width_bits) - 1
    return b"".join(int(v & mask).to_bytes(width, "little") for v in values)


def unpack_primitives(data: bytes, elem: TypeDesc) -> list[Union[int, float]]:
    if elem.is_float:
        fmt = "<f" if elem.width_bits == 32 else "<d"
        width = elem.width_bits // 8
        return [struct.unpack(fmt, data[i:i + width])[0] for i in range(0, len(data), width)]
    width = elem.width_bits // 8
    out = []
    for i in range(0, len(data), width):
        chunk = int.from_bytes(data[i:i + width], "little")
        if elem.signed and chunk >= 1 << (elem.width_bits - 1):
            chunk -= 1 << elem.width_bits
        out.append(chunk)
    return out
