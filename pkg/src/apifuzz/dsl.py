"""
The call-sequence DSL: AST, text parser, canonical serializer, validator,
and the C repro translator.

Programs are straight-line: every statement carries an explicit index and may
only reference smaller indices. The concrete syntax is one statement per
line::

    <0> load Vec<char> = vec(7)[54, 52, -68, -43, 1, 122, 0]
    <1> load char* = &<0>
    <2> load i32 = 7
    <3> call target: sum ? (<1>, <2>)
    <4> assert non_null(<3>)

Byte arrays longer than 16 elements serialize as Base64. ``?`` after a call
name enables branch tracking for that call; ``target:`` / ``relative:`` mark
the call's role. ``//`` starts a comment (outside quotes).
"""

from __future__ import annotations

import base64
import re
from dataclasses import dataclass, field, replace
from enum import Enum, auto
from typing import Callable, Iterable, Optional, Sequence, Union

from .types import (
    NULL,
    FnStub,
    LocRef,
    TypeDesc,
    TypeKind,
    TypeModelError,
    TypeRegistry,
    Value,
    check_value,
    pack_primitives,
    unpack_primitives,
)

BASE64_THRESHOLD = 16  # primitive arrays longer than this serialize as Base64

PathSeg = Union[int, str]


class DslError(Exception):
    """Syntax or structural violation, with source position when parsing."""

    def __init__(self, message: str, line: Optional[int] = None, col: Optional[int] = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", col {col}" if col is not None else "") + ": "
        super().__init__(where + message)


class CallRole(Enum):
    PLAIN = auto()
    TARGET = auto()
    RELATIVE = auto()


class FileMode(Enum):
    READ = auto()
    WRITE = auto()


@dataclass(frozen=True)
class LoadStmt:
    type: str
    value: Value


@dataclass(frozen=True)
class CallStmt:
    name: str
    args: tuple[int, ...]
    role: CallRole = CallRole.PLAIN
    tracked: bool = False


@dataclass(frozen=True)
class UpdateStmt:
    dst: int
    path: tuple[PathSeg, ...]
    src: int


@dataclass(frozen=True)
class NonNullRule:
    index: int


@dataclass(frozen=True)
class EqRule:
    a: int
    b: int


@dataclass(frozen=True)
class AssertStmt:
    rule: Union[NonNullRule, EqRule]


@dataclass(frozen=True)
class FileStmt:
    mode: FileMode
    name_source: int


Body = Union[LoadStmt, CallStmt, UpdateStmt, AssertStmt, FileStmt]


@dataclass(frozen=True)
class Statement:
    index: int
    body: Body


def stmt_references(body: Body) -> tuple[int, ...]:
    """Indices of earlier statements this body refers to."""
    if isinstance(body, LoadStmt):
        return tuple(_value_refs(body.value))
    if isinstance(body, CallStmt):
        return body.args
    if isinstance(body, UpdateStmt):
        return (body.dst, body.src)
    if isinstance(body, AssertStmt):
        r = body.rule
        return (r.index,) if isinstance(r, NonNullRule) else (r.a, r.b)
    return (body.name_source,)


def _value_refs(value: Value) -> list[int]:
    out: list[int] = []
    p = value.payload
    if isinstance(p, LocRef):
        out.append(p.index)
    elif isinstance(p, list):
        for e in p:
            if isinstance(e, Value):
                out.extend(_value_refs(e))
    elif isinstance(p, dict):
        for v in p.values():
            out.extend(_value_refs(v))
    return out


def produces_value(body: Body) -> bool:
    """Load, Call and File statements yield a referenceable value.

    The grammar's file statement stands in for a filename argument (its value
    is the sandbox path), so calls may reference it directly.
    """
    return isinstance(body, (LoadStmt, CallStmt, FileStmt))


@dataclass(frozen=True)
class Program:
    statements: tuple[Statement, ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        last = -1
        targets = 0
        for stmt in self.statements:
            if stmt.index in seen:
                raise DslError(f"duplicate statement index <{stmt.index}>")
            if stmt.index <= last:
                raise DslError(f"statement indices must ascend at <{stmt.index}>")
            seen.add(stmt.index)
            last = stmt.index
            for ref in stmt_references(stmt.body):
                if ref >= stmt.index:
                    raise DslError(f"forward reference <{ref}> from <{stmt.index}>")
                if ref not in seen:
                    raise DslError(f"dangling reference <{ref}> from <{stmt.index}>")
            if isinstance(stmt.body, CallStmt) and stmt.body.role is CallRole.TARGET:
                targets += 1
        if targets > 1:
            raise DslError("at most one call may have role=target")
        by_index = {s.index: s for s in self.statements}
        for stmt in self.statements:
            if isinstance(stmt.body, CallStmt):
                for a in stmt.body.args:
                    if not produces_value(by_index[a].body):
                        raise DslError(
                            f"call argument <{a}> in <{stmt.index}> is not a value producer"
                        )

    def __len__(self) -> int:
        return len(self.statements)

    def by_index(self) -> dict[int, Statement]:
        return {s.index: s for s in self.statements}

    def target_call(self) -> Optional[Statement]:
        for s in self.statements:
            if isinstance(s.body, CallStmt) and s.body.role is CallRole.TARGET:
                return s
        return None

    def calls(self) -> list[Statement]:
        return [s for s in self.statements if isinstance(s.body, CallStmt)]


def program(bodies: Iterable[Body]) -> Program:
    """Build a Program from bodies numbered 0..n-1."""
    return Program(tuple(Statement(i, b) for i, b in enumerate(bodies)))


def renumber(statements: Sequence[Statement]) -> Program:
    """Renumber kept statements 0..n-1 and rewrite every reference."""
    mapping = {s.index: i for i, s in enumerate(statements)}

    def remap(i: int) -> int:
        try:
            return mapping[i]
        except KeyError:
            raise DslError(f"renumber dropped a still-referenced statement <{i}>") from None

    out = []
    for new_index, stmt in enumerate(statements):
        out.append(Statement(new_index, _remap_body(stmt.body, remap)))
    return Program(tuple(out))


def _remap_body(body: Body, remap: Callable[[int], int]) -> Body:
    if isinstance(body, LoadStmt):
        return LoadStmt(body.type, _remap_value(body.value, remap))
    if isinstance(body, CallStmt):
        return replace(body, args=tuple(remap(a) for a in body.args))
    if isinstance(body, UpdateStmt):
        return UpdateStmt(remap(body.dst), body.path, remap(body.src))
    if isinstance(body, AssertStmt):
        r = body.rule
        if isinstance(r, NonNullRule):
            return AssertStmt(NonNullRule(remap(r.index)))
        return AssertStmt(EqRule(remap(r.a), remap(r.b)))
    return FileStmt(body.mode, remap(body.name_source))


def _remap_value(value: Value, remap: Callable[[int], int]) -> Value:
    p = value.payload
    if isinstance(p, LocRef):
        return Value(value.type, LocRef(remap(p.index)))
    if isinstance(p, list):
        out = [
            _remap_value(e, remap) if isinstance(e, Value) else e
            for e in p
        ]
        return Value(value.type, out)
    if isinstance(p, dict):
        return Value(value.type, {k: _remap_value(v, remap) for k, v in p.items()})
    return value


# ---------------------------------------------------------------------------
# Serialization


def serialize(p: Program) -> str:
    """Canonical text: one statement per line, single-space separated."""
    return "".join(f"<{s.index}> {_format_body(s.body)}\n" for s in p.statements)


def _format_body(body: Body) -> str:
    if isinstance(body, LoadStmt):
        return f"load {body.type} = {format_value(body.value)}"
    if isinstance(body, CallStmt):
        role = {CallRole.PLAIN: "", CallRole.TARGET: "target: ",
                CallRole.RELATIVE: "relative: "}[body.role]
        mark = " ?" if body.tracked else ""
        args = ", ".join(f"<{a}>" for a in body.args)
        return f"call {role}{body.name}{mark} ({args})"
    if isinstance(body, UpdateStmt):
        return f"update <{body.dst}>[{format_path(body.path)}] = <{body.src}>"
    if isinstance(body, AssertStmt):
        r = body.rule
        if isinstance(r, NonNullRule):
            return f"assert non_null(<{r.index}>)"
        return f"assert eq(<{r.a}>, <{r.b}>)"
    mode = "read" if body.mode is FileMode.READ else "write"
    return f"file {mode} <{body.name_source}>"


def format_path(path: Sequence[PathSeg]) -> str:
    return ".".join(str(seg) for seg in path)


def format_value(value: Value, registry: Optional[TypeRegistry] = None) -> str:
    p = value.payload
    if isinstance(p, bool):
        return "1" if p else "0"
    if isinstance(p, int):
        return str(p)
    if isinstance(p, float):
        return repr(p)
    if p is NULL or isinstance(p, type(NULL)):
        return "null"
    if isinstance(p, LocRef):
        return f"&<{p.index}>"
    if isinstance(p, FnStub):
        return "stub"
    if isinstance(p, list):
        n = len(p)
        if p and not isinstance(p[0], Value):
            if n > BASE64_THRESHOLD and registry is not None:
                elem = registry.resolve(registry.resolve(value.type).element)
                b64 = base64.b64encode(pack_primitives(p, elem)).decode("ascii")
                return f'vec({n})["{b64}"]'
            body = ", ".join(format_value(Value("", e)) for e in p)
            return f"vec({n})[{body}]"
        body = ", ".join(format_value(e, registry) for e in p)
        return f"vec({n})[{body}]"
    if isinstance(p, dict):
        body = ", ".join(f"{k}: {format_value(v, registry)}" for k, v in p.items())
        return "{ " + body + " }"
    raise DslError(f"unserializable payload {p!r}")


class Serializer:
    """Serializer bound to a registry so long byte arrays emit Base64."""

    def __init__(self, registry: TypeRegistry):
        self.registry = registry

    def serialize(self, p: Program) -> str:
        lines = []
        for s in p.statements:
            if isinstance(s.body, LoadStmt):
                text = f"load {s.body.type} = {format_value(s.body.value, self.registry)}"
            else:
                text = _format_body(s.body)
            lines.append(f"<{s.index}> {text}\n")
        return "".join(lines)


# ---------------------------------------------------------------------------
# Parsing

_LINE_RE = re.compile(r"^<(\d+)>\s*(.*)$")
_CALL_RE = re.compile(
    r"^call\s+(?:(target|relative)\s*:\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*(\?)?\s*\((.*)\)\s*$"
)
_UPDATE_RE = re.compile(r"^update\s+<(\d+)>\s*\[([^\]]*)\]\s*=\s*(.*)$")
_ASSERT_NN_RE = re.compile(r"^assert\s+non_null\s*\(\s*<(\d+)>\s*\)\s*$")
_ASSERT_EQ_RE = re.compile(r"^assert\s+eq\s*\(\s*<(\d+)>\s*,\s*<(\d+)>\s*\)\s*$")
_FILE_RE = re.compile(r"^file\s+(read|write|option)\s+<(\d+)>\s*$")
_VEC_RE = re.compile(r"^vec\((\d+)\)\s*\[")


def _strip_comment(line: str) -> str:
    in_str = False
    i = 0
    while i < len(line) - 1:
        c = line[i]
        if c == '"':
            in_str = not in_str
        elif not in_str and c == "/" and line[i + 1] == "/":
            return line[:i]
        i += 1
    return line


def parse(text: str, registry: Optional[TypeRegistry] = None) -> Program:
    """Parse DSL text into a Program.

    When a registry is given, load types are interned through it and literal
    shapes are checked against the resolved kinds; without one, a throwaway
    registry of builtins is used and unknown named types are assumed
    record-like (full checking then happens in :func:`validate`).
    """
    reg = registry if registry is not None else TypeRegistry()
    strict = registry is not None
    statements: list[Statement] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise DslError("expected '<index> statement'", lineno)
        index = int(m.group(1))
        body_text = m.group(2).strip()
        try:
            body = _parse_body(body_text, reg, strict)
        except DslError as e:
            if e.line is None:
                raise DslError(str(e), lineno) from None
            raise
        statements.append(Statement(index, body))
    try:
        return Program(tuple(statements))
    except DslError as e:
        raise DslError(f"invalid program: {e}") from None


def _parse_body(text: str, reg: TypeRegistry, strict: bool) -> Body:
    if text.startswith("load"):
        rest = text[4:].lstrip()
        eq = _find_top_level_eq(rest)
        if eq < 0:
            raise DslError("load statement missing '='")
        type_text = rest[:eq].strip()
        value_text = rest[eq + 1:].strip()
        type_name = _intern_type(type_text, reg, strict)
        value, remainder = _parse_value(value_text, type_name, reg, strict)
        if remainder.strip():
            raise DslError(f"trailing characters after value: {remainder!r}")
        return LoadStmt(type_name, value)
    m = _CALL_RE.match(text)
    if m:
        role = {None: CallRole.PLAIN, "target": CallRole.TARGET,
                "relative": CallRole.RELATIVE}[m.group(1)]
        tracked = m.group(3) is not None or role is CallRole.TARGET
        args_text = m.group(4).strip()
        args: list[int] = []
        if args_text:
            for part in args_text.split(","):
                part = part.strip()
                am = re.fullmatch(r"<(\d+)>", part)
                if not am:
                    raise DslError(f"bad call argument {part!r}")
                args.append(int(am.group(1)))
        return CallStmt(m.group(2), tuple(args), role, tracked)
    m = _UPDATE_RE.match(text)
    if m:
        src_m = re.fullmatch(r"<(\d+)>", m.group(3).strip())
        if not src_m:
            raise DslError(f"update source must be an index, got {m.group(3)!r}")
        return UpdateStmt(int(m.group(1)), parse_path(m.group(2)), int(src_m.group(1)))
    m = _ASSERT_NN_RE.match(text)
    if m:
        return AssertStmt(NonNullRule(int(m.group(1))))
    m = _ASSERT_EQ_RE.match(text)
    if m:
        return AssertStmt(EqRule(int(m.group(1)), int(m.group(2))))
    m = _FILE_RE.match(text)
    if m:
        mode = FileMode.WRITE if m.group(1) == "write" else FileMode.READ
        return FileStmt(mode, int(m.group(2)))
    raise DslError(f"unrecognized statement {text!r}")


def parse_path(text: str) -> tuple[PathSeg, ...]:
    segs: list[PathSeg] = []
    for part in text.split("."):
        part = part.strip()
        if not part:
            raise DslError(f"empty path segment in {text!r}")
        segs.append(int(part) if part.isdigit() else part)
    return tuple(segs)


def _find_top_level_eq(text: str) -> int:
    depth = 0
    for i, c in enumerate(text):
        if c in "<[{(":
            depth += 1
        elif c in ">]})":
            depth -= 1
        elif c == "=" and depth == 0:
            return i
    return -1


def _intern_type(text: str, reg: TypeRegistry, strict: bool) -> str:
    """Resolve a type spelling; outside strict mode unknown names register
    as placeholder records so parsing can proceed without a manifest."""
    try:
        return reg.ensure(text)
    except TypeModelError:
        if strict:
            raise DslError(f"unknown type {text!r}") from None
        base = re.match(r"\s*(Vec<)*\s*([A-Za-z_][A-Za-z0-9_]*)", text)
        if not base:
            raise DslError(f"cannot parse type {text!r}") from None
        name = base.group(2)
        if name not in reg:
            reg.register(TypeDesc(name, TypeKind.RECORD, fields=()))
        return reg.ensure(text)


def _parse_value(text: str, type_name: str, reg: TypeRegistry, strict: bool) -> tuple[Value, str]:
    text = text.lstrip()
    desc = _resolved_or_none(reg, type_name)
    if text.startswith("null"):
        return Value(type_name, NULL), text[4:]
    if text.startswith("stub"):
        return Value(type_name, FnStub(type_name)), text[4:]
    if text.startswith("&"):
        m = re.match(r"&<(\d+)>", text)
        if not m:
            raise DslError(f"bad location reference in {text!r}")
        return Value(type_name, LocRef(int(m.group(1)))), text[m.end():]
    m = _VEC_RE.match(text)
    if m:
        return _parse_vec(text, m, type_name, reg, strict)
    if text.startswith("{"):
        return _parse_record(text, type_name, desc, reg, strict)
    m = re.match(r"[-+]?\d+\.\d+(e[-+]?\d+)?", text, re.IGNORECASE)
    if m:
        return Value(type_name, float(m.group(0))), text[m.end():]
    m = re.match(r"[-+]?\d+", text)
    if m:
        n = int(m.group(0))
        if desc is not None and desc.kind is TypeKind.PRIMITIVE and desc.is_float:
            return Value(type_name, float(n)), text[m.end():]
        return Value(type_name, n), text[m.end():]
    raise DslError(f"cannot parse value {text!r}")


def _resolved_or_none(reg: TypeRegistry, type_name: str) -> Optional[TypeDesc]:
    try:
        return reg.resolve(type_name)
    except TypeModelError:
        return None


def _element_type(reg: TypeRegistry, type_name: str, strict: bool) -> str:
    desc = _resolved_or_none(reg, type_name)
    if desc is not None and desc.kind is TypeKind.ARRAY:
        return desc.element
    if strict:
        raise DslError(f"vec literal for non-array type {type_name!r}")
    return "i64"


def _parse_vec(text: str, m: "re.Match[str]", type_name: str, reg: TypeRegistry,
               strict: bool) -> tuple[Value, str]:
    count = int(m.group(1))
    rest = text[m.end():].lstrip()
    elem_name = _element_type(reg, type_name, strict)
    elem = _resolved_or_none(reg, elem_name)
    if rest.startswith('"'):
        close = rest.index('"', 1)
        b64 = rest[1:close]
        rest = rest[close + 1:].lstrip()
        if not rest.startswith("]"):
            raise DslError("unterminated vec literal")
        if elem is None or elem.kind is not TypeKind.PRIMITIVE:
            raise DslError(f"Base64 payload for non-primitive array {type_name!r}")
        data = base64.b64decode(b64, validate=True)
        elems = unpack_primitives(data, elem)
        if len(elems) != count:
            raise DslError(f"vec({count}) payload decodes to {len(elems)} elements")
        return Value(type_name, elems), rest[1:]
    elems = []
    primitive = elem is None or elem.kind is TypeKind.PRIMITIVE
    while True:
        rest = rest.lstrip()
        if rest.startswith("]"):
            rest = rest[1:]
            break
        v, rest = _parse_value(rest, elem_name, reg, strict)
        elems.append(v.payload if primitive else v)
        rest = rest.lstrip()
        if rest.startswith(","):
            rest = rest[1:]
    if len(elems) != count:
        raise DslError(f"vec({count}) literal has {len(elems)} elements")
    return Value(type_name, elems), rest


def _parse_record(text: str, type_name: str, desc: Optional[TypeDesc], reg: TypeRegistry,
                  strict: bool) -> tuple[Value, str]:
    field_types: dict[str, str] = {}
    if desc is not None and desc.kind is TypeKind.RECORD:
        field_types = {f.name: f.type for f in desc.fields}
    elif strict:
        raise DslError(f"record literal for non-record type {type_name!r}")
    rest = text[1:]
    fields: dict[str, Value] = {}
    while True:
        rest = rest.lstrip()
        if rest.startswith("}"):
            rest = rest[1:]
            break
        m = re.match(r"([A-Za-z_][A-Za-z0-9_]*)\s*:", rest)
        if not m:
            raise DslError(f"expected 'field:' in record literal near {rest[:20]!r}")
        fname = m.group(1)
        ftype = field_types.get(fname, "i64")
        if strict and fname not in field_types:
            raise DslError(f"unknown field {fname!r} in {type_name!r}")
        v, rest = _parse_value(rest[m.end():], ftype, reg, strict)
        fields[fname] = v
        rest = rest.lstrip()
        if rest.startswith(","):
            rest = rest[1:]
    if field_types and list(fields) != list(field_types):
        ordered = {n: fields[n] for n in field_types if n in fields}
        if len(ordered) != len(fields) or len(ordered) != len(field_types):
            raise DslError(f"record literal fields {list(fields)} do not match {type_name!r}")
        fields = ordered
    return Value(type_name, fields), rest

# ---------------------------------------------------------------------------
# Validation

_CHARISH = ("char", "i8", "u8")


def produced_type(body: Body, manifest) -> Optional[str]:
    """Type of the value a statement yields, or None for non-producers."""
    if isinstance(body, LoadStmt):
        return body.type
    if isinstance(body, CallStmt):
        sig = manifest.functions.get(body.name)
        return sig.ret if sig else None
    if isinstance(body, FileStmt):
        return manifest.registry.pointer_to("char")
    return None


def arg_compatible(registry: TypeRegistry, produced: str, expected: str) -> bool:
    """Const-insensitive compatibility between a produced and expected type."""
    try:
        p = registry.resolve(produced)
        e = registry.resolve(expected)
    except TypeModelError:
        return False
    if p.name == e.name:
        return True
    if e.kind is TypeKind.POINTER and p.kind is TypeKind.POINTER:
        ep = registry.resolve(e.pointee)
        pp = registry.resolve(p.pointee)
        if ep.name == pp.name:
            return True
        if ep.kind is TypeKind.VOID:
            return True  # any pointer satisfies void*
        # pointer to an array of T decays to T*
        if pp.kind is TypeKind.ARRAY and registry.resolve(pp.element).name == ep.name:
            return True
        # char-family pointers are interchangeable (string-ish data)
        if ep.name in _CHARISH and pp.name in _CHARISH:
            return True
        if pp.kind is TypeKind.ARRAY and ep.name in _CHARISH \
                and registry.resolve(pp.element).name in _CHARISH:
            return True
    return False


def type_at_path(registry: TypeRegistry, type_name: str, path: Sequence[PathSeg]) -> str:
    """Type reached by walking a field path; raises DslError when it diverges."""
    cur = type_name
    for seg in path:
        desc = registry.resolve(cur)
        if isinstance(seg, int):
            if desc.kind is TypeKind.POINTER:
                cur = desc.pointee
            elif desc.kind is TypeKind.ARRAY:
                cur = desc.element
            else:
                raise DslError(f"cannot index into {desc.name!r}")
        else:
            if desc.kind is not TypeKind.RECORD:
                raise DslError(f"cannot take field {seg!r} of {desc.name!r}")
            matches = [f for f in desc.fields if f.name == seg]
            if not matches:
                raise DslError(f"no field {seg!r} in {desc.name!r}")
            cur = matches[0].type
    return cur


def validate(p: Program, manifest) -> list[str]:
    """Check a program against a manifest; returns diagnostics (empty = ok)."""
    registry: TypeRegistry = manifest.registry
    diags: list[str] = []
    by_index = p.by_index()

    def produced(i: int) -> Optional[str]:
        return produced_type(by_index[i].body, manifest)

    for stmt in p.statements:
        body = stmt.body
        where = f"<{stmt.index}>"
        if isinstance(body, LoadStmt):
            try:
                check_value(registry, body.value)
            except TypeModelError as e:
                diags.append(f"{where} bad literal: {e}")
            for ref in _value_refs(body.value):
                _check_pointer_ref(registry, body, ref, by_index, manifest, diags, where)
        elif isinstance(body, CallStmt):
            sig = manifest.functions.get(body.name)
            if sig is None:
                diags.append(f"{where} unknown function {body.name!r}")
                continue
            if len(body.args) != len(sig.params):
                diags.append(
                    f"{where} {body.name} takes {len(sig.params)} args, got {len(body.args)}"
                )
                continue
            for a, (pname, ptype) in zip(body.args, sig.params):
                got = produced(a)
                if got is None:
                    diags.append(f"{where} argument <{a}> produces no value")
                elif not arg_compatible(registry, got, ptype):
                    diags.append(
                        f"{where} argument <{a}> has type {got}, parameter "
                        f"{pname!r} wants {ptype}"
                    )
        elif isinstance(body, UpdateStmt):
            dst = by_index[body.dst]
            if not isinstance(dst.body, CallStmt):
                diags.append(f"{where} update destination <{body.dst}> is not a call result")
                continue
            ret = produced(body.dst)
            if ret is None:
                diags.append(f"{where} update destination has unknown type")
                continue
            try:
                slot_type = type_at_path(registry, ret, body.path)
            except (DslError, TypeModelError) as e:
                diags.append(f"{where} bad update path: {e}")
                continue
            src_type = produced(body.src)
            if src_type is None:
                diags.append(f"{where} update source produces no value")
            elif not (arg_compatible(registry, src_type, slot_type)
                      or _pointer_to(registry, slot_type, src_type)):
                diags.append(
                    f"{where} update path has type {slot_type}, source is {src_type}"
                )
        elif isinstance(body, AssertStmt):
            r = body.rule
            if isinstance(r, NonNullRule):
                t = produced(r.index)
                if t is None or registry.resolve(t).kind not in (
                        TypeKind.POINTER, TypeKind.FUNCPTR, TypeKind.OPAQUE):
                    diags.append(f"{where} non_null target <{r.index}> is not pointer-typed")
            else:
                for i in (r.a, r.b):
                    t = produced(i)
                    if t is None or registry.resolve(t).kind is not TypeKind.PRIMITIVE:
                        diags.append(f"{where} eq operand <{i}> is not a primitive")
    return diags


def _pointer_to(registry: TypeRegistry, slot_type: str, src_type: str) -> bool:
    """True when the slot is a pointer whose pointee matches src (auto '&')."""
    try:
        slot = registry.resolve(slot_type)
        src = registry.resolve(src_type)
    except TypeModelError:
        return False
    return slot.kind is TypeKind.POINTER and registry.resolve(slot.pointee).name == src.name


def _check_pointer_ref(registry, body: LoadStmt, ref: int, by_index, manifest,
                       diags: list, where: str) -> None:
    try:
        desc = registry.resolve(body.type)
    except TypeModelError:
        diags.append(f"{where} unknown type {body.type!r}")
        return
    target = by_index.get(ref)
    if target is None:
        return
    got = produced_type(target.body, manifest)
    if got is None:
        diags.append(f"{where} &<{ref}> does not reference a value producer")
        return
    if desc.kind is TypeKind.POINTER:
        want = registry.resolve(desc.pointee)
        have = registry.resolve(got)
        ok = have.name == want.name
        if not ok and have.kind is TypeKind.ARRAY:
            ok = registry.resolve(have.element).name == want.name \
                or (want.name in _CHARISH
                    and registry.resolve(have.element).name in _CHARISH)
        if not ok and want.kind is TypeKind.VOID:
            ok = True
        if not ok:
            diags.append(f"{where} &<{ref}> has type {got}, pointee wants {desc.pointee}")


# ---------------------------------------------------------------------------
# C translation


def translate_to_c(p: Program, manifest) -> str:
    """Lower a validated program to deterministic C-like repro source."""
    diags = validate(p, manifest)
    if diags:
        raise DslError("cannot translate invalid program: " + "; ".join(diags))
    registry: TypeRegistry = manifest.registry
    by_index = p.by_index()
    lines = [
        f"/* repro for {manifest.library} */",
        f'#include "{manifest.library}.h"',
        "",
        "int main(void) {",
    ]
    for stmt in p.statements:
        body = stmt.body
        v = f"v{stmt.index}"
        if isinstance(body, LoadStmt):
            count = len(body.value.payload) if isinstance(body.value.payload, list) \
                else None
            lines.append(f"    {_c_decl(registry, body.type, v, count)} = "
                         f"{_c_value(registry, body.value, by_index)};")
        elif isinstance(body, CallStmt):
            sig = manifest.functions[body.name]
            args = ", ".join(f"v{a}" for a in body.args)
            call = f"{body.name}({args})"
            if registry.resolve(sig.ret).kind is TypeKind.VOID:
                lines.append(f"    {call};")
            else:
                lines.append(f"    {_c_decl(registry, sig.ret, v)} = {call};")
        elif isinstance(body, AssertStmt):
            r = body.rule
            if isinstance(r, NonNullRule):
                lines.append(f"    if (!v{r.index}) return 0;")
            else:
                lines.append(f"    if (v{r.a} != v{r.b}) return 0;")
        elif isinstance(body, UpdateStmt):
            ret = produced_type(by_index[body.dst].body, manifest)
            expr = f"v{body.dst}" + _c_path(registry, ret, body.path)
            slot_type = type_at_path(registry, ret, body.path)
            src = f"v{body.src}"
            if _pointer_to(registry, slot_type, produced_type(by_index[body.src].body, manifest)):
                src = f"&{src}"
            lines.append(f"    {expr} = {src};")
        else:
            mode = "read" if body.mode is FileMode.READ else "write"
            lines.append(f'    const char* {v} = "files/{stmt.index}"; /* file {mode} */')
    lines.append("    return 0;")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _c_decl(registry: TypeRegistry, type_name: str, var: str,
            count: Optional[int] = None) -> str:
    desc = registry.resolve(type_name)
    if desc.kind is not TypeKind.ARRAY:
        return f"{_c_type(registry, type_name)} {var}"
    n = desc.length if desc.length is not None else count
    return f"{_c_type(registry, desc.element)} {var}[{n if n is not None else ''}]"


def _c_type(registry: TypeRegistry, type_name: str) -> str:
    desc = registry.get(type_name)
    if desc.kind is TypeKind.POINTER:
        return f"{_c_type(registry, desc.pointee)}*"
    if desc.kind is TypeKind.ARRAY:
        return f"{_c_type(registry, desc.element)}*"
    return desc.name


def _c_value(registry: TypeRegistry, value: Value, by_index) -> str:
    p = value.payload
    if isinstance(p, int):
        return str(p)
    if isinstance(p, float):
        return repr(p)
    if isinstance(p, type(NULL)):
        return "NULL"
    if isinstance(p, FnStub):
        return f"stub_{re.sub(r'[^A-Za-z0-9_]', '_', value.type)}"
    if isinstance(p, LocRef):
        target = by_index[p.index].body
        if isinstance(target, LoadStmt):
            try:
                if registry.resolve(target.type).kind is TypeKind.ARRAY:
                    return f"v{p.index}"  # arrays decay to pointers
            except TypeModelError:
                pass
        return f"&v{p.index}"
    if isinstance(p, list):
        if p and not isinstance(p[0], Value):
            return "{" + ", ".join(str(e) for e in p) + "}"
        return "{" + ", ".join(_c_value(registry, e, by_index) for e in p) + "}"
    if isinstance(p, dict):
        parts = [f".{k} = {_c_value(registry, v, by_index)}" for k, v in p.items()]
        return "{" + ", ".join(parts) + "}"
    raise DslError(f"cannot lower payload {p!r}")


def _c_path(registry: TypeRegistry, type_name: str, path: Sequence[PathSeg]) -> str:
    out = []
    cur = type_name
    for seg in path:
        desc = registry.resolve(cur)
        if isinstance(seg, int):
            out.append(f"[{seg}]")
            cur = desc.pointee if desc.kind is TypeKind.POINTER else desc.element
        else:
            out.append(f".{seg}")
            cur = next(f.type for f in registry.resolve(cur).fields if f.name == seg)
    return "".join(out)


# ---------------------------------------------------------------------------
# Program surgery

def is_normalized(p: Program) -> bool:
    return all(s.index == i for i, s in enumerate(p.statements))


def normalized(p: Program) -> Program:
    return p if is_normalized(p) else renumber(list(p.statements))


def insert_bodies(p: Program, pos: int, bodies: Sequence[Body]) -> Program:
    """Insert bodies at position ``pos`` of a normalized program.

    Inserted bodies may reference earlier statements by their existing index
    and each other by their final indices (pos, pos+1, ...). Statements at or
    after ``pos`` shift up by len(bodies) with references rewritten.
    """
    if not is_normalized(p):
        raise DslError("insert_bodies requires a normalized program")
    shift = len(bodies)

    def remap(i: int) -> int:
        return i if i < pos else i + shift

    stmts = list(p.statements[:pos])
    stmts.extend(Statement(pos + i, b) for i, b in enumerate(bodies))
    stmts.extend(
        Statement(s.index + shift, _remap_body(s.body, remap))
        for s in p.statements[pos:]
    )
    return Program(tuple(stmts))


def drop_statements(p: Program, indices: set[int]) -> Program:
    """Remove the given statements and renumber; fails if anything kept still
    references a dropped statement."""
    kept = [s for s in p.statements if s.index not in indices]
    return renumber(kept)
