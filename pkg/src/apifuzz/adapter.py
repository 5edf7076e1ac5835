"""
Target adapter: manifest loading and the instrumented invocation surface.

A manifest (JSON) declares the target's types and function signatures. The
adapter dispatches calls by name to a :class:`TargetBackend` and routes every
hook event (branch, compare, alloc/free, file open) through a
:class:`HookContext` owned by the executor.

Two backends exist: in-process synthetic targets used by the test suite (see
``fixtures``) and a foreign-function backend for real instrumented shared
libraries (see ``ffi``). Both speak the same hook vocabulary, so coverage,
compare logs, and resource events look identical downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Union

from .types import Field, FuncSig, TypeDesc, TypeKind, TypeModelError, TypeRegistry

COVERAGE_MAP_BITS = 16
COVERAGE_MAP_SIZE = 1 << COVERAGE_MAP_BITS  # AFL-style fixed map, saturating counts
COUNT_SATURATE = 0xFFFFFFFF


class ManifestError(Exception):
    """Schema violation, dangling type reference, or duplicate name."""


@dataclass
class Manifest:
    library: str
    registry: TypeRegistry
    functions: dict[str, FuncSig]

    def signatures(self) -> list[FuncSig]:
        return [self.functions[name] for name in sorted(self.functions)]


def fnv1a32(text: str) -> int:
    """FNV-1a over the function name; used as the coverage context hash."""
    h = 0x811C9DC5
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def coverage_key(site: int, ctx_hash: int) -> int:
    return (site ^ ctx_hash) & (COVERAGE_MAP_SIZE - 1)


# ---------------------------------------------------------------------------
# Manifest loading

_KIND_NAMES = {
    "primitive": TypeKind.PRIMITIVE,
    "array": TypeKind.ARRAY,
    "record": TypeKind.RECORD,
    "alias": TypeKind.ALIAS,
    "pointer": TypeKind.POINTER,
    "opaque": TypeKind.OPAQUE,
    "funcptr": TypeKind.FUNCPTR,
    "void": TypeKind.VOID,
}


def load_manifest(path: Union[str, Path]) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from None
    return parse_manifest(doc)


def parse_manifest(doc: dict) -> Manifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    for key in ("library", "types", "functions"):
        if key not in doc:
            raise ManifestError(f"manifest missing {key!r}")
    registry = TypeRegistry()
    entries = doc["types"]
    if not isinstance(entries, list):
        raise ManifestError("'types' must be a list")
    for entry in entries:
        registry.register(_parse_type_entry(entry))
    # second pass: every referenced type must resolve
    for entry in entries:
        _check_type_refs(registry, entry)
    registry.check_recursion()
    functions: dict[str, FuncSig] = {}
    for fn in doc["functions"]:
        sig = _parse_function(registry, fn)
        if sig.name in functions:
            raise ManifestError(f"duplicate function {sig.name!r}")
        functions[sig.name] = sig
    return Manifest(doc["library"], registry, functions)


def _parse_type_entry(entry: dict) -> TypeDesc:
    if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
        raise ManifestError(f"bad type entry: {entry!r}")
    name = entry["name"]
    kind = _KIND_NAMES.get(entry["kind"])
    if kind is None:
        raise ManifestError(f"type {name!r}: unknown kind {entry['kind']!r}")
    if kind is TypeKind.PRIMITIVE:
        return TypeDesc(
            name, kind,
            width_bits=int(entry["width_bits"]),
            signed=bool(entry.get("signed", True)),
            is_float=bool(entry.get("is_float", False)),
            variants=tuple(entry.get("variants", ())),
        )
    if kind is TypeKind.ARRAY:
        length = entry.get("len")
        return TypeDesc(name, kind, element=entry["element"],
                        length=None if length is None else int(length))
    if kind is TypeKind.RECORD:
        fields = tuple(
            Field(f["name"], f["type"], int(f["offset"])) for f in entry.get("fields", ())
        )
        seen = set()
        for f in fields:
            if f.name in seen:
                raise ManifestError(f"record {name!r}: duplicate field {f.name!r}")
            seen.add(f.name)
        size = entry.get("size")
        return TypeDesc(name, kind, fields=fields, size=None if size is None else int(size))
    if kind is TypeKind.ALIAS:
        return TypeDesc(name, kind, of=entry["of"])
    if kind is TypeKind.POINTER:
        return TypeDesc(name, kind, pointee=entry["pointee"],
                        trivial=bool(entry.get("trivial", True)))
    if kind is TypeKind.FUNCPTR:
        params = tuple((p["name"], p["type"]) for p in entry.get("params", ()))
        return TypeDesc(name, kind, sig=FuncSig(name, params, entry.get("ret", "void")))
    return TypeDesc(name, kind)


def _check_type_refs(registry: TypeRegistry, entry: dict) -> None:
    name = entry["name"]
    refs: list[str] = []
    kind = entry["kind"]
    if kind == "array":
        refs.append(entry["element"])
    elif kind == "record":
        refs.extend(f["type"] for f in entry.get("fields", ()))
    elif kind == "alias":
        refs.append(entry["of"])
    elif kind == "pointer":
        refs.append(entry["pointee"])
    elif kind == "funcptr":
        refs.extend(p["type"] for p in entry.get("params", ()))
        refs.append(entry.get("ret", "void"))
    for ref in refs:
        try:
            registry.ensure(ref)
        except TypeModelError as e:
            raise ManifestError(f"type {name!r}: dangling reference {ref!r} ({e})") from None


def _parse_function(registry: TypeRegistry, fn: dict) -> FuncSig:
    if not isinstance(fn, dict) or "name" not in fn:
        raise ManifestError(f"bad function entry: {fn!r}")
    name = fn["name"]
    params = []
    for p in fn.get("params", ()):
        try:
            ptype = registry.ensure(p["type"])
        except TypeModelError as e:
            raise ManifestError(f"function {name!r}: {e}") from None
        params.append((p["name"], ptype))
    try:
        ret = registry.ensure(fn.get("ret", "void"))
    except TypeModelError as e:
        raise ManifestError(f"function {name!r}: {e}") from None
    return FuncSig(name, tuple(params), ret)


# ---------------------------------------------------------------------------
# Fault signalling


class FaultKind:
    NULL_DEREF = "null-deref"
    CANARY_HIT = "canary-hit"
    INVALID_ACCESS = "invalid-access"
    TIMEOUT = "timeout"
    OOM = "oom"
    ABORT = "abort"


@dataclass(frozen=True)
class Fault:
    kind: str
    address: int
    site: int  # crash-site-id (last executed site / synthetic RIP)
    stmt_index: int = -1
    detail: str = ""


class FaultSignal(Exception):
    """Raised inside a target call; the executor classifies and records it.

    ``kind`` may be None for plain memory faults, in which case the executor
    derives it from the address (near-null / guard range / other).
    """

    def __init__(self, address: int, site: int, kind: Optional[str] = None, detail: str = ""):
        super().__init__(f"fault at {address:#x} (site {site})")
        self.address = address
        self.site = site
        self.kind = kind
        self.detail = detail


@dataclass(frozen=True)
class CompareEvent:
    a: int
    b: int
    width: int


@dataclass(frozen=True)
class ResourceEvent:
    kind: str  # "alloc" | "free" | "file_open"
    token: int = 0
    size: int = 0
    name: str = ""


class HookContext:
    """Per-execution hook sink plus the memory/resource surface fixtures use.

    Branch events are recorded only while the currently executing call is
    tracked; the context hash is the FNV-1a of the current function's name,
    so one site visited under two functions yields two coverage entries.
    """

    def __init__(self, arena, *, timeout_ms: float, memory_limit: int, sandbox: Optional[Path]):
        self.arena = arena
        self.timeout_ms = timeout_ms
        self.memory_limit = memory_limit
        self.sandbox = sandbox
        self.coverage: dict[int, int] = {}
        self.call_coverage: dict[int, set[int]] = {}
        self.cmp_log: list[CompareEvent] = []
        self.resource_log: list[ResourceEvent] = []
        self.sandbox_files: dict[str, bytes] = {}  # created by this execution
        self.freed: set[int] = set()
        self._live_allocs: set[int] = set()
        self.consumed_ms = 0.0
        self.consumed_bytes = 0
        self.last_site = 0
        self._fn: Optional[str] = None
        self._ctx_hash = 0
        self._tracked = False
        self._stmt = -1

    # -- call window -------------------------------------------------------

    def begin_call(self, stmt_index: int, fn_name: str, tracked: bool) -> None:
        self._stmt = stmt_index
        self._fn = fn_name
        self._ctx_hash = fnv1a32(fn_name)
        self._tracked = tracked
        if tracked:
            self.call_coverage.setdefault(stmt_index, set())

    def end_call(self) -> None:
        self._fn = None
        self._tracked = False

    @property
    def in_call(self) -> bool:
        return self._fn is not None

    @property
    def current_stmt(self) -> int:
        return self._stmt

    # -- hook events ---------------------------------------------------------

    def branch(self, site: int) -> None:
        self.last_site = site
        if not self._tracked:
            return
        key = coverage_key(site, self._ctx_hash)
        count = self.coverage.get(key, 0)
        if count < COUNT_SATURATE:
            self.coverage[key] = count + 1
        self.call_coverage[self._stmt].add(key)

    def cmp(self, a: int, b: int, width: int = 32) -> None:
        self.cmp_log.append(CompareEvent(int(a), int(b), width))

    def alloc(self, size: int, kind: str = "opaque"):
        chunk = self.arena.alloc(size, kind)
        self._live_allocs.add(chunk.base)
        self.resource_log.append(ResourceEvent("alloc", token=chunk.base, size=size))
        return chunk

    def free(self, token: int) -> None:
        if token in self.freed:
            raise FaultSignal(token, self.last_site, kind=FaultKind.ABORT,
                              detail="double free")
        self.freed.add(token)
        self.resource_log.append(ResourceEvent("free", token=token))

    def fopen(self, name: str) -> Optional[bytes]:
        """Record the open attempt; returns file content if it exists in the
        sandbox, else None."""
        self.resource_log.append(ResourceEvent("file_open", name=name))
        cached = self.sandbox_files.get(name)
        if cached is not None:
            return cached
        if self.sandbox is None:
            return None
        if ".." not in name and not name.startswith("/"):
            candidate = self.sandbox / name
            return candidate.read_bytes() if candidate.is_file() else None
        candidate = (self.sandbox / name) if not Path(name).is_absolute() else Path(name)
        try:
            candidate.resolve().relative_to(Path(self.sandbox).resolve())
        except ValueError:
            return None
        if candidate.is_file():
            return candidate.read_bytes()
        return None

    # -- virtual resources ---------------------------------------------------

    def consume_time(self, ms: float) -> None:
        self.consumed_ms += ms
        if self.consumed_ms > self.timeout_ms:
            raise FaultSignal(0, self.last_site, kind=FaultKind.TIMEOUT,
                              detail="virtual time limit")

    def consume_memory(self, nbytes: int) -> None:
        self.consumed_bytes += nbytes
        if self.consumed_bytes > self.memory_limit:
            raise FaultSignal(0, self.last_site, kind=FaultKind.OOM,
                              detail="virtual memory limit")

    def fault(self, address: int, site: Optional[int] = None,
              kind: Optional[str] = None, detail: str = "") -> None:
        raise FaultSignal(address, self.last_site if site is None else site,
                          kind=kind, detail=detail)


class TargetBackend(Protocol):
    """Invocation surface every backend implements."""

    manifest: Manifest

    def invoke(self, name: str, args: list, ctx: HookContext):  # pragma: no cover
        ...


class InvokeError(Exception):
    """Unknown function or arity mismatch at the adapter boundary."""


def invoke(backend: TargetBackend, name: str, args: list, ctx: HookContext):
    """Dispatch one call through a backend with basic contract checks."""
    sig = backend.manifest.functions.get(name)
    if sig is None:
        raise InvokeError(f"unknown function {name!r}")
    if len(args) != len(sig.params):
        raise InvokeError(f"{name} takes {len(sig.params)} arguments, got {len(args)}")
    return backend.invoke(name, args, ctx)
