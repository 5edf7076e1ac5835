"""
Program interpreter: runs one DSL program statement-by-statement against a
target backend, inside a disposable execution context.

Every array (and record) load is materialized in a canary arena: the payload
is immediately followed by a protected guard page, so one-past-the-end access
produces a fault whose address falls inside the guard range and classifies as
a canary hit. Null and wild addresses classify by the same address rules the
crash-triage steps use (near-null threshold, guard ranges).

A fault never unwinds the caller: synthetic backends signal faults with
exceptions that are trapped here, and the foreign-function backend runs in a
forked child, so the fuzzer survives arbitrarily hostile executions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from random import Random
from typing import Optional, Sequence

from . import dsl
from .adapter import (
    CompareEvent,
    Fault,
    FaultKind,
    FaultSignal,
    HookContext,
    InvokeError,
    Manifest,
    ResourceEvent,
    TargetBackend,
    invoke,
)
from .dsl import (
    AssertStmt,
    CallRole,
    CallStmt,
    EqRule,
    FileMode,
    FileStmt,
    LoadStmt,
    NonNullRule,
    Program,
    UpdateStmt,
)
from .types import (
    NULL,
    FnStub,
    LocRef,
    TypeKind,
    TypeModelError,
    TypeRegistry,
    Value,
)


class ExecutorError(Exception):
    """Validation failure, sandbox setup failure, or arena exhaustion."""


class ExitKind:
    OK = "ok"
    ASSERT_FAILED = "assert-failed"
    FAULT = "fault"
    TIMEOUT = "timeout"
    OOM = "oom"


@dataclass
class ExecConfig:
    timeout_ms: float = 1000.0
    memory_limit_bytes: int = 512 << 20
    sandbox_dir: Optional[Path] = None
    canary_page_bytes: int = 4096
    rng_seed: int = 0
    near_null: int = 4096
    arena_capacity: int = 1 << 24

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0 or self.memory_limit_bytes <= 0 \
                or self.canary_page_bytes <= 0:
            raise ExecutorError("ExecConfig limits must be positive")


@dataclass
class FeedbackReport:
    """Everything one execution tells the fuzzer."""

    exit: str
    fault: Optional[Fault]
    coverage: dict[int, int]
    call_coverage: dict[int, frozenset[int]]
    cmp_log: tuple[CompareEvent, ...]
    resource_log: tuple[ResourceEvent, ...]
    stmt_marks: tuple[tuple[int, int], ...]  # (stmt index, cumulative hits)
    exit_detail: str = ""
    elapsed_ms: float = 0.0
    fault_chunk: Optional[tuple[int, int]] = None  # (owning stmt, element count)

    def coverage_keys(self) -> frozenset[int]:
        return frozenset(self.coverage)

    def target_coverage(self, p: Program) -> frozenset[int]:
        target = p.target_call()
        if target is None:
            return frozenset()
        return self.call_coverage.get(target.index, frozenset())

    def crashed(self) -> bool:
        return self.exit in (ExitKind.FAULT, ExitKind.TIMEOUT, ExitKind.OOM)


# ---------------------------------------------------------------------------
# Runtime values


class Chunk:
    """Arena-backed storage: array elements, a record, an opaque handle, or
    a single aliasing cell that proxies another statement's slot."""

    __slots__ = ("kind", "base", "size", "guard_lo", "guard_hi", "items", "fields",
                 "elem_size", "elem_type", "stmt", "protected", "payload",
                 "_cell_store", "_cell_index")

    def __init__(self, kind: str, base: int, size: int, guard_bytes: int):
        self.kind = kind  # "array" | "record" | "opaque" | "cell" | "guard"
        self.base = base
        self.size = size
        self.guard_lo = base + size
        self.guard_hi = base + size + guard_bytes
        self.items: list = []
        self.fields: dict = {}
        self.elem_size = 1
        self.elem_type = ""
        self.stmt = -1
        self.protected = False
        self.payload: dict = {}
        self._cell_store = None
        self._cell_index = -1

    def length(self) -> int:
        if self.kind == "cell":
            return 1
        return len(self.items)

    def addr_of(self, index: int) -> int:
        return self.base + index * self.elem_size


class Ptr:
    """Runtime pointer: null, or aimed at a chunk (plus element offset)."""

    __slots__ = ("chunk", "offset")

    def __init__(self, chunk: Optional[Chunk], offset: int = 0):
        self.chunk = chunk
        self.offset = offset

    @property
    def is_null(self) -> bool:
        return self.chunk is None

    def addr(self) -> int:
        if self.chunk is None:
            return 0
        return self.chunk.addr_of(self.offset)


NULL_PTR = Ptr(None)


@dataclass(frozen=True)
class FnStubRt:
    type_name: str


class Arena:
    """Canary arena: every allocation abuts a protected guard region."""

    def __init__(self, capacity: int, guard_bytes: int, base: int = 0x10000000):
        self.capacity = capacity
        self.guard_bytes = guard_bytes
        self._cursor = base
        self._start = base
        self.chunks: list[Chunk] = []

    def alloc(self, size: int, kind: str = "array") -> Chunk:
        """Allocate a region whose last byte abuts a protected guard region;
        any access past the end lands in the guard and classifies as a
        canary hit."""
        if size < 0:
            raise ExecutorError("negative allocation")
        if self._cursor + size + self.guard_bytes > self._start + self.capacity:
            raise ExecutorError("arena exhausted")
        chunk = Chunk(kind, self._cursor, size, self.guard_bytes)
        self._cursor = chunk.guard_hi
        self.chunks.append(chunk)
        return chunk

    alloc_guarded = alloc

    def alloc_protected(self) -> Chunk:
        """A chunk that faults on any access (null-pointer probe target)."""
        chunk = self.alloc(0, kind="guard")
        chunk.protected = True
        return chunk

    def classify_address(self, address: int, near_null: int) -> str:
        if 0 <= address < near_null:
            return FaultKind.NULL_DEREF
        for chunk in self.chunks:
            if chunk.guard_lo <= address < chunk.guard_hi:
                return FaultKind.CANARY_HIT
        return FaultKind.INVALID_ACCESS

    def chunk_at(self, address: int) -> Optional[Chunk]:
        for chunk in self.chunks:
            if chunk.base <= address < chunk.guard_hi:
                return chunk
        return None


def classify_exit(arena: Arena, signal: FaultSignal, cfg: ExecConfig) -> Fault:
    """Turn a raw fault signal into a classified Fault."""
    kind = signal.kind
    if kind is None:
        kind = arena.classify_address(signal.address, cfg.near_null)
    return Fault(kind=kind, address=signal.address, site=signal.site,
                 detail=signal.detail)


# ---------------------------------------------------------------------------
# Execution

GUARD_OVERRIDE = "guard"

# Two key forms:
#   (statement index, path)          -> override the produced slot value
#   ("arg", call index, position)    -> override one argument of one call
# Actions: GUARD_OVERRIDE aims a pointer at a protected chunk; ("value", v)
# substitutes v. Argument-level overrides leave every other use of the
# original statement untouched, which matters when probing a single call.
Override = dict[tuple, object]


class Executor:
    """One in-flight execution at a time; create one per worker."""

    def __init__(self, backend: TargetBackend, cfg: ExecConfig):
        self.backend = backend
        self.cfg = cfg
        self.manifest: Manifest = backend.manifest
        self._fd_cache: dict[str, int] = {}

    def execute(self, p: Program, overrides: Optional[Override] = None,
                skip_validate: bool = False) -> FeedbackReport:
        if not skip_validate:
            diags = dsl.validate(p, self.manifest)
            if diags:
                raise ExecutorError("program does not validate: " + "; ".join(diags))
        run = _Run(self, p, overrides or {})
        return run.run()

    def write_sandbox_file(self, rel: str, data: bytes) -> None:
        """Create/overwrite one sandbox file; file descriptors are reused
        because the same statement indices recur across executions."""
        import os
        fd = self._fd_cache.get(rel)
        if fd is None:
            path = Path(self.cfg.sandbox_dir) / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            fd = os.open(path, os.O_CREAT | os.O_RDWR, 0o644)
            self._fd_cache[rel] = fd
        os.pwrite(fd, data, 0)
        os.ftruncate(fd, len(data))

    def close(self) -> None:
        import os
        for fd in self._fd_cache.values():
            try:
                os.close(fd)
            except OSError:
                pass
        self._fd_cache.clear()

    def __del__(self):  # best effort; campaigns call close() explicitly
        try:
            self.close()
        except Exception:
            pass


class _Run:
    def __init__(self, executor: Executor, p: Program, overrides: Override):
        self.ex = executor
        self.p = p
        self.overrides = overrides
        cfg = executor.cfg
        self.arena = Arena(cfg.arena_capacity, cfg.canary_page_bytes)
        self.ctx = HookContext(
            self.arena,
            timeout_ms=cfg.timeout_ms,
            memory_limit=cfg.memory_limit_bytes,
            sandbox=cfg.sandbox_dir,
        )
        self.slots: dict[int, object] = {}
        self.cells: dict[int, Chunk] = {}
        self.registry: TypeRegistry = executor.manifest.registry
        self.marks: list[tuple[int, int]] = []

    def run(self) -> FeedbackReport:
        cfg = self.ex.cfg
        exit_kind = ExitKind.OK
        fault: Optional[Fault] = None
        fault_chunk: Optional[tuple[int, int]] = None
        detail = ""
        started = time.monotonic()
        for stmt in self.p.statements:
            try:
                stop = self._step(stmt)
            except FaultSignal as sig:
                fault = replace(classify_exit(self.arena, sig, cfg), stmt_index=stmt.index)
                if fault.kind == FaultKind.TIMEOUT:
                    exit_kind = ExitKind.TIMEOUT
                elif fault.kind == FaultKind.OOM:
                    exit_kind = ExitKind.OOM
                else:
                    exit_kind = ExitKind.FAULT
                if fault.kind == FaultKind.CANARY_HIT:
                    hit = self.arena.chunk_at(fault.address)
                    if hit is not None and hit.kind == "array" and hit.stmt >= 0:
                        fault_chunk = (hit.stmt, hit.length())
                detail = fault.detail
                break
            finally:
                self.ctx.end_call()
                self.marks.append((stmt.index, sum(self.ctx.coverage.values())))
            if stop is not None:
                exit_kind, detail = stop
                break
            if (time.monotonic() - started) * 1000.0 > cfg.timeout_ms * 50:
                # wall-clock backstop; virtual time is the primary budget
                exit_kind = ExitKind.TIMEOUT
                fault = Fault(FaultKind.TIMEOUT, 0, self.ctx.last_site, stmt.index,
                              "wall clock")
                break
        return FeedbackReport(
            exit=exit_kind,
            fault=fault,
            coverage=dict(self.ctx.coverage),
            call_coverage={k: frozenset(v) for k, v in self.ctx.call_coverage.items()},
            cmp_log=tuple(self.ctx.cmp_log),
            resource_log=tuple(self.ctx.resource_log),
            stmt_marks=tuple(self.marks),
            exit_detail=detail,
            elapsed_ms=self.ctx.consumed_ms,
            fault_chunk=fault_chunk,
        )

    def _step(self, stmt: dsl.Statement) -> Optional[tuple[str, str]]:
        body = stmt.body
        if isinstance(body, LoadStmt):
            value = self._materialize(body.value, stmt.index)
            value = self._apply_overrides(value, stmt.index)
            self.slots[stmt.index] = value
            return None
        if isinstance(body, FileStmt):
            self.slots[stmt.index] = self._setup_file(stmt.index, body)
            return None
        if isinstance(body, CallStmt):
            args = [self._arg_value(a) for a in body.args]
            for pos in range(len(args)):
                action = self.overrides.get(("arg", stmt.index, pos))
                if action == GUARD_OVERRIDE:
                    args[pos] = Ptr(self.arena.alloc_protected())
                elif isinstance(action, tuple) and action[0] == "value":
                    args[pos] = action[1]
            blocked = self._uaf_blocked(args)
            if blocked is not None:
                return (ExitKind.ASSERT_FAILED, f"use-after-free guard on <{blocked}>")
            self.ctx.begin_call(stmt.index, body.name, body.tracked)
            try:
                result = invoke(self.ex.backend, body.name, args, self.ctx)
            except InvokeError as e:
                raise ExecutorError(str(e)) from None
            self.slots[stmt.index] = self._apply_overrides(result, stmt.index)
            return None
        if isinstance(body, AssertStmt):
            rule = body.rule
            if isinstance(rule, NonNullRule):
                v = self.slots.get(rule.index)
                is_null = v is None or (isinstance(v, Ptr) and v.is_null)
                if is_null:
                    return (ExitKind.ASSERT_FAILED, f"non_null(<{rule.index}>) failed")
                return None
            a, b = self.slots.get(rule.a), self.slots.get(rule.b)
            if not isinstance(a, (int, float)) or not isinstance(b, (int, float)) or a != b:
                return (ExitKind.ASSERT_FAILED, f"eq(<{rule.a}>, <{rule.b}>) failed")
            return None
        if isinstance(body, UpdateStmt):
            self._apply_update(body)
            return None
        raise ExecutorError(f"unhandled statement {body!r}")

    # -- materialization ---------------------------------------------------

    def _materialize(self, value: Value, stmt_index: int):
        desc = self.registry.resolve(value.type)
        payload = value.payload
        if desc.kind is TypeKind.PRIMITIVE:
            return payload
        if desc.kind is TypeKind.POINTER:
            if isinstance(payload, type(NULL)):
                return NULL_PTR
            if isinstance(payload, LocRef):
                return self._pointer_to_slot(payload.index, desc.pointee)
            raise ExecutorError(f"bad pointer payload {payload!r}")
        if desc.kind is TypeKind.FUNCPTR:
            if isinstance(payload, type(NULL)):
                return NULL_PTR
            return FnStubRt(desc.name)
        if desc.kind is TypeKind.ARRAY:
            elem = self.registry.resolve(desc.element)
            elem_size = self._elem_size(desc.element)
            chunk = self.arena.alloc(len(payload) * elem_size, kind="array")
            chunk.elem_size = elem_size
            chunk.elem_type = desc.element
            chunk.stmt = stmt_index
            if elem.kind is TypeKind.PRIMITIVE:
                chunk.items = list(payload)
            else:
                chunk.items = [self._materialize(e, stmt_index) for e in payload]
            return chunk
        if desc.kind is TypeKind.RECORD:
            size = max(1, self.registry.layout_size(desc.name))
            chunk = self.arena.alloc(size, kind="record")
            chunk.stmt = stmt_index
            chunk.fields = {
                name: self._materialize(v, stmt_index) for name, v in payload.items()
            }
            return chunk
        raise ExecutorError(f"cannot materialize kind {desc.kind.name.lower()}")

    def _elem_size(self, type_name: str) -> int:
        try:
            return max(1, self.registry.layout_size(type_name))
        except TypeModelError:
            return 1

    def _pointer_to_slot(self, index: int, pointee: str) -> Ptr:
        slot = self.slots[index]
        if isinstance(slot, Chunk):
            return Ptr(slot)
        if isinstance(slot, Ptr):
            return Ptr(self._cell_for(index))
        if isinstance(slot, (int, float)):
            return Ptr(self._cell_for(index))
        raise ExecutorError(f"cannot take address of slot <{index}>")

    def _cell_for(self, index: int) -> Chunk:
        cell = self.cells.get(index)
        if cell is None:
            cell = self.arena.alloc(8, kind="cell")
            cell.stmt = index
            cell._cell_store = self.slots
            cell._cell_index = index
            self.cells[index] = cell
        return cell

    def _apply_overrides(self, value_rt, stmt_index: int):
        for key, action in self.overrides.items():
            if len(key) != 2 or key[0] == "arg":
                continue
            idx, path = key
            if idx != stmt_index:
                continue
            if action == GUARD_OVERRIDE:
                new: object = Ptr(self.arena.alloc_protected())
            elif isinstance(action, tuple) and len(action) == 2 \
                    and action[0] == "value":
                new = action[1]
            else:
                continue
            if not path:
                value_rt = new
            else:
                _write_runtime_path(value_rt, path, new)
        return value_rt

    def _setup_file(self, stmt_index: int, body: FileStmt) -> Ptr:
        sandbox = self.ex.cfg.sandbox_dir
        if sandbox is None:
            raise ExecutorError("file statement requires a sandbox directory")
        rel = f"files/{stmt_index}"
        if body.mode is FileMode.READ:
            rng = Random(self.ex.cfg.rng_seed ^ (stmt_index * 0x9E3779B9))
            content = rng.randbytes(rng.randint(1, 64))
        else:
            content = b""
        self.ex.write_sandbox_file(rel, content)
        self.ctx.sandbox_files[rel] = content
        data = rel.encode() + b"\x00"
        chunk = self.arena.alloc(len(data), kind="array")
        chunk.elem_size = 1
        chunk.elem_type = "char"
        chunk.stmt = stmt_index
        chunk.items = list(data)
        return Ptr(chunk)

    # -- calls ---------------------------------------------------------------

    def _arg_value(self, index: int):
        slot = self.slots[index]
        if isinstance(slot, Chunk):
            return Ptr(slot)  # arrays/records decay to pointers at call sites
        return slot

    def _uaf_blocked(self, args: Sequence) -> Optional[int]:
        for a in args:
            if isinstance(a, Ptr) and a.chunk is not None:
                if a.chunk.base in self.ctx.freed:
                    return a.chunk.base
                box = a.chunk
                for token in box.payload.get("owned_tokens", ()):  # handle innards
                    if token in self.ctx.freed:
                        return token
        return None

    # -- update ----------------------------------------------------------------

    def _apply_update(self, body: UpdateStmt) -> None:
        dst = self.slots.get(body.dst)
        if dst is None:
            return
        src = self.slots[body.src]
        if isinstance(src, Chunk):
            src_for_slot: object = Ptr(src)
        else:
            src_for_slot = src
        container = dst
        path = body.path
        # Walk to the parent of the final segment.
        for seg in path[:-1]:
            container = _read_runtime_seg(container, seg)
            if container is None:
                return
        if not path:
            return
        _write_runtime_seg(container, path[-1], src, src_for_slot)


def _read_runtime_seg(container, seg):
    if isinstance(seg, int):
        if isinstance(container, Ptr):
            if container.is_null:
                return None
            chunk = container.chunk
            if chunk.kind == "cell":
                return chunk._cell_store[chunk._cell_index]
            if chunk.kind == "record" and seg == 0:
                return chunk
            if 0 <= container.offset + seg < len(chunk.items):
                return chunk.items[container.offset + seg]
            return None
        if isinstance(container, Chunk):
            if container.kind == "record" and seg == 0:
                return container
            if 0 <= seg < len(container.items):
                return container.items[seg]
            return None
        return None
    if isinstance(container, Chunk) and container.kind == "record":
        return container.fields.get(seg)
    if isinstance(container, Ptr) and container.chunk is not None \
            and container.chunk.kind == "record":
        return container.chunk.fields.get(seg)
    return None


def _write_runtime_seg(container, seg, raw_src, src_for_slot) -> None:
    if isinstance(container, Ptr):
        container = container.chunk
    if container is None:
        return
    if isinstance(seg, int):
        if container.kind == "cell":
            container._cell_store[container._cell_index] = src_for_slot
        elif 0 <= seg < len(container.items):
            container.items[seg] = raw_src if isinstance(raw_src, (int, float)) \
                else src_for_slot
    else:
        if container.kind == "record":
            container.fields[seg] = src_for_slot


def _write_runtime_path(value_rt, path: tuple, new) -> None:
    container = value_rt
    for seg in path[:-1]:
        container = _read_runtime_seg(container, seg)
        if container is None:
            return
    _write_runtime_seg(container, path[-1], new, new)
