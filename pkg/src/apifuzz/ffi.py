"""
Foreign-function backend: drives a real instrumented shared library.

Every execution forks: the child marshals the program's values through
ctypes, calls the target functions, and dies however it dies; the parent
reads the shared feedback area the compile-time shim wrote (coverage map,
event ring, crash info) and classifies the outcome with the same address
rules as the synthetic backend. A hostile target can therefore do nothing
to the fuzzer but waste one child process.

The feedback layout, hook ABI, and arena behavior are fixed by the shim
header shipped with the demo target; the constants below mirror it.
"""

from __future__ import annotations

import ctypes
import mmap
import os
import signal
import struct
import time
from pathlib import Path
from random import Random
from typing import Optional

from . import dsl
from .adapter import (
    CompareEvent,
    Fault,
    FaultKind,
    Manifest,
    ResourceEvent,
    fnv1a32,
)
from .dsl import (
    AssertStmt,
    CallStmt,
    EqRule,
    FileMode,
    FileStmt,
    LoadStmt,
    NonNullRule,
    Program,
    UpdateStmt,
)
from .executor import ExecConfig, ExitKind, FeedbackReport, GUARD_OVERRIDE
from .types import NULL, LocRef, TypeKind, TypeRegistry, pack_primitives

PAGE = 4096
MAP_ENTRIES = 1 << 16
MAP_BYTES = MAP_ENTRIES * 4
RING_CAPACITY = 4096
EVENT_SIZE = 88  # u32 kind, u32 width, u64 a, u64 b, char name[64]
RING_HEADER = 8
RING_OFFSET = MAP_BYTES
CONTROL_OFFSET = RING_OFFSET + RING_HEADER + RING_CAPACITY * EVENT_SIZE
CONTROL_SIZE = 96  # magic, exit, stmt, crash_magic, addr, site, signo, detail[64]
AREA_BYTES = CONTROL_OFFSET + CONTROL_SIZE

EV_CMP, EV_ALLOC, EV_FREE, EV_FOPEN, EV_ARENA = 1, 2, 3, 4, 5
CHILD_MAGIC = 0xF00DFACE
CRASH_MAGIC = 0xDEADC0DE
EXIT_OK, EXIT_ASSERT = 1, 2


class FfiError(Exception):
    """Unsupported construct or target library failure."""


class FfiBackend:
    """Loads the instrumented library and exposes executor construction."""

    def __init__(self, manifest: Manifest, binary: Path):
        self.manifest = manifest
        self.binary = Path(binary)
        if not self.binary.is_file():
            raise FfiError(f"shared library not found: {self.binary}")
        self.lib = ctypes.CDLL(str(self.binary))
        self._declare_shim()
        self._declare_target()

    def _declare_shim(self) -> None:
        lib = self.lib
        lib.hop_shim_init.argtypes = [ctypes.c_char_p]
        lib.hop_shim_init.restype = ctypes.c_int
        lib.hop_child_begin.argtypes = []
        lib.hop_child_finish.argtypes = [ctypes.c_uint32, ctypes.c_char_p]
        lib.hop_set_context.argtypes = [ctypes.c_uint32, ctypes.c_uint32]
        lib.hop_set_stmt.argtypes = [ctypes.c_uint32]
        lib.hop_arena_alloc.argtypes = [ctypes.c_uint64, ctypes.c_uint32]
        lib.hop_arena_alloc.restype = ctypes.c_void_p
        lib.hop_guard_ptr.argtypes = []
        lib.hop_guard_ptr.restype = ctypes.c_void_p

    def _ctype_for(self, type_name: str):
        registry = self.manifest.registry
        desc = registry.resolve(type_name)
        if desc.kind is TypeKind.VOID:
            return None
        if desc.kind is TypeKind.PRIMITIVE:
            if desc.is_float:
                return ctypes.c_float if desc.width_bits == 32 else ctypes.c_double
            table = {
                (8, True): ctypes.c_int8, (8, False): ctypes.c_uint8,
                (16, True): ctypes.c_int16, (16, False): ctypes.c_uint16,
                (32, True): ctypes.c_int32, (32, False): ctypes.c_uint32,
                (64, True): ctypes.c_int64, (64, False): ctypes.c_uint64,
            }
            return table[(desc.width_bits, desc.signed)]
        if desc.kind in (TypeKind.POINTER, TypeKind.FUNCPTR):
            return ctypes.c_void_p
        raise FfiError(f"cannot marshal type {type_name!r} across the FFI")

    def _declare_target(self) -> None:
        for sig in self.manifest.signatures():
            try:
                fn = getattr(self.lib, sig.name)
            except AttributeError:
                raise FfiError(f"{self.binary.name} does not export {sig.name!r}") \
                    from None
            fn.argtypes = [self._ctype_for(t) for _, t in sig.params]
            fn.restype = self._ctype_for(sig.ret)

    def create_executor(self, cfg: ExecConfig) -> "FfiExecutor":
        return FfiExecutor(self, cfg)

    def invoke(self, name, args, ctx):  # pragma: no cover - executor-driven
        raise FfiError("the ffi backend executes through FfiExecutor only")


class _Area:
    """Parent-side view of the shared feedback area."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.truncate(AREA_BYTES)
        self._f = open(path, "r+b")
        self.mem = mmap.mmap(self._f.fileno(), AREA_BYTES)

    def close(self) -> None:
        self.mem.close()
        self._f.close()

    def coverage(self) -> dict[int, int]:
        out = {}
        mem = self.mem
        # scan 64 bytes (16 slots) at a time; the map is almost always sparse
        step = 64
        for base in range(0, MAP_BYTES, step):
            if mem[base:base + step] == b"\x00" * step:
                continue
            words = struct.unpack_from("<16I", mem, base)
            for j, w in enumerate(words):
                if w:
                    out[(base // 4) + j] = w
        return out

    def events(self) -> list[tuple]:
        count = struct.unpack_from("<I", self.mem, RING_OFFSET + 4)[0]
        count = min(count, RING_CAPACITY)
        out = []
        for i in range(count):
            off = RING_OFFSET + RING_HEADER + i * EVENT_SIZE
            kind, width, a, b = struct.unpack_from("<IIQQ", self.mem, off)
            raw = self.mem[off + 24:off + 88]
            name = raw.split(b"\x00", 1)[0].decode("latin-1")
            out.append((kind, width, a, b, name))
        return out

    def control(self) -> dict:
        magic, exit_kind, stmt, crash_magic, addr, site, signo = \
            struct.unpack_from("<IIIIQII", self.mem, CONTROL_OFFSET)
        raw = self.mem[CONTROL_OFFSET + 32:CONTROL_OFFSET + 96]
        detail = raw.split(b"\x00", 1)[0].decode("latin-1")
        return {
            "magic": magic, "exit_kind": exit_kind, "stmt": stmt,
            "crash_magic": crash_magic, "fault_addr": addr,
            "fault_site": site, "signo": signo, "detail": detail,
        }


class FfiExecutor:
    """Same execute() surface as the synthetic executor, but forked."""

    def __init__(self, backend: FfiBackend, cfg: ExecConfig):
        self.backend = backend
        self.cfg = cfg
        self.manifest = backend.manifest
        sandbox = Path(cfg.sandbox_dir) if cfg.sandbox_dir else Path("/tmp")
        self.area = _Area(sandbox / ".feedback")
        if backend.lib.hop_shim_init(str(self.area.path).encode()) != 0:
            raise FfiError("hop_shim_init failed")

    def close(self) -> None:
        self.area.close()

    def execute(self, p: Program, overrides=None,
                skip_validate: bool = False) -> FeedbackReport:
        if not skip_validate:
            diags = dsl.validate(p, self.manifest)
            if diags:
                raise FfiError("program does not validate: " + "; ".join(diags))
        started = time.monotonic()
        pid = os.fork()
        if pid == 0:
            code = 0
            try:
                _ChildRun(self, p, overrides or {}).run()
            except BaseException:
                code = 71
            finally:
                os._exit(code)
        status = self._wait(pid)
        elapsed_ms = (time.monotonic() - started) * 1000.0
        return self._build_report(p, status, elapsed_ms)

    def _wait(self, pid: int) -> Optional[int]:
        """Returns waitpid status, or None when the child was timed out."""
        deadline = time.monotonic() + self.cfg.timeout_ms / 1000.0
        while True:
            done, status = os.waitpid(pid, os.WNOHANG)
            if done == pid:
                return status
            if time.monotonic() >= deadline:
                os.kill(pid, signal.SIGKILL)
                os.waitpid(pid, 0)
                return None
            time.sleep(0.0002)

    def _build_report(self, p: Program, status: Optional[int],
                      elapsed_ms: float) -> FeedbackReport:
        control = self.area.control()
        events = self.area.events()
        coverage = self.area.coverage()
        chunks = [(a, b, width) for kind, width, a, b, _ in events
                  if kind == EV_ARENA]
        cmp_log = tuple(CompareEvent(a, b, width)
                        for kind, width, a, b, _ in events if kind == EV_CMP)
        resource_log = []
        for kind, width, a, b, name in events:
            if kind == EV_ALLOC:
                resource_log.append(ResourceEvent("alloc", token=a, size=b))
            elif kind == EV_FREE:
                resource_log.append(ResourceEvent("free", token=a))
            elif kind == EV_FOPEN:
                resource_log.append(ResourceEvent("file_open", name=name))
        target = p.target_call()
        call_coverage = {}
        if target is not None and coverage:
            call_coverage[target.index] = frozenset(coverage)

        exit_kind = ExitKind.OK
        fault = None
        detail = control["detail"]
        fault_chunk = None
        if status is None:
            exit_kind = ExitKind.TIMEOUT
            fault = Fault(FaultKind.TIMEOUT, 0, control["fault_site"],
                          control["stmt"], "wall clock")
        elif os.WIFSIGNALED(status) or control["crash_magic"] == CRASH_MAGIC \
                or (os.WIFEXITED(status) and os.WEXITSTATUS(status) >= 128):
            addr = control["fault_addr"]
            signo = control["signo"] or (
                os.WTERMSIG(status) if os.WIFSIGNALED(status) else 0)
            kind = self._classify(signo, addr, chunks)
            if kind == FaultKind.CANARY_HIT:
                fault_chunk = self._owning_chunk(p, addr, chunks)
            exit_kind = ExitKind.FAULT
            fault = Fault(kind, addr, control["fault_site"], control["stmt"],
                          detail or f"signal {signo}")
        elif os.WIFEXITED(status) and os.WEXITSTATUS(status) == 71:
            raise FfiError("child failed outside target code (marshaling bug)")
        elif control["exit_kind"] == EXIT_ASSERT:
            exit_kind = ExitKind.ASSERT_FAILED
        return FeedbackReport(
            exit=exit_kind,
            fault=fault,
            coverage=coverage,
            call_coverage=call_coverage,
            cmp_log=cmp_log,
            resource_log=tuple(resource_log),
            stmt_marks=((control["stmt"], sum(coverage.values())),),
            exit_detail=detail,
            elapsed_ms=elapsed_ms,
            fault_chunk=fault_chunk,
        )

    def _classify(self, signo: int, addr: int, chunks) -> str:
        if signo == signal.SIGABRT:
            return FaultKind.ABORT
        if addr < self.cfg.near_null:
            return FaultKind.NULL_DEREF
        for base, size, _stmt in chunks:
            if base + size <= addr < base + size + PAGE:
                return FaultKind.CANARY_HIT
        return FaultKind.INVALID_ACCESS

    def _owning_chunk(self, p: Program, addr: int,
                      chunks) -> Optional[tuple[int, int]]:
        for base, size, stmt in chunks:
            if base <= addr < base + size + PAGE and stmt != 0xFFFFFFFF:
                return (stmt, size // self._elem_size(p, stmt))
        return None

    def _elem_size(self, p: Program, stmt_index: int) -> int:
        stmt = p.by_index().get(stmt_index)
        if stmt is not None and isinstance(stmt.body, LoadStmt):
            desc = self.manifest.registry.resolve(stmt.body.type)
            if desc.kind is TypeKind.ARRAY:
                try:
                    return max(1, self.manifest.registry.layout_size(desc.element))
                except Exception:
                    return 1
        return 1


class _ChildRun:
    """Runs entirely inside the forked child; must never return normally
    without writing an exit kind, and must never unwind into the parent."""

    def __init__(self, executor: FfiExecutor, p: Program, overrides: dict):
        self.ex = executor
        self.lib = executor.backend.lib
        self.manifest = executor.manifest
        self.registry: TypeRegistry = executor.manifest.registry
        self.p = p
        self.overrides = overrides
        self.slots: dict[int, object] = {}
        self.slot_meta: dict[int, tuple[int, int]] = {}  # index -> (addr, size)
        self.allocs: dict[int, int] = {}  # token -> size
        self.freed: set[int] = set()
        self.seen_events = 0

    def run(self) -> None:
        lib = self.lib
        lib.hop_child_begin()
        sandbox = self.ex.cfg.sandbox_dir
        if sandbox:
            Path(sandbox).mkdir(parents=True, exist_ok=True)
            os.chdir(sandbox)
        try:
            import resource
            limit = self.ex.cfg.memory_limit_bytes
            resource.setrlimit(resource.RLIMIT_AS, (limit * 4, limit * 4))
        except (ImportError, ValueError, OSError):
            pass
        for stmt in self.p.statements:
            lib.hop_set_stmt(stmt.index)
            stop = self._step(stmt)
            if stop is not None:
                lib.hop_child_finish(stop[0], stop[1].encode("latin-1")[:60])
                return
        lib.hop_child_finish(EXIT_OK, b"")

    def _step(self, stmt) -> Optional[tuple[int, str]]:
        body = stmt.body
        if isinstance(body, LoadStmt):
            self.slots[stmt.index] = self._materialize(body, stmt.index)
            self._apply_value_override(stmt.index)
            return None
        if isinstance(body, FileStmt):
            self.slots[stmt.index] = self._setup_file(stmt.index, body)
            return None
        if isinstance(body, CallStmt):
            return self._call(stmt.index, body)
        if isinstance(body, AssertStmt):
            rule = body.rule
            if isinstance(rule, NonNullRule):
                v = self.slots.get(rule.index)
                if not v:
                    return (EXIT_ASSERT, f"non_null(<{rule.index}>)")
                return None
            a, b = self.slots.get(rule.a), self.slots.get(rule.b)
            if not isinstance(a, (int, float)) or a != b:
                return (EXIT_ASSERT, f"eq(<{rule.a}>, <{rule.b}>)")
            return None
        if isinstance(body, UpdateStmt):
            raise FfiError("update statements are not marshaled on this backend")
        raise FfiError(f"unhandled statement {body!r}")

    # -- values ------------------------------------------------------------

    def _arena_bytes(self, data: bytes, stmt_index: int) -> int:
        addr = self.lib.hop_arena_alloc(max(len(data), 1), stmt_index)
        if not addr:
            raise FfiError("target arena exhausted")
        if data:
            ctypes.memmove(addr, data, len(data))
        return addr

    def _materialize(self, body: LoadStmt, stmt_index: int):
        desc = self.registry.resolve(body.type)
        payload = body.value.payload
        if desc.kind is TypeKind.PRIMITIVE:
            return payload
        if desc.kind is TypeKind.ARRAY:
            elem = self.registry.resolve(desc.element)
            if elem.kind is not TypeKind.PRIMITIVE:
                raise FfiError("composite arrays are not marshaled")
            data = pack_primitives(payload, elem)
            addr = self._arena_bytes(data, stmt_index)
            self.slot_meta[stmt_index] = (addr, len(data))
            return addr
        if desc.kind is TypeKind.POINTER:
            if isinstance(payload, type(NULL)):
                return 0
            if isinstance(payload, LocRef):
                return self._address_of(payload.index)
            raise FfiError(f"bad pointer payload {payload!r}")
        if desc.kind is TypeKind.FUNCPTR:
            return 0  # callback synthesis is not part of the demo backend
        raise FfiError(f"cannot marshal a {desc.kind.name.lower()} load")

    def _address_of(self, index: int) -> int:
        slot = self.slots[index]
        meta = self.slot_meta.get(index)
        if meta is not None:
            return meta[0]
        # aliasing cell for out-parameters and pointer-to-pointer loads
        cell = self.lib.hop_arena_alloc(8, index)
        if not cell:
            raise FfiError("target arena exhausted")
        value = slot if isinstance(slot, int) else 0
        struct_bytes = struct.pack("<Q", value & 0xFFFFFFFFFFFFFFFF)
        ctypes.memmove(cell, struct_bytes, 8)
        self.slot_meta[index] = (cell, 8)
        return cell

    def _setup_file(self, stmt_index: int, body: FileStmt) -> int:
        rel = f"files/{stmt_index}"
        Path("files").mkdir(exist_ok=True)
        if body.mode is FileMode.READ:
            rng = Random(self.ex.cfg.rng_seed ^ (stmt_index * 0x9E3779B9))
            content = rng.randbytes(rng.randint(1, 64))
        else:
            content = b""
        Path(rel).write_bytes(content)
        data = rel.encode() + b"\x00"
        addr = self._arena_bytes(data, stmt_index)
        self.slot_meta[stmt_index] = (addr, len(data))
        return addr

    # -- calls ----------------------------------------------------------------

    def _call(self, index: int, body: CallStmt) -> Optional[tuple[int, str]]:
        sig = self.manifest.functions[body.name]
        fn = getattr(self.lib, body.name)
        args = []
        for pos, argidx in enumerate(body.args):
            action = self.overrides.get(("arg", index, pos))
            if action == GUARD_OVERRIDE:
                args.append(self.lib.hop_guard_ptr())
                continue
            if isinstance(action, tuple) and action[0] == "value":
                args.append(action[1])
                continue
            args.append(self.slots[argidx])
        blocked = self._uaf_blocked(args, sig)
        if blocked is not None:
            return (EXIT_ASSERT, f"use-after-free guard on {blocked:#x}")
        self.lib.hop_set_context(fnv1a32(body.name), 1 if body.tracked else 0)
        result = fn(*[self._coerce(a) for a in args])
        self.lib.hop_set_context(0, 0)
        self._consume_events()
        self.slots[index] = result if result is not None else 0
        self._apply_value_override(index)
        return None

    @staticmethod
    def _coerce(value):
        return value

    def _consume_events(self) -> None:
        count = struct.unpack_from("<I", self.ex.area.mem, RING_OFFSET + 4)[0]
        count = min(count, RING_CAPACITY)
        for i in range(self.seen_events, count):
            off = RING_OFFSET + RING_HEADER + i * EVENT_SIZE
            kind, _w, a, b = struct.unpack_from("<IIQQ", self.ex.area.mem, off)
            if kind == EV_ALLOC:
                self.allocs[a] = b
            elif kind == EV_FREE:
                self.freed.add(a)
        self.seen_events = count

    def _uaf_blocked(self, args, sig) -> Optional[int]:
        for value, (_, ptype) in zip(args, sig.params):
            if not isinstance(value, int) or value == 0:
                continue
            if self.registry.resolve(ptype).kind is not TypeKind.POINTER:
                continue
            for token in self.freed:
                size = self.allocs.get(token, 1)
                if token <= value < token + size:
                    return token
        return None

    def _apply_value_override(self, index: int) -> None:
        action = self.overrides.get((index, ()))
        if isinstance(action, tuple) and action[0] == "value":
            self.slots[index] = action[1]
        elif action == GUARD_OVERRIDE:
            self.slots[index] = self.lib.hop_guard_ptr()
