"""
Synthetic target fixtures: small in-process libraries with declared ground
truth, seeded bugs, and explicit branch-site numbering.

Each fixture stands in for one real-library behavior shape: unchecked
pointer dereferences, file-based configuration, length/index arguments that
bound arrays, implicit minimum buffer sizes, raw void* data, opaque handle
producers, setter-gated state machines, byte-triggered faults, and resource
blow-ups. Fixture functions only touch program state through the hook
context and the pointer helpers below, so every fault is classified by the
same address rules as any other backend.

Branch sites are literal constants in the fixture code; ground truth files
list exactly the constraints a correct learner must converge to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .adapter import FaultSignal, HookContext, Manifest, parse_manifest
from .constraints import ArgLocator, Constraint
from .executor import Chunk, Ptr

FMT_FAULT_ADDRESS = 0xDEADBEE0  # far outside the arena: classifies invalid-access


# ---------------------------------------------------------------------------
# Pointer helpers for fixture code


def _null_fault(ctx: HookContext, offset: int, site: int):
    raise FaultSignal(offset, site)


def read_index(ctx: HookContext, ptr, i: int, site: int):
    """Read ptr[i]; faults exactly like unchecked C array access."""
    if not isinstance(ptr, Ptr) or ptr.is_null:
        _null_fault(ctx, max(0, i), site)
    chunk = ptr.chunk
    if chunk.protected:
        raise FaultSignal(chunk.base + i, site)
    if chunk.kind == "cell":
        if i == 0:
            return chunk._cell_store[chunk._cell_index]
        raise FaultSignal(chunk.addr_of(i), site)
    idx = ptr.offset + i
    if idx < 0 or idx >= len(chunk.items):
        raise FaultSignal(chunk.addr_of(idx), site)
    return chunk.items[idx]


def write_index(ctx: HookContext, ptr, i: int, value, site: int) -> None:
    if not isinstance(ptr, Ptr) or ptr.is_null:
        _null_fault(ctx, max(0, i), site)
    chunk = ptr.chunk
    if chunk.protected:
        raise FaultSignal(chunk.base + i, site)
    if chunk.kind == "cell":
        if i == 0:
            chunk._cell_store[chunk._cell_index] = value
            return
        raise FaultSignal(chunk.addr_of(i), site)
    idx = ptr.offset + i
    if idx < 0 or idx >= len(chunk.items):
        raise FaultSignal(chunk.addr_of(idx), site)
    chunk.items[idx] = value


def _record_chunk(ctx: HookContext, ptr, site: int) -> Chunk:
    if not isinstance(ptr, Ptr) or ptr.is_null:
        _null_fault(ctx, 8, site)
    chunk = ptr.chunk
    if chunk.protected:
        raise FaultSignal(chunk.base, site)
    if chunk.kind == "array":
        if ptr.offset >= len(chunk.items):
            raise FaultSignal(chunk.addr_of(ptr.offset), site)
        inner = chunk.items[ptr.offset]
        if isinstance(inner, Chunk):
            return inner
        raise FaultSignal(chunk.addr_of(ptr.offset), site)
    return chunk


def read_field(ctx: HookContext, ptr, name: str, site: int):
    chunk = _record_chunk(ctx, ptr, site)
    if name in chunk.fields:
        return chunk.fields[name]
    raise FaultSignal(chunk.base, site)


def write_field(ctx: HookContext, ptr, name: str, value, site: int) -> None:
    chunk = _record_chunk(ctx, ptr, site)
    chunk.fields[name] = value


def read_box(ctx: HookContext, ptr, site: int) -> dict:
    """Dereference an opaque handle; unchecked, so null and probes fault."""
    if not isinstance(ptr, Ptr) or ptr.is_null:
        _null_fault(ctx, 8, site)
    chunk = ptr.chunk
    if chunk.protected:
        raise FaultSignal(chunk.base, site)
    return chunk.payload


def new_box(ctx: HookContext, size: int = 16, **payload) -> Ptr:
    chunk = ctx.alloc(size, kind="opaque")
    chunk.payload.update(payload)
    return Ptr(chunk)


def arr_len(ptr) -> int:
    """Model privilege: fixtures that scan whole buffers read the true
    length instead of replicating C string conventions."""
    if not isinstance(ptr, Ptr) or ptr.is_null:
        return 0
    if ptr.chunk.kind == "cell":
        return 1
    return max(0, len(ptr.chunk.items) - ptr.offset)


def cstr(ptr) -> Optional[str]:
    """Bounded C-string read: bytes up to the first NUL or the buffer end."""
    if not isinstance(ptr, Ptr) or ptr.is_null:
        return None
    chunk = ptr.chunk
    if chunk.protected or chunk.kind == "cell":
        return None
    out = bytearray()
    for v in chunk.items[ptr.offset:]:
        if not isinstance(v, (int, float)):
            return None
        b = int(v) & 0xFF
        if b == 0:
            break
        out.append(b)
    return out.decode("latin-1")


# ---------------------------------------------------------------------------
# Fixture plumbing


@dataclass(frozen=True)
class SeededBug:
    description: str
    fault_kind: str
    trigger: str  # minimal trigger program, DSL text


@dataclass
class Fixture:
    name: str
    manifest: Manifest
    functions: dict[str, Callable]
    ground_truth: list[Constraint]
    seeded_bugs: list[SeededBug] = field(default_factory=list)
    branch_sites: dict[str, list[int]] = field(default_factory=dict)
    manifest_doc: dict = field(default_factory=dict)

    def ground_truth_doc(self) -> dict:
        return {
            "constraints": [c.to_json() for c in self.ground_truth],
            "seeded_bugs": [
                {"description": b.description, "fault_kind": b.fault_kind,
                 "trigger": b.trigger}
                for b in self.seeded_bugs
            ],
            "branch_sites": self.branch_sites,
        }


class SyntheticBackend:
    """Dispatch calls to fixture functions; hook events flow through ctx."""

    def __init__(self, fixture: Fixture, manifest: Optional[Manifest] = None):
        self.fixture = fixture
        self.manifest = manifest if manifest is not None else fixture.manifest

    def invoke(self, name: str, args: list, ctx: HookContext):
        return self.fixture.functions[name](ctx, *args)


_BUILDERS: dict[str, Callable[[], Fixture]] = {}


def _fixture(builder: Callable[[], Fixture]) -> Callable[[], Fixture]:
    name = builder.__name__.removeprefix("build_")
    _BUILDERS[name] = builder
    return builder


def fixture_catalog() -> list[Fixture]:
    return [build() for _, build in sorted(_BUILDERS.items())]


def get_fixture(name: str) -> Fixture:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"no fixture named {name!r}; have {sorted(_BUILDERS)}") from None


def synthetic_backend_for(manifest: Manifest) -> SyntheticBackend:
    fixture = get_fixture(manifest.library)
    return SyntheticBackend(fixture, manifest)


def _mk(name: str, doc: dict, functions: dict, ground_truth: list,
        seeded_bugs: list, branch_sites: dict) -> Fixture:
    manifest = parse_manifest(doc)
    return Fixture(name, manifest, functions, ground_truth, seeded_bugs,
                   branch_sites, manifest_doc=doc)


# ---------------------------------------------------------------------------
# 1. nulllib: unchecked pointer dereference (NON-NULL)


@_fixture
def build_nulllib() -> Fixture:
    doc = {
        "library": "nulllib",
        "types": [
            {"name": "Item", "kind": "record", "fields": [
                {"name": "value", "type": "i32", "offset": 0},
                {"name": "tag", "type": "i32", "offset": 4},
            ]},
        ],
        "functions": [
            {"name": "touch", "params": [{"name": "it", "type": "Item*"}], "ret": "i32"},
            {"name": "peek", "params": [{"name": "it", "type": "Item*"}], "ret": "i32"},
            {"name": "make_item", "params": [], "ret": "Item*"},
        ],
    }

    def touch(ctx, it):
        v = read_field(ctx, it, "value", site=11)  # no null check
        ctx.branch(1)
        if not isinstance(v, (int, float)):
            v = 0
        if int(v) % 2:
            ctx.branch(2)
        else:
            ctx.branch(3)
        return int(v)

    def peek(ctx, it):
        ctx.branch(1)
        if not isinstance(it, Ptr) or it.is_null:
            ctx.branch(2)
            return -1
        ctx.branch(3)
        return int(read_field(ctx, it, "tag", site=12) or 0)

    def make_item(ctx):
        ctx.branch(1)
        box = ctx.alloc(8, kind="record")
        box.fields = {"value": 7, "tag": 1}
        return Ptr(box)

    trigger = "<0> load Item* = null\n<1> call target: touch ? (<0>)\n"
    return _mk(
        "nulllib", doc,
        {"touch": touch, "peek": peek, "make_item": make_item},
        [Constraint("touch", ArgLocator(0), "NON-NULL")],
        [SeededBug("touch dereferences without a null check", "null-deref", trigger)],
        {"touch": [1, 2, 3], "peek": [1, 2, 3], "make_item": [1]},
    )


# ---------------------------------------------------------------------------
# 2. filelib: filename argument must name a real file (FILE)


@_fixture
def build_filelib() -> Fixture:
    doc = {
        "library": "filelib",
        "types": [],
        "functions": [
            {"name": "load_cfg", "params": [{"name": "path", "type": "char*"}],
             "ret": "i32"},
            {"name": "version", "params": [], "ret": "i32"},
        ],
    }

    def load_cfg(ctx, path):
        ctx.branch(1)
        name = cstr(path)
        if name is None:
            ctx.branch(2)
            return -1
        data = ctx.fopen(name)
        if data is None:
            ctx.branch(3)
            return 0
        ctx.branch(4)
        if data and data[0] == 0x42:
            ctx.branch(5)
            return 2
        return 1

    def version(ctx):
        ctx.branch(1)
        return 1

    return _mk(
        "filelib", doc,
        {"load_cfg": load_cfg, "version": version},
        [Constraint("load_cfg", ArgLocator(0), "FILE")],
        [],
        {"load_cfg": [1, 2, 3, 4, 5], "version": [1]},
    )


# ---------------------------------------------------------------------------
# 3. arraylib: a length argument bounds the buffer (EQUAL)


@_fixture
def build_arraylib() -> Fixture:
    doc = {
        "library": "arraylib",
        "types": [],
        "functions": [
            {"name": "sum", "params": [{"name": "buf", "type": "char*"},
                                       {"name": "len", "type": "i32"}], "ret": "i32"},
            {"name": "release", "params": [{"name": "buf", "type": "char*"}],
             "ret": "void"},
        ],
    }

    def sum_(ctx, buf, length):
        ctx.branch(1)
        if not isinstance(buf, Ptr) or buf.is_null:
            ctx.branch(2)
            return -1
        if not isinstance(length, int) or length <= 0:
            ctx.branch(3)
            return 0
        ctx.branch(4)
        total = 0
        for i in range(length):
            total += int(read_index(ctx, buf, i, site=10))
        ctx.cmp(total & 0xFFFFFFFF, 777, 32)
        if total == 777:
            ctx.branch(5)
        else:
            ctx.branch(6)
        return total

    def release(ctx, buf):
        ctx.branch(1)
        if not isinstance(buf, Ptr) or buf.is_null:
            ctx.branch(2)
            return None
        ctx.free(buf.chunk.base)
        ctx.branch(3)
        return None

    trigger = (
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 4\n"
        "<3> call target: sum ? (<1>, <2>)\n"
    )
    return _mk(
        "arraylib", doc,
        {"sum": sum_, "release": release},
        [Constraint("sum", ArgLocator(1), "EQUAL", peer=ArgLocator(0))],
        [SeededBug("sum reads one element past the buffer when len exceeds it",
                   "canary-hit", trigger)],
        {"sum": [1, 2, 3, 4, 5, 6], "release": [1, 2, 3]},
    )


# ---------------------------------------------------------------------------
# 4. rangelib: an index argument must stay inside the buffer (RANGE)


@_fixture
def build_rangelib() -> Fixture:
    doc = {
        "library": "rangelib",
        "types": [],
        "functions": [
            {"name": "pick", "params": [{"name": "buf", "type": "char*"},
                                        {"name": "idx", "type": "i32"}], "ret": "i32"},
        ],
    }

    def pick(ctx, buf, idx):
        ctx.branch(1)
        if not isinstance(buf, Ptr) or buf.is_null:
            ctx.branch(2)
            return -1
        if not isinstance(idx, int) or idx < 0:
            ctx.branch(3)
            return -1
        v = int(read_index(ctx, buf, idx, site=12))
        ctx.branch(4)
        if v & 1:
            ctx.branch(5)
        return v

    trigger = (
        "<0> load Vec<char> = vec(4)[9, 8, 7, 6]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 4\n"
        "<3> call target: pick ? (<1>, <2>)\n"
    )
    return _mk(
        "rangelib", doc,
        {"pick": pick},
        [Constraint("pick", ArgLocator(1), "RANGE")],
        [SeededBug("pick reads buf[idx] with no upper bound check",
                   "canary-hit", trigger)],
        {"pick": [1, 2, 3, 4, 5]},
    )


# ---------------------------------------------------------------------------
# 5. lenlib: the buffer must hold at least 64 elements (ARRAY-LEN)


@_fixture
def build_lenlib() -> Fixture:
    doc = {
        "library": "lenlib",
        "types": [],
        "functions": [
            {"name": "parse_hdr", "params": [{"name": "buf", "type": "char*"}],
             "ret": "i32"},
        ],
    }

    def parse_hdr(ctx, buf):
        ctx.branch(1)
        if not isinstance(buf, Ptr) or buf.is_null:
            ctx.branch(2)
            return -1
        total = 0
        for i in range(64):  # fixed-size header, no length argument
            total += int(read_index(ctx, buf, i, site=13))
        ctx.branch(3)
        if total % 3 == 0:
            ctx.branch(4)
        return total

    trigger = (
        "<0> load Vec<char> = vec(2)[1, 2]\n"
        "<1> load char* = &<0>\n"
        "<2> call target: parse_hdr ? (<1>)\n"
    )
    return _mk(
        "lenlib", doc,
        {"parse_hdr": parse_hdr},
        [Constraint("parse_hdr", ArgLocator(0), "ARRAY-LEN", min_len=64)],
        [SeededBug("parse_hdr assumes a 64-element header buffer",
                   "canary-hit", trigger)],
        {"parse_hdr": [1, 2, 3, 4]},
    )


# ---------------------------------------------------------------------------
# 6. castlib: raw void* data vs aliased opaque contexts (CAST)


@_fixture
def build_castlib() -> Fixture:
    doc = {
        "library": "castlib",
        "types": [
            {"name": "blob_ctx", "kind": "alias", "of": "void*"},
        ],
        "functions": [
            {"name": "checksum", "params": [{"name": "p", "type": "void*"}],
             "ret": "i32"},
            {"name": "open_blob", "params": [], "ret": "blob_ctx"},
            {"name": "use_blob", "params": [{"name": "c", "type": "blob_ctx"}],
             "ret": "i32"},
        ],
    }

    def checksum(ctx, p):
        ctx.branch(1)
        if not isinstance(p, Ptr) or p.is_null:
            ctx.branch(2)
            return 0
        total = 0
        for i in range(arr_len(p)):
            v = read_index(ctx, p, i, site=14)
            total = (total + (int(v) & 0xFF)) & 0xFFFFFFFF
        ctx.branch(3)
        if total & 1:
            ctx.branch(4)
        else:
            ctx.branch(5)
        return total

    def open_blob(ctx):
        ctx.branch(1)
        return new_box(ctx, size=16, magic=1)

    def use_blob(ctx, c):
        ctx.branch(1)
        if not isinstance(c, Ptr) or c.is_null:
            ctx.branch(2)
            return -1
        ctx.branch(3)
        return int(read_box(ctx, c, site=15).get("magic", 0))

    return _mk(
        "castlib", doc,
        {"checksum": checksum, "open_blob": open_blob, "use_blob": use_blob},
        [Constraint("checksum", ArgLocator(0), "CAST", cast_to="char*")],
        [],
        {"checksum": [1, 2, 3, 4, 5], "open_blob": [1], "use_blob": [1, 2, 3]},
    )


# ---------------------------------------------------------------------------
# 7. handlelib: producer/consumer opaque handle (two-call dependency)


@_fixture
def build_handlelib() -> Fixture:
    doc = {
        "library": "handlelib",
        "types": [
            {"name": "db", "kind": "opaque"},
        ],
        "functions": [
            {"name": "open_db", "params": [], "ret": "db*"},
            {"name": "query", "params": [{"name": "h", "type": "db*"},
                                         {"name": "n", "type": "i32"}], "ret": "i32"},
            {"name": "close_db", "params": [{"name": "h", "type": "db*"}],
             "ret": "void"},
        ],
    }

    def open_db(ctx):
        ctx.branch(1)
        return new_box(ctx, size=32, rows=3)

    def query(ctx, h, n):
        payload = read_box(ctx, h, site=21)  # no null check
        ctx.branch(1)
        if isinstance(n, int) and n > 0:
            ctx.branch(2)
            return payload.get("rows", 0) * n
        ctx.branch(3)
        return 0

    def close_db(ctx, h):
        ctx.branch(1)
        if not isinstance(h, Ptr) or h.is_null:
            ctx.branch(2)
            return None
        ctx.free(h.chunk.base)
        ctx.branch(3)
        return None

    trigger = (
        "<0> load db* = null\n"
        "<1> load i32 = 1\n"
        "<2> call target: query ? (<0>, <1>)\n"
    )
    return _mk(
        "handlelib", doc,
        {"open_db": open_db, "query": query, "close_db": close_db},
        [Constraint("query", ArgLocator(0), "NON-NULL")],
        [SeededBug("query dereferences the handle without a null check",
                   "null-deref", trigger)],
        {"open_db": [1], "query": [1, 2, 3], "close_db": [1, 2, 3]},
    )


# ---------------------------------------------------------------------------
# 8. pcaplib: three setters gate a double release in the final call


@_fixture
def build_pcaplib() -> Fixture:
    doc = {
        "library": "pcaplib",
        "types": [
            {"name": "cap", "kind": "opaque"},
        ],
        "functions": [
            {"name": "open_cap", "params": [], "ret": "cap*"},
            {"name": "set_buf", "params": [{"name": "h", "type": "cap*"},
                                           {"name": "n", "type": "i32"}], "ret": "i32"},
            {"name": "set_snap", "params": [{"name": "h", "type": "cap*"},
                                            {"name": "n", "type": "i32"}], "ret": "i32"},
            {"name": "set_mode", "params": [{"name": "h", "type": "cap*"},
                                            {"name": "n", "type": "i32"}], "ret": "i32"},
            {"name": "poke", "params": [{"name": "h", "type": "cap*"}], "ret": "i32"},
            {"name": "activate", "params": [{"name": "h", "type": "cap*"}],
             "ret": "i32"},
        ],
    }

    def open_cap(ctx):
        ctx.branch(1)
        return new_box(ctx, size=64, buf=0, snap=0, mode=0)

    def _setter(field_name: str):
        def set_(ctx, h, n):
            ctx.branch(1)
            if not isinstance(h, Ptr) or h.is_null:
                ctx.branch(2)
                return -1
            read_box(ctx, h, site=22)[field_name] = int(n) if isinstance(n, int) else 0
            ctx.branch(3)
            return 0
        return set_

    def poke(ctx, h):
        ctx.branch(1)
        if not isinstance(h, Ptr) or h.is_null:
            ctx.branch(2)
            return -1
        ctx.branch(3)
        return 0

    def activate(ctx, h):
        payload = read_box(ctx, h, site=31)  # no null check
        ctx.branch(1)
        armed = 0
        if payload.get("buf"):
            ctx.branch(2)
            armed += 1
        if payload.get("snap"):
            ctx.branch(3)
            armed += 1
        if payload.get("mode"):
            ctx.branch(4)
            armed += 1
        if armed == 3:
            buf = ctx.alloc(16, kind="opaque")
            ctx.free(buf.base)
            ctx.free(buf.base)  # double release in the error path
        ctx.branch(5)
        return armed

    trigger = (
        "<0> call open_cap ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 1\n"
        "<3> call relative: set_buf (<0>, <2>)\n"
        "<4> call relative: set_snap (<0>, <2>)\n"
        "<5> call relative: set_mode (<0>, <2>)\n"
        "<6> call target: activate ? (<0>)\n"
    )
    return _mk(
        "pcaplib", doc,
        {"open_cap": open_cap, "set_buf": _setter("buf"), "set_snap": _setter("snap"),
         "set_mode": _setter("mode"), "poke": poke, "activate": activate},
        [Constraint("activate", ArgLocator(0), "NON-NULL")],
        [SeededBug("activate releases its staging buffer twice when all three "
                   "setters armed it", "abort", trigger)],
        {"open_cap": [1], "set_buf": [1, 2, 3], "set_snap": [1, 2, 3],
         "set_mode": [1, 2, 3], "poke": [1, 2, 3], "activate": [1, 2, 3, 4, 5]},
    )


# ---------------------------------------------------------------------------
# 9. fmtlib: byte-triggered fault (format-string shape)


@_fixture
def build_fmtlib() -> Fixture:
    doc = {
        "library": "fmtlib",
        "types": [
            {"name": "log", "kind": "opaque"},
        ],
        "functions": [
            {"name": "open_log", "params": [], "ret": "log*"},
            {"name": "note", "params": [{"name": "l", "type": "log*"},
                                        {"name": "msg", "type": "char*"}], "ret": "i32"},
        ],
    }

    def open_log(ctx):
        ctx.branch(1)
        return new_box(ctx, size=16, lines=0)

    def note(ctx, l, msg):
        ctx.branch(1)
        if not isinstance(l, Ptr) or l.is_null:
            ctx.branch(2)
            return -1
        if not isinstance(msg, Ptr) or msg.is_null:
            ctx.branch(3)
            return -2
        ctx.branch(4)
        for i in range(arr_len(msg)):
            b = int(read_index(ctx, msg, i, site=16)) & 0xFF
            ctx.cmp(b, 0x25, 8)
            if b == 0x25:  # '%' reaches the formatter unescaped
                raise FaultSignal(FMT_FAULT_ADDRESS, 17)
        ctx.branch(5)
        read_box(ctx, l, site=18)["lines"] = read_box(ctx, l, site=18).get("lines", 0) + 1
        return 0

    trigger = (
        "<0> call open_log ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load Vec<char> = vec(2)[37, 0]\n"
        "<3> load char* = &<2>\n"
        "<4> call target: note ? (<0>, <3>)\n"
    )
    return _mk(
        "fmtlib", doc,
        {"open_log": open_log, "note": note},
        [],
        [SeededBug("a '%' byte in the message reaches the formatter",
                   "invalid-access", trigger)],
        {"open_log": [1], "note": [1, 2, 3, 4, 5]},
    )


# ---------------------------------------------------------------------------
# 10. resourcelib: resource growth bounded by an argument (RANGE via timeout)


@_fixture
def build_resourcelib() -> Fixture:
    doc = {
        "library": "resourcelib",
        "types": [],
        "functions": [
            {"name": "grow", "params": [{"name": "n", "type": "i32"}], "ret": "i32"},
        ],
    }

    def grow(ctx, n):
        ctx.branch(1)
        if not isinstance(n, int) or n < 0:
            ctx.branch(2)
            return -1
        ctx.consume_time((1 << min(n, 62)) / (1 << 20))  # 2^n bytes at 1 GiB/s
        ctx.branch(3)
        return n

    trigger = (
        "<0> load i32 = 60\n"
        "<1> call target: grow ? (<0>)\n"
    )
    return _mk(
        "resourcelib", doc,
        {"grow": grow},
        [Constraint("grow", ArgLocator(0), "RANGE")],
        [SeededBug("grow allocates 2^n bytes and stalls for large n",
                   "timeout", trigger)],
        {"grow": [1, 2, 3]},
    )


# ---------------------------------------------------------------------------
# 11. democodec: synthetic twin of the instrumented C demo library, used to
# check that both backends classify the same programs the same way


@_fixture
def build_democodec() -> Fixture:
    doc = {
        "library": "democodec",
        "types": [
            {"name": "codec", "kind": "opaque"},
        ],
        "functions": [
            {"name": "codec_open", "params": [], "ret": "codec*"},
            {"name": "codec_close", "params": [{"name": "c", "type": "codec*"}],
             "ret": "i32"},
            {"name": "codec_version", "params": [], "ret": "i32"},
            {"name": "codec_decode", "params": [{"name": "buf", "type": "char*"},
                                                {"name": "len", "type": "i32"}],
             "ret": "i32"},
            {"name": "codec_encode", "params": [{"name": "c", "type": "codec*"},
                                                {"name": "mode", "type": "i32"}],
             "ret": "i32"},
            {"name": "codec_load", "params": [{"name": "path", "type": "char*"}],
             "ret": "i32"},
        ],
    }

    def codec_open(ctx):
        ctx.branch(10)
        h = new_box(ctx, size=8, mode=0, count=0)
        ctx.branch(12)
        return h

    def codec_close(ctx, c):
        payload = read_box(ctx, c, site=30)  # no null check
        n = payload.get("count", 0)
        ctx.free(c.chunk.base)
        ctx.branch(31)
        return n

    def codec_version(ctx):
        ctx.branch(20)
        return 0x0103

    def codec_decode(ctx, buf, length):
        ctx.branch(40)
        if not isinstance(buf, Ptr) or buf.is_null:
            ctx.branch(41)
            return -1
        if not isinstance(length, int) or length <= 0:
            ctx.branch(42)
            return 0
        ctx.branch(43)
        total = 0
        for i in range(length):
            total += int(read_index(ctx, buf, i, site=43)) & 0xFF
        ctx.cmp(total, 0x5A5A, 32)
        if total == 0x5A5A:
            ctx.branch(44)
            return 1
        ctx.branch(45)
        return total

    def codec_encode(ctx, c, mode):
        ctx.branch(50)
        if not isinstance(c, Ptr) or c.is_null:
            ctx.branch(51)
            return -1
        payload = read_box(ctx, c, site=50)
        payload["mode"] = mode
        payload["count"] = payload.get("count", 0) + 1
        if isinstance(mode, int) and mode > 0:
            ctx.branch(52)
        else:
            ctx.branch(53)
        return 0

    def codec_load(ctx, path):
        ctx.branch(60)
        name = cstr(path)
        if name is None:
            ctx.branch(61)
            return -1
        data = ctx.fopen(name)
        if data is None:
            ctx.branch(62)
            return 0
        ctx.branch(63)
        if data and data[0] == 0x42:
            ctx.branch(64)
            return 2
        ctx.branch(65)
        return 1

    overflow_trigger = (
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 4\n"
        "<3> call target: codec_decode ? (<1>, <2>)\n"
    )
    null_trigger = (
        "<0> load codec* = null\n"
        "<1> call target: codec_close ? (<0>)\n"
    )
    return _mk(
        "democodec", doc,
        {"codec_open": codec_open, "codec_close": codec_close,
         "codec_version": codec_version, "codec_decode": codec_decode,
         "codec_encode": codec_encode, "codec_load": codec_load},
        [Constraint("codec_close", ArgLocator(0), "NON-NULL"),
         Constraint("codec_decode", ArgLocator(1), "EQUAL", peer=ArgLocator(0)),
         Constraint("codec_load", ArgLocator(0), "FILE")],
        [SeededBug("decode trusts len and reads past the buffer",
                   "canary-hit", overflow_trigger),
         SeededBug("close dereferences the handle without a null check",
                   "null-deref", null_trigger)],
        {"codec_open": [10, 11, 12], "codec_close": [30, 31],
         "codec_version": [20], "codec_decode": [40, 41, 42, 43, 44, 45],
         "codec_encode": [50, 51, 52, 53], "codec_load": [60, 61, 62, 63, 64, 65]},
    )


# ---------------------------------------------------------------------------
# cJSON-shaped manifest (DSL round-trip bed; no synthetic backend)


def cjson_manifest_doc() -> dict:
    return {
        "library": "cjson",
        "types": [
            {"name": "cJSON", "kind": "record", "size": 64, "fields": [
                {"name": "next", "type": "cJSON*", "offset": 0},
                {"name": "prev", "type": "cJSON*", "offset": 8},
                {"name": "child", "type": "cJSON*", "offset": 16},
                {"name": "type_", "type": "i32", "offset": 24},
                {"name": "valuestring", "type": "char*", "offset": 32},
                {"name": "valueint", "type": "i32", "offset": 40},
                {"name": "valuedouble", "type": "f64", "offset": 48},
                {"name": "string", "type": "char*", "offset": 56},
            ]},
        ],
        "functions": [
            {"name": "cJSON_ParseWithOpts",
             "params": [{"name": "value", "type": "char*"},
                        {"name": "return_parse_end", "type": "char**"},
                        {"name": "require_null_terminated", "type": "i32"}],
             "ret": "cJSON*"},
            {"name": "cJSON_AddFalseToObject",
             "params": [{"name": "object", "type": "cJSON*"},
                        {"name": "name", "type": "char*"}],
             "ret": "cJSON*"},
            {"name": "cJSON_PrintBuffered",
             "params": [{"name": "item", "type": "cJSON*"},
                        {"name": "prebuffer", "type": "i32"},
                        {"name": "fmt", "type": "i32"}],
             "ret": "char*"},
        ],
    }


def cjson_manifest() -> Manifest:
    return parse_manifest(cjson_manifest_doc())


# ---------------------------------------------------------------------------
# Data export (manifest.json + ground_truth.json per fixture)


def export_fixture_data(root: Path) -> list[Path]:
    """Write each fixture's manifest and ground truth under root/<name>/."""
    written = []
    for fixture in fixture_catalog():
        d = root / fixture.name
        d.mkdir(parents=True, exist_ok=True)
        mpath = d / "manifest.json"
        gpath = d / "ground_truth.json"
        mpath.write_text(json.dumps(fixture.manifest_doc, indent=2) + "\n")
        gpath.write_text(json.dumps(fixture.ground_truth_doc(), indent=2) + "\n")
        written.extend([mpath, gpath])
    cj = root / "cjson"
    cj.mkdir(parents=True, exist_ok=True)
    (cj / "manifest.json").write_text(json.dumps(cjson_manifest_doc(), indent=2) + "\n")
    written.append(cj / "manifest.json")
    return written
