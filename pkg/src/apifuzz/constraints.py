"""
Constraint learning: per-argument validity facts and cross-call relations.

Intra-API constraints come in six kinds (NON-NULL, FILE, EQUAL, RANGE,
ARRAY-LEN, CAST) and are inferred from runtime feedback: path feedback yields
FILE and provisional CAST facts, while crashes are triaged through a fixed
sequence of re-execution probes (null pointers aimed at protected chunks,
N-1/N/N+1 sweeps on numeric arguments, array padding, byte re-randomizing,
large-value shrinking). Inputs that crash only because they violate a stored
constraint are spurious, not bugs.

Inter-API relations start from signature overlap (return feeds argument,
shared argument types, mutator pointers) and are confirmed dynamically:
inserted calls that change the target call's path survive deletion testing
and become effective edges; statement slices that produced effective
arguments are cached for reuse during mutation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from random import Random
from typing import Callable, Optional, Protocol, Sequence, Union

from .adapter import FaultKind, Manifest
from .dsl import (
    CallStmt,
    FileMode,
    FileStmt,
    LoadStmt,
    NonNullRule,
    AssertStmt,
    PathSeg,
    Program,
    Statement,
    renumber,
    serialize,
    stmt_references,
)
from .executor import ExitKind, FeedbackReport, GUARD_OVERRIDE
from .types import (
    NULL,
    LocRef,
    TypeKind,
    TypeRegistry,
    Value,
    generate_value,
    replace_at,
    value_at,
)

PAD_LENGTH_K = 64  # ARRAY-LEN padding probe length
RECURSE_DEPTH = 3  # how deep locators descend into composite arguments
FAST_FACTOR = 0.10  # "markedly faster" threshold for timeout shrinking
PROBE_BUDGET = 24  # re-executions allowed per crash triage

NON_NULL = "NON-NULL"
FILE = "FILE"
EQUAL = "EQUAL"
RANGE = "RANGE"
ARRAY_LEN = "ARRAY-LEN"
CAST = "CAST"


@dataclass(frozen=True)
class ArgLocator:
    """Argument position plus a path into the argument's composite value."""

    arg: int
    path: tuple[PathSeg, ...] = ()

    def render(self) -> str:
        return f"arg{self.arg}" + "".join(f".{s}" for s in self.path)


@dataclass(frozen=True)
class Constraint:
    function: str
    locator: ArgLocator
    kind: str
    peer: Optional[ArgLocator] = None  # EQUAL: the array slot
    lo: Optional[int] = None  # RANGE: inclusive lower bound
    hi: Optional[int] = None  # RANGE: exclusive upper bound
    min_len: Optional[int] = None  # ARRAY-LEN
    cast_to: Optional[str] = None  # CAST
    provenance: str = ""
    witness: str = ""

    def key(self) -> tuple:
        return (self.function, self.locator)

    def to_json(self) -> dict:
        doc = {
            "function": self.function,
            "locator": {"arg": self.locator.arg, "path": list(self.locator.path)},
            "kind": self.kind,
            "params": {},
            "provenance": self.provenance,
            "witness": self.witness,
        }
        if self.peer is not None:
            doc["params"]["peer"] = {"arg": self.peer.arg, "path": list(self.peer.path)}
        if self.lo is not None or self.hi is not None:
            doc["params"]["lo"] = self.lo
            doc["params"]["hi"] = self.hi
        if self.min_len is not None:
            doc["params"]["min_len"] = self.min_len
        if self.cast_to is not None:
            doc["params"]["cast_to"] = self.cast_to
        return doc

    @staticmethod
    def from_json(doc: dict) -> "Constraint":
        loc = ArgLocator(doc["locator"]["arg"], tuple(doc["locator"]["path"]))
        params = doc.get("params", {})
        peer = None
        if "peer" in params:
            peer = ArgLocator(params["peer"]["arg"], tuple(params["peer"]["path"]))
        return Constraint(
            function=doc["function"],
            locator=loc,
            kind=doc["kind"],
            peer=peer,
            lo=params.get("lo"),
            hi=params.get("hi"),
            min_len=params.get("min_len"),
            cast_to=params.get("cast_to"),
            provenance=doc.get("provenance", ""),
            witness=doc.get("witness", ""),
        )


class ConstraintStore:
    """(function, locator) -> newest Constraint; older conflicts are archived."""

    def __init__(self) -> None:
        self._by_key: dict[tuple, Constraint] = {}
        self.archived: list[Constraint] = []

    def __len__(self) -> int:
        return len(self._by_key)

    def __iter__(self):
        return iter(self.all())

    def all(self) -> list[Constraint]:
        return [self._by_key[k] for k in sorted(self._by_key,
                                                key=lambda k: (k[0], k[1].arg, k[1].path))]

    def add(self, c: Constraint) -> bool:
        """Insert; newest inference wins on conflict. Returns True if the
        store changed."""
        old = self._by_key.get(c.key())
        if old is not None:
            if _same_fact(old, c):
                return False
            self.archived.append(old)
        self._by_key[c.key()] = c
        return True

    def remove(self, function: str, locator: ArgLocator) -> Optional[Constraint]:
        old = self._by_key.pop((function, locator), None)
        if old is not None:
            self.archived.append(old)
        return old

    def get(self, function: str, locator: ArgLocator) -> Optional[Constraint]:
        return self._by_key.get((function, locator))

    def for_function(self, function: str) -> list[Constraint]:
        return [c for c in self.all() if c.function == function]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(c.to_json(), sort_keys=True) + "\n" for c in self.all())

    @staticmethod
    def from_jsonl(text: str) -> "ConstraintStore":
        store = ConstraintStore()
        for line in text.splitlines():
            line = line.strip()
            if line:
                store.add(Constraint.from_json(json.loads(line)))
        return store


def _same_fact(a: Constraint, b: Constraint) -> bool:
    return (a.kind, a.peer, a.lo, a.hi, a.min_len, a.cast_to) == \
        (b.kind, b.peer, b.lo, b.hi, b.min_len, b.cast_to)


# ---------------------------------------------------------------------------
# Static inter-API relations


@dataclass(frozen=True)
class StaticEdge:
    producer: str
    consumer: str
    rule: str  # "ret-to-arg" | "shared-arg-type" | "mutator-pointer"
    ident_match: bool = False


class RelationGraph:
    def __init__(self) -> None:
        self.static_edges: set[StaticEdge] = set()
        self.effective_edges: dict[tuple[str, str], str] = {}  # (fn, target) -> witness

    def related_to(self, consumer: str) -> set[str]:
        return {e.producer for e in self.static_edges if e.consumer == consumer}

    def add_effective(self, fn: str, target: str, witness: str) -> bool:
        key = (fn, target)
        if key in self.effective_edges:
            return False
        self.effective_edges[key] = witness
        return True


def _interesting_overlap(registry: TypeRegistry, type_name: str) -> Optional[str]:
    """Resolved name for relation matching; primitives and void are noise."""
    desc = registry.resolve(type_name)
    if desc.kind in (TypeKind.PRIMITIVE, TypeKind.VOID):
        return None
    return desc.name


def infer_static_relations(manifest: Manifest) -> RelationGraph:
    graph = RelationGraph()
    registry = manifest.registry
    sigs = manifest.signatures()
    for f1 in sigs:
        arg_types = {}
        for pname, ptype in f1.params:
            key = _interesting_overlap(registry, ptype)
            if key is not None:
                arg_types.setdefault(key, []).append(pname)
        for f2 in sigs:
            if f2.name == f1.name:
                continue
            ret_key = _interesting_overlap(registry, f2.ret) \
                if registry.resolve(f2.ret).kind is not TypeKind.VOID else None
            if ret_key is not None and ret_key in arg_types:
                graph.static_edges.add(StaticEdge(f2.name, f1.name, "ret-to-arg"))
            for pname2, ptype2 in f2.params:
                key2 = _interesting_overlap(registry, ptype2)
                if key2 is None:
                    continue
                if key2 in arg_types:
                    ident = pname2 in arg_types[key2]
                    graph.static_edges.add(
                        StaticEdge(f2.name, f1.name, "shared-arg-type", ident))
                desc2 = registry.resolve(ptype2)
                if desc2.kind is TypeKind.POINTER:
                    pointee = _interesting_overlap(registry, desc2.pointee)
                    if pointee is not None and pointee in arg_types:
                        ident = pname2 in arg_types[pointee]
                        graph.static_edges.add(
                            StaticEdge(f2.name, f1.name, "mutator-pointer", ident))
    return graph


# ---------------------------------------------------------------------------
# Locator helpers


def _load_for_arg(program: Program, call: CallStmt, arg_pos: int) -> Optional[Statement]:
    stmt = program.by_index()[call.args[arg_pos]]
    return stmt if isinstance(stmt.body, LoadStmt) else None


def _trace_array_load(program: Program, index: int) -> Optional[Statement]:
    """Follow an argument index to the Load holding its array literal."""
    stmt = program.by_index()[index]
    if not isinstance(stmt.body, LoadStmt):
        return None
    value = stmt.body.value
    if isinstance(value.payload, list):
        return stmt
    if isinstance(value.payload, LocRef):
        return _trace_array_load(program, value.payload.index)
    return None


def _null_pointer_locators(registry: TypeRegistry, program: Program,
                           call: CallStmt) -> list[tuple[ArgLocator, int, tuple]]:
    """Locators of statically-null pointers in the call's arguments, with the
    Load statement index and the path inside that Load's value."""
    out = []
    for pos, argidx in enumerate(call.args):
        stmt = program.by_index()[argidx]
        if not isinstance(stmt.body, LoadStmt):
            continue
        for path, sub in _walk_value(registry, stmt.body.value, (), RECURSE_DEPTH):
            desc = registry.resolve(sub.type)
            if desc.kind is TypeKind.POINTER and sub.is_null():
                out.append((ArgLocator(pos, path), argidx, path))
    return out


def _walk_value(registry: TypeRegistry, value: Value, path: tuple, depth: int):
    yield path, value
    if depth <= 0:
        return
    desc = registry.resolve(value.type)
    if desc.kind is TypeKind.RECORD:
        for name, sub in value.payload.items():
            yield from _walk_value(registry, sub, path + (name,), depth - 1)
    elif desc.kind is TypeKind.ARRAY and value.payload \
            and isinstance(value.payload[0], Value):
        for i, sub in enumerate(value.payload):
            yield from _walk_value(registry, sub, path + (i,), depth - 1)


def _numeric_arg_positions(registry: TypeRegistry, program: Program,
                           call: CallStmt) -> list[int]:
    """Positions of Load-backed integer arguments (rewritable statically)."""
    out = []
    for pos, argidx in enumerate(call.args):
        stmt = program.by_index()[argidx]
        if isinstance(stmt.body, LoadStmt):
            desc = registry.resolve(stmt.body.type)
            if desc.kind is TypeKind.PRIMITIVE and not desc.is_float:
                out.append(pos)
    return out


def _numeric_param_positions(registry: TypeRegistry, sig) -> list[int]:
    """Positions of integer parameters per the signature; probing uses value
    overrides, so call-produced arguments count too."""
    out = []
    for pos, (_, ptype) in enumerate(sig.params):
        desc = registry.resolve(ptype)
        if desc.kind is TypeKind.PRIMITIVE and not desc.is_float:
            out.append(pos)
    return out


def _array_arg_positions(registry: TypeRegistry, program: Program,
                         call: CallStmt) -> list[tuple[int, Statement]]:
    """(arg position, Load statement holding the array literal) pairs.
    Only primitive-element arrays participate: padding composites with
    blank bytes would not be meaningful."""
    out = []
    for pos, argidx in enumerate(call.args):
        load = _trace_array_load(program, argidx)
        if load is None or not isinstance(load.body.value.payload, list):
            continue
        desc = registry.resolve(load.body.type)
        if desc.kind is not TypeKind.ARRAY:
            continue
        if registry.resolve(desc.element).kind is not TypeKind.PRIMITIVE:
            continue
        out.append((pos, load))
    return out


def _with_load_value(program: Program, stmt_index: int, new_value: Value) -> Program:
    stmts = []
    for s in program.statements:
        if s.index == stmt_index:
            stmts.append(Statement(s.index, LoadStmt(s.body.type, new_value)))
        else:
            stmts.append(s)
    return Program(tuple(stmts))


# ---------------------------------------------------------------------------
# Inference from path feedback


class ProbeExecutor(Protocol):
    """Re-execution surface for inference; implementations count budget."""

    def execute(self, p: Program, overrides=None) -> FeedbackReport:  # pragma: no cover
        ...


def _declared_void_pointer(registry: TypeRegistry, declared: str) -> Optional[bool]:
    """True = alias-free void pointer (CAST candidate); False = void pointer
    behind an alias (opaque); None = not a void pointer at all."""
    desc = registry.get(declared)
    aliased = desc.kind is TypeKind.ALIAS
    resolved = registry.resolve(declared)
    if resolved.kind is not TypeKind.POINTER:
        return None
    if registry.resolve(resolved.pointee).kind is not TypeKind.VOID:
        return None
    return not aliased


def infer_from_path(program: Program, report: FeedbackReport, store: ConstraintStore,
                    manifest: Manifest, witness: str = "") -> list[Constraint]:
    """FILE facts from file-open events; provisional CAST for raw void*."""
    if report.exit not in (ExitKind.OK, ExitKind.ASSERT_FAILED):
        return []
    registry = manifest.registry
    learned: list[Constraint] = []
    open_names = [ev.name for ev in report.resource_log if ev.kind == "file_open"]
    for stmt in program.statements:
        if not isinstance(stmt.body, CallStmt):
            continue
        sig = manifest.functions.get(stmt.body.name)
        if sig is None:
            continue
        for pos, (pname, ptype) in enumerate(sig.params):
            raw_void = _declared_void_pointer(registry, ptype)
            if raw_void:
                c = Constraint(sig.name, ArgLocator(pos), CAST, cast_to="char*",
                               provenance="void* without alias", witness=witness)
                if store.get(sig.name, ArgLocator(pos)) is None and store.add(c):
                    learned.append(c)
            if open_names:
                text = _static_string(program, stmt.body.args[pos])
                if text is not None and text in open_names:
                    c = Constraint(sig.name, ArgLocator(pos), FILE,
                                   provenance="file-open event matched argument",
                                   witness=witness)
                    if store.add(c):
                        learned.append(c)
    return learned


def _static_string(program: Program, argidx: int) -> Optional[str]:
    stmt = program.by_index()[argidx]
    if isinstance(stmt.body, FileStmt):
        return f"files/{stmt.index}"
    load = _trace_array_load(program, argidx)
    if load is None:
        return None
    payload = load.body.value.payload
    if not payload or isinstance(payload[0], Value):
        return None
    data = bytes((int(b) & 0xFF) for b in payload)
    if b"\x00" in data:
        data = data.split(b"\x00", 1)[0]
    # latin-1 mirrors the bounded C-string reads on the target side, so any
    # byte sequence compares against file-open event names
    return data.decode("latin-1")


# ---------------------------------------------------------------------------
# Inference from crashes


@dataclass
class TriageVerdict:
    verdict: str  # "spurious" | "candidate-bug"
    learned: list[Constraint] = field(default_factory=list)
    confirmed: list[Constraint] = field(default_factory=list)  # already known
    removed: list[Constraint] = field(default_factory=list)
    low_confidence: bool = False

    @property
    def spurious(self) -> bool:
        return self.verdict == "spurious"

    def explained(self) -> bool:
        return bool(self.learned or self.confirmed or self.removed)


def _note(store: ConstraintStore, verdict: TriageVerdict, c: Constraint) -> None:
    """Record an inference; re-deriving a stored fact still explains the
    crash, it just teaches nothing new."""
    existing = store.get(c.function, c.locator)
    if existing is not None and _same_fact(existing, c):
        verdict.confirmed.append(existing)
    elif store.add(c):
        verdict.learned.append(c)


class _Budget:
    def __init__(self, limit: int):
        self.left = limit

    def spend(self) -> bool:
        if self.left <= 0:
            return False
        self.left -= 1
        return True


def infer_from_crash(program: Program, report: FeedbackReport, exec_probe: ProbeExecutor,
                     store: ConstraintStore, manifest: Manifest, rng: Random,
                     witness: str = "", probe_budget: int = PROBE_BUDGET,
                     pad_length: int = PAD_LENGTH_K) -> TriageVerdict:
    """Apply the crash-triage steps strictly in order; any learned fact makes
    the crash spurious (an API-misuse artifact, not a library bug)."""
    fault = report.fault
    if fault is None:
        return TriageVerdict("candidate-bug")
    registry = manifest.registry
    by_index = program.by_index()
    call_stmt = by_index.get(fault.stmt_index)
    if call_stmt is None or not isinstance(call_stmt.body, CallStmt):
        return TriageVerdict("candidate-bug")
    call = call_stmt.body
    budget = _Budget(probe_budget)
    verdict = TriageVerdict("candidate-bug")

    # 1. null dereference: aim each null pointer at a protected chunk; the
    # override applies to the faulting call's argument only, so other calls
    # that legitimately share the value keep seeing the original null
    if fault.kind == FaultKind.NULL_DEREF:
        for locator, load_idx, path in _null_pointer_locators(registry, program, call):
            if not budget.spend():
                verdict.low_confidence = True
                break
            if not locator.path:
                key: tuple = ("arg", fault.stmt_index, locator.arg)
            else:
                key = (load_idx, path)
            probe = exec_probe.execute(program, overrides={key: GUARD_OVERRIDE})
            if probe.fault is not None and probe.fault.site == fault.site \
                    and probe.fault.kind == FaultKind.CANARY_HIT:
                _note(store, verdict,
                      Constraint(call.name, locator, NON_NULL,
                                 provenance="null probe re-crashed in protected chunk",
                                 witness=witness))
        if verdict.explained():
            verdict.verdict = "spurious"
            return verdict

    # 2. canary hit: N-1 / N / N+1 sweep over numeric arguments (value
    # overrides reach call-produced arguments too)
    if fault.kind == FaultKind.CANARY_HIT and report.fault_chunk is not None:
        owner_idx, n = report.fault_chunk
        peer = _peer_locator(program, call, owner_idx)
        sig = manifest.functions.get(call.name)
        if peer is not None and sig is not None:
            for pos in _numeric_param_positions(registry, sig):
                outcomes = {}
                probes = [n, n + 1] if n == 0 else [n - 1, n, n + 1]
                ok = True
                for v in probes:
                    if not budget.spend():
                        verdict.low_confidence = True
                        ok = False
                        break
                    r = exec_probe.execute(
                        program,
                        overrides={("arg", fault.stmt_index, pos): ("value", v)})
                    outcomes[v] = r.fault is not None \
                        and r.fault.kind == FaultKind.CANARY_HIT
                if not ok:
                    break
                if outcomes.get(n) and outcomes.get(n + 1) and not outcomes.get(n - 1, False):
                    _note(store, verdict,
                          Constraint(call.name, ArgLocator(pos), RANGE, lo=0, hi=n,
                                     provenance=f"canary sweep at N={n}",
                                     witness=witness))
                    break
                if outcomes.get(n + 1) and not outcomes.get(n) \
                        and not outcomes.get(n - 1, False):
                    _note(store, verdict,
                          Constraint(call.name, ArgLocator(pos), EQUAL, peer=peer,
                                     provenance=f"only N+1 crashed at N={n}",
                                     witness=witness))
                    break
        if verdict.explained():
            verdict.verdict = "spurious"
            return verdict

    # 3. unresolved canary hit: pad arrays to K
    if fault.kind == FaultKind.CANARY_HIT:
        for pos, load in _array_arg_positions(registry, program, call):
            payload = load.body.value.payload
            if len(payload) >= pad_length:
                continue
            if not budget.spend():
                verdict.low_confidence = True
                break
            elem = registry.resolve(registry.resolve(load.body.type).element)
            pad: Union[int, float] = 0.0 if elem.is_float else 0
            padded = list(payload) + [pad] * (pad_length - len(payload))
            mutated = _with_load_value(program, load.index,
                                       Value(load.body.value.type, padded))
            r = exec_probe.execute(mutated)
            if not r.crashed():
                _note(store, verdict,
                      Constraint(call.name, ArgLocator(pos), ARRAY_LEN,
                                 min_len=pad_length,
                                 provenance=f"padding to {pad_length} resolved the crash",
                                 witness=witness))
                break
        if verdict.explained():
            verdict.verdict = "spurious"
            return verdict

    # 4. other invalid access with a CAST in force: re-randomize pointed bytes
    if fault.kind == FaultKind.INVALID_ACCESS:
        for pos in range(len(call.args)):
            cast = store.get(call.name, ArgLocator(pos))
            if cast is None or cast.kind != CAST:
                continue
            load = _trace_array_load(program, call.args[pos])
            if load is None:
                continue
            addresses = {fault.address}
            for _ in range(3):
                if not budget.spend():
                    verdict.low_confidence = True
                    break
                payload = [rng.randrange(-128, 128) for _ in load.body.value.payload] \
                    or [rng.randrange(-128, 128) for _ in range(8)]
                mutated = _with_load_value(program, load.index,
                                           Value(load.body.value.type, payload))
                r = exec_probe.execute(mutated)
                if r.fault is not None:
                    addresses.add(r.fault.address)
            if len(addresses) > 1:
                removed = store.remove(call.name, ArgLocator(pos))
                if removed is not None:
                    verdict.removed.append(removed)
        if verdict.removed:
            verdict.verdict = "spurious"
            return verdict

    # 5. timeout / out-of-memory: shrink large numerics
    if fault.kind in (FaultKind.TIMEOUT, FaultKind.OOM):
        candidates = sorted(
            _numeric_arg_positions(registry, program, call),
            key=lambda pos: -abs(_load_for_arg(program, call, pos).body.value.payload),
        )
        for pos in candidates:
            load = _load_for_arg(program, call, pos)
            original = load.body.value.payload
            if abs(original) <= 16:
                continue
            probe_value = original
            learned_max = None
            while abs(probe_value) > 1:
                probe_value = probe_value // 2
                if not budget.spend():
                    verdict.low_confidence = True
                    break
                mutated = _with_load_value(program, load.index,
                                           Value(load.body.value.type, probe_value))
                r = exec_probe.execute(mutated)
                faster = r.elapsed_ms < report.elapsed_ms * FAST_FACTOR
                if not r.crashed() or (faster and r.fault is not None
                                       and r.fault.kind not in (FaultKind.TIMEOUT,
                                                                FaultKind.OOM)):
                    learned_max = probe_value
                    break
            if learned_max is not None:
                _note(store, verdict,
                      Constraint(call.name, ArgLocator(pos), RANGE, lo=0,
                                 hi=learned_max + 1,
                                 provenance="shrinking restored normal execution",
                                 witness=witness))
                break
        if verdict.explained():
            verdict.verdict = "spurious"
            return verdict

    return verdict


def _peer_locator(program: Program, call: CallStmt, owner_idx: int) -> Optional[ArgLocator]:
    """Which argument slot carries the overflowed array Load ``owner_idx``."""
    for pos, argidx in enumerate(call.args):
        if argidx == owner_idx:
            return ArgLocator(pos)
        stmt = program.by_index()[argidx]
        if isinstance(stmt.body, LoadStmt) \
                and isinstance(stmt.body.value.payload, LocRef) \
                and stmt.body.value.payload.index == owner_idx:
            return ArgLocator(pos)
    return None

# ---------------------------------------------------------------------------
# Refinement


class RefineError(Exception):
    """A constraint cannot be satisfied for this program (reject the input)."""


ProducerFn = Callable[[Program, str, int], Optional[tuple[list, int]]]
"""Builds producer statements for an opaque/aliased pointer type:
(program, required type, insertion position) -> (bodies, value offset).
Bodies may reference earlier statements by index and each other by their
final indices starting at the insertion position."""


def refine(program: Program, store: ConstraintStore, manifest: Manifest, rng: Random,
           producer: Optional[ProducerFn] = None) -> Program:
    """Repair every constrained argument slot; raises RefineError when a
    NON-NULL slot has no producer. refine is a closure: running it twice
    yields a structurally identical program."""
    if len(store) == 0:
        return program
    from .dsl import normalized
    registry = manifest.registry
    current = normalized(program)
    for _ in range(6):  # repairs can cascade (inserted loads feed EQUAL peers)
        changed = False
        ordinal = 0
        while True:
            # edits shift statement indices: re-derive call positions after
            # every single repair and revisit the same ordinal
            calls = [s.index for s in current.statements
                     if isinstance(s.body, CallStmt)]
            if ordinal >= len(calls):
                break
            call_index = calls[ordinal]
            call = current.by_index()[call_index].body
            edited = False
            for c in store.for_function(call.name):
                new = _apply_constraint(current, call_index, c, registry, rng,
                                        producer)
                if new is not None:
                    current = new
                    changed = True
                    edited = True
                    break
            if not edited:
                ordinal += 1
        if not changed:
            return current
    return current


def _find_call_index(program: Program, call: CallStmt, hint: int) -> int:
    best = None
    for s in program.statements:
        if isinstance(s.body, CallStmt) and s.body.name == call.name \
                and s.body.role == call.role:
            if best is None or abs(s.index - hint) < abs(best - hint):
                best = s.index
    if best is None:
        raise RefineError(f"call {call.name} vanished during refinement")
    return best


def _apply_constraint(program: Program, call_index: int, c: Constraint,
                      registry: TypeRegistry, rng: Random,
                      producer: Optional[ProducerFn]) -> Optional[Program]:
    """Returns a repaired program, or None when the slot already satisfies."""
    by_index = program.by_index()
    call = by_index[call_index].body
    if c.locator.arg >= len(call.args):
        return None
    argidx = call.args[c.locator.arg]
    arg_stmt = by_index[argidx]
    if c.kind == NON_NULL:
        return _refine_non_null(program, call_index, c, registry, rng, producer)
    if c.kind == FILE:
        if isinstance(arg_stmt.body, FileStmt):
            return None
        return _refine_file(program, call_index, c.locator.arg)
    if c.kind == EQUAL:
        return _refine_equal(program, call, c)
    if c.kind == RANGE:
        if not isinstance(arg_stmt.body, LoadStmt) \
                or not isinstance(arg_stmt.body.value.payload, int):
            return None
        v = arg_stmt.body.value.payload
        lo = 0 if c.lo is None else c.lo
        hi = c.hi if c.hi is not None else max(v, lo) + 1
        clamped = max(lo, min(v, hi - 1))
        if clamped == v:
            return None
        return _with_load_value(program, argidx, Value(arg_stmt.body.value.type, clamped))
    if c.kind == ARRAY_LEN:
        load = _trace_array_load(program, argidx)
        if load is None:
            return None
        desc = registry.resolve(load.body.type)
        if desc.kind is not TypeKind.ARRAY:
            return None
        elem = registry.resolve(desc.element)
        if elem.kind is not TypeKind.PRIMITIVE:
            return None
        payload = load.body.value.payload
        need = (c.min_len or PAD_LENGTH_K) - len(payload)
        if need <= 0:
            return None
        pad: Union[int, float] = 0.0 if elem.is_float else 0
        return _with_load_value(
            program, load.index,
            Value(load.body.value.type, list(payload) + [pad] * need))
    if c.kind == CAST:
        return _refine_cast(program, call_index, c, registry, rng)
    return None


def _retarget_arg(program: Program, call_index: int, arg_pos: int,
                  new_value_index: int) -> Program:
    stmts = []
    for s in program.statements:
        if s.index == call_index and isinstance(s.body, CallStmt):
            args = list(s.body.args)
            args[arg_pos] = new_value_index
            stmts.append(Statement(s.index, replace(s.body, args=tuple(args))))
        else:
            stmts.append(s)
    return Program(tuple(stmts))


def _patch_load_pointer(program: Program, load_index: int, target_index: int) -> Program:
    stmts = []
    for s in program.statements:
        if s.index == load_index and isinstance(s.body, LoadStmt):
            stmts.append(Statement(
                s.index,
                LoadStmt(s.body.type, Value(s.body.value.type, LocRef(target_index)))))
        else:
            stmts.append(s)
    return Program(tuple(stmts))


def _refine_non_null(program: Program, call_index: int, c: Constraint,
                     registry: TypeRegistry, rng: Random,
                     producer: Optional[ProducerFn]) -> Optional[Program]:
    from .dsl import insert_bodies
    by_index = program.by_index()
    call = by_index[call_index].body
    argidx = call.args[c.locator.arg]
    arg_stmt = by_index[argidx]
    if not isinstance(arg_stmt.body, LoadStmt):
        return None  # produced by a call or file; nothing to repair statically
    if not c.locator.path:
        value = arg_stmt.body.value
        if not value.is_null():
            return None
        ptr_desc = registry.resolve(value.type)
        pointee = registry.resolve(ptr_desc.pointee)
        if pointee.kind in (TypeKind.OPAQUE, TypeKind.VOID, TypeKind.FUNCPTR):
            if producer is None:
                raise RefineError(f"no producer for {value.type} ({c.locator.render()})")
            built = producer(program, value.type, call_index)
            if built is None:
                raise RefineError(f"no producer for {value.type} ({c.locator.render()})")
            bodies, value_off = built
            out = insert_bodies(program, call_index, bodies)
            return _retarget_arg(out, call_index + len(bodies), c.locator.arg,
                                 call_index + value_off)
        fresh = _fresh_pointee_load(registry, ptr_desc.pointee, rng)
        out = insert_bodies(program, argidx, [fresh])
        return _patch_load_pointer(out, argidx + 1, argidx)
    # nested locator: write a non-null pointer into the composite literal
    root = arg_stmt.body.value
    try:
        sub = value_at(root, c.locator.path)
    except (KeyError, IndexError, TypeError):
        return None
    if not isinstance(sub, Value) or not sub.is_null():
        return None
    sub_desc = registry.resolve(sub.type)
    if sub_desc.kind is not TypeKind.POINTER:
        return None
    pointee = registry.resolve(sub_desc.pointee)
    if pointee.kind in (TypeKind.OPAQUE, TypeKind.VOID, TypeKind.FUNCPTR):
        return None  # not refinable in place
    fresh = _fresh_pointee_load(registry, sub_desc.pointee, rng)
    out = insert_bodies(program, argidx, [fresh])
    patched_root = replace_at(
        out.by_index()[argidx + 1].body.value, list(c.locator.path),
        Value(sub.type, LocRef(argidx)))
    stmts = []
    for s in out.statements:
        if s.index == argidx + 1:
            stmts.append(Statement(s.index, LoadStmt(s.body.type, patched_root)))
        else:
            stmts.append(s)
    return Program(tuple(stmts))


def _fresh_pointee_load(registry: TypeRegistry, pointee: str, rng: Random) -> LoadStmt:
    desc = registry.resolve(pointee)
    if desc.kind is TypeKind.PRIMITIVE:
        vec = registry.vec_of(pointee)
        value = generate_value(registry, vec, rng, budget=1, max_array_len=8)
        if not value.payload:
            value = Value(vec, [0.0] if desc.is_float else [0])
        return LoadStmt(vec, value)
    if desc.kind is TypeKind.ARRAY:
        value = generate_value(registry, desc.name, rng, budget=1, max_array_len=8)
        return LoadStmt(desc.name, value)
    value = generate_value(registry, pointee, rng, budget=1)
    return LoadStmt(pointee, value)


def _refine_file(program: Program, call_index: int, arg_pos: int) -> Program:
    from .dsl import insert_bodies
    name_load = LoadStmt("Vec<char>", Value("Vec<char>", [102, 0]))
    file_body = FileStmt(FileMode.READ, call_index)  # references the name load
    out = insert_bodies(program, call_index, [name_load, file_body])
    return _retarget_arg(out, call_index + 2, arg_pos, call_index + 1)


def _refine_equal(program: Program, call: CallStmt, c: Constraint) -> Optional[Program]:
    if c.peer is None or c.peer.arg >= len(call.args) \
            or c.locator.arg >= len(call.args):
        return None
    peer_load = _trace_array_load(program, call.args[c.peer.arg])
    if peer_load is None:
        return None
    n = len(peer_load.body.value.payload)
    load = _load_for_arg(program, call, c.locator.arg)
    if load is None or not isinstance(load.body.value.payload, int):
        return None
    if load.body.value.payload == n:
        return None
    return _with_load_value(program, load.index, Value(load.body.value.type, n))


def _refine_cast(program: Program, call_index: int, c: Constraint,
                 registry: TypeRegistry, rng: Random) -> Optional[Program]:
    from .dsl import insert_bodies
    by_index = program.by_index()
    call = by_index[call_index].body
    argidx = call.args[c.locator.arg]
    load = _trace_array_load(program, argidx)
    if load is not None:
        elem = registry.resolve(registry.resolve(load.body.type).element)
        if elem.kind is TypeKind.PRIMITIVE and elem.width_bits == 8:
            return None  # already fed from a byte array
    arg_stmt = by_index[argidx]
    if not isinstance(arg_stmt.body, LoadStmt):
        return None
    vec = registry.vec_of("char")
    content = Value(vec, [rng.randint(-128, 127) for _ in range(16)])
    out = insert_bodies(program, argidx, [LoadStmt(vec, content)])
    return _patch_load_pointer(out, argidx + 1, argidx)


def violates(program: Program, store: ConstraintStore, manifest: Manifest) -> bool:
    """True when some stored constraint is unsatisfied (refine would edit)."""
    try:
        refined = refine(program, store, manifest, Random(0))
    except RefineError:
        return True
    return serialize(refined) != serialize(program)


def crash_is_spurious(program: Program, report: FeedbackReport, store: ConstraintStore,
                      manifest: Manifest, exec_probe: ProbeExecutor,
                      producer: Optional[ProducerFn] = None) -> bool:
    """A crash reproducible only by violating stored constraints is spurious:
    repair the program and re-run; if the repaired program no longer crashes
    at the same site, the crash was an API-misuse artifact."""
    try:
        refined = refine(program, store, manifest, Random(0), producer)
    except RefineError:
        return True
    if serialize(refined) == serialize(program):
        return False
    r = exec_probe.execute(refined)
    if not r.crashed():
        return True
    if report.fault is not None and r.fault is not None \
            and r.fault.site != report.fault.site:
        return True
    return False


# ---------------------------------------------------------------------------
# Effective relations and arguments


def learn_effective_relation(program: Program, inserted_calls: Sequence[int],
                             baseline_target_cov: frozenset, exec_probe: ProbeExecutor,
                             graph: RelationGraph, witness: str = "",
                             ) -> tuple[Program, list[tuple[str, str]]]:
    """Deletion-test each inserted call; keep only the ones whose removal
    changes the target call's coverage. Returns the pruned program and the
    effective (inserted-fn, target-fn) pairs."""
    target = program.target_call()
    if target is None:
        return program, []
    target_fn = target.body.name
    current = program
    kept_edges: list[tuple[str, str]] = []
    names = {}
    by_index = current.by_index()
    for idx in inserted_calls:
        stmt = by_index.get(idx)
        if stmt is not None and isinstance(stmt.body, CallStmt):
            names[idx] = stmt.body.name
    for idx in sorted(names, reverse=True):
        candidate = drop_call(current, idx)
        if candidate is None:
            continue
        r = exec_probe.execute(candidate)
        cov = r.target_coverage(candidate)
        if cov == baseline_target_cov:
            current = candidate  # removal changes nothing: drop permanently
        else:
            fn = names[idx]
            kept_edges.append((fn, target_fn))
            graph.add_effective(fn, target_fn, witness)
    return current, kept_edges


def drop_call(program: Program, call_index: int) -> Optional[Program]:
    """Remove one call (plus its guard asserts and orphaned inputs); None when
    another statement still references its result."""
    by_index = program.by_index()
    stmt = by_index.get(call_index)
    if stmt is None or not isinstance(stmt.body, CallStmt):
        return None
    drop = {call_index}
    for other in program.statements:
        if other.index == call_index:
            continue
        if call_index in stmt_references(other.body):
            if isinstance(other.body, AssertStmt):
                drop.add(other.index)
            else:
                return None
    kept = [s for s in program.statements if s.index not in drop]
    from .generator import sweep_orphans  # local import: avoid module cycle
    return sweep_orphans(renumber(kept))


class EffectiveArgCache:
    """(function, param-name) -> statement slices that produced arguments
    which demonstrably opened new paths; reused during mutation."""

    MAX_PER_KEY = 8

    def __init__(self) -> None:
        self._slices: dict[tuple[str, str], list[tuple[Statement, ...]]] = {}

    def add(self, function: str, param: str, slice_: Sequence[Statement]) -> bool:
        key = (function, param)
        entry = tuple(slice_)
        text = serialize(Program(entry))
        bucket = self._slices.setdefault(key, [])
        if any(serialize(Program(s)) == text for s in bucket):
            return False
        if len(bucket) >= self.MAX_PER_KEY:
            bucket.pop(0)
        bucket.append(entry)
        return True

    def get(self, function: str, param: str) -> list[tuple[Statement, ...]]:
        return list(self._slices.get((function, param), ()))

    def __len__(self) -> int:
        return sum(len(v) for v in self._slices.values())


def extract_arg_slice(program: Program, call_index: int, arg_pos: int,
                      ) -> Optional[tuple[Statement, ...]]:
    """Backward closure of the statements producing one argument, renumbered
    from zero so it can be spliced into any other program."""
    from .dsl import CallRole
    by_index = program.by_index()
    call = by_index[call_index].body
    if not isinstance(call, CallStmt) or arg_pos >= len(call.args):
        return None
    root = call.args[arg_pos]
    keep: set[int] = set()
    work = [root]
    while work:
        idx = work.pop()
        if idx in keep:
            continue
        keep.add(idx)
        work.extend(stmt_references(by_index[idx].body))
    ordered = [s for s in program.statements if s.index in keep]
    demoted = []
    for s in ordered:
        body = s.body
        if isinstance(body, CallStmt) and body.role is not CallRole.PLAIN:
            body = replace(body, role=CallRole.PLAIN, tracked=False)
        demoted.append(Statement(s.index, body))
    return tuple(renumber(demoted).statements)
