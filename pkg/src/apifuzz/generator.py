"""
Program generation and evolution.

The pilot phase draws a skeleton per API function from its signature alone:
each argument is either reused from an earlier statement, produced by a
recursively generated call (followed by a guard assert), or loaded fresh.
The evolution phase mutates seed programs in five fixed steps: pick a seed
(fresh ones first), pick statements by weight, mutate them, repair with the
learned constraints, and sweep unreferenced statements.

Two minimizers keep programs small: an orphan sweep after every mutation, and
a coverage-checked reducer for new seeds that drops calls, nulls pointers,
and shrinks arrays whenever the target call's path stays identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from random import Random
from typing import Optional, Sequence

from . import constraints as cons
from .adapter import Manifest
from .dsl import (
    AssertStmt,
    Body,
    CallRole,
    CallStmt,
    EqRule,
    FileStmt,
    LoadStmt,
    NonNullRule,
    PathSeg,
    Program,
    Statement,
    UpdateStmt,
    arg_compatible,
    insert_bodies,
    produced_type,
    renumber,
    stmt_references,
    type_at_path,
)
from .executor import FeedbackReport
from .types import (
    NULL,
    FnStub,
    FuncSig,
    LocRef,
    MutationRequest,
    RequestKind,
    TypeKind,
    TypeRegistry,
    Value,
    count_mutation_points,
    generate_value,
    mutate_value,
    replace_at,
)


class GenError(Exception):
    """No producer and no generatable value for some parameter type."""


@dataclass
class GenConfig:
    reuse_threshold: float = 0.7
    call_gen_threshold: float = 0.5
    relative_insert_prob: float = 0.3
    max_statements: int = 40
    max_depth: int = 4
    null_pointer_prob: float = 0.2
    gen_array_max: int = 64
    mutate_array_max: int = 4096

    def __post_init__(self) -> None:
        for p in (self.reuse_threshold, self.call_gen_threshold,
                  self.relative_insert_prob, self.null_pointer_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.max_statements <= 0 or self.max_depth <= 0:
            raise ValueError("counts must be positive")


@dataclass
class SeedEntry:
    program: Program
    new_coverage: frozenset[int]
    age: int = 0
    exec_ms: float = 0.0
    path_size: int = 0
    cmp_literals: tuple[int, ...] = ()  # compare operands seen when executed


@dataclass
class MutationInfo:
    """What one evolution round did (drives relation/argument learning)."""

    kinds: list[str] = field(default_factory=list)
    replaced_args: list[tuple[str, str]] = field(default_factory=list)  # (fn, param)


# ---------------------------------------------------------------------------
# Builder: statement list under construction


class Builder:
    """Accumulates new statement bodies on top of an existing prefix.

    Indices handed out are final: prefix statements keep theirs, new bodies
    get consecutive positions after the prefix, which matches what
    insert_bodies expects when splicing the result into a larger program.
    """

    def __init__(self, manifest: Manifest, cfg: GenConfig, rng: Random,
                 graph: Optional[cons.RelationGraph] = None,
                 store: Optional[cons.ConstraintStore] = None,
                 prefix: Sequence[Statement] = ()):
        self.manifest = manifest
        self.registry: TypeRegistry = manifest.registry
        self.cfg = cfg
        self.rng = rng
        self.graph = graph
        self.store = store
        self.prefix = tuple(prefix)
        self.bodies: list[Body] = []

    def add(self, body: Body) -> int:
        index = len(self.prefix) + len(self.bodies)
        self.bodies.append(body)
        return index

    def total(self) -> int:
        return len(self.prefix) + len(self.bodies)

    def iter_bodies(self):
        for s in self.prefix:
            yield s.index, s.body
        for i, b in enumerate(self.bodies):
            yield len(self.prefix) + i, b

    def producers_of(self, type_name: str) -> list[int]:
        out = []
        for index, body in self.iter_bodies():
            got = produced_type(body, self.manifest)
            if got is not None and arg_compatible(self.registry, got, type_name):
                out.append(index)
        return out

    # -- argument generation (one branch per operator of the algorithm) -----

    def gen_argument(self, ptype: str, depth: int, for_fn: str) -> int:
        rng = self.rng
        if rng.random() < self.cfg.reuse_threshold:
            candidates = self.producers_of(ptype)
            if candidates:
                return rng.choice(candidates)
        desc = self.registry.resolve(ptype)
        if desc.kind is not TypeKind.PRIMITIVE \
                and rng.random() < self.cfg.call_gen_threshold and self._room(depth):
            producer = self.pick_producer(ptype, exclude=for_fn)
            if producer is not None:
                try:
                    return self.gen_call(producer, depth + 1)
                except GenError:
                    pass
        return self.gen_load(ptype, depth)

    def _room(self, depth: int) -> bool:
        return self.total() < self.cfg.max_statements and depth < self.cfg.max_depth

    def pick_producer(self, type_name: str, exclude: str = "") -> Optional[FuncSig]:
        candidates = [
            sig for sig in self.manifest.signatures()
            if sig.name != exclude
            and self.registry.resolve(sig.ret).kind is not TypeKind.VOID
            and arg_compatible(self.registry, sig.ret, type_name)
        ]
        if not candidates:
            return None
        return self.rng.choice(candidates)

    def gen_call(self, sig: FuncSig, depth: int = 0, role: CallRole = CallRole.PLAIN,
                 tracked: bool = False) -> int:
        """Generate one call statement plus whatever its arguments need."""
        args = [self.gen_argument(ptype, depth, sig.name) for _, ptype in sig.params]
        if role is not CallRole.RELATIVE and self.rng.random() < self.cfg.relative_insert_prob \
                and self._room(depth):
            relative = self.pick_relative(sig)
            if relative is not None:
                try:
                    self.gen_call(relative, depth + 1, role=CallRole.RELATIVE)
                except GenError:
                    pass
        index = self.add(CallStmt(sig.name, tuple(args), role, tracked))
        ret = self.registry.resolve(sig.ret)
        if role is CallRole.PLAIN and ret.kind in (TypeKind.POINTER, TypeKind.OPAQUE):
            self.add(AssertStmt(NonNullRule(index)))
        return index

    def pick_relative(self, sig: FuncSig) -> Optional[FuncSig]:
        """Prefer functions whose non-primitive argument types overlap."""
        own = {
            self.registry.resolve(t).name
            for t in sig.param_types()
            if self.registry.resolve(t).kind is not TypeKind.PRIMITIVE
        }
        related = self.graph.related_to(sig.name) if self.graph else set()
        scored = []
        for cand in self.manifest.signatures():
            if cand.name == sig.name:
                continue
            overlap = sum(
                1 for t in cand.param_types()
                if self.registry.resolve(t).name in own
            )
            weight = 1 + 4 * overlap + (2 if cand.name in related else 0)
            scored.append((cand, weight))
        if not scored:
            return None
        total = sum(w for _, w in scored)
        pick = self.rng.uniform(0, total)
        acc = 0.0
        for cand, w in scored:
            acc += w
            if pick <= acc:
                return cand
        return scored[-1][0]

    # -- loads ----------------------------------------------------------------

    def gen_load(self, type_name: str, depth: int = 0) -> int:
        desc = self.registry.resolve(type_name)
        if desc.kind in (TypeKind.PRIMITIVE, TypeKind.RECORD, TypeKind.ARRAY):
            value = generate_value(self.registry, type_name, self.rng,
                                   budget=max(self.cfg.max_depth - depth, 0),
                                   max_array_len=self.cfg.gen_array_max)
            return self.add(LoadStmt(type_name, value))
        if desc.kind is TypeKind.FUNCPTR:
            return self.add(LoadStmt(type_name, Value(type_name, FnStub(desc.name))))
        if desc.kind is TypeKind.POINTER:
            return self._gen_pointer_load(type_name, desc, depth)
        raise GenError(f"cannot generate a value of type {type_name!r}")

    def _gen_pointer_load(self, type_name: str, desc, depth: int) -> int:
        rng = self.rng
        pointee = self.registry.resolve(desc.pointee)
        if pointee.kind is TypeKind.OPAQUE or \
                (pointee.kind is TypeKind.VOID
                 and self.registry.get(type_name).kind is TypeKind.ALIAS):
            if self._room(depth):
                producer = self.pick_producer(type_name)
                if producer is not None and rng.random() >= self.cfg.null_pointer_prob:
                    try:
                        return self.gen_call(producer, depth + 1)
                    except GenError:
                        pass
            return self.add(LoadStmt(type_name, Value(type_name, NULL)))
        if pointee.kind is TypeKind.VOID:
            # raw void*: assume pointer-free data, feed from a byte array
            vec = self.registry.vec_of("char")
            inner = self.add(LoadStmt(vec, generate_value(
                self.registry, vec, rng, budget=1, max_array_len=self.cfg.gen_array_max)))
            return self.add(LoadStmt(type_name, Value(type_name, LocRef(inner))))
        if pointee.kind is TypeKind.FUNCPTR:
            return self.add(LoadStmt(type_name, Value(type_name, NULL)))
        if rng.random() < self.cfg.null_pointer_prob:
            return self.add(LoadStmt(type_name, Value(type_name, NULL)))
        if pointee.kind is TypeKind.PRIMITIVE:
            vec = self.registry.vec_of(pointee.name)
            inner = self.add(LoadStmt(vec, generate_value(
                self.registry, vec, rng, budget=1, max_array_len=self.cfg.gen_array_max)))
        elif pointee.kind in (TypeKind.RECORD, TypeKind.ARRAY):
            inner = self.gen_load(pointee.name, depth + 1)
        elif pointee.kind is TypeKind.POINTER:
            inner = self.gen_load(pointee.name, depth + 1)
        else:
            return self.add(LoadStmt(type_name, Value(type_name, NULL)))
        return self.add(LoadStmt(type_name, Value(type_name, LocRef(inner))))


def make_producer_callback(manifest: Manifest, cfg: GenConfig, rng: Random,
                           graph: Optional[cons.RelationGraph] = None):
    """ProducerFn used by constraint refinement to materialize opaque handles."""

    def producer(program: Program, required: str, pos: int):
        builder = Builder(manifest, cfg, rng, graph,
                          prefix=program.statements[:pos])
        sig = builder.pick_producer(required)
        if sig is None:
            return None
        try:
            value_index = builder.gen_call(sig, depth=1)
        except GenError:
            return None
        return builder.bodies, value_index - pos

    return producer


# ---------------------------------------------------------------------------
# Pilot phase


def generate_call(manifest: Manifest, sig: FuncSig, cfg: GenConfig, rng: Random,
                  graph: Optional[cons.RelationGraph] = None,
                  prefix: Sequence[Statement] = ()) -> tuple[list[Body], int]:
    """One call statement (plus supporting statements) for a signature.

    Returns the new bodies and the call's index. Raises GenError when some
    parameter type is unsatisfiable (opaque by value with no producer).
    """
    builder = Builder(manifest, cfg, rng, graph, prefix=prefix)
    index = builder.gen_call(sig, depth=0)
    return builder.bodies, index


def pilot_round(manifest: Manifest, api: FuncSig, cfg: GenConfig, rng: Random,
                graph: Optional[cons.RelationGraph] = None) -> Program:
    """Skeleton program whose single tracked target call is ``api``."""
    builder = Builder(manifest, cfg, rng, graph)
    builder.gen_call(api, depth=0, role=CallRole.TARGET, tracked=True)
    p = Program(tuple(Statement(i, b) for i, b in enumerate(builder.bodies)))
    return sweep_orphans(p)


# ---------------------------------------------------------------------------
# Minimization


def sweep_orphans(p: Program) -> Program:
    """Backward sweep: drop statements nothing keeps alive.

    Roots are the target call and inserted relative calls (they act through
    side effects, not references). Updates live while their destination call
    lives; asserts and files live while every statement they mention lives.
    Everything else must be transitively referenced from a root.
    """
    keep: set[int] = set()
    for s in p.statements:
        if isinstance(s.body, CallStmt) and s.body.role in (CallRole.TARGET,
                                                            CallRole.RELATIVE):
            keep.add(s.index)
    changed = True
    while changed:
        changed = False
        for s in p.statements:
            if s.index in keep:
                for ref in stmt_references(s.body):
                    if ref not in keep:
                        keep.add(ref)
                        changed = True
            elif isinstance(s.body, UpdateStmt):
                if s.body.dst in keep and s.index not in keep:
                    keep.add(s.index)
                    changed = True
            elif isinstance(s.body, AssertStmt):
                refs = stmt_references(s.body)
                if refs and all(r in keep for r in refs) and s.index not in keep:
                    keep.add(s.index)
                    changed = True
    kept = [s for s in p.statements if s.index in keep]
    if len(kept) == len(p.statements):
        return p
    return renumber(kept)


minimize_after_mutation = sweep_orphans


def minimize_new_seed(p: Program, baseline: FeedbackReport, exec_probe,
                      registry: TypeRegistry) -> Program:
    """Coverage-checked reduction: drop calls, null pointers, shrink arrays;
    keep each edit only if the target call's coverage set stays identical."""
    baseline_cov = baseline.target_coverage(p)
    current = p

    def path_unchanged(candidate: Program) -> bool:
        r = exec_probe.execute(candidate)
        return r.target_coverage(candidate) == baseline_cov

    target = current.target_call()
    target_index = target.index if target else -1
    for idx in sorted((s.index for s in current.calls()), reverse=True):
        if idx == target_index:
            continue
        candidate = cons.drop_call(current, idx)
        if candidate is not None and path_unchanged(candidate):
            current = candidate
            t = current.target_call()
            target_index = t.index if t else -1
    for stmt in list(current.statements):
        if not isinstance(stmt.body, LoadStmt):
            continue
        desc = registry.resolve(stmt.body.type)
        if desc.kind is TypeKind.POINTER and not stmt.body.value.is_null():
            candidate = sweep_orphans(cons._with_load_value(
                current, stmt.index, Value(stmt.body.value.type, NULL)))
            if path_unchanged(candidate):
                current = candidate
    for stmt in list(current.statements):
        by_index = current.by_index()
        if stmt.index not in by_index or not isinstance(stmt.body, LoadStmt):
            continue
        desc = registry.resolve(stmt.body.type)
        if desc.kind is TypeKind.ARRAY and desc.length is None:
            payload = stmt.body.value.payload
            while len(payload) > 8:
                shrunk = payload[:max(8, len(payload) // 2)]
                candidate = cons._with_load_value(
                    current, stmt.index, Value(stmt.body.value.type, list(shrunk)))
                if not path_unchanged(candidate):
                    break
                current = candidate
                payload = shrunk
    return current


# ---------------------------------------------------------------------------
# Evolution phase


def select_seed(pool: Sequence[SeedEntry], rng: Random) -> SeedEntry:
    """Fresh seeds first: weight 2^-age with a floor of 1/len(pool)."""
    if not pool:
        raise GenError("seed pool is empty")
    floor = 1.0 / len(pool)
    weights = [max(2.0 ** -e.age, floor) for e in pool]
    return rng.choices(list(pool), weights=weights, k=1)[0]


def statement_weight(registry: TypeRegistry, body: Body) -> int:
    if isinstance(body, LoadStmt):
        return 1 + count_mutation_points(registry, body.value)
    if isinstance(body, CallStmt):
        return 1 + len(body.args)
    return 0  # assert, file, update statements are never mutated


def pick_mutation_targets(p: Program, registry: TypeRegistry, rng: Random,
                          max_picks: int = 3) -> list[int]:
    weighted = [(s.index, statement_weight(registry, s.body)) for s in p.statements]
    weighted = [(i, w) for i, w in weighted if w > 0]
    if not weighted:
        return []
    k = 1
    while k < max_picks and rng.random() < 0.3:
        k += 1
    picks: list[int] = []
    pool = dict(weighted)
    for _ in range(min(k, len(pool))):
        indices = sorted(pool)
        weights = [pool[i] for i in indices]
        choice = rng.choices(indices, weights=weights, k=1)[0]
        picks.append(choice)
        del pool[choice]
    return sorted(picks, reverse=True)


def evolve_round(pool: Sequence[SeedEntry], manifest: Manifest, cfg: GenConfig,
                 rng: Random, store: cons.ConstraintStore,
                 graph: Optional[cons.RelationGraph] = None,
                 arg_cache: Optional[cons.EffectiveArgCache] = None,
                 ) -> tuple[SeedEntry, Optional[Program], MutationInfo]:
    """One five-step evolution round; the candidate is None when refinement
    rejected the mutation (unsatisfiable constraint)."""
    seed = select_seed(pool, rng)
    registry = manifest.registry
    info = MutationInfo()
    current = seed.program
    cmp_literals = _seed_literals(seed)
    for index in pick_mutation_targets(current, registry, rng):
        stmt = current.by_index().get(index)
        if stmt is None:
            continue
        if isinstance(stmt.body, CallStmt):
            current = mutate_call(current, index, manifest, cfg, rng, graph,
                                  arg_cache, info)
        elif isinstance(stmt.body, LoadStmt):
            current = mutate_load(current, index, manifest, cfg, rng, cmp_literals, info)
    try:
        producer = make_producer_callback(manifest, cfg, rng, graph)
        current = cons.refine(current, store, manifest, rng, producer)
    except cons.RefineError:
        return seed, None, info
    current = sweep_orphans(current)
    return seed, current, info


def _seed_literals(seed: SeedEntry) -> list[int]:
    return [v for v in seed.cmp_literals if isinstance(v, int)]


def mutate_call(p: Program, call_index: int, manifest: Manifest, cfg: GenConfig,
                rng: Random, graph: Optional[cons.RelationGraph],
                arg_cache: Optional[cons.EffectiveArgCache],
                info: MutationInfo) -> Program:
    """One call-statement mutation: replace an argument, insert a relative
    call before it, or overwrite part of its return value."""
    registry = manifest.registry
    call = p.by_index()[call_index].body
    sig = manifest.functions.get(call.name)
    if sig is None:
        return p
    options = ["insert-call"]
    if call.args:
        options.append("replace-arg")
    if _update_paths(registry, sig.ret):
        options.append("update-return")
    strategy = rng.choice(options)
    if strategy == "replace-arg":
        return _mutate_replace_arg(p, call_index, sig, manifest, cfg, rng, graph,
                                   arg_cache, info)
    if strategy == "insert-call":
        info.kinds.append("insert-call")
        builder = Builder(manifest, cfg, rng, graph,
                          prefix=p.statements[:call_index])
        relative = builder.pick_relative(sig)
        if relative is None:
            return p
        try:
            builder.gen_call(relative, depth=1, role=CallRole.RELATIVE)
        except GenError:
            return p
        return insert_bodies(p, call_index, builder.bodies)
    info.kinds.append("update-return")
    return _mutate_update_return(p, call_index, sig, manifest, cfg, rng)


def _mutate_replace_arg(p: Program, call_index: int, sig: FuncSig, manifest: Manifest,
                        cfg: GenConfig, rng: Random,
                        graph: Optional[cons.RelationGraph],
                        arg_cache: Optional[cons.EffectiveArgCache],
                        info: MutationInfo) -> Program:
    pos = rng.randrange(len(sig.params))
    pname, ptype = sig.params[pos]
    info.kinds.append("replace-arg")
    info.replaced_args.append((sig.name, pname))
    if arg_cache is not None and rng.random() < 0.5:
        slices = arg_cache.get(sig.name, pname)
        if slices:
            slice_ = rng.choice(slices)
            shifted = [s.body for s in slice_]
            spliced = insert_bodies(p, call_index, shifted)
            new_value_index = call_index + len(shifted) - 1
            return cons._retarget_arg(spliced, call_index + len(shifted), pos,
                                      new_value_index)
    builder = Builder(manifest, cfg, rng, graph, prefix=p.statements[:call_index])
    try:
        value_index = builder.gen_argument(ptype, depth=1, for_fn=sig.name)
    except GenError:
        return p
    if builder.bodies:
        out = insert_bodies(p, call_index, builder.bodies)
        return cons._retarget_arg(out, call_index + len(builder.bodies), pos, value_index)
    return cons._retarget_arg(p, call_index, pos, value_index)


def _update_paths(registry: TypeRegistry, ret: str) -> list[tuple[PathSeg, ...]]:
    """Candidate field paths for overwriting part of a call's return value."""
    desc = registry.resolve(ret)
    if desc.kind is TypeKind.RECORD:
        return [(f.name,) for f in desc.fields]
    if desc.kind is TypeKind.POINTER:
        pointee = registry.resolve(desc.pointee)
        if pointee.kind is TypeKind.RECORD:
            return [(0, f.name) for f in pointee.fields]
        if pointee.kind is TypeKind.PRIMITIVE:
            return [(0,)]
    return []


def _mutate_update_return(p: Program, call_index: int, sig: FuncSig,
                          manifest: Manifest, cfg: GenConfig, rng: Random) -> Program:
    registry = manifest.registry
    paths = _update_paths(registry, sig.ret)
    if not paths:
        return p
    path = rng.choice(paths)
    try:
        slot_type = type_at_path(registry, sig.ret, path)
    except Exception:
        return p
    slot = registry.resolve(slot_type)
    if slot.kind is TypeKind.POINTER:
        pointee = registry.resolve(slot.pointee)
        if pointee.kind in (TypeKind.OPAQUE, TypeKind.VOID, TypeKind.FUNCPTR):
            return p
        src_type = pointee.name
    elif slot.kind in (TypeKind.PRIMITIVE, TypeKind.RECORD, TypeKind.ARRAY):
        src_type = slot.name
    else:
        return p
    value = generate_value(registry, src_type, rng, budget=2,
                           max_array_len=cfg.gen_array_max)
    load = LoadStmt(src_type, value)
    update = UpdateStmt(call_index, path, call_index + 1)
    return insert_bodies(p, call_index + 1, [load, update])


def mutate_load(p: Program, load_index: int, manifest: Manifest, cfg: GenConfig,
                rng: Random, cmp_literals: Sequence[int], info: MutationInfo) -> Program:
    registry = manifest.registry
    stmt = p.by_index()[load_index]
    candidates = [
        s.index for s in p.statements
        if s.index != load_index and s.index < load_index
        and isinstance(s.body, LoadStmt) and s.body.type == stmt.body.type
    ]
    new_value, requests = mutate_value(
        registry, stmt.body.value, rng, cmp_literals=cmp_literals,
        pointer_candidates=candidates, max_array_len=cfg.mutate_array_max)
    info.kinds.append("mutate-load")
    current = cons._with_load_value(p, load_index, new_value)
    for req in requests:
        current = _fulfil_request(current, load_index, req, manifest, cfg, rng)
    return current


def _fulfil_request(p: Program, load_index: int, req: MutationRequest,
                    manifest: Manifest, cfg: GenConfig, rng: Random) -> Program:
    registry = manifest.registry
    if req.kind is RequestKind.NEW_ARRAY:
        elem = registry.resolve(req.type_name)
        if elem.kind is TypeKind.PRIMITIVE:
            array_type = registry.vec_of(elem.name)
        elif elem.kind is TypeKind.ARRAY:
            array_type = elem.name
        else:
            array_type = req.type_name  # record pointee: load one record
        value = generate_value(registry, array_type, rng, budget=2,
                               max_array_len=cfg.gen_array_max)
        out = insert_bodies(p, load_index, [LoadStmt(array_type, value)])
        stmt = out.by_index()[load_index + 1]
        patched = replace_at(stmt.body.value, list(req.path),
                             Value(_path_type(registry, stmt.body.value, req.path),
                                   LocRef(load_index)))
        return cons._with_load_value(out, load_index + 1, patched)
    # NEW_CALL: retarget consumers of this load straight at a producer call
    if req.path:
        return p
    builder = Builder(manifest, cfg, rng, prefix=p.statements[:load_index])
    sig = builder.pick_producer(req.type_name)
    if sig is None:
        return p
    try:
        value_index = builder.gen_call(sig, depth=1)
    except GenError:
        return p
    out = insert_bodies(p, load_index, builder.bodies)
    shifted_load = load_index + len(builder.bodies)
    stmts = []
    for s in out.statements:
        body = s.body
        if isinstance(body, CallStmt) and shifted_load in body.args:
            args = tuple(value_index if a == shifted_load else a for a in body.args)
            body = replace(body, args=args)
        stmts.append(Statement(s.index, body))
    return sweep_orphans(Program(tuple(stmts)))


def _path_type(registry: TypeRegistry, value: Value, path) -> str:
    cur = value
    for seg in path:
        cur = cur.payload[seg]
    return cur.type
