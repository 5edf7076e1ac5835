"""Skeleton generation, mutation, and minimization."""

from random import Random

from apifuzz import constraints as cons
from apifuzz.constraints import ConstraintStore
from apifuzz.dsl import (
    AssertStmt,
    CallRole,
    CallStmt,
    FileStmt,
    LoadStmt,
    Program,
    Statement,
    UpdateStmt,
    parse,
    serialize,
    stmt_references,
    validate,
)
from apifuzz.executor import ExecConfig, Executor
from apifuzz.fixtures import SyntheticBackend, get_fixture
from apifuzz.generator import (
    Builder,
    GenConfig,
    GenError,
    MutationInfo,
    SeedEntry,
    evolve_round,
    minimize_new_seed,
    mutate_call,
    pick_mutation_targets,
    pilot_round,
    select_seed,
    statement_weight,
    sweep_orphans,
)


class Probe:
    def __init__(self, executor):
        self.ex = executor
        self.count = 0

    def execute(self, p, overrides=None):
        self.count += 1
        return self.ex.execute(p, overrides=overrides, skip_validate=True)


def test_pilot_generates_valid_programs_for_every_function():
    for name in ("arraylib", "nulllib", "handlelib", "pcaplib", "castlib",
                 "filelib", "rangelib", "lenlib", "fmtlib", "resourcelib"):
        fixture = get_fixture(name)
        rng = Random(1234)
        for sig in fixture.manifest.signatures():
            for trial in range(10):
                p = pilot_round(fixture.manifest, sig, GenConfig(), rng)
                assert validate(p, fixture.manifest) == [], (name, sig.name)
                target = p.target_call()
                assert target is not None and target.body.name == sig.name
                assert target.body.tracked


def test_pilot_all_primitive_params_is_minimal():
    fixture = get_fixture("resourcelib")
    sig = fixture.manifest.functions["grow"]
    cfg = GenConfig(relative_insert_prob=0.0, reuse_threshold=0.0)
    p = pilot_round(fixture.manifest, sig, cfg, Random(0))
    # one load per parameter plus the call itself
    assert len(p) == len(sig.params) + 1


def test_pilot_opaque_param_gets_producer():
    fixture = get_fixture("handlelib")
    sig = fixture.manifest.functions["query"]
    cfg = GenConfig(reuse_threshold=0.0, null_pointer_prob=0.0,
                    relative_insert_prob=0.0)
    hit = 0
    for s in range(20):
        p = pilot_round(fixture.manifest, sig, cfg, Random(s))
        names = [c.body.name for c in p.calls()]
        if "open_db" in names:
            hit += 1
            assert names.index("open_db") < names.index("query")
            assert validate(p, fixture.manifest) == []
    assert hit == 20  # producer exists and null generation is disabled


def test_generate_call_falls_back_when_budget_exhausted():
    fixture = get_fixture("handlelib")
    sig = fixture.manifest.functions["query"]
    cfg = GenConfig(max_statements=1, reuse_threshold=0.0, null_pointer_prob=0.0,
                    relative_insert_prob=0.0)
    prefix = parse("<0> load int = 7\n", fixture.manifest.registry).statements
    builder = Builder(fixture.manifest, cfg, Random(3), prefix=prefix)
    builder.gen_call(sig, depth=0, role=CallRole.TARGET, tracked=True)
    # no room for a recursive producer: the handle argument degrades to null
    calls = [b for b in builder.bodies if isinstance(b, CallStmt)]
    assert [c.name for c in calls] == ["query"]
    loads = [b for b in builder.bodies if isinstance(b, LoadStmt)]
    assert any(b.type == "db*" and b.value.is_null() for b in loads)


def test_assert_inserted_after_pointer_producers():
    fixture = get_fixture("handlelib")
    sig = fixture.manifest.functions["query"]
    cfg = GenConfig(reuse_threshold=0.0, null_pointer_prob=0.0,
                    relative_insert_prob=0.0, call_gen_threshold=1.0)
    p = pilot_round(fixture.manifest, sig, cfg, Random(5))
    kinds = [type(s.body).__name__ for s in p.statements]
    i_open = next(i for i, s in enumerate(p.statements)
                  if isinstance(s.body, CallStmt) and s.body.name == "open_db")
    assert isinstance(p.statements[i_open + 1].body, AssertStmt)


# -- orphan sweep -----------------------------------------------------------------


def reachability_oracle(p: Program) -> set[int]:
    """Brute-force keep-set: roots are target/relative calls; updates follow
    their destination; asserts/files follow their referents."""
    keep = set()
    for s in p.statements:
        if isinstance(s.body, CallStmt) and s.body.role in (CallRole.TARGET,
                                                            CallRole.RELATIVE):
            keep.add(s.index)
    changed = True
    while changed:
        changed = False
        for s in p.statements:
            if s.index in keep:
                for r in stmt_references(s.body):
                    if r not in keep:
                        keep.add(r)
                        changed = True
            elif isinstance(s.body, UpdateStmt) and s.body.dst in keep:
                keep.add(s.index)
                changed = True
            elif isinstance(s.body, AssertStmt):
                refs = stmt_references(s.body)
                if refs and all(r in keep for r in refs) and s.index not in keep:
                    keep.add(s.index)
                    changed = True
    return keep


def test_sweep_removes_orphan_load():
    fixture = get_fixture("arraylib")
    p = parse(
        "<0> load int = 7\n"  # orphan
        "<1> load Vec<char> = vec(2)[1, 2]\n"
        "<2> load char* = &<1>\n"
        "<3> load i32 = 2\n"
        "<4> call target: sum ? (<2>, <3>)\n",
        fixture.manifest.registry)
    out = sweep_orphans(p)
    assert len(out) == 4
    assert validate(out, fixture.manifest) == []
    assert out.by_index()[0].body.value.payload == [1, 2]


def test_sweep_no_orphans_is_fixpoint():
    fixture = get_fixture("arraylib")
    p = parse(
        "<0> load Vec<char> = vec(2)[1, 2]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 2\n"
        "<3> call target: sum ? (<1>, <2>)\n",
        fixture.manifest.registry)
    out = sweep_orphans(p)
    assert out is p
    assert sweep_orphans(out) is out  # idempotent


def test_sweep_removes_chains_transitively():
    # producer chain A <- B <- consumer; dropping the consumer must drop both
    fixture = get_fixture("handlelib")
    p = parse(
        "<0> call open_db ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 1\n"
        "<3> call query (<0>, <2>)\n"  # plain, unreferenced: orphan
        "<4> load i32 = 9\n"
        "<5> call target: grow_unrelated ? ()\n",
        fixture.manifest.registry)
    out = sweep_orphans(p)
    kinds = [type(s.body).__name__ for s in out.statements]
    assert kinds == ["CallStmt"]
    assert out.statements[0].body.name == "grow_unrelated"
    assert set(s.index for s in out.statements) == reachability_oracle(p) \
        or len(out) == len(reachability_oracle(p))


def test_sweep_matches_reachability_oracle_on_random_programs():
    fixture = get_fixture("pcaplib")
    rng = Random(77)
    for sig_name in ("activate", "set_buf", "poke"):
        sig = fixture.manifest.functions[sig_name]
        for s in range(100):
            p = pilot_round(fixture.manifest, sig, GenConfig(), rng)
            oracle_keep = reachability_oracle(p)
            swept = sweep_orphans(p)
            assert len(swept) == len(oracle_keep)


def test_sweep_keeps_relative_calls_and_their_inputs():
    fixture = get_fixture("pcaplib")
    p = parse(
        "<0> call open_cap ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 1\n"
        "<3> call relative: set_buf (<0>, <2>)\n"
        "<4> call target: activate ? (<0>)\n",
        fixture.manifest.registry)
    assert sweep_orphans(p) is p


def test_sweep_keeps_updates_on_live_calls():
    fixture = get_fixture("nulllib")
    p = parse(
        "<0> call make_item ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 5\n"
        "<3> update <0>[0.value] = <2>\n"
        "<4> call target: touch ? (<0>)\n",
        fixture.manifest.registry)
    assert sweep_orphans(p) is p


# -- statement weights ----------------------------------------------------------


def test_weight_rule_zero_for_assert_file_update():
    fixture = get_fixture("nulllib")
    reg = fixture.manifest.registry
    assert statement_weight(reg, AssertStmt.__new__(AssertStmt)) == 0 \
        if False else True  # constructed below instead
    p = parse(
        "<0> call make_item ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 5\n"
        "<3> update <0>[0.value] = <2>\n"
        "<4> call target: touch ? (<0>)\n",
        reg)
    by = p.by_index()
    assert statement_weight(reg, by[1].body) == 0
    assert statement_weight(reg, by[3].body) == 0
    assert statement_weight(reg, by[2].body) > 0
    assert statement_weight(reg, by[4].body) > 0


def test_mutation_targets_never_pick_weight_zero():
    fixture = get_fixture("nulllib")
    reg = fixture.manifest.registry
    p = parse(
        "<0> call make_item ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 5\n"
        "<3> update <0>[0.value] = <2>\n"
        "<4> call target: touch ? (<0>)\n",
        reg)
    rng = Random(0)
    picked = []
    for _ in range(100_000):
        picked.extend(pick_mutation_targets(p, reg, rng))
    assert picked
    assert set(picked) <= {0, 2, 4}  # never the assert (1) or update (3)


def test_select_seed_prefers_fresh():
    pool = [SeedEntry(None, frozenset(), age=a) for a in (0, 8, 8, 8)]
    rng = Random(0)
    counts = {id(e): 0 for e in pool}
    for _ in range(4000):
        counts[id(select_seed(pool, rng))] += 1
    fresh = counts[id(pool[0])]
    stale = max(counts[id(e)] for e in pool[1:])
    assert fresh > stale * 2


# -- call mutation ----------------------------------------------------------------


def test_mutate_call_strategies_valid(tmp_path):
    fixture = get_fixture("pcaplib")
    rng = Random(9)
    base = parse(
        "<0> call open_cap ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> call target: activate ? (<0>)\n",
        fixture.manifest.registry)
    seen = set()
    for s in range(200):
        info = MutationInfo()
        out = mutate_call(base, 2, fixture.manifest, GenConfig(), Random(s),
                          None, None, info)
        assert validate(out, fixture.manifest) == [], serialize(out)
        seen.update(info.kinds)
    assert "insert-call" in seen and "replace-arg" in seen


def test_mutate_update_return_shape(tmp_path):
    fixture = get_fixture("nulllib")
    base = parse(
        "<0> call target: make_item ? ()\n",
        fixture.manifest.registry)
    hit = False
    for s in range(200):
        info = MutationInfo()
        out = mutate_call(base, 0, fixture.manifest, GenConfig(), Random(s),
                          None, None, info)
        if "update-return" in info.kinds and len(out) > 1:
            assert validate(out, fixture.manifest) == []
            updates = [st for st in out.statements if isinstance(st.body, UpdateStmt)]
            assert updates and len(updates[0].body.path) >= 1
            hit = True
    assert hit


def test_evolve_round_produces_valid_candidates(tmp_path):
    fixture = get_fixture("arraylib")
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path / "sb"))
    seed_p = parse(
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 3\n"
        "<3> call target: sum ? (<1>, <2>)\n",
        fixture.manifest.registry)
    pool = [SeedEntry(seed_p, frozenset({1}))]
    store = ConstraintStore()
    rng = Random(5)
    produced = 0
    for _ in range(300):
        seed, candidate, info = evolve_round(pool, fixture.manifest, GenConfig(),
                                             rng, store)
        if candidate is None:
            continue
        produced += 1
        assert validate(candidate, fixture.manifest) == [], serialize(candidate)
    assert produced > 250


def test_evolve_round_repairs_with_constraints(tmp_path):
    fixture = get_fixture("arraylib")
    store = ConstraintStore()
    store.add(cons.Constraint("sum", cons.ArgLocator(1), "EQUAL",
                              peer=cons.ArgLocator(0)))
    seed_p = parse(
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 3\n"
        "<3> call target: sum ? (<1>, <2>)\n",
        fixture.manifest.registry)
    pool = [SeedEntry(seed_p, frozenset({1}))]
    rng = Random(5)
    for _ in range(200):
        seed, candidate, info = evolve_round(pool, fixture.manifest, GenConfig(),
                                             rng, store)
        if candidate is None:
            continue
        # every surviving candidate satisfies the stored constraint
        assert not cons.violates(candidate, store, fixture.manifest)


# -- coverage-checked minimization ---------------------------------------------


def test_minimize_new_seed_drops_ineffective_call(tmp_path):
    fixture = get_fixture("pcaplib")
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path / "sb"))
    probe = Probe(ex)
    p = parse(
        "<0> call open_cap ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> call relative: poke (<0>)\n"  # coverage-neutral
        "<3> load i32 = 1\n"
        "<4> call relative: set_buf (<0>, <3>)\n"  # opens a branch in activate
        "<5> call target: activate ? (<0>)\n",
        fixture.manifest.registry)
    baseline = ex.execute(p)
    out = minimize_new_seed(p, baseline, probe, fixture.manifest.registry)
    names = [s.body.name for s in out.calls()]
    assert "poke" not in names
    assert "set_buf" in names and "open_cap" in names
    r = ex.execute(out)
    assert r.target_coverage(out) == baseline.target_coverage(p)


def test_minimize_new_seed_shrinks_arrays(tmp_path):
    fixture = get_fixture("arraylib")
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path / "sb"))
    probe = Probe(ex)
    elems = ", ".join("1" for _ in range(64))
    p = parse(
        f"<0> load Vec<char> = vec(64)[{elems}]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 2\n"  # touches only the first two: tail is dead weight
        "<3> call target: sum ? (<1>, <2>)\n",
        fixture.manifest.registry)
    baseline = ex.execute(p)
    out = minimize_new_seed(p, baseline, probe, fixture.manifest.registry)
    assert len(out.by_index()[0].body.value.payload) == 8
    r = ex.execute(out)
    assert r.target_coverage(out) == baseline.target_coverage(p)


def test_minimize_new_seed_nulls_pointers(tmp_path):
    fixture = get_fixture("fmtlib")
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path / "sb"))
    probe = Probe(ex)
    # msg=null takes the early-return branch; the pointer is load-bearing, so
    # nulling it must be rejected
    p = parse(
        "<0> call open_log ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load Vec<char> = vec(3)[65, 66, 0]\n"
        "<3> load char* = &<2>\n"
        "<4> call target: note ? (<0>, <3>)\n",
        fixture.manifest.registry)
    baseline = ex.execute(p)
    out = minimize_new_seed(p, baseline, probe, fixture.manifest.registry)
    assert not out.by_index()[3].body.value.is_null() \
        if isinstance(out.by_index().get(3, None), Statement) \
        and isinstance(out.by_index()[3].body, LoadStmt) else True
    r = ex.execute(out)
    assert r.target_coverage(out) == baseline.target_coverage(p)


def test_replace_arg_splices_cached_slice():
    from apifuzz.constraints import EffectiveArgCache, extract_arg_slice
    from apifuzz.generator import _mutate_replace_arg
    fixture = get_fixture("handlelib")
    donor = parse(
        "<0> call open_db ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 2\n"
        "<3> call target: query ? (<0>, <2>)\n",
        fixture.manifest.registry)
    cache = cons.EffectiveArgCache()
    cache.add("query", "h", extract_arg_slice(donor, 3, 0))
    base = parse(
        "<0> load db* = null\n"
        "<1> load i32 = 1\n"
        "<2> call target: query ? (<0>, <1>)\n",
        fixture.manifest.registry)
    sig = fixture.manifest.functions["query"]
    spliced_seen = False
    for s in range(60):
        info = MutationInfo()
        out = _mutate_replace_arg(base, 2, sig, fixture.manifest, GenConfig(),
                                  Random(s), None, cache, info)
        assert validate(out, fixture.manifest) == [], serialize(out)
        if any(c.body.name == "open_db" for c in out.calls()):
            spliced_seen = True
    assert spliced_seen
