"""Constraint inference, refinement, and relation learning."""

from pathlib import Path
from random import Random

import pytest

from apifuzz import constraints as cons
from apifuzz.adapter import FaultKind, FaultSignal, parse_manifest
from apifuzz.constraints import (
    ArgLocator,
    Constraint,
    ConstraintStore,
    EffectiveArgCache,
    RefineError,
    crash_is_spurious,
    extract_arg_slice,
    infer_from_crash,
    infer_from_path,
    infer_static_relations,
    learn_effective_relation,
    refine,
    violates,
)
from apifuzz.dsl import parse, serialize, validate
from apifuzz.executor import ExecConfig, Executor, ExitKind
from apifuzz.fixtures import Fixture, SyntheticBackend, get_fixture
from apifuzz.generator import make_producer_callback, GenConfig


class Probe:
    """Budget-counting re-execution surface for inference."""

    def __init__(self, executor: Executor):
        self.ex = executor
        self.count = 0

    def execute(self, p, overrides=None):
        self.count += 1
        return self.ex.execute(p, overrides=overrides, skip_validate=True)


def setup(name: str, tmp_path: Path):
    fixture = get_fixture(name)
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path / "sb"))
    return fixture, ex, Probe(ex)


def crash_report(ex, text: str):
    p = parse(text, ex.manifest.registry)
    r = ex.execute(p)
    assert r.crashed(), r.exit
    return p, r


# -- store ---------------------------------------------------------------------


def test_store_roundtrip_and_order():
    store = ConstraintStore()
    store.add(Constraint("g", ArgLocator(1), "RANGE", lo=0, hi=8))
    store.add(Constraint("f", ArgLocator(0), "NON-NULL"))
    store.add(Constraint("f", ArgLocator(1, ("x",)), "EQUAL", peer=ArgLocator(0)))
    text = store.to_jsonl()
    again = ConstraintStore.from_jsonl(text)
    assert again.to_jsonl() == text
    assert [c.function for c in again.all()] == ["f", "f", "g"]


def test_store_newest_wins_and_archives():
    store = ConstraintStore()
    a = Constraint("f", ArgLocator(1), "EQUAL", peer=ArgLocator(0))
    b = Constraint("f", ArgLocator(1), "RANGE", lo=0, hi=4)
    store.add(a)
    store.add(b)
    assert store.get("f", ArgLocator(1)).kind == "RANGE"
    assert store.archived == [a]
    # re-adding the same fact changes nothing
    assert not store.add(b)


# -- decision table (brute-force oracle) ---------------------------------------


def probe_decision_oracle(ex, text_template, n: int) -> dict[int, bool]:
    """Independently execute the N-1/N/N+1 probes and record canary crashes."""
    outcomes = {}
    for v in ([n, n + 1] if n == 0 else [n - 1, n, n + 1]):
        p = parse(text_template.format(v=v), ex.manifest.registry)
        r = ex.execute(p)
        outcomes[v] = r.fault is not None and r.fault.kind == FaultKind.CANARY_HIT
    return outcomes


def expected_kind(outcomes: dict[int, bool], n: int):
    if outcomes.get(n) and outcomes.get(n + 1) and not outcomes.get(n - 1, False):
        return "RANGE"
    if outcomes.get(n + 1) and not outcomes.get(n) and not outcomes.get(n - 1, False):
        return "EQUAL"
    return None


def test_equal_learned_matches_oracle(tmp_path):
    fixture, ex, probe = setup("arraylib", tmp_path)
    template = (
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = {v}\n"
        "<3> call target: sum ? (<1>, <2>)\n"
    )
    p, r = crash_report(ex, template.format(v=9))
    assert r.fault_chunk == (0, 3)
    oracle = probe_decision_oracle(ex, template, n=3)
    assert expected_kind(oracle, 3) == "EQUAL"
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    learned = store.get("sum", ArgLocator(1))
    assert learned is not None and learned.kind == "EQUAL"
    assert learned.peer == ArgLocator(0)


def test_range_learned_matches_oracle(tmp_path):
    fixture, ex, probe = setup("rangelib", tmp_path)
    template = (
        "<0> load Vec<char> = vec(4)[9, 8, 7, 6]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = {v}\n"
        "<3> call target: pick ? (<1>, <2>)\n"
    )
    p, r = crash_report(ex, template.format(v=6))
    oracle = probe_decision_oracle(ex, template, n=4)
    assert expected_kind(oracle, 4) == "RANGE"
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    learned = store.get("pick", ArgLocator(1))
    assert learned is not None and learned.kind == "RANGE"
    assert (learned.lo, learned.hi) == (0, 4)


def test_non_null_probe(tmp_path):
    fixture, ex, probe = setup("nulllib", tmp_path)
    p, r = crash_report(ex, "<0> load Item* = null\n<1> call target: touch ? (<0>)\n")
    assert r.fault.kind == FaultKind.NULL_DEREF
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    assert store.get("touch", ArgLocator(0)).kind == "NON-NULL"
    assert probe.count >= 1


def test_array_len_padding(tmp_path):
    fixture, ex, probe = setup("lenlib", tmp_path)
    p, r = crash_report(ex, (
        "<0> load Vec<char> = vec(2)[1, 2]\n"
        "<1> load char* = &<0>\n"
        "<2> call target: parse_hdr ? (<1>)\n"
    ))
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    learned = store.get("parse_hdr", ArgLocator(0))
    assert learned.kind == "ARRAY-LEN" and learned.min_len == 64


def test_timeout_shrinking_learns_range(tmp_path):
    fixture, ex, probe = setup("resourcelib", tmp_path)
    p, r = crash_report(ex, "<0> load i32 = 60\n<1> call target: grow ? (<0>)\n")
    assert r.exit == ExitKind.TIMEOUT
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    learned = store.get("grow", ArgLocator(0))
    assert learned.kind == "RANGE"
    # 2^n work at the fixture's rate stays under the 1000 ms budget for n<30
    assert learned.hi is not None and learned.hi <= 30


def test_candidate_bug_when_no_constraint_applies(tmp_path):
    fixture, ex, probe = setup("pcaplib", tmp_path)
    p, r = crash_report(ex, fixture.seeded_bugs[0].trigger)
    assert r.fault.kind == FaultKind.ABORT
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert not verdict.spurious
    assert len(store) == 0


def test_fmt_bug_is_candidate(tmp_path):
    fixture, ex, probe = setup("fmtlib", tmp_path)
    p, r = crash_report(ex, fixture.seeded_bugs[0].trigger)
    assert r.fault.kind == FaultKind.INVALID_ACCESS
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert not verdict.spurious


# -- path feedback ---------------------------------------------------------------


def test_file_constraint_from_open_event(tmp_path):
    fixture, ex, probe = setup("filelib", tmp_path)
    p = parse(
        "<0> load Vec<char> = vec(6)[99, 102, 103, 46, 120, 0]\n"  # "cfg.x"
        "<1> load char* = &<0>\n"
        "<2> call target: load_cfg ? (<1>)\n",
        ex.manifest.registry)
    r = ex.execute(p)
    assert r.exit == ExitKind.OK
    store = ConstraintStore()
    learned = infer_from_path(p, r, store, ex.manifest)
    assert [c.kind for c in learned] == ["FILE"]
    assert store.get("load_cfg", ArgLocator(0)).kind == "FILE"


def test_no_file_events_no_change(tmp_path):
    fixture, ex, probe = setup("filelib", tmp_path)
    p = parse("<0> call target: version ? ()\n", ex.manifest.registry)
    r = ex.execute(p)
    store = ConstraintStore()
    assert infer_from_path(p, r, store, ex.manifest) == []
    assert len(store) == 0


def test_cast_provisional_for_raw_void_pointer(tmp_path):
    fixture, ex, probe = setup("castlib", tmp_path)
    p = parse(
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load void* = &<0>\n"
        "<2> call target: checksum ? (<1>)\n",
        ex.manifest.registry)
    r = ex.execute(p)
    store = ConstraintStore()
    learned = infer_from_path(p, r, store, ex.manifest)
    assert [c.kind for c in learned] == ["CAST"]
    assert store.get("checksum", ArgLocator(0)).cast_to == "char*"


def test_aliased_void_pointer_stays_opaque(tmp_path):
    fixture, ex, probe = setup("castlib", tmp_path)
    p = parse(
        "<0> call open_blob ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> call target: use_blob ? (<0>)\n",
        ex.manifest.registry)
    r = ex.execute(p)
    assert r.exit == ExitKind.OK
    store = ConstraintStore()
    infer_from_path(p, r, store, ex.manifest)
    assert store.get("use_blob", ArgLocator(0)) is None


def test_cast_removed_when_fault_address_tracks_bytes(tmp_path):
    # a void* that is really a struct full of pointers: the fault address
    # varies with the bytes, so the CAST must be withdrawn
    doc = {
        "library": "structptr",
        "types": [],
        "functions": [
            {"name": "jump", "params": [{"name": "p", "type": "void*"}], "ret": "i32"},
        ],
    }
    import apifuzz.fixtures as fx

    def jump(ctx, p):
        ctx.branch(1)
        if not isinstance(p, fx.Ptr) or p.is_null:
            ctx.branch(2)
            return -1
        addr = 0
        for i in range(min(4, fx.arr_len(p))):
            addr = (addr << 8) | (int(fx.read_index(ctx, p, i, site=40)) & 0xFF)
        raise FaultSignal(0x40000000 + addr, 41)

    fixture = Fixture("structptr", parse_manifest(doc), {"jump": jump}, [], [], {})
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path))
    probe = Probe(ex)
    store = ConstraintStore()
    store.add(Constraint("jump", ArgLocator(0), "CAST", cast_to="char*"))
    p = parse(
        "<0> load Vec<char> = vec(4)[1, 2, 3, 4]\n"
        "<1> load void* = &<0>\n"
        "<2> call target: jump ? (<1>)\n",
        ex.manifest.registry)
    r = ex.execute(p)
    assert r.fault.kind == FaultKind.INVALID_ACCESS
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    assert store.get("jump", ArgLocator(0)) is None
    assert len(store.archived) == 1


# -- refinement -------------------------------------------------------------------


def test_refine_equal_sets_length(tmp_path):
    fixture, ex, _ = setup("arraylib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("sum", ArgLocator(1), "EQUAL", peer=ArgLocator(0)))
    p = parse(
        "<0> load Vec<char> = vec(7)[1, 2, 3, 4, 5, 6, 7]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 999\n"
        "<3> call target: sum ? (<1>, <2>)\n",
        ex.manifest.registry)
    refined = refine(p, store, ex.manifest, Random(0))
    assert refined.by_index()[2].body.value.payload == 7
    r = ex.execute(refined)
    assert r.exit == ExitKind.OK
    # closure property
    again = refine(refined, store, ex.manifest, Random(0))
    assert serialize(again) == serialize(refined)


def test_refine_empty_store_is_identity(tmp_path):
    fixture, ex, _ = setup("arraylib", tmp_path)
    p = parse("<0> load int = 1\n", ex.manifest.registry)
    assert refine(p, ConstraintStore(), ex.manifest, Random(0)) is p


def test_refine_non_null_trivial_pointer(tmp_path):
    fixture, ex, _ = setup("nulllib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("touch", ArgLocator(0), "NON-NULL"))
    p = parse("<0> load Item* = null\n<1> call target: touch ? (<0>)\n",
              ex.manifest.registry)
    refined = refine(p, store, ex.manifest, Random(0))
    assert validate(refined, ex.manifest) == []
    r = ex.execute(refined)
    assert r.exit == ExitKind.OK
    assert serialize(refine(refined, store, ex.manifest, Random(0))) \
        == serialize(refined)


def test_refine_non_null_opaque_inserts_producer(tmp_path):
    fixture, ex, _ = setup("handlelib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("query", ArgLocator(0), "NON-NULL"))
    p = parse("<0> load db* = null\n<1> load i32 = 2\n"
              "<2> call target: query ? (<0>, <1>)\n", ex.manifest.registry)
    producer = make_producer_callback(ex.manifest, GenConfig(), Random(0))
    refined = refine(p, store, ex.manifest, Random(0), producer)
    assert validate(refined, ex.manifest) == []
    names = [s.body.name for s in refined.calls()]
    assert names[0] == "open_db" and names[-1] == "query"
    # the inserted producer gets a guard assert
    assert any("non_null" in line for line in serialize(refined).splitlines())
    r = ex.execute(refined)
    assert r.exit == ExitKind.OK


def test_refine_non_null_opaque_without_producer_rejects(tmp_path):
    fixture, ex, _ = setup("handlelib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("query", ArgLocator(0), "NON-NULL"))
    p = parse("<0> load db* = null\n<1> load i32 = 2\n"
              "<2> call target: query ? (<0>, <1>)\n", ex.manifest.registry)
    with pytest.raises(RefineError):
        refine(p, store, ex.manifest, Random(0), producer=None)


def test_refine_file_inserts_file_statement(tmp_path):
    fixture, ex, _ = setup("filelib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("load_cfg", ArgLocator(0), "FILE"))
    p = parse(
        "<0> load Vec<char> = vec(2)[97, 0]\n"
        "<1> load char* = &<0>\n"
        "<2> call target: load_cfg ? (<1>)\n",
        ex.manifest.registry)
    refined = refine(p, store, ex.manifest, Random(0))
    assert validate(refined, ex.manifest) == []
    from apifuzz.dsl import FileStmt
    kinds = [type(s.body).__name__ for s in refined.statements]
    assert "FileStmt" in kinds
    r = ex.execute(refined)
    assert r.exit == ExitKind.OK
    # the call now reads a real sandbox file: branch 4 (file existed) is hit
    from apifuzz.adapter import coverage_key, fnv1a32
    assert coverage_key(4, fnv1a32("load_cfg")) in r.coverage


def test_refine_range_clamps(tmp_path):
    fixture, ex, _ = setup("rangelib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("pick", ArgLocator(1), "RANGE", lo=0, hi=4))
    p = parse(
        "<0> load Vec<char> = vec(4)[9, 8, 7, 6]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 250\n"
        "<3> call target: pick ? (<1>, <2>)\n",
        ex.manifest.registry)
    refined = refine(p, store, ex.manifest, Random(0))
    assert refined.by_index()[2].body.value.payload == 3
    assert ex.execute(refined).exit == ExitKind.OK


def test_refine_array_len_pads(tmp_path):
    fixture, ex, _ = setup("lenlib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("parse_hdr", ArgLocator(0), "ARRAY-LEN", min_len=64))
    p = parse(
        "<0> load Vec<char> = vec(2)[1, 2]\n"
        "<1> load char* = &<0>\n"
        "<2> call target: parse_hdr ? (<1>)\n",
        ex.manifest.registry)
    refined = refine(p, store, ex.manifest, Random(0))
    assert len(refined.by_index()[0].body.value.payload) == 64
    assert ex.execute(refined).exit == ExitKind.OK


def test_refine_cast_feeds_byte_array(tmp_path):
    fixture, ex, _ = setup("castlib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("checksum", ArgLocator(0), "CAST", cast_to="char*"))
    p = parse("<0> load void* = null\n<1> call target: checksum ? (<0>)\n",
              ex.manifest.registry)
    refined = refine(p, store, ex.manifest, Random(0))
    assert validate(refined, ex.manifest) == []
    r = ex.execute(refined)
    assert r.exit == ExitKind.OK
    assert serialize(refine(refined, store, ex.manifest, Random(0))) \
        == serialize(refined)


def test_violates_and_spurious_audit(tmp_path):
    fixture, ex, probe = setup("arraylib", tmp_path)
    store = ConstraintStore()
    store.add(Constraint("sum", ArgLocator(1), "EQUAL", peer=ArgLocator(0)))
    bad = parse(
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 4\n"
        "<3> call target: sum ? (<1>, <2>)\n",
        ex.manifest.registry)
    good = parse(
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 3\n"
        "<3> call target: sum ? (<1>, <2>)\n",
        ex.manifest.registry)
    assert violates(bad, store, ex.manifest)
    assert not violates(good, store, ex.manifest)
    r = ex.execute(bad)
    assert crash_is_spurious(bad, r, store, ex.manifest, probe)


# -- static relations -------------------------------------------------------------


def test_static_relations_three_rules():
    doc = {
        "library": "rel",
        "types": [
            {"name": "ctx", "kind": "opaque"},
            {"name": "opts", "kind": "record", "fields": [
                {"name": "level", "type": "i32", "offset": 0}]},
        ],
        "functions": [
            {"name": "open_ctx", "params": [], "ret": "ctx*"},
            {"name": "use_ctx", "params": [{"name": "c", "type": "ctx*"}], "ret": "i32"},
            {"name": "with_opts", "params": [{"name": "o", "type": "opts"}], "ret": "void"},
            {"name": "tweak_opts", "params": [{"name": "o", "type": "opts*"}],
             "ret": "void"},
            {"name": "share_opts", "params": [{"name": "o", "type": "opts"}],
             "ret": "void"},
        ],
    }
    graph = infer_static_relations(parse_manifest(doc))
    rules = {(e.producer, e.consumer, e.rule) for e in graph.static_edges}
    assert ("open_ctx", "use_ctx", "ret-to-arg") in rules
    assert ("share_opts", "with_opts", "shared-arg-type") in rules
    assert ("with_opts", "share_opts", "shared-arg-type") in rules
    assert ("tweak_opts", "with_opts", "mutator-pointer") in rules
    # identifier match is flagged on the symmetric rules
    ident = {(e.producer, e.consumer) for e in graph.static_edges if e.ident_match}
    assert ("share_opts", "with_opts") in ident


def test_pcaplib_relations():
    graph = infer_static_relations(get_fixture("pcaplib").manifest)
    related = graph.related_to("activate")
    assert {"open_cap", "set_buf", "set_snap", "set_mode", "poke"} <= related


# -- effective relations ------------------------------------------------------------


def test_effective_relation_deletion_testing(tmp_path):
    fixture, ex, probe = setup("pcaplib", tmp_path)
    text = (
        "<0> call open_cap ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 1\n"
        "<3> call relative: set_buf (<0>, <2>)\n"
        "<4> call relative: poke (<0>)\n"
        "<5> call target: activate ? (<0>)\n"
    )
    p = parse(text, ex.manifest.registry)
    baseline = ex.execute(p).target_coverage(p)
    graph = cons.RelationGraph()
    pruned, edges = learn_effective_relation(
        p, [3, 4], baseline, probe, graph, witness="w1")
    assert edges == [("set_buf", "activate")]
    assert ("set_buf", "activate") in graph.effective_edges
    # the no-op call was dropped from the program
    names = [s.body.name for s in pruned.calls()]
    assert "poke" not in names and "set_buf" in names
    # deletion oracle: removing set_buf really does change target coverage
    dropped = cons.drop_call(p, 3)
    assert ex.execute(dropped).target_coverage(dropped) != baseline
    dropped_poke = cons.drop_call(p, 4)
    assert ex.execute(dropped_poke).target_coverage(dropped_poke) == baseline


def test_effective_arg_cache_slices_replay():
    fixture = get_fixture("handlelib")
    text = (
        "<0> call open_db ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> load i32 = 2\n"
        "<3> call target: query ? (<0>, <2>)\n"
    )
    p = parse(text, fixture.manifest.registry)
    slice_ = extract_arg_slice(p, 3, 0)
    assert slice_ is not None
    from apifuzz.dsl import Program
    frag = Program(slice_)
    # the slice is a self-contained, validating fragment
    assert validate(frag, fixture.manifest) == []
    cache = EffectiveArgCache()
    assert cache.add("query", "h", slice_)
    assert not cache.add("query", "h", slice_)  # deduplicated
    assert len(cache.get("query", "h")) == 1


def test_store_determinism_over_sequence(tmp_path):
    # same (program, report) sequence -> byte-identical store
    def learn_once():
        fixture, ex, probe = setup("arraylib", tmp_path)
        store = ConstraintStore()
        template = (
            "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
            "<1> load char* = &<0>\n"
            "<2> load i32 = 9\n"
            "<3> call target: sum ? (<1>, <2>)\n"
        )
        p = parse(template, ex.manifest.registry)
        r = ex.execute(p)
        infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
        infer_from_path(p, r, store, ex.manifest)
        return store.to_jsonl()

    assert learn_once() == learn_once()


def test_nested_non_null_locator(tmp_path):
    # a pointer buried in a by-value record: the locator descends into the
    # composite, the probe patches just that field, refine repairs it
    doc = {
        "library": "nestlib",
        "types": [
            {"name": "Cfg", "kind": "record", "fields": [
                {"name": "level", "type": "i32", "offset": 0},
                {"name": "name", "type": "char*", "offset": 8}]},
        ],
        "functions": [
            {"name": "apply_cfg", "params": [{"name": "cfg", "type": "Cfg"}],
             "ret": "i32"},
        ],
    }
    import apifuzz.fixtures as fx

    def apply_cfg(ctx, cfg):
        name = fx.read_field(ctx, cfg, "name", site=50)
        # dereference the inner pointer without checking it
        first = fx.read_index(ctx, name, 0, site=51)
        ctx.branch(1)
        return int(first)

    fixture = fx.Fixture("nestlib", parse_manifest(doc), {"apply_cfg": apply_cfg},
                         [], [], {})
    ex = Executor(SyntheticBackend(fixture), ExecConfig(sandbox_dir=tmp_path))
    probe = Probe(ex)
    p = parse(
        "<0> load Cfg = { level: 3, name: null }\n"
        "<1> call target: apply_cfg ? (<0>)\n",
        ex.manifest.registry)
    r = ex.execute(p)
    assert r.fault is not None and r.fault.kind == FaultKind.NULL_DEREF
    assert r.fault.site == 51
    store = ConstraintStore()
    verdict = infer_from_crash(p, r, probe, store, ex.manifest, Random(0))
    assert verdict.spurious
    learned = store.all()
    assert len(learned) == 1
    c = learned[0]
    assert c.kind == "NON-NULL"
    assert (c.locator.arg, c.locator.path) == (0, ("name",))
    # refinement points the field at a fresh byte array
    refined = refine(p, store, ex.manifest, Random(1))
    assert validate(refined, ex.manifest) == []
    r2 = ex.execute(refined)
    assert r2.exit == ExitKind.OK
