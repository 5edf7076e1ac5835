"""Campaign orchestration and the command-line surface."""

import json
from pathlib import Path

import pytest

from apifuzz.campaign import Campaign, CampaignConfig, CampaignError, build_backend
from apifuzz.cli import main
from apifuzz.fixtures import export_fixture_data, get_fixture


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture_data")
    export_fixture_data(root)
    return root


def run_fuzz(data_dir, tmp_path, lib: str, execs: int, seed: int = 3,
             extra: tuple = ()) -> tuple[int, Path]:
    out = tmp_path / f"out_{lib}_{seed}"
    code = main([
        "fuzz", "--manifest", str(data_dir / lib / "manifest.json"),
        "--out", str(out), "--execs", str(execs), "--seed", str(seed), *extra,
    ])
    return code, out


def test_fuzz_writes_artifacts(data_dir, tmp_path, capsys):
    code, out = run_fuzz(data_dir, tmp_path, "arraylib", 2000)
    assert code == 0
    assert (out / "summary.json").is_file()
    assert (out / "constraints.jsonl").is_file()
    assert (out / "manifest.json").is_file()
    assert list((out / "corpus").glob("*.hdsl"))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema"] == 1
    assert summary["execs"] == 2000
    assert summary["seeds"] > 0
    assert summary["constraints_learned"] >= 1


def test_fuzz_budget_not_exceeded(data_dir, tmp_path):
    code, out = run_fuzz(data_dir, tmp_path, "nulllib", 500)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["execs"] <= 500


def test_fuzz_zero_budget_is_usage_error(data_dir, tmp_path, capsys):
    code = main([
        "fuzz", "--manifest", str(data_dir / "arraylib" / "manifest.json"),
        "--out", str(tmp_path / "z"), "--execs", "0", "--seed", "1",
    ])
    assert code == 2


def test_fuzz_unknown_backend_library(data_dir, tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps(
        {"library": "noone", "types": [], "functions": []}))
    code = main(["fuzz", "--manifest", str(manifest), "--out",
                 str(tmp_path / "o"), "--execs", "10", "--seed", "1"])
    assert code == 2


def test_replay_crash_reproduces_exit_class(data_dir, tmp_path, capsys):
    code, out = run_fuzz(data_dir, tmp_path, "pcaplib", 40000)
    crashes = sorted((out / "crashes").glob("*.hdsl"))
    assert crashes, "expected the gated double free within the budget"
    capsys.readouterr()
    rc = main(["replay", str(crashes[0])])
    captured = capsys.readouterr().out
    assert rc == 0
    assert "exit: fault" in captured
    assert "kind=abort" in captured
    meta = json.loads(crashes[0].with_suffix("").with_suffix(".report.json").read_text())
    assert meta["fault"]["kind"] == "abort"


def test_replay_empty_program(data_dir, tmp_path, capsys):
    f = tmp_path / "empty.hdsl"
    f.write_text("")
    rc = main(["replay", str(f), "--manifest",
               str(data_dir / "arraylib" / "manifest.json")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "exit: ok" in out


def test_replay_corrupt_file(data_dir, tmp_path, capsys):
    f = tmp_path / "bad.hdsl"
    f.write_text("this is not a program\n")
    rc = main(["replay", str(f), "--manifest",
               str(data_dir / "arraylib" / "manifest.json")])
    assert rc == 1


def test_triage_groups_and_generates_repros(data_dir, tmp_path, capsys):
    code, out = run_fuzz(data_dir, tmp_path, "pcaplib", 40000, seed=5)
    crashes = sorted((out / "crashes").glob("*.hdsl"))
    assert crashes
    capsys.readouterr()
    rc = main(["triage", "--out", str(out)])
    table = capsys.readouterr().out
    assert rc == 0
    assert "abort" in table
    repros = sorted((out / "crashes").glob("*.c"))
    assert repros
    text = repros[0].read_text()
    assert "activate(" in text and "int main(void)" in text


def test_triage_empty_dir(data_dir, tmp_path, capsys):
    code, out = run_fuzz(data_dir, tmp_path, "filelib", 300, seed=9)
    rc = main(["triage", "--out", str(out)])
    assert rc == 0


def test_translate_command(data_dir, tmp_path, capsys):
    fixture = get_fixture("arraylib")
    f = tmp_path / "prog.hdsl"
    f.write_text(fixture.seeded_bugs[0].trigger)
    rc = main(["translate", str(f), "--manifest",
               str(data_dir / "arraylib" / "manifest.json")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "sum(v1, v2)" in out


def test_stats_command(data_dir, tmp_path, capsys):
    code, out = run_fuzz(data_dir, tmp_path, "arraylib", 1500, seed=11)
    capsys.readouterr()
    rc = main(["stats", "--out", str(out)])
    text = capsys.readouterr().out
    assert rc == 0
    assert '"execs": 1500' in text
    assert "constraint: sum arg1 EQUAL" in text


def test_usage_error_exit_code():
    assert main(["fuzz", "--manifest", "x"]) == 1  # missing required flags
    assert main(["wat"]) == 1


def test_lock_file_blocks_concurrent_campaigns(data_dir, tmp_path):
    from apifuzz.adapter import load_manifest
    m = load_manifest(data_dir / "arraylib" / "manifest.json")
    out = tmp_path / "locked"
    out.mkdir()
    import os
    (out / ".lock").write_text(str(os.getpid()))  # alive pid
    c = Campaign(m, build_backend(m, "synthetic"), out,
                 CampaignConfig(seed=1, max_execs=10))
    with pytest.raises(CampaignError, match="locked"):
        c.run()
    # stale lock is reclaimed
    (out / ".lock").write_text("999999999")
    summary = c.run()
    assert summary["execs"] == 10
    assert not (out / ".lock").exists()


def test_resume_reingests_corpus(data_dir, tmp_path):
    from apifuzz.adapter import load_manifest
    m = load_manifest(data_dir / "arraylib" / "manifest.json")
    out = tmp_path / "resume"
    c1 = Campaign(m, build_backend(m, "synthetic"), out,
                  CampaignConfig(seed=1, max_execs=3000))
    s1 = c1.run()
    corpus_before = {p.name for p in (out / "corpus").glob("*.hdsl")}
    assert s1["seeds"] > 0 and corpus_before
    c2 = Campaign(m, build_backend(m, "synthetic"), out,
                  CampaignConfig(seed=2, max_execs=200))
    s2 = c2.run()
    # previous corpus was re-executed to rebuild coverage
    assert s2["coverage_count"] > 0
    assert s2["seeds"] >= len(corpus_before) - 1
    corpus_after = {p.name for p in (out / "corpus").glob("*.hdsl")}
    assert corpus_before <= corpus_after


def test_all_artifacts_under_out_dir(data_dir, tmp_path):
    before = {p for p in tmp_path.rglob("*")}
    code, out = run_fuzz(data_dir, tmp_path, "filelib", 800, seed=13)
    created = {p for p in tmp_path.rglob("*")} - before
    for path in created:
        assert out in path.parents or path == out, path


def test_fuzz_seconds_budget(data_dir, tmp_path):
    out = tmp_path / "seconds_run"
    code = main([
        "fuzz", "--manifest", str(data_dir / "nulllib" / "manifest.json"),
        "--out", str(out), "--seconds", "2", "--seed", "1",
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["budget"] == {"seconds": 2.0}
    assert summary["execs"] > 0


def test_triage_flags_constraint_violating_crash(data_dir, tmp_path, capsys):
    # a crash file whose program violates a stored constraint shows up
    # flagged as spurious in the triage table
    import apifuzz.constraints as cons
    from apifuzz.fixtures import get_fixture

    out = tmp_path / "flagged"
    (out / "crashes").mkdir(parents=True)
    shutil_src = data_dir / "arraylib" / "manifest.json"
    (out / "manifest.json").write_text(shutil_src.read_text())
    store = cons.ConstraintStore()
    store.add(cons.Constraint("sum", cons.ArgLocator(1), "EQUAL",
                              peer=cons.ArgLocator(0)))
    (out / "constraints.jsonl").write_text(store.to_jsonl())
    fixture = get_fixture("arraylib")
    (out / "crashes" / "0000000a_sum.hdsl").write_text(
        fixture.seeded_bugs[0].trigger)
    (out / "crashes" / "0000000a_sum.report.json").write_text(json.dumps({
        "fault": {"kind": "canary-hit", "site": 10}, "exec_seed": 0}))
    capsys.readouterr()
    rc = main(["triage", "--out", str(out)])
    table = capsys.readouterr().out
    assert rc == 0
    assert "yes" in table.split()  # spurious column
    assert (out / "crashes" / "0000000a_sum.c").exists()
