"""Foreign-function backend against the instrumented C demo library.

Builds demo_target/ on demand; the whole module skips when no C toolchain
is available.
"""

import json
import shutil
import subprocess
import time
from pathlib import Path

import pytest

from apifuzz.adapter import FaultKind, load_manifest
from apifuzz.campaign import Campaign, CampaignConfig
from apifuzz.dsl import parse
from apifuzz.executor import ExecConfig, Executor, ExitKind
from apifuzz.fixtures import SyntheticBackend, get_fixture

REPO = Path(__file__).resolve().parent.parent
DEMO = REPO / "demo_target"

FFI_BUDGET = 500_000


def _build_demo() -> Path:
    lib = DEMO / "build" / "libdemocodec.so"
    subprocess.run(["make", "-C", str(DEMO), "all"], check=True,
                   capture_output=True)
    return lib


@pytest.fixture(scope="module")
def demo_lib():
    if shutil.which("cc") is None and shutil.which("gcc") is None:
        pytest.skip("no C toolchain")
    return _build_demo()


@pytest.fixture()
def backend(demo_lib):
    from apifuzz.ffi import FfiBackend
    manifest = load_manifest(DEMO / "manifest.json")
    return FfiBackend(manifest, demo_lib)


def test_demo_selftest_passes(demo_lib):
    r = subprocess.run(["make", "-C", str(DEMO), "test"], capture_output=True,
                       text=True)
    assert r.returncode == 0, r.stdout + r.stderr
    assert "all checks passed" in r.stdout


def test_manifest_matches_synthetic_twin():
    twin = get_fixture("democodec")
    on_disk = json.loads((DEMO / "manifest.json").read_text())
    assert on_disk == twin.manifest_doc


def test_version_call_emits_branches(backend, tmp_path):
    ex = backend.create_executor(ExecConfig(sandbox_dir=tmp_path / "sb"))
    p = parse("<0> call target: codec_version ? ()\n", backend.manifest.registry)
    r = ex.execute(p)
    ex.close()
    assert r.exit == ExitKind.OK
    assert len(r.coverage) >= 1


def test_overflow_classified_as_canary(backend, tmp_path):
    ex = backend.create_executor(ExecConfig(sandbox_dir=tmp_path / "sb"))
    p = parse(
        "<0> load Vec<char> = vec(3)[1, 2, 3]\n"
        "<1> load char* = &<0>\n"
        "<2> load i32 = 4\n"
        "<3> call target: codec_decode ? (<1>, <2>)\n",
        backend.manifest.registry)
    r = ex.execute(p)
    ex.close()
    assert r.exit == ExitKind.FAULT
    assert r.fault.kind == FaultKind.CANARY_HIT
    assert r.fault_chunk == (0, 3)
    assert r.fault.site == 43


def test_null_close_classified(backend, tmp_path):
    ex = backend.create_executor(ExecConfig(sandbox_dir=tmp_path / "sb"))
    p = parse("<0> load codec* = null\n<1> call target: codec_close ? (<0>)\n",
              backend.manifest.registry)
    r = ex.execute(p)
    ex.close()
    assert r.exit == ExitKind.FAULT
    assert r.fault.kind == FaultKind.NULL_DEREF
    assert r.fault.address < 4096


def test_faults_do_not_harm_the_parent(backend, tmp_path):
    ex = backend.create_executor(ExecConfig(sandbox_dir=tmp_path / "sb"))
    crash = parse("<0> load codec* = null\n<1> call target: codec_close ? (<0>)\n",
                  backend.manifest.registry)
    for _ in range(50):
        r = ex.execute(crash)
        assert r.exit == ExitKind.FAULT
    ok = parse("<0> call target: codec_version ? ()\n", backend.manifest.registry)
    assert ex.execute(ok).exit == ExitKind.OK
    ex.close()


def test_use_after_free_guard_across_ffi(backend, tmp_path):
    ex = backend.create_executor(ExecConfig(sandbox_dir=tmp_path / "sb"))
    p = parse(
        "<0> call codec_open ()\n"
        "<1> assert non_null(<0>)\n"
        "<2> call codec_close (<0>)\n"
        "<3> call target: codec_close ? (<0>)\n",
        backend.manifest.registry)
    r = ex.execute(p)
    ex.close()
    assert r.exit == ExitKind.ASSERT_FAILED
    assert "use-after-free" in r.exit_detail


def test_file_statement_reaches_load_branch(backend, tmp_path):
    from apifuzz.adapter import coverage_key, fnv1a32
    ex = backend.create_executor(ExecConfig(sandbox_dir=tmp_path / "sb",
                                            rng_seed=11))
    p = parse(
        "<0> load Vec<char> = vec(2)[96, 0]\n"
        "<1> file read <0>\n"
        "<2> call target: codec_load ? (<1>)\n",
        backend.manifest.registry)
    r = ex.execute(p)
    ex.close()
    assert r.exit == ExitKind.OK
    opens = [ev for ev in r.resource_log if ev.kind == "file_open"]
    assert opens and opens[0].name == "files/1"
    assert coverage_key(63, fnv1a32("codec_load")) in r.coverage  # file existed


def _classify_with(executor_factory, manifest, text: str):
    ex = executor_factory()
    p = parse(text, manifest.registry)
    r = ex.execute(p)
    close = getattr(ex, "close", None)
    if close:
        close()
    return r.exit, (r.fault.kind if r.fault else None)


def test_ffi_parity(backend, tmp_path):
    """[SECONDARY] Both seeded defects are found via the foreign-function
    backend within the budget, and every minimal trigger classifies exactly
    as on the synthetic twin."""
    try:
        twin = get_fixture("democodec")
        # classification parity on the minimal trigger programs
        for bug in twin.seeded_bugs:
            synth = _classify_with(
                lambda: Executor(SyntheticBackend(twin),
                                 ExecConfig(sandbox_dir=tmp_path / "synth")),
                twin.manifest, bug.trigger)
            real = _classify_with(
                lambda: backend.create_executor(
                    ExecConfig(sandbox_dir=tmp_path / "real")),
                backend.manifest, bug.trigger)
            assert real == synth == (ExitKind.FAULT, bug.fault_kind), \
                (bug.description, synth, real)

        # the campaign reaches both defects through the FFI within budget
        campaign = Campaign(backend.manifest, backend, tmp_path / "out",
                            CampaignConfig(seed=5, max_execs=FFI_BUDGET))
        wanted = {(43, FaultKind.CANARY_HIT), (30, FaultKind.NULL_DEREF)}

        def stop(c):
            return wanted <= c.fault_signatures

        started = time.monotonic()
        summary = campaign.run(stop=stop)
        elapsed = time.monotonic() - started
        assert wanted <= campaign.fault_signatures, campaign.fault_signatures
        assert summary["execs"] <= FFI_BUDGET
        print(f"  defects found after {summary['execs']} execs ({elapsed:.1f}s); "
              f"classifications match the synthetic twin")
    except BaseException:
        print("ACCEPTANCE ffi-parity: FAIL")
        raise
    print("ACCEPTANCE ffi-parity: PASS")


def test_cli_fuzz_with_ffi_backend(demo_lib, tmp_path, capsys):
    from apifuzz.cli import main
    out = tmp_path / "ffi_run"
    code = main([
        "fuzz", "--manifest", str(DEMO / "manifest.json"),
        "--out", str(out), "--execs", "400", "--seed", "2",
        "--backend", "ffi", "--binary", str(demo_lib),
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["execs"] == 400
    assert summary["coverage_count"] > 0
    assert (out / "constraints.jsonl").read_text()


def test_cli_replay_ffi_crash(demo_lib, tmp_path, capsys):
    from apifuzz.cli import main
    twin = get_fixture("democodec")
    f = tmp_path / "trigger.hdsl"
    f.write_text(twin.seeded_bugs[1].trigger)  # null close
    capsys.readouterr()
    rc = main(["replay", str(f), "--manifest", str(DEMO / "manifest.json"),
               "--backend", "ffi", "--binary", str(demo_lib)])
    text = capsys.readouterr().out
    assert rc == 0
    assert "exit: fault" in text and "kind=null-deref" in text
