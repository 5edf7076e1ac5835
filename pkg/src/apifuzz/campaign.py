"""
Campaign engine: drives pilot sweeps and evolution rounds against one target,
funnels every execution through a single budget-counted gate, and persists
corpus, crashes, constraints, and the run summary under the output directory.

Crash handling order per execution: triage probes first (any learned
constraint makes the crash spurious), then the constraint-violation audit,
then deduplication by (crash site, function). A final audit pass replays
every stored crash against the finished constraint store and demotes the ones
that only reproduce by violating it.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Callable, Optional

from . import constraints as cons
from . import generator as gen
from .adapter import Manifest
from .dsl import CallStmt, Program, Serializer, parse, validate
from .dsl import stmt_references
from .executor import ExecConfig, Executor, FeedbackReport
from .fixtures import synthetic_backend_for
from .generator import GenConfig, SeedEntry

SUMMARY_SCHEMA = 1
PILOT_BUDGET_FRACTION = 0.10  # evolution starts after one sweep plus this slice


class BudgetExhausted(Exception):
    pass


class CampaignError(Exception):
    pass


@dataclass
class CampaignConfig:
    seed: int = 0
    max_execs: Optional[int] = None
    max_seconds: Optional[float] = None
    gen: GenConfig = field(default_factory=GenConfig)
    exec_timeout_ms: float = 1000.0
    memory_limit_bytes: int = 512 << 20

    def __post_init__(self) -> None:
        if self.max_execs is None and self.max_seconds is None:
            raise CampaignError("a budget is required (execs or seconds)")
        if (self.max_execs is not None and self.max_execs <= 0) or \
                (self.max_seconds is not None and self.max_seconds <= 0):
            raise CampaignError("budget must be positive")


@dataclass
class CrashRecord:
    key: tuple
    program: Program
    report: FeedbackReport
    exec_seed: int
    spurious: bool = False


class _CountingProbe:
    """Every re-execution (probe, minimization, audit) spends budget here."""

    def __init__(self, campaign: "Campaign"):
        self.campaign = campaign

    def execute(self, p: Program, overrides=None) -> FeedbackReport:
        return self.campaign.execute(p, overrides=overrides)


class Campaign:
    def __init__(self, manifest: Manifest, backend, out_dir: Path,
                 config: CampaignConfig):
        self.manifest = manifest
        self.backend = backend
        self.out = Path(out_dir)
        self.cfg = config
        self.rng = Random(config.seed)
        self.store = cons.ConstraintStore()
        self.graph = cons.infer_static_relations(manifest)
        self.arg_cache = cons.EffectiveArgCache()
        self.pool: list[SeedEntry] = []
        self.seen_cov: set[int] = set()
        self.execs = 0
        self.round = 0
        self.spurious_filtered = 0
        self.crashes: dict[tuple, CrashRecord] = {}
        self.fault_signatures: set[tuple[int, str]] = set()  # (site, kind) seen
        self.serializer = Serializer(manifest.registry)
        self.probe = _CountingProbe(self)
        self._deadline: Optional[float] = None
        self._seed_counter = 0
        self._current_exec_seed = config.seed
        self.executor = make_executor(backend, self._exec_config(config.seed))
        self.producer = gen.make_producer_callback(manifest, config.gen, self.rng,
                                                   self.graph)

    # -- plumbing -----------------------------------------------------------

    def _exec_config(self, rng_seed: int) -> ExecConfig:
        return ExecConfig(
            timeout_ms=self.cfg.exec_timeout_ms,
            memory_limit_bytes=self.cfg.memory_limit_bytes,
            sandbox_dir=self.out / "sandbox",
            rng_seed=rng_seed,
        )

    def budget_left(self) -> bool:
        if self.cfg.max_execs is not None and self.execs >= self.cfg.max_execs:
            return False
        if self._deadline is not None and time.monotonic() >= self._deadline:
            return False
        return True

    def execute(self, p: Program, overrides=None) -> FeedbackReport:
        if not self.budget_left():
            raise BudgetExhausted
        self.execs += 1
        self._current_exec_seed = self.cfg.seed ^ (self.execs * 0x9E3779B1)
        self.executor.cfg.rng_seed = self._current_exec_seed
        return self.executor.execute(p, overrides=overrides, skip_validate=True)

    # -- directories ---------------------------------------------------------

    def _prepare_dirs(self) -> None:
        for sub in ("corpus", "crashes", "sandbox"):
            (self.out / sub).mkdir(parents=True, exist_ok=True)

    def _acquire_lock(self) -> None:
        lock = self.out / ".lock"
        if lock.exists():
            try:
                pid = int(lock.read_text().strip())
                os.kill(pid, 0)
            except (ValueError, ProcessLookupError, PermissionError):
                pass  # stale lock
            else:
                raise CampaignError(f"out-dir is locked by running pid {pid}")
        lock.write_text(str(os.getpid()))

    def _release_lock(self) -> None:
        try:
            (self.out / ".lock").unlink()
        except OSError:
            pass

    # -- corpus -----------------------------------------------------------------

    def _persist_seed(self, entry: SeedEntry) -> None:
        name = f"{self._seed_counter:06d}.hdsl"
        self._seed_counter += 1
        (self.out / "corpus" / name).write_text(
            self.serializer.serialize(entry.program))

    def _ingest_corpus(self) -> None:
        corpus = sorted((self.out / "corpus").glob("*.hdsl"))
        for path in corpus:
            try:
                p = parse(path.read_text(), self.manifest.registry)
            except Exception:
                continue
            if validate(p, self.manifest):
                continue
            try:
                report = self.execute(p)
            except BudgetExhausted:
                return
            if report.crashed():
                continue
            novel = report.target_coverage(p) - self.seen_cov
            self.seen_cov.update(report.target_coverage(p))
            self.pool.append(SeedEntry(p, frozenset(novel), age=0,
                                       exec_ms=report.elapsed_ms,
                                       path_size=len(report.coverage),
                                       cmp_literals=_cmp_literals(report)))
        if corpus:
            taken = [int(p.stem) for p in corpus if p.stem.isdigit()]
            self._seed_counter = max(taken, default=-1) + 1

    # -- crash pipeline ----------------------------------------------------------

    def _dedup_key(self, p: Program, report: FeedbackReport) -> tuple:
        fault = report.fault
        fn = ""
        stmt = p.by_index().get(fault.stmt_index) if fault else None
        if stmt is not None and isinstance(stmt.body, CallStmt):
            fn = stmt.body.name
        return (fault.site if fault else -1, fn)

    def _handle_crash(self, p: Program, report: FeedbackReport,
                      exec_seed: int) -> None:
        if report.fault is not None:
            self.fault_signatures.add((report.fault.site, report.fault.kind))
        try:
            verdict = cons.infer_from_crash(p, report, self.probe, self.store,
                                            self.manifest, self.rng,
                                            witness=f"exec{self.execs}")
        except BudgetExhausted:
            return
        if verdict.spurious:
            self.spurious_filtered += 1
            return
        try:
            if cons.violates(p, self.store, self.manifest):
                if cons.crash_is_spurious(p, report, self.store, self.manifest,
                                          self.probe, self.producer):
                    self.spurious_filtered += 1
                    return
        except BudgetExhausted:
            return
        key = self._dedup_key(p, report)
        if key in self.crashes:
            return
        record = CrashRecord(key, p, report, exec_seed)
        self.crashes[key] = record
        self._write_crash(record)

    def _crash_id(self, record: CrashRecord) -> str:
        site, fn = record.key
        fn = re.sub(r"[^A-Za-z0-9_]", "_", fn) or "unknown"
        return f"{site:08x}_{fn}"

    def _write_crash(self, record: CrashRecord) -> None:
        cid = self._crash_id(record)
        (self.out / "crashes" / f"{cid}.hdsl").write_text(
            self.serializer.serialize(record.program))
        fault = record.report.fault
        doc = {
            "schema": SUMMARY_SCHEMA,
            "library": self.manifest.library,
            "exit": record.report.exit,
            "fault": None if fault is None else {
                "kind": fault.kind,
                "address": fault.address,
                "site": fault.site,
                "stmt_index": fault.stmt_index,
                "detail": fault.detail,
            },
            "exec_seed": record.exec_seed,
            "spurious": record.spurious,
        }
        (self.out / "crashes" / f"{cid}.report.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def _audit_crashes(self) -> None:
        """Replay every stored crash against the final constraint store and
        demote the ones that only reproduce by violating it."""
        for key in sorted(self.crashes, key=lambda k: (k[0], k[1])):
            record = self.crashes[key]
            if record.spurious:
                continue
            try:
                spurious = cons.crash_is_spurious(
                    record.program, record.report, self.store, self.manifest,
                    self.probe, self.producer)
            except BudgetExhausted:
                break
            if spurious:
                record.spurious = True
                self.spurious_filtered += 1
                cid = self._crash_id(record)
                hdsl = self.out / "crashes" / f"{cid}.hdsl"
                spurious_dir = self.out / "crashes" / "spurious"
                spurious_dir.mkdir(exist_ok=True)
                for suffix in (".hdsl", ".report.json"):
                    src = self.out / "crashes" / f"{cid}{suffix}"
                    if src.exists():
                        src.rename(spurious_dir / src.name)
                self._write_spurious_note(record)

    def _write_spurious_note(self, record: CrashRecord) -> None:
        cid = self._crash_id(record)
        path = self.out / "crashes" / "spurious" / f"{cid}.report.json"
        if path.exists():
            doc = json.loads(path.read_text())
            doc["spurious"] = True
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    # -- learning on success -------------------------------------------------------

    def _handle_new_coverage(self, p: Program, report: FeedbackReport) -> None:
        target_cov = report.target_coverage(p)
        novel = target_cov - self.seen_cov
        if not novel:
            return
        cons.infer_from_path(p, report, self.store, self.manifest,
                             witness=f"exec{self.execs}")
        current = p
        try:
            deletable = self._deletable_relatives(current)
            if deletable:
                current, _edges = cons.learn_effective_relation(
                    current, deletable, target_cov, self.probe, self.graph,
                    witness=f"exec{self.execs}")
            current = gen.minimize_new_seed(current, report, self.probe,
                                            self.manifest.registry)
        except BudgetExhausted:
            pass
        self.seen_cov.update(target_cov)
        entry = SeedEntry(current, frozenset(novel), age=0,
                          exec_ms=report.elapsed_ms,
                          path_size=len(report.coverage),
                          cmp_literals=_cmp_literals(report))
        self.pool.append(entry)
        self._persist_seed(entry)

    def _deletable_relatives(self, p: Program) -> list[int]:
        target = p.target_call()
        if target is None:
            return []
        out = []
        for s in p.calls():
            if s.index == target.index:
                continue
            referenced = any(
                s.index in stmt_references(o.body)
                for o in p.statements
                if o.index != s.index and not _is_assert(o.body)
            )
            if not referenced:
                out.append(s.index)
        return out

    def _cache_effective_args(self, p: Program, info: gen.MutationInfo) -> None:
        for fn, param in info.replaced_args:
            sig = self.manifest.functions.get(fn)
            if sig is None:
                continue
            pos = next((i for i, (n, _) in enumerate(sig.params) if n == param), None)
            if pos is None:
                continue
            for s in p.calls():
                if s.body.name == fn and pos < len(s.body.args):
                    slice_ = cons.extract_arg_slice(p, s.index, pos)
                    if slice_:
                        self.arg_cache.add(fn, param, slice_)
                    break

    # -- phases ----------------------------------------------------------------

    def _pilot_budget(self) -> Optional[int]:
        if self.cfg.max_execs is not None:
            return max(len(self.manifest.functions),
                       int(self.cfg.max_execs * PILOT_BUDGET_FRACTION))
        return None

    def _run_one(self, p: Program) -> Optional[FeedbackReport]:
        if validate(p, self.manifest):
            return None
        report = self.execute(p)
        exec_seed = self._current_exec_seed
        if report.crashed():
            self._handle_crash(p, report, exec_seed)
            return report
        self._handle_new_coverage(p, report)
        return report

    def pilot_phase(self, stop: Optional[Callable[["Campaign"], bool]]) -> None:
        budget = self._pilot_budget()
        sweeps = 0
        while True:
            for sig in self.manifest.signatures():
                if stop is not None and stop(self):
                    raise BudgetExhausted
                try:
                    p = gen.pilot_round(self.manifest, sig, self.cfg.gen, self.rng,
                                        self.graph)
                    p = cons.refine(p, self.store, self.manifest, self.rng,
                                    self.producer)
                    p = gen.sweep_orphans(p)
                except (gen.GenError, cons.RefineError):
                    continue
                self._run_one(p)
            sweeps += 1
            if budget is not None and self.execs >= budget and self.pool:
                return
            if budget is None and sweeps >= 2 and self.pool:
                return
            if sweeps >= 50 and self.pool:
                return

    def evolution_phase(self, stop: Optional[Callable[["Campaign"], bool]]) -> None:
        stale = 0
        while True:
            if stop is not None and stop(self):
                raise BudgetExhausted
            if not self.budget_left():
                raise BudgetExhausted
            self.round += 1
            if not self.pool or (stale > 0 and stale % 512 == 0):
                sig = self.rng.choice(self.manifest.signatures())
                try:
                    p = gen.pilot_round(self.manifest, sig, self.cfg.gen, self.rng,
                                        self.graph)
                    p = cons.refine(p, self.store, self.manifest, self.rng,
                                    self.producer)
                    p = gen.sweep_orphans(p)
                    self._run_one(p)
                except (gen.GenError, cons.RefineError):
                    pass
                stale += 1
                continue
            for entry in self.pool:
                entry.age += 1
            seed, candidate, info = gen.evolve_round(
                self.pool, self.manifest, self.cfg.gen, self.rng, self.store,
                self.graph, self.arg_cache)
            if candidate is None:
                continue
            before = len(self.pool)
            report = self._run_one(candidate)
            if report is not None and len(self.pool) > before:
                self._cache_effective_args(self.pool[-1].program, info)
                stale = 0
            else:
                stale += 1

    # -- entry point --------------------------------------------------------------

    def run(self, stop: Optional[Callable[["Campaign"], bool]] = None) -> dict:
        self._prepare_dirs()
        self._acquire_lock()
        try:
            if self.cfg.max_seconds is not None:
                self._deadline = time.monotonic() + self.cfg.max_seconds
            self._ingest_corpus()
            try:
                self.pilot_phase(stop)
                self.evolution_phase(stop)
            except BudgetExhausted:
                pass
            self._audit_crashes()
            self._persist_constraints()
            summary = self.summary()
            self._write_summary(summary)
            return summary
        finally:
            self._release_lock()
            close = getattr(self.executor, "close", None)
            if close is not None:
                close()

    def _persist_constraints(self) -> None:
        (self.out / "constraints.jsonl").write_text(self.store.to_jsonl())

    def summary(self) -> dict:
        budget: dict = {}
        if self.cfg.max_execs is not None:
            budget["execs"] = self.cfg.max_execs
        if self.cfg.max_seconds is not None:
            budget["seconds"] = self.cfg.max_seconds
        unique = sum(1 for r in self.crashes.values() if not r.spurious)
        return {
            "schema": SUMMARY_SCHEMA,
            "library": self.manifest.library,
            "seed": self.cfg.seed,
            "budget": budget,
            "execs": self.execs,
            "seeds": len(self.pool),
            "unique_crashes": unique,
            "spurious_filtered": self.spurious_filtered,
            "constraints_learned": len(self.store),
            "coverage_count": len(self.seen_cov),
        }

    def _write_summary(self, summary: dict) -> None:
        (self.out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _is_assert(body) -> bool:
    from .dsl import AssertStmt
    return isinstance(body, AssertStmt)


def _cmp_literals(report: FeedbackReport, cap: int = 32) -> tuple[int, ...]:
    out: list[int] = []
    for ev in report.cmp_log:
        for v in (ev.a, ev.b):
            if isinstance(v, int) and v not in out:
                out.append(v)
        if len(out) >= cap:
            break
    return tuple(out[:cap])


def make_executor(backend, cfg: ExecConfig):
    maker = getattr(backend, "create_executor", None)
    return maker(cfg) if maker is not None else Executor(backend, cfg)


def build_backend(manifest: Manifest, backend_name: str,
                  binary: Optional[Path] = None):
    if backend_name == "synthetic":
        try:
            return synthetic_backend_for(manifest)
        except KeyError as e:
            raise CampaignError(str(e)) from None
    if backend_name == "ffi":
        from .ffi import FfiBackend
        if binary is None:
            raise CampaignError("--binary is required for the ffi backend")
        return FfiBackend(manifest, Path(binary))
    raise CampaignError(f"unknown backend {backend_name!r}")
