"""Acceptance suite: the ten release criteria, one result line each.

Each criterion is a function over a shared context that memoizes
simulation runs, so the throughput runs feed both the ordering and the
queue-depth checks. `run_all()` is consumed by both the CLI (`accept`
subcommand) and tests/test_acceptance.py.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

from .crashcheck import (OrderTrace, legal_reference, oracle_legal,
                         run_crash_suite)
from .profiles import RunConfig, get_profile
from .report import Report, make_report
from .workloads import SimResult, build_sim, run_workload

PROFILES = ("ufs", "plain-ssd", "supercap-ssd")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    elapsed_s: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (f"[{mark}] criterion {self.number:2d} {self.name}: "
                f"{self.detail} ({self.elapsed_s:.1f}s)")


class Context:
    def __init__(self):
        self._runs: dict = {}

    def run(self, profile: str, regime: str, workload: str, ops: int,
            seed: int = 5, **kw) -> SimResult:
        key = (profile, regime, workload, ops, seed, tuple(sorted(kw.items())))
        if key not in self._runs:
            cfg = RunConfig(device=get_profile(profile), regime=regime,
                            workload=workload, ops=ops, seed=seed, **kw)
            self._runs[key] = run_workload(cfg)
        return self._runs[key]

    def report(self, *args, **kw) -> Report:
        return make_report(self.run(*args, **kw))


# -- criteria -----------------------------------------------------------------


def criterion_1(ctx: Context) -> CriterionResult:
    """Throughput ordering: barrier >= 2x Wait-On-Transfer, buffered above
    barrier, on every shipped profile (100k ops each)."""
    details = []
    ok = True
    for profile in PROFILES:
        x = ctx.report(profile, "EXT4_OD", "rand_write_sync", 100_000,
                       allocating=False)
        b = ctx.report(profile, "BFS_OD", "rand_write_barrier", 100_000)
        p = ctx.report(profile, "BFS_OD", "rand_write_buffered", 100_000)
        ratio = b.iops / x.iops
        ok &= ratio >= 2.0 and p.iops > b.iops
        details.append(f"{profile} B/X={ratio:.2f} P/B={p.iops / b.iops:.2f}")
    return CriterionResult(1, "throughput ordering", ok, "; ".join(details))


def criterion_2(ctx: Context) -> CriterionResult:
    """Wait-On-Transfer max QD exactly 1; barrier mean QD >= 0.8 x depth."""
    details = []
    ok = True
    for profile in PROFILES:
        x = ctx.report(profile, "EXT4_OD", "rand_write_sync", 100_000,
                       allocating=False)
        ok &= x.max_qd == 1
        details.append(f"{profile} WoT maxQD={x.max_qd}")
    for profile in ("plain-ssd", "ufs"):
        b = ctx.report(profile, "BFS_OD", "rand_write_barrier", 100_000)
        depth = get_profile(profile).queue_depth
        ok &= b.mean_qd >= 0.8 * depth
        details.append(f"{profile} barrier meanQD={b.mean_qd:.1f}/{depth}")
    return CriterionResult(2, "queue depth", ok, "; ".join(details))


def criterion_3(ctx: Context) -> CriterionResult:
    """Mean fsync latency, BFS_DR over EXT4_DR on plain-ssd, in [0.45, 0.75]."""
    e = ctx.report("plain-ssd", "EXT4_DR", "dwsl", 10_000)
    b = ctx.report("plain-ssd", "BFS_DR", "dwsl", 10_000)
    ratio = b.lat_mean_us / e.lat_mean_us
    ok = 0.45 <= ratio <= 0.75
    return CriterionResult(
        3, "fsync latency ratio", ok,
        f"BFS {b.lat_mean_us:.0f}us / EXT4 {e.lat_mean_us:.0f}us = {ratio:.3f}")


def criterion_4(ctx: Context) -> CriterionResult:
    """Wakeups: EXT4_DR fsync exactly 2; BFS_DR in {1,2} with journal-path
    calls at 1; BFS_OD fdatabarrier zero voluntary switches."""
    problems = []

    er = ctx.run("plain-ssd", "EXT4_DR", "dwsl", 2000)
    ewk = [r.wakeups for r in er.fs.syscalls if r.op == "fsync"]
    if not ewk or any(w != 2 for w in ewk):
        problems.append(f"EXT4_DR wakeups {sorted(set(ewk))} != {{2}}")

    br = ctx.run("plain-ssd", "BFS_DR", "dwsl", 2000)
    bwk = [r.wakeups for r in br.fs.syscalls if r.op == "fsync"]
    if not bwk or any(w != 1 for w in bwk):
        problems.append(f"BFS_DR journal-path wakeups {sorted(set(bwk))} != {{1}}")

    mixed = ctx.run("plain-ssd", "BFS_DR", "rand_write_sync", 2000,
                    allocating=False)
    kinds = {True: set(), False: set()}
    for r in mixed.fs.syscalls:
        kinds[r.journaled].add(r.wakeups)
    if kinds[True] != {1}:
        problems.append(f"mixed journal-path wakeups {kinds[True]} != {{1}}")
    if kinds[False] != {2}:
        problems.append(f"mixed degraded wakeups {kinds[False]} != {{2}}")

    od = ctx.run("plain-ssd", "BFS_OD", "rand_write_barrier", 2000)
    if od.app_switches() != 0:
        problems.append(f"fdatabarrier switches {od.app_switches()} != 0")

    return CriterionResult(4, "context switches", not problems,
                           "; ".join(problems) or
                           "EXT4_DR=2, BFS_DR journal=1/degraded=2, fdatabarrier=0")


def _commit_stream(profile: str, regime: str, calls: int = 400,
                   callers: int = 4) -> float:
    """Saturated journal-commit stream; returns the mean commit gap.

    Measures the commit machinery's intrinsic cycle: context switches are
    zeroed and the device queue is effectively unbounded so neither
    pollutes the dispatch/transfer/flush decomposition.
    """
    device = get_profile(profile, queue_depth=1_000_000, t_cs=0)
    cfg = RunConfig(device=device, regime=regime, workload="dwsl",
                    ops=calls, seed=1)
    res = build_sim(cfg)
    fs, sim = res.fs, res.sim
    for i in range(callers):
        f = fs.create_file(i)

        def body(name=f"app-{i}", f=f):
            actor = sim.actors[name]
            for _ in range(calls // callers):
                if regime.startswith("BFS"):
                    yield ("delay", device.t_d)
                    yield from fs.fbarrier(actor, f)
                else:
                    yield from fs.touch(actor, f)
                    yield from fs.fsync(actor, f)

        sim.spawn(f"app-{i}", body())
    sim.run()
    gaps = [b - a for a, b in zip(fs.commit_times[10:], fs.commit_times[11:])]
    return sum(gaps) / len(gaps)


def criterion_5(ctx: Context) -> CriterionResult:
    """Saturated commit intervals match the latency decomposition +-10%:
    BFS ~ t_D, EXT4_OD ~ t_D+t_C, supercap EXT4_DR ~ t_D+t_C+t_eps."""
    checks = []
    ok = True
    ufs = get_profile("ufs")
    g = _commit_stream("ufs", "BFS_OD")
    ok &= abs(g / ufs.t_d - 1) <= 0.10
    checks.append(f"BFS {g:.1f}us vs t_D={ufs.t_d}")

    ssd = get_profile("plain-ssd")
    want = ssd.t_d + ssd.t_c_per_4k
    g = _commit_stream("plain-ssd", "EXT4_OD")
    ok &= abs(g / want - 1) <= 0.10
    checks.append(f"EXT4_OD {g:.1f}us vs t_D+t_C={want}")

    sc = get_profile("supercap-ssd")
    want = sc.t_d + sc.t_c_per_4k + sc.t_eps
    g = _commit_stream("supercap-ssd", "EXT4_DR")
    ok &= abs(g / want - 1) <= 0.10
    checks.append(f"EXT4_DR(sc) {g:.1f}us vs t_D+t_C+t_eps={want}")
    return CriterionResult(5, "commit interval", ok, "; ".join(checks))


def criterion_6(ctx: Context) -> CriterionResult:
    """BFS_DR fsync drives the device queue to exactly two commands."""
    r = ctx.report("ufs", "BFS_DR", "dwsl", 1000)
    ok = r.max_qd == 2
    return CriterionResult(6, "fsync queue depth 2", ok,
                           f"ufs BFS_DR maxQD={r.max_qd} (t_cs=160, t_C=70)")


def criterion_7(ctx: Context) -> CriterionResult:
    """Exhaustive crash suite over every barrier mode: zero violations."""
    verdict = run_crash_suite()
    ok = verdict.ok and verdict.states_checked > 0
    return CriterionResult(
        7, "crash-safety suite", ok,
        f"{verdict.states_checked} states, {len(verdict.violations)} violations")


def criterion_8(ctx: Context) -> CriterionResult:
    """Disabling each ordering mechanism triggers checker violations."""
    mutations = ("disable_ordered_fence", "disable_epoch_blocking",
                 "disable_barrier_reassignment", "disable_ext4_preflush")
    counts = {}
    for m in mutations:
        counts[m] = len(run_crash_suite(**{m: True}).violations)
    ok = all(c >= 1 for c in counts.values())
    detail = ", ".join(f"{m.removeprefix('disable_')}={c}"
                       for m, c in counts.items())
    return CriterionResult(8, "mutation sensitivity", ok, detail)


def criterion_9(ctx: Context) -> CriterionResult:
    """SQLite insert pattern on ufs: durable-BFS and ordering-only gains."""
    base = ctx.report("ufs", "EXT4_DR", "sqlite_persist", 1, seed=7, tx=2000)
    dur = ctx.report("ufs", "BFS_DR", "sqlite_persist", 1, seed=7, tx=2000)
    order = ctx.report("ufs", "BFS_OD", "sqlite_persist", 1, seed=7, tx=2000,
                       durable_tail=False)
    g_dur = dur.iops / base.iops
    g_ord = order.iops / base.iops
    ok = g_dur >= 1.7 * 0.9 and g_ord >= 2.8 * 0.9
    return CriterionResult(
        9, "sqlite-pattern gains", ok,
        f"durable {g_dur:.2f}x (>=1.53), ordering-only {g_ord:.2f}x (>=2.52)")


def _synthetic_trace(epoch_sizes: list[int], orderless: int) -> OrderTrace:
    epochs = {}
    block = 0
    for k, size in enumerate(epoch_sizes):
        epochs[k] = frozenset((block + i, 1) for i in range(size))
        block += size
    extra = frozenset((block + i, 1) for i in range(orderless))
    return OrderTrace(epochs=epochs, orderless=extra)


def criterion_10(ctx: Context) -> CriterionResult:
    """Oracle agrees with the independent predicate on all 2^8 subsets of
    three 8-write traces."""
    traces = [_synthetic_trace([3, 3, 2], 0),
              _synthetic_trace([2, 2, 2], 2),
              _synthetic_trace([1, 4, 2], 1)]
    checked = 0
    for trace in traces:
        universe = sorted(trace.transferred())
        assert len(universe) == 8
        for r in range(9):
            for subset in itertools.combinations(universe, r):
                if oracle_legal(trace, subset) != legal_reference(trace, subset):
                    return CriterionResult(
                        10, "oracle self-check", False,
                        f"disagreement on subset {subset}")
                checked += 1
    return CriterionResult(10, "oracle self-check", True,
                           f"{checked} subsets agree")


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


def run_all(verbose: bool = True) -> list[CriterionResult]:
    ctx = Context()
    results = []
    for fn in CRITERIA:
        t0 = time.time()
        result = fn(ctx)
        result.elapsed_s = time.time() - t0
        results.append(result)
        if verbose:
            print(result.line(), flush=True)
    return results
