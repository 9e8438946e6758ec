"""Crash-injection checker: legality oracle, state enumeration, journal
consistency and sync-contract verification.

The legality oracle works at epoch granularity over *issue-side* epochs:
each order-preserving write is stamped with the count of barrier requests
issued before it, so a durable set is legal iff for every epoch with any
member present, every earlier epoch is fully present. Orderless writes are
unconstrained. Equivalently (the independently coded reference predicate):
scanning epochs in order, once one is partial or empty, no later epoch may
contribute anything.

Crash states are reconstructed by replaying the device's persistence
timeline: at every inter-event instant the checker derives the durable
sets the device could expose, which for lfs_recovery means every prefix of
the active segment (the recovery scan stops at the first bad page), and
for the write-back modes exactly what background eviction or the last
atomic flush already persisted. Supercap devices expose the full
transferred set.

All checks are pure functions over completed traces.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .device import CrashState
from .engine import SimulationFault
from .profiles import RunConfig, get_profile
from .workloads import SimResult, build_sim

EXHAUSTIVE_CACHE_LIMIT = 20


# -- order trace --------------------------------------------------------------


@dataclass
class OrderTrace:
    """Issue/dispatch/completion orders plus per-write epoch tags."""

    epochs: dict[int, frozenset]        # intent epoch -> ordered (block, ver)
    orderless: frozenset                # transferred orderless writes
    requests: list = field(default_factory=list)

    def transferred(self) -> frozenset:
        out = set(self.orderless)
        for members in self.epochs.values():
            out |= members
        return frozenset(out)


def build_order_trace(res: SimResult) -> OrderTrace:
    epochs: dict[int, set] = {}
    orderless: set = set()
    for entry in res.device.durable + res.device.cache:
        if entry.ordered:
            epochs.setdefault(entry.epoch, set()).add(
                (entry.block, entry.version))
        else:
            orderless.add((entry.block, entry.version))
    return OrderTrace(
        epochs={k: frozenset(v) for k, v in sorted(epochs.items())},
        orderless=frozenset(orderless),
        requests=list(res.dispatcher.dispatch_trace))


# -- legality oracle -----------------------------------------------------------


def oracle_legal(trace: OrderTrace, candidate) -> bool:
    """True iff the ordered part of `candidate` is epoch-prefix closed."""
    candidate = frozenset(candidate)
    unknown = candidate - trace.transferred()
    if unknown:
        raise ValueError(f"candidate contains untransferred writes: "
                         f"{sorted(unknown)[:4]}")
    keys = sorted(trace.epochs)
    for i, k in enumerate(keys):
        if candidate & trace.epochs[k]:
            for j in keys[:i]:
                if not trace.epochs[j] <= candidate:
                    return False
    return True


def legal_reference(trace: OrderTrace, candidate) -> bool:
    """Second, independently coded predicate: scan epochs in order and
    refuse any contribution after the first partial or empty epoch."""
    candidate = frozenset(candidate)
    broken = False
    for k in sorted(trace.epochs):
        members = trace.epochs[k]
        got = candidate & members
        if broken and got:
            return False
        if got != members:
            broken = True
    return True


# -- crash-state enumeration ---------------------------------------------------


def _replay_instants(res: SimResult):
    """Yield (t, durable_list, cache_list) after every timeline event."""
    durable: list = []
    cache: list = []
    yield 0, tuple(durable), tuple(cache)
    for ev in res.device.timeline:
        kind, t = ev[0], ev[1]
        if kind == "xfer":
            cache.append(ev[2])
        elif kind == "fua":
            durable.extend(ev[2])
        else:                       # evict | seal | snap | flush move a prefix
            count = ev[2]
            durable.extend(cache[:count])
            del cache[:count]
        yield t, tuple(durable), tuple(cache)


def enumerate_crash_states(res: SimResult, strategy: str = "exhaustive",
                           n: int = 0, seed: int = 0) -> list[CrashState]:
    """Every crash state the device can expose, at every inter-event
    instant (exhaustive), or n seeded samples of them."""
    if not res.cfg.trace:
        raise SimulationFault("crash enumeration needs a trace-enabled run")
    cfg = res.cfg.device
    instants = list(_replay_instants(res))
    if strategy == "exhaustive":
        worst = max(len(c) for _, _, c in instants)
        if worst > EXHAUSTIVE_CACHE_LIMIT:
            raise SimulationFault(
                f"exhaustive enumeration refused: {worst} transferred-but-"
                f"unflushed blocks exceeds the {EXHAUSTIVE_CACHE_LIMIT} limit")
        states = []
        seen = set()
        for t, durable, cache in instants:
            base = [(e.block, e.version) for e in durable]
            if cfg.supercap:
                cuts = [len(cache)]
            elif cfg.barrier_mode == "lfs_recovery":
                cuts = range(len(cache) + 1)
            else:
                cuts = [0]
            for cut in cuts:
                img = frozenset(base + [(e.block, e.version)
                                        for e in cache[:cut]])
                key = (t, img)
                if key not in seen:
                    seen.add(key)
                    states.append(CrashState(img, t))
        return states
    if strategy == "sampled":
        rng = random.Random(seed)
        states = []
        for _ in range(n):
            t, durable, cache = instants[rng.randrange(len(instants))]
            base = [(e.block, e.version) for e in durable]
            if cfg.supercap:
                cut = len(cache)
            elif cfg.barrier_mode == "lfs_recovery":
                cut = rng.randint(0, len(cache))
            else:
                cut = 0
            states.append(CrashState(
                frozenset(base + [(e.block, e.version)
                                  for e in cache[:cut]]), t))
        return states
    raise ValueError(f"unknown strategy {strategy!r}")


# -- journal consistency --------------------------------------------------------


@dataclass
class TxnLayout:
    txn_id: int
    jd: frozenset                  # (block, version) of descriptor + logs
    jc: tuple                      # (block, version) of the commit record
    data: frozenset                # (block, version) the commit covers


def journal_layout(res: SimResult) -> list[TxnLayout]:
    rows = []
    for txn in res.fs.txns:
        rows.append(TxnLayout(
            txn_id=txn.txn_id,
            jd=frozenset((b, 1) for b in txn.jd_blocks),
            jc=(txn.jc_block, 1),
            data=frozenset(txn.data_writes)))
    rows.sort(key=lambda r: r.txn_id)
    return rows


@dataclass
class ConsistencyResult:
    consistent: bool
    recovered_txns: int
    kind: str = ""
    witness: tuple = ()


def check_journal_consistency(cs: CrashState,
                              layout: list[TxnLayout]) -> ConsistencyResult:
    """A durable JC demands its whole transaction and every earlier JC."""
    durable = cs.durable
    jc_in = [row.jc in durable for row in layout]
    for i, row in enumerate(layout):
        if not jc_in[i]:
            continue
        missing = (row.jd | row.data) - durable
        if missing:
            return ConsistencyResult(False, 0, "premature-commit",
                                     tuple(sorted(missing))[:4])
        if not all(jc_in[:i]):
            return ConsistencyResult(False, 0, "order-inversion",
                                     (row.jc,))
    recovered = 0
    for ok in jc_in:
        if not ok:
            break
        recovered += 1
    return ConsistencyResult(True, recovered)


# -- sync contracts ---------------------------------------------------------------


@dataclass
class Violation:
    kind: str
    crash_time: int
    witness_blocks: tuple

    def as_dict(self) -> dict:
        return {"kind": self.kind, "crash_time": self.crash_time,
                "witness_blocks": [list(w) for w in self.witness_blocks]}


@dataclass
class Verdict:
    states_checked: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {"states_checked": self.states_checked,
                "violations": [v.as_dict() for v in self.violations]}


def check_sync_contracts(res: SimResult,
                         states: list[CrashState]) -> Verdict:
    """Durability contract of returned fsync/fdatasync calls and the
    ordering (Hello/World) contract of barrier calls, over every state."""
    verdict = Verdict(states_checked=len(states))
    final_ordered = {fid: list(f.dispatched_ordered)
                     for fid, f in res.fs.files.items()}
    for rec in res.fs.syscalls:
        if rec.durable_claim and rec.claimed:
            claimed = frozenset(rec.claimed)
            for cs in states:
                if cs.crash_time >= rec.t_end and not claimed <= cs.durable:
                    verdict.violations.append(Violation(
                        "fsync-durability", cs.crash_time,
                        tuple(sorted(claimed - cs.durable))[:4]))
                    break
        if rec.pre_len is not None:
            history = final_ordered.get(rec.file_id, [])
            pre = frozenset(history[:rec.pre_len])
            post = frozenset(history[rec.pre_len:])
            if not post:
                continue
            for cs in states:
                if cs.durable & post and not pre <= cs.durable:
                    verdict.violations.append(Violation(
                        "barrier-order", cs.crash_time,
                        tuple(sorted(pre - cs.durable))[:4]))
                    break
    return verdict


def check_everything(res: SimResult,
                     strategy: str = "exhaustive",
                     n: int = 0, seed: int = 0) -> Verdict:
    """Oracle legality + journal consistency + sync contracts, one verdict."""
    states = enumerate_crash_states(res, strategy, n=n, seed=seed)
    trace = build_order_trace(res)
    layout = journal_layout(res)
    verdict = Verdict(states_checked=len(states))
    for cs in states:
        if not oracle_legal(trace, cs.durable):
            verdict.violations.append(Violation(
                "oracle-illegal", cs.crash_time, ()))
            continue
        jres = check_journal_consistency(cs, layout)
        if not jres.consistent:
            verdict.violations.append(Violation(
                jres.kind, cs.crash_time, jres.witness))
    contracts = check_sync_contracts(res, states)
    verdict.violations.extend(contracts.violations)
    return verdict


# -- the standard small crash workload suite ---------------------------------------


CRASH_REGIMES = ("BFS_DR", "BFS_OD", "EXT4_DR")


def crash_workload(profile: str, barrier_mode: str, seed: int,
                   supercap: bool = False, regime: str | None = None,
                   **mutations) -> SimResult:
    """One small seeded journaling workload with full tracing.

    Two actors on private files issue a few writes and sync calls. The
    device queue is held at depth 3 and the scheduler runs its random
    (legal) inner discipline so controller and scheduler freedom is
    actually explored.
    """
    rng = random.Random(seed)
    if regime is None:
        regime = CRASH_REGIMES[seed % len(CRASH_REGIMES)]
    device = get_profile(profile, queue_depth=3, barrier_mode=barrier_mode,
                         supercap=supercap,
                         disable_ordered_fence=mutations.get(
                             "disable_ordered_fence", False))
    cfg = RunConfig(device=device, regime=regime, workload="dwsl",
                    ops=8, seed=seed, trace=True, discipline="random",
                    disable_epoch_blocking=mutations.get(
                        "disable_epoch_blocking", False),
                    disable_barrier_reassignment=mutations.get(
                        "disable_barrier_reassignment", False),
                    disable_ext4_preflush=mutations.get(
                        "disable_ext4_preflush", False))
    res = build_sim(cfg)
    fs, sim = res.fs, res.sim

    sync_ops = (["fsync", "fdatabarrier", "fdatasync"] if regime == "BFS_DR"
                else ["fbarrier", "fdatabarrier"] if regime == "BFS_OD"
                else ["fsync", "fdatasync"])

    def spawn_scripted(name: str, file, script: tuple) -> None:
        def gen():
            actor = sim.actors[name]
            for op, arg in script:
                if op == "write":
                    for _ in range(arg):
                        yield from fs.write(actor, file, 0, allocating=True)
                else:
                    yield from getattr(fs, op)(actor, file)

        sim.spawn(name, gen())
        res.app_actors.append(name)

    for i in range(2):
        file = fs.create_file(i)
        script = []
        for _ in range(rng.randint(1, 2)):
            script.append(("write", rng.randint(1, 2)))
            script.append((rng.choice(sync_ops), 0))
        spawn_scripted(f"app-{i}", file, tuple(script))
    sim.run()
    stuck = sim.blocked_actors()
    if stuck:
        names = ", ".join(f"{a.name}({a.blocked_reason})" for a in stuck)
        raise SimulationFault(f"crash workload deadlocked: {names}")
    return res


def run_crash_suite(modes=None, seeds=range(10), profile: str = "ufs",
                    **mutations) -> Verdict:
    """The standard suite: every barrier mode x seeded small traces."""
    if modes is None:
        modes = [("in_order_writeback", False), ("transactional", False),
                 ("lfs_recovery", False), ("in_order_writeback", True)]
    total = Verdict(states_checked=0)
    for barrier_mode, supercap in modes:
        for seed in seeds:
            res = crash_workload(profile, barrier_mode, seed,
                                 supercap=supercap, **mutations)
            verdict = check_everything(res)
            total.states_checked += verdict.states_checked
            total.violations.extend(verdict.violations)
    return total
