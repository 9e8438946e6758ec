"""Workload generators and the simulation runner.

Workload kinds:

  rand_write_sync      one actor, 4K random write() + fsync(); non-allocating
                       writes degrade the fsync to fdatasync, which makes
                       this the Wait-On-Transfer baseline on EXT4_OD and the
                       transfer-and-flush baseline on EXT4_DR.
  rand_write_barrier   write() + fdatabarrier(); BFS regimes only.
  rand_write_buffered  plain buffered writes with background writeback.
  dwsl                 n actors, each doing allocating 4K write + fsync
                       (fbarrier on BFS_OD) on a private file.
  sqlite_persist       the insert-transaction IO pattern: four sync points
                       per transaction; 4x fdatasync on EXT4, 3x
                       fdatabarrier + 1x fdatasync on BFS with a durable
                       tail, 4x fdatabarrier ordering-only.

run_workload() is deterministic for a fixed config: same seed, same report.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .block_layer import Dispatcher, IOScheduler
from .device import StorageDevice
from .engine import Simulator, SimulationFault
from .journal import Filesystem
from .profiles import RunConfig, UsageError

WORKLOADS = ("rand_write_sync", "rand_write_barrier", "rand_write_buffered",
             "dwsl", "sqlite_persist")


@dataclass
class SimResult:
    cfg: RunConfig
    sim: Simulator
    device: StorageDevice
    scheduler: IOScheduler
    dispatcher: Dispatcher
    fs: Filesystem
    ops: int
    app_actors: list[str]
    last_io_at: int

    @property
    def syscalls(self):
        return self.fs.syscalls

    def sync_latencies(self) -> list[int]:
        return [r.t_end - r.t_start for r in self.fs.syscalls
                if r.op in ("fsync", "fdatasync", "fbarrier", "fdatabarrier")]

    def app_switches(self) -> int:
        return sum(self.sim.actors[n].voluntary_switches
                   for n in self.app_actors)


def build_sim(cfg: RunConfig) -> SimResult:
    sim = Simulator(t_cs=cfg.device.t_cs)
    device = StorageDevice(sim, cfg.device, seed=cfg.seed, trace=cfg.trace)
    scheduler = IOScheduler(
        sim,
        disable_epoch_blocking=cfg.disable_epoch_blocking,
        disable_barrier_reassignment=cfg.disable_barrier_reassignment,
        discipline=cfg.discipline, seed=cfg.seed,
        trace=cfg.trace)
    dispatcher = Dispatcher(sim, scheduler, device,
                            retry_interval=cfg.device.retry_interval,
                            max_retries=cfg.device.max_retries,
                            trace=cfg.trace)
    fs = Filesystem(sim, scheduler, dispatcher, cfg)
    return SimResult(cfg, sim, device, scheduler, dispatcher, fs, cfg.ops,
                     [], 0)


def _track_last_io(res: SimResult) -> None:
    state = {"t": 0}
    res.device.on_complete(lambda cmd: state.__setitem__("t", res.sim.now()))
    res._last_io_state = state


def run_workload(cfg: RunConfig) -> SimResult:
    if cfg.workload not in WORKLOADS:
        raise UsageError(
            f"unknown workload {cfg.workload!r}; one of {WORKLOADS}")
    if cfg.workload == "rand_write_barrier" and not cfg.regime.startswith("BFS"):
        raise UsageError("rand_write_barrier needs a BFS regime")
    res = build_sim(cfg)
    _track_last_io(res)
    spawner = {
        "rand_write_sync": _spawn_rand_sync,
        "rand_write_barrier": _spawn_rand_barrier,
        "rand_write_buffered": _spawn_rand_buffered,
        "dwsl": _spawn_dwsl,
        "sqlite_persist": _spawn_sqlite,
    }[cfg.workload]
    spawner(res)
    res.sim.run()
    stuck = res.sim.blocked_actors()
    if stuck:
        names = ", ".join(f"{a.name}({a.blocked_reason})" for a in stuck)
        raise SimulationFault(f"workload deadlocked: {names}")
    res.last_io_at = max(res._last_io_state["t"], 1)
    return res


# -- workload actor bodies ---------------------------------------------------


def _spawn_rand_sync(res: SimResult) -> None:
    fs, cfg = res.fs, res.cfg
    file = fs.create_file(0)
    rng = random.Random(cfg.seed)

    def body(actor):
        for _ in range(cfg.ops):
            yield from fs.write(actor, file, rng.randrange(cfg.block_range),
                                allocating=cfg.allocating)
            yield from fs.fsync(actor, file)

    _spawn_app(res, "app-0", body)


def _spawn_rand_barrier(res: SimResult) -> None:
    fs, cfg = res.fs, res.cfg
    file = fs.create_file(0)
    rng = random.Random(cfg.seed)

    def body(actor):
        for _ in range(cfg.ops):
            yield from fs.write(actor, file, rng.randrange(cfg.block_range))
            yield from fs.fdatabarrier(actor, file)

    _spawn_app(res, "app-0", body)


def _spawn_rand_buffered(res: SimResult) -> None:
    fs, cfg = res.fs, res.cfg
    file = fs.create_file(0)
    rng = random.Random(cfg.seed)
    fs.enable_writeback()

    def body(actor):
        for _ in range(cfg.ops):
            yield from fs.write(actor, file, rng.randrange(cfg.block_range))

    _spawn_app(res, "app-0", body)


def _spawn_dwsl(res: SimResult) -> None:
    fs, cfg = res.fs, res.cfg
    per_actor, extra = divmod(cfg.ops, cfg.actors)
    ordering_only = cfg.regime == "BFS_OD"

    for i in range(cfg.actors):
        file = fs.create_file(i)
        count = per_actor + (1 if i < extra else 0)

        def body(actor, file=file, count=count):
            for _ in range(count):
                yield from fs.write(actor, file, 0, allocating=True)
                if ordering_only:
                    yield from fs.fbarrier(actor, file)
                else:
                    yield from fs.fsync(actor, file)

        _spawn_app(res, f"app-{i}", body)


def _spawn_sqlite(res: SimResult) -> None:
    fs, cfg = res.fs, res.cfg
    file = fs.create_file(0)
    rng = random.Random(cfg.seed)
    bfs = cfg.regime.startswith("BFS")

    def body(actor):
        for _ in range(cfg.tx):
            for phase in range(4):
                yield from fs.write(actor, file,
                                    rng.randrange(cfg.block_range))
                last = phase == 3
                if not bfs:
                    yield from fs.fdatasync(actor, file)
                elif cfg.durable_tail and last:
                    yield from fs.fdatasync(actor, file)
                else:
                    yield from fs.fdatabarrier(actor, file)

    res.ops = cfg.tx
    _spawn_app(res, "app-0", body)


def _spawn_app(res: SimResult, name: str, body) -> None:
    def gen():
        actor = res.sim.actors[name]
        yield from body(actor)

    res.sim.spawn(name, gen())
    res.app_actors.append(name)
