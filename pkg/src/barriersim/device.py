"""Flash device model: command queue, writeback cache, barrier enforcement.

The command queue is bounded (queue_depth) and serviced one command at a
time with SCSI-style priorities. Selection among eligible *simple* commands
is randomized by a seeded RNG to model controller freedom; the no-crossing
rules are: a simple command never gets serviced before an earlier-queued
ordered or head-of-queue command, an ordered command waits until every
earlier-queued command has left, and head-of-queue commands insert at the
front and are serviced first.

Completed write blocks land in the writeback cache in transfer order.
Persistence follows the configured barrier_mode:

  in_order_writeback  background eviction moves cache entries to durable
                      storage strictly in transfer order (epoch by epoch).
  transactional       a periodic atomic flush persists the whole cache as
                      one unit; a crash lands exactly on the last snapshot.
  lfs_recovery        entries append to an active segment; crash recovery
                      keeps sealed segments plus a prefix of the active
                      segment (the scan stops at the first bad page).

A supercap device persists its entire cache on power loss regardless of
mode. FLUSH persists everything in cache at command completion; FUA blocks
bypass the cache and become durable at completion (all blocks of one
command atomically, costing t_fua on devices without power-loss protection).
"""

from __future__ import annotations

import random
from collections import namedtuple
from typing import Callable, Optional

from .engine import Simulator
from .profiles import (DeviceConfig, IN_ORDER_WRITEBACK, LFS_RECOVERY,
                       TRANSACTIONAL)

SIMPLE = "simple"
ORDERED_PRIO = "ordered"
HEAD_OF_QUEUE = "head_of_queue"

QUEUE_FULL = "queue_full"
ACCEPTED = "accepted"

CacheEntry = namedtuple("CacheEntry", "block version seq epoch ordered req_id")


class StorageCommand:
    __slots__ = ("req", "priority", "barrier", "flush", "fua", "enqueue_time",
                 "arrival", "dispatch_seq", "on_done", "complete_time")

    def __init__(self, req, priority: str, barrier: bool, flush: bool,
                 fua: bool, enqueue_time: int,
                 on_done: Optional[Callable] = None):
        self.req = req
        self.priority = priority
        self.barrier = barrier
        self.flush = flush
        self.fua = fua
        self.enqueue_time = enqueue_time
        self.arrival = -1
        self.dispatch_seq = -1
        self.on_done = on_done
        self.complete_time = -1

    def __repr__(self) -> str:
        what = f"req={self.req.id}" if self.req is not None else "flush"
        return f"StorageCommand({what}, {self.priority})"


class CrashState:
    """Durable (block, version) pairs at a simulated power-loss instant."""

    __slots__ = ("durable", "crash_time")

    def __init__(self, durable: frozenset, crash_time: int):
        self.durable = durable
        self.crash_time = crash_time

    def __eq__(self, other):
        return (isinstance(other, CrashState) and self.durable == other.durable
                and self.crash_time == other.crash_time)

    def __hash__(self):
        return hash((self.durable, self.crash_time))

    def __repr__(self):
        return f"CrashState(t={self.crash_time}, n={len(self.durable)})"


class StorageDevice:
    def __init__(self, sim: Simulator, cfg: DeviceConfig, seed: int = 0,
                 trace: bool = False):
        self.sim = sim
        self.cfg = cfg
        self.rng = random.Random(seed)
        self.trace_enabled = trace

        self.waiting: list[StorageCommand] = []
        self.in_service: Optional[StorageCommand] = None
        self._arrival = 0

        self.cache: list[CacheEntry] = []      # transferred, not yet durable
        self.durable: list[CacheEntry] = []    # persisted, in persist order
        self.durable_set: set = set()
        self.transfer_seq = 0
        self.completions: list[tuple] = []     # (t, seq, req_id) when tracing
        self.timeline: list[tuple] = []        # crash-replay events when tracing
        self._completion_seq = 0

        self._hooks: list[Callable] = []
        self._tick_armed = False

        # queue-depth accounting (time-weighted)
        self._qd_last_t = sim.now()
        self._qd_area = 0
        self.max_qd = 0
        self.flush_count = 0
        self.qd_series: list[tuple[int, int]] = []   # (t, depth) when tracing

    # -- queue ---------------------------------------------------------------

    def occupancy(self) -> int:
        return len(self.waiting) + (1 if self.in_service is not None else 0)

    def has_room(self) -> bool:
        return self.occupancy() < self.cfg.queue_depth

    def on_complete(self, hook: Callable) -> None:
        self._hooks.append(hook)

    def _qd_sample(self) -> None:
        now = self.sim.now()
        self._qd_area += self.occupancy() * (now - self._qd_last_t)
        self._qd_last_t = now
        if self.trace_enabled:
            self.qd_series.append((now, self.occupancy()))

    def mean_qd(self) -> float:
        # area up to the last occupancy change; trailing background
        # eviction with an idle queue does not dilute the mean
        return self._qd_area / self._qd_last_t if self._qd_last_t else 0.0

    def enqueue(self, cmd: StorageCommand) -> str:
        if not self.has_room():
            return QUEUE_FULL
        self._qd_sample()
        cmd.arrival = self._arrival
        self._arrival += 1
        if cmd.priority == HEAD_OF_QUEUE:
            self.waiting.insert(0, cmd)
        else:
            self.waiting.append(cmd)
        self.max_qd = max(self.max_qd, self.occupancy())
        self._maybe_start()
        return ACCEPTED

    # -- service -------------------------------------------------------------

    def _select(self) -> StorageCommand:
        # position order equals arrival order except for head-of-queue
        # commands, which sit at the front and win outright
        waiting = self.waiting
        if len(waiting) == 1:
            return waiting[0]
        if self.cfg.disable_ordered_fence:
            for c in waiting:
                if c.priority == HEAD_OF_QUEUE:
                    return c
            return waiting[self.rng.randrange(len(waiting))]
        ahead: list[StorageCommand] = []
        for c in waiting:
            prio = c.priority
            if prio == HEAD_OF_QUEUE:
                return c
            if prio == ORDERED_PRIO:
                # earliest-queued ordered command fences everything behind it
                if ahead:
                    return ahead[self.rng.randrange(len(ahead))]
                return c
            ahead.append(c)
        return ahead[self.rng.randrange(len(ahead))]

    def _barrier_resident(self) -> bool:
        if self.in_service is not None and self.in_service.barrier:
            return True
        return any(c.barrier for c in self.waiting)

    def service_time(self, cmd: StorageCommand) -> int:
        t = 0
        if cmd.flush:
            t += self.cfg.flush_latency
        if cmd.req is not None:
            n = len(cmd.req.blocks)
            xfer = self.cfg.t_c_per_4k + (n - 1) * self.cfg.t_blk_extra
            if (not self.cfg.supercap and self.cfg.barrier_overhead_pct
                    and self._barrier_resident()):
                xfer = int(round(xfer * (1 + self.cfg.barrier_overhead_pct / 100)))
            t += xfer
            if cmd.fua:
                t += self.cfg.fua_latency
        return t

    def _maybe_start(self) -> None:
        if self.in_service is not None or not self.waiting:
            return
        cmd = self._select()
        self.waiting.remove(cmd)
        self.in_service = cmd
        self.sim.schedule_after(self.service_time(cmd),
                                lambda: self._complete(cmd),
                                label="dev-complete")

    def _complete(self, cmd: StorageCommand) -> None:
        self._qd_sample()
        self.in_service = None
        cmd.complete_time = self.sim.now()
        if cmd.flush:
            self._persist_all("flush")
            self.flush_count += 1
        if cmd.req is not None:
            entries = []
            req = cmd.req
            for block, version in zip(req.blocks, req.versions):
                entries.append(CacheEntry(block, version, self.transfer_seq,
                                          req.epoch_issue, req.ordered, req.id))
                self.transfer_seq += 1
            if cmd.fua:
                self.durable.extend(entries)
                self.durable_set.update((e.block, e.version) for e in entries)
                if self.trace_enabled:
                    self.timeline.append(("fua", self.sim.now(), tuple(entries)))
            else:
                self.cache.extend(entries)
                if self.trace_enabled:
                    for e in entries:
                        self.timeline.append(("xfer", self.sim.now(), e))
                if self.cfg.barrier_mode == LFS_RECOVERY:
                    self._seal_full_segments()
                elif not self.cfg.supercap:
                    self._arm_tick()
            if self.trace_enabled:
                self.completions.append(
                    (self.sim.now(), self._completion_seq, req.id))
            self._completion_seq += 1
        self._maybe_start()
        for hook in self._hooks:
            hook(cmd)
        if cmd.on_done is not None:
            cmd.on_done(cmd)

    # -- persistence machinery -------------------------------------------

    def _persist_head(self, count: int, label: str) -> None:
        if count <= 0:
            return
        moved = self.cache[:count]
        del self.cache[:count]
        self.durable.extend(moved)
        self.durable_set.update((e.block, e.version) for e in moved)
        if self.trace_enabled:
            self.timeline.append((label, self.sim.now(), len(moved)))

    def _persist_all(self, label: str) -> None:
        if self.cache:
            self._persist_head(len(self.cache), label)
        elif self.trace_enabled:
            self.timeline.append((label, self.sim.now(), 0))

    def _seal_full_segments(self) -> None:
        while len(self.cache) >= self.cfg.segment_pages:
            self._persist_head(self.cfg.segment_pages, "seal")

    def _arm_tick(self) -> None:
        if self._tick_armed or self.cfg.supercap:
            return
        self._tick_armed = True
        if self.cfg.barrier_mode == TRANSACTIONAL:
            interval = self.cfg.t_f
        else:
            interval = self.cfg.evict_interval
        self.sim.schedule_after(interval, self._tick, label="dev-tick")

    def _tick(self) -> None:
        self._tick_armed = False
        if self.cfg.barrier_mode == TRANSACTIONAL:
            self._persist_all("snap")
        elif self.cfg.barrier_mode == IN_ORDER_WRITEBACK:
            self._persist_head(min(self.cfg.evict_batch, len(self.cache)),
                               "evict")
        if self.cache or self.waiting or self.in_service is not None:
            self._arm_tick()

    # -- crash and recovery ----------------------------------------------

    def crash(self) -> CrashState:
        """A durable image legal for the active barrier mode, at now()."""
        if self.cfg.supercap:
            survivors = self.durable + self.cache
        elif self.cfg.barrier_mode == LFS_RECOVERY:
            cut = self.rng.randint(0, len(self.cache))
            survivors = self.durable + self.cache[:cut]
        else:
            # in_order_writeback and transactional: only what background
            # eviction / the last atomic flush already persisted.
            survivors = self.durable
        return CrashState(frozenset((e.block, e.version) for e in survivors),
                          self.sim.now())

    def recover(self, cs: CrashState) -> dict[int, int]:
        """Block -> surviving version map; idempotent over the crash state."""
        image: dict[int, int] = {}
        for block, version in cs.durable:
            if block not in image or version > image[block]:
                image[block] = version
        return image
