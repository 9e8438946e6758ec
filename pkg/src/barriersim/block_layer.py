"""Order-preserving block layer: epoch IO scheduling and dispatch.

Two write attributes drive everything: ORDERED marks a request as
order-preserving, BARRIER (implies ORDERED) delimits an epoch. When a
barrier request enters the queue its flag is stripped, the epoch over the
queued order-preserving requests closes, and the queue stops accepting new
requests. Requests inside the closed epoch (and any orderless residents)
may leave in any order; whichever order-preserving member leaves last
carries the BARRIER flag out (barrier reassignment) and the queue reopens,
re-admitting deferred arrivals in their original order.

Dispatch maps flags to SCSI-style priorities: barrier writes go out as
*ordered* commands, flush-carrying commands as *head of queue*, everything
else as *simple*. The dispatcher is completion-driven; a dispatch against a
full device queue falls back to a retry daemon that re-issues after
retry_interval (3 ms by default).
"""

from __future__ import annotations

import random
from collections import deque
from typing import Callable, Optional

from .device import (SIMPLE, ORDERED_PRIO, HEAD_OF_QUEUE, StorageCommand,
                     StorageDevice)
from .engine import BLOCKED, Simulator, SimulationFault

ACCEPTED = "accepted"
DEFERRED = "deferred"

DATA = "data"
JD = "jd"
JC = "jc"
ORDERLESS = "orderless"


class Attr:
    """Write attribute bits (plain ints: these sit on the hot path)."""
    NONE = 0
    ORDERED = 1
    BARRIER = 2
    FLUSH = 4
    FUA = 8


class WriteRequest:
    __slots__ = ("id", "blocks", "versions", "attrs", "role", "issuer",
                 "issue_seq", "epoch_issue", "members", "_submitted")

    def __init__(self, rid: int, blocks: list[int], versions: list[int],
                 attrs: int, role: str, issuer: str, issue_seq: int):
        if not blocks:
            raise SimulationFault("write request with no blocks")
        if attrs & Attr.BARRIER and not attrs & Attr.ORDERED:
            raise SimulationFault("BARRIER implies ORDERED")
        self.id = rid
        self.blocks = blocks
        self.versions = versions
        self.attrs = attrs
        self.role = role
        self.issuer = issuer
        self.issue_seq = issue_seq
        self.epoch_issue: Optional[int] = None  # intent epoch, stamped at submit
        self.members = [rid]                     # request ids folded in by merges
        self._submitted = False

    @property
    def ordered(self) -> bool:
        return bool(self.attrs & Attr.ORDERED)

    def __repr__(self) -> str:
        return (f"WriteRequest({self.id}, {self.role}, blocks={self.blocks}, "
                f"attrs={self.attrs:#x})")


class Epoch:
    __slots__ = ("epoch_id", "members", "delimiter", "pending")

    def __init__(self, epoch_id: int, members: set[int], delimiter: int,
                 pending: list):
        self.epoch_id = epoch_id
        self.members = members
        self.delimiter = delimiter
        self.pending = pending       # queued ORDERED requests not yet dispatched


def merge_requests(a: WriteRequest, b: WriteRequest) -> Optional[WriteRequest]:
    """Merge b into a if adjacent in block space; None when refused.

    The merged request is order-preserving if either constituent is.
    ORDERED requests from different epochs never merge (that would collapse
    an epoch boundary). BARRIER never participates: the flag is stripped
    before queue insertion and travels by reassignment only.
    """
    if a.attrs & Attr.BARRIER or b.attrs & Attr.BARRIER:
        return None
    if a.ordered and b.ordered and a.epoch_issue != b.epoch_issue:
        return None
    if a.blocks[-1] + 1 == b.blocks[0]:
        first, second = a, b
    elif b.blocks[-1] + 1 == a.blocks[0]:
        first, second = b, a
    else:
        return None
    merged = WriteRequest(a.id, first.blocks + second.blocks,
                          first.versions + second.versions,
                          a.attrs | b.attrs,
                          a.role if a.ordered or not b.ordered else b.role,
                          a.issuer, min(a.issue_seq, b.issue_seq))
    merged.epoch_issue = a.epoch_issue if a.ordered else b.epoch_issue
    merged.members = a.members + b.members
    return merged


class IOScheduler:
    """Epoch-based scheduler with a FIFO + adjacent-merge inner discipline."""

    def __init__(self, sim: Simulator,
                 disable_epoch_blocking: bool = False,
                 disable_barrier_reassignment: bool = False,
                 discipline: str = "fifo", seed: int = 0,
                 trace: bool = False):
        if discipline not in ("fifo", "random"):
            raise SimulationFault(f"unknown discipline {discipline!r}")
        self.sim = sim
        self.discipline = discipline
        self.rng = random.Random(seed ^ 0x5EED)
        self.queue: deque[WriteRequest] = deque()
        self.accepting = True
        self.deferred: deque[WriteRequest] = deque()
        self.closed_epochs: deque[Epoch] = deque()
        self.epochs: list[Epoch] = []           # finalized, for inspection
        self._issue_seq = 0
        self._issue_barriers = 0                # intent epoch counter
        self._next_rid = 0
        self._by_front: dict[int, WriteRequest] = {}   # first block -> request
        self._by_back: dict[int, WriteRequest] = {}    # last block -> request
        self.disable_epoch_blocking = disable_epoch_blocking
        self.disable_barrier_reassignment = disable_barrier_reassignment
        self.trace_enabled = trace

    def make_request(self, blocks: list[int], versions: list[int], attrs: Attr,
                     role: str, issuer: str) -> WriteRequest:
        req = WriteRequest(self._next_rid, blocks, versions, attrs, role,
                           issuer, self._issue_seq)
        self._next_rid += 1
        self._issue_seq += 1
        return req

    def _index(self, req: WriteRequest) -> None:
        self._by_front[req.blocks[0]] = req
        self._by_back[req.blocks[-1]] = req

    def _unindex(self, req: WriteRequest) -> None:
        if self._by_front.get(req.blocks[0]) is req:
            del self._by_front[req.blocks[0]]
        if self._by_back.get(req.blocks[-1]) is req:
            del self._by_back[req.blocks[-1]]

    def submit(self, req: WriteRequest) -> str:
        if not req._submitted:
            req._submitted = True
            if req.ordered:
                req.epoch_issue = self._issue_barriers
                if req.attrs & Attr.BARRIER:
                    self._issue_barriers += 1
        if not self.accepting:
            self.deferred.append(req)
            return DEFERRED
        if req.attrs & Attr.BARRIER:
            req.attrs &= ~Attr.BARRIER          # stripped; reassigned on exit
            self.queue.append(req)
            self._index(req)
            members = [q for q in self.queue if q.ordered]
            epoch = Epoch(len(self.epochs) + len(self.closed_epochs),
                          set().union(*(set(q.members) for q in members)),
                          req.id, members)
            self.closed_epochs.append(epoch)
            if not self.disable_epoch_blocking:
                self.accepting = False
            return ACCEPTED
        neighbour = self._by_back.get(req.blocks[0] - 1)
        if neighbour is None:
            neighbour = self._by_front.get(req.blocks[-1] + 1)
        if neighbour is not None:
            merged = merge_requests(neighbour, req)
            if merged is not None:
                idx = self.queue.index(neighbour)
                self.queue[idx] = merged
                self._unindex(neighbour)
                self._index(merged)
                for ep in self.closed_epochs:
                    if neighbour in ep.pending:
                        ep.pending[ep.pending.index(neighbour)] = merged
                        ep.members.update(merged.members)
                return ACCEPTED
        self.queue.append(req)
        self._index(req)
        return ACCEPTED

    def schedule_next(self, select: Optional[int] = None) -> Optional[WriteRequest]:
        """Pop the next request per discipline; FIFO unless a test selects.

        On the exit of a closed epoch's last order-preserving member, the
        BARRIER flag is reassigned to it and the queue reopens.
        """
        if not self.queue:
            return None
        if select is not None:
            req = next(q for q in self.queue if q.id == select)
            self.queue.remove(req)
        elif self.discipline == "random" and len(self.queue) > 1:
            req = self.queue[self.rng.randrange(len(self.queue))]
            self.queue.remove(req)
        else:
            req = self.queue.popleft()
        self._unindex(req)
        if req.ordered and self.closed_epochs:
            epoch = self.closed_epochs[0]
            if req in epoch.pending:
                epoch.pending.remove(req)
                if not epoch.pending:
                    if not self.disable_barrier_reassignment:
                        req.attrs |= Attr.BARRIER
                    self.closed_epochs.popleft()
                    self.epochs.append(epoch)
                    self._reopen()
        return req

    def _reopen(self) -> None:
        if self.closed_epochs and not self.disable_epoch_blocking:
            return
        self.accepting = True
        # re-admit deferred arrivals in order; a deferred barrier re-closes
        # the queue and the remainder stays deferred
        while self.deferred and self.accepting:
            self.submit(self.deferred.popleft())


class Dispatcher:
    """Moves scheduled requests onto the device; completion-driven.

    Flush commands bypass the request queue but wait their turn for a free
    device slot in a front queue. A direct dispatch() against a full device
    goes to the retry daemon, which re-issues after retry_interval and gives
    up (simulation fault) after max_retries attempts.
    """

    def __init__(self, sim: Simulator, scheduler: IOScheduler,
                 device: StorageDevice, retry_interval: int = 3000,
                 max_retries: int = 1000, trace: bool = False):
        self.sim = sim
        self.scheduler = scheduler
        self.device = device
        self.retry_interval = retry_interval
        self.max_retries = max_retries
        self.trace_enabled = trace
        self.dispatch_trace: list[tuple] = []   # (t, req_id, role, attrs, prio, barrier, epoch)
        self._dispatch_seq = 0
        self._barriers_out = 0
        self._pending_flush: deque[StorageCommand] = deque()
        self._retry_queue: deque[list] = deque()   # [cmd, attempts, due]
        self._retry_actor = sim.spawn("retry-daemon", self._retry_loop(),
                                      daemon=True)
        device.on_complete(lambda cmd: self.pump())

    # -- command construction ---------------------------------------------

    def _command_for(self, req: WriteRequest) -> StorageCommand:
        if req.attrs & Attr.BARRIER:
            prio = ORDERED_PRIO
        elif req.attrs & Attr.FLUSH:
            prio = HEAD_OF_QUEUE
        else:
            prio = SIMPLE
        return StorageCommand(req=req, priority=prio,
                              barrier=bool(req.attrs & Attr.BARRIER),
                              flush=bool(req.attrs & Attr.FLUSH),
                              fua=bool(req.attrs & Attr.FUA),
                              enqueue_time=self.sim.now())

    def flush_command(self, waiter_cb: Optional[Callable] = None) -> StorageCommand:
        return StorageCommand(req=None, priority=HEAD_OF_QUEUE, barrier=False,
                              flush=True, fua=False,
                              enqueue_time=self.sim.now(), on_done=waiter_cb)

    # -- submission paths ---------------------------------------------------

    def submit_request(self, req: WriteRequest) -> str:
        res = self.scheduler.submit(req)
        self.pump()
        return res

    def submit_batch(self, reqs: list[WriteRequest]) -> None:
        """Submit several requests in one pass (merges happen in-queue)."""
        for req in reqs:
            self.scheduler.submit(req)
        self.pump()

    def submit_flush(self, waiter_cb: Optional[Callable] = None) -> None:
        self._pending_flush.append(self.flush_command(waiter_cb))
        self.pump()

    def pump(self) -> None:
        while self.device.has_room():
            if self._pending_flush:
                cmd = self._pending_flush.popleft()
                cmd.enqueue_time = self.sim.now()
                self._enqueue(cmd)
            elif self.scheduler.queue:
                req = self.scheduler.schedule_next()
                self._enqueue(self._command_for(req))
            else:
                return

    def dispatch(self, cmd: StorageCommand) -> str:
        """Dispatch one command; Retried means the retry daemon owns it now."""
        if self.device.enqueue(cmd) == "accepted":
            self._record(cmd)
            return "dispatched"
        self._retry_queue.append([cmd, 0, self.sim.now() + self.retry_interval])
        if self._retry_actor.state == BLOCKED:
            self.sim.wake(self._retry_actor)
        return "retried"

    def _enqueue(self, cmd: StorageCommand) -> None:
        if self.device.enqueue(cmd) != "accepted":
            raise SimulationFault("device rejected command despite has_room()")
        self._record(cmd)

    def _record(self, cmd: StorageCommand) -> None:
        cmd.dispatch_seq = self._dispatch_seq
        self._dispatch_seq += 1
        if self.trace_enabled and cmd.req is not None:
            self.dispatch_trace.append(
                (self.sim.now(), cmd.req.id, cmd.req.role, cmd.req.attrs,
                 cmd.priority, cmd.barrier, self._barriers_out))
        if cmd.barrier:
            self._barriers_out += 1

    def _retry_loop(self):
        while True:
            if not self._retry_queue:
                yield ("block", "retry-idle")
                continue
            cmd, attempts, due = self._retry_queue.popleft()
            if due > self.sim.now():
                yield ("delay", due - self.sim.now())
            if self.device.enqueue(cmd) == "accepted":
                self._record(cmd)
                continue
            attempts += 1
            if attempts >= self.max_retries:
                raise SimulationFault(
                    f"dispatch retry limit ({self.max_retries}) exhausted")
            self._retry_queue.append(
                [cmd, attempts, self.sim.now() + self.retry_interval])
