"""Filesystem layer: legacy ordered-mode journaling and dual-mode journaling.

Four regimes share one implementation:

  EXT4_DR   transfer-and-flush. fsync dispatches D, waits for its DMA,
            then the JBD actor writes the journal with the commit block
            carrying FLUSH|FUA and waits for it to become durable. The
            caller wakes twice.
  EXT4_OD   the no-barrier mount: same path minus every flush. Unsafe by
            design; used for Wait-On-Transfer baselines.
  BFS_DR    dual-mode journaling. fsync dispatches D order-preserving and
            blocks once; a commit actor dispatches JD and JC (both
            order-preserving barrier writes, so {D, JD} and {JC} form
            consecutive epochs) and a flush actor issues one flush per
            durable transaction and wakes the caller.
  BFS_OD    ordering-only calls. fbarrier returns once the commit actor
            has dispatched JC; fdatabarrier never blocks at all and the
            flush actor retires its transactions without flushing.

A buffer page belongs to at most one transaction. Writers hitting a page
owned by a committing transaction park on the running transaction's
conflict-page list; the flush actor moves resolved pages into the running
transaction and the commit actor seals only when the list is empty.

fsync degrades to fdatasync when a write did not dirty the inode, which
happens whenever the kernel-timer epoch (timer_tick) has not advanced.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from .block_layer import Attr, DATA, JD, JC, Dispatcher, IOScheduler
from .engine import BLOCKED, Actor, Simulator
from .profiles import RunConfig

RUNNING = "running"
COMMITTING = "committing"
DURABLE = "durable"
RETIRED = "retired"

WRITE_CPU_US = 1        # page-cache copy cost of a buffered 4K write()

META_BASE = 1 << 40
DIR_BASE = 1 << 41
JOURNAL_BASE = 1 << 42
FILE_SPAN = 1 << 22


class BufferPage:
    __slots__ = ("block", "version", "dirty", "owner", "waiters")

    def __init__(self, block: int):
        self.block = block
        self.version = 0
        self.dirty = False
        self.owner: Optional[JournalTransaction] = None
        self.waiters: list[Actor] = []


class JournalTransaction:
    __slots__ = ("txn_id", "state", "pages", "conflict_pages", "data_writes",
                 "page_images", "jd_blocks", "jc_block", "commit_requested",
                 "force", "durable_required", "waiters", "dispatch_waiters",
                 "jc_req_id", "jc_transferred", "committed_at", "durable_at")

    def __init__(self, txn_id: int):
        self.txn_id = txn_id
        self.state = RUNNING
        self.pages: set[BufferPage] = set()
        self.conflict_pages: set[BufferPage] = set()
        self.data_writes: list[tuple[int, int]] = []
        self.page_images: list[tuple[int, int]] = []
        self.jd_blocks: list[int] = []
        self.jc_block = -1
        self.commit_requested = False
        self.force = False
        self.durable_required = False
        self.waiters: list[Actor] = []
        self.dispatch_waiters: list[Actor] = []
        self.jc_req_id = -1
        self.jc_transferred = False
        self.committed_at = -1
        self.durable_at = -1


class File:
    __slots__ = ("file_id", "base", "inode_block", "dir_block", "dirty_data",
                 "meta_dirty", "stamp_epoch", "next_alloc",
                 "dispatched_ordered")

    def __init__(self, file_id: int, dir_id: Optional[int] = None):
        self.file_id = file_id
        self.base = file_id * FILE_SPAN
        self.inode_block = META_BASE + file_id
        self.dir_block = None if dir_id is None else DIR_BASE + dir_id
        self.dirty_data: dict[int, int] = {}
        self.meta_dirty = False
        self.stamp_epoch = -1
        self.next_alloc = 0
        self.dispatched_ordered: list[tuple[int, int]] = []


class SyscallRecord:
    __slots__ = ("op", "file_id", "t_start", "t_end", "wakeups", "journaled",
                 "txn_id", "data_writes", "pre_len", "durable_claim",
                 "claimed")

    def __init__(self, op, file_id, t_start, t_end, wakeups, journaled,
                 txn_id, data_writes, pre_len, durable_claim, claimed):
        self.op = op
        self.file_id = file_id
        self.t_start = t_start
        self.t_end = t_end
        self.wakeups = wakeups
        self.journaled = journaled
        self.txn_id = txn_id
        self.data_writes = data_writes
        # barrier calls: length of the file's ordered-dispatch history at
        # call end; the checker slices pre/post sets from the final history
        self.pre_len = pre_len
        self.durable_claim = durable_claim
        self.claimed = claimed


class Filesystem:
    def __init__(self, sim: Simulator, scheduler: IOScheduler,
                 dispatcher: Dispatcher, cfg: RunConfig):
        self.sim = sim
        self.scheduler = scheduler
        self.dispatcher = dispatcher
        self.cfg = cfg
        self.regime = cfg.regime
        self.t_d = cfg.device.t_d
        self.timer_tick = cfg.timer_tick

        self.files: dict[int, File] = {}
        self.pages: dict[int, BufferPage] = {}
        self._next_journal_block = JOURNAL_BASE
        self._txn_counter = 0
        self.running = JournalTransaction(self._next_txn_id())
        self.committing: deque[JournalTransaction] = deque()
        self.txns: list[JournalTransaction] = []     # every sealed transaction
        self.commit_times: list[int] = []
        self.syscalls: list[SyscallRecord] = []
        self.flushes_issued = 0

        self._completed_reqs: set[int] = set()
        self._xfer_waiters: dict[int, list[dict]] = {}
        self._jc_watch: dict[int, JournalTransaction] = {}

        dispatcher.device.on_complete(self._on_device_complete)

        if self.regime.startswith("BFS"):
            self.commit_actor = sim.spawn("commit-thread", self._commit_loop(),
                                          daemon=True)
            self.flush_actor = sim.spawn("flush-thread", self._flush_loop(),
                                         daemon=True)
        else:
            self.jbd_actor = sim.spawn("jbd-thread", self._jbd_loop(),
                                       daemon=True)

    # -- plumbing -----------------------------------------------------------

    def _next_txn_id(self) -> int:
        self._txn_counter += 1
        return self._txn_counter

    def create_file(self, file_id: int, dir_id: Optional[int] = None) -> File:
        f = File(file_id, dir_id)
        self.files[file_id] = f
        return f

    def _page(self, block: int) -> BufferPage:
        page = self.pages.get(block)
        if page is None:
            page = BufferPage(block)
            self.pages[block] = page
        return page

    def _on_device_complete(self, cmd) -> None:
        if cmd.req is None:
            return
        for rid in cmd.req.members:
            self._completed_reqs.add(rid)
            for waiter in self._xfer_waiters.pop(rid, ()):
                waiter["pending"].discard(rid)
                if not waiter["pending"] and not waiter["woken"]:
                    waiter["woken"] = True
                    self.sim.wake(waiter["actor"])
            txn = self._jc_watch.pop(rid, None)
            if txn is not None:
                txn.jc_transferred = True
                if (self.regime.startswith("BFS")
                        and self.flush_actor.state == BLOCKED
                        and self.flush_actor.blocked_reason == "flush-idle"):
                    self.sim.wake(self.flush_actor)

    def _wait_transferred(self, actor: Actor, req_ids):
        pending = {r for r in req_ids if r not in self._completed_reqs}
        if not pending:
            return
        waiter = {"pending": pending, "actor": actor, "woken": False}
        for rid in pending:
            self._xfer_waiters.setdefault(rid, []).append(waiter)
        yield ("block", "wait-transfer")

    def _flush_and_wait(self, actor: Actor):
        self.flushes_issued += 1
        token = {"done": False}

        def on_done(cmd):
            token["done"] = True
            if actor.state == BLOCKED and actor.blocked_reason == "wait-flush":
                self.sim.wake(actor)

        self.dispatcher.submit_flush(on_done)
        if not token["done"]:
            yield ("block", "wait-flush")

    # -- page / transaction machinery --------------------------------------

    def insert_page(self, txn: JournalTransaction, page: BufferPage) -> str:
        """Insert a metadata page into the running transaction.

        A page owned by a committing transaction yields Conflicted: the
        page joins the running transaction's conflict-page list and the
        writer must block until the owner is durable.
        """
        if page.owner is None or page.owner is txn:
            page.owner = txn
            txn.pages.add(page)
            return "inserted"
        txn.conflict_pages.add(page)
        return "conflicted"

    def _insert_page_blocking(self, actor: Actor, page: BufferPage):
        while True:
            if self.insert_page(self.running, page) == "inserted":
                return
            page.waiters.append(actor)
            yield ("block", "page-conflict")

    def touch(self, actor: Actor, file: File):
        """Metadata-only update (utimes-style); joins the running txn."""
        file.meta_dirty = True
        inode = self._page(file.inode_block)
        inode.version += 1
        yield from self._insert_page_blocking(actor, inode)

    def write(self, actor: Actor, file: File, offset: int,
              allocating: bool = False):
        """Dirty one 4K page of `file`; may block on a page conflict."""
        if allocating:
            offset = file.next_alloc
            file.next_alloc += 1
        block = file.base + offset
        page = self._page(block)
        page.version += 1
        page.dirty = True
        file.dirty_data[block] = page.version
        tick = self.sim.now() // self.timer_tick
        if allocating or tick != file.stamp_epoch:
            file.stamp_epoch = tick
            file.meta_dirty = True
            inode = self._page(file.inode_block)
            inode.version += 1
            yield from self._insert_page_blocking(actor, inode)
            if allocating and file.dir_block is not None:
                dpage = self._page(file.dir_block)
                dpage.version += 1
                yield from self._insert_page_blocking(actor, dpage)
        self._wake_writeback()

    def _dispatch_data(self, file: File, ordered: bool, barrier_last: bool):
        """One submission pass for the file's dirty pages (caller pays t_d)."""
        if not file.dirty_data:
            return [], []
        items = sorted(file.dirty_data.items())
        file.dirty_data = {}
        attrs = Attr.ORDERED if ordered else Attr.NONE
        reqs = [self.scheduler.make_request([b], [v], attrs, DATA, "app")
                for b, v in items]
        if barrier_last:
            reqs[-1].attrs |= Attr.BARRIER
        if ordered:
            file.dispatched_ordered.extend(items)
        self.dispatcher.submit_batch(reqs)
        return reqs, items

    def _request_commit(self, data, durable: bool, force: bool = False,
                        waiter: Optional[Actor] = None,
                        dispatch_waiter: Optional[Actor] = None
                        ) -> JournalTransaction:
        txn = self.running
        txn.data_writes.extend(data)
        txn.commit_requested = True
        txn.force = txn.force or force
        if durable:
            txn.durable_required = True
        if waiter is not None:
            txn.waiters.append(waiter)
        if dispatch_waiter is not None:
            txn.dispatch_waiters.append(dispatch_waiter)
        self._kick_journal()
        return txn

    def _kick_journal(self) -> None:
        actor = (self.commit_actor if self.regime.startswith("BFS")
                 else self.jbd_actor)
        idle = "commit-idle" if self.regime.startswith("BFS") else "jbd-idle"
        if actor.state == BLOCKED and actor.blocked_reason == idle:
            self.sim.wake(actor)

    def _seal(self) -> JournalTransaction:
        txn = self.running
        txn.state = COMMITTING
        txn.page_images = sorted((p.block, p.version) for p in txn.pages)
        n_logs = (len(txn.pages) + 3) // 4
        txn.jd_blocks = [self._next_journal_block + i for i in range(1 + n_logs)]
        txn.jc_block = self._next_journal_block + 1 + n_logs
        self._next_journal_block += 2 + n_logs
        self.running = JournalTransaction(self._next_txn_id())
        self.txns.append(txn)
        return txn

    def _release(self, txn: JournalTransaction) -> None:
        """Free the transaction's pages and resolve conflicts into running."""
        for page in txn.pages:
            if page.owner is txn:
                page.owner = None
        run = self.running
        for page in [p for p in run.conflict_pages if p.owner is None]:
            run.conflict_pages.discard(page)
            page.owner = run
            run.pages.add(page)
            for writer in page.waiters:
                self.sim.wake(writer)
            page.waiters.clear()
        if run.commit_requested and not run.conflict_pages:
            self._kick_journal()

    # -- journal actors ------------------------------------------------------

    def _commit_loop(self):
        """BFS commit actor: dispatches JD and JC, never waits on the device."""
        while True:
            txn = self.running
            if txn.commit_requested and not txn.conflict_pages:
                sealed = self._seal()
                yield ("delay", self.t_d)
                jd = self.scheduler.make_request(
                    sealed.jd_blocks, [1] * len(sealed.jd_blocks),
                    Attr.ORDERED | Attr.BARRIER, JD, "commit-thread")
                jc = self.scheduler.make_request(
                    [sealed.jc_block], [1],
                    Attr.ORDERED | Attr.BARRIER, JC, "commit-thread")
                sealed.jc_req_id = jc.id
                self._jc_watch[jc.id] = sealed
                self.dispatcher.submit_batch([jd, jc])
                sealed.committed_at = self.sim.now()
                self.commit_times.append(sealed.committed_at)
                self.committing.append(sealed)
                for w in sealed.dispatch_waiters:
                    self.sim.wake(w)
                sealed.dispatch_waiters = []
            else:
                yield ("block", "commit-idle")

    def _flush_loop(self):
        """BFS flush actor: one flush per durable transaction, none for
        ordering-only transactions; resolves page conflicts afterwards."""
        while True:
            if self.committing and self.committing[0].jc_transferred:
                txn = self.committing.popleft()
                if txn.durable_required:
                    yield ("delay", self.t_d)
                    yield from self._flush_and_wait(self.flush_actor)
                    txn.state = DURABLE
                    txn.durable_at = self.sim.now()
                else:
                    txn.state = RETIRED
                self._release(txn)
                for w in txn.waiters:
                    self.sim.wake(w)
                txn.waiters = []
            else:
                yield ("block", "flush-idle")

    def _jbd_loop(self):
        """EXT4 JBD actor: one transaction in flight, transfer-and-flush."""
        durable_regime = self.regime == "EXT4_DR"
        while True:
            txn = self.running
            if txn.commit_requested and not txn.conflict_pages:
                sealed = self._seal()
                yield ("delay", self.t_d)
                jc_attrs = Attr.NONE
                if durable_regime:
                    jc_attrs = Attr.FUA
                    if not self.cfg.disable_ext4_preflush:
                        jc_attrs |= Attr.FLUSH
                jd = self.scheduler.make_request(
                    sealed.jd_blocks, [1] * len(sealed.jd_blocks),
                    Attr.NONE, JD, "jbd-thread")
                jc = self.scheduler.make_request(
                    [sealed.jc_block], [1], jc_attrs, JC, "jbd-thread")
                sealed.jc_req_id = jc.id
                self.dispatcher.submit_batch([jd, jc])
                sealed.committed_at = self.sim.now()
                self.commit_times.append(sealed.committed_at)
                self.committing.append(sealed)
                if durable_regime:
                    self.flushes_issued += 1
                yield from self._wait_transferred(self.jbd_actor,
                                                  {jd.id, jc.id})
                sealed.jc_transferred = True
                if durable_regime:
                    txn_state, sealed.durable_at = DURABLE, self.sim.now()
                else:
                    txn_state = RETIRED
                sealed.state = txn_state
                self.committing.remove(sealed)
                self._release(sealed)
                for w in sealed.waiters:
                    self.sim.wake(w)
                sealed.waiters = []
            else:
                yield ("block", "jbd-idle")

    # -- syscalls -------------------------------------------------------------

    def _record(self, op, file, t_start, wakeups0, actor, journaled, txn,
                writes, pre_len=None, durable_claim=False):
        claimed = tuple(writes)
        if journaled and txn is not None:
            claimed = claimed + tuple((b, 1) for b in txn.jd_blocks)
            claimed = claimed + ((txn.jc_block, 1),)
        rec = SyscallRecord(op, file.file_id if file else -1, t_start,
                            self.sim.now(), actor.wakeups - wakeups0,
                            journaled, txn.txn_id if txn else -1,
                            tuple(writes), pre_len, durable_claim, claimed)
        self.syscalls.append(rec)
        return rec

    def fsync(self, actor: Actor, file: File):
        """Durable sync; degrades to fdatasync when no metadata is dirty."""
        if not file.meta_dirty:
            yield from self.fdatasync(actor, file)
            return
        t0, w0 = self.sim.now(), actor.wakeups
        ordered = self.regime.startswith("BFS")
        if file.dirty_data:
            yield ("delay", self.t_d)
        reqs, writes = self._dispatch_data(file, ordered=ordered,
                                           barrier_last=False)
        file.meta_dirty = False
        if self.regime.startswith("EXT4") and reqs:
            yield from self._wait_transferred(actor, {r.id for r in reqs})
        txn = self._request_commit(writes, durable=True, waiter=actor)
        yield ("block", "wait-journal")
        self._record("fsync", file, t0, w0, actor, True, txn, writes,
                     durable_claim=self.regime.endswith("_DR"))

    def fdatasync(self, actor: Actor, file: File):
        t0, w0 = self.sim.now(), actor.wakeups
        ordered = self.regime.startswith("BFS")
        if not file.dirty_data and ordered:
            # no dirty pages: force a journal commit to delimit an epoch
            txn = self._request_commit([], durable=True, force=True,
                                       waiter=actor)
            yield ("block", "wait-journal")
            self._record("fdatasync", file, t0, w0, actor, True, txn, (),
                         durable_claim=self.regime.endswith("_DR"))
            return
        if file.dirty_data:
            yield ("delay", self.t_d)
        reqs, writes = self._dispatch_data(file, ordered=ordered,
                                           barrier_last=ordered)
        if reqs:
            yield from self._wait_transferred(actor, {r.id for r in reqs})
        if self.regime != "EXT4_OD":
            yield ("delay", self.t_d)
            yield from self._flush_and_wait(actor)
        self._record("fdatasync", file, t0, w0, actor, False, None, writes,
                     durable_claim=self.regime != "EXT4_OD")

    def fbarrier(self, actor: Actor, file: File):
        """Ordering-only fsync (BFS): returns once JC is dispatched."""
        if not file.meta_dirty:
            yield from self.fdatabarrier(actor, file)
            return
        t0, w0 = self.sim.now(), actor.wakeups
        if file.dirty_data:
            yield ("delay", self.t_d)
        reqs, writes = self._dispatch_data(file, ordered=True,
                                           barrier_last=False)
        file.meta_dirty = False
        txn = self._request_commit(writes, durable=False,
                                   dispatch_waiter=actor)
        yield ("block", "wait-commit-dispatch")
        self._record("fbarrier", file, t0, w0, actor, True, txn, writes,
                     pre_len=len(file.dispatched_ordered))

    def fdatabarrier(self, actor: Actor, file: File):
        """Storage-order fence: never blocks, never flushes."""
        t0, w0 = self.sim.now(), actor.wakeups
        if file.dirty_data:
            yield ("delay", self.t_d)
            reqs, writes = self._dispatch_data(file, ordered=True,
                                               barrier_last=True)
        else:
            writes = []
            self._request_commit([], durable=False, force=True)
        self._record("fdatabarrier", file, t0, w0, actor, False, None, writes,
                     pre_len=len(file.dispatched_ordered))

    # -- buffered path --------------------------------------------------------

    def enable_writeback(self, interval: int = 1000) -> None:
        self._wb_interval = interval
        self.writeback_actor = self.sim.spawn("writeback", self._wb_loop(),
                                              daemon=True)

    def _wake_writeback(self) -> None:
        actor = getattr(self, "writeback_actor", None)
        if (actor is not None and actor.state == BLOCKED
                and actor.blocked_reason == "wb-idle"):
            self.sim.wake(actor)

    def _wb_loop(self):
        while True:
            dirty = []
            for f in self.files.values():
                if f.dirty_data:
                    dirty.extend(sorted(f.dirty_data.items()))
                    f.dirty_data = {}
            if dirty:
                yield ("delay", self.t_d)
                dirty.sort()
                reqs = [self.scheduler.make_request([b], [v], Attr.NONE, DATA,
                                                    "writeback")
                        for b, v in dirty]
                self.dispatcher.submit_batch(reqs)
                yield ("delay", self._wb_interval)
            else:
                yield ("block", "wb-idle")
