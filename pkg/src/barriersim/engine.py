"""Deterministic discrete-event kernel with simulated actors.

Time is integer microseconds. Events are totally ordered by (fire_at, seq)
where seq is the insertion counter, so equal-time events run in scheduling
order and a fixed workload replays bit-for-bit.

Actors are generator coroutines. An actor yields:

    ("delay", us)     -- consume simulated CPU time, resume at now+us
    ("block", why)    -- suspend until some event handler calls wake()

A wake charges the context-switch latency t_cs to the woken actor: the
actor resumes at wake-time + t_cs, and its wakeups / voluntary_switches
counters advance by one. Double-block and double-wake are simulation bugs
and raise SimulationFault.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from typing import Callable, Generator, Iterable, Optional

SimTime = int

RUNNABLE = "runnable"
BLOCKED = "blocked"
TERMINATED = "terminated"

ActorGen = Generator[tuple, None, None]


class SimulationFault(RuntimeError):
    """Internal inconsistency in the simulation (a bug, not a modeled fault)."""


class Actor:
    __slots__ = ("name", "state", "wakeups", "voluntary_switches",
                 "blocked_reason", "daemon", "_gen", "_resume")

    def __init__(self, name: str, gen: ActorGen, daemon: bool = False):
        self.name = name
        self.state = RUNNABLE
        self.wakeups = 0
        self.voluntary_switches = 0
        self.blocked_reason: Optional[str] = None
        self.daemon = daemon
        self._gen = gen
        self._resume = None

    def __repr__(self) -> str:
        return f"Actor({self.name}, {self.state})"


class Simulator:
    """Single-threaded event loop; owns the clock and all actors."""

    def __init__(self, t_cs: int = 160, trace: bool = False):
        self.t_cs = t_cs
        self._now: SimTime = 0
        self._heap: list = []          # (fire_at, seq, label, actor_name, fn)
        self._seq = 0
        self._processed = 0
        self.actors: dict[str, Actor] = {}
        self.trace_enabled = trace
        self.trace: list[tuple] = []   # (t, seq, actor, action)

    # -- clock and event queue -------------------------------------------

    def now(self) -> SimTime:
        return self._now

    def schedule(self, at: SimTime, fn: Callable[[], None],
                 label: str = "", actor: str = "") -> int:
        """Schedule fn at absolute time `at`; returns the event id."""
        if at < self._now:
            raise SimulationFault(
                f"causality violation: schedule at {at} < now {self._now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (at, seq, label, actor, fn))
        return seq

    def schedule_after(self, delay: SimTime, fn: Callable[[], None],
                       label: str = "", actor: str = "") -> int:
        return self.schedule(self._now + delay, fn, label, actor)

    def _pop_run(self) -> None:
        at, seq, label, actor, fn = heapq.heappop(self._heap)
        self._now = at
        self._processed += 1
        if self.trace_enabled:
            self.trace.append((at, seq, actor, label))
        fn()

    def run_until(self, limit: SimTime) -> int:
        """Process every event with fire_at <= limit; clock ends at limit."""
        before = self._processed
        while self._heap and self._heap[0][0] <= limit:
            self._pop_run()
        if limit > self._now:
            self._now = limit
        return self._processed - before

    def run(self) -> int:
        """Drain the event queue completely."""
        before = self._processed
        while self._heap:
            self._pop_run()
        return self._processed - before

    def pending(self) -> int:
        return len(self._heap)

    # -- actors ------------------------------------------------------------

    def spawn(self, name: str, gen: ActorGen, daemon: bool = False) -> Actor:
        if name in self.actors:
            raise SimulationFault(f"duplicate actor name {name!r}")
        actor = Actor(name, gen, daemon=daemon)
        actor._resume = lambda: self._step(actor)
        self.actors[name] = actor
        self.schedule(self._now, actor._resume, label="spawn", actor=name)
        return actor

    def _step(self, actor: Actor) -> None:
        if actor.state != RUNNABLE:
            raise SimulationFault(f"stepping non-runnable actor {actor}")
        try:
            directive = next(actor._gen)
        except StopIteration:
            actor.state = TERMINATED
            return
        kind = directive[0]
        if kind == "delay":
            self.schedule_after(directive[1], actor._resume,
                                label="resume", actor=actor.name)
        elif kind == "block":
            actor.state = BLOCKED
            actor.blocked_reason = directive[1]
        else:
            raise SimulationFault(f"unknown actor directive {directive!r}")

    def wake(self, actor: Actor) -> None:
        """Wake a blocked actor; it resumes after t_cs (charged to it)."""
        if actor.state != BLOCKED:
            raise SimulationFault(f"wake of non-blocked actor {actor}")
        actor.state = RUNNABLE
        actor.blocked_reason = None
        actor.wakeups += 1
        actor.voluntary_switches += 1
        self.schedule_after(self.t_cs, actor._resume,
                            label="wake", actor=actor.name)

    def blocked_actors(self) -> list[Actor]:
        """Non-daemon actors still blocked: a deadlock diagnostic after run()."""
        return [a for a in self.actors.values()
                if a.state == BLOCKED and not a.daemon]

    # -- trace -------------------------------------------------------------

    def trace_hash(self) -> str:
        h = hashlib.sha256()
        for rec in self.trace:
            h.update(repr(rec).encode())
        return h.hexdigest()

    def write_trace_jsonl(self, path: str) -> None:
        with open(path, "w") as f:
            for t, seq, actor, action in self.trace:
                f.write(json.dumps(
                    {"t": t, "seq": seq, "actor": actor, "action": action}) + "\n")


def drain_ok(sim: Simulator) -> None:
    """Run to completion and fail loudly on a deadlocked (blocked) actor."""
    sim.run()
    stuck = sim.blocked_actors()
    if stuck:
        detail = ", ".join(f"{a.name}({a.blocked_reason})" for a in stuck)
        raise SimulationFault(f"deadlock: blocked actors at end of run: {detail}")


def all_wakeups(sim: Simulator, names: Iterable[str]) -> int:
    return sum(sim.actors[n].wakeups for n in names)
