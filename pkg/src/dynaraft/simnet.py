"""Deterministic discrete-event network simulator.

Time is integer microseconds on a single global axis. Each server may
carry a constant clock offset; the simulator converts between global
and server-local time at every boundary, so the consensus code only
ever sees its own clock.

Links are symmetric per pair and follow piecewise-constant profiles of
RTT, loss rate, and jitter. Two channel classes:

- lossy: datagram-like; Bernoulli drop, optional duplication,
  independent per-message delays (reordering possible).
- reliable: stream-like; never dropped, per-direction FIFO enforced by
  pushing each arrival at least 1us after the previous one.

Every Record action a server emits is timestamped with global time and
fed to an EventTrace, which hashes all events (for reproducibility
checks) and stores a configurable subset for analysis.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable

from .messages import (
    ChannelClass,
    CrashInjected,
    MessageReceived,
    Record,
    RecoverInjected,
    Send,
    SetTimer,
    TimerFired,
)
from .raft import Role


@dataclass(frozen=True)
class Segment:
    """Link conditions from start_us until the next segment begins."""

    start_us: int
    rtt_us: int
    loss_rate: float = 0.0
    jitter_us: int = 0

    def __post_init__(self) -> None:
        if self.start_us < 0:
            raise ValueError("segment start must be >= 0")
        if self.rtt_us <= 0:
            raise ValueError("rtt must be positive")
        if not (0.0 <= self.loss_rate < 1.0):
            raise ValueError("loss_rate must lie in [0, 1)")
        if self.jitter_us < 0:
            raise ValueError("jitter must be >= 0")


class LinkProfile:
    """Piecewise-constant link conditions over global time."""

    def __init__(self, segments: list[Segment]) -> None:
        segs = sorted(segments, key=lambda s: s.start_us)
        if not segs:
            raise ValueError("profile needs at least one segment")
        if segs[0].start_us != 0:
            raise ValueError("first segment must start at 0")
        starts = [s.start_us for s in segs]
        if len(set(starts)) != len(starts):
            raise ValueError("segment starts must be distinct")
        self._segments = segs
        self._starts = starts

    @classmethod
    def constant(cls, rtt_us: int, loss_rate: float = 0.0, jitter_us: int = 0) -> "LinkProfile":
        return cls([Segment(0, rtt_us, loss_rate, jitter_us)])

    def at(self, t_us: int) -> Segment:
        return self._segments[bisect_right(self._starts, t_us) - 1]

    @property
    def segments(self) -> list[Segment]:
        return list(self._segments)


Observer = Callable[[int, int, str, tuple], None]


class EventTrace:
    """Collects (t, server, kind, payload) records.

    Every record updates a running sha256, so two runs are identical
    iff their digests match, independent of what is stored. Storage is
    filtered by kind, and kinds in dedup_kinds keep only changes per
    server (useful for slowly-varying tuning snapshots). Observers see
    every record before filtering.
    """

    def __init__(
        self,
        store_kinds: set[str] | frozenset[str] | None = None,
        dedup_kinds: frozenset[str] = frozenset({"tune"}),
        observers: tuple[Observer, ...] = (),
    ) -> None:
        self.events: list[tuple[int, int, str, tuple]] = []
        self._store = None if store_kinds is None else frozenset(store_kinds)
        self._dedup = frozenset(dedup_kinds)
        self._last: dict[tuple[int, str], tuple] = {}
        self._hash = hashlib.sha256()
        self.observers: list[Observer] = list(observers)
        self.count = 0

    def add(self, t_us: int, server: int, kind: str, payload: tuple) -> None:
        self._hash.update(f"{t_us}|{server}|{kind}|{payload!r}\n".encode())
        self.count += 1
        for ob in self.observers:
            ob(t_us, server, kind, payload)
        if self._store is not None and kind not in self._store:
            return
        if kind in self._dedup:
            key = (server, kind)
            if self._last.get(key) == payload:
                return
            self._last[key] = payload
        self.events.append((t_us, server, kind, payload))

    def digest(self) -> str:
        return self._hash.hexdigest()

    def by_kind(self, kind: str) -> list[tuple[int, int, str, tuple]]:
        return [e for e in self.events if e[2] == kind]


class Simulation:
    """Event loop wiring servers together through simulated links."""

    def __init__(
        self,
        servers: dict,
        default_link: LinkProfile,
        overrides: dict[tuple[int, int], LinkProfile] | None = None,
        trace: EventTrace | None = None,
        seed: int = 0,
        clock_offsets_us: dict[int, int] | None = None,
        duplication_rate: float = 0.0,
    ) -> None:
        self.servers = servers
        self.trace = trace if trace is not None else EventTrace()
        self.rng = random.Random(seed)
        self.duplication_rate = duplication_rate
        self.offsets = {sid: 0 for sid in servers}
        if clock_offsets_us:
            for sid, off in clock_offsets_us.items():
                if sid not in self.offsets:
                    raise ValueError(f"offset for unknown server {sid}")
                self.offsets[sid] = off
        ids = sorted(servers)
        self._links: dict[tuple[int, int], LinkProfile] = {}
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                self._links[(a, b)] = default_link
        if overrides:
            for (a, b), prof in overrides.items():
                key = (min(a, b), max(a, b))
                if key not in self._links:
                    raise ValueError(f"override for unknown pair {key}")
                self._links[key] = prof
        self.now = 0
        self._heap: list[tuple[int, int, tuple]] = []
        self._seq = 0
        self._fifo_last: dict[tuple[int, int], int] = {}
        self.dispatched = 0
        for sid in ids:
            self._absorb(sid, servers[sid].start(self._local(sid)))

    # ---- plumbing ----

    def _local(self, sid: int) -> int:
        return self.now + self.offsets[sid]

    def _push(self, t_us: int, item: tuple) -> None:
        if t_us < self.now:
            raise RuntimeError(f"scheduling into the past: {t_us} < {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (t_us, self._seq, item))

    def _absorb(self, sid: int, actions: list) -> None:
        for a in actions:
            if isinstance(a, Record):
                self.trace.add(self.now, sid, a.kind, a.payload)
            elif isinstance(a, Send):
                self._transmit(sid, a)
            elif isinstance(a, SetTimer):
                deadline = a.deadline_us - self.offsets[sid]
                self._push(deadline, ("timer", sid, a.key, a.generation))
            else:
                raise TypeError(f"unknown action {a!r}")

    def _delay(self, seg: Segment) -> int:
        jitter = self.rng.uniform(-seg.jitter_us, seg.jitter_us)
        return max(0, round(seg.rtt_us / 2 + jitter))

    def _transmit(self, src: int, send: Send) -> None:
        pair = (min(src, send.dst), max(src, send.dst))
        seg = self._links[pair].at(self.now)
        if send.channel is ChannelClass.LOSSY:
            if seg.loss_rate > 0.0 and self.rng.random() < seg.loss_rate:
                return
            self._push(self.now + self._delay(seg), ("msg", send.dst, send.message))
            if self.duplication_rate > 0.0 and self.rng.random() < self.duplication_rate:
                self._push(self.now + self._delay(seg), ("msg", send.dst, send.message))
        else:
            arrival = max(
                self.now + self._delay(seg),
                self._fifo_last.get((src, send.dst), -1) + 1,
            )
            self._fifo_last[(src, send.dst)] = arrival
            self._push(arrival, ("msg", send.dst, send.message))

    def _dispatch(self, sid: int, event) -> None:
        self.dispatched += 1
        acts = self.servers[sid].handle(event, self._local(sid))
        self._absorb(sid, acts)

    # ---- faults ----

    def schedule_crash(self, t_us: int, target: int | str) -> None:
        self._push(t_us, ("fault", "crash", target))

    def schedule_recover(self, t_us: int, target: int | str) -> None:
        self._push(t_us, ("fault", "recover", target))

    def _fault(self, kind: str, target: int | str) -> None:
        if target == "leader":
            live = [
                sid
                for sid, s in self.servers.items()
                if s.role is Role.LEADER and not s.crashed
            ]
            if not live:
                self.trace.add(self.now, -1, "fault", (f"{kind}_skipped", -1))
                return
            target = max(live, key=lambda sid: self.servers[sid].current_term)
        self.trace.add(self.now, target, "fault", (kind, target))
        event = CrashInjected() if kind == "crash" else RecoverInjected()
        self._dispatch(target, event)

    # ---- loop ----

    def run(self, until_us: int) -> None:
        while self._heap and self._heap[0][0] <= until_us:
            t, _, item = heapq.heappop(self._heap)
            self.now = t
            if item[0] == "timer":
                _, sid, key, gen = item
                self._dispatch(sid, TimerFired(key, gen))
            elif item[0] == "msg":
                _, dst, msg = item
                self._dispatch(dst, MessageReceived(msg))
            else:
                _, kind, target = item
                self._fault(kind, target)
        self.now = max(self.now, until_us)

    # ---- queries ----

    def live_leaders(self) -> list[int]:
        return [
            sid
            for sid, s in self.servers.items()
            if s.role is Role.LEADER and not s.crashed
        ]
