"""Network simulator tests: delay/loss/FIFO mechanics via scripted
stub endpoints, plus full-cluster integration for determinism, fault
injection, and clock-offset transparency."""

from __future__ import annotations

import random

import pytest

from dynaraft.messages import (
    ChannelClass,
    CrashInjected,
    HeartbeatMessage,
    MessageReceived,
    RecoverInjected,
    Send,
    SetTimer,
)
from dynaraft.raft import RaftConfig, RaftServer, Role
from dynaraft.simnet import EventTrace, LinkProfile, Segment, Simulation


class Stub:
    """Endpoint that replays scripted start actions and logs arrivals."""

    def __init__(self, sid: int, start_actions=()):
        self.id = sid
        self.role = Role.FOLLOWER
        self.crashed = False
        self.start_actions = list(start_actions)
        self.seen: list[tuple[int, object]] = []

    def start(self, now):
        return list(self.start_actions)

    def handle(self, event, now):
        if isinstance(event, CrashInjected):
            self.crashed = True
            return []
        if isinstance(event, RecoverInjected):
            self.crashed = False
            return []
        if self.crashed:
            return []
        self.seen.append((now, event))
        return []


def burst(n: int, channel: ChannelClass, dst: int = 1) -> list[Send]:
    return [
        Send(dst, HeartbeatMessage(1, 0, i, 0, None, 0), channel)
        for i in range(1, n + 1)
    ]


def stub_pair(sends, link: LinkProfile, **kw) -> tuple[Stub, Stub, Simulation]:
    a, b = Stub(0, sends), Stub(1)
    sim = Simulation({0: a, 1: b}, link, **kw)
    return a, b, sim


def arrival_ids(stub: Stub) -> list[int]:
    return [ev.message.seq_id for _, ev in stub.seen]


# ---- link profiles ----


def test_segment_validation():
    with pytest.raises(ValueError):
        Segment(0, 0)
    with pytest.raises(ValueError):
        Segment(0, 100, loss_rate=1.0)
    with pytest.raises(ValueError):
        Segment(0, 100, jitter_us=-1)
    with pytest.raises(ValueError):
        Segment(-5, 100)


def test_profile_lookup_boundaries():
    prof = LinkProfile([Segment(0, 100_000), Segment(1_000_000, 500_000)])
    assert prof.at(0).rtt_us == 100_000
    assert prof.at(999_999).rtt_us == 100_000
    assert prof.at(1_000_000).rtt_us == 500_000
    assert prof.at(10**12).rtt_us == 500_000


def test_profile_validation():
    with pytest.raises(ValueError):
        LinkProfile([])
    with pytest.raises(ValueError):
        LinkProfile([Segment(5, 100)])
    with pytest.raises(ValueError):
        LinkProfile([Segment(0, 100), Segment(0, 200)])


# ---- delivery mechanics ----


def test_delay_centered_on_half_rtt_within_jitter():
    link = LinkProfile.constant(100_000, jitter_us=5_000)
    _, b, sim = stub_pair(burst(500, ChannelClass.LOSSY), link, seed=3)
    sim.run(1_000_000)
    times = [t for t, _ in b.seen]
    assert len(times) == 500
    assert all(45_000 <= t <= 55_000 for t in times)
    mean = sum(times) / len(times)
    assert 49_000 < mean < 51_000


def test_reliable_channel_preserves_order():
    link = LinkProfile.constant(100_000, jitter_us=40_000)
    _, b, sim = stub_pair(burst(300, ChannelClass.RELIABLE), link, seed=5)
    sim.run(10_000_000)
    assert arrival_ids(b) == list(range(1, 301))
    times = [t for t, _ in b.seen]
    assert all(t2 > t1 for t1, t2 in zip(times, times[1:]))


def test_lossy_channel_reorders_under_jitter():
    link = LinkProfile.constant(100_000, jitter_us=40_000)
    _, b, sim = stub_pair(burst(300, ChannelClass.LOSSY), link, seed=5)
    sim.run(10_000_000)
    ids = arrival_ids(b)
    assert len(ids) == 300
    assert ids != sorted(ids)


def test_lossy_drop_rate_matches_profile():
    link = LinkProfile.constant(100_000, loss_rate=0.3)
    _, b, sim = stub_pair(burst(4_000, ChannelClass.LOSSY), link, seed=11)
    sim.run(1_000_000)
    frac = len(b.seen) / 4_000
    assert 0.67 <= frac <= 0.73


def test_reliable_channel_never_drops():
    link = LinkProfile.constant(100_000, loss_rate=0.5)
    _, b, sim = stub_pair(burst(1_000, ChannelClass.RELIABLE), link, seed=7)
    sim.run(10_000_000)
    assert len(b.seen) == 1_000


def test_duplication_on_lossy_channel():
    link = LinkProfile.constant(100_000)
    _, b, sim = stub_pair(
        burst(2_000, ChannelClass.LOSSY), link, seed=13, duplication_rate=0.5
    )
    sim.run(1_000_000)
    assert 2_850 <= len(b.seen) <= 3_150


def test_loss_follows_active_segment():
    prof = LinkProfile([Segment(0, 100_000, 0.0), Segment(500_000, 100_000, 0.9)])
    sends = burst(1_000, ChannelClass.LOSSY)
    a, b, sim = stub_pair([], prof, seed=17)
    for s in sends:
        sim._transmit(0, s)
    sim.run(400_000)
    early = len(b.seen)
    assert early == 1_000  # no loss in the first segment
    sim.now = 600_000
    for s in sends:
        sim._transmit(0, s)
    sim.run(1_000_000)
    late = len(b.seen) - early
    assert late < 250  # ~10% survive the lossy segment


def test_timer_scheduled_into_past_raises():
    stub = Stub(0, [SetTimer(("x",), -5, 1)])
    with pytest.raises(RuntimeError):
        Simulation({0: stub, 1: Stub(1)}, LinkProfile.constant(100))


def test_crash_silences_endpoint_until_recover():
    link = LinkProfile.constant(10_000)
    a = Stub(0, burst(10, ChannelClass.RELIABLE))
    b = Stub(1)
    sim = Simulation({0: a, 1: b}, link, seed=1)
    sim.schedule_crash(2_000, 1)
    sim.run(1_000_000)
    assert len(b.seen) == 0  # all arrivals landed after the crash
    assert b.crashed


def test_unknown_override_pair_rejected():
    with pytest.raises(ValueError):
        Simulation(
            {0: Stub(0), 1: Stub(1)},
            LinkProfile.constant(100),
            overrides={(0, 7): LinkProfile.constant(50)},
        )
    with pytest.raises(ValueError):
        Simulation(
            {0: Stub(0), 1: Stub(1)},
            LinkProfile.constant(100),
            clock_offsets_us={9: 10},
        )


# ---- trace ----


def test_trace_stores_only_requested_kinds_but_hashes_all():
    tr_all = EventTrace()
    tr_some = EventTrace(store_kinds={"role"})
    for tr in (tr_all, tr_some):
        tr.add(1, 0, "role", ("follower", "leader", 1))
        tr.add(2, 0, "etimer", (123,))
    assert len(tr_all.events) == 2
    assert len(tr_some.events) == 1
    assert tr_some.events[0][2] == "role"
    assert tr_all.digest() == tr_some.digest()
    assert tr_some.count == 2


def test_trace_dedups_repeated_tuning_snapshots():
    tr = EventTrace()
    tr.add(1, 3, "tune", (0, 100, 10, 1, 0.0, 1))
    tr.add(2, 3, "tune", (0, 100, 10, 1, 0.0, 1))  # unchanged: not stored
    tr.add(3, 3, "tune", (0, 200, 20, 1, 0.0, 1))
    tr.add(4, 4, "tune", (0, 100, 10, 1, 0.0, 1))  # other server: stored
    assert len(tr.by_kind("tune")) == 3
    d = EventTrace()
    d.add(1, 3, "tune", (0, 100, 10, 1, 0.0, 1))
    assert d.digest() != tr.digest()


# ---- full-cluster integration ----


def cluster(n: int, seed: int, **cfg) -> dict[int, RaftServer]:
    return {
        sid: RaftServer(
            sid,
            [p for p in range(n) if p != sid],
            RaftConfig(**cfg),
            random.Random(seed * 1_000 + sid),
        )
        for sid in range(n)
    }


DYNATUNE = dict(tuning_enabled=True, heartbeat_channel=ChannelClass.LOSSY)


def run_once(seed: int, offsets=None, crash_at: int | None = 3_000_000) -> Simulation:
    servers = cluster(3, seed, **DYNATUNE)
    sim = Simulation(
        servers,
        LinkProfile.constant(100_000, jitter_us=1_000),
        seed=seed,
        clock_offsets_us=offsets,
    )
    if crash_at is not None:
        sim.schedule_crash(crash_at, "leader")
    sim.run(8_000_000)
    return sim


def test_same_seed_same_digest():
    assert run_once(21).trace.digest() == run_once(21).trace.digest()


def test_different_seed_different_digest():
    assert run_once(21).trace.digest() != run_once(22).trace.digest()


def test_clock_offsets_do_not_change_behavior():
    plain = run_once(33)
    skewed = run_once(33, offsets={0: 250_000, 1: -120_000, 2: 0})
    assert plain.trace.digest() == skewed.trace.digest()


def test_election_completes_and_crash_fault_hits_leader():
    servers = cluster(3, 9, **DYNATUNE)
    sim = Simulation(servers, LinkProfile.constant(100_000, jitter_us=1_000), seed=9)
    sim.run(6_000_000)
    leaders = sim.live_leaders()
    assert len(leaders) == 1
    lead = leaders[0]
    sim.schedule_crash(sim.now + 100_000, "leader")
    sim.run(sim.now + 200_000)
    assert servers[lead].crashed
    assert (sim.now - 100_000, lead, "fault", ("crash", lead)) in sim.trace.by_kind("fault")
    # cluster elects a replacement leader
    sim.run(sim.now + 4_000_000)
    new = sim.live_leaders()
    assert len(new) == 1 and new[0] != lead


def test_symbolic_leader_crash_skipped_when_no_leader():
    servers = cluster(3, 15, **DYNATUNE)
    sim = Simulation(servers, LinkProfile.constant(100_000), seed=15)
    sim.schedule_crash(1, "leader")  # long before any election can finish
    sim.run(100_000)
    assert sim.trace.by_kind("fault") == [(1, -1, "fault", ("crash_skipped", -1))]
    assert not any(s.crashed for s in servers.values())


def test_followers_warm_up_and_shrink_timeouts():
    servers = cluster(3, 27, **DYNATUNE)
    sim = Simulation(servers, LinkProfile.constant(100_000, jitter_us=1_000), seed=27)
    sim.run(10_000_000)
    (lead,) = sim.live_leaders()
    for sid, s in servers.items():
        if sid == lead:
            continue
        assert s.role is Role.FOLLOWER
        # constant 100ms RTT, no loss: timeout ~RTT, one beat per timeout
        assert 95_000 <= s.current_et_us <= 115_000
        assert s.window.rtt_count >= 10
    # leader adopted the tuned heartbeat interval per link
    for link in servers[lead].links.values():
        assert 95_000 <= link.heartbeat_us <= 115_000


def test_static_baseline_keeps_default_timeouts():
    servers = cluster(3, 41)  # tuning off, reliable heartbeats
    sim = Simulation(servers, LinkProfile.constant(100_000, jitter_us=1_000), seed=41)
    sim.run(10_000_000)
    (lead,) = sim.live_leaders()
    for sid, s in servers.items():
        assert s.current_et_us == 1_000_000
        if sid != lead:
            assert s.role is Role.FOLLOWER
    for link in servers[lead].links.values():
        assert link.heartbeat_us == 100_000
