"""Scenario harness: builds clusters per protocol variant, runs
seeded repetitions through the simulator, extracts metrics from the
event trace, and audits safety invariants.

Variants
--------
- raft:     static 1000ms/100ms timers, stream-like heartbeat channel
- raft-low: static 100ms/10ms timers, stream-like heartbeat channel
- dynatune: link-tuned timers, datagram heartbeats, loss-derived K
- fix-k:    link-tuned timeout, but a fixed K heartbeats per timeout

Seeding: repetition r of a scenario with seed S uses base seed
S * 1_000_000_007 + r; server i draws from base * 1009 + i and the
network from base * 1009 + 999, so every repetition is independently
reproducible.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .messages import ChannelClass
from .raft import RaftConfig, RaftServer
from .simnet import EventTrace, LinkProfile, Simulation
from .tuner import TunerConfig

Events = list[tuple[int, int, str, tuple]]

# Kinds the audits need; always stored regardless of scenario filters.
MANDATORY_KINDS = frozenset({"role", "term", "fault"})

SEED_STRIDE = 1_000_000_007


@dataclass(frozen=True)
class VariantSpec:
    name: str
    election_timeout_us: int
    heartbeat_us: int
    tuning_enabled: bool
    heartbeat_channel: ChannelClass
    fixed_k: int | None = None

    def build_config(self, tuner_params: dict | None = None) -> RaftConfig:
        params = dict(tuner_params or {})
        params.setdefault("default_election_timeout_us", self.election_timeout_us)
        params.setdefault("default_heartbeat_us", self.heartbeat_us)
        tuner = TunerConfig(**params)
        tuner.validate()
        return RaftConfig(
            election_timeout_us=self.election_timeout_us,
            heartbeat_us=self.heartbeat_us,
            tuning_enabled=self.tuning_enabled,
            fixed_heartbeats_per_timeout=self.fixed_k,
            tuner=tuner,
            heartbeat_channel=self.heartbeat_channel,
        )


VARIANTS: dict[str, VariantSpec] = {
    "raft": VariantSpec("raft", 1_000_000, 100_000, False, ChannelClass.RELIABLE),
    "raft-low": VariantSpec("raft-low", 100_000, 10_000, False, ChannelClass.RELIABLE),
    "dynatune": VariantSpec("dynatune", 1_000_000, 100_000, True, ChannelClass.LOSSY),
    "fix-k": VariantSpec("fix-k", 1_000_000, 100_000, True, ChannelClass.LOSSY, fixed_k=10),
}


@dataclass(frozen=True)
class Fault:
    kind: str  # "crash" | "recover"
    target: int | str  # server id, or "leader" resolved at fire time
    at_us: int


@dataclass
class ScenarioSpec:
    name: str
    n: int
    seed: int
    variants: tuple[str, ...]
    default_link: LinkProfile
    duration_us: int
    repetitions: int
    overrides: dict[tuple[int, int], LinkProfile] = field(default_factory=dict)
    faults: tuple[Fault, ...] = ()
    clock_offsets_us: dict[int, int] = field(default_factory=dict)
    tuner_params: dict = field(default_factory=dict)
    record_kinds: frozenset[str] | None = None
    duplication_rate: float = 0.0
    variant_overrides: dict[str, dict] = field(default_factory=dict)
    time_scale: float = 1.0  # informational: wall-clock compression applied

    def validate(self) -> None:
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError("cluster size must be an odd number >= 3")
        if self.repetitions < 1 or self.duration_us <= 0:
            raise ValueError("need at least one repetition and positive duration")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r} (have {sorted(VARIANTS)})")
        allowed = {"election_timeout_us", "heartbeat_us", "fixed_k"}
        for v, ov in self.variant_overrides.items():
            if v not in VARIANTS:
                raise ValueError(f"override for unknown variant {v!r}")
            if set(ov) - allowed:
                raise ValueError(f"unknown variant override keys {set(ov) - allowed}")
        for f in self.faults:
            if f.kind not in ("crash", "recover"):
                raise ValueError(f"unknown fault kind {f.kind!r}")
            if f.kind == "recover" and f.target == "leader":
                raise ValueError("recover needs a concrete server id")
            if isinstance(f.target, int) and not (0 <= f.target < self.n):
                raise ValueError(f"fault target {f.target} out of range")
            if not (0 <= f.at_us <= self.duration_us):
                raise ValueError("fault time outside the run")


@dataclass
class RepResult:
    variant: str
    rep: int
    base_seed: int
    digest: str
    events: Events
    safety_ok: bool
    safety_msg: str
    final: dict[int, tuple[str, int, int, int]]  # role, term, commit, log len


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    runs: dict[str, list[RepResult]]

    def all_safe(self) -> bool:
        return all(r.safety_ok for reps in self.runs.values() for r in reps)


def base_seed(scenario_seed: int, rep: int) -> int:
    return scenario_seed * SEED_STRIDE + rep


def build_cluster(
    n: int, config: RaftConfig, seed: int
) -> dict[int, RaftServer]:
    peers = list(range(n))
    return {
        sid: RaftServer(
            sid,
            [p for p in peers if p != sid],
            config,
            random.Random(seed * 1009 + sid),
        )
        for sid in peers
    }


def run_repetition(spec: ScenarioSpec, variant: str, rep: int) -> RepResult:
    seed = base_seed(spec.seed, rep)
    vspec = VARIANTS[variant]
    if variant in spec.variant_overrides:
        vspec = replace(vspec, **spec.variant_overrides[variant])
    config = vspec.build_config(spec.tuner_params)
    servers = build_cluster(spec.n, config, seed)
    store = None if spec.record_kinds is None else spec.record_kinds | MANDATORY_KINDS
    trace = EventTrace(store_kinds=store)
    sim = Simulation(
        servers,
        spec.default_link,
        overrides=spec.overrides,
        trace=trace,
        seed=seed * 1009 + 999,
        clock_offsets_us=spec.clock_offsets_us,
        duplication_rate=spec.duplication_rate,
    )
    for f in spec.faults:
        if f.kind == "crash":
            sim.schedule_crash(f.at_us, f.target)
        else:
            sim.schedule_recover(f.at_us, f.target)
    sim.run(spec.duration_us)
    ok, msg = audit_safety(trace.events)
    if ok:
        ok, msg = audit_log_matching(servers)
    final = {
        sid: (s.role.value, s.current_term, s.commit_index, len(s.log))
        for sid, s in servers.items()
    }
    return RepResult(variant, rep, seed, trace.digest(), trace.events, ok, msg, final)


def run_scenario(spec: ScenarioSpec, progress=None) -> ScenarioResult:
    spec.validate()
    runs: dict[str, list[RepResult]] = {}
    for variant in spec.variants:
        reps = []
        for rep in range(spec.repetitions):
            reps.append(run_repetition(spec, variant, rep))
            if progress is not None:
                progress(variant, rep)
        runs[variant] = reps
    return ScenarioResult(spec, runs)


# ---- safety audits ----


def audit_safety(events: Events) -> tuple[bool, str]:
    leaders_by_term: dict[int, set[int]] = {}
    commit_terms: dict[int, int] = {}
    for _, server, kind, payload in events:
        if kind == "role" and payload[1] == "leader":
            leaders_by_term.setdefault(payload[2], set()).add(server)
        elif kind == "commit":
            idx, term = payload
            seen = commit_terms.setdefault(idx, term)
            if seen != term:
                return False, f"commit divergence at index {idx}: term {seen} vs {term}"
    bad = {t: sorted(s) for t, s in leaders_by_term.items() if len(s) > 1}
    if bad:
        return False, f"multiple leaders elected in the same term: {bad}"
    return True, ""


def audit_log_matching(servers: dict[int, RaftServer]) -> tuple[bool, str]:
    items = list(servers.values())
    for i, a in enumerate(items):
        for b in items[i + 1:]:
            m = min(a.commit_index, b.commit_index)
            if a.log[:m] != b.log[:m]:
                return False, (
                    f"committed prefixes diverge between {a.id} and {b.id}"
                )
    return True, ""


# ---- trace metrics ----


def crash_times(events: Events) -> list[tuple[int, int]]:
    return [
        (t, payload[1])
        for t, _, kind, payload in events
        if kind == "fault" and payload[0] == "crash"
    ]


def detection_times_us(events: Events) -> list[int]:
    """Per crash fault: time until some other live server first leaves
    the follower role (starts suspecting the leader)."""
    out = []
    crashed: set[int] = set()
    pending: int | None = None
    for t, server, kind, payload in events:
        if kind == "fault":
            if payload[0] == "crash":
                crashed.add(payload[1])
                pending = t
            elif payload[0] == "recover":
                crashed.discard(payload[1])
        elif (
            kind == "role"
            and pending is not None
            and payload[1] == "pre_candidate"
            and server not in crashed
        ):
            out.append(t - pending)
            pending = None
    return out


def armed_timeouts_at_detection_us(events: Events) -> list[list[int]]:
    """Per crash fault: the randomized timeouts armed on every live
    non-leader server at the instant the failure is first suspected."""
    out = []
    crashed: set[int] = set()
    roles: dict[int, str] = {}
    last_draw: dict[int, int] = {}
    pending = False
    for _, server, kind, payload in events:
        if kind == "fault":
            if payload[0] == "crash":
                crashed.add(payload[1])
                pending = True
            else:
                crashed.discard(payload[1])
        elif kind == "etimer":
            last_draw[server] = payload[0]
        elif kind == "role":
            if pending and payload[1] == "pre_candidate" and server not in crashed:
                # The detector's own draw is still the consumed one:
                # its re-arm record trails this role change.
                out.append(
                    [
                        draw
                        for sid, draw in last_draw.items()
                        if sid not in crashed and roles.get(sid) != "leader"
                    ]
                )
                pending = False
            roles[server] = payload[1]
    return out


def leaderless_intervals_us(events: Events, horizon_us: int) -> list[tuple[int, int]]:
    """Maximal intervals with no live leader, after the first election."""
    live: set[int] = set()
    gap_start: int | None = None
    seen_leader = False
    out = []
    for t, server, kind, payload in events:
        before = bool(live)
        if kind == "role":
            if payload[0] == "leader":
                live.discard(server)
            if payload[1] == "leader":
                live.add(server)
                seen_leader = True
        elif kind == "fault" and payload[0] == "crash":
            live.discard(payload[1])
        else:
            continue
        if before and not live:
            gap_start = t
        elif not before and live and gap_start is not None:
            out.append((gap_start, t))
            gap_start = None
    if gap_start is not None and seen_leader:
        out.append((gap_start, horizon_us))
    return out


def first_leader_us(events: Events) -> int | None:
    for t, _, kind, payload in events:
        if kind == "role" and payload[1] == "leader":
            return t
    return None


def count_events(
    events: Events,
    kind: str,
    start_us: int = 0,
    end_us: int | None = None,
    server: int | None = None,
) -> int:
    n = 0
    for t, sid, k, _ in events:
        if k != kind or t < start_us:
            continue
        if end_us is not None and t >= end_us:
            continue
        if server is not None and sid != server:
            continue
        n += 1
    return n


def election_count(events: Events, start_us: int = 0, end_us: int | None = None) -> int:
    """Completed elections: transitions into the leader role."""
    return sum(
        1
        for t, _, kind, payload in events
        if kind == "role"
        and payload[1] == "leader"
        and t >= start_us
        and (end_us is None or t < end_us)
    )


def term_values(events: Events, start_us: int = 0, end_us: int | None = None) -> set[int]:
    return {
        payload[0]
        for t, _, kind, payload in events
        if kind == "term" and t >= start_us and (end_us is None or t < end_us)
    }


def warm_tune_events(
    events: Events, start_us: int = 0, end_us: int | None = None
) -> Events:
    return [
        e
        for e in events
        if e[2] == "tune"
        and e[3][5] == 1
        and e[0] >= start_us
        and (end_us is None or e[0] < end_us)
    ]


def modal_heartbeats_per_timeout(
    events: Events, start_us: int, end_us: int
) -> int | None:
    ks = [e[3][3] for e in warm_tune_events(events, start_us, end_us)]
    if not ks:
        return None
    return Counter(ks).most_common(1)[0][0]


def summarize(values) -> dict:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return {"n": 0}
    return {
        "n": int(arr.size),
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "min": float(arr.min()),
        "max": float(arr.max()),
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "p99": float(np.percentile(arr, 99)),
    }


# ---- randomized safety campaigns ----


def random_scenario(rng: random.Random, index: int) -> ScenarioSpec:
    n = rng.choice([3, 5])
    rtt = rng.choice([10_000, 50_000, 100_000, 300_000])
    jitter = rng.randrange(0, rtt // 4 + 1)
    loss = rng.choice([0.0, 0.05, 0.2])
    variant = rng.choice(sorted(VARIANTS))
    duration = 6_000_000
    faults: list[Fault] = []
    t = 1_500_000
    for _ in range(rng.randrange(0, 3)):
        if rng.random() < 0.5:
            target: int | str = "leader"
            faults.append(Fault("crash", target, t))
        else:
            victim = rng.randrange(n)
            faults.append(Fault("crash", victim, t))
            if rng.random() < 0.7:
                back = min(duration, t + rng.randrange(200_000, 1_500_000))
                faults.append(Fault("recover", victim, back))
        t += rng.randrange(800_000, 2_000_000)
    return ScenarioSpec(
        name=f"fuzz-{index}",
        n=n,
        seed=rng.randrange(1, 2**31),
        variants=(variant,),
        default_link=LinkProfile.constant(rtt, loss_rate=loss, jitter_us=jitter),
        duration_us=duration,
        repetitions=1,
        faults=tuple(sorted(faults, key=lambda f: f.at_us)),
        record_kinds=frozenset({"role", "term", "fault", "commit"}),
    )
