"""Consensus core: a pure, event-driven Raft server with pre-vote and
per-link heartbeat tuning hooks.

Each server is a state machine. The host feeds it one event at a time
(timer firing, message arrival, crash, recover) together with the local
clock, and executes the returned actions. Servers never read a wall
clock or a socket, so a run is fully determined by the event sequence
and the seeded RNG inside each server.

Leaders drive one heartbeat exchange loop per follower. Heartbeats
carry a sequence id, the send timestamp (echoed back by the follower,
so round trips are measured against a single clock), and the previous
exchange's measured RTT. Followers feed ids and RTT samples into a
measurement window and, once warm, derive their own election timeout
and a suggested heartbeat interval which rides back on the response.

On the reliable (stream-like) heartbeat channel the leader serializes
exchanges: the next heartbeat waits for the previous echo, up to a
staleness cap, so the effective period is max(interval, round trip).
On the lossy (datagram-like) channel sends are unconditional and
pipelined, which the tuned interval = timeout / K design requires.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .messages import (
    Action,
    AppendEntries,
    AppendEntriesResponse,
    ChannelClass,
    CrashInjected,
    Event,
    HeartbeatMessage,
    HeartbeatResponse,
    LogEntry,
    MessageReceived,
    PreVoteRequest,
    PreVoteResponse,
    Record,
    RecoverInjected,
    Send,
    SetTimer,
    TimerFired,
    VoteRequest,
    VoteResponse,
)
from .tuner import (
    MeasurementWindow,
    TunerConfig,
    evaluate,
    heartbeat_interval_us,
)

ELECTION = ("election",)


class Role(Enum):
    FOLLOWER = "follower"
    PRE_CANDIDATE = "pre_candidate"
    CANDIDATE = "candidate"
    LEADER = "leader"


def randomize_timeout(timeout_us: int, rng: random.Random) -> int:
    """Uniform draw from [timeout, 2 * timeout)."""
    if timeout_us < 1:
        raise ValueError("timeout must be positive")
    return rng.randrange(timeout_us, 2 * timeout_us)


@dataclass
class RaftConfig:
    """Per-server behavior knobs; the harness builds one per variant."""

    election_timeout_us: int = 1_000_000
    heartbeat_us: int = 100_000
    tuning_enabled: bool = False
    # When set, overrides the loss-derived heartbeat count while the
    # timeout itself still tracks measured RTT.
    fixed_heartbeats_per_timeout: int | None = None
    tuner: TunerConfig = field(default_factory=TunerConfig)
    heartbeat_channel: ChannelClass = ChannelClass.RELIABLE


@dataclass
class LinkState:
    """Leader-side bookkeeping for one follower's heartbeat loop."""

    heartbeat_us: int
    seq: int = 0
    last_rtt_us: int | None = None
    last_send_us: int | None = None
    awaiting_echo_ts: int | None = None
    send_deferred: bool = False


class RaftServer:
    """One cluster member. Drive it via start() and handle()."""

    def __init__(
        self,
        server_id: int,
        peers: list[int],
        config: RaftConfig,
        rng: random.Random,
    ) -> None:
        if server_id in peers:
            raise ValueError("peers must not include the server itself")
        self.id = server_id
        self.peers = tuple(sorted(peers))
        self.config = config
        self.rng = rng
        self.majority = (len(self.peers) + 2) // 2

        # persistent
        self.current_term = 0
        self.voted_for: int | None = None
        self.log: list[LogEntry] = []

        # volatile
        self.role = Role.FOLLOWER
        self.commit_index = 0
        self.leader_id: int | None = None
        self.crashed = False
        self.prevotes: set[int] = set()
        self.votes: set[int] = set()

        # timers
        self._timer_gens: dict[tuple, int] = {}
        self.election_deadline_us = 0
        self.randomized_timeout_us = 0

        # link tuning (follower side)
        self.window = MeasurementWindow(max_size=config.tuner.max_window)
        self.window_key: tuple[int, int] | None = None
        self.current_et_us = config.election_timeout_us

        # leader side
        self.links: dict[int, LinkState] = {}
        self.next_index: dict[int, int] = {}
        self.match_index: dict[int, int] = {}

        self.exchange_cap_us = 2 * config.election_timeout_us

    # ---- driving ----

    def start(self, now: int) -> list[Action]:
        acts: list[Action] = []
        self._arm_election(now, acts)
        return acts

    def handle(self, event: Event, now: int) -> list[Action]:
        acts: list[Action] = []
        if isinstance(event, CrashInjected):
            self.crashed = True
            return acts
        if isinstance(event, RecoverInjected):
            self._recover(now, acts)
            return acts
        if self.crashed:
            return acts
        if isinstance(event, TimerFired):
            if self._timer_gens.get(event.key) != event.generation:
                return acts  # superseded by a later re-arm
            if event.key == ELECTION:
                self._on_election_timeout(now, acts)
            elif event.key[0] == "heartbeat":
                self._on_heartbeat_timer(event.key[1], now, acts)
            return acts
        if isinstance(event, MessageReceived):
            m = event.message
            if isinstance(m, HeartbeatMessage):
                self._on_heartbeat(m, now, acts)
            elif isinstance(m, HeartbeatResponse):
                self._on_heartbeat_response(m, now, acts)
            elif isinstance(m, PreVoteRequest):
                self._on_prevote_request(m, now, acts)
            elif isinstance(m, PreVoteResponse):
                self._on_prevote_response(m, now, acts)
            elif isinstance(m, VoteRequest):
                self._on_vote_request(m, now, acts)
            elif isinstance(m, VoteResponse):
                self._on_vote_response(m, now, acts)
            elif isinstance(m, AppendEntries):
                self._on_append_entries(m, now, acts)
            elif isinstance(m, AppendEntriesResponse):
                self._on_append_response(m, now, acts)
            return acts
        raise TypeError(f"unknown event {event!r}")

    # ---- helpers ----

    def _bump(self, key: tuple) -> int:
        gen = self._timer_gens.get(key, 0) + 1
        self._timer_gens[key] = gen
        return gen

    def _arm_election(self, now: int, acts: list[Action]) -> None:
        draw = randomize_timeout(self.current_et_us, self.rng)
        self.randomized_timeout_us = draw
        self.election_deadline_us = now + draw
        acts.append(Record("etimer", (draw,)))
        acts.append(SetTimer(ELECTION, self.election_deadline_us, self._bump(ELECTION)))

    def _disarm_election(self) -> None:
        self._bump(ELECTION)

    def _last_log(self) -> tuple[int, int]:
        if not self.log:
            return (0, 0)
        e = self.log[-1]
        return (e.term, e.index)

    def _log_up_to_date(self, last_term: int, last_index: int) -> bool:
        return (last_term, last_index) >= self._last_log()

    def _set_role(self, new: Role, acts: list[Action]) -> None:
        if new is self.role:
            return
        acts.append(Record("role", (self.role.value, new.value, self.current_term)))
        self.role = new

    def _adopt_term(self, term: int, acts: list[Action]) -> None:
        if term <= self.current_term:
            return
        self.current_term = term
        self.voted_for = None
        acts.append(Record("term", (term,)))
        # A new term invalidates everything measured against the old
        # leader; fall back to defaults until the link re-warms.
        self.window.reset()
        self.window_key = None
        self.current_et_us = self.config.election_timeout_us

    def _become_follower(
        self, term: int, leader: int | None, now: int, acts: list[Action]
    ) -> None:
        self._adopt_term(term, acts)
        self._set_role(Role.FOLLOWER, acts)
        self.leader_id = leader
        self._arm_election(now, acts)

    def _recover(self, now: int, acts: list[Action]) -> None:
        self.crashed = False
        self._set_role(Role.FOLLOWER, acts)
        self.leader_id = None
        self.commit_index = 0
        self.prevotes.clear()
        self.votes.clear()
        self.links.clear()
        self.next_index.clear()
        self.match_index.clear()
        self.window.reset()
        self.window_key = None
        self.current_et_us = self.config.election_timeout_us
        self._arm_election(now, acts)

    # ---- elections ----

    def _on_election_timeout(self, now: int, acts: list[Action]) -> None:
        if self.role is Role.LEADER:
            return
        # Losing the leader invalidates the tuned parameters.
        if self.config.tuning_enabled:
            self.window.reset()
            self.current_et_us = self.config.election_timeout_us
        self._set_role(Role.PRE_CANDIDATE, acts)
        self.prevotes = {self.id}
        acts.append(Record("prevote_round", (self.current_term + 1,)))
        self._arm_election(now, acts)
        last_term, last_index = self._last_log()
        req = PreVoteRequest(self.current_term + 1, self.id, last_term, last_index)
        for peer in self.peers:
            acts.append(Send(peer, req, ChannelClass.RELIABLE))

    def _on_prevote_request(self, m: PreVoteRequest, now: int, acts: list[Action]) -> None:
        timer_expired = self.role is not Role.FOLLOWER or now >= self.election_deadline_us
        granted = (
            m.term > self.current_term
            and self.role is not Role.LEADER
            and timer_expired
            and self._log_up_to_date(m.last_log_term, m.last_log_index)
        )
        reply_term = m.term if granted else self.current_term
        acts.append(
            Send(m.candidate, PreVoteResponse(reply_term, self.id, granted), ChannelClass.RELIABLE)
        )

    def _on_prevote_response(self, m: PreVoteResponse, now: int, acts: list[Action]) -> None:
        if not m.granted and m.term > self.current_term:
            self._become_follower(m.term, None, now, acts)
            return
        if self.role is not Role.PRE_CANDIDATE:
            return
        if m.granted and m.term == self.current_term + 1:
            self.prevotes.add(m.voter)
            if len(self.prevotes) >= self.majority:
                self._become_candidate(now, acts)

    def _become_candidate(self, now: int, acts: list[Action]) -> None:
        self.current_term += 1
        acts.append(Record("term", (self.current_term,)))
        self.voted_for = self.id
        self.votes = {self.id}
        self._set_role(Role.CANDIDATE, acts)
        if self.config.tuning_enabled:
            self.window.reset()
            self.window_key = None
            self.current_et_us = self.config.election_timeout_us
        self._arm_election(now, acts)
        last_term, last_index = self._last_log()
        req = VoteRequest(self.current_term, self.id, last_term, last_index)
        for peer in self.peers:
            acts.append(Send(peer, req, ChannelClass.RELIABLE))

    def _on_vote_request(self, m: VoteRequest, now: int, acts: list[Action]) -> None:
        if m.term > self.current_term:
            self._become_follower(m.term, None, now, acts)
        granted = (
            m.term == self.current_term
            and self.voted_for in (None, m.candidate)
            and self._log_up_to_date(m.last_log_term, m.last_log_index)
        )
        if granted:
            self.voted_for = m.candidate
        acts.append(
            Send(m.candidate, VoteResponse(self.current_term, self.id, granted), ChannelClass.RELIABLE)
        )

    def _on_vote_response(self, m: VoteResponse, now: int, acts: list[Action]) -> None:
        if m.term > self.current_term:
            self._become_follower(m.term, None, now, acts)
            return
        if self.role is not Role.CANDIDATE or m.term != self.current_term:
            return
        if m.granted:
            self.votes.add(m.voter)
            if len(self.votes) >= self.majority:
                self._become_leader(now, acts)

    def _become_leader(self, now: int, acts: list[Action]) -> None:
        self._set_role(Role.LEADER, acts)
        self.leader_id = self.id
        self._disarm_election()
        self.links = {
            p: LinkState(heartbeat_us=self.config.heartbeat_us) for p in self.peers
        }
        last_index = self.log[-1].index if self.log else 0
        self.next_index = {p: last_index + 1 for p in self.peers}
        self.match_index = {p: 0 for p in self.peers}
        # A fresh no-op pins this term in the log so older entries can
        # be committed through it.
        self.log.append(LogEntry(self.current_term, last_index + 1))
        for peer in self.peers:
            self._send_append(peer, acts)
        for peer in self.peers:
            self._send_heartbeat(peer, now, acts)

    # ---- heartbeats ----

    def _arm_heartbeat(self, peer: int, deadline_us: int, acts: list[Action]) -> None:
        key = ("heartbeat", peer)
        acts.append(SetTimer(key, deadline_us, self._bump(key)))

    def _send_heartbeat(self, peer: int, now: int, acts: list[Action]) -> None:
        link = self.links[peer]
        link.seq += 1
        msg = HeartbeatMessage(
            term=self.current_term,
            leader=self.id,
            seq_id=link.seq,
            send_ts_us=now,
            last_rtt_us=link.last_rtt_us,
            leader_commit=self.commit_index,
        )
        acts.append(Send(peer, msg, self.config.heartbeat_channel))
        acts.append(Record("hb_send", (peer, link.seq)))
        link.last_send_us = now
        link.awaiting_echo_ts = now
        link.send_deferred = False
        self._arm_heartbeat(peer, now + link.heartbeat_us, acts)

    def _on_heartbeat_timer(self, peer: int, now: int, acts: list[Action]) -> None:
        if self.role is not Role.LEADER:
            return
        link = self.links[peer]
        serialized = self.config.heartbeat_channel is ChannelClass.RELIABLE
        if (
            serialized
            and link.awaiting_echo_ts is not None
            and link.last_send_us is not None
            and now - link.last_send_us < self.exchange_cap_us
        ):
            # Stream-like channel: wait for the echo before the next
            # exchange, but probe again once the cap elapses.
            link.send_deferred = True
            self._arm_heartbeat(peer, link.last_send_us + self.exchange_cap_us, acts)
            return
        self._send_heartbeat(peer, now, acts)

    def _on_heartbeat(self, m: HeartbeatMessage, now: int, acts: list[Action]) -> None:
        if m.term < self.current_term:
            acts.append(
                Send(
                    m.leader,
                    HeartbeatResponse(self.current_term, self.id, m.send_ts_us, None),
                    self.config.heartbeat_channel,
                )
            )
            return
        self._adopt_term(m.term, acts)
        self._set_role(Role.FOLLOWER, acts)
        self.leader_id = m.leader

        key = (m.leader, m.term)
        if self.window_key != key:
            self.window.reset()
            self.window_key = key
            self.current_et_us = self.config.election_timeout_us

        fresh = self.window.record_id(m.seq_id)
        if fresh and m.last_rtt_us is not None:
            self.window.record_rtt(m.last_rtt_us)

        tuned_h: int | None = None
        if self.config.tuning_enabled:
            out = evaluate(self.window, self.config.tuner)
            self.current_et_us = out.election_timeout_us
            k = out.heartbeats_per_timeout
            if out.warm:
                if self.config.fixed_heartbeats_per_timeout is not None:
                    k = self.config.fixed_heartbeats_per_timeout
                tuned_h = heartbeat_interval_us(out.election_timeout_us, k)
            acts.append(
                Record(
                    "tune",
                    (
                        m.leader,
                        out.election_timeout_us,
                        tuned_h if tuned_h is not None else self.config.heartbeat_us,
                        k,
                        out.loss_rate,
                        1 if out.warm else 0,
                    ),
                )
            )

        self._advance_commit(min(m.leader_commit, len(self.log)), acts)
        self._arm_election(now, acts)
        acts.append(
            Send(
                m.leader,
                HeartbeatResponse(self.current_term, self.id, m.send_ts_us, tuned_h),
                self.config.heartbeat_channel,
            )
        )

    def _on_heartbeat_response(self, m: HeartbeatResponse, now: int, acts: list[Action]) -> None:
        if m.term > self.current_term:
            self._become_follower(m.term, None, now, acts)
            return
        if self.role is not Role.LEADER or m.term != self.current_term:
            return
        link = self.links[m.follower]
        rtt = now - m.echoed_send_ts_us
        if rtt >= 0:
            link.last_rtt_us = rtt
            acts.append(Record("rtt", (m.follower, rtt)))
        if m.echoed_send_ts_us == link.awaiting_echo_ts:
            link.awaiting_echo_ts = None
        h_changed = False
        if m.tuned_heartbeat_us is not None and m.tuned_heartbeat_us != link.heartbeat_us:
            link.heartbeat_us = m.tuned_heartbeat_us
            h_changed = True
            acts.append(Record("leader_h", (m.follower, link.heartbeat_us)))
        if self.match_index.get(m.follower, 0) < len(self.log):
            self._send_append(m.follower, acts)
        if link.send_deferred and link.awaiting_echo_ts is None:
            self._send_heartbeat(m.follower, now, acts)
        elif h_changed and link.last_send_us is not None:
            deadline = max(now, link.last_send_us + link.heartbeat_us)
            self._arm_heartbeat(m.follower, deadline, acts)

    # ---- replication ----

    def _send_append(self, peer: int, acts: list[Action]) -> None:
        nxt = self.next_index[peer]
        prev_index = nxt - 1
        prev_term = self.log[prev_index - 1].term if prev_index > 0 else 0
        entries = tuple(self.log[prev_index:])
        acts.append(
            Send(
                peer,
                AppendEntries(
                    term=self.current_term,
                    leader=self.id,
                    prev_log_index=prev_index,
                    prev_log_term=prev_term,
                    entries=entries,
                    leader_commit=self.commit_index,
                ),
                ChannelClass.RELIABLE,
            )
        )

    def _on_append_entries(self, m: AppendEntries, now: int, acts: list[Action]) -> None:
        if m.term < self.current_term:
            acts.append(
                Send(
                    m.leader,
                    AppendEntriesResponse(self.current_term, self.id, False, 0, len(self.log) + 1),
                    ChannelClass.RELIABLE,
                )
            )
            return
        self._adopt_term(m.term, acts)
        self._set_role(Role.FOLLOWER, acts)
        self.leader_id = m.leader
        key = (m.leader, m.term)
        if self.window_key != key:
            self.window.reset()
            self.window_key = key
            self.current_et_us = self.config.election_timeout_us

        if m.prev_log_index > len(self.log):
            ok, match, conflict = False, 0, len(self.log) + 1
        elif (
            m.prev_log_index > 0
            and self.log[m.prev_log_index - 1].term != m.prev_log_term
        ):
            ok, match, conflict = False, 0, m.prev_log_index
        else:
            idx = m.prev_log_index
            for entry in m.entries:
                if idx < len(self.log) and self.log[idx].term != entry.term:
                    del self.log[idx:]
                if idx >= len(self.log):
                    self.log.append(entry)
                idx += 1
            ok, match, conflict = True, m.prev_log_index + len(m.entries), 0
            self._advance_commit(min(m.leader_commit, len(self.log)), acts)

        self._arm_election(now, acts)
        acts.append(
            Send(
                m.leader,
                AppendEntriesResponse(self.current_term, self.id, ok, match, conflict),
                ChannelClass.RELIABLE,
            )
        )

    def _on_append_response(self, m: AppendEntriesResponse, now: int, acts: list[Action]) -> None:
        if m.term > self.current_term:
            self._become_follower(m.term, None, now, acts)
            return
        if self.role is not Role.LEADER or m.term != self.current_term:
            return
        if m.success:
            if m.match_index > self.match_index[m.follower]:
                self.match_index[m.follower] = m.match_index
            self.next_index[m.follower] = self.match_index[m.follower] + 1
            self._advance_leader_commit(acts)
        else:
            self.next_index[m.follower] = max(
                1, min(m.conflict_index, self.next_index[m.follower] - 1)
            )
            self._send_append(m.follower, acts)

    def _advance_leader_commit(self, acts: list[Action]) -> None:
        # Only entries from the current term commit by counting; older
        # ones ride along via _advance_commit once one of ours does.
        for idx in range(len(self.log), self.commit_index, -1):
            if self.log[idx - 1].term != self.current_term:
                break
            acks = 1 + sum(1 for p in self.peers if self.match_index[p] >= idx)
            if acks >= self.majority:
                self._advance_commit(idx, acts)
                return

    def _advance_commit(self, new_commit: int, acts: list[Action]) -> None:
        if new_commit <= self.commit_index:
            return
        for idx in range(self.commit_index + 1, new_commit + 1):
            acts.append(Record("commit", (idx, self.log[idx - 1].term)))
        self.commit_index = new_commit
