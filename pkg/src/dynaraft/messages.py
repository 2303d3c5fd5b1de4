"""Wire messages, state-machine inputs, and emitted actions.

The consensus core never touches a socket or a clock: it consumes one
event at a time together with the caller's notion of now, and returns a
list of actions (sends, timer arms, trace records) for the host to
execute. Everything here is a plain frozen dataclass so state can be
copied and compared in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class ChannelClass(Enum):
    """Delivery semantics requested for a send.

    LOSSY drops, reorders and may duplicate (datagram-like); RELIABLE
    never drops and preserves per-link FIFO order (stream-like).
    """

    LOSSY = "lossy"
    RELIABLE = "reliable"


@dataclass(frozen=True, slots=True)
class LogEntry:
    term: int
    index: int
    payload: bytes = b""


# ---- messages ----


@dataclass(frozen=True, slots=True)
class HeartbeatMessage:
    term: int
    leader: int
    seq_id: int
    send_ts_us: int  # leader-local clock; echoed verbatim by the follower
    last_rtt_us: int | None
    leader_commit: int


@dataclass(frozen=True, slots=True)
class HeartbeatResponse:
    term: int
    follower: int
    echoed_send_ts_us: int
    tuned_heartbeat_us: int | None


@dataclass(frozen=True, slots=True)
class PreVoteRequest:
    # Carried term is the candidate's term + 1; the sender does not
    # increment its own term for the probe.
    term: int
    candidate: int
    last_log_term: int
    last_log_index: int


@dataclass(frozen=True, slots=True)
class PreVoteResponse:
    term: int
    voter: int
    granted: bool


@dataclass(frozen=True, slots=True)
class VoteRequest:
    term: int
    candidate: int
    last_log_term: int
    last_log_index: int


@dataclass(frozen=True, slots=True)
class VoteResponse:
    term: int
    voter: int
    granted: bool


@dataclass(frozen=True, slots=True)
class AppendEntries:
    term: int
    leader: int
    prev_log_index: int
    prev_log_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int


@dataclass(frozen=True, slots=True)
class AppendEntriesResponse:
    term: int
    follower: int
    success: bool
    match_index: int
    conflict_index: int


Message = (
    HeartbeatMessage
    | HeartbeatResponse
    | PreVoteRequest
    | PreVoteResponse
    | VoteRequest
    | VoteResponse
    | AppendEntries
    | AppendEntriesResponse
)


# ---- actions ----


@dataclass(frozen=True, slots=True)
class Send:
    dst: int
    message: Message
    channel: ChannelClass


@dataclass(frozen=True, slots=True)
class SetTimer:
    """Arm (or re-arm) a named timer.

    key is ("election",) or ("heartbeat", follower). deadline is in the
    server's local clock. generation disambiguates stale firings: the
    server bumps it on every re-arm and ignores mismatched firings.
    """

    key: tuple
    deadline_us: int
    generation: int


@dataclass(frozen=True, slots=True)
class Record:
    """Trace record for metrics; payload is a flat tuple."""

    kind: str
    payload: tuple


Action = Send | SetTimer | Record


# ---- events ----


@dataclass(frozen=True, slots=True)
class TimerFired:
    key: tuple
    generation: int


@dataclass(frozen=True, slots=True)
class MessageReceived:
    message: Message


@dataclass(frozen=True, slots=True)
class CrashInjected:
    pass


@dataclass(frozen=True, slots=True)
class RecoverInjected:
    pass


Event = TimerFired | MessageReceived | CrashInjected | RecoverInjected
