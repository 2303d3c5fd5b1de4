"""Per-link measurement windows and election-parameter derivation.

A follower samples the link to its current leader through the heartbeat
exchange: round-trip times echoed by the leader and the sequence ids of
the heartbeats it actually received. From those two bounded windows it
derives an election timeout (mean RTT plus a safety margin of standard
deviations), the number of heartbeats that must fit inside one timeout
so that at least one arrives with the target probability, and the
heartbeat interval as their quotient. All durations are integer
microseconds.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from dataclasses import dataclass
from fractions import Fraction

# Hard floor for the derived heartbeat interval.
MIN_HEARTBEAT_US = 1_000


@dataclass
class TunerConfig:
    """Knobs for the tuning rules, expressed in behavioral terms.

    safety_factor: sigma multiplier on top of the mean RTT.
    target_arrival_prob: required probability that at least one
        heartbeat lands inside an election timeout window.
    min_window: samples needed before a window is trusted (warm).
    max_window: bound on stored samples; oldest evicted first.
    """

    safety_factor: float = 2.0
    target_arrival_prob: float = 0.999
    min_window: int = 10
    max_window: int = 1000
    default_election_timeout_us: int = 1_000_000
    default_heartbeat_us: int = 100_000
    election_timeout_floor_us: int = 10_000
    max_heartbeats_per_timeout: int = 64
    loss_rate_cap: float = 0.9

    def validate(self) -> None:
        if self.min_window < 1 or self.max_window < self.min_window:
            raise ValueError("window bounds must satisfy 1 <= min <= max")
        if not (0.0 < self.target_arrival_prob < 1.0):
            raise ValueError("target_arrival_prob must lie in (0, 1)")
        if self.safety_factor < 0.0:
            raise ValueError("safety_factor must be non-negative")
        if self.default_heartbeat_us <= 0 or self.default_election_timeout_us <= 0:
            raise ValueError("defaults must be positive")
        if self.default_heartbeat_us > self.default_election_timeout_us:
            raise ValueError("default heartbeat must not exceed default election timeout")
        if self.election_timeout_floor_us <= 0:
            raise ValueError("election timeout floor must be positive")
        if not (0.0 <= self.loss_rate_cap < 1.0):
            raise ValueError("loss_rate_cap must lie in [0, 1)")
        if self.max_heartbeats_per_timeout < 1:
            raise ValueError("max_heartbeats_per_timeout must be at least 1")


@dataclass(frozen=True)
class TuningOutput:
    """One evaluation of the tuning rules for a link."""

    election_timeout_us: int
    heartbeat_us: int
    heartbeats_per_timeout: int
    loss_rate: float
    warm: bool


class MeasurementWindow:
    """Bounded RTT samples and received heartbeat ids for one link."""

    __slots__ = ("max_size", "rtts", "ids", "_rtt_sum", "_rtt_sumsq")

    def __init__(self, max_size: int = 1000) -> None:
        if max_size < 1:
            raise ValueError("max_size must be at least 1")
        self.max_size = max_size
        self.rtts: list[int] = []
        self.ids: list[int] = []
        self._rtt_sum = 0
        self._rtt_sumsq = 0

    def reset(self) -> None:
        """Discard all samples; used on election timeouts and term changes."""
        self.rtts.clear()
        self.ids.clear()
        self._rtt_sum = 0
        self._rtt_sumsq = 0

    def record_rtt(self, rtt_us: int) -> None:
        if rtt_us < 0:
            raise ValueError("rtt must be non-negative")
        self.rtts.append(rtt_us)
        self._rtt_sum += rtt_us
        self._rtt_sumsq += rtt_us * rtt_us
        if len(self.rtts) > self.max_size:
            old = self.rtts.pop(0)
            self._rtt_sum -= old
            self._rtt_sumsq -= old * old

    def record_id(self, seq_id: int) -> bool:
        """Insert a heartbeat id, keeping the list ascending and unique.

        Returns False for duplicates so repeat deliveries are ignored
        for measurement.
        """
        pos = bisect_left(self.ids, seq_id)
        if pos < len(self.ids) and self.ids[pos] == seq_id:
            return False
        insort(self.ids, seq_id)
        if len(self.ids) > self.max_size:
            self.ids.pop(0)
        return True

    @property
    def rtt_count(self) -> int:
        return len(self.rtts)

    @property
    def id_count(self) -> int:
        return len(self.ids)

    def rtt_mean_us(self) -> float:
        if not self.rtts:
            return 0.0
        return self._rtt_sum / len(self.rtts)

    def rtt_stddev_us(self) -> float:
        """Population standard deviation of the stored RTT samples."""
        n = len(self.rtts)
        if n == 0:
            return 0.0
        mean = self._rtt_sum / n
        var = self._rtt_sumsq / n - mean * mean
        return math.sqrt(var) if var > 0.0 else 0.0

    def loss_fraction(self) -> Fraction:
        """Exact observed loss on the id window.

        One minus received over expected, where expected spans the
        lowest to the highest id currently held.
        """
        if len(self.ids) < 2:
            return Fraction(0)
        span = self.ids[-1] - self.ids[0] + 1
        return Fraction(span - len(self.ids), span)

    def loss_rate(self) -> float:
        return float(self.loss_fraction())


def required_heartbeat_count(
    loss_rate: float | Fraction, target_prob: float, cfg: TunerConfig
) -> int:
    """Smallest K such that at least one of K sends survives loss with
    probability >= target_prob, so 1 - p^K >= x.

    Exact rational comparison: the float log/ceil form misses cases
    where p^K lands on the boundary (p=0.1, x=0.999 gives K=3, but
    ceil(log(0.001)/log(0.1)) evaluates to 4 in binary floating point).
    """
    p = Fraction(loss_rate)
    cap = Fraction(cfg.loss_rate_cap)
    if p > cap:
        p = cap
    if p <= 0:
        return 1
    budget = 1 - Fraction(target_prob)
    if budget <= 0:
        return cfg.max_heartbeats_per_timeout
    surviving = p
    for k in range(1, cfg.max_heartbeats_per_timeout):
        if surviving <= budget:
            return k
        surviving *= p
    return cfg.max_heartbeats_per_timeout


def election_timeout_us(window: MeasurementWindow, cfg: TunerConfig) -> int:
    """Mean RTT plus safety_factor sigma, floored; default until warm."""
    if window.rtt_count < cfg.min_window:
        return cfg.default_election_timeout_us
    raw = window.rtt_mean_us() + cfg.safety_factor * window.rtt_stddev_us()
    return max(cfg.election_timeout_floor_us, int(round(raw)))


def heartbeat_interval_us(timeout_us: int, heartbeats: int) -> int:
    """Timeout divided by the heartbeat count, floored to whole
    microseconds, never below the global minimum."""
    if heartbeats < 1:
        raise ValueError("heartbeat count must be positive")
    return max(MIN_HEARTBEAT_US, timeout_us // heartbeats)


def evaluate(window: MeasurementWindow, cfg: TunerConfig) -> TuningOutput:
    """Full tuning pass over one window.

    Cold windows yield the configured defaults; record_rtt only ever
    follows a fresh record_id, so the id list is at least as long as
    the RTT list and a single warm flag covers both.
    """
    warm = window.rtt_count >= cfg.min_window and window.id_count >= cfg.min_window
    loss = window.loss_fraction()
    if not warm:
        k = max(1, cfg.default_election_timeout_us // cfg.default_heartbeat_us)
        return TuningOutput(
            election_timeout_us=cfg.default_election_timeout_us,
            heartbeat_us=cfg.default_heartbeat_us,
            heartbeats_per_timeout=k,
            loss_rate=float(loss),
            warm=False,
        )
    timeout = election_timeout_us(window, cfg)
    k = required_heartbeat_count(loss, cfg.target_arrival_prob, cfg)
    return TuningOutput(
        election_timeout_us=timeout,
        heartbeat_us=heartbeat_interval_us(timeout, k),
        heartbeats_per_timeout=k,
        loss_rate=float(loss),
        warm=True,
    )
