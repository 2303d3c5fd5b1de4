"""Tuner unit tests.

Expected values are frozen from independent oracles: window statistics
recomputed by hand with statistics.pstdev, the heartbeat count checked
against a brute-force search over exact rationals, and loss rates
against direct counting.
"""

from __future__ import annotations

import math
import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynaraft.tuner import (
    MIN_HEARTBEAT_US,
    MeasurementWindow,
    TunerConfig,
    election_timeout_us,
    evaluate,
    heartbeat_interval_us,
    required_heartbeat_count,
)


def brute_force_k(p: Fraction, x: Fraction, k_max: int) -> int:
    """Oracle: scan K upward until 1 - p^K >= x, exactly."""
    for k in range(1, k_max + 1):
        if 1 - p**k >= x:
            return k
    return k_max


def make_window(rtts=(), ids=(), max_size=1000) -> MeasurementWindow:
    w = MeasurementWindow(max_size=max_size)
    for i in ids:
        w.record_id(i)
    for r in rtts:
        w.record_rtt(r)
    return w


# ---- measurement window ----


def test_rtt_window_evicts_oldest():
    w = MeasurementWindow(max_size=3)
    for r in (10, 20, 30, 40):
        w.record_rtt(r)
    assert w.rtts == [20, 30, 40]
    assert w.rtt_mean_us() == 30.0


def test_rtt_stats_match_statistics_module():
    samples = [90_000, 100_000, 110_000, 97_000, 104_000]
    w = make_window(rtts=samples)
    assert w.rtt_mean_us() == pytest.approx(statistics.fmean(samples))
    assert w.rtt_stddev_us() == pytest.approx(statistics.pstdev(samples))


def test_id_insert_keeps_ascending_order():
    w = make_window(ids=[1, 2, 4])
    assert w.record_id(3) is True
    assert w.ids == [1, 2, 3, 4]


def test_duplicate_id_rejected():
    w = make_window(ids=[3, 4])
    assert w.record_id(3) is False
    assert w.ids == [3, 4]


def test_id_window_evicts_smallest():
    w = MeasurementWindow(max_size=3)
    for i in (5, 7, 6, 9):
        w.record_id(i)
    assert w.ids == [6, 7, 9]


def test_reset_clears_everything():
    w = make_window(rtts=[100, 200], ids=[1, 2])
    w.reset()
    assert w.rtt_count == 0 and w.id_count == 0
    assert w.loss_rate() == 0.0
    assert w.rtt_mean_us() == 0.0


# ---- loss rate ----


def test_loss_rate_contiguous_ids_is_zero():
    assert make_window(ids=[4, 5, 6, 7]).loss_rate() == 0.0


def test_loss_rate_single_gap():
    # ids 1,2,4,5: expected span 5, received 4, so 1/5 missing.
    assert make_window(ids=[1, 2, 4, 5]).loss_rate() == 0.2


def test_loss_rate_short_windows_are_zero():
    assert make_window(ids=[7]).loss_rate() == 0.0
    assert make_window().loss_rate() == 0.0


def test_loss_fraction_is_exact():
    assert make_window(ids=[1, 4]).loss_fraction() == Fraction(1, 2)


# ---- election timeout ----


def test_election_timeout_default_until_warm():
    cfg = TunerConfig()
    w = make_window(rtts=[100_000] * 9, ids=range(1, 10))
    assert election_timeout_us(w, cfg) == cfg.default_election_timeout_us


def test_election_timeout_zero_variance():
    cfg = TunerConfig()
    w = make_window(rtts=[100_000] * 10, ids=range(1, 11))
    assert election_timeout_us(w, cfg) == 100_000


def test_election_timeout_frozen_example():
    # 90/100/110 ms at safety factor 2: mean 100000 us, population
    # sigma sqrt(2e8/3) = 8164.9658 us, total 116329.93 -> 116330.
    cfg = TunerConfig(min_window=3)
    w = make_window(rtts=[90_000, 100_000, 110_000], ids=[1, 2, 3])
    expected = round(100_000 + 2 * statistics.pstdev([90_000, 100_000, 110_000]))
    assert expected == 116_330
    assert election_timeout_us(w, cfg) == 116_330


def test_election_timeout_floor_applies():
    cfg = TunerConfig(min_window=3, election_timeout_floor_us=10_000)
    w = make_window(rtts=[2_000, 2_000, 2_000], ids=[1, 2, 3])
    assert election_timeout_us(w, cfg) == 10_000


# ---- required heartbeat count ----


@pytest.mark.parametrize(
    "p,expected",
    [
        (0.0, 1),
        (0.05, 3),
        (0.1, 3),  # exact boundary: 0.1**3 vs 1 - 0.999 decided rationally
        (0.15, 4),
        (0.2, 5),
        (0.25, 5),
        (0.3, 6),
        (0.5, 10),
    ],
)
def test_required_heartbeats_frozen_table(p, expected):
    cfg = TunerConfig()
    assert required_heartbeat_count(p, 0.999, cfg) == expected


def test_required_heartbeats_matches_brute_force_on_frozen_table():
    cfg = TunerConfig()
    for p in (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5):
        oracle = brute_force_k(
            Fraction(p), Fraction(0.999), cfg.max_heartbeats_per_timeout
        )
        assert required_heartbeat_count(p, 0.999, cfg) == oracle


def test_required_heartbeats_clamps_loss():
    cfg = TunerConfig()
    capped = required_heartbeat_count(cfg.loss_rate_cap, 0.999, cfg)
    assert required_heartbeat_count(0.97, 0.999, cfg) == capped


def test_required_heartbeats_caps_at_max():
    cfg = TunerConfig(loss_rate_cap=0.95)
    # At p=0.95 the exact answer is 135; the cap must bite.
    assert required_heartbeat_count(0.95, 0.999, cfg) == cfg.max_heartbeats_per_timeout


# ---- heartbeat interval ----


@pytest.mark.parametrize(
    "timeout,k,expected",
    [
        (150_000, 3, 50_000),
        (1_000_000, 1, 1_000_000),
        (116_330, 6, 19_388),
        (2_000, 6, MIN_HEARTBEAT_US),  # floor
    ],
)
def test_heartbeat_interval(timeout, k, expected):
    assert heartbeat_interval_us(timeout, k) == expected


def test_heartbeat_interval_rejects_bad_count():
    with pytest.raises(ValueError):
        heartbeat_interval_us(100_000, 0)


# ---- evaluate ----


def test_evaluate_cold_returns_exact_defaults():
    cfg = TunerConfig()
    out = evaluate(make_window(), cfg)
    assert not out.warm
    assert out.election_timeout_us == cfg.default_election_timeout_us
    assert out.heartbeat_us == cfg.default_heartbeat_us
    assert out.heartbeats_per_timeout == 10
    assert out.heartbeat_us == out.election_timeout_us // out.heartbeats_per_timeout


def test_evaluate_warm_combines_all_rules():
    cfg = TunerConfig(min_window=3)
    w = make_window(rtts=[90_000, 100_000, 110_000], ids=[1, 2, 4, 5])
    out = evaluate(w, cfg)
    assert out.warm
    assert out.election_timeout_us == 116_330
    assert out.loss_rate == 0.2
    assert out.heartbeats_per_timeout == 5
    assert out.heartbeat_us == 116_330 // 5


def test_evaluate_after_reset_is_cold_again():
    cfg = TunerConfig(min_window=2)
    w = make_window(rtts=[100, 100], ids=[1, 2])
    assert evaluate(w, cfg).warm
    w.reset()
    out = evaluate(w, cfg)
    assert not out.warm
    assert out.election_timeout_us == cfg.default_election_timeout_us
    assert out.heartbeat_us == cfg.default_heartbeat_us


def test_config_validation_rejects_bad_windows():
    with pytest.raises(ValueError):
        TunerConfig(min_window=5, max_window=4).validate()
    with pytest.raises(ValueError):
        TunerConfig(target_arrival_prob=1.0).validate()
    TunerConfig().validate()


# ---- properties ----


@settings(max_examples=300, deadline=None)
@given(
    p=st.floats(min_value=0.0, max_value=0.89, allow_nan=False),
    x=st.sampled_from([0.9, 0.99, 0.999, 0.9999]),
)
def test_required_heartbeats_minimal_against_oracle(p, x):
    cfg = TunerConfig()
    k = required_heartbeat_count(p, x, cfg)
    oracle = brute_force_k(Fraction(p), Fraction(x), cfg.max_heartbeats_per_timeout)
    assert k == oracle


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=5_000), min_size=0, max_size=400))
def test_id_window_sorted_unique_and_bounded(raw_ids):
    w = MeasurementWindow(max_size=50)
    for i in raw_ids:
        w.record_id(i)
    assert w.ids == sorted(set(w.ids))
    assert len(w.ids) <= 50


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=10_000), min_size=2, max_size=300, unique=True))
def test_loss_rate_matches_direct_count(ids):
    w = make_window(ids=ids)
    lo, hi = min(ids), max(ids)
    expected = 1 - len(set(ids)) / (hi - lo + 1)
    assert w.loss_rate() == pytest.approx(expected, abs=1e-12)
    assert 0.0 <= w.loss_rate() < 1.0


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=0.89), min_size=2, max_size=8).map(sorted)
)
def test_required_heartbeats_monotone_in_loss(ps):
    cfg = TunerConfig()
    ks = [required_heartbeat_count(p, 0.999, cfg) for p in ps]
    assert ks == sorted(ks)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(min_value=1_000, max_value=900_000), min_size=10, max_size=60))
def test_evaluate_pure_on_equal_windows(rtts):
    cfg = TunerConfig()
    ids = range(1, len(rtts) + 1)
    a = make_window(rtts=rtts, ids=ids)
    b = make_window(rtts=rtts, ids=ids)
    assert evaluate(a, cfg) == evaluate(b, cfg)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=2_000_000), min_size=1, max_size=200))
def test_rtt_running_sums_never_drift(rtts):
    w = MeasurementWindow(max_size=40)
    for r in rtts:
        w.record_rtt(r)
    assert w.rtt_mean_us() == pytest.approx(statistics.fmean(w.rtts))
    assert w.rtt_stddev_us() == pytest.approx(statistics.pstdev(w.rtts), abs=1e-6)
