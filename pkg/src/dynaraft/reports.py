"""Report emitters: turn a ScenarioResult into CSV and JSON artifacts.

Times in files are milliseconds with microsecond precision (3 decimal
places); internal values stay in integer microseconds. Output is
deterministic: same scenario and seed give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .harness import (
    RepResult,
    ScenarioResult,
    ScenarioSpec,
    armed_timeouts_at_detection_us,
    count_events,
    detection_times_us,
    election_count,
    first_leader_us,
    leaderless_intervals_us,
    summarize,
    term_values,
)
from .scenario import spec_to_doc

REPETITION_COLUMNS = [
    "rep",
    "base_seed",
    "digest",
    "safe",
    "first_leader_ms",
    "detection_ms",
    "ots_ms",
    "ots_intervals",
    "armed_timeout_mean_ms",
    "elections",
    "prevote_rounds",
    "max_term",
    "hb_sends",
]

CDF_POINTS = 201


def _ms(us: float | int | None) -> str:
    return "" if us is None else f"{us / 1000:.3f}"


def rep_metrics(spec: ScenarioSpec, r: RepResult) -> dict:
    detections = detection_times_us(r.events)
    snapshots = armed_timeouts_at_detection_us(r.events)
    gaps = leaderless_intervals_us(r.events, spec.duration_us)
    armed = None
    if snapshots and snapshots[0]:
        armed = sum(snapshots[0]) / len(snapshots[0])
    return {
        "rep": r.rep,
        "base_seed": r.base_seed,
        "digest": r.digest,
        "safe": int(r.safety_ok),
        "first_leader_us": first_leader_us(r.events),
        "detection_us": detections[0] if detections else None,
        "ots_us": sum(b - a for a, b in gaps),
        "ots_intervals": len(gaps),
        "armed_timeout_mean_us": armed,
        "elections": election_count(r.events),
        "prevote_rounds": count_events(r.events, "prevote_round"),
        "max_term": max(term_values(r.events), default=0),
        "hb_sends": count_events(r.events, "hb_send"),
    }


def _write_repetitions_csv(path: Path, spec: ScenarioSpec, reps: list[RepResult]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPETITION_COLUMNS)
        for r in reps:
            m = rep_metrics(spec, r)
            w.writerow(
                [
                    m["rep"],
                    m["base_seed"],
                    m["digest"],
                    m["safe"],
                    _ms(m["first_leader_us"]),
                    _ms(m["detection_us"]),
                    _ms(m["ots_us"]),
                    m["ots_intervals"],
                    _ms(m["armed_timeout_mean_us"]),
                    m["elections"],
                    m["prevote_rounds"],
                    m["max_term"],
                    m["hb_sends"],
                ]
            )


def _write_timeouts_csv(path: Path, events) -> bool:
    rows = [(t, sid, p[0]) for t, sid, kind, p in events if kind == "etimer"]
    if not rows:
        return False
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ms", "server", "randomized_timeout_ms"])
        for t, sid, draw in rows:
            w.writerow([_ms(t), sid, _ms(draw)])
    return True


def _write_tuning_csv(path: Path, events) -> bool:
    rows = [(t, sid, p) for t, sid, kind, p in events if kind == "tune"]
    if not rows:
        return False
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ms", "server", "leader", "et_ms", "h_ms", "k", "loss", "warm"])
        for t, sid, p in rows:
            leader, et_us, h_us, k, loss, warm = p
            w.writerow([_ms(t), sid, leader, _ms(et_us), _ms(h_us), k, f"{loss:.6f}", warm])
    return True


def _write_heartbeat_rate_csv(path: Path, events, duration_us: int) -> bool:
    times = [t for t, _, kind, _ in events if kind == "hb_send"]
    if not times:
        return False
    buckets = np.bincount(
        [min(t // 1_000_000, duration_us // 1_000_000) for t in times],
        minlength=duration_us // 1_000_000 + 1,
    )
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "sends_per_s"])
        for sec, n in enumerate(buckets):
            w.writerow([sec, int(n)])
    return True


def _write_ots_csv(path: Path, events, duration_us: int) -> bool:
    gaps = leaderless_intervals_us(events, duration_us)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_ms", "end_ms"])
        for a, b in gaps:
            w.writerow([_ms(a), _ms(b)])
    return True


def _cdf_points(values_us: list[int]) -> list[float]:
    if not values_us:
        return []
    qs = np.linspace(0, 100, CDF_POINTS)
    pts = np.percentile(np.asarray(values_us, dtype=float) / 1000, qs)
    return [round(float(v), 3) for v in pts]


def _summary_ms(values_us) -> dict:
    stats = summarize(values_us)
    return {k: (v if k == "n" else round(v / 1000, 3)) for k, v in stats.items()}


def variant_summary(spec: ScenarioSpec, reps: list[RepResult]) -> dict:
    metrics = [rep_metrics(spec, r) for r in reps]
    detections = [m["detection_us"] for m in metrics if m["detection_us"] is not None]
    ots = [m["ots_us"] for m in metrics]
    first = [m["first_leader_us"] for m in metrics if m["first_leader_us"] is not None]
    return {
        "repetitions": len(reps),
        "all_safe": all(r.safety_ok for r in reps),
        "digest_rep0": reps[0].digest,
        "detection_ms": _summary_ms(detections),
        "ots_ms": _summary_ms(ots),
        "first_leader_ms": _summary_ms(first),
        "elections_total": sum(m["elections"] for m in metrics),
        "prevote_rounds_total": sum(m["prevote_rounds"] for m in metrics),
        "cdf": {
            "detection_ms": _cdf_points(detections),
            "ots_ms": _cdf_points(ots),
        },
    }


def write_outputs(result: ScenarioResult, out_dir: Path, trace: bool = False) -> list[Path]:
    spec = result.spec
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, writer, *args) -> None:
        path = out_dir / name
        if writer(path, *args):
            written.append(path)

    summary = {"scenario": spec_to_doc(spec), "variants": {}}
    for variant, reps in result.runs.items():
        path = out_dir / f"{variant}_repetitions.csv"
        _write_repetitions_csv(path, spec, reps)
        written.append(path)
        summary["variants"][variant] = variant_summary(spec, reps)

        rep0 = reps[0]
        emit(f"{variant}_timeouts.csv", _write_timeouts_csv, rep0.events)
        emit(f"{variant}_tuning.csv", _write_tuning_csv, rep0.events)
        emit(
            f"{variant}_heartbeat_rate.csv",
            _write_heartbeat_rate_csv,
            rep0.events,
            spec.duration_us,
        )
        emit(f"{variant}_ots.csv", _write_ots_csv, rep0.events, spec.duration_us)
        if trace:
            tpath = out_dir / f"{variant}_rep0_trace.ndjson"
            with tpath.open("w") as fh:
                for t, sid, kind, payload in rep0.events:
                    fh.write(
                        json.dumps(
                            {"t_us": t, "server": sid, "kind": kind, "payload": list(payload)}
                        )
                        + "\n"
                    )
            written.append(tpath)

    spath = out_dir / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(spath)
    return written
