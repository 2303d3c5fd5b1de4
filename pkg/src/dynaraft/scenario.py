"""Scenario files: JSON documents describing a cluster, link
conditions, faults, and run parameters, in milliseconds.

Times in the file are wall-clock milliseconds. run.time_scale divides
every *scheduled* time (durations, fault times, segment boundaries) so
long experiments compress onto a desk; per-message delays, timeouts,
and clock offsets are physical quantities and are never scaled.

Parsing is strict: unknown keys and out-of-range values are collected
with their JSON paths and reported together.
"""

from __future__ import annotations

import json
from pathlib import Path

from .harness import Fault, ScenarioSpec, VARIANTS
from .simnet import LinkProfile, Segment

RECORD_KINDS = frozenset(
    {
        "role",
        "term",
        "etimer",
        "hb_send",
        "rtt",
        "tune",
        "leader_h",
        "commit",
        "prevote_round",
        "fault",
    }
)

_TOP_KEYS = {
    "name",
    "description",
    "cluster",
    "variants",
    "links",
    "faults",
    "clock_offsets_ms",
    "tuning",
    "run",
    "record",
    "duplication_rate",
}

_TUNING_KEYS = {
    "safety_factor",
    "target_arrival_prob",
    "min_window",
    "max_window",
    "election_timeout_floor_ms",
    "max_heartbeats_per_timeout",
    "loss_rate_cap",
}

_VARIANT_PARAM_KEYS = {"election_timeout_ms", "heartbeat_ms", "fixed_k"}


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {e}" for e in errors))


def _ms_to_us(value: float) -> int:
    return int(round(value * 1000))


class _Parser:
    def __init__(self, doc: dict):
        self.doc = doc
        self.errors: list[str] = []

    def fail(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def number(self, value, path, minimum=None, maximum=None, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
            return None
        if integer and not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
            return None
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value}")
            return None
        if maximum is not None and value >= maximum:
            self.fail(path, f"must be < {maximum}, got {value}")
            return None
        return value

    def check_keys(self, obj: dict, allowed: set[str], path: str) -> None:
        extra = set(obj) - allowed
        for key in sorted(extra):
            self.fail(f"{path}.{key}" if path else key, "unknown key")

    def segment(self, obj, path, scale) -> Segment | None:
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
            return None
        self.check_keys(obj, {"at_ms", "rtt_ms", "loss", "jitter_ms"}, path)
        at = self.number(obj.get("at_ms", 0), f"{path}.at_ms", minimum=0)
        rtt = self.number(obj.get("rtt_ms"), f"{path}.rtt_ms", minimum=0.001)
        loss = self.number(obj.get("loss", 0.0), f"{path}.loss", minimum=0.0, maximum=1.0)
        jitter = self.number(obj.get("jitter_ms", 0), f"{path}.jitter_ms", minimum=0)
        if None in (at, rtt, loss, jitter):
            return None
        return Segment(
            start_us=int(round(_ms_to_us(at) / scale)),
            rtt_us=_ms_to_us(rtt),
            loss_rate=float(loss),
            jitter_us=_ms_to_us(jitter),
        )

    def profile(self, obj, path, scale) -> LinkProfile | None:
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
            return None
        self.check_keys(obj, {"segments"}, path)
        segs_doc = obj.get("segments")
        if not isinstance(segs_doc, list) or not segs_doc:
            self.fail(f"{path}.segments", "expected a non-empty list")
            return None
        segs = []
        for i, sdoc in enumerate(segs_doc):
            seg = self.segment(sdoc, f"{path}.segments[{i}]", scale)
            if seg is not None:
                segs.append(seg)
        if len(segs) != len(segs_doc):
            return None
        if segs[0].start_us != 0:
            self.fail(f"{path}.segments[0].at_ms", "first segment must start at 0")
            return None
        for i in range(1, len(segs)):
            if segs[i].start_us <= segs[i - 1].start_us:
                self.fail(
                    f"{path}.segments[{i}].at_ms",
                    "must be later than the previous segment (after time_scale)",
                )
                return None
        return LinkProfile(segs)

    def parse(self) -> ScenarioSpec:
        doc = self.doc
        if not isinstance(doc, dict):
            raise ScenarioError(["document root must be an object"])
        self.check_keys(doc, _TOP_KEYS, "")

        name = doc.get("name")
        if not isinstance(name, str) or not name:
            self.fail("name", "expected a non-empty string")
            name = "unnamed"

        cluster = doc.get("cluster")
        n, seed = 3, 0
        if not isinstance(cluster, dict):
            self.fail("cluster", "expected an object with n and seed")
        else:
            self.check_keys(cluster, {"n", "seed"}, "cluster")
            n = self.number(cluster.get("n"), "cluster.n", minimum=3, integer=True) or 3
            seed = self.number(cluster.get("seed", 0), "cluster.seed", integer=True)
            seed = 0 if seed is None else seed

        run = doc.get("run")
        duration_us, reps, scale = 1, 1, 1.0
        if not isinstance(run, dict):
            self.fail("run", "expected an object with duration_ms and repetitions")
        else:
            self.check_keys(run, {"duration_ms", "repetitions", "time_scale"}, "run")
            dur = self.number(run.get("duration_ms"), "run.duration_ms", minimum=0.001)
            reps = (
                self.number(run.get("repetitions", 1), "run.repetitions", minimum=1, integer=True)
                or 1
            )
            scale = self.number(run.get("time_scale", 1), "run.time_scale", minimum=1) or 1.0
            if dur is not None:
                duration_us = max(1, int(round(_ms_to_us(dur) / scale)))

        variants: list[str] = []
        variant_overrides: dict[str, dict] = {}
        vdoc = doc.get("variants")
        if not isinstance(vdoc, list) or not vdoc:
            self.fail("variants", "expected a non-empty list")
        else:
            for i, entry in enumerate(vdoc):
                path = f"variants[{i}]"
                if isinstance(entry, str):
                    vname, params = entry, {}
                elif isinstance(entry, dict):
                    self.check_keys(entry, {"name", "params"}, path)
                    vname = entry.get("name")
                    params = entry.get("params", {})
                    if not isinstance(params, dict):
                        self.fail(f"{path}.params", "expected an object")
                        params = {}
                else:
                    self.fail(path, "expected a variant name or object")
                    continue
                if vname not in VARIANTS:
                    self.fail(path, f"unknown variant {vname!r} (have {sorted(VARIANTS)})")
                    continue
                if vname in variants:
                    self.fail(path, f"variant {vname!r} listed twice")
                    continue
                variants.append(vname)
                if vname == "fix-k" and "fixed_k" not in params:
                    self.fail(
                        f"{path}.params.fixed_k",
                        "fix-k requires an explicit heartbeats-per-timeout count",
                    )
                if params:
                    self.check_keys(params, _VARIANT_PARAM_KEYS, f"{path}.params")
                    ov = {}
                    if "election_timeout_ms" in params:
                        v = self.number(
                            params["election_timeout_ms"],
                            f"{path}.params.election_timeout_ms",
                            minimum=0.001,
                        )
                        if v is not None:
                            ov["election_timeout_us"] = _ms_to_us(v)
                    if "heartbeat_ms" in params:
                        v = self.number(
                            params["heartbeat_ms"], f"{path}.params.heartbeat_ms", minimum=0.001
                        )
                        if v is not None:
                            ov["heartbeat_us"] = _ms_to_us(v)
                    if "fixed_k" in params:
                        v = self.number(
                            params["fixed_k"], f"{path}.params.fixed_k", minimum=1, integer=True
                        )
                        if v is not None:
                            ov["fixed_k"] = v
                    if ov:
                        variant_overrides[vname] = ov

        links = doc.get("links")
        default_link = LinkProfile.constant(1)
        overrides: dict[tuple[int, int], LinkProfile] = {}
        if not isinstance(links, dict):
            self.fail("links", "expected an object with a default profile")
        else:
            self.check_keys(links, {"default", "overrides"}, "links")
            prof = self.profile(links.get("default"), "links.default", scale)
            if prof is not None:
                default_link = prof
            odoc = links.get("overrides", {})
            if not isinstance(odoc, dict):
                self.fail("links.overrides", "expected an object keyed 'a-b'")
            else:
                for key, pdoc in odoc.items():
                    path = f"links.overrides.{key}"
                    parts = key.split("-")
                    try:
                        a, b = sorted(int(p) for p in parts)
                    except ValueError:
                        self.fail(path, "key must look like '0-2'")
                        continue
                    if len(parts) != 2 or a == b or not (0 <= a < n and 0 <= b < n):
                        self.fail(path, f"not a valid pair for a {n}-server cluster")
                        continue
                    prof = self.profile(pdoc, path, scale)
                    if prof is not None:
                        overrides[(a, b)] = prof

        faults: list[Fault] = []
        fdoc = doc.get("faults", [])
        if not isinstance(fdoc, list):
            self.fail("faults", "expected a list")
        else:
            for i, entry in enumerate(fdoc):
                path = f"faults[{i}]"
                if not isinstance(entry, dict):
                    self.fail(path, "expected an object")
                    continue
                self.check_keys(entry, {"kind", "target", "at_ms"}, path)
                kind = entry.get("kind")
                if kind not in ("crash", "recover"):
                    self.fail(f"{path}.kind", f"expected crash|recover, got {kind!r}")
                    continue
                target = entry.get("target")
                if target != "leader" and not (
                    isinstance(target, int) and not isinstance(target, bool)
                ):
                    self.fail(f"{path}.target", "expected a server id or 'leader'")
                    continue
                at = self.number(entry.get("at_ms"), f"{path}.at_ms", minimum=0)
                if at is None:
                    continue
                faults.append(Fault(kind, target, int(round(_ms_to_us(at) / scale))))

        offsets: dict[int, int] = {}
        offdoc = doc.get("clock_offsets_ms", {})
        if not isinstance(offdoc, dict):
            self.fail("clock_offsets_ms", "expected an object keyed by server id")
        else:
            for key, value in offdoc.items():
                path = f"clock_offsets_ms.{key}"
                try:
                    sid = int(key)
                except ValueError:
                    self.fail(path, "key must be a server id")
                    continue
                if not (0 <= sid < n):
                    self.fail(path, f"server id out of range for n={n}")
                    continue
                v = self.number(value, path)
                if v is not None:
                    offsets[sid] = _ms_to_us(v)

        tuner_params: dict = {}
        tdoc = doc.get("tuning", {})
        if not isinstance(tdoc, dict):
            self.fail("tuning", "expected an object")
        else:
            self.check_keys(tdoc, _TUNING_KEYS, "tuning")
            for key in ("safety_factor", "target_arrival_prob", "loss_rate_cap"):
                if key in tdoc:
                    v = self.number(tdoc[key], f"tuning.{key}", minimum=0)
                    if v is not None:
                        tuner_params[key] = float(v)
            for key in ("min_window", "max_window", "max_heartbeats_per_timeout"):
                if key in tdoc:
                    v = self.number(tdoc[key], f"tuning.{key}", minimum=1, integer=True)
                    if v is not None:
                        tuner_params[key] = v
            if "election_timeout_floor_ms" in tdoc:
                v = self.number(
                    tdoc["election_timeout_floor_ms"],
                    "tuning.election_timeout_floor_ms",
                    minimum=0.001,
                )
                if v is not None:
                    tuner_params["election_timeout_floor_us"] = _ms_to_us(v)

        record: frozenset[str] | None = None
        rdoc = doc.get("record")
        if rdoc is not None:
            if not isinstance(rdoc, list):
                self.fail("record", "expected a list of record kinds or null")
            else:
                kinds = set()
                for i, k in enumerate(rdoc):
                    if k not in RECORD_KINDS:
                        self.fail(f"record[{i}]", f"unknown kind {k!r}")
                    else:
                        kinds.add(k)
                record = frozenset(kinds)

        dup = self.number(
            doc.get("duplication_rate", 0.0), "duplication_rate", minimum=0.0, maximum=1.0
        )

        if self.errors:
            raise ScenarioError(self.errors)

        spec = ScenarioSpec(
            name=name,
            n=n,
            seed=seed,
            variants=tuple(variants),
            default_link=default_link,
            duration_us=duration_us,
            repetitions=reps,
            overrides=overrides,
            faults=tuple(sorted(faults, key=lambda f: f.at_us)),
            clock_offsets_us=offsets,
            tuner_params=tuner_params,
            record_kinds=record,
            duplication_rate=float(dup or 0.0),
            variant_overrides=variant_overrides,
            time_scale=float(scale),
        )
        try:
            spec.validate()
        except ValueError as exc:
            raise ScenarioError([str(exc)]) from exc
        return spec


def parse_scenario(doc: dict) -> ScenarioSpec:
    return _Parser(doc).parse()


def load_scenario(path: str | Path) -> ScenarioSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"not valid JSON: {exc}"]) from exc
    return parse_scenario(doc)


def spec_to_doc(spec: ScenarioSpec) -> dict:
    """Inverse of parse_scenario: scheduled times are multiplied back by
    time_scale so that parse_scenario(spec_to_doc(s)) equals s field-wise."""
    scale = spec.time_scale

    def sched_ms(us: int) -> float:
        return us * scale / 1000

    def phys_ms(us: int) -> float:
        return us / 1000

    def profile_doc(profile: LinkProfile) -> dict:
        return {
            "segments": [
                {
                    "at_ms": sched_ms(s.start_us),
                    "rtt_ms": phys_ms(s.rtt_us),
                    "loss": s.loss_rate,
                    "jitter_ms": phys_ms(s.jitter_us),
                }
                for s in profile.segments
            ]
        }

    variants: list = []
    for vname in spec.variants:
        ov = dict(spec.variant_overrides.get(vname, {}))
        if vname == "fix-k" and "fixed_k" not in ov:
            ov["fixed_k"] = VARIANTS[vname].fixed_k
        if not ov:
            variants.append(vname)
            continue
        params = {}
        if "election_timeout_us" in ov:
            params["election_timeout_ms"] = phys_ms(ov["election_timeout_us"])
        if "heartbeat_us" in ov:
            params["heartbeat_ms"] = phys_ms(ov["heartbeat_us"])
        if "fixed_k" in ov:
            params["fixed_k"] = ov["fixed_k"]
        variants.append({"name": vname, "params": params})

    doc: dict = {
        "name": spec.name,
        "cluster": {"n": spec.n, "seed": spec.seed},
        "variants": variants,
        "links": {"default": profile_doc(spec.default_link)},
        "run": {
            "duration_ms": sched_ms(spec.duration_us),
            "repetitions": spec.repetitions,
            "time_scale": scale,
        },
    }
    if spec.overrides:
        doc["links"]["overrides"] = {
            f"{a}-{b}": profile_doc(p) for (a, b), p in sorted(spec.overrides.items())
        }
    if spec.faults:
        doc["faults"] = [
            {"kind": f.kind, "target": f.target, "at_ms": sched_ms(f.at_us)} for f in spec.faults
        ]
    if spec.clock_offsets_us:
        doc["clock_offsets_ms"] = {
            str(sid): phys_ms(v) for sid, v in sorted(spec.clock_offsets_us.items())
        }
    if spec.tuner_params:
        tuning = dict(spec.tuner_params)
        if "election_timeout_floor_us" in tuning:
            tuning["election_timeout_floor_ms"] = phys_ms(tuning.pop("election_timeout_floor_us"))
        doc["tuning"] = tuning
    if spec.record_kinds is not None:
        doc["record"] = sorted(spec.record_kinds)
    if spec.duplication_rate:
        doc["duplication_rate"] = spec.duplication_rate
    return doc
