"""Command line front end: run scenario campaigns, validate scenario
files, and list the bundled presets.

Exit codes: 0 success, 1 validation or usage error, 2 safety violation.
Output directory resolution: --out, then $DYNARAFT_OUT/<scenario name>,
then ./out/<scenario name>.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .harness import VARIANTS, run_scenario
from .presets import list_presets, load_preset
from .reports import write_outputs
from .scenario import ScenarioError, parse_scenario


def _fetch_doc(args) -> dict:
    if (args.scenario is None) == (args.preset is None):
        raise ScenarioError(["give exactly one of --scenario PATH or --preset NAME"])
    if args.preset is not None:
        try:
            return load_preset(args.preset)
        except KeyError as exc:
            raise ScenarioError([str(exc.args[0])]) from None
    path = Path(args.scenario)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path} is not valid JSON: {exc}"]) from None


def _apply_overrides(doc: dict, args) -> dict:
    """Fold command line overrides into the raw document before parsing,
    so overridden values face the same validation as file contents."""
    doc = json.loads(json.dumps(doc))
    if getattr(args, "seed", None) is not None:
        doc.setdefault("cluster", {})["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        doc.setdefault("run", {})["repetitions"] = args.reps
    if getattr(args, "time_scale", None) is not None:
        doc.setdefault("run", {})["time_scale"] = args.time_scale
    if getattr(args, "variant", None):
        declared = {}
        for entry in doc.get("variants", []):
            name = entry.get("name") if isinstance(entry, dict) else entry
            declared[name] = entry
        doc["variants"] = [declared.get(v, v) for v in args.variant]
    return doc


def _out_dir(args, name: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get("DYNARAFT_OUT")
    if env:
        return Path(env) / name
    return Path("out") / name


def cmd_run(args) -> int:
    try:
        doc = _apply_overrides(_fetch_doc(args), args)
        spec = parse_scenario(doc)
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        return 1
    out_dir = _out_dir(args, spec.name)
    print(
        f"{spec.name}: n={spec.n} seed={spec.seed} reps={spec.repetitions} "
        f"duration={spec.duration_us / 1e6:.3f}s (x{spec.time_scale:g} compression) "
        f"variants={', '.join(spec.variants)}"
    )

    def progress(variant: str, rep: int) -> None:
        if rep == 0 or (rep + 1) % 10 == 0 or rep + 1 == spec.repetitions:
            print(f"  {variant}: rep {rep + 1}/{spec.repetitions}", flush=True)

    result = run_scenario(spec, progress=progress)
    written = write_outputs(result, out_dir, trace=args.trace)

    summary = json.loads((out_dir / "summary.json").read_text())
    for variant, stats in summary["variants"].items():
        det = stats["detection_ms"]
        ots = stats["ots_ms"]
        det_txt = f"detection mean {det['mean']:.1f} ms" if det["n"] else "no detections"
        ots_txt = f"ots mean {ots['mean']:.1f} ms" if ots["n"] else "no ots"
        safe_txt = "safe" if stats["all_safe"] else "SAFETY VIOLATION"
        print(f"  {variant}: {det_txt}, {ots_txt}, {safe_txt}")
    print(f"wrote {len(written)} files to {out_dir}")

    if not result.all_safe():
        for variant, reps in result.runs.items():
            for r in reps:
                if not r.safety_ok:
                    print(f"safety violation: {variant} rep {r.rep}: {r.safety_msg}", file=sys.stderr)
        return 2
    return 0


def cmd_validate(args) -> int:
    try:
        doc = _fetch_doc(args)
        spec = parse_scenario(doc)
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        return 1
    faults = ", ".join(f"{f.kind} {f.target}@{f.at_us / 1000:.0f}ms" for f in spec.faults) or "none"
    print(f"ok: {spec.name}")
    print(f"  cluster: n={spec.n} seed={spec.seed}")
    print(f"  variants: {', '.join(spec.variants)}")
    print(
        f"  run: {spec.repetitions} reps x {spec.duration_us / 1e6:.3f}s simulated "
        f"(time_scale {spec.time_scale:g})"
    )
    print(f"  link segments: {len(spec.default_link.segments)}, faults: {faults}")
    return 0


def cmd_presets(_args) -> int:
    for name, description in list_presets():
        print(f"{name}: {description}")
    return 0


def _add_scenario_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, help="path to a scenario JSON file")
    p.add_argument("--preset", help="name of a bundled scenario")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynaraft",
        description="Deterministic cluster simulations comparing static and "
        "link-tuned election timers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario campaign and write reports")
    _add_scenario_source(run_p)
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--reps", type=int, help="override the repetition count")
    run_p.add_argument(
        "--variant",
        action="append",
        choices=sorted(VARIANTS),
        help="run only this variant (repeatable)",
    )
    run_p.add_argument(
        "--time-scale", type=float, dest="time_scale", help="override wall-clock compression"
    )
    run_p.add_argument("--out", type=Path, help="output directory")
    run_p.add_argument(
        "--trace", action="store_true", help="also dump repetition 0 event traces as ndjson"
    )
    run_p.set_defaults(fn=cmd_run)

    val_p = sub.add_parser("validate", help="check a scenario file without running it")
    _add_scenario_source(val_p)
    val_p.set_defaults(fn=cmd_validate)

    pre_p = sub.add_parser("presets", help="list bundled scenarios")
    pre_p.set_defaults(fn=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
