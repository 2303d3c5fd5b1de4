"""Run every bundled preset and write its report files.

Each preset gets its own subdirectory under --out (default: $DYNARAFT_OUT,
falling back to ./out). The full sweep takes under a minute; use --only to
run a subset.
"""

import argparse
import os
import sys
import time
from pathlib import Path

from dynaraft import list_presets, load_preset, parse_scenario, run_scenario, write_outputs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, help="root output directory")
    parser.add_argument(
        "--only", action="append", metavar="NAME", help="run just this preset (repeatable)"
    )
    parser.add_argument(
        "--trace", action="store_true", help="also write the rep-0 event trace per variant"
    )
    args = parser.parse_args(argv)

    root = args.out or Path(os.environ.get("DYNARAFT_OUT", "out"))
    names = [name for name, _ in list_presets()]
    if args.only:
        unknown = sorted(set(args.only) - set(names))
        if unknown:
            parser.error(f"unknown preset(s): {', '.join(unknown)}")
        names = [name for name in names if name in set(args.only)]

    all_safe = True
    for name in names:
        spec = parse_scenario(load_preset(name))
        start = time.perf_counter()
        result = run_scenario(spec)
        elapsed = time.perf_counter() - start
        files = write_outputs(result, root / name, trace=args.trace)
        all_safe = all_safe and result.all_safe()
        parts = [
            f"{variant}: {len(reps)} reps {'safe' if all(r.safety_ok for r in reps) else 'UNSAFE'}"
            for variant, reps in result.runs.items()
        ]
        print(f"{name} ({elapsed:.1f}s)  {'  '.join(parts)}")
        print(f"  -> {len(files)} files in {root / name}")

    if not all_safe:
        print("safety violation detected; see the repetitions CSVs", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
