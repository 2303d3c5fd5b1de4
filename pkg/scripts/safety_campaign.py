"""Randomized safety sweep over generated scenarios.

Draws scenarios from the harness generator, runs each campaign twice, and
audits every repetition for election safety and log matching. The second
run must reproduce the first run's digests bit for bit. Exits 2 on a
safety violation, 1 on a reproducibility mismatch.
"""

import argparse
import random
import sys
import time

from dynaraft import random_scenario, run_scenario


def digests(result) -> dict:
    return {variant: [r.digest for r in reps] for variant, reps in result.runs.items()}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--count", type=int, default=200, help="number of scenarios (default 200)")
    parser.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    parser.add_argument(
        "--single", action="store_true", help="run each scenario once, skipping the rerun"
    )
    args = parser.parse_args(argv)

    rng = random.Random(args.seed)
    violations = []
    mismatches = []
    start = time.perf_counter()
    for i in range(args.count):
        spec = random_scenario(rng, i)
        result = run_scenario(spec)
        for reps in result.runs.values():
            for r in reps:
                if not r.safety_ok:
                    violations.append((i, r.variant, r.rep, r.safety_msg))
        if not args.single and digests(run_scenario(spec)) != digests(result):
            mismatches.append(i)
        if (i + 1) % 50 == 0:
            print(f"{i + 1}/{args.count} scenarios, {time.perf_counter() - start:.0f}s")

    elapsed = time.perf_counter() - start
    print(f"{args.count} scenarios in {elapsed:.0f}s: "
          f"{len(violations)} safety violations, {len(mismatches)} digest mismatches")
    for i, variant, rep, msg in violations:
        print(f"  scenario {i} {variant} rep {rep}: {msg}", file=sys.stderr)
    for i in mismatches:
        print(f"  scenario {i}: rerun produced different digests", file=sys.stderr)
    if violations:
        return 2
    if mismatches:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
