#!/usr/bin/env python3
"""Print the theory verdict table; exits 2 if any check fails."""

import argparse
import sys

from rem3dr import theory


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=10_000)
    args = ap.parse_args()
    checks = theory.run_checks(seed=args.seed, containment_trials=args.trials)
    width = max(map(len, checks))
    for name, c in checks.items():
        extra = ", ".join(f"{k}={v}" for k, v in c.items() if k != "passed")
        print(f"{name:{width}s}  {'ok' if c['passed'] else 'FAIL'}  {extra}")
    return 0 if all(c["passed"] for c in checks.values()) else 2


if __name__ == "__main__":
    sys.exit(main())
