#!/usr/bin/env python3
"""Run the feature-toggle efficiency table and print it.

Equivalent to `convogen bench`; kept as a script so experiment settings can
be edited in one place.
"""

import argparse
from pathlib import Path

from convogen.bench import ROWS, format_table, run_bench

REPO_ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="bench_work", help="working directory")
    parser.add_argument("--images", type=int, default=500)
    parser.add_argument("--parallelism", type=int, default=16)
    parser.add_argument("--latency-base-ms", type=float, default=1.0)
    parser.add_argument("--latency-per-char-ms", type=float, default=0.5)
    parser.add_argument("--sidecar-ms", type=int, default=1500)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    results = run_bench(
        args.out,
        REPO_ROOT / "prompts",
        images=args.images,
        seed=args.seed,
        rows=ROWS,
        parallelism=args.parallelism,
        latency_base_ms=args.latency_base_ms,
        latency_per_char_ms=args.latency_per_char_ms,
        sidecar_ms=args.sidecar_ms,
    )
    print(format_table(results))


if __name__ == "__main__":
    main()
