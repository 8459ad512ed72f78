#!/usr/bin/env python3
"""Generate a deterministic synthetic manifest for benchmarks and demos."""

import argparse

from convogen.synth import write_synthetic_manifest


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output manifest JSONL")
    parser.add_argument("--images", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--max-captions", type=int, default=3)
    parser.add_argument("--max-boxes", type=int, default=6)
    parser.add_argument("--max-qas", type=int, default=3)
    parser.add_argument("--no-masks", action="store_true")
    parser.add_argument("--no-depth", action="store_true")
    args = parser.parse_args()
    path = write_synthetic_manifest(
        args.out,
        args.images,
        seed=args.seed,
        max_captions=args.max_captions,
        max_boxes=args.max_boxes,
        max_qas=args.max_qas,
        with_masks=not args.no_masks,
        with_depth=not args.no_depth,
    )
    print(f"wrote {args.images} records to {path}")


if __name__ == "__main__":
    main()
