#!/usr/bin/env python3
"""Convert a raw dataset file into the unified manifest format.

Adapters: coco-captions (COCO-style captions JSON), object-boxes
(Visual-Genome-style objects JSON), qa-jsonl (one QA row per line).
See convogen.adapters for the adapter contract.
"""

import argparse
import json

from convogen.adapters import ADAPTERS


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--adapter", required=True, choices=sorted(ADAPTERS))
    parser.add_argument("--source", required=True, help="raw dataset file")
    parser.add_argument("--dataset-id", required=True)
    parser.add_argument("--out", required=True, help="output manifest JSONL")
    args = parser.parse_args()
    adapter = ADAPTERS[args.adapter]
    count = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in adapter(args.source, args.dataset_id):
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    print(f"wrote {count} records to {args.out}")


if __name__ == "__main__":
    main()
