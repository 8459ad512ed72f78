#!/usr/bin/env python3
"""End-to-end offline demo: synthesize a corpus, run the full pipeline
against the scripted model, and print one generated conversation."""

import argparse
import json
from pathlib import Path

from convogen.config import FeatureFlags, PipelineConfig
from convogen.gateway import GatewayConfig
from convogen.pipeline import run_pipeline
from convogen.sharding import plan_shards
from convogen.synth import write_synthetic_manifest

REPO_ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", default="demo_work")
    parser.add_argument("--images", type=int, default=10)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    work = Path(args.work_dir)
    manifest = write_synthetic_manifest(
        work / "corpus.jsonl", args.images, seed=args.seed, max_boxes=3, max_qas=2
    )
    plan_shards(manifest, 1, work / "shards")
    cfg = PipelineConfig(
        manifest_path=str(manifest),
        output_dir=str(work / "out"),
        prompts_dir=str(REPO_ROOT / "prompts"),
        prompts_set="staged_min",
        shard_dir=str(work / "shards"),
        rng_seed=args.seed,
        parallelism=4,
        gateway=GatewayConfig(mode="scripted"),
        features=FeatureFlags(filtering=True, bbox_conversion=True, reduction=True),
    )
    summary = run_pipeline(cfg, worker_id="demo")
    print(
        f"{summary['conversations']} conversations / {summary['images']} images, "
        f"{summary['errors']} skipped, {summary['wall_s']}s"
    )
    out_file = work / "out" / "conversations_shard_00000.jsonl"
    first = json.loads(out_file.read_text().splitlines()[0])
    print(f"\nimage: {first['image']}")
    for entry in first["conversations"]:
        print(f"  {entry['from']}: {entry['value']!r}")
    prov = first["provenance"]
    print(
        f"\ncontext: {prov['context_chars_initial']} -> {prov['context_chars_final']} chars "
        f"({prov['context_chars_final'] / prov['context_chars_initial']:.0%} remaining)"
    )


if __name__ == "__main__":
    main()
