"""Throughput benchmark over a synthetic corpus with a scripted model.

Runs the pipeline once per feature configuration and reports wall time and
throughput, mirroring the CLI feature toggles. Simulated latency grows with
response length (throughput-bound backend) and an optional per-image sleep
stands in for external mask/depth model cost in the bbox rows.
"""

from __future__ import annotations

import json
from pathlib import Path

from .config import FeatureFlags, PipelineConfig
from .gateway import GatewayConfig
from .generation import GenerationParams
from .pipeline import run_pipeline
from .sharding import plan_shards
from .synth import write_synthetic_manifest

ROWS = (
    ("direct", FeatureFlags(False, False, False)),
    ("+filtering", FeatureFlags(True, False, False)),
    ("+bbox", FeatureFlags(False, True, False)),
    ("+reduction", FeatureFlags(False, False, True)),
    ("full", FeatureFlags(True, True, True)),
)


def bench_config(
    work_dir: Path,
    manifest: Path,
    features: FeatureFlags,
    prompts_dir: str,
    row_name: str,
    parallelism: int,
    latency_base_ms: float,
    latency_per_char_ms: float,
    sidecar_ms: int,
    seed: int,
) -> PipelineConfig:
    safe = row_name.strip("+")
    return PipelineConfig(
        manifest_path=str(manifest),
        output_dir=str(work_dir / f"out_{safe}"),
        prompts_dir=prompts_dir,
        prompts_set="staged_min" if features.reduction else "direct_min",
        shard_dir=str(work_dir / "shards"),
        rng_seed=seed,
        parallelism=parallelism,
        reduce_mode="llm",
        simulated_sidecar_ms=sidecar_ms if features.bbox_conversion else 0,
        scripted_latency_base_ms=latency_base_ms,
        scripted_latency_per_char_ms=latency_per_char_ms,
        generation=GenerationParams(),
        gateway=GatewayConfig(mode="scripted", max_in_flight=parallelism),
        features=features,
    )


def run_bench(
    work_dir: str | Path,
    prompts_dir: str | Path,
    images: int = 500,
    seed: int = 7,
    rows: tuple = ROWS,
    parallelism: int = 16,
    latency_base_ms: float = 1.0,
    latency_per_char_ms: float = 0.5,
    sidecar_ms: int = 1500,
) -> list[dict]:
    """Execute the requested rows; returns one result dict per row."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    manifest = write_synthetic_manifest(
        work_dir / "corpus.jsonl", images, seed=seed, max_captions=3, max_boxes=5, max_qas=3
    )
    plan_shards(manifest, 1, work_dir / "shards")
    results = []
    for row_name, features in rows:
        cfg = bench_config(
            work_dir,
            manifest,
            features,
            str(prompts_dir),
            row_name,
            parallelism,
            latency_base_ms,
            latency_per_char_ms,
            sidecar_ms,
            seed,
        )
        summary = run_pipeline(cfg, worker_id=f"bench-{row_name.strip('+')}")
        results.append(
            {
                "variant": row_name,
                "filtering": features.filtering,
                "bbox_conversion": features.bbox_conversion,
                "reduction": features.reduction,
                "images": summary["images"],
                "conversations": summary["conversations"],
                "time_s": summary["wall_s"],
                "conversations_per_hour": summary["conversations_per_hour"],
            }
        )
        # claims are per-row state; remove them so the next row can run
        for claim in (work_dir / "shards").glob("*.claim"):
            claim.unlink()
    (work_dir / "bench_results.json").write_text(
        json.dumps(results, indent=2), encoding="utf-8"
    )
    return results


def format_table(results: list[dict]) -> str:
    header = f"{'variant':<12} {'filter':<7} {'bbox':<6} {'reduce':<7} {'time_s':>8} {'conv/hour':>12}"
    lines = [header, "-" * len(header)]
    for row in results:
        lines.append(
            f"{row['variant']:<12} "
            f"{'yes' if row['filtering'] else '-':<7} "
            f"{'yes' if row['bbox_conversion'] else '-':<6} "
            f"{'yes' if row['reduction'] else '-':<7} "
            f"{row['time_s']:>8.1f} "
            f"{row['conversations_per_hour']:>12.0f}"
        )
    return "\n".join(lines)
