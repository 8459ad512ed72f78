"""Command-line entry points.

Subcommands: ingest, plan, run, tree (debug render), bench (efficiency
table), validate (manifest linting). Exit codes: 0 success, 1 validation
findings, 2 config error, 3 endpoint unreachable.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bench import ROWS, format_table, run_bench
from .config import FeatureFlags, load_config
from .errors import ConfigError, LlmUnavailable, PipelineError
from .ingestion import (
    DatasetRegistry,
    group_by_image,
    load_id_map,
    load_manifest,
    write_manifest,
)
from .metadata import bundle_from_record
from .pipeline import run_pipeline
from .scene_tree import SceneTreeParams, build_scene_tree
from .sharding import plan_shards

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_CONFIG = 2
EXIT_ENDPOINT = 3


def _cmd_ingest(args) -> int:
    registry = DatasetRegistry.from_config(args.registry)
    id_map = load_id_map(args.id_map) if args.id_map else None
    warnings: list[dict] = []

    def all_bundles():
        for desc in registry:
            yield from load_manifest(desc.manifest_path, warnings.append)

    count = write_manifest(group_by_image(all_bundles(), registry, id_map), args.out)
    print(f"wrote {count} grouped records to {args.out} ({len(warnings)} warnings)")
    return EXIT_OK


def _cmd_plan(args) -> int:
    registry = DatasetRegistry.from_config(args.registry) if args.registry else None
    id_map = load_id_map(args.id_map) if args.id_map else None
    paths = plan_shards(args.manifest, args.shards, args.out_dir, registry, id_map)
    total = sum(len(json.loads(p.read_text())["offsets"]) for p in paths)
    print(f"planned {len(paths)} shards over {total} records in {args.out_dir}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.features is not None:
        cfg.features = FeatureFlags.parse(args.features)
    if args.seed is not None:
        cfg.rng_seed = args.seed
    if args.scripted_fixtures:
        cfg.scripted_fixtures = args.scripted_fixtures
        cfg.gateway.mode = "scripted"
    shard_filter = (
        {int(s) for s in args.shards.split(",")} if args.shards else None
    )
    summary = run_pipeline(
        cfg,
        worker_id=args.worker_id,
        stop_after=args.max_images,
        shard_filter=shard_filter,
    )
    print(
        f"worker {summary['worker_id']}: {summary['conversations']} conversations "
        f"from {summary['images']} images in {summary['wall_s']}s "
        f"({summary['conversations_per_hour']}/hour), {summary['errors']} errors"
    )
    return EXIT_OK


def _cmd_tree(args) -> int:
    params = SceneTreeParams()
    if args.config:
        params = load_config(args.config, check_paths=False).scene
    with open(args.manifest, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            record = json.loads(line)
            if args.index is not None and index != args.index:
                continue
            if args.image_id is not None and str(record.get("image_id")) != args.image_id:
                continue
            bundle = bundle_from_record(record)
            _, ascii_tree = build_scene_tree(list(bundle.boxes), bundle.image, params)
            print(f"# {bundle.image.uri} ({bundle.image.width}x{bundle.image.height})")
            print(ascii_tree if ascii_tree else "(no regions)")
            return EXIT_OK
    print("record not found", file=sys.stderr)
    return EXIT_CONFIG


def _cmd_bench(args) -> int:
    rows = ROWS
    if args.rows:
        wanted = {token.strip() for token in args.rows.split(",")}
        rows = tuple(r for r in ROWS if r[0].strip("+") in wanted)
        if not rows:
            raise ConfigError(f"no bench rows match {args.rows!r}")
    results = run_bench(
        args.out,
        args.prompts_dir,
        images=args.images,
        seed=args.seed,
        rows=rows,
        parallelism=args.parallelism,
        latency_base_ms=args.latency_base_ms,
        latency_per_char_ms=args.latency_per_char_ms,
        sidecar_ms=args.sidecar_ms,
    )
    print(format_table(results))
    return EXIT_OK


def _cmd_validate(args) -> int:
    problems: list[dict] = []
    seen: set[tuple[str, str]] = set()
    count = 0
    for bundle in load_manifest(args.manifest, problems.append):
        count += 1
        key = (bundle.image.dataset_id, bundle.image.image_id)
        if key in seen:
            problems.append(
                {"image_id": bundle.image.image_id, "reason": "duplicate (dataset, image_id)"}
            )
        seen.add(key)
        if not bundle.is_admissible:
            problems.append(
                {"image_id": bundle.image.image_id, "reason": "record has no annotations"}
            )
    print(f"checked {count} records: {len(problems)} problems")
    for problem in problems[: args.limit]:
        print(f"  {problem}")
    return EXIT_FINDINGS if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convogen",
        description="Convert image metadata manifests into instruction conversations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="merge dataset manifests into one grouped manifest")
    p.add_argument("--registry", required=True, help="registry config JSON")
    p.add_argument("--out", required=True, help="output grouped manifest JSONL")
    p.add_argument("--id-map", default=None, help="optional id-map sidecar JSONL")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("plan", help="partition a grouped manifest into shard files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--shards", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--registry", default=None)
    p.add_argument("--id-map", default=None)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("run", help="claim shards and generate conversations")
    p.add_argument("--config", required=True)
    p.add_argument("--worker-id", default="worker-0")
    p.add_argument("--shards", default=None, help="comma list of shard ids to attempt")
    p.add_argument("--features", default=None, help="e.g. filtering,bbox,reduction")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scripted-fixtures", default=None, help="fixture JSONL; forces scripted mode")
    p.add_argument("--max-images", type=int, default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("tree", help="print the ASCII scene tree for one record")
    p.add_argument("--manifest", required=True)
    p.add_argument("--index", type=int, default=None)
    p.add_argument("--image-id", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_tree)

    p = sub.add_parser("bench", help="feature-toggle efficiency table on synthetic data")
    p.add_argument("--out", required=True, help="working directory")
    p.add_argument("--prompts-dir", default="prompts")
    p.add_argument("--images", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--rows", default=None, help="comma list: direct,filtering,bbox,reduction,full")
    p.add_argument("--parallelism", type=int, default=16)
    p.add_argument("--latency-base-ms", type=float, default=1.0)
    p.add_argument("--latency-per-char-ms", type=float, default=0.5)
    p.add_argument("--sidecar-ms", type=int, default=1500)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("validate", help="lint a unified manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--limit", type=int, default=20, help="max problems to print")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LlmUnavailable as exc:
        print(f"endpoint unreachable: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
