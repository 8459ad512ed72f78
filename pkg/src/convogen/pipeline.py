"""Per-shard execution: ingest, tree build, context, generation, writing.

Workers are share-nothing; coordination happens through claim files and
append-only per-shard outputs. Images in a shard run concurrently but
results are committed in manifest order, so a full scripted run with a
fixed seed is byte-identical across machines, and a crashed shard resumes
without duplicate conversation ids.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, TextIO

from .config import PipelineConfig
from .context import ConversionPrompts, assemble_context, boxes_to_plain_sentences
from .errors import (
    AlreadyClaimed,
    ConfigError,
    EmptyDescription,
    GenerationFailed,
    LlmUnavailable,
    NoTurnsGenerated,
)
from .gateway import LlmGateway, probe_endpoint
from .generation import Conversation, Turn, generate_conversation, generate_conversation_direct
from .ingestion import load_bundle
from .prompts import PromptDistribution, load_prompt_set
from .scene_tree import build_scene_tree
from .scripted_server import ScriptedLlmServer, default_pipeline_rules, load_fixture_file
from .sharding import HeartbeatThread, claim_shard, load_shard

STAGES = ("ingest", "tree", "context", "generate", "write")
IMAGE_TOKEN = "<image>"


def image_seed(rng_seed: int, link_key_str: str) -> int:
    """Per-image seed, stable across machines and worker scheduling."""
    digest = hashlib.sha256(f"{rng_seed}:{link_key_str}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def conversation_record(conv: Conversation) -> dict:
    """Output schema: LLaVA-style conversations plus provenance."""
    prov = dict(conv.provenance)
    conv_id = prov.pop("id")
    entries = []
    for i, turn in enumerate(conv.turns):
        human = f"{IMAGE_TOKEN}\n{turn.human}" if i == 0 else turn.human
        entries.append({"from": "human", "value": human})
        entries.append({"from": "gpt", "value": turn.assistant})
    return {
        "id": conv_id,
        "image": conv.image.uri,
        "conversations": entries,
        "provenance": prov,
    }


def write_conversation(conv: Conversation, out: TextIO) -> None:
    """Append one JSON line and flush, so partial shards survive a crash."""
    out.write(json.dumps(conversation_record(conv), ensure_ascii=False) + "\n")
    out.flush()


def conversation_from_record(record: dict) -> Conversation:
    """Inverse of write_conversation (image geometry rides in provenance)."""
    from .metadata import ImageRef

    prov = dict(record["provenance"])
    prov["id"] = record["id"]
    ref = prov["image_ref"]
    image = ImageRef(
        dataset_id=ref["dataset"],
        image_id=ref["image_id"],
        uri=record["image"],
        width=ref["width"],
        height=ref["height"],
    )
    entries = record["conversations"]
    turns = []
    templates = prov.get("templates_used", [])
    for i in range(0, len(entries), 2):
        human = entries[i]["value"]
        if i == 0 and human.startswith(IMAGE_TOKEN):
            human = human[len(IMAGE_TOKEN):].lstrip("\n")
        turns.append(
            Turn(
                human=human,
                assistant=entries[i + 1]["value"],
                template_id=templates[min(i // 2, len(templates) - 1)] if templates else "unknown",
                iteration=i // 2,
            )
        )
    return Conversation(image=image, turns=tuple(turns), provenance=prov)


def validate_conversation_record(record: dict) -> list[str]:
    """Schema lint for one output record; empty list means valid."""
    problems = []
    for key in ("id", "image", "conversations", "provenance"):
        if key not in record:
            problems.append(f"missing key {key!r}")
    entries = record.get("conversations", [])
    if not entries:
        problems.append("no conversation entries")
    if len(entries) % 2 != 0:
        problems.append("conversations must alternate human/gpt pairs")
    token_count = 0
    for i, entry in enumerate(entries):
        expected = "human" if i % 2 == 0 else "gpt"
        if entry.get("from") != expected:
            problems.append(f"entry {i} from={entry.get('from')!r}, expected {expected!r}")
        value = entry.get("value", "")
        if not value:
            problems.append(f"entry {i} has empty value")
        token_count += value.count(IMAGE_TOKEN)
    if token_count != 1:
        problems.append(f"{IMAGE_TOKEN} appears {token_count} times, expected 1")
    elif not entries[0].get("value", "").startswith(IMAGE_TOKEN):
        problems.append(f"{IMAGE_TOKEN} must open the first human turn")
    return problems


class _ErrorLog:
    """Append-only JSONL error sink shared by a worker's threads."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self.count = 0

    def write(self, image_id: str, stage: str, reason: str) -> None:
        with self._lock:
            self.count += 1
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"image_id": image_id, "stage": stage, "reason": reason},
                        ensure_ascii=False,
                    )
                    + "\n"
                )


def _read_done_ids(path: Path) -> set[str]:
    done = set()
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    try:
                        done.add(json.loads(line)["id"])
                    except (ValueError, KeyError):
                        continue
    return done


def _process_image(
    record: dict,
    key: str,
    cfg: PipelineConfig,
    dist: PromptDistribution,
    gateway: LlmGateway,
    conv_prompts: ConversionPrompts,
    errors: _ErrorLog,
    base_dir: Optional[Path] = None,
) -> tuple[Optional[Conversation], Optional[str], dict]:
    """Run one image through the enabled stages.

    Returns (conversation, ascii tree, stage timings); conversation is None
    when the image was skipped (reason already logged).
    """
    timings = {}
    image_id = str(record.get("image_id", "?"))
    t0 = time.monotonic()
    warnings: list[dict] = []
    try:
        bundle = load_bundle(record, warnings.append, base_dir=base_dir)
    except (ValueError, KeyError) as exc:
        errors.write(image_id, "ingest", f"bad record: {exc}")
        return None, None, timings
    for warning in warnings:
        errors.write(image_id, "ingest", warning.get("reason", "warning"))
    timings["ingest"] = time.monotonic() - t0
    if not bundle.is_admissible:
        errors.write(image_id, "ingest", "bundle has no annotations")
        return None, None, timings

    tree_text = ""
    t0 = time.monotonic()
    if cfg.features.bbox_conversion and bundle.boxes:
        if cfg.simulated_sidecar_ms > 0:
            # stands in for external mask/depth model cost in benchmarks
            time.sleep(cfg.simulated_sidecar_ms / 1000.0)
        _, tree_text = build_scene_tree(list(bundle.boxes), bundle.image, cfg.scene)
    timings["tree"] = time.monotonic() - t0

    t0 = time.monotonic()
    plain = None
    if not cfg.features.bbox_conversion and bundle.boxes:
        plain = boxes_to_plain_sentences(bundle.boxes)
    try:
        ctx = assemble_context(
            bundle,
            tree_text,
            gateway,
            conv_prompts=conv_prompts,
            plain_box_sentences=plain,
            max_attempts=cfg.generation.max_retries,
        )
    except (LlmUnavailable, EmptyDescription) as exc:
        errors.write(image_id, "context", str(exc))
        return None, None, timings
    timings["context"] = time.monotonic() - t0
    if not ctx.sentences:
        errors.write(image_id, "context", "empty context")
        return None, None, timings

    t0 = time.monotonic()
    params = replace(cfg.generation, quality_filter=cfg.features.filtering)
    seed = image_seed(cfg.rng_seed, key)
    try:
        if cfg.features.reduction:
            conv = generate_conversation(
                ctx, dist, params, gateway, seed, reduce_mode=cfg.reduce_mode
            )
        else:
            conv = generate_conversation_direct(ctx, dist, params, gateway, seed)
    except (NoTurnsGenerated, GenerationFailed, LlmUnavailable) as exc:
        errors.write(image_id, "generate", str(exc))
        return None, None, timings
    timings["generate"] = time.monotonic() - t0
    conv.provenance["id"] = f"{key}-{seed}"
    conv.provenance["link_key"] = key
    conv.provenance["image_ref"] = {
        "dataset": bundle.image.dataset_id,
        "image_id": bundle.image.image_id,
        "width": bundle.image.width,
        "height": bundle.image.height,
    }
    return conv, tree_text if tree_text else None, timings


def process_shard(
    cfg: PipelineConfig,
    shard_path: Path,
    gateway: LlmGateway,
    dist: PromptDistribution,
    conv_prompts: ConversionPrompts,
    worker_id: str,
    stop_after: Optional[int] = None,
) -> dict:
    """Process one claimed shard; returns its stats.

    ``stop_after`` aborts after that many committed images without
    releasing the claim, simulating a crashed worker for resume tests.
    """
    shard = load_shard(shard_path)
    shard_id = shard["shard_id"]
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    conv_path = out_dir / f"conversations_shard_{shard_id:05d}.jsonl"
    tree_path = out_dir / f"trees_shard_{shard_id:05d}.jsonl"
    errors = _ErrorLog(out_dir / "errors.jsonl")
    done_ids = _read_done_ids(conv_path)

    manifest_dir = Path(shard["manifest"]).resolve().parent
    records: list[tuple[str, dict]] = []
    with open(shard["manifest"], encoding="utf-8") as fh:
        for offset, key in zip(shard["offsets"], shard["keys"]):
            fh.seek(offset)
            records.append((key, json.loads(fh.readline())))

    stats = {
        "shard_id": shard_id,
        "images": 0,
        "conversations": 0,
        "turns": 0,
        "resumed": 0,
        "errors": 0,
        "stage_s": {stage: 0.0 for stage in STAGES},
        "crashed": False,
    }

    pending: list[tuple[str, dict]] = []
    for key, record in records:
        conv_id = f"{key}-{image_seed(cfg.rng_seed, key)}"
        if conv_id in done_ids:
            stats["resumed"] += 1
            continue
        pending.append((key, record))

    committed = 0
    with open(conv_path, "a", encoding="utf-8") as conv_out, open(
        tree_path, "a", encoding="utf-8"
    ) as tree_out:
        with ThreadPoolExecutor(max_workers=max(1, cfg.parallelism)) as pool:
            futures: dict[int, Future] = {
                seq: pool.submit(
                    _process_image, record, key, cfg, dist, gateway, conv_prompts,
                    errors, manifest_dir,
                )
                for seq, (key, record) in enumerate(pending)
            }
            next_seq = 0
            # commit strictly in manifest order for byte-stable outputs
            while next_seq < len(pending):
                future = futures[next_seq]
                conv, tree_text, timings = future.result()
                stats["images"] += 1
                for stage, seconds in timings.items():
                    stats["stage_s"][stage] += seconds
                if conv is not None:
                    t0 = time.monotonic()
                    write_conversation(conv, conv_out)
                    if tree_text is not None:
                        tree_out.write(
                            json.dumps(
                                {"id": conv.provenance["id"], "tree": tree_text},
                                ensure_ascii=False,
                            )
                            + "\n"
                        )
                        tree_out.flush()
                    stats["stage_s"]["write"] += time.monotonic() - t0
                    stats["conversations"] += 1
                    stats["turns"] += len(conv.turns)
                    committed += 1
                    if stop_after is not None and committed >= stop_after:
                        stats["crashed"] = True
                        stats["errors"] = errors.count
                        for remaining in futures.values():
                            remaining.cancel()
                        return stats
                next_seq += 1
    stats["errors"] = errors.count
    return stats


def run_pipeline(
    cfg: PipelineConfig,
    worker_id: str = "worker-0",
    stop_after: Optional[int] = None,
    shard_filter: Optional[set[int]] = None,
) -> dict:
    """Claim and process every available shard; returns summary metrics."""
    dist = load_prompt_set(cfg.prompts_dir, cfg.prompts_set)
    conv_prompts = (
        ConversionPrompts.from_dir(cfg.conversion_prompts_dir)
        if cfg.conversion_prompts_dir
        else ConversionPrompts()
    )
    shard_dir = cfg.resolved_shard_dir()
    shard_paths = sorted(shard_dir.glob("shard_*.json"))
    if not shard_paths:
        raise ConfigError(f"no shard files under {shard_dir}")

    server = None
    gateway_cfg = cfg.gateway
    try:
        if cfg.gateway.mode == "scripted":
            rules = (
                load_fixture_file(cfg.scripted_fixtures)
                if cfg.scripted_fixtures
                else default_pipeline_rules()
            )
            server = ScriptedLlmServer(
                fixtures=rules,
                latency_base_ms=cfg.scripted_latency_base_ms,
                latency_per_char_ms=cfg.scripted_latency_per_char_ms,
            ).start()
            gateway_cfg = replace(cfg.gateway, endpoint_url=server.url)
        elif not probe_endpoint(cfg.gateway.endpoint_url):
            raise LlmUnavailable(f"endpoint unreachable: {cfg.gateway.endpoint_url}")
        gateway = LlmGateway(gateway_cfg)

        started = time.monotonic()
        summary = {
            "worker_id": worker_id,
            "shards": [],
            "images": 0,
            "conversations": 0,
            "turns": 0,
            "resumed": 0,
            "errors": 0,
            "skipped_shards": 0,
            "stage_s": {stage: 0.0 for stage in STAGES},
        }
        for shard_path in shard_paths:
            shard_id = load_shard(shard_path)["shard_id"]
            if shard_filter is not None and shard_id not in shard_filter:
                continue
            try:
                claim = claim_shard(shard_path, worker_id, cfg.claim_staleness_s)
            except AlreadyClaimed:
                summary["skipped_shards"] += 1
                continue
            heartbeat = HeartbeatThread(claim, cfg.heartbeat_s)
            heartbeat.start()
            try:
                stats = process_shard(
                    cfg, shard_path, gateway, dist, conv_prompts, worker_id, stop_after
                )
            finally:
                heartbeat.stop()
            summary["shards"].append(stats["shard_id"])
            summary["images"] += stats["images"]
            summary["conversations"] += stats["conversations"]
            summary["turns"] += stats["turns"]
            summary["resumed"] += stats["resumed"]
            summary["errors"] += stats["errors"]
            for stage in STAGES:
                summary["stage_s"][stage] += stats["stage_s"][stage]
            if stats["crashed"]:
                # simulated crash: leave the claim in place and stop here
                summary["crashed_shard"] = stats["shard_id"]
                break
            claim.release()
        wall = time.monotonic() - started
        summary["wall_s"] = round(wall, 3)
        summary["conversations_per_hour"] = (
            round(summary["conversations"] / wall * 3600.0, 1) if wall > 0 else 0.0
        )
        summary["gateway"] = gateway.metrics_snapshot()
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"summary_{worker_id}.json").write_text(
            json.dumps(summary, indent=2), encoding="utf-8"
        )
        return summary
    finally:
        if server is not None:
            server.stop()
