"""Deterministic manifest partitioning and file-based worker coordination.

A shard is owned by whoever atomically created its ``.claim`` file; stale
claims (no heartbeat within the staleness window) can be taken over via an
atomic rename, so at most one worker ever holds a live claim.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .errors import AlreadyClaimed
from .ingestion import FILE_STEM, DatasetRegistry, link_key
from .metadata import ImageRef


def stable_shard(canonical_key: str, n: int) -> int:
    """Process-independent hash partition (never Python's hash())."""
    digest = hashlib.md5(canonical_key.encode("utf-8")).hexdigest()
    return int(digest, 16) % n


def iter_record_offsets(manifest_path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (byte offset, parsed record) for every line of a manifest."""
    with open(manifest_path, "rb") as fh:
        offset = 0
        for raw in fh:
            line = raw.decode("utf-8").strip()
            if line:
                yield offset, json.loads(line)
            offset += len(raw)


def record_link_key(
    record: dict,
    registry: Optional[DatasetRegistry] = None,
    id_map: Optional[dict] = None,
) -> str:
    image = ImageRef(
        dataset_id=record["dataset"],
        image_id=str(record["image_id"]),
        uri=record["uri"],
        width=int(record["width"]),
        height=int(record["height"]),
    )
    namespace = registry.namespace_for(image.dataset_id) if registry else FILE_STEM
    return str(link_key(image, namespace, id_map))


def plan_shards(
    manifest_path: str | Path,
    n: int,
    out_dir: str | Path,
    registry: Optional[DatasetRegistry] = None,
    id_map: Optional[dict] = None,
) -> list[Path]:
    """Partition records by link-key hash mod n into shard index files."""
    if n < 1:
        raise ValueError("shard count must be >= 1")
    shards: list[dict] = [
        {"shard_id": i, "manifest": str(manifest_path), "offsets": [], "keys": []}
        for i in range(n)
    ]
    for offset, record in iter_record_offsets(manifest_path):
        key = record_link_key(record, registry, id_map)
        shard = shards[stable_shard(key, n)]
        shard["offsets"].append(offset)
        shard["keys"].append(key)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for shard in shards:
        path = out_dir / f"shard_{shard['shard_id']:05d}.json"
        path.write_text(json.dumps(shard), encoding="utf-8")
        paths.append(path)
    return paths


def load_shard(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


@dataclass
class ShardClaim:
    shard_id: int
    worker_id: str
    heartbeat: float
    path: Path

    def refresh(self) -> None:
        """Atomically rewrite the claim with a fresh heartbeat."""
        self.heartbeat = time.time()
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(
            json.dumps(
                {
                    "shard_id": self.shard_id,
                    "worker_id": self.worker_id,
                    "heartbeat": self.heartbeat,
                }
            ),
            encoding="utf-8",
        )
        os.replace(tmp, self.path)

    def release(self) -> None:
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


def claim_path_for(shard_path: str | Path) -> Path:
    return Path(str(shard_path) + ".claim")


def claim_shard(
    shard_path: str | Path,
    worker_id: str,
    staleness_s: float = 300.0,
) -> ShardClaim:
    """Claim ownership via O_CREAT|O_EXCL; raises AlreadyClaimed when a
    fresh claim exists. Stale claims are retired with an atomic rename so
    two takers can never both win."""
    shard_path = Path(shard_path)
    shard_id = load_shard(shard_path)["shard_id"]
    claim_path = claim_path_for(shard_path)
    for _ in range(2):
        try:
            fd = os.open(claim_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            try:
                existing = json.loads(claim_path.read_text(encoding="utf-8"))
                heartbeat = float(existing.get("heartbeat", 0.0))
            except (OSError, ValueError):
                heartbeat = 0.0
            if time.time() - heartbeat <= staleness_s:
                raise AlreadyClaimed(f"{claim_path} held by a live worker")
            tombstone = claim_path.with_suffix(
                claim_path.suffix + f".stale-{os.getpid()}-{threading.get_ident()}"
            )
            try:
                os.rename(claim_path, tombstone)
                tombstone.unlink()
            except FileNotFoundError:
                pass  # someone else retired it first; retry the create
            continue
        claim = ShardClaim(
            shard_id=shard_id,
            worker_id=worker_id,
            heartbeat=time.time(),
            path=claim_path,
        )
        os.write(
            fd,
            json.dumps(
                {
                    "shard_id": shard_id,
                    "worker_id": worker_id,
                    "heartbeat": claim.heartbeat,
                }
            ).encode("utf-8"),
        )
        os.close(fd)
        return claim
    raise AlreadyClaimed(f"{claim_path} lost the takeover race")


class HeartbeatThread(threading.Thread):
    """Refreshes a claim periodically until stopped."""

    def __init__(self, claim: ShardClaim, interval_s: float = 30.0):
        super().__init__(daemon=True)
        self.claim = claim
        self.interval_s = interval_s
        self._halt = threading.Event()

    def run(self) -> None:
        while not self._halt.wait(self.interval_s):
            self.claim.refresh()

    def stop(self) -> None:
        self._halt.set()
        self.join(timeout=5)
