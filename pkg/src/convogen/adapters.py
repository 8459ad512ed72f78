"""Example converters from raw dataset formats to the unified manifest.

Adapter contract: a callable ``(source_path, dataset_id, **options)`` that
yields unified-manifest record dicts (see metadata.bundle_to_record for the
schema). Converters run offline via scripts/convert_dataset.py; the
pipeline itself only reads unified manifests.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator


def coco_captions_records(source_path: str | Path, dataset_id: str = "coco-captions") -> Iterator[dict]:
    """COCO captions annotation JSON: {"images": [...], "annotations": [...]}."""
    data = json.loads(Path(source_path).read_text(encoding="utf-8"))
    images = {img["id"]: img for img in data.get("images", [])}
    captions: dict[int, list[str]] = {}
    for ann in data.get("annotations", []):
        captions.setdefault(ann["image_id"], []).append(ann["caption"])
    for image_id, img in sorted(images.items()):
        texts = captions.get(image_id, [])
        if not texts:
            continue
        yield {
            "dataset": dataset_id,
            "image_id": str(image_id),
            "uri": img.get("file_name", f"{image_id}.jpg"),
            "width": int(img["width"]),
            "height": int(img["height"]),
            "captions": [{"text": t, "source": dataset_id} for t in texts],
            "boxes": [],
            "qas": [],
        }


def object_boxes_records(source_path: str | Path, dataset_id: str = "object-boxes") -> Iterator[dict]:
    """Visual-Genome-style objects JSON: a list of
    {"image_id", "file_name", "width", "height", "objects": [{"name"|"names",
    "x", "y", "w", "h", "attributes"?}]}."""
    data = json.loads(Path(source_path).read_text(encoding="utf-8"))
    for entry in data:
        boxes = []
        for obj in entry.get("objects", []):
            names = obj.get("names") or [obj.get("name", "object")]
            boxes.append(
                {
                    "label": names[0],
                    "bbox": [float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"])],
                    "attributes": list(obj.get("attributes", [])),
                    "mask_rle": None,
                    "depth_mean": None,
                    "source": dataset_id,
                }
            )
        if not boxes:
            continue
        yield {
            "dataset": dataset_id,
            "image_id": str(entry["image_id"]),
            "uri": entry.get("file_name", f"{entry['image_id']}.jpg"),
            "width": int(entry["width"]),
            "height": int(entry["height"]),
            "captions": [],
            "boxes": boxes,
            "qas": [],
        }


def qa_jsonl_records(source_path: str | Path, dataset_id: str = "qa-pairs") -> Iterator[dict]:
    """Generic QA JSONL: one {"image_id","uri","width","height","question","answer"}
    per line; rows for the same image are folded into one record."""
    by_image: dict[str, dict] = {}
    with open(source_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            image_id = str(row["image_id"])
            record = by_image.setdefault(
                image_id,
                {
                    "dataset": dataset_id,
                    "image_id": image_id,
                    "uri": row["uri"],
                    "width": int(row["width"]),
                    "height": int(row["height"]),
                    "captions": [],
                    "boxes": [],
                    "qas": [],
                },
            )
            record["qas"].append(
                {"question": row["question"], "answer": row["answer"], "source": dataset_id}
            )
    yield from (by_image[k] for k in sorted(by_image))


ADAPTERS = {
    "coco-captions": coco_captions_records,
    "object-boxes": object_boxes_records,
    "qa-jsonl": qa_jsonl_records,
}
