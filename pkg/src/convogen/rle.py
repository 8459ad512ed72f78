"""Run-length encoded binary masks over a row-major pixel grid.

Encoding: ``"{w}x{h}:" `` followed by space-separated run lengths that
alternate background/foreground, starting with background. Runs must sum
to ``w * h``, so grid dimensions are always checkable.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def _parse(rle: str) -> tuple[int, int, list[int]]:
    header, sep, body = rle.partition(":")
    if not sep:
        raise ValueError(f"RLE missing dimension header: {rle[:40]!r}")
    try:
        w_str, h_str = header.lower().split("x")
        width, height = int(w_str), int(h_str)
    except ValueError as exc:
        raise ValueError(f"bad RLE header {header!r}") from exc
    runs = [int(tok) for tok in body.split()]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    if sum(runs) != width * height:
        raise ValueError(
            f"RLE runs sum to {sum(runs)}, expected {width}x{height}={width * height}"
        )
    return width, height, runs


def grid_size(rle: str) -> tuple[int, int]:
    """(width, height) of the encoded grid."""
    width, height, _ = _parse(rle)
    return width, height


def foreground_area(rle: str) -> int:
    """Number of foreground pixels, without decoding the full grid."""
    _, _, runs = _parse(rle)
    return sum(runs[1::2])


def encode(mask: np.ndarray) -> str:
    """Encode a 2-D (height, width) binary array."""
    if mask.ndim != 2:
        raise ValueError(f"expected 2-D mask, got shape {mask.shape}")
    height, width = mask.shape
    flat = np.asarray(mask, dtype=bool).ravel()
    changes = np.flatnonzero(np.diff(flat.astype(np.int8)))
    edges = np.concatenate(([0], changes + 1, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        # runs always start with a background count
        runs = [0] + runs
    return f"{width}x{height}:" + " ".join(str(r) for r in runs)


@lru_cache(maxsize=1024)
def decode(rle: str) -> np.ndarray:
    """Decode to a read-only (height, width) bool array.

    Results are cached; callers must not mutate the returned array.
    """
    width, height, runs = _parse(rle)
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    out = flat.reshape(height, width)
    out.flags.writeable = False
    return out


def from_bbox(bbox: tuple[float, float, float, float], width: int, height: int) -> str:
    """Rasterize a pixel bbox (x, y, w, h) into an RLE rectangle mask."""
    x, y, w, h = bbox
    x0 = max(int(round(x)), 0)
    y0 = max(int(round(y)), 0)
    x1 = min(int(round(x + w)), width)
    y1 = min(int(round(y + h)), height)
    mask = np.zeros((height, width), dtype=bool)
    if x1 > x0 and y1 > y0:
        mask[y0:y1, x0:x1] = True
    return encode(mask)
