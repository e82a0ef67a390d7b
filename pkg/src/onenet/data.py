"""Synthetic segmentation data and PPM/PGM dataset import/export.

Toy samples: a grey noise background with one shape (rectangle or disc) per
foreground class. Each class owns a hue; shapes get a jittered version of it
plus pixel noise. Masks are labelled at ``1/scale`` of the image resolution by
testing the centre of each ``scale x scale`` image block.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DataError
from .tensor import Tensor


@dataclass
class SampleBatch:
    images: Tensor       # [B, 3, H, W] in [0, 1]
    masks: np.ndarray    # [B, H/s, W/s] int64 class ids

    def __len__(self) -> int:
        return self.images.shape[0]


def class_palette(num_classes: int) -> np.ndarray:
    """RGB colour per foreground class (row 0 is unused background)."""
    pal = np.zeros((num_classes, 3))
    for c in range(1, num_classes):
        pal[c] = colorsys.hsv_to_rgb((c - 1) / max(num_classes - 1, 1), 0.85, 0.95)
    return pal


def _shape_masks(kind, params, H, W, scale):
    """Membership of image-pixel centres and mask-block centres."""
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    my, mx = (np.mgrid[0 : H // scale, 0 : W // scale] + 0.5) * scale
    if kind == "rect":
        y0, x0, y1, x1 = params
        def inside(y, x): return (y >= y0) & (y < y1) & (x >= x0) & (x < x1)
    else:
        cy, cx, r = params
        def inside(y, x): return (y - cy) ** 2 + (x - cx) ** 2 <= r * r
    return inside(yy, xx), inside(my, mx)


def toy_sample(H: int, W: int, K: int, rng: np.random.Generator, scale: int = 2,
               max_tries: int = 50) -> tuple[np.ndarray, np.ndarray]:
    if K < 2:
        raise DataError("need at least two classes (background + one shape)")
    if H % scale or W % scale:
        raise DataError(f"image {H}x{W} is not divisible by the mask scale {scale}")
    palette = class_palette(K)
    grey = rng.uniform(0.05, 0.35, size=(1, H, W))
    img = np.repeat(grey, 3, axis=0) + rng.normal(0.0, 0.02, size=(3, H, W))
    mask = np.zeros((H // scale, W // scale), dtype=np.int64)
    taken = np.zeros((H, W), dtype=bool)
    side = min(H, W)

    for c in range(1, K):
        for attempt in range(max_tries):
            shrink = 1.0 if attempt < max_tries // 2 else 0.6
            size = rng.uniform(0.18, 0.38) * side * shrink
            if rng.random() < 0.5:
                hgt = size * rng.uniform(0.7, 1.3)
                wid = size * rng.uniform(0.7, 1.3)
                y0 = rng.uniform(0, max(H - hgt, 0))
                x0 = rng.uniform(0, max(W - wid, 0))
                kind, params = "rect", (y0, x0, y0 + hgt, x0 + wid)
            else:
                r = size / 2
                cy = rng.uniform(r, max(H - r, r))
                cx = rng.uniform(r, max(W - r, r))
                kind, params = "disc", (cy, cx, r)
            pix, blk = _shape_masks(kind, params, H, W, scale)
            if not blk.any() or (pix & taken).any():
                continue
            colour = np.clip(palette[c] + rng.normal(0.0, 0.04, size=3), 0, 1)
            img[:, pix] = colour[:, None] + rng.normal(0.0, 0.03, size=(3, int(pix.sum())))
            taken |= pix
            mask[blk] = c
            break
    return np.clip(img, 0.0, 1.0), mask


def batch_samples(images: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                  batch_size: int, dtype=np.float32) -> list[SampleBatch]:
    out = []
    for i in range(0, len(images), batch_size):
        out.append(SampleBatch(Tensor(np.stack(images[i : i + batch_size]), dtype=dtype),
                               np.stack(masks[i : i + batch_size]).astype(np.int64)))
    return out


def generate_toy_dataset(n: int, H: int = 64, W: int = 64, K: int = 3, seed: int = 0,
                         batch_size: int = 16, scale: int = 2, dtype=np.float32) -> list[SampleBatch]:
    """``n`` seeded toy samples grouped into batches. Sample ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise DataError("n must be >= 1")
    pairs = [toy_sample(H, W, K, np.random.default_rng([seed, i]), scale) for i in range(n)]
    return batch_samples([p[0] for p in pairs], [p[1] for p in pairs], batch_size, dtype)


# -- PPM / PGM ------------------------------------------------------------------------
def read_image(path) -> np.ndarray:
    """PPM (P6) -> float array ``[3, H, W]`` in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "RGB":
                raise DataError(f"{path}: expected a binary RGB PPM, got {im.format}/{im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """PGM (P5, one byte per class id) -> int64 ``[H, W]``."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "L":
                raise DataError(f"{path}: expected a binary 8-bit PGM, got {im.format}/{im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return arr.astype(np.int64)


def write_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PPM")


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() > 255:
        raise DataError("mask class ids must fit in one byte")
    Image.fromarray(mask.astype(np.uint8)).save(path, format="PPM")


def load_pnm_dataset(directory, batch_size: int = 16, num_classes: int | None = None,
                     scale: int = 2, dtype=np.float32) -> list[SampleBatch]:
    """Pair ``<stem>.ppm`` images with ``<stem>.pgm`` masks (sorted by stem)."""
    directory = Path(directory)
    stems = sorted(p.stem for p in directory.glob("*.ppm"))
    if not stems:
        raise DataError(f"no .ppm images in {directory}")
    images, masks = [], []
    for stem in stems:
        mpath = directory / f"{stem}.pgm"
        if not mpath.exists():
            raise DataError(f"image {stem}.ppm has no matching {stem}.pgm")
        img, mask = read_image(directory / f"{stem}.ppm"), read_mask(mpath)
        if mask.shape != (img.shape[1] // scale, img.shape[2] // scale) or img.shape[1] % scale:
            raise DataError(f"{stem}: mask {mask.shape} is not 1/{scale} of image {img.shape[1:]}")
        if num_classes is not None and mask.max() >= num_classes:
            raise DataError(f"{stem}: mask holds class {mask.max()} >= {num_classes}")
        images.append(img)
        masks.append(mask)
    if len({im.shape for im in images}) > 1:
        raise DataError("all images in a dataset must share one resolution")
    return batch_samples(images, masks, batch_size, dtype)


def export_pnm_dataset(directory, batches: Sequence[SampleBatch], prefix: str = "sample") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written, i = [], 0
    for b in batches:
        for img, mask in zip(b.images.data, b.masks):
            stem = directory / f"{prefix}{i:05d}"
            write_image(stem.with_suffix(".ppm"), img)
            write_mask(stem.with_suffix(".pgm"), mask)
            written.append(stem.with_suffix(".ppm"))
            i += 1
    return written
