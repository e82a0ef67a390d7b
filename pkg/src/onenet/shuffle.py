"""Pixel-unshuffle / pixel-shuffle in the 2D layout and as flat index plans.

Sub-pixel ordering is row-major inside each ``s x s`` block: the pixel at
offset ``(dy, dx)`` of input channel ``c`` lands in output channel
``c * s**2 + dy * s + dx``.

The flat form works on per-sample vectors. A :class:`ShufflePlan` is a gather
index taking a flattened source tensor to the flattened target layout
``[P, C * s**2]`` (``P = (H/s) * (W/s)`` pixels in row-major order, gathered
channels contiguous per pixel). Two source layouts are supported:

``"chw"``
    ``[C, H*W]``, channel-major; this is how an image enters the network.
``"hwc"``
    ``[H*W, C]``, channels innermost; this is what every stage emits, so
    stage-to-stage rescaling never leaves the flat form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, GeometryError
from .tensor import Tensor, gather, permute, reshape

LAYOUTS = ("chw", "hwc")


def _check_scale(h: int, w: int, s: int) -> None:
    if s < 1:
        raise GeometryError(f"scale must be >= 1, got {s}")
    if h % s or w % s:
        raise GeometryError(f"spatial extents {(h, w)} are not divisible by scale {s}")


def pixel_unshuffle_2d(x: Tensor, s: int) -> Tensor:
    """``[B, C, H, W] -> [B, C*s*s, H/s, W/s]`` (space-to-depth)."""
    if x.ndim != 4:
        raise DimensionError(f"pixel_unshuffle_2d expects [B, C, H, W], got {x.shape}")
    B, C, H, W = x.shape
    _check_scale(H, W, s)
    if s == 1:
        return x
    y = reshape(x, (B, C, H // s, s, W // s, s))
    y = permute(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (B, C * s * s, H // s, W // s))


def pixel_shuffle_2d(x: Tensor, s: int) -> Tensor:
    """``[B, C*s*s, H, W] -> [B, C, H*s, W*s]`` (depth-to-space); inverse of the above."""
    if x.ndim != 4:
        raise DimensionError(f"pixel_shuffle_2d expects [B, C, H, W], got {x.shape}")
    if s < 1:
        raise GeometryError(f"scale must be >= 1, got {s}")
    B, Cs, H, W = x.shape
    if Cs % (s * s):
        raise GeometryError(f"channel count {Cs} is not divisible by s^2 = {s * s}")
    if s == 1:
        return x
    C = Cs // (s * s)
    y = reshape(x, (B, C, s, s, H, W))
    y = permute(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (B, C, H * s, W * s))


@dataclass(frozen=True, eq=False)
class ShufflePlan:
    """Precomputed 1D pixel-unshuffle for one ``(C, H, W, s)`` geometry.

    ``index_map[t]`` is the flat source position that moves to flat target
    position ``t``; ``inverse_map`` undoes it. Both arrays are read-only.
    """

    channels: int
    height: int
    width: int
    scale: int
    layout: str
    index_map: np.ndarray
    inverse_map: np.ndarray

    @property
    def length(self) -> int:
        return self.channels * self.height * self.width

    @property
    def out_pixels(self) -> int:
        return (self.height // self.scale) * (self.width // self.scale)

    @property
    def out_channels(self) -> int:
        return self.channels * self.scale * self.scale

    @property
    def source_shape(self) -> tuple[int, int]:
        hw = self.height * self.width
        return (self.channels, hw) if self.layout == "chw" else (hw, self.channels)

    @property
    def target_shape(self) -> tuple[int, int]:
        return (self.out_pixels, self.out_channels)


@lru_cache(maxsize=256)
def build_plan_1d(C: int, H: int, W: int, s: int, layout: str = "chw") -> ShufflePlan:
    """Build (and cache) the gather plan for one geometry."""
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    if C < 1:
        raise GeometryError(f"channel count must be >= 1, got {C}")
    _check_scale(H, W, s)
    Hs, Ws = H // s, W // s
    # target axes in order: (y', x', c, dy, dx)
    yq, xq, c, dy, dx = np.meshgrid(np.arange(Hs), np.arange(Ws), np.arange(C),
                                    np.arange(s), np.arange(s), indexing="ij")
    y = s * yq + dy
    x = s * xq + dx
    if layout == "chw":
        src = c * (H * W) + y * W + x
    else:
        src = (y * W + x) * C + c
    index = src.reshape(-1).astype(np.int64)
    inverse = np.empty_like(index)
    inverse[index] = np.arange(index.size, dtype=np.int64)
    index.setflags(write=False)
    inverse.setflags(write=False)
    return ShufflePlan(C, H, W, s, layout, index, inverse)


def apply_plan(x: Tensor, plan: ShufflePlan) -> Tensor:
    """Source layout ``[B, *plan.source_shape]`` -> ``[B, P, C*s*s]``."""
    if x.ndim != 3 or x.shape[1:] != plan.source_shape:
        raise GeometryError(f"input {x.shape} does not match plan source {plan.source_shape}")
    B = x.shape[0]
    flat = reshape(x, (B, plan.length))
    out = gather(flat, plan.index_map, axis=1, inverse=plan.inverse_map)
    return reshape(out, (B,) + plan.target_shape)


def apply_plan_inverse(y: Tensor, plan: ShufflePlan) -> Tensor:
    """``[B, P, C*s*s]`` -> source layout ``[B, *plan.source_shape]`` (pixel-shuffle)."""
    if y.ndim != 3 or y.shape[1:] != plan.target_shape:
        raise GeometryError(f"input {y.shape} does not match plan target {plan.target_shape}")
    B = y.shape[0]
    flat = reshape(y, (B, plan.length))
    out = gather(flat, plan.inverse_map, axis=1, inverse=plan.index_map)
    return reshape(out, (B,) + plan.source_shape)


def unshuffle_flat(x: Tensor, hw: tuple[int, int], s: int) -> Tensor:
    """Unshuffle a channels-innermost ``[B, H*W, C]`` activation by ``s``."""
    h, w = hw
    return apply_plan(x, build_plan_1d(x.shape[2], h, w, s, "hwc"))


def shuffle_flat(x: Tensor, hw: tuple[int, int], s: int) -> Tensor:
    """Pixel-shuffle ``[B, h*w, C*s*s]`` (grid ``hw``) up to ``[B, (h*s)*(w*s), C]``."""
    h, w = hw
    if x.shape[2] % (s * s):
        raise GeometryError(f"channel count {x.shape[2]} is not divisible by s^2 = {s * s}")
    plan = build_plan_1d(x.shape[2] // (s * s), h * s, w * s, s, "hwc")
    return apply_plan_inverse(x, plan)


def nchw_to_flat(x: Tensor) -> Tensor:
    """``[B, C, H, W] -> [B, H*W, C]``."""
    B, C, H, W = x.shape
    return reshape(permute(x, (0, 2, 3, 1)), (B, H * W, C))


def flat_to_nchw(x: Tensor, hw: tuple[int, int]) -> Tensor:
    """``[B, H*W, C] -> [B, C, H, W]``."""
    B, P, C = x.shape
    h, w = hw
    if h * w != P:
        raise GeometryError(f"grid {hw} does not hold {P} pixels")
    return permute(reshape(x, (B, h, w, C)), (0, 3, 1, 2))
