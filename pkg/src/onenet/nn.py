"""Layers and blocks: channel-wise 1D convolution, flat spatial convolution,
batch norm, the OneNet encoder/decoder blocks and the 2D U-Net blocks.

OneNet blocks keep activations flat as ``[B, P, C]`` (pixels row-major,
channels innermost) and carry the pixel grid ``(h, w)`` alongside, because the
tensor itself no longer knows it.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .ops import batch_norm, conv1d, conv2d, max_pool2d
from .shuffle import (apply_plan, build_plan_1d, pixel_shuffle_2d, shuffle_flat,
                      unshuffle_flat)
from .tensor import Tensor, add_bias, concat, permute, relu, reshape

Grid = tuple[int, int]


class Parameter(Tensor):
    """A trainable tensor. ``fan_in`` drives Kaiming initialisation; ``None`` means
    the parameter is a norm scale/shift or a bias and gets a constant init."""

    def __init__(self, data, dtype=None, fan_in: Optional[int] = None, fill: float = 0.0):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.fan_in = fan_in
        self.fill = fill


class Module:
    """Minimal container: attributes that are Parameters or Modules are registered
    in assignment order, which fixes parameter paths and init order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: Tensor) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state(self) -> dict[str, Tensor]:
        """Ordered map of every parameter and buffer by dotted path."""
        out = dict(self.named_parameters())
        out.update(self.named_buffers())
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class ChannelWiseConv(Module):
    """Dense ``c_in -> c_out`` map applied independently at every pixel.

    Realised literally as a 1D convolution with kernel = stride = ``c_in`` over
    the flattened ``[B, 1, P*c_in]`` sequence, so each window is exactly one
    pixel's channel vector.
    """

    def __init__(self, c_in: int, c_out: int, bias: bool = False, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.weight = Parameter(np.zeros((c_out, c_in)), dtype=dtype, fan_in=c_in)
        self.bias = Parameter(np.zeros(c_out), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ContractError(f"channel-wise conv expects [B, P, {self.c_in}], got {x.shape}")
        B, P, _ = x.shape
        seq = reshape(x, (B, 1, P * self.c_in))
        kernel = reshape(self.weight, (self.c_out, 1, self.c_in))
        out = permute(conv1d(seq, kernel, stride=self.c_in), (0, 2, 1))
        return add_bias(out, self.bias, axis=2) if self.bias is not None else out


class SpatialConv(Module):
    """Single-channel ``same`` 1D convolution across the whole flat ``P*C`` sequence."""

    def __init__(self, kernel: int = 9, dtype=np.float32):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"spatial kernel must be a positive odd integer, got {kernel}")
        self.kernel = kernel
        self.weight = Parameter(np.zeros((1, 1, kernel)), dtype=dtype, fan_in=kernel)
        self.bias = Parameter(np.zeros(1), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        B, P, C = x.shape
        seq = reshape(x, (B, 1, P * C))
        out = conv1d(seq, self.weight, self.bias, stride=1, padding=(self.kernel - 1) // 2)
        return reshape(out, (B, P, C))


class BatchNorm(Module):
    """Per-channel batch norm over every axis except ``axis``."""

    def __init__(self, channels: int, axis: int = 1, eps: float = 1e-5,
                 momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels, self.axis, self.eps, self.momentum = channels, axis, eps, momentum
        self.weight = Parameter(np.ones(channels), dtype=dtype, fill=1.0)
        self.bias = Parameter(np.zeros(channels), dtype=dtype)
        self.register_buffer("running_mean", Tensor(np.zeros(channels), dtype=dtype))
        self.register_buffer("running_var", Tensor(np.ones(channels), dtype=dtype))

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if x.shape[self.axis] != self.channels:
            raise DimensionError(f"batch norm has {self.channels} channels, input {x.shape}")
        return batch_norm(x, self.weight, self.bias, self.running_mean.data,
                          self.running_var.data, axis=self.axis, training=train,
                          momentum=self.momentum, eps=self.eps)


class ChannelWiseUnit(Module):
    """Channel-wise conv -> batch norm -> ReLU on a flat ``[B, P, C]`` tensor."""

    def __init__(self, c_in: int, c_out: int, dtype=np.float32):
        super().__init__()
        self.conv = ChannelWiseConv(c_in, c_out, bias=False, dtype=dtype)
        self.bn = BatchNorm(c_out, axis=2, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return relu(self.bn(self.conv(x), train=train))


class EncoderBlock(Module):
    """Pixel-unshuffle, optional spatial conv, then two channel-wise units.

    ``layout="chw"`` accepts ``[B, C, H*W]`` (a raw image); ``"hwc"`` accepts the
    ``[B, H*W, C]`` output of a previous stage.
    """

    def __init__(self, c_in: int, c_out: int, scale: int = 2, use_spatial: bool = False,
                 spatial_kernel: int = 9, layout: str = "hwc", dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.scale, self.layout = c_in, c_out, scale, layout
        self.spatial = SpatialConv(spatial_kernel, dtype=dtype) if use_spatial else None
        self.conv1 = ChannelWiseUnit(c_in * scale * scale, c_out, dtype=dtype)
        self.conv2 = ChannelWiseUnit(c_out, c_out, dtype=dtype)

    def forward(self, x: Tensor, hw: Grid, train: bool = False) -> tuple[Tensor, Grid]:
        h, w = hw
        s = self.scale
        if self.layout == "chw":
            x = apply_plan(x, build_plan_1d(self.c_in, h, w, s, "chw"))
        else:
            if x.ndim != 3 or x.shape[2] != self.c_in:
                raise ContractError(f"encoder block expects [B, P, {self.c_in}], got {x.shape}")
            x = unshuffle_flat(x, hw, s)
        if self.spatial is not None:
            x = self.spatial(x)
        x = self.conv1(x, train=train)
        x = self.conv2(x, train=train)
        return x, (h // s, w // s)


class DecoderBlock(Module):
    """Pixel-shuffle upscale, skip concat, channel-wise unit, optional spatial
    conv, channel-wise unit.

    The shuffle divides ``c_in`` by ``scale**2``; after concatenating ``c_skip``
    skip channels the first unit keeps the width (``c_mid`` defaults to the
    concatenated width) and the second maps to ``c_out``.
    """

    def __init__(self, c_in: int, c_skip: int, c_out: int, c_mid: Optional[int] = None,
                 scale: int = 2, use_spatial: bool = False, spatial_kernel: int = 9,
                 dtype=np.float32):
        super().__init__()
        if c_in % (scale * scale):
            raise ConfigError(f"decoder input width {c_in} is not divisible by {scale * scale}")
        self.c_in, self.c_skip, self.c_out, self.scale = c_in, c_skip, c_out, scale
        self.c_cat = c_in // (scale * scale) + c_skip
        self.c_mid = self.c_cat if c_mid is None else c_mid
        self.conv1 = ChannelWiseUnit(self.c_cat, self.c_mid, dtype=dtype)
        self.spatial = SpatialConv(spatial_kernel, dtype=dtype) if use_spatial else None
        self.conv2 = ChannelWiseUnit(self.c_mid, c_out, dtype=dtype)

    def forward(self, x: Tensor, skip: Optional[Tensor], hw: Grid,
                train: bool = False) -> tuple[Tensor, Grid]:
        s = self.scale
        x = shuffle_flat(x, hw, s)
        hw = (hw[0] * s, hw[1] * s)
        if self.c_skip:
            if skip is None:
                raise DimensionError("decoder block was built with a skip input")
            x = concat([x, skip], axis=2)
        x = self.conv1(x, train=train)
        if self.spatial is not None:
            x = self.spatial(x)
        x = self.conv2(x, train=train)
        return x, hw


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, padding: int = 0,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        self.padding = padding
        self.weight = Parameter(np.zeros((c_out, c_in, kernel, kernel)), dtype=dtype,
                                fan_in=c_in * kernel * kernel)
        self.bias = Parameter(np.zeros(c_out), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class ConvTranspose2d(Module):
    """Transposed convolution with kernel = stride = ``scale``.

    With non-overlapping windows this is exactly a 1x1 convolution to
    ``c_out * scale**2`` channels followed by a pixel-shuffle, which is how it
    is computed here.
    """

    def __init__(self, c_in: int, c_out: int, scale: int = 2, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.scale = c_in, c_out, scale
        self.weight = Parameter(np.zeros((c_in, c_out, scale, scale)), dtype=dtype, fan_in=c_in)
        self.bias = Parameter(np.zeros(c_out), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        s = self.scale
        kernel = reshape(permute(self.weight, (1, 2, 3, 0)), (self.c_out * s * s, self.c_in, 1, 1))
        y = pixel_shuffle_2d(conv2d(x, kernel), s)
        return add_bias(y, self.bias, axis=1)


class DoubleConv2d(Module):
    """Two 3x3 (same-padded) conv -> batch norm -> ReLU layers."""

    def __init__(self, c_in: int, c_out: int, c_mid: Optional[int] = None, kernel: int = 3,
                 dtype=np.float32):
        super().__init__()
        c_mid = c_out if c_mid is None else c_mid
        pad = kernel // 2
        self.conv1 = Conv2d(c_in, c_mid, kernel, padding=pad, bias=False, dtype=dtype)
        self.bn1 = BatchNorm(c_mid, axis=1, dtype=dtype)
        self.conv2 = Conv2d(c_mid, c_out, kernel, padding=pad, bias=False, dtype=dtype)
        self.bn2 = BatchNorm(c_out, axis=1, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        x = relu(self.bn1(self.conv1(x), train=train))
        return relu(self.bn2(self.conv2(x), train=train))


class Conv2dBlock(Module):
    """Baseline encoder block: max pool (when ``pool``) then a double 3x3 conv."""

    def __init__(self, c_in: int, c_out: int, pool: bool = True, scale: int = 2,
                 kernel: int = 3, dtype=np.float32):
        super().__init__()
        self.pool = scale if pool else 0
        self.convs = DoubleConv2d(c_in, c_out, kernel=kernel, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        if self.pool:
            x = max_pool2d(x, self.pool)
        return self.convs(x, train=train)


class UpBlock2d(Module):
    """Baseline decoder block: transposed-conv upscale, skip concat, double 3x3 conv."""

    def __init__(self, c_in: int, c_skip: int, c_out: int, scale: int = 2,
                 kernel: int = 3, dtype=np.float32):
        super().__init__()
        c_up = c_in // 2
        self.up = ConvTranspose2d(c_in, c_up, scale, dtype=dtype)
        self.convs = DoubleConv2d(c_up + c_skip, c_out, kernel=kernel, dtype=dtype)

    def forward(self, x: Tensor, skip: Tensor, train: bool = False) -> Tensor:
        x = concat([self.up(x), skip], axis=1)
        return self.convs(x, train=train)
