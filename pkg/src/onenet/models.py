"""Network families built from a :class:`ModelConfig`.

``onenet_ed``
    1D encoder and 1D decoder.
``onenet_e``
    1D encoder with the 2D U-Net decoder.
``unet_baseline``
    Plain U-Net (max-pool encoder, transposed-conv decoder).

Channel ladder, shared by all three: ``widths[i] = base * 2**i`` for
``i = 0..layers``. ``widths[0]`` lives at half the input resolution and each of
the ``layers`` encoder stages halves the grid again (for scale 2), so the input
must be divisible by ``scale**(layers + 1)`` and the logits come out at
``input / scale``.

* OneNet encoders start with a stem that unshuffles the image straight away
  (``3 -> 3*s*s`` channels) and maps it to ``widths[0]``.
* The U-Net baseline average-pools the image to the same half resolution first
  and then runs the usual double-conv ladder, so all variants consume and emit
  the same geometry.
* The 1D decoder first widens the bottleneck to ``s*s*widths[L-1]`` so that each
  pixel-shuffle lands exactly on the skip width; after the concat the width
  stays at ``2*widths[i]`` and the block ends at the next stage's pre-shuffle
  width.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, GeometryError
from .nn import (ChannelWiseConv, ChannelWiseUnit, Conv2d, Conv2dBlock, DecoderBlock,
                 EncoderBlock, Module, UpBlock2d)
from .ops import avg_pool2d
from .shuffle import flat_to_nchw, nchw_to_flat
from .tensor import Tensor, reshape

VARIANTS = ("onenet_e", "onenet_ed", "unet_baseline")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "onenet_ed"
    layers: int = 4
    base_channels: int = 64
    scale: int = 2
    use_spatial: bool = False
    spatial_kernel: int = 9
    num_classes: int = 2
    input_channels: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("layers", "base_channels", "num_classes", "input_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.scale < 2:
            raise ConfigError(f"scale must be >= 2, got {self.scale}")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ConfigError(f"spatial_kernel must be a positive odd integer, got {self.spatial_kernel}")

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.layers + 1)]

    @property
    def downscale(self) -> int:
        """Total input-to-bottleneck reduction per spatial axis."""
        return self.scale ** (self.layers + 1)

    def check_input(self, h: int, w: int) -> None:
        d = self.downscale
        if h % d or w % d:
            raise GeometryError(f"input {h}x{w} is not divisible by scale^(layers+1) = {d}")

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def config_hash(config: ModelConfig) -> int:
    return fnv1a_64(config.canonical_text().encode("utf-8"))


class Network(Module):
    """Common surface: ``forward(x, train=False) -> logits [B, K, H/s, W/s]``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        object.__setattr__(self, "config", config)

    def output_shape(self, input_shape: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        B, _, H, W = input_shape
        s = self.config.scale
        return (B, self.config.num_classes, H // s, W // s)

    def _check(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise GeometryError(f"expected [B, {self.config.input_channels}, H, W], got {x.shape}")
        self.config.check_input(x.shape[2], x.shape[3])


class _OneNetEncoder(Module):
    def __init__(self, cfg: ModelConfig, dtype):
        super().__init__()
        widths = cfg.widths
        self.stem = EncoderBlock(cfg.input_channels, widths[0], cfg.scale, cfg.use_spatial,
                                 cfg.spatial_kernel, layout="chw", dtype=dtype)
        self.n_blocks = cfg.layers
        for i in range(1, cfg.layers + 1):
            self.add_module(f"block{i}", EncoderBlock(widths[i - 1], widths[i], cfg.scale,
                                                      cfg.use_spatial, cfg.spatial_kernel,
                                                      dtype=dtype))

    def forward(self, x: Tensor, train: bool = False, trace: Optional[list] = None):
        """Returns (bottleneck, bottleneck grid, skips, skip grids), all flat."""
        B, C, H, W = x.shape
        y, hw = self.stem(reshape(x, (B, C, H * W)), (H, W), train=train)
        skips, grids = [y], [hw]
        if trace is not None:
            trace.append(("enc0", y.shape, hw))
        for i in range(1, self.n_blocks + 1):
            y, hw = getattr(self, f"block{i}")(y, hw, train=train)
            if trace is not None:
                trace.append((f"enc{i}", y.shape, hw))
            skips.append(y)
            grids.append(hw)
        return skips.pop(), grids.pop(), skips, grids


class OneNetED(Network):
    def __init__(self, config: ModelConfig, dtype=np.float32):
        super().__init__(config)
        cfg, widths, s = config, config.widths, config.scale
        L = cfg.layers
        self.encoder = _OneNetEncoder(cfg, dtype)
        self.bridge = ChannelWiseUnit(widths[L], s * s * widths[L - 1], dtype=dtype)
        for i in reversed(range(L)):
            c_out = s * s * widths[i - 1] if i > 0 else widths[0]
            self.add_module(f"dec{i}", DecoderBlock(s * s * widths[i], widths[i], c_out,
                                                    c_mid=2 * widths[i], scale=s,
                                                    use_spatial=cfg.use_spatial,
                                                    spatial_kernel=cfg.spatial_kernel,
                                                    dtype=dtype))
        self.head = ChannelWiseConv(widths[0], cfg.num_classes, bias=True, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False, trace: Optional[list] = None) -> Tensor:
        self._check(x)
        y, hw, skips, grids = self.encoder(x, train=train, trace=trace)
        y = self.bridge(y, train=train)
        for i in reversed(range(self.config.layers)):
            y, hw = getattr(self, f"dec{i}")(y, skips[i], hw, train=train)
            if trace is not None:
                trace.append((f"dec{i}", y.shape, hw))
        return flat_to_nchw(self.head(y), hw)


class OneNetE(Network):
    def __init__(self, config: ModelConfig, dtype=np.float32):
        super().__init__(config)
        cfg, widths = config, config.widths
        self.encoder = _OneNetEncoder(cfg, dtype)
        for i in reversed(range(cfg.layers)):
            self.add_module(f"dec{i}", UpBlock2d(widths[i + 1], widths[i], widths[i],
                                                 scale=cfg.scale, dtype=dtype))
        self.head = Conv2d(widths[0], cfg.num_classes, 1, bias=True, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False, trace: Optional[list] = None) -> Tensor:
        self._check(x)
        y, hw, skips, grids = self.encoder(x, train=train, trace=trace)
        y = flat_to_nchw(y, hw)
        for i in reversed(range(self.config.layers)):
            y = getattr(self, f"dec{i}")(y, flat_to_nchw(skips[i], grids[i]), train=train)
            if trace is not None:
                trace.append((f"dec{i}", nchw_to_flat(y).shape, grids[i]))
        return self.head(y)


class UNetBaseline(Network):
    def __init__(self, config: ModelConfig, dtype=np.float32):
        super().__init__(config)
        cfg, widths = config, config.widths
        self.inc = Conv2dBlock(cfg.input_channels, widths[0], pool=False, dtype=dtype)
        for i in range(1, cfg.layers + 1):
            self.add_module(f"down{i}", Conv2dBlock(widths[i - 1], widths[i], scale=cfg.scale,
                                                    dtype=dtype))
        for i in reversed(range(cfg.layers)):
            self.add_module(f"dec{i}", UpBlock2d(widths[i + 1], widths[i], widths[i],
                                                 scale=cfg.scale, dtype=dtype))
        self.head = Conv2d(widths[0], cfg.num_classes, 1, bias=True, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False, trace: Optional[list] = None) -> Tensor:
        self._check(x)
        s = self.config.scale
        y = self.inc(avg_pool2d(x, s), train=train)
        skips = [y]
        if trace is not None:
            trace.append(("enc0", nchw_to_flat(y).shape, y.shape[2:]))
        for i in range(1, self.config.layers + 1):
            y = getattr(self, f"down{i}")(y, train=train)
            if trace is not None:
                trace.append((f"enc{i}", nchw_to_flat(y).shape, y.shape[2:]))
            skips.append(y)
        y = skips.pop()
        for i in reversed(range(self.config.layers)):
            y = getattr(self, f"dec{i}")(y, skips[i], train=train)
            if trace is not None:
                trace.append((f"dec{i}", nchw_to_flat(y).shape, y.shape[2:]))
        return self.head(y)


_FAMILIES = {"onenet_ed": OneNetED, "onenet_e": OneNetE, "unet_baseline": UNetBaseline}


def build(config: ModelConfig, seed: Optional[int] = 0, dtype=np.float32) -> Network:
    """Construct the network for ``config``; initialise it when ``seed`` is not None."""
    net = _FAMILIES[config.variant](config, dtype=dtype)
    if seed is not None:
        init_weights(net, seed)
    return net


def init_weights(net: Module, seed: int) -> None:
    """Kaiming-normal (fan-in, gain sqrt 2) conv weights; constants elsewhere.

    Norm running statistics are reset too, so the result depends on ``seed`` only.
    """
    rng = np.random.default_rng(seed)
    for _, p in net.named_parameters():
        if p.fan_in:
            p.data[...] = rng.normal(0.0, np.sqrt(2.0 / p.fan_in), size=p.shape)
        else:
            p.data[...] = p.fill
    for name, b in net.named_buffers():
        b.data[...] = 1.0 if name.endswith("running_var") else 0.0
