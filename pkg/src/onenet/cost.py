"""Static parameter / MAC / activation accounting.

The walk below re-derives every layer from the config alone (it never builds
a network), so comparing its parameter total against a built network is a
genuine cross-check. Row names for parameterised layers are the module paths
of the built network.

Conventions: one MAC per weight use; batch norm, ReLU, pooling and shuffles
cost no MACs; FLOPs = 2 * MACs; parameter megabytes assume 4-byte floats.
Row helpers use only multiplication, so they also accept sympy symbols.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .errors import ConfigError, DomainError
from .models import ModelConfig

# Published reference rows: params (M), params (MB), FLOPs (G), inference memory (MB).
PUBLISHED_MODEL_SIZES = {
    "unet_4": (31.04, 124.03, 104.72, 509.61),
    "unet_5": (124.42, 497.41, 130.80, 524.29),
    "resnet_34": (25.05, 98.07, 29.40, 241.17),
    "resnet_50": (74.07, 287.83, 84.98, 450.36),
    "mobilenet": (14.40, 57.47, 83.96, 671.09),
    "onenet_e_4": (16.39, 65.42, 78.42, 639.63),
    "onenet_e_5": (65.73, 262.63, 98.82, 656.41),
    "onenet_ed_4": (9.08, 36.30, 22.92, 799.01),
    "onenet_ed_5": (36.38, 145.47, 39.00, 885.00),
}


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    macs: int
    out_shape: tuple  # per-sample (pixels, channels)
    activation_elements: int
    push_skip: bool = False
    pop_skip: bool = False


@dataclass
class CostReport:
    name: str
    rows: list[LayerCost]
    input_shape: tuple
    config: Optional[ModelConfig] = None
    notes: list[str] = field(default_factory=list)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def param_mb(self) -> float:
        return self.params * 4 / 1e6

    @property
    def gflops(self) -> float:
        return 2 * self.macs / 1e9

    @property
    def peak_activation_elements(self) -> int:
        """Peak live elements: current input + output + every skip still held."""
        held: list[int] = []
        cur = _prod(self.input_shape)
        peak = cur
        prev_pushed = False
        for r in self.rows:
            out = r.activation_elements
            live = out + sum(held) + (0 if prev_pushed else cur)
            peak = max(peak, live)
            if r.pop_skip and held:
                held.pop()
            prev_pushed = r.push_skip
            if r.push_skip:
                held.append(out)
            cur = out
        return peak

    def to_dict(self, reduction_pct: Optional[float] = None) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "param_mb": round(self.param_mb, 4),
            "macs": self.macs,
            "gflops": round(self.gflops, 4),
            "reduction_pct": None if reduction_pct is None else round(reduction_pct, 4),
        }

    def to_json(self) -> str:
        doc = self.to_dict()
        doc["layers"] = [
            {"name": r.name, "kind": r.kind, "params": r.params, "macs": r.macs,
             "out_shape": list(r.out_shape)}
            for r in self.rows
        ]
        return json.dumps(doc, indent=2)

    def table(self) -> str:
        lines = [f"{'layer':<34}{'kind':<12}{'params':>12}{'MACs':>16}  out (P x C)"]
        for r in self.rows:
            shape = "x".join(str(v) for v in r.out_shape)
            lines.append(f"{r.name:<34}{r.kind:<12}{r.params:>12,}{r.macs:>16,}  {shape}")
        lines.append(f"{'total':<46}{self.params:>12,}{self.macs:>16,}")
        lines.append(
            f"{self.name}: {self.params / 1e6:.2f} M params, {self.param_mb:.2f} MB, "
            f"{self.gflops:.2f} GFLOPs, peak activations "
            f"{self.peak_activation_elements * 4 / 1e6:.2f} MB")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def _prod(shape) -> int:
    n = 1
    for v in shape:
        n *= v
    return n


# -- per-layer helpers ---------------------------------------------------------
def channelwise_row(name, c_in, c_out, pixels, batch=1, bias=False) -> LayerCost:
    params = c_in * c_out + (c_out if bias else 0)
    return LayerCost(name, "channelwise", params, c_in * c_out * pixels * batch,
                     (pixels, c_out), pixels * c_out * batch)


def spatial_row(name, kernel, pixels, channels, batch=1) -> LayerCost:
    return LayerCost(name, "spatial1d", kernel + 1, kernel * pixels * channels * batch,
                     (pixels, channels), pixels * channels * batch)


def bn_row(name, channels, pixels, batch=1) -> LayerCost:
    return LayerCost(name, "batchnorm", 2 * channels, 0, (pixels, channels), pixels * channels * batch)


def free_row(name, kind, pixels, channels, batch=1, **flags) -> LayerCost:
    return LayerCost(name, kind, 0, 0, (pixels, channels), pixels * channels * batch, **flags)


def conv2d_row(name, c_in, c_out, kernel, h, w, batch=1, bias=False) -> LayerCost:
    params = c_in * c_out * kernel * kernel + (c_out if bias else 0)
    return LayerCost(name, "conv2d", params, c_in * c_out * kernel * kernel * h * w * batch,
                     (h * w, c_out), h * w * c_out * batch)


def conv_transpose_row(name, c_in, c_out, scale, h_in, w_in, batch=1) -> LayerCost:
    params = c_in * c_out * scale * scale + c_out
    pixels = h_in * w_in * scale * scale
    return LayerCost(name, "convT2d", params, c_in * c_out * scale * scale * h_in * w_in * batch,
                     (pixels, c_out), pixels * c_out * batch)


def onenet_encoder_block_rows(prefix, c_in, c_out, h_out, w_out, scale=2, spatial_kernel=None,
                              batch=1, push_skip=True) -> list[LayerCost]:
    """One unshuffle + [spatial] + 2 x (channel-wise, BN) block on a ``(h_out, w_out)`` output grid."""
    P = h_out * w_out
    c_un = c_in * scale * scale
    rows = [free_row(f"{prefix}.unshuffle", "unshuffle", P, c_un, batch)]
    if spatial_kernel:
        rows.append(spatial_row(f"{prefix}.spatial", spatial_kernel, P, c_un, batch))
    rows += [
        channelwise_row(f"{prefix}.conv1.conv", c_un, c_out, P, batch),
        bn_row(f"{prefix}.conv1.bn", c_out, P, batch),
        channelwise_row(f"{prefix}.conv2.conv", c_out, c_out, P, batch),
        bn_row(f"{prefix}.conv2.bn", c_out, P, batch),
    ]
    rows[-1].push_skip = push_skip
    return rows


def onenet_decoder_block_rows(prefix, c_in, c_skip, c_mid, c_out, h_out, w_out, scale=2,
                              spatial_kernel=None, batch=1) -> list[LayerCost]:
    P = h_out * w_out
    c_up = c_in // (scale * scale)
    c_cat = c_up + c_skip
    rows = [
        free_row(f"{prefix}.shuffle", "shuffle", P, c_up, batch),
        free_row(f"{prefix}.concat", "concat", P, c_cat, batch, pop_skip=True),
        channelwise_row(f"{prefix}.conv1.conv", c_cat, c_mid, P, batch),
        bn_row(f"{prefix}.conv1.bn", c_mid, P, batch),
    ]
    if spatial_kernel:
        rows.append(spatial_row(f"{prefix}.spatial", spatial_kernel, P, c_mid, batch))
    rows += [
        channelwise_row(f"{prefix}.conv2.conv", c_mid, c_out, P, batch),
        bn_row(f"{prefix}.conv2.bn", c_out, P, batch),
    ]
    return rows


def double_conv_rows(prefix, c_in, c_out, h, w, kernel=3, batch=1) -> list[LayerCost]:
    return [
        conv2d_row(f"{prefix}.conv1", c_in, c_out, kernel, h, w, batch),
        bn_row(f"{prefix}.bn1", c_out, h * w, batch),
        conv2d_row(f"{prefix}.conv2", c_out, c_out, kernel, h, w, batch),
        bn_row(f"{prefix}.bn2", c_out, h * w, batch),
    ]


def conv2d_block_rows(prefix, c_in, c_out, h_out, w_out, kernel=3, pool=True,
                      batch=1, push_skip=True) -> list[LayerCost]:
    """Baseline block: [max pool] + double conv, on a ``(h_out, w_out)`` output grid."""
    rows = [free_row(f"{prefix}.pool", "maxpool", h_out * w_out, c_in, batch)] if pool else []
    rows += double_conv_rows(f"{prefix}.convs", c_in, c_out, h_out, w_out, kernel, batch)
    rows[-1].push_skip = push_skip
    return rows


def up_block_2d_rows(prefix, c_in, c_skip, c_out, h_in, w_in, scale=2, batch=1) -> list[LayerCost]:
    c_up = c_in // 2
    h, w = h_in * scale, w_in * scale
    rows = [conv_transpose_row(f"{prefix}.up", c_in, c_up, scale, h_in, w_in, batch),
            free_row(f"{prefix}.concat", "concat", h * w, c_up + c_skip, batch, pop_skip=True)]
    return rows + double_conv_rows(f"{prefix}.convs", c_up + c_skip, c_out, h, w, batch=batch)


# -- whole networks ----------------------------------------------------------------
def _onenet_encoder_rows(cfg: ModelConfig, B: int, H: int, W: int) -> list[LayerCost]:
    s, widths = cfg.scale, cfg.widths
    k = cfg.spatial_kernel if cfg.use_spatial else None
    h, w = H // s, W // s
    rows = onenet_encoder_block_rows("encoder.stem", cfg.input_channels, widths[0], h, w, s, k, B)
    for i in range(1, cfg.layers + 1):
        h, w = h // s, w // s
        rows += onenet_encoder_block_rows(f"encoder.block{i}", widths[i - 1], widths[i], h, w, s, k,
                                          B, push_skip=i < cfg.layers)
    return rows


def _network_rows(cfg: ModelConfig, input_shape) -> tuple[list[LayerCost], list[str]]:
    B, C, H, W = input_shape
    if C != cfg.input_channels:
        raise ConfigError(f"input has {C} channels, config expects {cfg.input_channels}")
    cfg.check_input(H, W)
    s, widths, L = cfg.scale, cfg.widths, cfg.layers
    k = cfg.spatial_kernel if cfg.use_spatial else None
    grid = [(H // s ** (i + 1), W // s ** (i + 1)) for i in range(L + 1)]
    notes: list[str] = []
    rows: list[LayerCost] = []

    if cfg.variant == "unet_baseline":
        h, w = grid[0]
        rows.append(free_row("input.avgpool", "avgpool", h * w, C, B))
        rows += conv2d_block_rows("inc", C, widths[0], h, w, pool=False, batch=B)
        for i in range(1, L + 1):
            h, w = grid[i]
            rows += conv2d_block_rows(f"down{i}", widths[i - 1], widths[i], h, w, batch=B,
                                      push_skip=i < L)
    else:
        rows += _onenet_encoder_rows(cfg, B, H, W)

    if cfg.variant == "onenet_ed":
        h, w = grid[L]
        rows += [channelwise_row("bridge.conv", widths[L], s * s * widths[L - 1], h * w, B),
                 bn_row("bridge.bn", s * s * widths[L - 1], h * w, B)]
        for i in reversed(range(L)):
            h, w = grid[i]
            c_out = s * s * widths[i - 1] if i > 0 else widths[0]
            rows += onenet_decoder_block_rows(f"dec{i}", s * s * widths[i], widths[i], 2 * widths[i],
                                              c_out, h, w, s, k, B)
        h, w = grid[0]
        rows.append(channelwise_row("head", widths[0], cfg.num_classes, h * w, B, bias=True))
        notes.append("1D decoder: bottleneck widened to s^2 * widths[L-1]; each stage shuffles "
                     "to the skip width, keeps 2x skip width after concat, ends at the next "
                     "stage's pre-shuffle width")
    else:
        for i in reversed(range(L)):
            h, w = grid[i + 1]
            rows += up_block_2d_rows(f"dec{i}", widths[i + 1], widths[i], widths[i], h, w, s, B)
        h, w = grid[0]
        rows.append(conv2d_row("head", widths[0], cfg.num_classes, 1, h, w, B, bias=True))
    return rows, notes


def report_name(cfg: ModelConfig) -> str:
    name = f"{cfg.variant}_{cfg.layers}"
    return name + "_spatial" if cfg.use_spatial else name


def analyze(config: ModelConfig, input_shape: Sequence[int] = (1, 3, 512, 512),
            name: Optional[str] = None) -> CostReport:
    rows, notes = _network_rows(config, tuple(input_shape))
    return CostReport(name or report_name(config), rows, tuple(input_shape), config, notes)


@dataclass
class Comparison:
    baseline: str
    reports: list[CostReport]
    reductions: list[float]
    flop_reductions: list[float]

    def to_json(self) -> str:
        return json.dumps([r.to_dict(red) for r, red in zip(self.reports, self.reductions)], indent=2)

    def table(self) -> str:
        lines = [f"{'model':<24}{'params (M)':>12}{'param MB':>10}{'GMACs':>10}{'GFLOPs':>10}"
                 f"{'param red.':>12}{'FLOP red.':>11}"]
        for r, red, fred in zip(self.reports, self.reductions, self.flop_reductions):
            lines.append(f"{r.name:<24}{r.params / 1e6:>12.2f}{r.param_mb:>10.2f}{r.macs / 1e9:>10.2f}"
                         f"{r.gflops:>10.2f}{red:>11.1f}%{fred:>10.1f}%")
        lines.append(f"(reductions relative to {self.baseline})")
        return "\n".join(lines)


def compare(reports: Sequence[CostReport], baseline_name: str) -> Comparison:
    base = next((r for r in reports if r.name == baseline_name), None)
    if base is None:
        raise KeyError(f"baseline {baseline_name!r} not among {[r.name for r in reports]}")
    reds = [100.0 * (1 - r.params / base.params) for r in reports]
    freds = [100.0 * (1 - r.macs / base.macs) if base.macs else 0.0 for r in reports]
    return Comparison(baseline_name, list(reports), reds, freds)


# -- closed forms -------------------------------------------------------------------
def toy_mult_count(method: str, kernel: int = 2, channels: int = 2, pixels: int = 2,
                   scale: int = 1, stride: int = 1) -> int:
    """Multiplications for the two-pixel, two-channel downscaling example.

    ``conv2d_pool``: (kernel * channels) weights per output, ``pixels*scale/stride``
    convolution positions, ``channels`` outputs each.
    ``unshuffle_1d``: one channel-wise conv whose kernel spans the unshuffled
    ``pixels * channels`` vector, ``channels`` outputs.
    """
    if method == "conv2d_pool":
        return kernel * channels * (pixels * scale // stride) * channels
    if method == "unshuffle_1d":
        return pixels * channels * channels
    raise ValueError(f"unknown method {method!r}")


def block_param_ratio(k: int) -> Fraction:
    """Cost of a 2D double-conv block over a OneNet block: ``6k^2 / 12 = k^2 / 2``."""
    if int(k) != k or k < 2:
        raise DomainError(f"kernel size must be an integer >= 2, got {k}")
    return Fraction(int(k) ** 2, 2)
