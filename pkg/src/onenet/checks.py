"""Randomised oracle/property suites behind ``onenet check``.

Each suite returns a :class:`SuiteResult` with pass/fail counts and the first
counterexample (shapes and seed) so a failure can be replayed. Library
functions are looked up through their modules at call time, which lets tests
inject faults with ``monkeypatch``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import cost, models, nn, ops, reference, shuffle
from .gradcheck import check_gradients
from .tensor import Tensor, mul, reshape, sum_all

SUITES = ("shuffle", "conv", "grad", "model")


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    counterexample: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def record(self, ok: bool, detail: Callable[[], str]) -> None:
        if ok:
            self.passed += 1
            return
        self.failed += 1
        if self.counterexample is None:
            self.counterexample = detail()

    def summary(self) -> str:
        line = f"suite {self.name}: {self.passed} passed, {self.failed} failed"
        if self.counterexample:
            line += f"\n  first counterexample: {self.counterexample}"
        return line


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.abs(b).max()), 1e-30)
    return float(np.abs(np.asarray(a, np.float64) - b).max()) / scale


# -- shuffle --------------------------------------------------------------------------
def shuffle_case(rng: np.random.Generator, max_c: int = 8, max_hw: int = 12) -> dict:
    s = int(rng.choice([1, 2, 3]))
    return dict(C=int(rng.integers(1, max_c + 1)), H=s * int(rng.integers(1, max_hw // s + 1)),
                W=s * int(rng.integers(1, max_hw // s + 1)), s=s,
                layout=str(rng.choice(shuffle.LAYOUTS)), B=int(rng.integers(1, 3)))


def check_shuffle_case(case: dict, rng: np.random.Generator) -> Optional[str]:
    """Name of the first violated property, or None."""
    C, H, W, s, layout, B = (case[k] for k in ("C", "H", "W", "s", "layout", "B"))
    plan = shuffle.build_plan_1d(C, H, W, s, layout)
    if not np.array_equal(plan.index_map, reference.unshuffle_index_bruteforce(C, H, W, s, layout)):
        return "plan index != 2D reference unshuffle"
    x = Tensor(rng.standard_normal((B,) + plan.source_shape), dtype=np.float64)
    y = shuffle.apply_plan(x, plan)
    img = x.data.reshape(B, C, H, W) if layout == "chw" else \
        x.data.reshape(B, H, W, C).transpose(0, 3, 1, 2)
    want = reference.pixel_unshuffle_loops(img, s).transpose(0, 2, 3, 1).reshape(y.shape)
    if not np.array_equal(y.data, want):
        return "1D plan output != 2D reference unshuffle"
    if not np.array_equal(shuffle.apply_plan_inverse(y, plan).data, x.data):
        return "shuffle(unshuffle(x)) != x (1D)"
    x2 = Tensor(img, dtype=np.float64)
    if not np.array_equal(shuffle.pixel_shuffle_2d(shuffle.pixel_unshuffle_2d(x2, s), s).data, img):
        return "shuffle(unshuffle(x)) != x (2D)"
    return None


def run_shuffle(cases: int = 500, seed: int = 0) -> SuiteResult:
    res = SuiteResult("shuffle")
    rng = np.random.default_rng(seed)
    for i in range(cases):
        case = shuffle_case(rng)
        bad = check_shuffle_case(case, np.random.default_rng([seed, i]))
        res.record(bad is None, lambda: f"{bad}: {case} (seed={seed}, case={i})")
    return res


# -- conv -------------------------------------------------------------------------------
def channelwise_vs_pointwise(rng: np.random.Generator, dtype=np.float32) -> tuple[float, dict]:
    """Relative error between the channel-wise 1D conv and a 1x1 2D conv."""
    B, H, W = (int(v) for v in rng.integers(1, 7, size=3))
    c_in, c_out = (int(v) for v in rng.integers(1, 33, size=2))
    layer = nn.ChannelWiseConv(c_in, c_out, bias=True, dtype=dtype)
    layer.weight.data[...] = rng.standard_normal((c_out, c_in))
    layer.bias.data[...] = rng.standard_normal(c_out)
    x = rng.standard_normal((B, c_in, H, W)).astype(dtype)
    got = shuffle.flat_to_nchw(layer(shuffle.nchw_to_flat(Tensor(x))), (H, W)).data
    want = ops.conv2d(Tensor(x), Tensor(layer.weight.data.reshape(c_out, c_in, 1, 1)),
                      Tensor(layer.bias.data)).data
    return _rel_err(got, want.astype(np.float64)), dict(B=B, H=H, W=W, c_in=c_in, c_out=c_out)


def run_conv(cases: int = 200, oracle_cases: int = 30, seed: int = 0) -> SuiteResult:
    res = SuiteResult("conv")
    rng = np.random.default_rng(seed)
    for i in range(cases):
        err, shape = channelwise_vs_pointwise(rng)
        res.record(err < 1e-6, lambda: f"channel-wise vs 1x1 conv rel err {err:.3g}: {shape} "
                                       f"(seed={seed}, case={i})")
    for i in range(oracle_cases):
        B, C, O = (int(v) for v in rng.integers(1, 4, size=3))
        k = int(rng.integers(1, 5))
        stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, k))
        L = int(rng.integers(k, 20))
        x, w, b = rng.standard_normal((B, C, L)), rng.standard_normal((O, C, k)), rng.standard_normal(O)
        got = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
        err = _rel_err(got, reference.conv1d_loops(x, w, b, stride, pad))
        res.record(err < 1e-12, lambda: f"conv1d vs loops rel err {err:.3g}: "
                                        f"x{x.shape} w{w.shape} stride={stride} pad={pad} "
                                        f"(seed={seed}, case={i})")
        H, W = int(rng.integers(k, 9)), int(rng.integers(k, 9))
        x2, w2 = rng.standard_normal((B, C, H, W)), rng.standard_normal((O, C, k, k))
        got = ops.conv2d(Tensor(x2), Tensor(w2), Tensor(b), stride=stride, padding=pad).data
        err2 = _rel_err(got, reference.conv2d_loops(x2, w2, b, stride, pad))
        res.record(err2 < 1e-12, lambda: f"conv2d vs loops rel err {err2:.3g}: "
                                         f"x{x2.shape} w{w2.shape} stride={stride} pad={pad} "
                                         f"(seed={seed}, case={i})")
    return res


# -- grad ----------------------------------------------------------------------------------
def _randomise(module: nn.Module, rng: np.random.Generator) -> None:
    for _, p in module.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.5 + (1.0 if p.fill == 1.0 else 0.0)


def block_cases() -> list[tuple[str, Callable[[], nn.Module], tuple, Callable]]:
    """(name, factory, input shape, forward(module, x)) for every building block."""
    f64 = np.float64

    def enc(layout, spatial):
        return lambda: nn.EncoderBlock(3, 4, 2, use_spatial=spatial, spatial_kernel=3,
                                       layout=layout, dtype=f64)

    def enc_fwd(m, x):
        return m(x, (4, 4), train=True)[0]

    def dec_fwd(m, x):
        skip = Tensor(np.linspace(-1, 1, 2 * 16 * 3).reshape(2, 16, 3), dtype=f64)
        return m(x, skip, (2, 2), train=True)[0]

    def up_fwd(m, x):
        skip = Tensor(np.linspace(-1, 1, 2 * 2 * 16).reshape(2, 2, 4, 4), dtype=f64)
        return m(x, skip, train=True)

    def train_fwd(m, x):
        return m(x, train=True)

    return [
        ("channelwise_conv", lambda: nn.ChannelWiseConv(3, 4, bias=True, dtype=f64), (2, 5, 3),
         lambda m, x: m(x)),
        ("spatial_conv", lambda: nn.SpatialConv(5, dtype=f64), (2, 6, 3), lambda m, x: m(x)),
        ("channelwise_unit", lambda: nn.ChannelWiseUnit(3, 4, dtype=f64), (2, 5, 3), train_fwd),
        ("encoder_block_chw", enc("chw", False), (2, 3, 16), enc_fwd),
        ("encoder_block_hwc", enc("hwc", False), (2, 16, 3), enc_fwd),
        ("encoder_block_spatial", enc("hwc", True), (2, 16, 3), enc_fwd),
        ("decoder_block", lambda: nn.DecoderBlock(8, 3, 4, c_mid=6, dtype=f64), (2, 4, 8), dec_fwd),
        ("decoder_block_spatial", lambda: nn.DecoderBlock(8, 3, 4, use_spatial=True,
                                                          spatial_kernel=3, dtype=f64),
         (2, 4, 8), dec_fwd),
        ("conv2d", lambda: nn.Conv2d(2, 3, 3, padding=1, bias=True, dtype=f64), (2, 2, 4, 4),
         lambda m, x: m(x)),
        ("conv_transpose2d", lambda: nn.ConvTranspose2d(3, 2, 2, dtype=f64), (2, 3, 2, 2),
         lambda m, x: m(x)),
        ("double_conv2d", lambda: nn.DoubleConv2d(2, 3, dtype=f64), (2, 2, 4, 4), train_fwd),
        ("conv2d_block", lambda: nn.Conv2dBlock(2, 3, pool=True, dtype=f64), (2, 2, 4, 4), train_fwd),
        ("up_block2d", lambda: nn.UpBlock2d(4, 2, 2, dtype=f64), (2, 4, 2, 2), up_fwd),
    ]


def model_grad_configs() -> list[models.ModelConfig]:
    return [models.ModelConfig(variant=v, layers=2, base_channels=4, num_classes=3,
                               use_spatial=sp, spatial_kernel=3)
            for v in models.VARIANTS for sp in (False, True)]


def run_grad(seed: int = 0, tol: float = 1e-5, directions: int = 2) -> tuple[SuiteResult, int]:
    """Returns the suite result and the total number of probes."""
    from .train import weighted_cross_entropy

    res = SuiteResult("grad")
    probes = 0
    for i, (name, factory, shape, fwd) in enumerate(block_cases()):
        rng = np.random.default_rng([seed, i])
        m = factory()
        _randomise(m, rng)
        x = Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)
        probe = Tensor(rng.standard_normal(fwd(m, x).shape), dtype=np.float64)
        names, params = zip(*m.named_parameters())
        r = check_gradients(lambda: sum_all(mul(fwd(m, x), probe)), [x, *params],
                            directions=directions, rng=rng, names=["x", *names])
        probes += r.probes
        res.record(r.ok(tol), lambda: f"block {name} input {shape}: worst {r.worst(1)} "
                                      f"(seed={seed}, case={i})")
    for j, cfg in enumerate(model_grad_configs()):
        rng = np.random.default_rng([seed, 100 + j])
        net = models.build(cfg, seed=seed, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 3, 16, 16)), requires_grad=True, dtype=np.float64)
        target = rng.integers(0, cfg.num_classes, size=(2, 8, 8))
        names, params = zip(*net.named_parameters())
        r = check_gradients(lambda: weighted_cross_entropy(net(x, train=True), target),
                            [x, *params], directions=directions, rng=rng, names=["x", *names])
        probes += r.probes
        res.record(r.ok(tol), lambda: f"model {cost.report_name(cfg)} input (2, 3, 16, 16): "
                                      f"worst {r.worst(1)} (seed={seed}, case={j})")
    return res, probes


# -- model -----------------------------------------------------------------------------------
def encoder_stack(n: int, base: int = 4, seed: int = 0, use_spatial: bool = False) -> nn.Module:
    """``n`` scale-2 encoder blocks in eval mode with strictly positive weights.

    Fed a positive input, every pre-activation is positive, so no ReLU cuts a
    path and every input that is structurally connected gets a positive
    gradient: the support is the receptive field itself.
    """
    rng = np.random.default_rng(seed)
    stack = nn.Module()
    c = 3
    for i in range(n):
        blk = nn.EncoderBlock(c, base, 2, use_spatial=use_spatial, spatial_kernel=3,
                              layout="chw" if i == 0 else "hwc", dtype=np.float64)
        for _, p in blk.named_parameters():
            p.data[...] = rng.uniform(0.1, 1.0, size=p.shape)
        stack.add_module(f"b{i}", blk)
        c = base
    return stack


def input_support(forward: Callable[[Tensor], Tensor], shape: tuple, pixel: int) -> np.ndarray:
    """Boolean [H, W] mask of input positions that the output ``pixel`` depends on."""
    x = Tensor(np.random.default_rng(1).uniform(0.1, 1.0, size=shape), requires_grad=True,
               dtype=np.float64)
    y = forward(x)  # [1, P, C]
    sel = np.zeros(y.shape)
    sel[0, pixel, :] = 1.0
    sum_all(mul(y, Tensor(sel, dtype=np.float64))).backward()
    return np.abs(x.grad[0]).sum(axis=0) != 0


def receptive_field_ok(n: int, pixel: Optional[int] = None, use_spatial: bool = False,
                       seed: int = 0) -> tuple[bool, np.ndarray, np.ndarray]:
    """Check that one stage-``n`` output pixel sees exactly its 2^n x 2^n block."""
    side = 2 ** n
    H = W = 2 * side
    stack = encoder_stack(n, seed=seed, use_spatial=use_spatial)

    def forward(x):
        y, hw = reshape_chw(x), (H, W)
        for i in range(n):
            y, hw = getattr(stack, f"b{i}")(y, hw, train=False)
        return y

    P = (H // side) * (W // side)
    pixel = P - 1 if pixel is None else pixel
    got = input_support(forward, (1, 3, H, W), pixel)
    want = np.zeros((H, W), dtype=bool)
    py, px = divmod(pixel, W // side)
    want[py * side:(py + 1) * side, px * side:(px + 1) * side] = True
    return bool(np.array_equal(got, want)), got, want


def reshape_chw(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    return reshape(x, (B, C, H * W))


def run_model(seed: int = 0) -> SuiteResult:
    res = SuiteResult("model")
    for variant in models.VARIANTS:
        for layers in (1, 2, 3):
            for sp in (False, True):
                cfg = models.ModelConfig(variant=variant, layers=layers, base_channels=4,
                                         use_spatial=sp, num_classes=3)
                d = cfg.downscale
                shape = (2, 3, d, 2 * d)
                net = models.build(cfg, seed=seed)
                rep = cost.analyze(cfg, shape)
                built = net.num_parameters()
                res.record(rep.params == built, lambda: f"analyze params {rep.params} != built "
                                                        f"{built}: {cfg}")
                x = Tensor(np.random.default_rng(seed).random(shape), dtype=np.float32)
                out = net(x)
                res.record(out.shape == net.output_shape(shape),
                           lambda: f"output {out.shape} != {net.output_shape(shape)}: {cfg}")
        off = cost.analyze(models.ModelConfig(variant=variant, layers=2, num_classes=3), (1, 3, 64, 64))
        on = cost.analyze(models.ModelConfig(variant=variant, layers=2, num_classes=3,
                                             use_spatial=True), (1, 3, 64, 64))
        res.record(*spatial_toggle_ok(off, on))
    for n in (1, 2, 3):
        ok, got, want = receptive_field_ok(n, seed=seed)
        res.record(ok, lambda: f"receptive field after {n} stages: support {got.sum()} px, "
                               f"expected {want.sum()} (seed={seed})")
    return res


def spatial_toggle_ok(off: cost.CostReport, on: cost.CostReport) -> tuple[bool, Callable[[], str]]:
    """Toggling the spatial conv adds exactly its rows and keeps every geometry."""
    base_rows = {r.name: r for r in off.rows}
    extra = [r for r in on.rows if r.name not in base_rows]
    same_geom = all(base_rows[r.name].out_shape == r.out_shape for r in on.rows if r.name in base_rows)
    cfg = on.config
    ok = (same_geom and all(r.kind == "spatial1d" for r in extra)
          and on.params - off.params == sum(r.params for r in extra)
          and all(r.params == cfg.spatial_kernel + 1 for r in extra)
          and len(on.rows) - len(off.rows) == len(extra))
    if cfg.variant == "unet_baseline":
        ok = ok and not extra
    return ok, lambda: (f"spatial toggle on {off.name}: +{on.params - off.params} params over "
                        f"{len(extra)} new rows, geometry unchanged={same_geom}")


def run_suite(name: str, seed: int = 0) -> list[SuiteResult]:
    if name == "all":
        return [r for n in SUITES for r in run_suite(n, seed)]
    if name == "shuffle":
        return [run_shuffle(seed=seed)]
    if name == "conv":
        return [run_conv(seed=seed)]
    if name == "grad":
        return [run_grad(seed=seed)[0]]
    if name == "model":
        return [run_model(seed=seed)]
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
