import numpy as np
import pytest

from onenet import cost
from onenet.errors import ConfigError, GeometryError
from onenet.models import VARIANTS, ModelConfig, build, config_hash, fnv1a_64
from onenet.tensor import Tensor, mul, sum_all


def test_config_validation():
    for bad in (dict(layers=0), dict(variant="resnet"), dict(scale=1), dict(num_classes=1),
                dict(spatial_kernel=4), dict(base_channels=0)):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)


def test_widths_and_downscale():
    cfg = ModelConfig(layers=4, base_channels=64)
    assert cfg.widths == [64, 128, 256, 512, 1024]
    assert cfg.downscale == 32
    with pytest.raises(GeometryError):
        cfg.check_input(48, 64)


def test_fnv1a_reference_values():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_config_hash_tracks_every_field():
    base = ModelConfig()
    assert config_hash(base) == config_hash(ModelConfig())
    assert "use_spatial=false" in base.canonical_text()
    variants = [ModelConfig(layers=3), ModelConfig(use_spatial=True), ModelConfig(num_classes=3),
                ModelConfig(variant="onenet_e"), ModelConfig(spatial_kernel=7)]
    hashes = {config_hash(c) for c in variants} | {config_hash(base)}
    assert len(hashes) == len(variants) + 1


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("layers", [1, 2, 3])
@pytest.mark.parametrize("spatial", [False, True])
def test_forward_shape_and_param_count(variant, layers, spatial):
    cfg = ModelConfig(variant=variant, layers=layers, base_channels=4, num_classes=3, use_spatial=spatial)
    net = build(cfg)
    d = cfg.downscale
    x = Tensor(np.random.default_rng(0).random((2, 3, d, 2 * d)), dtype=np.float32)
    trace = []
    y = net(x, trace=trace)
    assert y.shape == (2, 3, d // 2, d) == net.output_shape(x.shape)
    assert np.isfinite(y.data).all()
    assert cost.analyze(cfg, x.shape).params == net.num_parameters()
    # encoder stages halve the grid, decoder stages restore it
    assert [t[2] for t in trace][: layers + 1] == [(d // 2 ** (i + 1), d // 2 ** i) for i in range(layers + 1)]


def test_bad_input_geometry():
    net = build(ModelConfig(layers=2, base_channels=4))
    with pytest.raises(GeometryError):
        net(Tensor(np.zeros((1, 3, 12, 16))))
    with pytest.raises(GeometryError):
        net(Tensor(np.zeros((1, 1, 16, 16))))


def test_init_variance_matches_kaiming():
    net = build(ModelConfig(variant="onenet_ed", layers=4, base_channels=64), seed=3)
    checked = 0
    for name, p in net.named_parameters():
        if p.fan_in and p.size >= 4096:
            want = 2.0 / p.fan_in
            assert abs(p.data.var(dtype=np.float64) / want - 1) < 0.10, name
            assert abs(p.data.mean(dtype=np.float64)) < 5 * np.sqrt(want / p.size), name
            checked += 1
        elif not p.fan_in:
            assert np.all(p.data == p.fill), name
    assert checked > 10


def test_seeded_build_is_reproducible():
    cfg = ModelConfig(variant="onenet_e", layers=2, base_channels=4)
    a, b, c = build(cfg, seed=5), build(cfg, seed=5), build(cfg, seed=6)
    sa, sb, sc = a.state(), b.state(), c.state()
    assert all(np.array_equal(sa[k].data, sb[k].data) for k in sa)
    assert any(not np.array_equal(sa[k].data, sc[k].data) for k in sa)


def _positive_support(variant, layers, pixel):
    """Input support of one output pixel with all weights and inputs positive (eval mode)."""
    cfg = ModelConfig(variant=variant, layers=layers, base_channels=2, num_classes=2)
    net = build(cfg, dtype=np.float64)
    rng = np.random.default_rng(0)
    for _, p in net.named_parameters():
        p.data[...] = rng.uniform(0.1, 1.0, p.shape)
    side = 2 * cfg.downscale
    x = Tensor(rng.uniform(0.1, 1.0, (1, 3, side, side)), requires_grad=True, dtype=np.float64)
    y = net(x)
    sel = np.zeros(y.shape)
    sel[0, :, pixel[0], pixel[1]] = 1
    sum_all(mul(y, Tensor(sel))).backward()
    return np.abs(x.grad[0]).sum(axis=0) != 0, cfg.downscale


@pytest.mark.parametrize("layers", [1, 2])
def test_onenet_ed_output_sees_one_bottleneck_block(layers):
    support, block = _positive_support("onenet_ed", layers, (3, 1))
    want = np.zeros_like(support)
    oy, ox = 3 * 2 // block, 1 * 2 // block
    want[oy * block:(oy + 1) * block, ox * block:(ox + 1) * block] = True
    assert np.array_equal(support, want)


def test_onenet_e_decoder_widens_receptive_field():
    support, block = _positive_support("onenet_e", 2, (3, 1))
    assert support.sum() > block * block
