import numpy as np
import pytest

from onenet import checks, nn
from onenet.errors import ConfigError, ContractError, DimensionError
from onenet.ops import conv2d
from onenet.shuffle import flat_to_nchw, nchw_to_flat
from onenet.tensor import Tensor


def test_channelwise_conv_equals_pointwise_conv2d(rng):
    layer = nn.ChannelWiseConv(5, 3, bias=True, dtype=np.float64)
    layer.weight.data[...] = rng.standard_normal((3, 5))
    layer.bias.data[...] = rng.standard_normal(3)
    x = rng.standard_normal((2, 5, 4, 3))
    got = flat_to_nchw(layer(nchw_to_flat(Tensor(x))), (4, 3)).data
    want = conv2d(Tensor(x), Tensor(layer.weight.data.reshape(3, 5, 1, 1)), Tensor(layer.bias.data)).data
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_channelwise_vs_pointwise_randomised():
    rng = np.random.default_rng(7)
    errs = [checks.channelwise_vs_pointwise(rng)[0] for _ in range(50)]
    assert max(errs) < 1e-6


def test_channelwise_conv_rejects_wrong_layout():
    with pytest.raises(ContractError):
        nn.ChannelWiseConv(4, 2)(Tensor(np.zeros((1, 4, 3)), dtype=np.float32))


def test_spatial_conv_is_same_length_and_counts_k_plus_one():
    sp = nn.SpatialConv(9)
    assert sp.num_parameters() == 10
    assert sp(Tensor(np.ones((2, 7, 3)), dtype=np.float32)).shape == (2, 7, 3)
    with pytest.raises(ConfigError):
        nn.SpatialConv(4)


def test_encoder_block_geometry():
    blk = nn.EncoderBlock(3, 8, 2, layout="chw")
    y, hw = blk(Tensor(np.zeros((2, 3, 64)), dtype=np.float32), (8, 8))
    assert y.shape == (2, 16, 8) and hw == (4, 4)
    blk2 = nn.EncoderBlock(8, 16, 2)
    y2, hw2 = blk2(y, hw)
    assert y2.shape == (2, 4, 16) and hw2 == (2, 2)
    with pytest.raises(ContractError):
        blk2(Tensor(np.zeros((2, 4, 3)), dtype=np.float32), (2, 2))


def test_decoder_block_geometry_and_skip_contract():
    dec = nn.DecoderBlock(16, 4, 6, c_mid=8)
    y, hw = dec(Tensor(np.zeros((1, 4, 16)), dtype=np.float32), Tensor(np.zeros((1, 16, 4)), dtype=np.float32), (2, 2))
    assert y.shape == (1, 16, 6) and hw == (4, 4)
    with pytest.raises(DimensionError):
        dec(Tensor(np.zeros((1, 4, 16)), dtype=np.float32), None, (2, 2))
    with pytest.raises(ConfigError):
        nn.DecoderBlock(6, 0, 2)


def test_conv_transpose_equals_scatter_definition(rng):
    ct = nn.ConvTranspose2d(3, 2, 2, dtype=np.float64)
    ct.weight.data[...] = rng.standard_normal(ct.weight.shape)
    ct.bias.data[...] = rng.standard_normal(2)
    x = rng.standard_normal((1, 3, 2, 3))
    want = np.zeros((1, 2, 4, 6)) + ct.bias.data[None, :, None, None]
    for ci in range(3):
        for y in range(2):
            for xx in range(3):
                want[0, :, 2 * y:2 * y + 2, 2 * xx:2 * xx + 2] += x[0, ci, y, xx] * ct.weight.data[ci]
    np.testing.assert_allclose(ct(Tensor(x)).data, want, rtol=1e-12)


@pytest.mark.parametrize("case", checks.block_cases(), ids=lambda c: c[0])
def test_block_gradients(case):
    name, factory, shape, fwd = case
    from onenet.gradcheck import check_gradients
    from onenet.tensor import mul, sum_all
    rng = np.random.default_rng(11)
    m = factory()
    checks._randomise(m, rng)
    x = Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)
    probe = Tensor(rng.standard_normal(fwd(m, x).shape), dtype=np.float64)
    names, params = zip(*m.named_parameters())
    res = check_gradients(lambda: sum_all(mul(fwd(m, x), probe)), [x, *params], rng=rng,
                          names=["x", *names])
    assert res.ok(1e-5), res.worst()


@pytest.mark.parametrize("n", [1, 2, 3])
def test_receptive_field_is_exact_block(n):
    side = 2 ** n
    for pixel in (0, 3):
        ok, got, want = checks.receptive_field_ok(n, pixel=pixel)
        assert ok, (got.astype(int), want.astype(int))
        assert got.sum() == side * side


def test_spatial_conv_widens_receptive_field():
    ok, got, want = checks.receptive_field_ok(2, use_spatial=True)
    assert not ok and (got & want).sum() == want.sum() and got.sum() > want.sum()


def test_module_registration_order_and_state():
    blk = nn.EncoderBlock(2, 4, 2, use_spatial=True)
    names = [n for n, _ in blk.named_parameters()]
    assert names[0].startswith("spatial") and names[-1] == "conv2.bn.bias"
    state = blk.state()
    assert "conv1.bn.running_mean" in state and "conv1.bn.running_var" in state
    assert blk.num_parameters() == sum(p.size for p in blk.parameters())
