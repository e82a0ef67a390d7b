import numpy as np
import pytest
from hypothesis import given, strategies as st

from onenet.errors import ContractError, DimensionError
from onenet.gradcheck import check_gradients
from onenet.tensor import (Tensor, add, add_bias, backward, concat, gather, matmul, mean_all, mul, permute,
                           relu, reshape, scale, sub, sum_all, tensors_checksum)


def t64(rng, *shape, grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=grad, dtype=np.float64)


def test_dtype_rules():
    assert Tensor(np.zeros(3)).dtype == np.float64
    assert Tensor([1, 2, 3]).dtype == np.float32
    with pytest.raises(TypeError):
        Tensor(np.zeros(2), dtype=np.int32)
    with pytest.raises(TypeError):
        add(Tensor(np.zeros(2), dtype=np.float32), Tensor(np.zeros(2), dtype=np.float64))


def test_rejects_degenerate_shapes():
    with pytest.raises(DimensionError):
        Tensor(np.float64(1.0))
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 0)))


def test_no_broadcasting(rng):
    with pytest.raises(DimensionError):
        add(t64(rng, 2, 3), t64(rng, 3))
    with pytest.raises(DimensionError):
        add_bias(t64(rng, 2, 3), t64(rng, 2), axis=1)


def test_backward_requires_scalar(rng):
    with pytest.raises(ContractError):
        backward(mul(t64(rng, 3), t64(rng, 3)))
    with pytest.raises(ContractError):
        sum_all(t64(rng, 3, grad=False)).backward()


def test_known_gradients(rng):
    a, b = t64(rng, 3, 4), t64(rng, 4, 2)
    sum_all(matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_gradients_accumulate(rng):
    a = t64(rng, 5)
    sum_all(scale(a, 2.0)).backward()
    sum_all(scale(a, 3.0)).backward()
    np.testing.assert_allclose(a.grad, np.full(5, 5.0))
    a.zero_grad()
    assert a.grad is None


def test_shared_input_fan_out(rng):
    a = t64(rng, 4)
    sum_all(add(mul(a, a), a)).backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


@pytest.mark.parametrize("name", ["add", "sub", "mul", "relu", "bias", "mean", "reshape", "permute",
                                  "concat", "gather", "gather_inv", "matmul"])
def test_ops_match_finite_differences(rng, name):
    a, b = t64(rng, 3, 4), t64(rng, 3, 4)
    bias = t64(rng, 4)
    perm = rng.permutation(4)
    w = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    c = t64(rng, 4, 2)
    fns = {
        "add": (lambda: add(a, b), [a, b]),
        "sub": (lambda: sub(a, b), [a, b]),
        "mul": (lambda: mul(a, b), [a, b]),
        "relu": (lambda: relu(a), [a]),
        "bias": (lambda: add_bias(a, bias, axis=1), [a, bias]),
        "mean": (lambda: reshape(scale(mean_all(a), 7.0), (1, 1)), [a]),
        "reshape": (lambda: reshape(reshape(a, (2, 6)), (3, 4)), [a]),
        "permute": (lambda: permute(permute(a, (1, 0)), (1, 0)), [a]),
        "concat": (lambda: concat([a, b], axis=1), [a, b]),
        "gather": (lambda: gather(a, np.array([0, 0, 3, 1]), axis=1), [a]),
        "gather_inv": (lambda: gather(a, perm, axis=1, inverse=np.argsort(perm)), [a]),
        "matmul": (lambda: matmul(a, c), [a, c]),
    }
    fn, inputs = fns[name]
    out_shape = fn().shape
    probe = Tensor(rng.standard_normal(out_shape), dtype=np.float64)
    res = check_gradients(lambda: sum_all(mul(fn(), probe)), inputs)
    assert res.ok(1e-6), res.worst()


def test_checksum_is_order_sensitive():
    x, y = Tensor(np.ones(2)), Tensor(np.zeros(2))
    assert tensors_checksum([x, y]) != tensors_checksum([y, x])


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.randoms(use_true_random=False))
def test_reshape_preserves_elements(shape, r):
    data = np.arange(np.prod(shape), dtype=np.float64).reshape(shape)
    x = Tensor(data)
    flat = reshape(x, (x.size,))
    assert np.array_equal(flat.data, data.reshape(-1))
    axes = list(range(len(shape)))
    r.shuffle(axes)
    p = permute(x, axes)
    assert sorted(p.data.reshape(-1)) == sorted(data.reshape(-1))
    assert np.array_equal(permute(p, np.argsort(axes)).data, data)
