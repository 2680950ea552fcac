"""Differentiable building blocks against the loop oracles and FD."""

import numpy as np
import pytest

from ratemoe import ShapeError, grad_check
from ratemoe import functional as F
from ratemoe.tensor import Parameter, Tensor

import oracles


def _p(name, data):
    return Parameter(np.asarray(data, dtype=np.float64), name)


def test_softmax_frozen_oracle():
    out = F.softmax(Tensor([1.0, 2.0, 3.0]))
    expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219]
    np.testing.assert_allclose(out.data, expected, atol=1e-12)
    assert out.data.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_matches_oracle_and_handles_large_inputs():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 7)) * 200.0  # would overflow an unshifted exp
    out = F.softmax(Tensor(x))
    np.testing.assert_allclose(out.data, oracles.softmax_ref(x), atol=1e-12)
    assert np.all(np.isfinite(out.data))


def test_softmax_axis_argument():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 5))
    out = F.softmax(Tensor(x), axis=0)
    np.testing.assert_allclose(out.data.sum(axis=0), np.ones(5), atol=1e-12)


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 6))
    np.testing.assert_allclose(
        F.log_softmax(Tensor(x)).data, oracles.log_softmax_ref(x), atol=1e-12
    )


def test_gelu_matches_erf_oracle():
    x = np.linspace(-4.0, 4.0, 33)
    np.testing.assert_allclose(F.gelu(Tensor(x)).data, oracles.gelu_ref(x), atol=1e-14)


def test_layer_norm_matches_two_pass_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 8)) * 3.0 + 1.0
    gain, bias = rng.normal(size=8), rng.normal(size=8)
    out = F.layer_norm(Tensor(x), Tensor(gain), Tensor(bias))
    np.testing.assert_allclose(out.data, oracles.layer_norm_ref(x, gain, bias), atol=1e-12)


def test_layer_norm_shape_guard():
    with pytest.raises(ShapeError):
        F.layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_l2_norm_zero_vector_is_safe():
    a = _p("a", np.zeros((2, 3)))
    out = F.l2_norm(a)
    assert np.array_equal(out.data, [0.0, 0.0])
    out.sum().backward()
    assert np.all(np.isfinite(a.grad))
    assert np.array_equal(a.grad, np.zeros((2, 3)))


def test_cosine_similarity_range_and_grad():
    rng = np.random.default_rng(4)
    a = _p("a", rng.normal(size=(5, 6)))
    b = _p("b", rng.normal(size=(5, 6)))
    cos = F.cosine_similarity(a, b)
    assert np.all(np.abs(cos.data) <= 1.0 + 1e-12)
    assert grad_check(lambda: F.cosine_similarity(a, b).sum(), [a, b]) < 1e-6


@pytest.mark.parametrize(
    "func",
    [F.exp, F.log, F.sqrt, F.sigmoid, F.gelu, F.softmax, F.log_softmax],
    ids=["exp", "log", "sqrt", "sigmoid", "gelu", "softmax", "log_softmax"],
)
def test_elementwise_grads(func):
    rng = np.random.default_rng(5)
    a = _p("a", np.abs(rng.normal(size=(3, 4))) + 0.5)  # positive for log/sqrt
    weights = Tensor(rng.normal(size=(3, 4)))  # break softmax's sum-to-1 degeneracy
    assert grad_check(lambda: (func(a) * weights).sum(), [a]) < 1e-6


def test_clamp_min_blocks_grad_below_floor():
    a = _p("a", [-1.0, 0.5, 2.0])
    out = F.clamp_min(a, 0.0)
    assert np.array_equal(out.data, [0.0, 0.5, 2.0])
    out.sum().backward()
    assert np.array_equal(a.grad, [0.0, 1.0, 1.0])


def test_layer_norm_grads():
    rng = np.random.default_rng(6)
    a = _p("a", rng.normal(size=(4, 6)))
    g = _p("g", rng.normal(size=6))
    b = _p("b", rng.normal(size=6))
    assert grad_check(lambda: (F.layer_norm(a, g, b) ** 2).sum(), [a, g, b]) < 1e-6


def test_linear_with_and_without_bias():
    rng = np.random.default_rng(7)
    x = _p("x", rng.normal(size=(3, 4)))
    w = _p("w", rng.normal(size=(4, 5)))
    b = _p("b", rng.normal(size=5))
    np.testing.assert_allclose(F.linear(x, w, b).data, x.data @ w.data + b.data, atol=1e-14)
    np.testing.assert_allclose(F.linear(x, w).data, x.data @ w.data, atol=1e-14)
    with pytest.raises(ShapeError):
        F.linear(x, Tensor(np.zeros((3, 5))))
    assert grad_check(lambda: (F.linear(x, w, b) ** 2).sum(), [x, w, b]) < 1e-6


def test_time_interp_frozen_example():
    # [0, 2] resampled to 4 steps: 0, 2/3, 4/3, 2
    x = Tensor(np.array([[0.0], [2.0]]))
    out = F.time_interp(x, 4)
    np.testing.assert_allclose(out.data[:, 0], [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0], atol=1e-12)


def test_time_interp_endpoints_exact():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(5, 3))
    for t_out in (2, 7, 11):
        out = F.time_interp(Tensor(x), t_out).data
        assert np.array_equal(out[0], x[0])
        assert np.array_equal(out[-1], x[-1])


@pytest.mark.parametrize("t_in,t_out", [(2, 8), (4, 16), (5, 7), (3, 3), (4, 1)])
def test_time_interp_matches_oracle(t_in, t_out):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(t_in, 4))
    out = F.time_interp(Tensor(x), t_out)
    np.testing.assert_allclose(out.data, oracles.interp_ref(x, t_out), atol=1e-12)


def test_time_interp_batched_and_grad():
    rng = np.random.default_rng(10)
    x = _p("x", rng.normal(size=(2, 3, 4)))
    out = F.time_interp(x, 6)
    assert out.shape == (2, 6, 4)
    for b in range(2):
        np.testing.assert_allclose(out.data[b], oracles.interp_ref(x.data[b], 6), atol=1e-12)
    assert grad_check(lambda: (F.time_interp(x, 6) ** 2).sum(), [x]) < 1e-6


@pytest.mark.parametrize("t,stride", [(8, 2), (8, 4), (16, 4), (6, 2), (7, 3), (5, 5)])
def test_time_conv_matches_oracle(t, stride):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(t, 3))
    w = rng.normal(size=(3, 3, 2))
    b = rng.normal(size=2)
    out = F.time_conv(Tensor(x), Tensor(w), Tensor(b), stride)
    expected = oracles.conv_same_ref(x, w, b, stride)
    assert out.shape == expected.shape
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_time_conv_output_length_is_ceil():
    x = Tensor(np.zeros((7, 2)))
    w = Tensor(np.zeros((3, 2, 2)))
    b = Tensor(np.zeros(2))
    assert F.time_conv(x, w, b, stride=2).shape == (4, 2)
    assert F.time_conv(x, w, b, stride=3).shape == (3, 2)


def test_time_conv_channel_guard_and_grad():
    rng = np.random.default_rng(12)
    x = _p("x", rng.normal(size=(2, 8, 3)))
    w = _p("w", rng.normal(size=(3, 3, 3)))
    b = _p("b", rng.normal(size=3))
    with pytest.raises(ShapeError):
        F.time_conv(Tensor(np.zeros((8, 4))), w, b, 2)
    assert grad_check(lambda: (F.time_conv(x, w, b, 2) ** 2).sum(), [x, w, b]) < 1e-6
