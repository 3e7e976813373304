import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caswit import tensor as T
from caswit.tensor import DimensionError, ParameterError, Tensor, UsageError, no_grad, precision
from conftest import GRAD_RTOL, check_gradients
from gradcases import CASES, INSTANCES


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for i in range(INSTANCES):
        fn, arrays = CASES[name](rng)
        assert check_gradients(fn, *arrays, seed=i) <= GRAD_RTOL


# -- matmul ----------------------------------------------------------------


def test_matmul_identity():
    out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_row_times_column():
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_grad_of_sum_is_ones_times_bt(rng):
    with precision(np.float64):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)))
        T.matmul(a, b).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-12)


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


# -- softmax / layer norm ------------------------------------------------------


def test_softmax_uniform_row():
    np.testing.assert_allclose(T.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)


def test_softmax_large_logits_do_not_overflow():
    out = T.softmax_lastdim(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_softmax_empty_last_dim_rejected():
    with pytest.raises(DimensionError):
        T.softmax_lastdim(Tensor(np.zeros((2, 0))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.floats(-50, 50))
def test_softmax_rows_are_probabilities(rows, cols, offset):
    x = np.random.default_rng(rows * 31 + cols).standard_normal((rows, cols)) * 10 + offset
    p = T.softmax_lastdim(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)


def _ln(x, eps=1e-5):
    x = Tensor(x, dtype=np.float64)
    c = x.shape[-1]
    return T.layer_norm(x, Tensor(np.ones(c), dtype=np.float64), Tensor(np.zeros(c), dtype=np.float64), eps).data


def test_layer_norm_constant_row_is_zero():
    np.testing.assert_array_equal(_ln([5.0, 5.0, 5.0, 5.0]), [0, 0, 0, 0])


def test_layer_norm_two_values():
    expected = 1 / math.sqrt(1 + 1e-5)
    np.testing.assert_allclose(_ln([1.0, -1.0]), [expected, -expected], rtol=1e-12)


def test_layer_norm_moments(rng):
    y = _ln(rng.standard_normal((4, 8)) * 3 + 2)
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-5)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-5)


@pytest.mark.parametrize("eps", [0.0, -1e-5])
def test_layer_norm_rejects_nonpositive_eps(eps):
    with pytest.raises(ParameterError):
        _ln([1.0, 2.0], eps)


# -- backward ----------------------------------------------------------------


def test_backward_identity():
    x = Tensor(3.0, requires_grad=True)
    x.backward()
    assert x.grad == 1.0


def test_backward_fan_out_accumulates():
    x = Tensor(3.0, requires_grad=True)
    (x + x).backward()
    assert x.grad == 2.0


def test_backward_diamond_visits_each_node_once():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    z = y + y * 3.0
    z.backward()
    assert x.grad == pytest.approx(16.0)


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        (x * 2.0).backward()


def test_backward_deep_chain_no_recursion_limit():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y.node is None and not y.requires_grad


# -- finite differences ---------------------------------------------------------


def test_finite_diff_sum_of_squares():
    with precision(np.float64):
        x = Tensor([1.0, 2.0])
        g = T.finite_diff_grad(lambda t: (t * t).sum(), x, h=1e-4)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)


def test_finite_diff_constant_is_zero():
    with precision(np.float64):
        g = T.finite_diff_grad(lambda t: 7.0, Tensor(np.ones(4)))
    np.testing.assert_array_equal(g, np.zeros(4))


def test_finite_diff_matches_cross_entropy_backward(rng):
    from caswit.losses import ce_loss

    labels = rng.integers(0, 4, size=(3, 3))
    with precision(np.float64):
        x = Tensor(rng.standard_normal((3, 3, 4)), requires_grad=True)
        ce_loss(x, labels).backward()
        numeric = T.finite_diff_grad(lambda t: ce_loss(t, labels), x)
    assert np.linalg.norm(x.grad - numeric) / np.linalg.norm(numeric) <= GRAD_RTOL


def test_finite_diff_rejects_nonpositive_step():
    with pytest.raises(ParameterError):
        T.finite_diff_grad(lambda t: 0.0, Tensor([1.0]), h=0)


# -- layout ops and round trips --------------------------------------------------


def test_reshape_transpose_concat_round_trips(rng):
    x = rng.standard_normal((2, 3, 4)).astype(np.float32)
    t = Tensor(x)
    np.testing.assert_array_equal(t.reshape(4, 6).reshape(2, 3, 4).data, x)
    np.testing.assert_array_equal(T.transpose(T.transpose(t, 0, 2), 0, 2).data, x)
    parts = T.concat([t[:, :1], t[:, 1:]], axis=1)
    np.testing.assert_array_equal(parts.data, x)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_pixel_shuffle_inverse_is_identity(h, w, s, c):
    x = np.random.default_rng(h + 7 * w).standard_normal((1, h, w, s * s * c)).astype(np.float32)
    y = T.pixel_unshuffle(T.pixel_shuffle(Tensor(x), s), s)
    np.testing.assert_array_equal(y.data, x)


def test_pixel_shuffle_placement():
    s, c = 3, 2
    x = np.zeros((2, 2, s * s * c))
    for p in range(2):
        for q in range(2):
            for i in range(s):
                for j in range(s):
                    x[p, q, (i * s + j) * c:(i * s + j + 1) * c] = [100 * p + 10 * q + i * s + j, -1]
    y = T.pixel_shuffle(Tensor(x, dtype=np.float64), s).data
    for p in range(2):
        for q in range(2):
            for i in range(s):
                for j in range(s):
                    assert y[p * s + i, q * s + j, 0] == 100 * p + 10 * q + i * s + j


def test_avg_pool_of_constant_is_constant():
    out = T.avg_pool2d(Tensor(np.full((1, 4, 6, 2), 0.7)), 2).data
    np.testing.assert_allclose(out, 0.7, rtol=1e-6)


def test_avg_pool_rejects_odd_dims():
    with pytest.raises(DimensionError):
        T.avg_pool2d(Tensor(np.zeros((3, 4, 1))), 2)


def test_bilinear_constant_preserved_and_rows_normalised():
    m = T.bilinear_matrix(3, 12)
    np.testing.assert_allclose(m.sum(1), 1.0)
    out = T.resize_bilinear(Tensor(np.full((1, 3, 3, 1), 2.5)), (12, 12)).data
    np.testing.assert_allclose(out, 2.5, rtol=1e-6)


def test_conv3x3_matches_direct_loop(rng):
    x = rng.standard_normal((4, 5, 2))
    w = rng.standard_normal((9 * 2, 3))
    out = T.conv3x3(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64)).data
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    k = w.reshape(3, 3, 2, 3)
    ref = np.zeros((4, 5, 3))
    for i in range(4):
        for j in range(5):
            ref[i, j] = np.einsum("abc,abco->o", xp[i:i + 3, j:j + 3], k)
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_forward_ops_stay_finite_on_finite_inputs(rng):
    x = Tensor(rng.standard_normal((2, 4, 4, 3)) * 50)
    for out in (T.gelu(x), T.tanh(x), T.softmax_lastdim(x), T.log_softmax_lastdim(x),
                T.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))):
        assert np.all(np.isfinite(out.data))


def test_default_precision_is_float32_and_switchable():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
