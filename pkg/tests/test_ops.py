"""Layer ops against hand values, naive oracles, and finite differences."""

import numpy as np
import pytest

from defog.kernel import (Tensor, batchnorm, conv2d, dense, dropout,
                          leaky_relu, mse, relu, sigmoid, sumpool, tconv2d)

import oracles
from gradcheck import check_gradients


def _t(a, rg=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


def _zeros_bias(n):
    return _t(np.zeros(n))


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    out = conv2d(_t(x), _t(np.ones((1, 1, 1, 1))), _zeros_bias(1), 1, 0)
    np.testing.assert_array_equal(out.data, x)


def test_conv_sum_kernel_hand_value():
    x = _t([[[[1.0, 2.0], [3.0, 4.0]]]])
    w = _t(np.ones((1, 1, 2, 2)))
    out = conv2d(x, w, _zeros_bias(1), 1, 0)
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 10.0


def test_conv_shape_wide_input():
    x = Tensor(np.zeros((2, 82, 32, 32), dtype=np.float32))
    w = Tensor(np.zeros((64, 82, 3, 3), dtype=np.float32))
    out = conv2d(x, w, Tensor(np.zeros(64, dtype=np.float32)), 1, 1)
    assert out.shape == (2, 64, 32, 32)


@pytest.mark.parametrize("shape,co,k,stride,pad", [
    ((2, 3, 8, 8), 4, 3, 1, 1),
    ((1, 2, 9, 9), 3, 3, 2, 1),
    ((2, 2, 8, 8), 5, 4, 2, 1),
    ((1, 4, 6, 6), 2, 1, 1, 0),
    ((3, 1, 7, 7), 2, 2, 1, 0),
    ((1, 3, 10, 10), 2, 4, 2, 0),
])
def test_conv_matches_naive_oracle(shape, co, k, stride, pad):
    rng = np.random.default_rng(hash((shape, co, k, stride, pad)) % 2**32)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((co, shape[1], k, k))
    b = rng.standard_normal(co)
    got = conv2d(_t(x), _t(w), _t(b), stride, pad).data
    want = oracles.conv2d_naive(x, w, b, stride, pad)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv_and_tconv_accept_missing_bias():
    rng = np.random.default_rng(40)
    x = rng.random((2, 3, 6, 6))
    w = rng.random((4, 3, 3, 3))
    with_zero = conv2d(_t(x), _t(w), _zeros_bias(4), 1, 1)
    without = conv2d(_t(x), _t(w), None, 1, 1)
    np.testing.assert_array_equal(with_zero.data, without.data)
    wt = rng.random((3, 4, 2, 2))
    with_zero = tconv2d(_t(x), _t(wt), _zeros_bias(4), 2, 0)
    without = tconv2d(_t(x), _t(wt), None, 2, 0)
    np.testing.assert_array_equal(with_zero.data, without.data)


def test_conv_without_bias_still_backpropagates():
    rng = np.random.default_rng(41)
    x = Tensor(rng.random((1, 2, 4, 4)), requires_grad=True)
    w = Tensor(rng.random((3, 2, 2, 2)), requires_grad=True)
    conv2d(x, w, None, 2, 0).sum().backward()
    assert x.grad is not None and w.grad is not None


def test_conv_rejects_fractional_geometry():
    x = _t(np.zeros((1, 1, 8, 8)))
    w = _t(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ValueError, match=r"8x8.*stride=2"):
        conv2d(x, w, _zeros_bias(1), 2, 0)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        conv2d(_t(np.zeros((1, 3, 4, 4))), _t(np.zeros((2, 4, 3, 3))),
               _zeros_bias(2), 1, 1)


def test_conv_gradcheck():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    check_gradients(lambda xx, ww, bb: (conv2d(xx, ww, bb, 1, 1)
                                        * conv2d(xx, ww, bb, 1, 1)).mean(),
                    [x, w, b])
    x2 = rng.standard_normal((1, 2, 6, 6))
    w2 = rng.standard_normal((2, 2, 4, 4))
    b2 = rng.standard_normal(2)
    check_gradients(lambda xx, ww, bb: conv2d(xx, ww, bb, 2, 1).sum(),
                    [x2, w2, b2])


# ---------------------------------------------------------------------------
# tconv2d
# ---------------------------------------------------------------------------

def test_tconv_identity_kernel():
    x = np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2)
    out = tconv2d(_t(x), _t(np.ones((1, 1, 1, 1))), _zeros_bias(1), 1, 0)
    np.testing.assert_array_equal(out.data, x)


def test_tconv_broadcast_hand_value():
    x = _t([[[[2.0]]]])
    w = _t(np.ones((1, 1, 2, 2)))
    out = tconv2d(x, w, _zeros_bias(1), 2, 0)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.0))


def test_tconv_geometry_formula_and_output_pad():
    x = Tensor(np.zeros((1, 6, 8, 8), dtype=np.float32))
    w = Tensor(np.zeros((6, 3, 3, 3), dtype=np.float32))
    b = Tensor(np.zeros(3, dtype=np.float32))
    assert tconv2d(x, w, b, 2, 1).shape == (1, 3, 15, 15)
    assert tconv2d(x, w, b, 2, 1, output_pad=1).shape == (1, 3, 16, 16)
    with pytest.raises(ValueError, match="output_pad"):
        tconv2d(x, w, b, 2, 1, output_pad=2)


@pytest.mark.parametrize("shape,co,k,stride,pad,opad", [
    ((1, 2, 4, 4), 3, 3, 2, 1, 1),
    ((2, 3, 5, 5), 2, 4, 2, 1, 0),
    ((1, 1, 3, 3), 2, 3, 1, 0, 0),
    ((2, 2, 4, 4), 1, 2, 2, 0, 1),
    ((1, 3, 6, 6), 2, 3, 1, 1, 0),
])
def test_tconv_matches_naive_oracle(shape, co, k, stride, pad, opad):
    rng = np.random.default_rng(hash((shape, co, k, stride, pad, opad)) % 2**32)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((shape[1], co, k, k))
    b = rng.standard_normal(co)
    got = tconv2d(_t(x), _t(w), _t(b), stride, pad, opad).data
    want = oracles.tconv2d_naive(x, w, b, stride, pad, opad)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("ci,co,h,k,stride,pad", [
    (2, 3, 8, 4, 2, 1),
    (1, 2, 9, 3, 2, 1),
    (3, 2, 6, 3, 1, 1),
    (2, 1, 5, 2, 1, 0),
])
def test_conv_tconv_adjointness(ci, co, h, k, stride, pad):
    # <conv(x, w), u> must equal <x, tconv(u, w)> for zero-bias geometry.
    rng = np.random.default_rng(hash((ci, co, h, k, stride, pad)) % 2**32)
    x = rng.standard_normal((2, ci, h, h))
    w = rng.standard_normal((co, ci, k, k))
    zb_out = np.zeros(co)
    y = conv2d(_t(x), _t(w), _t(zb_out), stride, pad).data
    u = rng.standard_normal(y.shape)
    # conv's (Co,Ci,k,k) weight read as tconv's (in,out,k,k) is the adjoint
    opad = h - ((y.shape[2] - 1) * stride - 2 * pad + k)
    back = tconv2d(_t(u), _t(w), _t(np.zeros(ci)), stride, pad,
                   output_pad=opad).data
    lhs = float((y * u).sum())
    rhs = float((x * back).sum())
    assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs), 1.0)


def test_tconv_gradcheck():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 2, 4, 4))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(3)
    check_gradients(lambda xx, ww, bb: (tconv2d(xx, ww, bb, 2, 1, 1)
                                        * tconv2d(xx, ww, bb, 2, 1, 1)).mean(),
                    [x, w, b])


# ---------------------------------------------------------------------------
# sumpool
# ---------------------------------------------------------------------------

def test_sumpool_unit_stride_is_identity():
    m = _t(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(sumpool(m, 1).data, m.data)


def test_sumpool_hand_value():
    out = sumpool(_t([[1.0, 2.0], [3.0, 4.0]]), 2)
    assert out.shape == (1, 1)
    assert out.item() == 10.0


def test_sumpool_full_grid_collapse():
    out = sumpool(_t(np.ones((32, 32))), 32)
    assert out.item() == 1024.0


def test_sumpool_matches_naive_and_conserves():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = rng.standard_normal((2, 3, 8, 8))
        for s in (1, 2, 4, 8):
            got = sumpool(_t(m), s).data
            np.testing.assert_allclose(got, oracles.sumpool_naive(m, s),
                                       rtol=1e-12, atol=1e-12)
            assert got.sum() == pytest.approx(m.sum(), rel=1e-12)


def test_sumpool_composition():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((1, 2, 16, 16))
    a = sumpool(sumpool(_t(m), 2), 2).data
    b = sumpool(_t(m), 4).data
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_sumpool_rejects_non_divisible():
    with pytest.raises(ValueError, match="not divisible"):
        sumpool(_t(np.zeros((1, 1, 6, 6))), 4)


def test_sumpool_gradcheck_and_block_broadcast():
    rng = np.random.default_rng(8)
    m = rng.standard_normal((1, 2, 4, 4))
    check_gradients(lambda mm: (sumpool(mm, 2) * sumpool(mm, 2)).mean(), [m])
    t = Tensor(np.asarray(m), requires_grad=True)
    sumpool(t, 4).sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones_like(m))


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------

def _bn_state(c, dtype=np.float64):
    return (Tensor(np.zeros(c, dtype=dtype)), Tensor(np.ones(c, dtype=dtype)),
            Tensor(np.zeros(1, dtype=dtype)))


def test_batchnorm_passthrough_on_standardized_input():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8, 2, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    rm, rv, rc = _bn_state(2)
    out = batchnorm(_t(x), _t(np.ones(2)), _t(np.zeros(2)), rm, rv, rc, "train")
    np.testing.assert_allclose(out.data, x, atol=1e-4)


def test_batchnorm_constant_channel_gives_beta():
    x = np.full((4, 1, 3, 3), 7.0)
    rm, rv, rc = _bn_state(1)
    out = batchnorm(_t(x), _t(np.ones(1)), _t(np.full(1, 2.5)), rm, rv, rc, "train")
    np.testing.assert_allclose(out.data, np.full_like(x, 2.5), atol=1e-6)


def test_batchnorm_eval_stateless_and_requires_history():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 2, 3, 3))
    rm, rv, rc = _bn_state(2)
    g, b = _t(np.ones(2)), _t(np.zeros(2))
    with pytest.raises(ValueError, match="eval mode before any train batch"):
        batchnorm(_t(x), g, b, rm, rv, rc, "eval")
    batchnorm(_t(x), g, b, rm, rv, rc, "train")
    assert rc.data[0] == 1.0
    e1 = batchnorm(_t(x), g, b, rm, rv, rc, "eval").data
    e2 = batchnorm(_t(x), g, b, rm, rv, rc, "eval").data
    np.testing.assert_array_equal(e1, e2)


def test_batchnorm_running_stats_momentum():
    x = np.full((2, 1, 2, 2), 4.0)
    rm, rv, rc = _bn_state(1)
    batchnorm(_t(x), _t(np.ones(1)), _t(np.zeros(1)), rm, rv, rc, "train",
              momentum=0.9)
    # keep 0.9 of the inits (mean 0, var 1), fold in 0.1 of the batch stats
    assert rm.data[0] == pytest.approx(0.4)
    assert rv.data[0] == pytest.approx(0.9)


def test_batchnorm_gradcheck_train_and_eval():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((3, 2, 3, 3))
    gamma = rng.uniform(0.5, 1.5, 2)
    beta = rng.standard_normal(2)

    def run_train(xx, gg, bb):
        rm, rv, rc = _bn_state(2)
        return (batchnorm(xx, gg, bb, rm, rv, rc, "train")
                * batchnorm(xx, gg, bb, rm, rv, rc, "train")).mean()

    # coarser step: batch statistics make the tighter step round-off bound
    check_gradients(run_train, [x, gamma, beta], eps=1e-4)

    warm_rm, warm_rv, warm_rc = _bn_state(2)
    batchnorm(_t(x), _t(gamma), _t(beta), warm_rm, warm_rv, warm_rc, "train")

    def run_eval(xx, gg, bb):
        return batchnorm(xx, gg, bb, warm_rm, warm_rv, warm_rc, "eval").mean()

    check_gradients(run_eval, [x, gamma, beta])


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def test_activation_hand_values():
    assert relu(_t([-1.0])).item() == 0.0
    assert relu(_t([2.0])).item() == 2.0
    assert leaky_relu(_t([-10.0]), 0.2).item() == pytest.approx(-2.0)
    assert sigmoid(_t([0.0])).item() == 0.5


def test_sigmoid_saturation_is_finite():
    out = sigmoid(_t([-1000.0, 1000.0])).data
    assert np.isfinite(out).all()
    assert out[0] == 0.0 or out[0] < 1e-300
    assert out[1] == 1.0


def test_activation_gradchecks():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((4, 5)) + 0.05  # keep clear of the relu kink
    check_gradients(lambda xx: (relu(xx) * relu(xx)).mean(), [x])
    check_gradients(lambda xx: (leaky_relu(xx, 0.2) * leaky_relu(xx, 0.2)).mean(), [x])
    check_gradients(lambda xx: sigmoid(xx).mean(), [x])


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def test_dropout_eval_and_rate0_identity_exact():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 4)))
    assert dropout(x, 0.5, "eval") is x
    assert dropout(x, 0.0, "train", np.random.default_rng(0)) is x


def test_dropout_reproducible_and_unbiased():
    x = _t(np.ones(100_000))
    a = dropout(x, 0.5, "train", np.random.default_rng(42)).data
    b = dropout(x, 0.5, "train", np.random.default_rng(42)).data
    np.testing.assert_array_equal(a, b)
    frac = (a == 0).mean()
    # 3 sigma of a fair binomial over 1e5 draws
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 100_000)
    assert a.mean() == pytest.approx(1.0, abs=0.02)  # inverted scaling


def test_dropout_gradcheck_with_fixed_mask():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((3, 3))
    check_gradients(
        lambda xx: (dropout(xx, 0.4, "train", np.random.default_rng(7))
                    * dropout(xx, 0.4, "train", np.random.default_rng(7))).mean(),
        [x])


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError, match="rate"):
        dropout(_t([1.0]), 1.0, "train", np.random.default_rng(0))


# ---------------------------------------------------------------------------
# dense / mse
# ---------------------------------------------------------------------------

def test_dense_hand_values():
    x = _t(np.eye(3))
    out = dense(x, _t(np.eye(3)), _t(np.zeros(3)))
    np.testing.assert_array_equal(out.data, np.eye(3))
    out2 = dense(_t([[1.0, 2.0]]), _t([[1.0], [1.0]]), _t([0.5]))
    assert out2.item() == pytest.approx(3.5)
    wide = dense(Tensor(np.zeros((4, 1024), dtype=np.float32)),
                 Tensor(np.zeros((1024, 1), dtype=np.float32)),
                 Tensor(np.zeros(1, dtype=np.float32)))
    assert wide.shape == (4, 1)


def test_dense_rejects_inner_mismatch():
    with pytest.raises(ValueError, match="inner extents"):
        dense(_t(np.zeros((2, 3))), _t(np.zeros((4, 1))), _t(np.zeros(1)))


def test_dense_gradcheck():
    rng = np.random.default_rng(14)
    check_gradients(lambda xx, ww, bb: (dense(xx, ww, bb) * dense(xx, ww, bb)).mean(),
                    [rng.standard_normal((3, 4)), rng.standard_normal((4, 2)),
                     rng.standard_normal(2)])


def test_mse_hand_values_and_symmetry():
    assert mse(_t([1.0, 2.0]), _t([1.0, 2.0])).item() == 0.0
    assert mse(_t([0.0, 0.0]), _t([1.0, 3.0])).item() == pytest.approx(5.0)
    rng = np.random.default_rng(15)
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    assert mse(_t(a), _t(b)).item() == pytest.approx(mse(_t(b), _t(a)).item())


def test_mse_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        mse(_t(np.zeros(3)), _t(np.zeros(4)))


def test_mse_gradcheck():
    rng = np.random.default_rng(16)
    check_gradients(lambda aa, bb: mse(aa, bb),
                    [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))])
