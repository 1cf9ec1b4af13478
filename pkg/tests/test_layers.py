"""Layer forward/backward checks against naive oracles and hand values."""

import numpy as np
import pytest

from dagtrack import layers
from dagtrack.activations import activation_code
from dagtrack.errors import ShapeError
from dagtrack.numeric import finite_diff_gradient, relative_error


def conv_oracle(x, kernels, bias, stride, padding):
    # Seven explicit loops, scalar accumulation in (u, v, ci) order.
    h, w, cin = x.shape
    kh, kw, _, cout = kernels.shape
    xp = np.zeros((h + 2 * padding, w + 2 * padding, cin), x.dtype)
    xp[padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.empty((ho, wo, cout), x.dtype)
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                acc = bias[co]
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(cin):
                            acc += xp[i * stride + u, j * stride + v, ci] * kernels[u, v, ci, co]
                out[i, j, co] = acc
    return out


def test_conv2d_equals_naive_loop_exactly():
    rng = np.random.default_rng(0)
    for stride, padding in [(1, 0), (2, 0), (1, 1), (2, 1)]:
        x = rng.standard_normal((7, 8, 3)).astype(np.float32)
        p = layers.Conv2dParams(
            rng.standard_normal((3, 3, 3, 4)).astype(np.float32),
            rng.standard_normal(4).astype(np.float32),
            stride,
            padding,
        )
        out, _ = layers.conv2d_forward(x, p)
        ref = conv_oracle(x, p.kernels, p.bias, stride, padding)
        assert out.shape == ref.shape
        assert np.array_equal(out, ref), f"stride={stride} padding={padding}"


def test_conv2d_geometry_matches_stage_arithmetic():
    # 107 -> conv 7 stride 2 -> 51 -> pool 3 stride 2 -> 25
    assert layers.conv2d_output_extent(107, 7, 2, 0) == 51
    assert (51 - 3) // 2 + 1 == 25
    rng = np.random.default_rng(1)
    x = rng.standard_normal((107, 107, 3)).astype(np.float32)
    p = layers.Conv2dParams(
        rng.standard_normal((7, 7, 3, 2)).astype(np.float32) * 0.01,
        np.zeros(2, np.float32), 2, 0,
    )
    out, _ = layers.conv2d_forward(x, p)
    assert out.shape == (51, 51, 2)
    pooled, _ = layers.maxpool_forward(out, 3, 2)
    assert pooled.shape == (25, 25, 2)


def test_conv2d_empty_output_rejected():
    x = np.zeros((3, 3, 1), np.float32)
    p = layers.Conv2dParams(np.zeros((5, 5, 1, 1), np.float32), np.zeros(1, np.float32), 1, 0)
    with pytest.raises(ShapeError):
        layers.conv2d_forward(x, p)


def test_conv2d_channel_mismatch_rejected():
    x = np.zeros((5, 5, 2), np.float32)
    p = layers.Conv2dParams(np.zeros((3, 3, 3, 1), np.float32), np.zeros(1, np.float32), 1, 0)
    with pytest.raises(ShapeError):
        layers.conv2d_forward(x, p)


def test_conv2d_gradients_finite_difference():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 5, 2))
    p = layers.Conv2dParams(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3), 1, 1)
    out, cache = layers.conv2d_forward(x, p)
    r = rng.standard_normal(out.shape)
    gx, gk, gb = layers.conv2d_backward(r, cache)

    def loss_x(v):
        return float((layers.conv2d_forward(v, p)[0] * r).sum())

    def loss_k(v):
        q = layers.Conv2dParams(v, p.bias, p.stride, p.padding)
        return float((layers.conv2d_forward(x, q)[0] * r).sum())

    def loss_b(v):
        q = layers.Conv2dParams(p.kernels, v, p.stride, p.padding)
        return float((layers.conv2d_forward(x, q)[0] * r).sum())

    assert relative_error(gx, finite_diff_gradient(loss_x, x)) < 1e-5
    assert relative_error(gk, finite_diff_gradient(loss_k, p.kernels)) < 1e-5
    assert relative_error(gb, finite_diff_gradient(loss_b, p.bias)) < 1e-5


def test_maxpool_forward_and_tie_rule():
    # Equal values in a window: the first index in row-major scan wins.
    x = np.zeros((2, 2, 1), np.float32)
    out, rec = layers.maxpool_forward(x, 2, 2)
    assert out[0, 0, 0] == 0.0
    assert rec.argmax[0, 0, 0] == 0  # flat index of (0, 0)
    x2 = np.array([[[1.0], [2.0]], [[3.0], [4.0]]], np.float32)
    out2, rec2 = layers.maxpool_forward(x2, 2, 2)
    assert out2[0, 0, 0] == 4.0
    assert rec2.argmax[0, 0, 0] == 3  # flat index of (1, 1)


def test_maxpool_gradient_routes_to_argmax_only():
    rng = np.random.default_rng(3)
    x = rng.permutation(36).astype(np.float64).reshape(6, 6, 1)
    out, rec = layers.maxpool_forward(x, 2, 2)
    r = rng.standard_normal(out.shape)
    gx = layers.maxpool_backward(r, rec)
    # Mass conservation: every upstream unit lands on exactly one input.
    assert np.isclose(gx.sum(), r.sum())
    num = finite_diff_gradient(
        lambda v: float((layers.maxpool_forward(v, 2, 2)[0] * r).sum()), x, step=1e-3)
    assert relative_error(gx, num) < 1e-5


def test_maxpool_window_too_large():
    with pytest.raises(ShapeError):
        layers.maxpool_forward(np.zeros((2, 2, 1), np.float32), 3, 1)


def test_fc_forward_flattens_row_major():
    x = np.arange(12, dtype=np.float64).reshape(3, 2, 2)
    p = layers.FcParams(np.eye(12), np.zeros(12))
    y, _ = layers.fc_forward(x, p)
    assert np.array_equal(y, x.reshape(-1))


def test_fc_gradients_finite_difference():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 2))
    p = layers.FcParams(rng.standard_normal((4, 12)), rng.standard_normal(4))
    out, cache = layers.fc_forward(x, p)
    r = rng.standard_normal(4)
    gx, gw, gb = layers.fc_backward(r, cache)
    assert gx.shape == x.shape
    num_x = finite_diff_gradient(
        lambda v: float((layers.fc_forward(v, p)[0] * r).sum()), x)
    num_w = finite_diff_gradient(
        lambda v: float((layers.fc_forward(x, layers.FcParams(v, p.bias))[0] * r).sum()),
        p.weights)
    num_b = finite_diff_gradient(
        lambda v: float((layers.fc_forward(x, layers.FcParams(p.weights, v))[0] * r).sum()),
        p.bias)
    assert relative_error(gx, num_x) < 1e-5
    assert relative_error(gw, num_w) < 1e-5
    assert relative_error(gb, num_b) < 1e-5


def test_fc_dimension_mismatch():
    p = layers.FcParams(np.zeros((4, 12)), np.zeros(4))
    with pytest.raises(ShapeError):
        layers.fc_forward(np.zeros(11), p)


def test_activation_gradients():
    rng = np.random.default_rng(5)
    for name in ("tanh", "sigmoid"):
        x = rng.standard_normal((3, 4))
        code = activation_code(name)
        out, cache = layers.activation_forward(x, code)
        r = rng.standard_normal(out.shape)
        gx = layers.activation_backward(r, cache)
        num = finite_diff_gradient(
            lambda v: float((layers.activation_forward(v, code)[0] * r).sum()), x)
        assert relative_error(gx, num) < 1e-5, name


def test_relu_subgradient_at_zero_is_zero():
    x = np.array([-1.0, 0.0, 2.0])
    code = activation_code("relu")
    out, cache = layers.activation_forward(x, code)
    g = layers.activation_backward(np.ones(3), cache)
    assert np.array_equal(out, [0.0, 0.0, 2.0])
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_softmax_cross_entropy_hand_values():
    # Equal logits: loss is exactly ln 2.
    loss, probs = layers.softmax_cross_entropy(np.array([0.3, 0.3]), 1)
    assert loss == np.log(2.0)
    assert np.allclose(probs, [0.5, 0.5])
    # Heavily saturated correct logit: loss indistinguishable from zero.
    loss2, _ = layers.softmax_cross_entropy(np.array([-50.0, 50.0]), 1)
    assert 0.0 <= loss2 < 1e-20


def test_softmax_stable_at_huge_logits():
    loss, probs = layers.softmax_cross_entropy(np.array([1e4, 1e4 - 10.0]), 0)
    assert np.isfinite(loss) and np.all(np.isfinite(probs))
    assert loss < 1e-3


def test_softmax_gradient_finite_difference():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal(2) * 2
    loss, probs = layers.softmax_cross_entropy(logits, 0)
    g = layers.softmax_cross_entropy_grad(probs, 0)
    num = finite_diff_gradient(lambda v: layers.softmax_cross_entropy(v, 0)[0], logits)
    assert relative_error(g, num) < 1e-6


def test_softmax_label_out_of_range():
    with pytest.raises(ValueError):
        layers.softmax_cross_entropy(np.zeros(2), 2)


def test_concat_split_is_bit_exact():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 5, 3)).astype(np.float32)
    b = rng.standard_normal((4, 5, 2)).astype(np.float32)
    out, boundary = layers.concat_channels_forward(a, b)
    assert out.shape == (4, 5, 5)
    assert np.array_equal(out[:, :, :3], a)
    assert np.array_equal(out[:, :, 3:], b)
    g = rng.standard_normal(out.shape).astype(np.float32)
    ga, gb = layers.concat_channels_backward(g, boundary)
    assert np.array_equal(ga, g[:, :, :3])
    assert np.array_equal(gb, g[:, :, 3:])


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        layers.concat_channels_forward(np.zeros((3, 3, 1)), np.zeros((4, 3, 1)))
