import numpy as np
import pytest

from casvsr import ops
from casvsr.ops import CharbonnierConfig
from casvsr.tensor import NonFiniteError, Tensor

from conftest import fd_gradient, relative_gradient_error


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def conv2d_loop_oracle(x, w, b, stride=1, padding=0):
    """Naive O(C^2 H W k^2) float64 reference."""
    co, ci, k, _ = w.shape
    x = np.pad(x.astype(np.float64), ((0, 0), (padding, padding), (padding, padding)))
    _, h, wd = x.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(ci):
                    for ky in range(k):
                        for kx in range(k):
                            acc += w[o, c, ky, kx] * x[c, i * stride + ky, j * stride + kx]
                out[o, i, j] = acc + b[o]
    return out


def test_conv2d_scalar_scaling():
    x = Tensor(np.ones((1, 3, 3), dtype=np.float32))
    w = Tensor(np.full((1, 1, 1, 1), 2.0, dtype=np.float32))
    b = Tensor(np.zeros(1, dtype=np.float32))
    out = ops.conv2d(x, w, b)
    assert np.array_equal(out.data, np.full((1, 3, 3), 2.0, dtype=np.float32))


def test_conv2d_identity_kernel(rng):
    x = Tensor(rng.standard_normal((2, 5, 5)).astype(np.float32))
    w = np.zeros((2, 2, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    out = ops.conv2d(x, Tensor(w), Tensor(np.zeros(2, dtype=np.float32)), padding=1)
    assert np.array_equal(out.data, x.data)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_loop_oracle(rng, stride, padding):
    x = rng.uniform(-0.5, 0.5, (2, 5, 5)).astype(np.float32)
    w = rng.uniform(-0.5, 0.5, (3, 2, 3, 3)).astype(np.float32)
    b = rng.uniform(-0.5, 0.5, 3).astype(np.float32)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    want = conv2d_loop_oracle(x, w, b, stride=stride, padding=padding)
    assert got.data.shape == want.shape
    assert np.abs(got.data - want).max() <= 1e-6


def test_conv2d_gradients_match_fd(rng):
    x = Tensor(rng.standard_normal((2, 4, 4)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 2, 3, 3)).astype(np.float32) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(2).astype(np.float32), requires_grad=True)

    def fn():
        out = ops.conv2d(x, w, b, stride=1, padding=1)
        return (out * out).sum()

    params = {"x": x, "w": w, "b": b}
    analytic = ops.grad(fn, params)
    numeric = fd_gradient(fn, params)
    assert relative_gradient_error(analytic, numeric) < 1e-3


def test_conv2d_rejects_even_kernel_and_nonfinite():
    x = Tensor(np.ones((1, 4, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(np.ones((1, 1, 2, 2), dtype=np.float32)), Tensor(np.zeros(1, dtype=np.float32)))
    bad = np.ones((1, 3, 3), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        ops.conv2d(Tensor(bad), Tensor(np.ones((1, 1, 1, 1), dtype=np.float32)), Tensor(np.zeros(1, dtype=np.float32)))


# ---------------------------------------------------------------------------
# softmax / layer_norm
# ---------------------------------------------------------------------------


def test_softmax_uniform_and_stability():
    out = ops.softmax(Tensor(np.zeros(3, dtype=np.float32)), axis=0)
    assert np.allclose(out.data, 1.0 / 3.0)
    out = ops.softmax(Tensor(np.array([1000.0, 0.0], dtype=np.float32)), axis=0)
    assert np.abs(out.data - np.array([1.0, 0.0])).max() <= 1e-6


def test_softmax_matches_f64_oracle(rng):
    x = rng.standard_normal(7).astype(np.float32)
    got = ops.softmax(Tensor(x), axis=0).data
    e = np.exp(x.astype(np.float64))
    want = e / e.sum()
    assert np.abs(got - want).max() <= 1e-6
    assert abs(got.sum() - 1.0) <= 1e-6


def test_softmax_rows_sum_to_one(rng):
    x = rng.standard_normal((5, 9)).astype(np.float32) * 5.0
    out = ops.softmax(Tensor(x), axis=1).data
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-6
    assert (out > 0).all() and (out < 1).all()


def test_softmax_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        ops.softmax(Tensor(np.array([np.inf, 0.0], dtype=np.float32)), axis=0)


def test_layer_norm_constant_input_and_beta():
    x = Tensor(np.full((4, 8), 3.0, dtype=np.float32))
    g = Tensor(np.ones(8, dtype=np.float32))
    b = Tensor(np.zeros(8, dtype=np.float32))
    assert np.allclose(ops.layer_norm(x, g, b).data, 0.0)
    b = Tensor(np.full(8, 0.7, dtype=np.float32))
    out = ops.layer_norm(x, Tensor(np.zeros(8, dtype=np.float32)), b)
    assert np.allclose(out.data, 0.7)


def test_layer_norm_matches_f64_oracle(rng):
    x = rng.standard_normal((4, 8)).astype(np.float32)
    g = rng.standard_normal(8).astype(np.float32)
    b = rng.standard_normal(8).astype(np.float32)
    got = ops.layer_norm(Tensor(x), Tensor(g), Tensor(b), eps=1e-5).data
    xf = x.astype(np.float64)
    mu = xf.mean(axis=1, keepdims=True)
    var = ((xf - mu) ** 2).mean(axis=1, keepdims=True)
    want = (xf - mu) / np.sqrt(var + 1e-5) * g + b
    assert np.abs(got - want).max() <= 1e-5
    normed = (got - b) if np.allclose(g, 1) else None
    pre = (xf - mu) / np.sqrt(var + 1e-5)
    assert abs(pre.mean(axis=1)).max() <= 1e-5


def test_layer_norm_zero_axis_raises():
    with pytest.raises(ValueError):
        ops.layer_norm(Tensor(np.zeros((3, 0), dtype=np.float32)), Tensor(np.zeros(0, dtype=np.float32)), Tensor(np.zeros(0, dtype=np.float32)))


# ---------------------------------------------------------------------------
# pixel shuffle
# ---------------------------------------------------------------------------


def test_pixel_shuffle_definitional_layout():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(4, 1, 1))
    out = ops.pixel_shuffle(x, 2)
    assert np.array_equal(out.data, np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32))


def test_pixel_shuffle_r1_identity(rng):
    x = rng.standard_normal((3, 4, 5)).astype(np.float32)
    assert np.array_equal(ops.pixel_shuffle(Tensor(x), 1).data, x)


def test_pixel_shuffle_roundtrip_bit_exact(rng):
    x = rng.standard_normal((8, 3, 5)).astype(np.float32)
    out = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), 2), 2)
    assert np.array_equal(out.data, x)
    y = rng.standard_normal((2, 6, 10)).astype(np.float32)
    back = ops.pixel_shuffle(ops.pixel_unshuffle(Tensor(y), 2), 2)
    assert np.array_equal(back.data, y)


def test_pixel_shuffle_indivisible_raises():
    with pytest.raises(ValueError):
        ops.pixel_shuffle(Tensor(np.zeros((3, 2, 2), dtype=np.float32)), 2)


# ---------------------------------------------------------------------------
# bilinear warp
# ---------------------------------------------------------------------------


def test_warp_zero_flow_is_identity(rng):
    x = rng.standard_normal((3, 6, 7)).astype(np.float32)
    out = ops.bilinear_warp(Tensor(x), np.zeros((2, 6, 7), dtype=np.float32))
    assert np.array_equal(out.data, x)


def test_warp_integer_shift_matches_roll_oracle():
    h, w = 5, 6
    ramp = np.arange(h * w, dtype=np.float32).reshape(1, h, w)
    flow = np.zeros((2, h, w), dtype=np.float32)
    flow[0] = 1.0  # sample from x+1: shifts content left; border clamps
    out = ops.bilinear_warp(Tensor(ramp), flow).data
    want = ramp.copy()
    want[0, :, :-1] = ramp[0, :, 1:]
    want[0, :, -1] = ramp[0, :, -1]
    assert np.array_equal(out, want)


def test_warp_half_pixel_midpoint():
    row = np.array([[[0.0, 1.0]]], dtype=np.float32)
    flow = np.zeros((2, 1, 2), dtype=np.float32)
    flow[0] = 0.5
    out = ops.bilinear_warp(Tensor(row), flow).data
    assert np.isclose(out[0, 0, 0], 0.5)


def test_warp_gradient_flows_to_features(rng):
    x = Tensor(rng.standard_normal((2, 4, 4)).astype(np.float32), requires_grad=True)
    flow = rng.uniform(-1.5, 1.5, (2, 4, 4)).astype(np.float32)

    def fn():
        out = ops.bilinear_warp(x, flow)
        return (out * out).sum()

    analytic = ops.grad(fn, {"x": x})
    numeric = fd_gradient(fn, {"x": x})
    assert relative_gradient_error(analytic, numeric) < 1e-3


# ---------------------------------------------------------------------------
# bicubic resize
# ---------------------------------------------------------------------------


def test_bicubic_scale_one_identity(rng):
    x = rng.standard_normal((2, 5, 7)).astype(np.float32)
    out = ops.bicubic_resize_array(x, 1.0)
    assert np.abs(out - x).max() <= 1e-6


@pytest.mark.parametrize("scale", [0.5, 2.0, 4.0])
def test_bicubic_constant_preserved(scale):
    x = np.full((1, 8, 8), 0.37, dtype=np.float32)
    out = ops.bicubic_resize_array(x, scale)
    assert np.abs(out - 0.37).max() <= 1e-6


def test_bicubic_1d_ramp_matches_kernel_formula():
    def cubic(u):
        a, au = -0.5, abs(u)
        if au <= 1:
            return (a + 2) * au**3 - (a + 3) * au**2 + 1
        if au < 2:
            return a * (au**3 - 5 * au**2 + 8 * au - 4)
        return 0.0

    n = 8
    ramp = np.arange(n, dtype=np.float64)
    img = np.tile(ramp, (1, n, 1)).astype(np.float32)  # rows constant: 1D problem
    out = ops.bicubic_resize_array(img, 2.0)
    for j in range(2 * n):
        src = (j + 0.5) / 2.0 - 0.5
        base = int(np.floor(src))
        want = sum(
            cubic(src - (base + m)) * ramp[min(max(base + m, 0), n - 1)] for m in (-1, 0, 1, 2)
        )
        assert abs(out[0, n // 2, j] - want) <= 1e-5


def test_bicubic_rejects_bad_sizes():
    with pytest.raises(ValueError):
        ops.bicubic_resize_array(np.zeros((1, 4, 4), dtype=np.float32), -1.0)
    with pytest.raises(ValueError):
        ops.bicubic_resize_array(np.zeros((1, 4, 4), dtype=np.float32), 0.01)


# ---------------------------------------------------------------------------
# charbonnier
# ---------------------------------------------------------------------------


def test_charbonnier_zero_residual_equals_epsilon():
    x = Tensor(np.zeros((2, 4), dtype=np.float32))
    loss = ops.charbonnier_loss(x, x, CharbonnierConfig(epsilon=1e-3))
    assert loss.data == np.float32(1e-3)


def test_charbonnier_unit_one_hot():
    sr = Tensor(np.zeros(5, dtype=np.float32))
    hr = np.zeros(5, dtype=np.float32)
    hr[2] = 1.0
    loss = ops.charbonnier_loss(sr, Tensor(hr))
    assert np.isclose(float(loss.data), np.sqrt(1.0 + 1e-6), atol=1e-7)


def test_charbonnier_matches_f64_oracle(rng):
    sr = rng.standard_normal((2, 4)).astype(np.float32)
    hr = rng.standard_normal((2, 4)).astype(np.float32)
    got = float(ops.charbonnier_loss(Tensor(sr), Tensor(hr)).data)
    eps32 = np.float32(1e-3)
    want = np.sqrt(((hr.astype(np.float64) - sr) ** 2).sum() + float(eps32) ** 2)
    assert abs(got - want) <= 1e-7 * max(1.0, want)


def test_charbonnier_symmetric(rng):
    sr = rng.standard_normal((3, 3)).astype(np.float32)
    hr = rng.standard_normal((3, 3)).astype(np.float32)
    a = ops.charbonnier_loss(Tensor(sr), Tensor(hr)).data
    b = ops.charbonnier_loss(Tensor(hr), Tensor(sr)).data
    assert a == b


def test_charbonnier_mean_variant(rng):
    sr = rng.standard_normal((2, 4)).astype(np.float32)
    hr = rng.standard_normal((2, 4)).astype(np.float32)
    got = float(ops.charbonnier_loss_mean(Tensor(sr), Tensor(hr)).data)
    want = np.mean(np.sqrt((hr.astype(np.float64) - sr) ** 2 + float(np.float32(1e-3)) ** 2))
    assert abs(got - want) <= 1e-6


def test_charbonnier_shape_mismatch_and_bad_eps():
    with pytest.raises(ValueError):
        ops.charbonnier_loss(Tensor(np.zeros(2, dtype=np.float32)), Tensor(np.zeros(3, dtype=np.float32)))
    with pytest.raises(ValueError):
        CharbonnierConfig(epsilon=0.0)


def test_charbonnier_scalar_hand_derivative(rng):
    # f(w) = charbonnier(w*x, y): df/dw = (w*x - y) * x / L
    w = Tensor(np.float32(0.8), requires_grad=True)
    x, y = np.float32(1.7), np.float32(0.4)

    def fn():
        return ops.charbonnier_loss(w * x, Tensor(y))

    analytic = ops.grad(fn, {"w": w})["w"]
    wl = float(w.data) * float(x)
    loss = np.sqrt((wl - y) ** 2 + float(np.float32(1e-3)) ** 2)
    want = (wl - y) * float(x) / loss
    assert abs(float(analytic) - want) <= 1e-6


def test_grad_conv_stack_matches_fd(rng):
    # random 3-layer conv stack, < 100 parameters total
    x = rng.standard_normal((1, 5, 5)).astype(np.float32)
    w1 = Tensor(rng.standard_normal((2, 1, 3, 3)).astype(np.float32) * 0.5, requires_grad=True)
    b1 = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    w2 = Tensor(rng.standard_normal((1, 2, 3, 3)).astype(np.float32) * 0.5, requires_grad=True)
    b2 = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
    w3 = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32) * 0.5, requires_grad=True)
    b3 = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
    target = Tensor(rng.standard_normal((1, 5, 5)).astype(np.float32))

    def fn():
        h = ops.conv2d(Tensor(x), w1, b1, padding=1).gelu()
        h = ops.conv2d(h, w2, b2, padding=1).gelu()
        h = ops.conv2d(h, w3, b3, padding=1)
        return ops.charbonnier_loss(h, target)

    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2, "w3": w3, "b3": b3}
    analytic = ops.grad(fn, params)
    numeric = fd_gradient(fn, params)
    assert relative_gradient_error(analytic, numeric) <= 1e-3
