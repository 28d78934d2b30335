import numpy as np
import pytest

from turbdiff import autodiff as ad
from turbdiff.autodiff import Tensor
from turbdiff.rng import Rng

from conftest import finite_diff_check


def t_(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------

def test_mse_identical_is_zero():
    a = t_([1.0, 2.0, 3.0])
    assert ad.mse(a, a).item() == 0.0


def test_mse_simple_value():
    assert ad.mse(t_([0.0, 0.0]), t_([1.0, 1.0])).item() == 1.0


def test_conv2d_identity_kernel():
    x = t_(Rng(0).gauss((2, 5, 5, 3)))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0] = np.eye(3)
    out = ad.conv2d(x, t_(w))
    assert np.array_equal(out.data, x.data)


def test_conv2d_matches_direct_convolution():
    # oracle: explicit loop over kernel taps with zero padding
    rng = Rng(1)
    x = rng.gauss((1, 4, 4, 2))
    w = rng.gauss((3, 3, 2, 3))
    out = ad.conv2d(t_(x), t_(w)).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 4, 4, 3))
    for i in range(4):
        for j in range(4):
            patch = xp[0, i:i + 3, j:j + 3, :]
            for co in range(3):
                ref[0, i, j, co] = np.sum(patch * w[:, :, :, co])
    assert np.allclose(out, ref, atol=1e-12)


def test_elementwise_shape_errors_name_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ad.add(t_([1.0, 2.0]), t_([1.0, 2.0, 3.0]))


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(t_(np.ones((2, 3))), t_(np.ones((2, 3))))


def test_silu_values():
    x = t_([0.0, 100.0, -100.0])
    out = ad.silu(x).data
    assert out[0] == 0.0
    assert abs(out[1] - 100.0) < 1e-9
    assert abs(out[2]) < 1e-9


def test_group_norm_normalizes():
    x = t_(5.0 + 3.0 * Rng(2).gauss((2, 4, 4, 8)))
    out = ad.group_norm(x, t_(np.ones(8)), t_(np.zeros(8)), groups=2).data
    grp = out.reshape(2, 4, 4, 2, 4)
    assert np.allclose(grp.mean(axis=(1, 2, 4)), 0.0, atol=1e-10)
    assert np.allclose(grp.reshape(2, -1, 2, 4).std(axis=(1, 3)), 1.0, atol=1e-3)


def test_pool_and_upsample_shapes_and_values():
    x = t_(np.arange(16.0).reshape(1, 4, 4, 1))
    p = ad.avg_pool2(x)
    assert p.shape == (1, 2, 2, 1)
    assert p.data[0, 0, 0, 0] == (0 + 1 + 4 + 5) / 4.0
    u = ad.upsample2(p)
    assert u.shape == (1, 4, 4, 1)
    assert np.all(u.data[0, :2, :2, 0] == p.data[0, 0, 0, 0])


def test_layout_transposes_roundtrip():
    x = t_(Rng(3).gauss((2, 3, 4, 5)))
    back = ad.channels_first(ad.channels_last(x))
    assert np.array_equal(back.data, x.data)


# ---------------------------------------------------------------------------
# backward: analytic cases
# ---------------------------------------------------------------------------

def test_backward_linear_case():
    # loss = sum(w * x) with fixed x  =>  dloss/dw == x
    x = np.array([1.5, -2.0, 0.5])
    w = t_([0.1, 0.2, 0.3])
    loss = ad.tsum(ad.mul(w, Tensor(x)))
    ad.backward(loss)
    assert np.allclose(w.grad, x, atol=1e-15)


def test_backward_mse_analytic():
    # loss = mse(w, t)  =>  dloss/dw == 2 (w - t) / n
    w = t_([1.0, 2.0, 3.0, 4.0])
    target = Tensor(np.array([0.0, 0.0, 1.0, 1.0]))
    ad.backward(ad.mse(w, target))
    assert np.allclose(w.grad, 2.0 * (w.data - target.data) / 4.0, atol=1e-15)


def test_backward_requires_scalar():
    w = t_([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.mul(w, w))


def test_backward_accumulates_until_cleared():
    w = t_([1.0, -1.0])
    x = Tensor(np.array([2.0, 3.0]))

    def loss():
        return ad.tsum(ad.mul(w, x))

    ad.backward(loss())
    first = w.grad.copy()
    ad.backward(loss())
    assert np.allclose(w.grad, 2.0 * first)
    w.grad = None
    ad.backward(loss())
    assert np.allclose(w.grad, first)


def test_three_layer_net_finite_difference():
    # random 3-layer dense net, every parameter checked against central FD
    rng = Rng(11)
    x = Tensor(rng.gauss((4, 3)))
    target = Tensor(rng.gauss((4, 2)))
    params = {
        "w1": t_(rng.gauss((3, 5)) * 0.5), "b1": t_(rng.gauss((5,)) * 0.1),
        "w2": t_(rng.gauss((5, 4)) * 0.5), "b2": t_(rng.gauss((4,)) * 0.1),
        "w3": t_(rng.gauss((4, 2)) * 0.5), "b3": t_(rng.gauss((2,)) * 0.1),
    }

    def loss():
        h = ad.silu(ad.add_bias(ad.matmul(x, params["w1"]), params["b1"]))
        h = ad.silu(ad.add_bias(ad.matmul(h, params["w2"]), params["b2"]))
        out = ad.add_bias(ad.matmul(h, params["w3"]), params["b3"])
        return ad.mse(out, target)

    finite_diff_check(loss, params)


@pytest.mark.parametrize("op_name", [
    "add", "sub", "mul", "scale", "matmul", "add_bias", "conv2d", "conv1x1",
    "silu", "group_norm", "avg_pool2", "upsample2", "concat", "channel_map",
    "tsum", "tmean", "mse", "layout",
])
def test_every_op_against_finite_differences(op_name):
    rng = Rng(sum(map(ord, op_name)))
    a4 = t_(rng.gauss((2, 4, 4, 4)))
    b4 = t_(rng.gauss((2, 4, 4, 4)))
    ref4 = Tensor(rng.gauss((2, 4, 4, 4)))

    builders = {
        "add": (lambda: ad.mse(ad.add(a4, b4), ref4), {"a": a4, "b": b4}),
        "sub": (lambda: ad.mse(ad.sub(a4, b4), ref4), {"a": a4, "b": b4}),
        "mul": (lambda: ad.mse(ad.mul(a4, b4), ref4), {"a": a4, "b": b4}),
        "scale": (lambda: ad.mse(ad.scale(a4, -1.7), ref4), {"a": a4}),
        "matmul": (lambda: ad.mse(ad.matmul(m1, m2), refm), None),
        "add_bias": (lambda: ad.mse(ad.add_bias(m1, bias), m1ref), None),
        "conv2d": (lambda: ad.mse(ad.conv2d(a4, cw, cb), ref_conv), None),
        "conv1x1": (lambda: ad.mse(ad.conv2d(a4, cw1, cb1), ref_conv1), None),
        "silu": (lambda: ad.mse(ad.silu(a4), ref4), {"a": a4}),
        "group_norm": (lambda: ad.mse(
            ad.group_norm(a4, gn_g, gn_b, groups=2), ref4), None),
        "avg_pool2": (lambda: ad.mse(ad.avg_pool2(a4), ref_pool), {"a": a4}),
        "upsample2": (lambda: ad.mse(ad.upsample2(a4), ref_up), {"a": a4}),
        "concat": (lambda: ad.mse(ad.concat_channels(a4, b4), ref_cat),
                   {"a": a4, "b": b4}),
        "channel_map": (lambda: ad.mse(ad.add_channel_map(a4, vmap), ref4),
                        None),
        "tsum": (lambda: ad.tsum(ad.mul(a4, b4)), {"a": a4}),
        "tmean": (lambda: ad.tmean(ad.mul(a4, b4)), {"a": a4}),
        "mse": (lambda: ad.mse(a4, b4), {"a": a4, "b": b4}),
        "layout": (lambda: ad.mse(ad.channels_first(ad.channels_last(a4)),
                                  ref4), {"a": a4}),
    }
    m1 = t_(rng.gauss((3, 4)))
    m2 = t_(rng.gauss((4, 2)))
    refm = Tensor(rng.gauss((3, 2)))
    bias = t_(rng.gauss((4,)))
    m1ref = Tensor(rng.gauss((3, 4)))
    cw = t_(rng.gauss((3, 3, 4, 2)) * 0.4)
    cb = t_(rng.gauss((2,)) * 0.1)
    ref_conv = Tensor(rng.gauss((2, 4, 4, 2)))
    cw1 = t_(rng.gauss((1, 1, 4, 3)) * 0.4)
    cb1 = t_(rng.gauss((3,)) * 0.1)
    ref_conv1 = Tensor(rng.gauss((2, 4, 4, 3)))
    gn_g = t_(1.0 + 0.2 * rng.gauss((4,)))
    gn_b = t_(0.2 * rng.gauss((4,)))
    ref_pool = Tensor(rng.gauss((2, 2, 2, 4)))
    ref_up = Tensor(rng.gauss((2, 8, 8, 4)))
    ref_cat = Tensor(rng.gauss((2, 4, 4, 8)))
    vmap = t_(rng.gauss((2, 4)))

    loss_fn, tensors = builders[op_name]
    if tensors is None:
        tensors = {
            "matmul": {"m1": m1, "m2": m2},
            "add_bias": {"m1": m1, "bias": bias},
            "conv2d": {"a": a4, "w": cw, "b": cb},
            "conv1x1": {"a": a4, "w": cw1, "b": cb1},
            "group_norm": {"a": a4, "g": gn_g, "b": gn_b},
            "channel_map": {"a": a4, "v": vmap},
        }[op_name]
    finite_diff_check(loss_fn, tensors)


def test_deterministic_repeat_bitwise():
    def run():
        rng = Rng(77)
        x = Tensor(rng.gauss((2, 6, 6, 2)))
        w = t_(rng.gauss((3, 3, 2, 2)))
        out = ad.conv2d(ad.silu(ad.conv2d(x, w)), w)
        loss = ad.tmean(out)
        w.grad = None
        ad.backward(loss)
        return out.data.copy(), w.grad.copy()

    o1, g1 = run()
    o2, g2 = run()
    assert np.array_equal(o1, o2) and np.array_equal(g1, g2)


def test_no_grad_blocks_graph():
    w = t_([1.0, 2.0])
    with ad.no_grad():
        out = ad.mul(w, w)
    assert not out.requires_grad
    assert out.is_leaf


def test_non_finite_inputs_are_not_masked():
    # NaN flows through ops (error handling is at checkpoint/optimizer level)
    x = t_([np.nan, 1.0])
    assert np.isnan(ad.mse(x, t_([0.0, 0.0])).item())
