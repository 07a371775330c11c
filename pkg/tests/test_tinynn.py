import math

import numpy as np
import pytest

from panoworld.errors import DataError, NumericError
from panoworld.tinynn import (Conv2d, ConvTranspose2d, ParamStore,
                              PartialConv2d, Spade, adam_step, grad_check,
                              load_checkpoint, ops, save_checkpoint)


# ---------------------------------------------------------------------------
# Independent brute-force oracles.


def conv_oracle(x, k, b, stride):
    """Naive circular-x / zero-y padded convolution."""
    bs, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    oh, ow = (h + stride - 1) // stride, (w + stride - 1) // stride
    y = np.zeros((bs, cout, oh, ow))
    for n in range(bs):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = b[co]
                    for ci in range(cin):
                        for dy in range(kh):
                            for dx in range(kw):
                                iy = oy * stride + dy - ph
                                ix = (ox * stride + dx - pw) % w
                                if 0 <= iy < h:
                                    acc += x[n, ci, iy, ix] * k[co, ci, dy, dx]
                    y[n, co, oy, ox] = acc
    return y


def partial_conv_oracle(x, mask, k, b):
    """Naive partial convolution with k-area/count renormalization."""
    bs, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    m = np.broadcast_to(mask, (bs, 1, h, w))
    y = np.zeros((bs, cout, h, w))
    new_mask = np.zeros((bs, 1, h, w))
    for n in range(bs):
        for oy in range(h):
            for ox in range(w):
                cnt = 0
                for dy in range(kh):
                    for dx in range(kw):
                        iy = oy + dy - ph
                        ix = (ox + dx - pw) % w
                        if 0 <= iy < h and m[n, 0, iy, ix] > 0:
                            cnt += 1
                new_mask[n, 0, oy, ox] = 1.0 if cnt else 0.0
                for co in range(cout):
                    acc = 0.0
                    for ci in range(cin):
                        for dy in range(kh):
                            for dx in range(kw):
                                iy = oy + dy - ph
                                ix = (ox + dx - pw) % w
                                if 0 <= iy < h and m[n, 0, iy, ix] > 0:
                                    acc += x[n, ci, iy, ix] * k[co, ci, dy, dx]
                    ratio = (kh * kw) / cnt if cnt else 0.0
                    y[n, co, oy, ox] = acc * ratio + b[co]
    return y, new_mask


def spade_oracle(x, gamma, beta):
    """Per-(sample, channel) instance norm then affine modulation."""
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    xhat = (x - mu) / np.sqrt(var + 1e-5)
    return xhat * (1.0 + gamma) + beta


# ---------------------------------------------------------------------------
# Forward oracle equivalence.


def test_conv2d_circx_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(2, 3, 6, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        y, _ = ops.conv2d_circx(x, k, b, stride)
        assert np.abs(y - conv_oracle(x, k, b, stride)).max() < 1e-10


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, conv_T(y)> for all x, y: exact adjointness.
    rng = np.random.default_rng(1)
    for stride in (1, 2):
        x = rng.normal(size=(2, 3, 4, 8))
        k = rng.normal(size=(5, 3, 3, 3))
        cx, _ = ops.conv2d_circx(x, k, np.zeros(5), stride)
        y = rng.normal(size=cx.shape)
        # conv kernel (cout, cin, kh, kw) is read as (cin, cout, kh, kw)
        # by the transpose op, which maps the conv output space back.
        xt, _ = ops.conv_transpose2d_circx(y, k, np.zeros(3), stride)
        lhs = float((cx * y).sum())
        rhs = float((x * xt).sum())
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_partial_conv_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=(2, 3, 5, 6))
        mask = (rng.random((2, 1, 5, 6)) < 0.6).astype(float)
        k = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        (y, nm), _ = ops.partial_conv2d(x, mask, k, b)
        oy, onm = partial_conv_oracle(x, mask, k, b)
        assert np.abs(y - oy).max() < 1e-10
        assert np.array_equal(nm, onm)


def test_partial_conv_all_valid_equals_conv():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 6, 8))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    mask = np.ones((1, 1, 6, 8))
    (y, nm), _ = ops.partial_conv2d(x, mask, k, b)
    # Fully valid interior columns have count 9 except the y-borders.
    yc, _ = ops.conv2d_circx(x, k, b, 1)
    assert np.abs(y[:, :, 1:-1] - yc[:, :, 1:-1]).max() < 1e-10
    assert nm.all()


def test_spade_matches_oracle():
    rng = np.random.default_rng(4)
    store = ParamStore()
    sp = Spade(store, "s", 4, 3, 8, rng)
    x = rng.normal(size=(2, 4, 6, 8))
    cond = rng.normal(size=(2, 3, 6, 8))
    y, _ = sp.forward(x, cond)
    # Fresh Spade has zero-initialized gamma/beta convs: pure instance norm.
    assert np.abs(y - spade_oracle(x, 0.0, 0.0)).max() < 1e-10
    # Nonzero modulation weights: compute gamma/beta through the same convs.
    for nm in ("s.gamma.w", "s.beta.w"):
        store.params[nm][...] = rng.normal(size=store.params[nm].shape)
    y, _ = sp.forward(x, cond)
    h1, _ = ops.conv2d_circx(cond, store.params["s.shared.w"], store.params["s.shared.b"], 1)
    ha, _ = ops.relu(h1)
    gamma, _ = ops.conv2d_circx(ha, store.params["s.gamma.w"], store.params["s.gamma.b"], 1)
    beta, _ = ops.conv2d_circx(ha, store.params["s.beta.w"], store.params["s.beta.b"], 1)
    assert np.abs(y - spade_oracle(x, gamma, beta)).max() < 1e-10


def test_instance_norm_statistics():
    rng = np.random.default_rng(5)
    x = rng.normal(2.0, 3.0, size=(2, 4, 8, 8))
    y, _ = ops.instance_norm(x)
    assert np.abs(y.mean(axis=(2, 3))).max() < 1e-12
    assert np.abs(y.var(axis=(2, 3)) - 1.0).max() < 1e-4  # eps-limited


def test_nearest_resize_round_trip_and_values():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 2, 4, 8))
    up, _ = ops.nearest_resize(x, (8, 16))
    assert np.array_equal(up[:, :, ::2, ::2], x)
    down, _ = ops.nearest_resize(up, (4, 8))
    assert np.array_equal(down, x)


def test_softmax_cross_entropy_uniform_logits():
    logits = np.zeros((2, 13, 4, 4))
    classes = np.random.default_rng(7).integers(0, 13, size=(2, 4, 4))
    loss, _ = ops.softmax_cross_entropy(logits, classes)
    assert abs(loss - math.log(13)) < 1e-12


def test_kl_diag_gauss_closed_forms():
    z = np.zeros((1, 1, 1, 1))
    # q = p -> 0 exactly.
    mu = np.full_like(z, 0.7)
    lv = np.full_like(z, -0.3)
    kl, _ = ops.kl_diag_gauss(mu, lv, mu.copy(), lv.copy())
    assert kl == 0.0
    # p standard normal, q = N(2, 1): KL = mu^2 / 2 = 2.
    kl, _ = ops.kl_diag_gauss(np.full_like(z, 2.0), z, z, z)
    assert abs(kl - 2.0) < 1e-12


def test_kl_diag_gauss_monte_carlo():
    rng = np.random.default_rng(8)
    mu_q = np.full((1, 1, 1, 1), 0.5)
    lv_q = np.full((1, 1, 1, 1), -0.4)
    mu_p = np.full((1, 1, 1, 1), -0.3)
    lv_p = np.full((1, 1, 1, 1), 0.6)
    kl, _ = ops.kl_diag_gauss(mu_q, lv_q, mu_p, lv_p)
    s = rng.normal(float(mu_q[0, 0, 0, 0]), float(np.exp(0.5 * lv_q[0, 0, 0, 0])),
                   size=1_000_000)

    def logpdf(x, mu, lv):
        return -0.5 * (lv + math.log(2 * math.pi) + (x - mu) ** 2 / np.exp(lv))

    mc = float(np.mean(logpdf(s, mu_q, lv_q) - logpdf(s, mu_p, lv_p)))
    assert abs(mc - kl) / abs(kl) < 0.01


# ---------------------------------------------------------------------------
# Gradient checks for every operator.


def test_grad_conv2d():
    rng = np.random.default_rng(10)
    x0 = rng.normal(size=(2, 2, 4, 6))
    k0 = rng.normal(size=(3, 2, 3, 3))
    b0 = rng.normal(size=3)
    gy = rng.normal(size=(2, 3, 2, 3))

    def fn(a):
        y, cache = ops.conv2d_circx(a["x"], a["k"], a["b"], 2)
        gx, gk, gb = ops.conv2d_circx_backward(cache, gy)
        return float((y * gy).sum()), {"x": gx, "k": gk, "b": gb}

    errs = grad_check(fn, {"x": x0, "k": k0, "b": b0})
    assert max(errs.values()) < 1e-6


def test_grad_conv_transpose2d():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(1, 3, 2, 4))
    k0 = rng.normal(size=(3, 2, 3, 3))
    b0 = rng.normal(size=2)
    gy = rng.normal(size=(1, 2, 4, 8))

    def fn(a):
        y, cache = ops.conv_transpose2d_circx(a["x"], a["k"], a["b"], 2)
        gx, gk, gb = ops.conv_transpose2d_circx_backward(cache, gy)
        return float((y * gy).sum()), {"x": gx, "k": gk, "b": gb}

    errs = grad_check(fn, {"x": x0, "k": k0, "b": b0})
    assert max(errs.values()) < 1e-6


def test_grad_partial_conv():
    rng = np.random.default_rng(12)
    x0 = rng.normal(size=(1, 2, 4, 6))
    k0 = rng.normal(size=(3, 2, 3, 3))
    b0 = rng.normal(size=3)
    mask = (rng.random((1, 1, 4, 6)) < 0.6).astype(float)
    gy = rng.normal(size=(1, 3, 4, 6))

    def fn(a):
        (y, _), cache = ops.partial_conv2d(a["x"], mask, a["k"], a["b"])
        gx, gk, gb = ops.partial_conv2d_backward(cache, gy)
        return float((y * gy).sum()), {"x": gx, "k": gk, "b": gb}

    errs = grad_check(fn, {"x": x0, "k": k0, "b": b0})
    assert max(errs.values()) < 1e-6


def test_grad_instance_norm_and_activations():
    rng = np.random.default_rng(13)
    x0 = rng.normal(size=(2, 3, 4, 5))
    gy = rng.normal(size=(2, 3, 4, 5))

    def fn_in(a):
        y, cache = ops.instance_norm(a["x"])
        return float((y * gy).sum()), {"x": ops.instance_norm_backward(cache, gy)}

    def fn_relu(a):
        y, cache = ops.relu(a["x"])
        return float((y * gy).sum()), {"x": ops.relu_backward(cache, gy)}

    def fn_lrelu(a):
        y, cache = ops.leaky_relu(a["x"])
        return float((y * gy).sum()), {"x": ops.leaky_relu_backward(cache, gy)}

    def fn_sig(a):
        y, cache = ops.sigmoid(a["x"])
        return float((y * gy).sum()), {"x": ops.sigmoid_backward(cache, gy)}

    for fn in (fn_in, fn_relu, fn_lrelu, fn_sig):
        errs = grad_check(fn, {"x": x0.copy()})
        assert max(errs.values()) < 1e-6, fn


def test_grad_softmax_cross_entropy():
    rng = np.random.default_rng(14)
    logits0 = rng.normal(size=(2, 5, 3, 4))
    classes = rng.integers(0, 5, size=(2, 3, 4))

    def fn(a):
        loss, cache = ops.softmax_cross_entropy(a["x"], classes)
        return loss, {"x": ops.softmax_cross_entropy_backward(cache, 1.0)}

    errs = grad_check(fn, {"x": logits0})
    assert max(errs.values()) < 1e-6


def test_grad_kl_diag_gauss():
    rng = np.random.default_rng(15)
    arrs = {n: rng.normal(size=(2, 3, 2, 2)) for n in ("mq", "lq", "mp", "lp")}

    def fn(a):
        kl, cache = ops.kl_diag_gauss(a["mq"], a["lq"], a["mp"], a["lp"])
        gmq, glq, gmp, glp = ops.kl_diag_gauss_backward(cache, 1.0)
        return kl, {"mq": gmq, "lq": glq, "mp": gmp, "lp": glp}

    errs = grad_check(fn, arrs)
    assert max(errs.values()) < 1e-6


def test_grad_nearest_resize():
    rng = np.random.default_rng(16)
    x0 = rng.normal(size=(1, 2, 4, 6))
    gy = rng.normal(size=(1, 2, 6, 10))

    def fn(a):
        y, cache = ops.nearest_resize(a["x"], (6, 10))
        return float((y * gy).sum()), {"x": ops.nearest_resize_backward(cache, gy)}

    errs = grad_check(fn, {"x": x0})
    assert max(errs.values()) < 1e-6


def test_grad_spade_layer():
    rng = np.random.default_rng(17)
    store = ParamStore()
    sp = Spade(store, "s", 3, 2, 4, rng)
    for nm in ("s.gamma.w", "s.beta.w"):
        store.params[nm][...] = rng.normal(size=store.params[nm].shape) * 0.3
    x0 = rng.normal(size=(1, 3, 4, 6))
    cond = rng.normal(size=(1, 2, 4, 6))
    gy = rng.normal(size=(1, 3, 4, 6))
    names = sorted(store.params)

    def fn(a):
        for nm in names:
            store.params[nm][...] = a[nm]
        store.zero_grad()
        y, cache = sp.forward(a["x"], cond)
        gx, _ = sp.backward(cache, gy)
        grads = {nm: store.grads[nm].copy() for nm in names}
        grads["x"] = gx
        return float((y * gy).sum()), grads

    arrs = {nm: store.params[nm].copy() for nm in names}
    arrs["x"] = x0
    errs = grad_check(fn, arrs)
    assert max(errs.values()) < 1e-6


# ---------------------------------------------------------------------------
# Optimizer + checkpoints.


def test_adam_converges_on_quadratic():
    store = ParamStore()
    rng = np.random.default_rng(18)
    store.add("w", rng.normal(size=(4,)))
    target = np.array([1.0, -2.0, 0.5, 3.0])
    for _ in range(500):
        store.zero_grad()
        store.accumulate("w", 2.0 * (store.params["w"] - target))
        adam_step(store, 0.05)
    assert np.abs(store.params["w"] - target).max() < 1e-3


def test_adam_deterministic():
    def run():
        store = ParamStore()
        store.add("w", np.ones(3))
        for i in range(10):
            store.zero_grad()
            store.accumulate("w", np.sin(store.params["w"] + i))
            adam_step(store, 0.01)
        return store.params["w"].copy()

    assert np.array_equal(run(), run())


def test_adam_rejects_nan_gradient():
    store = ParamStore()
    store.add("w", np.ones(2))
    store.zero_grad()
    store.accumulate("w", np.array([1.0, np.nan]))
    with pytest.raises(NumericError) as ei:
        adam_step(store, 0.01)
    assert "w" in str(ei.value)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(19)
    tensors = {
        "a.w": rng.normal(size=(3, 2, 3, 3)),
        "b": rng.normal(size=(7,)),
        "zz": np.array([[1.5]]),
    }
    meta = {"kind": "test", "config": {"x": 1}}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, meta)
    loaded, meta2 = load_checkpoint(path)
    assert meta2 == meta
    assert sorted(loaded) == sorted(tensors)
    for k in tensors:
        assert np.array_equal(loaded[k], tensors[k])


def test_checkpoint_deterministic_bytes(tmp_path):
    tensors = {"w": np.arange(6, dtype=np.float64).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors, {"k": 1})
    save_checkpoint(p2, tensors, {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"\x00" * 4)
    with pytest.raises(DataError):
        load_checkpoint(p)
