"""Differentiable tensor operators with hand-derived backward passes.

All tensors are float64 numpy arrays shaped (batch, channels, height,
width). Every convolution uses the same padding convention: circular wrap
on the x axis, zero padding on y (same-size output at stride 1). Each
forward returns (output, cache); the matching *_backward consumes the
cache and the upstream gradient.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _check4(x, name="tensor"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4D (B,C,H,W), got {x.shape}")


def _pad_circx(x, ph, pw):
    if pw:
        x = np.concatenate([x[..., -pw:], x, x[..., :pw]], axis=-1)
    if ph:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (0, 0)))
    return x


def _unpad_circx(gxp, ph, pw, h, w):
    core = gxp[:, :, ph : ph + h, :] if ph else gxp
    gx = core[..., pw : pw + w].copy()
    if pw:
        gx[..., w - pw :] += core[..., :pw]
        gx[..., :pw] += core[..., w + pw :]
    return gx


def _im2col(xp, kh, kw, stride):
    b = xp.shape[0]
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = v.shape[2], v.shape[3]
    cols = v.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, -1)
    return cols


def _col2im(gcols, xp_shape, kh, kw, stride):
    b, c, hp, wp = xp_shape
    _, ho, wo, _ = gcols.shape
    g = gcols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    gxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g[:, :, i, j]
    return gxp


def _conv_core(x, kernel, stride):
    """Cross-correlation under circ-x / zero-y same padding; no bias."""
    cout, cin, kh, kw = kernel.shape
    if x.shape[1] != cin:
        raise ShapeError(f"input channels {x.shape[1]} != kernel cin {cin}")
    xp = _pad_circx(x, kh // 2, kw // 2)
    cols = _im2col(xp, kh, kw, stride)
    y = cols @ kernel.reshape(cout, -1).T
    return y.transpose(0, 3, 1, 2), cols, xp.shape


def _conv_input_grad(gy, kernel, stride, in_shape):
    """Gradient w.r.t. conv input; also the conv-transpose forward map."""
    cout, cin, kh, kw = kernel.shape
    b, _, h, w = in_shape
    gcols = gy.transpose(0, 2, 3, 1) @ kernel.reshape(cout, -1)
    xp_shape = (b, cin, h + 2 * (kh // 2), w + 2 * (kw // 2))
    gxp = _col2im(gcols, xp_shape, kh, kw, stride)
    return _unpad_circx(gxp, kh // 2, kw // 2, h, w)


def _conv_kernel_grad(cols, gy, kshape):
    cout = kshape[0]
    gyl = gy.transpose(0, 2, 3, 1).reshape(-1, cout)
    return (gyl.T @ cols.reshape(-1, cols.shape[-1])).reshape(kshape)


def conv2d_circx(x, kernel, bias, stride=1):
    """Convolution (cross-correlation); kernel (Cout, Cin, kh, kw), odd kh/kw."""
    _check4(x, "input")
    if kernel.shape[2] % 2 == 0 or kernel.shape[3] % 2 == 0:
        raise ShapeError("kernel must be odd-sized")
    y, cols, xp_shape = _conv_core(x, kernel, stride)
    y = y + bias[None, :, None, None]
    return y, (cols, kernel, stride, x.shape)


def conv2d_circx_backward(cache, gy):
    cols, kernel, stride, in_shape = cache
    gx = _conv_input_grad(gy, kernel, stride, in_shape)
    gk = _conv_kernel_grad(cols, gy, kernel.shape)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gk, gb


def conv_transpose2d_circx(x, kernel, bias, stride=1):
    """Adjoint of conv2d_circx; kernel (Cin, Cout, kh, kw), output = input x stride."""
    _check4(x, "input")
    cin, cout, kh, kw = kernel.shape
    if x.shape[1] != cin:
        raise ShapeError(f"input channels {x.shape[1]} != kernel cin {cin}")
    b, _, h, w = x.shape
    out_shape = (b, cout, h * stride, w * stride)
    y = _conv_input_grad(x, kernel, stride, out_shape) + bias[None, :, None, None]
    return y, (x, kernel, stride)


def conv_transpose2d_circx_backward(cache, gy):
    x, kernel, stride = cache
    gx, cols, _ = _conv_core(gy, kernel, stride)
    gk = _conv_kernel_grad(cols, x, kernel.shape)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gk, gb


def partial_conv2d(x, mask, kernel, bias):
    """Mask-renormalized convolution (stride 1).

    mask is (B or 1, 1, H, W) of {0,1}. Where a window holds no valid
    pixel the output is bias alone and the updated mask is 0.
    """
    _check4(x, "input")
    _check4(mask, "mask")
    if mask.shape[1] != 1 or mask.shape[2:] != x.shape[2:]:
        raise ShapeError(f"mask shape {mask.shape} incompatible with input {x.shape}")
    cout, cin, kh, kw = kernel.shape
    xm = x * mask
    y0, cols, _ = _conv_core(xm, kernel, 1)
    ones_k = np.ones((1, 1, kh, kw))
    cnt, _, _ = _conv_core(mask, ones_k, 1)
    ratio = np.where(cnt > 0, (kh * kw) / np.maximum(cnt, 1e-12), 0.0)
    y = y0 * ratio + bias[None, :, None, None]
    new_mask = (cnt > 0).astype(np.float64)
    return (y, new_mask), (cols, kernel, ratio, mask, x.shape)


def partial_conv2d_backward(cache, gy):
    cols, kernel, ratio, mask, in_shape = cache
    gy0 = gy * ratio
    gx = _conv_input_grad(gy0, kernel, 1, in_shape) * mask
    gk = _conv_kernel_grad(cols, gy0, kernel.shape)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gk, gb


def instance_norm(x, eps=1e-5):
    """Per-sample, per-channel normalization over H x W."""
    _check4(x)
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat, (xhat, inv)


def instance_norm_backward(cache, gy):
    xhat, inv = cache
    n = xhat.shape[2] * xhat.shape[3]
    s1 = gy.sum(axis=(2, 3), keepdims=True)
    s2 = (gy * xhat).sum(axis=(2, 3), keepdims=True)
    return inv * (gy - s1 / n - xhat * s2 / n)


def relu(x):
    m = x > 0
    return x * m, m


def relu_backward(cache, gy):
    return gy * cache


def leaky_relu(x, slope=0.2):
    m = x > 0
    return np.where(m, x, slope * x), (m, slope)


def leaky_relu_backward(cache, gy):
    m, slope = cache
    return np.where(m, gy, slope * gy)


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x))
    return y, y


def sigmoid_backward(cache, gy):
    return gy * cache * (1.0 - cache)


def softmax_channels(x):
    """Softmax over the channel axis; sums to 1 per pixel."""
    e = np.exp(x - x.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return s, s


def softmax_channels_backward(cache, gy):
    s = cache
    return s * (gy - (gy * s).sum(axis=1, keepdims=True))


def clamp(x, lo, hi):
    """Hard clamp; gradient passes only strictly inside (lo, hi)."""
    inside = (x > lo) & (x < hi)
    return np.clip(x, lo, hi), inside


def clamp_backward(cache, gy):
    return gy * cache


def concat_channels(xs):
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]
    return np.concatenate(xs, axis=1), splits


def concat_channels_backward(cache, gy):
    return np.split(gy, cache, axis=1)


def nearest_resize(x, out_hw):
    """Nearest-neighbor spatial resize (up or down by any factor)."""
    _check4(x)
    b, c, h, w = x.shape
    ho, wo = out_hw
    iy = np.minimum((np.floor((np.arange(ho) + 0.5) * h / ho)).astype(np.int64), h - 1)
    ix = np.minimum((np.floor((np.arange(wo) + 0.5) * w / wo)).astype(np.int64), w - 1)
    y = x[:, :, iy][:, :, :, ix]
    return y, (x.shape, iy, ix)


def nearest_resize_backward(cache, gy):
    (b, c, h, w), iy, ix = cache
    idx = (iy[:, None] * w + ix[None, :]).ravel()
    gx = np.zeros((b * c, h * w))
    gyf = gy.reshape(b * c, -1)
    np.add.at(gx, (np.arange(b * c)[:, None], idx[None, :]), gyf)
    return gx.reshape(b, c, h, w)


def nearest_upsample(x, factor):
    return nearest_resize(x, (x.shape[2] * factor, x.shape[3] * factor))


def softmax_cross_entropy(logits, classes):
    """Mean over pixels of -log softmax at the true class.

    logits (B,C,H,W); classes (B,H,W) int in [0, C).
    """
    _check4(logits, "logits")
    if classes.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"classes shape {classes.shape} mismatches logits {logits.shape}")
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    b, _, h, w = logits.shape
    bi, yi, xi = np.ogrid[:b, :h, :w]
    picked = logits[bi, classes, yi, xi]
    n = b * h * w
    loss = float((lse - picked).sum() / n)
    return loss, (logits, classes, n)


def softmax_cross_entropy_backward(cache, gloss=1.0):
    logits, classes, n = cache
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    b, _, h, w = logits.shape
    bi, yi, xi = np.ogrid[:b, :h, :w]
    s[bi, classes, yi, xi] -= 1.0
    return s * (gloss / n)


def mae_loss(pred, target):
    """Mean absolute error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.abs(diff).mean()), (np.sign(diff), diff.size)


def mae_loss_backward(cache, gloss=1.0):
    sign, n = cache
    return sign * (gloss / n)


def kl_diag_gauss(mu_q, lv_q, mu_p, lv_p):
    """KL(q || p) for diagonal Gaussians in log-variance form.

    Summed over latent elements, averaged over the batch dimension.
    """
    if not (mu_q.shape == lv_q.shape == mu_p.shape == lv_p.shape):
        raise ShapeError("Gaussian parameter shapes must match")
    b = mu_q.shape[0]
    dmu = mu_q - mu_p
    ivp = np.exp(-lv_p)
    # exp(lv_q - lv_p) as one term so the KL is exactly zero when q == p.
    r = np.exp(lv_q - lv_p)
    per = 0.5 * (lv_p - lv_q + r + dmu * dmu * ivp - 1.0)
    return float(per.sum() / b), (dmu, ivp, r, b)


def kl_diag_gauss_backward(cache, gloss=1.0):
    dmu, ivp, r, b = cache
    s = gloss / b
    g_mu_q = dmu * ivp * s
    g_mu_p = -g_mu_q
    g_lv_q = 0.5 * (r - 1.0) * s
    g_lv_p = 0.5 * (1.0 - r - dmu * dmu * ivp) * s
    return g_mu_q, g_lv_q, g_mu_p, g_lv_p
