"""Stateless layer wrappers over the functional operators.

Each layer registers its parameters in a ParamStore at construction and
exposes forward(...) -> (out, cache) / backward(cache, gy) -> input grads.
Backward accumulates parameter gradients into the store, so a layer may be
applied several times per step (shared weights sum their contributions).
"""

import numpy as np

from . import ops
from .optim import ParamStore


def _he_init(rng, cout, cin, kh, kw):
    std = np.sqrt(2.0 / (cin * kh * kw))
    return rng.normal(0.0, std, size=(cout, cin, kh, kw))


class Conv2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int, stride: int, rng):
        self.store = store
        self.wname = f"{name}.w"
        self.bname = f"{name}.b"
        self.stride = stride
        store.add(self.wname, _he_init(rng, cout, cin, k, k))
        store.add(self.bname, np.zeros(cout))

    def forward(self, x):
        return ops.conv2d_circx(x, self.store.params[self.wname], self.store.params[self.bname], self.stride)

    def backward(self, cache, gy):
        gx, gk, gb = ops.conv2d_circx_backward(cache, gy)
        self.store.accumulate(self.wname, gk)
        self.store.accumulate(self.bname, gb)
        return gx


class ConvTranspose2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int, stride: int, rng):
        self.store = store
        self.wname = f"{name}.w"
        self.bname = f"{name}.b"
        self.stride = stride
        # Kernel laid out as (cin, cout, kh, kw): the adjoint of a conv
        # mapping cout -> cin.
        std = np.sqrt(2.0 / (cin * k * k))
        store.add(self.wname, rng.normal(0.0, std, size=(cin, cout, k, k)))
        store.add(self.bname, np.zeros(cout))

    def forward(self, x):
        return ops.conv_transpose2d_circx(
            x, self.store.params[self.wname], self.store.params[self.bname], self.stride
        )

    def backward(self, cache, gy):
        gx, gk, gb = ops.conv_transpose2d_circx_backward(cache, gy)
        self.store.accumulate(self.wname, gk)
        self.store.accumulate(self.bname, gb)
        return gx


class PartialConv2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int, rng):
        self.store = store
        self.wname = f"{name}.w"
        self.bname = f"{name}.b"
        store.add(self.wname, _he_init(rng, cout, cin, k, k))
        store.add(self.bname, np.zeros(cout))

    def forward(self, x, mask):
        return ops.partial_conv2d(x, mask, self.store.params[self.wname], self.store.params[self.bname])

    def backward(self, cache, gy):
        gx, gk, gb = ops.partial_conv2d_backward(cache, gy)
        self.store.accumulate(self.wname, gk)
        self.store.accumulate(self.bname, gb)
        return gx


class Spade:
    """Spatially-adaptive modulation: instance-norm then (1+gamma)*xhat+beta.

    gamma and beta come from a small conv stack over the conditioning map,
    which is nearest-resized to the feature resolution. The gamma/beta
    convs are zero-initialized, so a fresh layer is a pure instance norm.
    """

    def __init__(self, store: ParamStore, name: str, feat_ch: int, cond_ch: int, hidden: int, rng):
        self.store = store
        self.shared = Conv2d(store, f"{name}.shared", cond_ch, hidden, 3, 1, rng)
        self.gamma = Conv2d(store, f"{name}.gamma", hidden, feat_ch, 3, 1, rng)
        self.beta = Conv2d(store, f"{name}.beta", hidden, feat_ch, 3, 1, rng)
        store.params[self.gamma.wname][...] = 0.0
        store.params[self.beta.wname][...] = 0.0

    def forward(self, x, cond):
        xhat, nc = ops.instance_norm(x)
        cr, rc = ops.nearest_resize(cond, x.shape[2:])
        h, c1 = self.shared.forward(cr)
        ha, ca = ops.relu(h)
        gamma, cg = self.gamma.forward(ha)
        beta, cb = self.beta.forward(ha)
        y = xhat * (1.0 + gamma) + beta
        return y, (nc, rc, c1, ca, cg, cb, xhat, gamma)

    def backward(self, cache, gy):
        nc, rc, c1, ca, cg, cb, xhat, gamma = cache
        g_xhat = gy * (1.0 + gamma)
        g_gamma = gy * xhat
        g_beta = gy
        gha = self.gamma.backward(cg, g_gamma) + self.beta.backward(cb, g_beta)
        gh = ops.relu_backward(ca, gha)
        gcr = self.shared.backward(c1, gh)
        gcond = ops.nearest_resize_backward(rc, gcr)
        gx = ops.instance_norm_backward(nc, g_xhat)
        return gx, gcond
