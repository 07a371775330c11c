"""Named parameter storage and the Adam update."""

import numpy as np

from ..errors import NumericError, ShapeError


class ParamStore:
    """Named parameter tensors with gradient and Adam-state slots.

    Names are unique and shapes immutable after creation; gradients
    accumulate until zero_grad().
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._steps: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=np.float64).copy()
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        self._steps[name] = 0
        return arr

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        g = self.grads[name]
        if g.shape != np.shape(grad):
            raise ShapeError(f"gradient shape {np.shape(grad)} != param {g.shape} for {name!r}")
        g += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def names(self) -> list[str]:
        return sorted(self.params)


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """Bias-corrected Adam update over every parameter, in name order."""
    for name in store.names():
        g = store.grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        store._steps[name] += 1
        t = store._steps[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        store.params[name] -= lr * mhat / (np.sqrt(vhat) + eps)
