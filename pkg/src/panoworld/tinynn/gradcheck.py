"""Central finite-difference verification of analytic gradients."""

import numpy as np


def grad_check(fn, arrays: dict[str, np.ndarray], h: float = 1e-5, atol: float = 1e-7) -> dict[str, float]:
    """Compare fn's analytic gradients against central differences.

    fn(arrays) must return (scalar loss, dict name -> gradient). The step
    per element is h * max(1, |value|). Returns max relative error per
    array, with rel = |a - n| / max(1e-8, |a| + |n|); an absolute
    difference below atol counts as exact (covers parameters whose true
    gradient is zero, e.g. biases absorbed by a following normalization,
    where finite-difference round-off would otherwise dominate).
    """
    _, grads = fn(arrays)
    report = {}
    for name, arr in arrays.items():
        a = grads[name]
        worst = 0.0
        flat = arr.ravel()
        for i in range(flat.size):
            v = flat[i]
            step = h * max(1.0, abs(v))
            flat[i] = v + step
            lp, _ = fn(arrays)
            flat[i] = v - step
            lm, _ = fn(arrays)
            flat[i] = v
            num = (lp - lm) / (2.0 * step)
            ana = a.ravel()[i]
            diff = abs(ana - num)
            rel = 0.0 if diff < atol else diff / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, rel)
        report[name] = worst
    return report
