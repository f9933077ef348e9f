"""Central finite-difference checks for the autograd engine.

The numeric side never touches the graph: it perturbs one entry of a raw
array, re-evaluates the scalar function under ``no_grad`` and differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class GradCheckResult:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel_error(self):
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    def __len__(self):
        return len(self.rel_error)


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(fn, arrays, probes=100, seed=0, eps=1e-5):
    """Compare autograd and central differences of ``fn`` at ``probes`` random entries.

    ``fn`` maps a list of Tensors (one per entry of ``arrays``) to a scalar
    Tensor. Probes are spread over all inputs in proportion to their size.
    The default step sits near the cube root of machine epsilon, where
    truncation and round-off errors of a central difference balance.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.backward(fn(leaves))
    analytic_all = [np.zeros_like(a) if leaf.grad is None else leaf.grad
                    for leaf, a in zip(leaves, arrays)]

    sizes = np.array([a.size for a in arrays], dtype=np.float64)
    rng = np.random.default_rng(seed)
    which = rng.choice(len(arrays), size=probes, p=sizes / sizes.sum())
    ana, num = [], []

    def value(xs):
        with T.no_grad():
            return fn([T.Tensor(x) for x in xs]).item()

    for k in which:
        flat = int(rng.integers(arrays[k].size))
        base = arrays[k].reshape(-1)[flat]
        xs = [a.copy() for a in arrays]
        xs[k].reshape(-1)[flat] = base + eps
        up = value(xs)
        xs[k].reshape(-1)[flat] = base - eps
        down = value(xs)
        num.append((up - down) / (2 * eps))
        ana.append(analytic_all[k].reshape(-1)[flat])
    ana, num = np.array(ana), np.array(num)
    return GradCheckResult(ana, num, relative_error(ana, num))
