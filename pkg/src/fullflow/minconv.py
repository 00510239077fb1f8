"""Min-convolution h(i) = min_j g(j) + rho(i - j), in 1-D and separably in 2-D.

``minconv_brute`` is the quadratic reference. The fast kernels (two-pass L1
distance transform, lower envelope of parabolas, SMAWK row-minima search)
run in whichever backend ``fullflow.kernels`` selected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import kernels
from .model import INF_THRESHOLD, SENTINEL, LabelSpace, Penalty, is_convex_table

RhoLike = Union[Penalty, Callable[[np.ndarray], np.ndarray]]


def _as_sentinel(g) -> np.ndarray:
    g = np.array(g, dtype=np.float64, copy=True).ravel()
    g[~np.isfinite(g) | (g >= INF_THRESHOLD)] = SENTINEL
    return g


@dataclass(frozen=True)
class MinConvProblem:
    """A 1-D min-convolution instance; infinite entries of ``g`` become the sentinel."""

    g: np.ndarray
    rho: RhoLike = Penalty("l1")
    weight: float = 1.0

    def __post_init__(self):
        g = _as_sentinel(self.g)
        if g.size < 1:
            raise ValueError("g must be non-empty")
        if np.all(g >= INF_THRESHOLD):
            raise ValueError("g needs at least one finite entry")
        if not self.weight >= 0:
            raise ValueError("weight must be non-negative")
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.g.size

    def rho_table(self) -> np.ndarray:
        n = self.n
        if isinstance(self.rho, Penalty):
            return self.rho.table(n)
        x = np.arange(-(n - 1), n, dtype=np.float64)
        return np.asarray(self.rho(x), dtype=np.float64).reshape(-1)


def minconv_brute(prob: MinConvProblem) -> np.ndarray:
    """Theta(n^2) evaluation of every entry A(i, j) = g(j) + w*rho(i - j), then row minima."""
    n = prob.n
    tab = prob.rho_table()
    i = np.arange(n)
    a = prob.g[None, :] + prob.weight * tab[i[:, None] - i[None, :] + n - 1]
    a[:, prob.g >= INF_THRESHOLD] = SENTINEL
    h = a.min(axis=1)
    h[h >= INF_THRESHOLD] = SENTINEL
    return h


def dt_l1(g, slope: float) -> np.ndarray:
    """Min-convolution with slope*|x| in two linear passes."""
    if not slope > 0:
        raise ValueError("slope must be positive")
    return kernels.dt_l1(_as_sentinel(g), float(slope))


def dt_quadratic(g, weight: float) -> np.ndarray:
    """Min-convolution with weight*x^2 via the lower envelope of parabolas."""
    if not weight > 0:
        raise ValueError("weight must be positive")
    return kernels.dt_quadratic(_as_sentinel(g), float(weight))


class SmawkResult(tuple):
    """(h, ind) pair that also carries the number of matrix entries evaluated."""

    evaluations: int

    def __new__(cls, h, ind, evaluations):
        obj = super().__new__(cls, (h, ind))
        obj.evaluations = int(evaluations)
        return obj


def smawk_minconv(prob: MinConvProblem) -> SmawkResult:
    """Row minima of A(i, j) = g(j) + w*rho(i - j) for convex rho, in O(n).

    A is totally monotone when rho is convex; ties resolve to the smallest
    column. Raises ValueError for a non-convex rho.
    """
    tab = prob.rho_table()
    if not is_convex_table(tab):
        raise ValueError("SMAWK min-convolution requires a convex penalty")
    h, ind, count = kernels.smawk_minconv(prob.g, tab, float(prob.weight))
    return SmawkResult(h, ind, count)


def kernel_kind(rho: Penalty) -> str:
    return {"l1": "l1", "l2": "l2"}.get(rho.kind, "convex")


def minconv2d(phi, labels: LabelSpace, rho: Penalty, weight: float, tau: float = math.inf,
              kind: str | None = None) -> np.ndarray:
    """min(D(t), min(phi) + weight*tau) with D the separable 2-D min-convolution.

    ``kind`` overrides the kernel choice ("l1", "l2", "convex" or "brute");
    by default it follows the penalty.
    """
    phi = _as_sentinel(phi)
    n = labels.side
    if phi.size != labels.size:
        raise ValueError(f"phi has {phi.size} entries, label space has {labels.size}")
    if np.all(phi >= INF_THRESHOLD):
        raise ValueError("phi needs at least one finite entry")
    if weight < 0:
        raise ValueError("weight must be non-negative")
    kind = kind or kernel_kind(rho)
    if kind == "convex" and not rho.is_convex(n):
        raise ValueError("penalty is not convex on the label range")
    return kernels.minconv2d(phi, n, rho.table(n), float(weight), float(tau), kind)
