"""Forward-backward consistency, hole filling and flow upscaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .model import FlowField


@dataclass
class MatchPointSet:
    """4-D points (x1, y1, x2, y2) with an exact nearest-neighbour index."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    @classmethod
    def forward(cls, flow: FlowField) -> "MatchPointSet":
        """{(p, p + f_p)} over valid pixels."""
        ys, xs = np.nonzero(flow.valid)
        return cls(np.stack([xs, ys, xs + flow.u[ys, xs], ys + flow.v[ys, xs]], axis=1))

    @classmethod
    def backward(cls, flow: FlowField) -> "MatchPointSet":
        """{(q + f'_q, q)} over valid pixels of the reverse flow."""
        ys, xs = np.nonzero(flow.valid)
        return cls(np.stack([xs + flow.u[ys, xs], ys + flow.v[ys, xs], xs, ys], axis=1))

    def nearest_sqdist(self, queries: np.ndarray) -> np.ndarray:
        """Exact squared distance from each query to its nearest point (inf if empty)."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 4)
        if self._tree is None:
            return np.full(len(queries), np.inf)
        _, idx = self._tree.query(queries, k=1)
        diff = self.points[idx] - queries
        return np.einsum("ij,ij->i", diff, diff)


def consistency_check(fwd: FlowField, bwd: FlowField, delta: float) -> FlowField:
    """Keep f_p only if some reverse match (q + f'_q, q) lies within squared distance < delta."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    out = fwd.copy()
    ys, xs = np.nonzero(fwd.valid)
    if len(ys) == 0:
        return out
    q = np.stack([xs, ys, xs + fwd.u[ys, xs], ys + fwd.v[ys, xs]], axis=1).astype(np.float64)
    d2 = MatchPointSet.backward(bwd).nearest_sqdist(q)
    out.valid[ys, xs] = d2 < delta
    return out


def interpolate_fill(flow: FlowField, k: int = 16) -> FlowField:
    """Fill invalid pixels with the inverse-distance-weighted mean of the k nearest valid ones."""
    if not flow.valid.any():
        raise ValueError("cannot interpolate a flow field with no valid pixels")
    out = flow.copy()
    holes = np.argwhere(~flow.valid)
    if len(holes):
        good = np.argwhere(flow.valid)
        kk = min(k, len(good))
        dist, idx = cKDTree(good.astype(np.float64)).query(holes.astype(np.float64), k=kk)
        dist = dist.reshape(len(holes), kk)
        idx = idx.reshape(len(holes), kk)
        wts = 1.0 / dist
        wts /= wts.sum(axis=1, keepdims=True)
        gy, gx = good[idx, 0], good[idx, 1]
        out.u[holes[:, 0], holes[:, 1]] = np.sum(wts * flow.u[gy, gx], axis=1)
        out.v[holes[:, 0], holes[:, 1]] = np.sum(wts * flow.v[gy, gx], axis=1)
    out.valid[:] = True
    return out


def _bilinear(a: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = a.shape
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def sample_bilinear(a: np.ndarray, y: float, x: float) -> float:
    return float(_bilinear(np.asarray(a, float), np.array([y], float), np.array([x], float))[0, 0])


def upscale_flow(flow: FlowField, scale: int, target_w: int, target_h: int) -> FlowField:
    """Bilinear upsampling with displacements multiplied by ``scale``.

    Source pixel i sits at full-resolution coordinate scale*i + (scale-1)/2.
    The validity mask is taken from the nearest source pixel.
    """
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if scale == 1 and flow.shape == (target_h, target_w):
        return flow.copy()
    c = (scale - 1) / 2.0
    ys = (np.arange(target_h) - c) / scale
    xs = (np.arange(target_w) - c) / scale
    u = _bilinear(flow.u, ys, xs) * scale
    v = _bilinear(flow.v, ys, xs) * scale
    ny = np.clip(np.rint(ys).astype(int), 0, flow.height - 1)
    nx = np.clip(np.rint(xs).astype(int), 0, flow.width - 1)
    valid = flow.valid[np.ix_(ny, nx)]
    return FlowField(u, v, valid)


def match_list(flow: FlowField, scale: int = 1) -> np.ndarray:
    """Surviving matches as rows (x1, y1, x2, y2) in full-resolution coordinates."""
    c = (scale - 1) / 2.0
    ys, xs = np.nonzero(flow.valid)
    x1 = xs * scale + c
    y1 = ys * scale + c
    return np.stack([x1, y1, x1 + flow.u[ys, xs] * scale, y1 + flow.v[ys, xs] * scale], axis=1)


def write_matches(path, flow: FlowField, scale: int = 1) -> int:
    m = match_list(flow, scale)
    with open(path, "w") as fh:
        for x1, y1, x2, y2 in m:
            fh.write(f"{x1:g} {y1:g} {x2:g} {y2:g}\n")
    return len(m)


def read_matches(path) -> np.ndarray:
    data = np.loadtxt(path, ndmin=2)
    return data.reshape(-1, 4)
