"""Unary data costs for every (pixel, displacement) pair and Laplace edge weights."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import Image, LabelSpace, SolverConfig

# per-channel patch variance below this carries no correlation evidence
ZERO_VARIANCE = 1e-12


class MemoryBudgetError(MemoryError):
    def __init__(self, what: str, required: int, cap: int):
        self.required = required
        self.cap = cap
        super().__init__(
            f"{what} needs {required} bytes ({required / 2**30:.2f} GiB), "
            f"over the cap of {cap} bytes ({cap / 2**30:.2f} GiB)"
        )


@dataclass(frozen=True)
class CostVolume:
    """Unary costs, shape (height*width, labels.size), float32, pixel-major."""

    width: int
    height: int
    labels: LabelSpace
    values: np.ndarray

    def at(self, x: int, y: int, dx: int, dy: int) -> float:
        return float(self.values[y * self.width + x, self.labels.index(dx, dy)])

    @property
    def nbytes(self) -> int:
        return self.values.nbytes


@dataclass(frozen=True)
class EdgeWeights:
    """Laplace weights in (0, 1]: ``horizontal[y, x]`` joins (x, y)-(x+1, y),
    ``vertical[y, x]`` joins (x, y)-(x, y+1)."""

    horizontal: np.ndarray
    vertical: np.ndarray


def cost_volume_bytes(width: int, height: int, labels: LabelSpace) -> int:
    return width * height * labels.size * 4


def _patch(img: np.ndarray, x: int, y: int, r: int) -> np.ndarray:
    h, w, _ = img.shape
    ys = np.clip(np.arange(y - r, y + r + 1), 0, h - 1)
    xs = np.clip(np.arange(x - r, x + r + 1), 0, w - 1)
    return img[np.ix_(ys, xs)].reshape(-1, 3)


def ncc_cost(I1: Image, I2: Image, p: tuple[int, int], s: tuple[int, int],
             patch_radius: int = 1, zeta: float = 1.0) -> float:
    """Truncated NCC cost 1 - max(NCC, 0) of the patches at p in I1 and p+s in I2.

    NCC is computed per colour channel and averaged; patch samples beyond the
    border are clamped to the edge. Returns ``zeta`` when p+s leaves the image.
    """
    x, y = p
    qx, qy = x + s[0], y + s[1]
    if not I2.contains(qx, qy):
        return float(zeta)
    a = _patch(I1.pixels, x, y, patch_radius)
    b = _patch(I2.pixels, qx, qy, patch_radius)
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    k = a.shape[0]
    total = 0.0
    for c in range(3):
        va = float(np.dot(a[:, c], a[:, c]))
        vb = float(np.dot(b[:, c], b[:, c]))
        if va / k < ZERO_VARIANCE or vb / k < ZERO_VARIANCE:
            continue
        total += min(1.0, max(-1.0, float(np.dot(a[:, c], b[:, c])) / np.sqrt(va * vb)))
    return 1.0 - max(total / 3.0, 0.0)


def hs_cost(I1: Image, I2: Image, p: tuple[int, int], s: tuple[int, int],
            zeta: float = 1.0) -> float:
    """Squared RGB distance between I1(p) and I2(p+s); ``zeta`` outside the image."""
    x, y = p
    qx, qy = x + s[0], y + s[1]
    if not I2.contains(qx, qy):
        return float(zeta)
    d = I1.pixels[y, x] - I2.pixels[qy, qx]
    return float(np.dot(d, d))


def _centered_patches(img: np.ndarray, r: int):
    """Centered clamped patch samples (K, H, W, 3) and per-channel sum of squares."""
    h, w, _ = img.shape
    pad = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    k = (2 * r + 1) ** 2
    samples = np.empty((k, h, w, 3))
    i = 0
    for oy in range(2 * r + 1):
        for ox in range(2 * r + 1):
            samples[i] = pad[oy:oy + h, ox:ox + w]
            i += 1
    samples -= samples.mean(axis=0)
    ss = np.einsum("khwc,khwc->hwc", samples, samples)
    return samples, ss


def _overlap(dx: int, dy: int, w: int, h: int):
    """Slices of source pixels p with p+s inside the image, and of their targets."""
    x0, x1 = max(0, -dx), min(w, w - dx)
    y0, y1 = max(0, -dy), min(h, h - dy)
    if x0 >= x1 or y0 >= y1:
        return None
    return (slice(y0, y1), slice(x0, x1)), (slice(y0 + dy, y1 + dy), slice(x0 + dx, x1 + dx))


class _NCCTerm:
    def __init__(self, I1: Image, I2: Image, r: int):
        self.c1, ss1 = _centered_patches(I1.pixels, r)
        self.c2, ss2 = _centered_patches(I2.pixels, r)
        k = self.c1.shape[0]
        self.ok1 = ss1 / k >= ZERO_VARIANCE
        self.ok2 = ss2 / k >= ZERO_VARIANCE
        self.ss1 = ss1
        self.ss2 = ss2

    def __call__(self, src, dst) -> np.ndarray:
        cov = np.einsum("khwc,khwc->hwc", self.c1[(slice(None),) + src], self.c2[(slice(None),) + dst])
        ok = self.ok1[src] & self.ok2[dst]
        den = np.sqrt(self.ss1[src] * self.ss2[dst])
        ncc = np.zeros_like(cov)
        np.divide(cov, den, out=ncc, where=ok)
        np.clip(ncc, -1.0, 1.0, out=ncc)
        return 1.0 - np.maximum(ncc.sum(axis=2) / 3.0, 0.0)


class _HSTerm:
    def __init__(self, I1: Image, I2: Image):
        self.a = I1.pixels
        self.b = I2.pixels

    def __call__(self, src, dst) -> np.ndarray:
        d = self.a[src] - self.b[dst]
        return np.einsum("hwc,hwc->hw", d, d)


def build_cost_volume(I1: Image, I2: Image, cfg: SolverConfig) -> CostVolume:
    """Evaluate the configured data term for every pixel of I1 and every label."""
    if I1.shape != I2.shape:
        raise ValueError(f"image sizes differ: {I1.shape} vs {I2.shape}")
    labels = cfg.labels
    h, w = I1.shape
    need = cost_volume_bytes(w, h, labels)
    cap = int(cfg.memory_cap_gb * 2**30)
    if need > cap:
        raise MemoryBudgetError("cost volume", need, cap)

    term = _NCCTerm(I1, I2, cfg.patch_radius) if cfg.data_term == "ncc" else _HSTerm(I1, I2)
    values = np.full((h * w, labels.size), cfg.zeta, dtype=np.float32)
    planes = values.reshape(h, w, labels.size)
    dxs, dys = labels.offsets()

    def fill(ks):
        for k in ks:
            ov = _overlap(int(dxs[k]), int(dys[k]), w, h)
            if ov is not None:
                planes[ov[0] + (k,)] = term(*ov)

    chunks = np.array_split(np.arange(labels.size), max(1, min(cfg.threads, labels.size)))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            list(ex.map(fill, chunks))
    else:
        fill(chunks[0])
    values.setflags(write=False)
    return CostVolume(w, h, labels, values)


def cost_row(I1: Image, I2: Image, p: tuple[int, int], cfg: SolverConfig) -> np.ndarray:
    """All label costs of one pixel p, in label order (float64).

    Equals ``ncc_cost``/``hs_cost`` evaluated for every label, without
    building the whole volume.
    """
    x, y = p
    if not I1.contains(x, y):
        raise ValueError(f"pixel {p} outside the image")
    labels = cfg.labels
    h, w = I2.shape
    dxs, dys = labels.offsets()
    qx, qy = x + dxs, y + dys
    inside = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
    out = np.full(labels.size, float(cfg.zeta))
    qx, qy = qx[inside], qy[inside]
    if cfg.data_term == "hs":
        d = I2.pixels[qy, qx] - I1.pixels[y, x]
        out[inside] = np.einsum("lc,lc->l", d, d)
        return out
    r = cfg.patch_radius
    a = _patch(I1.pixels, x, y, r)
    a = a - a.mean(axis=0)
    k = a.shape[0]
    ssa = np.einsum("kc,kc->c", a, a)
    c2, ss2 = _centered_patches(I2.pixels, r)
    b = c2[:, qy, qx]  # (K, L, 3)
    cov = np.einsum("kc,klc->lc", a, b)
    ssb = ss2[qy, qx]
    ok = (ssa[None, :] / k >= ZERO_VARIANCE) & (ssb / k >= ZERO_VARIANCE)
    ncc = np.zeros_like(cov)
    np.divide(cov, np.sqrt(ssa[None, :] * ssb), out=ncc, where=ok)
    np.clip(ncc, -1.0, 1.0, out=ncc)
    out[inside] = 1.0 - np.maximum(ncc.sum(axis=1) / 3.0, 0.0)
    return out


def build_edge_weights(I1: Image, beta: float) -> EdgeWeights:
    """w_pq = exp(-||I1(p) - I1(q)|| / beta) on every 4-neighbour edge."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    px = I1.pixels
    dh = np.linalg.norm(px[:, 1:] - px[:, :-1], axis=2)
    dv = np.linalg.norm(px[1:, :] - px[:-1, :], axis=2)
    return EdgeWeights(np.exp(-dh / beta), np.exp(-dv / beta))
