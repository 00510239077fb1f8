"""Synthetic image pairs with known flow, for tests, benchmarks and the grid harness."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .model import FlowField, Image


def texture(height: int, width: int, rng: np.random.Generator, blur: float = 1.0,
            contrast: float = 0.2) -> np.ndarray:
    """Band-limited colour noise around 0.5, clipped to [0, 1]."""
    raw = rng.normal(size=(height, width, 3))
    sm = np.stack([gaussian_filter(raw[..., c], blur) for c in range(3)], axis=2)
    sm = (sm - sm.mean()) / (sm.std() + 1e-12)
    return np.clip(0.5 + contrast * sm, 0.0, 1.0)


def translated_pair(height: int, width: int, du: int, dv: int, noise: float = 0.0,
                    seed: int = 0, gain: float = 1.0, bias: float = 0.0, blur: float = 1.0):
    """I1 and I2 with I2(x + du, y + dv) = gain * I1(x, y) + bias (plus noise).

    Content entering the frame in I2 is real texture from a larger canvas.
    Returns (I1, I2, ground-truth flow).
    """
    rng = np.random.default_rng(seed)
    m = max(abs(du), abs(dv)) + 2
    canvas = texture(height + 2 * m, width + 2 * m, rng, blur)
    a = canvas[m:m + height, m:m + width]
    b = canvas[m - dv:m - dv + height, m - du:m - du + width]
    b = gain * b + bias
    if noise > 0:
        a = a + rng.normal(scale=noise, size=a.shape)
        b = b + rng.normal(scale=noise, size=b.shape)
    gt = FlowField.constant(height, width, float(du), float(dv))
    return Image(np.clip(a, 0, 1)), Image(np.clip(b, 0, 1)), gt


def occlusion_pair(height: int, width: int, box: tuple[int, int, int, int], seed: int = 0,
                   noise: float = 0.0):
    """Static textured background; an independently textured object only in I1.

    ``box`` is (x0, y0, x1, y1). Returns (I1, I2, object mask).
    """
    rng = np.random.default_rng(seed)
    bg = texture(height, width, rng)
    obj = texture(height, width, rng, blur=1.0, contrast=0.25)
    x0, y0, x1, y1 = box
    mask = np.zeros((height, width), dtype=bool)
    mask[y0:y1, x0:x1] = True
    a = np.where(mask[..., None], obj, bg)
    b = bg.copy()
    if noise > 0:
        a = a + rng.normal(scale=noise, size=a.shape)
        b = b + rng.normal(scale=noise, size=b.shape)
    return Image(np.clip(a, 0, 1)), Image(np.clip(b, 0, 1)), mask


def brightness_dataset(count: int = 5, height: int = 40, width: int = 48, seed: int = 7,
                       noise: float = 0.02):
    """Translated pairs whose second image has a smooth, per-channel gain ramp and bias.

    The photometric change breaks brightness constancy while leaving local
    structure intact. Returns a list of (name, I1, I2, gt).
    """
    shifts = [(2, -1), (-3, 2), (1, 3), (3, 0), (-2, -2)]
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, width)[None, :, None]
    y = np.linspace(0, 1, height)[:, None, None]
    out = []
    for i in range(count):
        du, dv = shifts[i % len(shifts)]
        g0 = rng.uniform(0.5, 0.8, 3)
        g1 = rng.uniform(1.2, 1.6, 3)
        gain = g0 + (g1 - g0) * (x if i % 2 else y)
        bias = rng.uniform(-0.2, 0.2, 3) * (1 - x)
        I1, I2, gt = translated_pair(height, width, du, dv, noise=noise, seed=i, gain=gain, bias=bias)
        out.append((f"pair{i:03d}", I1, I2, gt))
    return out
