"""Flow and image files, colour coding, error maps and endpoint-error metrics."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .model import FlowField, Image

FLO_MAGIC = 202021.25
FLO_MAGIC_BYTES = b"PIEH"
UNKNOWN_THRESHOLD = 1e9
UNKNOWN_VALUE = np.float32(1e10)
OUTLIER_EPE = 3.0
ERROR_MAP_CAP = 10.0


class FlowFormatError(ValueError):
    pass


class BadMagicError(FlowFormatError):
    pass


class TruncatedFileError(FlowFormatError):
    pass


class DimensionError(FlowFormatError):
    pass


class ImageFormatError(ValueError):
    pass


# ------------------------------------------------------------------ .flo

def write_flo(flow: FlowField, path) -> None:
    """Middlebury .flo; invalid pixels are written as the unknown value 1e10."""
    h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow.u
    data[..., 1] = flow.v
    data[~flow.valid] = UNKNOWN_VALUE
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(data.tobytes())


def read_flo(path) -> FlowField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != FLO_MAGIC_BYTES:
        raise BadMagicError(f"{path}: not a .flo file (bad magic)")
    if len(raw) < 12:
        raise TruncatedFileError(f"{path}: header truncated")
    w, h = struct.unpack("<ii", raw[4:12])
    if w < 1 or h < 1 or w > 1 << 20 or h > 1 << 20:
        raise DimensionError(f"{path}: invalid dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise DimensionError(f"{path}: {len(raw) - need} trailing bytes beyond {w}x{h} payload")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    u = data[..., 0].astype(np.float64)
    v = data[..., 1].astype(np.float64)
    valid = (np.abs(data[..., 0]) <= UNKNOWN_THRESHOLD) & (np.abs(data[..., 1]) <= UNKNOWN_THRESHOLD)
    valid &= np.isfinite(data[..., 0]) & np.isfinite(data[..., 1])
    return FlowField(u, v, valid)


# ------------------------------------------------------------------ images

def _read_ppm(raw: bytes, path) -> Image:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    if pos >= len(raw):
        raise ImageFormatError(f"{path}: truncated PPM header")
    pos += 1  # single whitespace before the raster
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PPM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid PPM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * 3 * dtype.itemsize
    if len(raw) - pos < need:
        raise ImageFormatError(f"{path}: PPM raster truncated")
    px = np.frombuffer(raw, dtype=dtype, count=w * h * 3, offset=pos).reshape(h, w, 3)
    return Image(px.astype(np.float64) / maxval)


def read_image(path) -> Image:
    """Load PPM (P6) or PNG as RGB in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"P6":
        return _read_ppm(raw, path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image as PILImage
        import io

        try:
            with PILImage.open(io.BytesIO(raw)) as im:
                im.load()
                mode16 = im.mode in ("I;16", "I;16B", "I")
                arr = np.asarray(im.convert("RGB") if not mode16 else im, dtype=np.float64)
        except Exception as exc:  # PIL raises a zoo of types for corrupt streams
            raise ImageFormatError(f"{path}: corrupt PNG ({exc})") from exc
        if mode16:
            arr = np.repeat(arr[..., None] / 65535.0, 3, axis=2)
        else:
            arr = arr / 255.0
        return Image(arr)
    raise ImageFormatError(f"{path}: unsupported image format (expected PPM P6 or PNG)")


def _to_u8(img) -> np.ndarray:
    px = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(px * 255.0), 0, 255).astype(np.uint8)


def write_image(img, path) -> None:
    """Write PNG or PPM depending on the file extension."""
    data = _to_u8(img)
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".ppm", ".pnm"):
        h, w, _ = data.shape
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(data.tobytes())
    elif ext == ".png":
        from PIL import Image as PILImage

        PILImage.fromarray(data, "RGB").save(path)
    else:
        raise ImageFormatError(f"{path}: unsupported output format {ext!r}")


# ------------------------------------------------------------------ visualisation

def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def flow_hue_saturation(flow: FlowField, max_magnitude: Optional[float] = None):
    """Hue in [0, 1) from atan2(v, u) and saturation from the clipped magnitude."""
    mag = np.hypot(flow.u, flow.v)
    if max_magnitude is None:
        vals = mag[flow.valid]
        max_magnitude = float(vals.max()) if vals.size and vals.max() > 0 else 1.0
    hue = np.mod(np.arctan2(flow.v, flow.u) / (2 * np.pi), 1.0)
    sat = np.minimum(mag / max_magnitude, 1.0)
    return hue, sat


def flow_to_color(flow: FlowField, max_magnitude: Optional[float] = None) -> Image:
    """Colour-wheel rendering: white at zero motion, saturated hue at max_magnitude."""
    hue, sat = flow_hue_saturation(flow, max_magnitude)
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    rgb[~flow.valid] = 0.0
    return Image(rgb)


def error_map(epe: np.ndarray, mask: Optional[np.ndarray] = None, cap: float = ERROR_MAP_CAP) -> Image:
    """Grayscale EPE image, saturating at ``cap`` pixels; masked-out pixels black."""
    g = np.clip(np.nan_to_num(epe, nan=0.0) / cap, 0.0, 1.0)
    if mask is not None:
        g = np.where(mask, g, 0.0)
    return Image(np.repeat(g[..., None], 3, axis=2))


# ------------------------------------------------------------------ metrics

@dataclass
class FlowMetrics:
    epe_all: float
    outlier_rate: float
    per_pixel_epe: np.ndarray
    epe_masked: dict
    n_evaluated: int

    def as_row(self) -> dict:
        row = {"epe_all": self.epe_all, "outlier_rate": self.outlier_rate, "n": self.n_evaluated}
        row.update({f"epe_{k}": v for k, v in self.epe_masked.items()})
        return row


def compute_metrics(flow: FlowField, gt: FlowField,
                    masks: Optional[Mapping[str, np.ndarray]] = None) -> FlowMetrics:
    """EPE statistics over pixels with ground truth; outliers have EPE >= 3 px."""
    if flow.shape != gt.shape:
        raise DimensionError(f"flow {flow.shape} and ground truth {gt.shape} differ in size")
    epe = np.hypot(flow.u - gt.u, flow.v - gt.v)
    ok = gt.valid
    n = int(ok.sum())
    vals = epe[ok]
    epe_all = float(vals.mean()) if n else float("nan")
    outliers = float((vals >= OUTLIER_EPE).mean()) if n else float("nan")
    masked = {}
    for name, m in (masks or {}).items():
        m = np.asarray(m, dtype=bool)
        if m.shape != gt.shape:
            raise DimensionError(f"mask {name!r} has shape {m.shape}, expected {gt.shape}")
        sel = epe[m & ok]
        masked[name] = float(sel.mean()) if sel.size else float("nan")
    per_pixel = np.where(ok, epe, np.nan)
    return FlowMetrics(epe_all, outliers, per_pixel, masked, n)
