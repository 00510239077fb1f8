"""Shared domain types: images, label spaces, penalties, flow fields, config."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Finite stand-in for +infinity in min-convolution inputs; anything at or
# above INF_THRESHOLD is treated as infinite.
SENTINEL = 1e30
INF_THRESHOLD = 1e29

PENALTY_KINDS = ("l1", "l2", "charbonnier")
DATA_TERMS = ("ncc", "hs")


@dataclass(frozen=True)
class Image:
    """RGB raster with float intensities in [0, 1], stored as (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim == 2:
            px = np.repeat(px[:, :, None], 3, axis=2)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite samples")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


@dataclass(frozen=True)
class LabelSpace:
    """Displacements [-radius, radius]^2, row-major with the x offset fastest."""

    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def size(self) -> int:
        return self.side * self.side

    def index(self, dx: int, dy: int) -> int:
        r = self.radius
        if abs(dx) > r or abs(dy) > r:
            raise ValueError(f"label ({dx}, {dy}) outside radius {r}")
        return (dy + r) * self.side + (dx + r)

    def unindex(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.size:
            raise ValueError(f"label index {k} out of range")
        dy, dx = divmod(k, self.side)
        return dx - self.radius, dy - self.radius

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """(dx, dy) integer arrays of length ``size`` in index order."""
        r = np.arange(-self.radius, self.radius + 1)
        dy, dx = np.meshgrid(r, r, indexing="ij")
        return dx.ravel(), dy.ravel()


@dataclass(frozen=True)
class Penalty:
    """Per-component regularization penalty rho."""

    kind: str = "l1"
    eps: float = 5.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty {self.kind!r}; expected one of {PENALTY_KINDS}")
        if self.kind == "charbonnier" and not self.eps > 0:
            raise ValueError("Charbonnier eps must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "l1":
            out = np.abs(x)
        elif self.kind == "l2":
            out = x * x
        else:
            out = np.sqrt(x * x + self.eps * self.eps)
        return out if out.ndim else float(out)

    def table(self, n: int) -> np.ndarray:
        """rho(k) for k in [-(n-1), n-1]; entry ``n-1`` holds rho(0)."""
        return np.asarray(self(np.arange(-(n - 1), n)), dtype=np.float64).reshape(-1)

    def is_convex(self, n: int) -> bool:
        return is_convex_table(self.table(n))


def is_convex_table(tab: np.ndarray, tol: float = 1e-12) -> bool:
    tab = np.asarray(tab, dtype=np.float64)
    if tab.size < 3:
        return True
    second = tab[2:] - 2.0 * tab[1:-1] + tab[:-2]
    return bool(np.all(second >= -tol * np.maximum(1.0, np.abs(tab[1:-1]))))


def penalty_eval(p: Penalty, x: int) -> float:
    return float(p(x))


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 1.0
    tau: float = math.inf
    beta: float = 0.1
    zeta: float = 1.0
    delta: float = 2.0
    radius: int = 8
    iterations: int = 3
    penalty: Penalty = field(default_factory=Penalty)
    patch_radius: int = 1
    scale: int = 3
    data_term: str = "ncc"
    threads: int = 1
    memory_cap_gb: float = 8.0

    def __post_init__(self):
        for name in ("lam", "beta", "zeta", "delta", "memory_cap_gb"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.tau > 0 or math.isnan(self.tau):
            raise ValueError("tau must be positive (or inf for no truncation)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be >= 0")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.patch_radius < 1:
            raise ValueError("patch_radius must be >= 1")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.data_term not in DATA_TERMS:
            raise ValueError(f"unknown data term {self.data_term!r}; expected one of {DATA_TERMS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def labels(self) -> LabelSpace:
        return LabelSpace(self.radius)

    @property
    def truncated(self) -> bool:
        return math.isfinite(self.tau)

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "tau": "inf" if not self.truncated else self.tau,
            "beta": self.beta,
            "zeta": self.zeta,
            "delta": self.delta,
            "radius": self.radius,
            "iterations": self.iterations,
            "penalty": self.penalty.kind,
            "charbonnier_eps": self.penalty.eps,
            "patch_radius": self.patch_radius,
            "scale": self.scale,
            "data_term": self.data_term,
            "threads": self.threads,
            "memory_cap_gb": self.memory_cap_gb,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        tau = d.get("tau", math.inf)
        return cls(
            lam=float(d.get("lambda", 1.0)),
            tau=math.inf if tau in ("inf", None) else float(tau),
            beta=float(d.get("beta", 0.1)),
            zeta=float(d.get("zeta", 1.0)),
            delta=float(d.get("delta", 2.0)),
            radius=int(d.get("radius", 8)),
            iterations=int(d.get("iterations", 3)),
            penalty=Penalty(d.get("penalty", "l1"), float(d.get("charbonnier_eps", 5.0))),
            patch_radius=int(d.get("patch_radius", 1)),
            scale=int(d.get("scale", 3)),
            data_term=d.get("data_term", "ncc"),
            threads=int(d.get("threads", 1)),
            memory_cap_gb=float(d.get("memory_cap_gb", 8.0)),
        )


def radius_for_displacement(max_displacement: float, scale: int) -> int:
    """Label radius that covers a training-set maximum displacement at ``scale``."""
    return int(math.ceil(max_displacement / scale))


@dataclass
class FlowField:
    """Per-pixel displacement (u along x, v along y) with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be 2-D arrays of equal shape")
        if self.valid is None:
            self.valid = np.ones(self.u.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.u.shape:
                raise ValueError("valid mask shape mismatch")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def constant(cls, height: int, width: int, du: float, dv: float) -> "FlowField":
        return cls(np.full((height, width), du, float), np.full((height, width), dv, float))

    @classmethod
    def from_labels(cls, labels: np.ndarray, space: LabelSpace, height: int, width: int) -> "FlowField":
        dx, dy = space.offsets()
        lab = np.asarray(labels).reshape(height, width)
        return cls(dx[lab].astype(float), dy[lab].astype(float))

    def to_labels(self, space: LabelSpace) -> np.ndarray:
        r = space.radius
        u = np.rint(self.u).astype(np.int64)
        v = np.rint(self.v).astype(np.int64)
        if np.any(np.abs(u) > r) or np.any(np.abs(v) > r):
            raise ValueError("flow outside the label space")
        return ((v + r) * space.side + (u + r)).ravel()

    def copy(self) -> "FlowField":
        return FlowField(self.u.copy(), self.v.copy(), self.valid.copy())


def downsample(img: Image, scale: int) -> Image:
    """Block-mean downsampling; partial border blocks average the pixels present."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if scale == 1:
        return img
    h, w = img.shape
    oh, ow = -(-h // scale), -(-w // scale)
    pad = np.zeros((oh * scale, ow * scale, 3))
    pad[:h, :w] = img.pixels
    cnt = np.zeros((oh * scale, ow * scale))
    cnt[:h, :w] = 1.0
    sums = pad.reshape(oh, scale, ow, scale, 3).sum(axis=(1, 3))
    counts = cnt.reshape(oh, scale, ow, scale).sum(axis=(1, 3))
    return Image(sums / counts[:, :, None])
