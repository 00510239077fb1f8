"""Controlled experiments: data term x penalty x truncation, each tuned by grid search.

Every one of the twelve conditions gets its own exhaustive search over the
declared parameter ranges; the score of a parameter setting is the mean
end-to-end EPE over the dataset. Expensive intermediate results (cost
volumes, edge weights, solver outputs) are cached because many settings
share them -- delta, for example, only affects post-processing.
"""
from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .costvolume import build_cost_volume, build_edge_weights
from .flowio import compute_metrics, read_flo, read_image
from .model import DATA_TERMS, PENALTY_KINDS, FlowField, Image, Penalty, SolverConfig, downsample
from .pipeline import finish, optimise

DEFAULT_RANGES = {
    "lambda": [0.25, 0.5, 1, 2, 4],
    "tau": [2, 5, 10, "inf"],
    "beta": [0.05, 0.1, 0.2],
    "zeta": [0.5, 1],
    "delta": [1, 2, 4],
}


class ManifestError(ValueError):
    pass


def _num(x) -> float:
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(x)


@dataclass(frozen=True)
class GridRanges:
    lam: tuple = tuple(DEFAULT_RANGES["lambda"])
    tau: tuple = (2.0, 5.0, 10.0, math.inf)
    beta: tuple = tuple(DEFAULT_RANGES["beta"])
    zeta: tuple = tuple(DEFAULT_RANGES["zeta"])
    delta: tuple = tuple(DEFAULT_RANGES["delta"])

    @classmethod
    def from_dict(cls, d: dict) -> "GridRanges":
        unknown = set(d) - set(DEFAULT_RANGES)
        if unknown:
            raise ValueError(f"unknown grid parameters: {sorted(unknown)}")
        merged = {**DEFAULT_RANGES, **d}
        vals = {}
        for key, attr in (("lambda", "lam"), ("tau", "tau"), ("beta", "beta"),
                          ("zeta", "zeta"), ("delta", "delta")):
            seq = merged[key]
            if not isinstance(seq, (list, tuple)) or not seq:
                raise ValueError(f"range for {key!r} must be a non-empty list")
            vals[attr] = tuple(_num(v) for v in seq)
        return cls(**vals)

    @classmethod
    def load(cls, path) -> "GridRanges":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def taus(self, truncated: bool) -> tuple:
        if not truncated:
            return (math.inf,)
        finite = tuple(t for t in self.tau if math.isfinite(t))
        if not finite:
            raise ValueError("truncated conditions need at least one finite tau in the ranges")
        return finite


@dataclass
class Pair:
    name: str
    image1: Image
    image2: Image
    gt: FlowField


def load_manifest(path) -> list[Pair]:
    """Pairs from a JSON list of {image1, image2, gt[, name]} or lines 'img1 img2 gt'.

    Relative paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        text = fh.read()
    entries = []
    stripped = text.lstrip()
    if stripped.startswith(("[", "{")):
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("pairs", [])
        for i, e in enumerate(data):
            try:
                entries.append((e.get("name", f"pair{i:03d}"), e["image1"], e["image2"], e["gt"]))
            except (KeyError, AttributeError) as exc:
                raise ManifestError(f"{path}: entry {i} needs image1, image2 and gt") from exc
    else:
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ManifestError(f"{path}:{ln}: expected 'image1 image2 gt'")
            entries.append((f"pair{len(entries):03d}", *parts))
    if not entries:
        raise ManifestError(f"{path}: manifest lists no image pairs")
    pairs = []
    for name, a, b, g in entries:
        a, b, g = (p if os.path.isabs(p) else os.path.join(base, p) for p in (a, b, g))
        I1, I2, gt = read_image(a), read_image(b), read_flo(g)
        if I1.shape != I2.shape or gt.shape != I1.shape:
            raise ManifestError(f"{name}: images and ground truth differ in size")
        pairs.append(Pair(name, I1, I2, gt))
    return pairs


@dataclass(frozen=True)
class Condition:
    data_term: str
    penalty: str
    truncated: bool

    @property
    def label(self) -> str:
        return f"{self.data_term}+{self.penalty}+{'trunc' if self.truncated else 'notrunc'}"


CONDITIONS = tuple(Condition(d, p, t) for d in DATA_TERMS for p in PENALTY_KINDS for t in (True, False))


@dataclass
class ConditionResult:
    condition: Condition
    mean_epe: float
    params: dict
    per_image: dict  # pair name -> EPE at the chosen parameters
    evaluated: int


@dataclass
class GridResult:
    conditions: list = field(default_factory=list)

    def table_rows(self) -> list[dict]:
        rows = []
        for r in self.conditions:
            c = r.condition
            rows.append({
                "condition": c.label, "data_term": c.data_term, "penalty": c.penalty,
                "truncated": int(c.truncated), "mean_epe": r.mean_epe,
                **{k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in r.params.items()},
                "settings_evaluated": r.evaluated,
            })
        return rows

    def sorted_series(self) -> dict:
        """Per condition, per-image EPE sorted ascending."""
        return {r.condition.label: sorted(r.per_image.values()) for r in self.conditions}


class _Cache:
    def __init__(self, pairs: Sequence[Pair], base: SolverConfig):
        self.pairs = pairs
        self.base = base
        self.small = {}
        self.cost = {}
        self.weights = {}
        self.flows = {}

    def images(self, i):
        if i not in self.small:
            p = self.pairs[i]
            self.small[i] = (downsample(p.image1, self.base.scale), downsample(p.image2, self.base.scale))
        return self.small[i]

    def cost_volumes(self, i, cfg):
        key = (i, cfg.data_term, cfg.zeta)
        if key not in self.cost:
            a, b = self.images(i)
            self.cost[key] = (build_cost_volume(a, b, cfg), build_cost_volume(b, a, cfg))
        return self.cost[key]

    def edge_weights(self, i, beta):
        key = (i, beta)
        if key not in self.weights:
            a, b = self.images(i)
            self.weights[key] = (build_edge_weights(a, beta), build_edge_weights(b, beta))
        return self.weights[key]

    def solve(self, i, cfg):
        key = (i, cfg.data_term, cfg.zeta, cfg.beta, cfg.penalty.kind, cfg.lam, cfg.tau)
        if key not in self.flows:
            cf, cb = self.cost_volumes(i, cfg)
            wf, wb = self.edge_weights(i, cfg.beta)
            self.flows[key] = (optimise(cf, wf, cfg).flow, optimise(cb, wb, cfg).flow)
        return self.flows[key]


def evaluate(cache: _Cache, cfg: SolverConfig) -> dict:
    """End-to-end EPE for every pair under one configuration."""
    out = {}
    for i, pair in enumerate(cache.pairs):
        fwd, bwd = cache.solve(i, cfg)
        _, _, full = finish(fwd, bwd, cfg, pair.image1.width, pair.image1.height)
        out[pair.name] = compute_metrics(full, pair.gt).epe_all
    return out


def run_grid(pairs: Sequence[Pair], base: SolverConfig, ranges: GridRanges = GridRanges(),
             conditions: Sequence[Condition] = CONDITIONS,
             progress: Optional[Callable[[str], None]] = None) -> GridResult:
    if not pairs:
        raise ManifestError("no image pairs to evaluate")
    cache = _Cache(pairs, base)
    result = GridResult()
    for cond in conditions:
        best = None
        count = 0
        for lam, tau, beta, zeta, delta in itertools.product(
                ranges.lam, ranges.taus(cond.truncated), ranges.beta, ranges.zeta, ranges.delta):
            cfg = base.with_(data_term=cond.data_term, penalty=Penalty(cond.penalty, base.penalty.eps),
                             lam=lam, tau=tau, beta=beta, zeta=zeta, delta=delta)
            per = evaluate(cache, cfg)
            count += 1
            score = float(np.mean(list(per.values())))
            if best is None or score < best[0]:
                best = (score, {"lambda": lam, "tau": tau, "beta": beta, "zeta": zeta, "delta": delta}, per)
        result.conditions.append(ConditionResult(cond, best[0], best[1], best[2], count))
        if progress is not None:
            progress(f"{cond.label}: mean EPE {best[0]:.4f} ({count} settings)")
    return result
