"""End-to-end flow estimation: downsample, match, optimise, check, fill, upscale."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .costvolume import (CostVolume, EdgeWeights, build_cost_volume, build_edge_weights,
                         cost_volume_bytes)
from .model import FlowField, Image, SolverConfig, downsample
from .postprocess import consistency_check, interpolate_fill, upscale_flow
from .trws import TRWSSolver, message_bytes


class PipelineError(RuntimeError):
    """An error raised inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


@dataclass
class DirectionResult:
    flow: FlowField
    lower_bound: float
    log: list


@dataclass
class FlowResult:
    cfg: SolverConfig
    forward: DirectionResult
    backward: DirectionResult
    consistent: FlowField
    filled: FlowField
    full: FlowField
    timings: dict = field(default_factory=dict)
    memory: dict = field(default_factory=dict)
    backend: str = kernels.BACKEND


def memory_estimate(width: int, height: int, cfg: SolverConfig) -> dict:
    """Bytes of the two dominant buffers at solver resolution."""
    w = -(-width // cfg.scale)
    h = -(-height // cfg.scale)
    return {
        "solver_width": w,
        "solver_height": h,
        "labels": cfg.labels.size,
        "cost_volume_bytes": cost_volume_bytes(w, h, cfg.labels),
        "message_bytes": message_bytes(w, h, cfg.labels.size),
    }


class _Stage:
    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, et, ev, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if ev is not None and not isinstance(ev, PipelineError):
            raise PipelineError(self.name, ev) from ev
        return False


def prepare(I1: Image, I2: Image, cfg: SolverConfig, timings: Optional[dict] = None):
    """Downsampled images with forward and backward (cost volume, edge weights)."""
    timings = {} if timings is None else timings
    if I1.shape != I2.shape:
        raise PipelineError("input", ValueError(f"image sizes differ: {I1.shape} vs {I2.shape}"))
    with _Stage("downsample", timings):
        a = downsample(I1, cfg.scale)
        b = downsample(I2, cfg.scale)
    with _Stage("cost_volume", timings):
        fwd = (build_cost_volume(a, b, cfg), build_edge_weights(a, cfg.beta))
        bwd = (build_cost_volume(b, a, cfg), build_edge_weights(b, cfg.beta))
    return a, b, fwd, bwd


def optimise(cost: CostVolume, weights: EdgeWeights, cfg: SolverConfig,
             callback: Optional[Callable] = None) -> DirectionResult:
    solver = TRWSSolver(cost, weights, cfg)
    log = []

    def hook(it, lb, dt):
        log.append((it, lb, dt))
        if callback is not None:
            callback(it, lb, dt)

    solver.run(cfg.iterations, hook)
    return DirectionResult(solver.decode(), solver.lower_bound, log)


def finish(fwd: FlowField, bwd: FlowField, cfg: SolverConfig, width: int, height: int,
           timings: Optional[dict] = None):
    timings = {} if timings is None else timings
    with _Stage("consistency", timings):
        consistent = consistency_check(fwd, bwd, cfg.delta)
    with _Stage("interpolate", timings):
        filled = interpolate_fill(consistent) if consistent.valid.any() else _zero_fill(consistent)
    with _Stage("upscale", timings):
        full = upscale_flow(filled, cfg.scale, width, height)
    return consistent, filled, full


def _zero_fill(flow: FlowField) -> FlowField:
    # nothing survived the check: fall back to the raw solver output
    out = flow.copy()
    out.valid[:] = True
    return out


def estimate_flow(I1: Image, I2: Image, cfg: SolverConfig,
                  callback: Optional[Callable[[str, int, float, float], None]] = None) -> FlowResult:
    """Run the full method on one image pair."""
    timings: dict = {}
    mem = memory_estimate(I1.width, I1.height, cfg)
    _, _, (cf, wf), (cb, wb) = prepare(I1, I2, cfg, timings)

    def hook(direction):
        if callback is None:
            return None
        return lambda it, lb, dt: callback(direction, it, lb, dt)

    with _Stage("trws_forward", timings):
        fwd = optimise(cf, wf, cfg, hook("forward"))
    with _Stage("trws_backward", timings):
        bwd = optimise(cb, wb, cfg, hook("backward"))
    consistent, filled, full = finish(fwd.flow, bwd.flow, cfg, I1.width, I1.height, timings)
    return FlowResult(cfg, fwd, bwd, consistent, filled, full, timings, mem)
