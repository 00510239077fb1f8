"""Timing harness: message-update cost vs label count, thread scaling, backends.

Everything here returns plain lists of dict rows so the CLI can dump them as
CSV and tests can assert on them without parsing text.
"""
from __future__ import annotations

import csv
import time
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .costvolume import build_cost_volume, build_edge_weights, cost_row
from .model import Image, Penalty, SolverConfig
from .synthetic import texture, translated_pair
from .trws import TRWSSolver

# (label, kernel kind, penalty) triples timed by message_scaling
KERNELS = (
    ("l1", "l1", Penalty("l1")),
    ("l2", "l2", Penalty("l2")),
    ("smawk", "convex", Penalty("charbonnier")),
    ("brute", "brute", Penalty("l1")),
)
FAST = ("l1", "l2", "smawk")
INPUTS = ("texture", "uniform")


def _message_input(radius: int, kind: str, rng: np.random.Generator):
    """(theta_hat, incoming message) for one timed update.

    "texture" uses the NCC cost row of the centre pixel of a textured pair,
    i.e. what the solver sees; "uniform" is i.i.d. noise, the least
    predictable input for branchy kernels such as SMAWK.
    """
    n = 2 * radius + 1
    if kind == "uniform":
        return rng.uniform(0, 4, n * n), rng.uniform(0, 1, n * n)
    side = n + 2
    I1 = Image(texture(side, side, rng))
    I2 = Image(texture(side, side, rng))
    row = cost_row(I1, I2, (side // 2, side // 2), SolverConfig(radius=radius, scale=1))
    return 4.0 * row, np.zeros(n * n)


def _calibrate(run, min_time):
    # smallest power-of-two-ish batch whose wall time reaches min_time
    reps = 1
    while True:
        t = run(reps)
        if t >= min_time or reps >= 1 << 16:
            return reps
        reps *= 2 if t <= 0 else max(2, int(np.ceil(min_time / t)))


def message_scaling(radii: Sequence[int] = (10, 20, 40, 80), kernels_: Iterable[str] | None = None,
                    min_time: float = 0.05, rounds: int = 5, seed: int = 0,
                    backend=None, input_kind: str = "texture") -> list[dict]:
    """Seconds per full message update (phi, 2-D min-convolution, normalise).

    Timing rounds are interleaved across all sizes and the minimum is kept,
    so a burst of load from elsewhere cannot tilt the fitted exponent.
    """
    if input_kind not in INPUTS:
        raise ValueError(f"unknown input kind {input_kind!r}; expected one of {INPUTS}")
    backend = backend or kernels.backend
    wanted = set(kernels_) if kernels_ is not None else {k[0] for k in KERNELS}
    rng = np.random.default_rng(seed)
    jobs = []
    for r in radii:
        n = 2 * r + 1
        theta, back = _message_input(r, input_kind, rng)
        for name, kind, pen in KERNELS:
            if name not in wanted:
                continue
            tab = pen.table(n)

            def run(reps, theta=theta, back=back, n=n, tab=tab, kind=kind):
                return backend.time_message_updates(theta, back, n, tab, 1.0, np.inf, kind, reps)

            jobs.append({"kernel": name, "radius": r, "labels": n * n, "run": run,
                         "reps": _calibrate(run, min_time), "best": np.inf})
    for _ in range(max(1, rounds)):
        for j in jobs:
            j["best"] = min(j["best"], j["run"](j["reps"]) / j["reps"])
    return [{"kernel": j["kernel"], "input": input_kind, "radius": j["radius"], "labels": j["labels"],
             "seconds": j["best"]} for j in jobs]


def fitted_exponents(rows: list[dict]) -> dict:
    """Least-squares slope of log(seconds) against log(labels), per kernel."""
    out = {}
    for name in sorted({r["kernel"] for r in rows}):
        pts = [(r["labels"], r["seconds"]) for r in rows if r["kernel"] == name]
        if len(pts) < 2:
            continue
        m, t = np.log(np.array(pts, dtype=float)).T
        out[name] = float(np.polyfit(m, t, 1)[0])
    return out


def _instance(width: int, height: int, radius: int, seed: int = 0):
    cfg = SolverConfig(radius=radius, scale=1, iterations=1)
    I1, I2, _ = translated_pair(height, width, 3, -2, noise=0.02, seed=seed)
    return build_cost_volume(I1, I2, cfg), build_edge_weights(I1, cfg.beta), cfg


def thread_scaling(width: int = 64, height: int = 48, radius: int = 8,
                   threads: Sequence[int] | None = None, iterations: int = 2,
                   seed: int = 0) -> list[dict]:
    """Iteration wall time per thread count, with the deviation from the 1-thread run."""
    cost, weights, cfg = _instance(width, height, radius, seed)
    if threads is None:
        threads = sorted({1, 2, kernels.max_threads()})
    ref = None
    rows = []
    for t in threads:
        s = TRWSSolver(cost, weights, cfg, message_dtype=np.float64)
        t0 = time.perf_counter()
        s.run(iterations, threads=t)
        sec = (time.perf_counter() - t0) / iterations
        labels = s.decode_labels()
        if ref is None:
            ref = (sec, s.msgs.copy(), labels)
        rows.append({
            "threads": t,
            "seconds_per_iteration": sec,
            "speedup": ref[0] / sec,
            "max_message_diff": float(np.max(np.abs(s.msgs - ref[1]))),
            "labels_identical": bool(np.array_equal(labels, ref[2])),
        })
    return rows


def backend_comparison(width: int = 24, height: int = 16, radius: int = 4,
                       seed: int = 0) -> list[dict]:
    """One TRW-S iteration on each available backend; results must agree exactly."""
    cost, weights, cfg = _instance(width, height, radius, seed)
    rows = []
    ref = None
    for name in sorted(kernels.available()):  # compiled first, numpy last
        s = TRWSSolver(cost, weights, cfg, message_dtype=np.float64, backend=name)
        t0 = time.perf_counter()
        s.run(1, threads=1)
        sec = time.perf_counter() - t0
        if ref is None:
            ref = s.msgs.copy()
        rows.append({"backend": name, "seconds_per_iteration": sec,
                     "max_message_diff": float(np.max(np.abs(s.msgs - ref)))})
    base = rows[0]["seconds_per_iteration"]
    for r in rows:
        r["relative_time"] = r["seconds_per_iteration"] / base
    return rows


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
