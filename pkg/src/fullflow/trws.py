"""Sequential tree-reweighted message passing on the 4-connected pixel grid.

The grid is treated as the union of its row chains and column chains; every
pixel sits in exactly two chains, which fixes the unary split at 1/2. The
lower bound is the sum over chains of their exact minima under the current
reparameterisation, so it is a valid bound for any messages and never
decreases under the sweep schedule used here.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .costvolume import CostVolume, EdgeWeights, MemoryBudgetError
from .minconv import kernel_kind, minconv2d
from .model import FlowField, SolverConfig

FROM_LEFT, FROM_RIGHT, FROM_UP, FROM_DOWN = 0, 1, 2, 3

ProgressHook = Callable[[int, float, float], None]


def message_bytes(width: int, height: int, n_labels: int, dtype=np.float32) -> int:
    return 4 * width * height * n_labels * np.dtype(dtype).itemsize


@dataclass
class IterationRecord:
    iteration: int
    lower_bound: float
    seconds: float


@dataclass
class TRWSSolver:
    """Mutable solver state: messages, lower bound, iteration count.

    ``msgs[d, p]`` is the message into pixel ``p`` from its neighbour in
    direction ``d`` (left, right, up, down).
    """

    cost: CostVolume
    weights: EdgeWeights
    cfg: SolverConfig
    message_dtype: type = np.float32
    backend: Optional[str] = None
    msgs: np.ndarray = field(init=False)
    lower_bound: float = field(init=False)
    iteration: int = field(init=False, default=0)
    normalization_offset: float = field(init=False, default=0.0)
    history: list = field(init=False, default_factory=list)

    def __post_init__(self):
        h, w = self.cost.height, self.cost.width
        if self.weights.horizontal.shape != (h, max(w - 1, 0)) or self.weights.vertical.shape != (max(h - 1, 0), w):
            raise ValueError("edge weights do not match the cost volume grid")
        if self.cost.labels.radius != self.cfg.radius:
            raise ValueError("cost volume label space differs from the config radius")
        need = message_bytes(w, h, self.cost.labels.size, self.message_dtype)
        cap = int(self.cfg.memory_cap_gb * 2**30)
        if need > cap:
            raise MemoryBudgetError("message store", need, cap)
        self._k = kernels.get(self.backend)
        self.unary = np.ascontiguousarray(self.cost.values, dtype=np.float32)
        self.msgs = np.zeros((4, h * w, self.cost.labels.size), dtype=self.message_dtype)
        lam = self.cfg.lam
        self.wh = np.ascontiguousarray(lam * self.weights.horizontal, dtype=np.float64).reshape(h, max(w - 1, 0))
        self.wv = np.ascontiguousarray(lam * self.weights.vertical, dtype=np.float64).reshape(max(h - 1, 0), w)
        n = self.cost.labels.side
        self.rho_tab = self.cfg.penalty.table(n)
        self.kind = kernel_kind(self.cfg.penalty)
        if self.kind == "convex" and not self.cfg.penalty.is_convex(n):
            raise ValueError("penalty is not convex on the label range")
        self.offsets = np.zeros((h * w, 2))
        self.lower_bound = float(self.unary.astype(np.float64).min(axis=1).sum())

    @property
    def height(self) -> int:
        return self.cost.height

    @property
    def width(self) -> int:
        return self.cost.width

    def _pass(self, forward: bool, threads: int):
        self.offsets[:] = 0.0
        self._k.trws_pass(self.unary, self.msgs, self.height, self.width, self.wh, self.wv,
                          self.rho_tab, self.kind, float(self.cfg.tau), forward, int(threads),
                          self.offsets)
        self.normalization_offset += float(self.offsets.sum())

    def run_iteration(self, threads: int | None = None) -> float:
        """One forward sweep, one backward sweep, then a fresh lower bound."""
        threads = self.cfg.threads if threads is None else threads
        self._pass(True, threads)
        self._pass(False, threads)
        self.iteration += 1
        self.lower_bound = self.compute_lower_bound(threads)
        return self.lower_bound

    def run(self, iterations: int | None = None, callback: ProgressHook | None = None,
            threads: int | None = None) -> float:
        iterations = self.cfg.iterations if iterations is None else iterations
        for _ in range(iterations):
            t0 = time.perf_counter()
            lb = self.run_iteration(threads)
            dt = time.perf_counter() - t0
            self.history.append(IterationRecord(self.iteration, lb, dt))
            if callback is not None:
                callback(self.iteration, lb, dt)
        return self.lower_bound

    def compute_lower_bound(self, threads: int | None = None) -> float:
        threads = self.cfg.threads if threads is None else threads
        mins = self._k.chain_minima(self.unary, self.msgs, self.height, self.width, self.wh,
                                    self.wv, self.rho_tab, self.kind, float(self.cfg.tau),
                                    int(threads))
        return float(np.sum(mins))

    def decode_labels(self) -> np.ndarray:
        return self._k.decode_greedy(self.unary, self.msgs, self.height, self.width, self.wh,
                                     self.wv, self.rho_tab, float(self.cfg.tau))

    def decode(self) -> FlowField:
        return FlowField.from_labels(self.decode_labels(), self.cost.labels, self.height, self.width)

    # -- single-message access, mainly for inspection and tests

    def _neighbour(self, p: int, q: int):
        w = self.width
        py, px = divmod(p, w)
        qy, qx = divmod(q, w)
        if (qy, qx) == (py, px + 1):
            return FROM_RIGHT, FROM_LEFT, self.wh[py, px]
        if (qy, qx) == (py, px - 1):
            return FROM_LEFT, FROM_RIGHT, self.wh[py, qx]
        if (qy, qx) == (py + 1, px):
            return FROM_DOWN, FROM_UP, self.wv[py, px]
        if (qy, qx) == (py - 1, px):
            return FROM_UP, FROM_DOWN, self.wv[qy, px]
        raise ValueError(f"pixels {p} and {q} are not 4-neighbours")

    def theta_hat(self, p: int) -> np.ndarray:
        m = self.msgs[:, p].astype(np.float64)
        return self.unary[p].astype(np.float64) + m[0] + m[1] + m[2] + m[3]

    def update_message(self, p: int, q: int) -> np.ndarray:
        """Recompute, normalise and store m_{p->q}; returns the stored message."""
        back, slot, w = self._neighbour(p, q)
        phi = 0.5 * self.theta_hat(p) - self.msgs[back, p].astype(np.float64)
        m = minconv2d(phi, self.cost.labels, self.cfg.penalty, w, self.cfg.tau, kind=self.kind)
        lo = float(m.min())
        self.msgs[slot, q] = m - lo
        self.normalization_offset += lo
        return self.msgs[slot, q].astype(np.float64)

    def message(self, p: int, q: int) -> np.ndarray:
        """Current m_{p->q}."""
        _, slot, _ = self._neighbour(p, q)
        return self.msgs[slot, q].astype(np.float64)

    def reparameterized(self):
        """Materialise reparameterised unaries (N, M) and pairwise tables per edge.

        Returns (unaries, edges) where edges maps (p, q) to an (M, M) array
        indexed [l_p, l_q]. Only sensible for tiny grids.
        """
        h, w = self.height, self.width
        labels = self.cost.labels
        dx, dy = labels.offsets()
        msgs = self.msgs.astype(np.float64)
        un = self.unary.astype(np.float64) + msgs.sum(axis=0)
        pen = self.cfg.penalty
        base = pen(dx[:, None] - dx[None, :]) + pen(dy[:, None] - dy[None, :])
        base = np.minimum(base, self.cfg.tau)
        edges = {}
        for y in range(h):
            for x in range(w):
                p = y * w + x
                for q in ((p + 1) if x + 1 < w else None, (p + w) if y + 1 < h else None):
                    if q is None:
                        continue
                    back, slot, wt = self._neighbour(p, q)
                    edges[(p, q)] = wt * base - msgs[back, p][:, None] - msgs[slot, q][None, :]
        return un, edges


def energy(flow: FlowField, cost: CostVolume, weights: EdgeWeights, cfg: SolverConfig) -> float:
    """Unary costs of the labelling plus lam * sum of w_pq * min(rho(du)+rho(dv), tau)."""
    labels = flow.to_labels(cost.labels)
    h, w = flow.shape
    un = cost.values[np.arange(h * w), labels].astype(np.float64).sum()
    u = np.rint(flow.u)
    v = np.rint(flow.v)
    pen = cfg.penalty

    def pair(du, dv):
        return np.minimum(pen(du) + pen(dv), cfg.tau) if cfg.truncated else pen(du) + pen(dv)

    reg = 0.0
    if w > 1:
        reg += float(np.sum(weights.horizontal * pair(u[:, 1:] - u[:, :-1], v[:, 1:] - v[:, :-1])))
    if h > 1:
        reg += float(np.sum(weights.vertical * pair(u[1:] - u[:-1], v[1:] - v[:-1])))
    return float(un + cfg.lam * reg)


def solve(cost: CostVolume, weights: EdgeWeights, cfg: SolverConfig,
          callback: ProgressHook | None = None, **kw) -> tuple[FlowField, TRWSSolver]:
    solver = TRWSSolver(cost, weights, cfg, **kw)
    solver.run(cfg.iterations, callback)
    return solver.decode(), solver


__all__ = ["TRWSSolver", "energy", "solve", "message_bytes", "IterationRecord"]
