"""Pure-Python/numpy versions of the compiled kernels in ``_core.pyx``.

Same call signatures and array conventions. The 1-D kernels are the
textbook scalar algorithms; inside the solver sweeps, the 2-D min-convolution
is vectorised over whole rows instead (two-pass distance transform for L1,
broadcast minimum otherwise), which is far faster in numpy even though the
broadcast path is cubic in the label-space side.
"""
import time

import numpy as np

SENTINEL = 1e30
INF_THRESH = 1e29

FROM_LEFT, FROM_RIGHT, FROM_UP, FROM_DOWN = 0, 1, 2, 3


def _clamp(h):
    h[h >= INF_THRESH] = SENTINEL
    return h


def _brute_1d(g, rho_tab, w):
    n = len(g)
    idx = np.arange(n)
    pen = rho_tab[(idx[:, None] - idx[None, :]) + n - 1]
    cand = np.where(g[None, :] >= INF_THRESH, SENTINEL, g[None, :] + w * pen)
    return _clamp(cand.min(axis=1))


def dt_l1(g, slope):
    g = np.asarray(g, dtype=np.float64)
    n = len(g)
    h = g.copy()
    for i in range(1, n):
        c = h[i - 1] + slope
        if c < h[i]:
            h[i] = c
    for i in range(n - 2, -1, -1):
        c = h[i + 1] + slope
        if c < h[i]:
            h[i] = c
    return _clamp(h)


def dt_quadratic(g, weight):
    g = np.asarray(g, dtype=np.float64)
    n = len(g)
    v, z = [], []
    for q in range(n):
        gq = g[q]
        if gq >= INF_THRESH:
            continue
        if not v:
            v.append(q)
            z[:] = [-np.inf, np.inf]
            continue
        while True:
            vk = v[-1]
            s = ((gq + weight * q * q) - (g[vk] + weight * vk * vk)) / (2.0 * weight * (q - vk))
            if s <= z[len(v) - 1]:
                v.pop()
                z.pop()
            else:
                break
        v.append(q)
        z[-1] = s
        z.append(np.inf)
    h = np.empty(n)
    if not v:
        h[:] = SENTINEL
        return h
    k = 0
    for t in range(n):
        while z[k + 1] < t:
            k += 1
        vk = v[k]
        h[t] = g[vk] + weight * float((t - vk) * (t - vk))
    return h


def smawk_minconv(g, rho_tab, weight):
    """Row minima of A(i, j) = g[j] + weight*rho(i-j); returns (h, ind, evaluations)."""
    g = np.asarray(g, dtype=np.float64)
    rho_tab = np.asarray(rho_tab, dtype=np.float64)
    n = len(g)
    if len(rho_tab) != 2 * n - 1:
        raise ValueError("rho table must cover offsets -(n-1)..n-1")
    gl = g.tolist()
    rl = rho_tab.tolist()
    count = 0
    ind = [0] * n
    val = [0.0] * n

    def entry(i, j):
        nonlocal count
        count += 1
        if gl[j] >= INF_THRESH:
            return SENTINEL
        return gl[j] + weight * rl[i - j + n - 1]

    def rec(level, cols):
        step = 1 << level
        start = step - 1
        if start >= n:
            return
        nrows = (n - start + step - 1) // step
        if len(cols) > nrows:
            stack, topval = [], []
            for col in cols:
                while stack:
                    row = start + (len(stack) - 1) * step
                    if topval[-1] is None:
                        topval[-1] = entry(row, stack[-1])
                    if topval[-1] > entry(row, col):
                        stack.pop()
                        topval.pop()
                    else:
                        break
                if len(stack) < nrows:
                    stack.append(col)
                    topval.append(None)
            cols = stack
        rec(level + 1, cols)
        k = 0
        for r in range(0, nrows, 2):
            row = start + r * step
            stop = ind[row + step] if r + 1 < nrows else cols[-1]
            best = cols[k]
            bestval = entry(row, best)
            while cols[k] < stop:
                k += 1
                vc = entry(row, cols[k])
                if vc < bestval:
                    bestval, best = vc, cols[k]
            ind[row] = best
            val[row] = SENTINEL if bestval >= INF_THRESH else bestval

    rec(0, list(range(n)))
    return np.array(val), np.array(ind, dtype=np.intp), count


def minconv_1d(g, rho_tab, weight, kind):
    g = np.asarray(g, dtype=np.float64)
    if kind == "l1":
        return dt_l1(g, weight * _unit_step(rho_tab))
    if kind == "l2":
        return dt_quadratic(g, weight)
    if kind == "convex":
        return smawk_minconv(g, rho_tab, weight)[0]
    return _brute_1d(g, np.asarray(rho_tab, float), weight)


def _unit_step(rho_tab):
    # rho(1) for the L1 distance transform; irrelevant (and absent) when n == 1
    return rho_tab[len(rho_tab) // 2 + 1] if len(rho_tab) > 1 else 1.0


def _finish(out, lo, weight, tau):
    if np.isfinite(tau):
        np.minimum(out, lo + weight * tau, out=out)
    return _clamp(out)


def minconv2d(phi, n, rho_tab, weight, tau, kind):
    """Separable 2-D min-convolution with truncation (tau = inf disables it)."""
    phi = np.asarray(phi, dtype=np.float64)
    rho_tab = np.asarray(rho_tab, dtype=np.float64)
    if phi.shape != (n * n,) or rho_tab.shape != (2 * n - 1,):
        raise ValueError("shape mismatch")
    lo = min(phi.min(), SENTINEL)
    if weight <= 0:
        return np.full(n * n, lo)
    if kind == "brute":
        return _minconv2d_brute(phi, n, rho_tab, weight, tau)
    grid = phi.reshape(n, n)
    d1 = np.array([minconv_1d(row, rho_tab, weight, kind) for row in grid])
    out = np.array([minconv_1d(col, rho_tab, weight, kind) for col in d1.T]).T
    return _finish(out.ravel().copy(), lo, weight, tau)


def _minconv2d_brute(phi, n, rho_tab, weight, tau):
    idx = np.arange(n)
    d = rho_tab[(idx[:, None] - idx[None, :]) + n - 1]  # [t, s]
    pen = d[None, :, None, :] + d[:, None, :, None]  # [t2, t1, s2, s1]
    if np.isfinite(tau):
        pen = np.minimum(pen, tau)
    grid = phi.reshape(n, n)
    src = np.where(grid >= INF_THRESH, SENTINEL, grid)
    cand = src[None, None, :, :] + weight * pen
    cand = np.where(grid[None, None] >= INF_THRESH, SENTINEL, cand)
    return _clamp(cand.reshape(n, n, -1).min(axis=2).ravel())


def _axis_l1(grid, slope, axis):
    h = np.moveaxis(grid, axis, 0).copy()
    for i in range(1, h.shape[0]):
        np.minimum(h[i], h[i - 1] + slope, out=h[i])
    for i in range(h.shape[0] - 2, -1, -1):
        np.minimum(h[i], h[i + 1] + slope, out=h[i])
    return np.moveaxis(h, 0, axis)


def _axis_broadcast(grid, pen, weight, axis):
    # pen[t, s]; minimise over s along ``axis``
    if axis == 1:
        return (grid[:, None, :] + weight * pen[None, :, :]).min(axis=2)
    return (grid.T[:, None, :] + weight * pen[None, :, :]).min(axis=2).T


def _fast_minconv2d(phi, n, kind, rho_tab, pen, weight, tau):
    lo = phi.min()
    if weight <= 0:
        return np.full(n * n, lo)
    grid = phi.reshape(n, n)
    if kind == "l1":
        slope = weight * _unit_step(rho_tab)
        out = _axis_l1(_axis_l1(grid, slope, 1), slope, 0)
    else:
        out = _axis_broadcast(_axis_broadcast(grid, pen, weight, 1), pen, weight, 0)
    return _finish(np.ascontiguousarray(out).ravel(), lo, weight, tau)


def _pen_matrix(rho_tab, n):
    idx = np.arange(n)
    return np.asarray(rho_tab)[(idx[:, None] - idx[None, :]) + n - 1]


def time_message_updates(theta_hat, m_back, n, rho_tab, weight, tau, kind, reps):
    rho_tab = np.asarray(rho_tab, dtype=np.float64)
    pen = _pen_matrix(rho_tab, n)
    t0 = time.perf_counter()
    for _ in range(reps):
        phi = 0.5 * theta_hat - m_back
        if kind == "brute":
            out = _minconv2d_brute(phi, n, rho_tab, weight, tau)
        else:
            out = _fast_minconv2d(phi, n, kind, rho_tab, pen, weight, tau)
        out -= out.min()
    return time.perf_counter() - t0


def _theta_hat(unary, msgs, p):
    return (unary[p].astype(np.float64) + msgs[0, p] + msgs[1, p]) + msgs[2, p] + msgs[3, p]


def trws_pass(unary, msgs, H, W, wh, wv, rho_tab, kind, tau, forward, threads, offsets):
    """One directional sweep in raster (or reverse raster) order; ``threads`` is ignored."""
    N = H * W
    M = unary.shape[1]
    n = len(rho_tab) // 2 + 1
    rho_tab = np.asarray(rho_tab, dtype=np.float64)
    pen = _pen_matrix(rho_tab, n)
    order = range(N) if forward else range(N - 1, -1, -1)
    for p in order:
        y, x = divmod(p, W)
        th = _theta_hat(unary, msgs, p)
        if forward:
            sends = []
            if x + 1 < W:
                sends.append((FROM_RIGHT, FROM_LEFT, p + 1, wh[y, x], 0))
            if y + 1 < H:
                sends.append((FROM_DOWN, FROM_UP, p + W, wv[y, x], 1))
        else:
            sends = []
            if x > 0:
                sends.append((FROM_LEFT, FROM_RIGHT, p - 1, wh[y, x - 1], 0))
            if y > 0:
                sends.append((FROM_UP, FROM_DOWN, p - W, wv[y - 1, x], 1))
        for back, slot, q, w, k in sends:
            phi = 0.5 * th - msgs[back, p]
            out = _fast_minconv2d(phi, n, kind, rho_tab, pen, w, tau)
            lo = out.min()
            msgs[slot, q] = out - lo
            offsets[p, k] = lo
    assert msgs.shape[2] == M


def chain_minima(unary, msgs, H, W, wh, wv, rho_tab, kind, tau, threads):
    n = len(rho_tab) // 2 + 1
    rho_tab = np.asarray(rho_tab, dtype=np.float64)
    pen = _pen_matrix(rho_tab, n)
    th = ((unary.astype(np.float64) + msgs[0]) + msgs[1] + msgs[2]) + msgs[3]
    res = np.empty(H + W)

    def run(nodes, weights, back, fwd):
        V = 0.5 * th[nodes[0]]
        for e in range(1, len(nodes)):
            p, q = nodes[e - 1], nodes[e]
            conv = _fast_minconv2d(V - msgs[back, p], n, kind, rho_tab, pen, weights[e - 1], tau)
            V = conv - msgs[fwd, q] + 0.5 * th[q]
        return V.min()

    for y in range(H):
        res[y] = run([y * W + x for x in range(W)], wh[y] if W > 1 else [], FROM_RIGHT, FROM_LEFT)
    for x in range(W):
        res[H + x] = run([y * W + x for y in range(H)], wv[:, x] if H > 1 else [], FROM_DOWN, FROM_UP)
    return res


def decode_greedy(unary, msgs, H, W, wh, wv, rho_tab, tau):
    n = len(rho_tab) // 2 + 1
    M = unary.shape[1]
    rho_tab = np.asarray(rho_tab, dtype=np.float64)
    s = np.arange(M)
    s1, s2 = s % n, s // n
    labels = np.empty(H * W, dtype=np.intp)

    def pair(l, w):
        pen = rho_tab[s1 - l % n + n - 1] + rho_tab[s2 - l // n + n - 1]
        if np.isfinite(tau):
            pen = np.minimum(pen, tau)
        return w * pen

    for p in range(H * W):
        y, x = divmod(p, W)
        v = unary[p].astype(np.float64) + msgs[FROM_RIGHT, p] + msgs[FROM_DOWN, p]
        if x > 0:
            v = v + pair(labels[p - 1], wh[y, x - 1])
        if y > 0:
            v = v + pair(labels[p - W], wv[y - 1, x])
        labels[p] = int(np.argmin(v))
    return labels


def max_threads():
    return 1
