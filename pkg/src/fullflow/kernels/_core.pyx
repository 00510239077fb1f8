# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled message-passing kernels.

Layout conventions shared with ``_fallback.py``:

* a message / potential over the label space is a flat vector of length
  ``n*n`` indexed ``s2*n + s1`` (s1 = x offset, fastest);
* ``msgs[d, p, :]`` is the message *into* pixel ``p`` from its neighbour in
  direction ``d`` (0 left, 1 right, 2 up, 3 down); slots whose neighbour
  lies outside the grid stay zero;
* ``rho`` is the penalty table for offsets ``-(n-1) .. n-1``;
* edge weights ``wh[y, x]`` (edge (x, x+1)) and ``wv[y, x]`` (edge (y, y+1))
  already include the regularization weight lambda.
"""
import time

import numpy as np
cimport numpy as cnp
cimport openmp
from cython.parallel cimport prange
from libc.math cimport INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef fused msg_t:
    float
    double

cdef double SENTINEL = 1e30
cdef double INF_THRESH = 1e29

cdef enum:
    KIND_L1 = 0
    KIND_L2 = 1
    KIND_CONVEX = 2
    KIND_BRUTE = 3

cdef enum:
    FROM_LEFT = 0
    FROM_RIGHT = 1
    FROM_UP = 2
    FROM_DOWN = 3

KINDS = {"l1": KIND_L1, "l2": KIND_L2, "convex": KIND_CONVEX, "brute": KIND_BRUTE}


cdef inline double _clamp_inf(double v) noexcept nogil:
    return SENTINEL if v >= INF_THRESH else v


# ---------------------------------------------------------------- 1-D kernels

cdef void _brute_1d(const double* g, double* h, Py_ssize_t n, const double* rho,
                    double w) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double best, v
    for i in range(n):
        best = SENTINEL
        for j in range(n):
            if g[j] >= INF_THRESH:
                continue
            v = g[j] + w * rho[i - j]
            if v < best:
                best = v
        h[i] = _clamp_inf(best)


cdef void _dt_l1(const double* g, double* h, Py_ssize_t n, double slope) noexcept nogil:
    cdef Py_ssize_t i
    cdef double c
    h[0] = g[0]
    for i in range(1, n):
        c = h[i - 1] + slope
        h[i] = c if c < g[i] else g[i]
    for i in range(n - 2, -1, -1):
        c = h[i + 1] + slope
        if c < h[i]:
            h[i] = c
    for i in range(n):
        h[i] = _clamp_inf(h[i])


cdef void _dt_quadratic(const double* g, double* h, Py_ssize_t n, double w,
                        Py_ssize_t* v, double* z) noexcept nogil:
    # lower envelope of parabolas; entries at the sentinel never enter it
    cdef Py_ssize_t q, k = -1, t, vk
    cdef double s
    for q in range(n):
        if g[q] >= INF_THRESH:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        while True:
            vk = v[k]
            s = ((g[q] + w * q * q) - (g[vk] + w * vk * vk)) / (2.0 * w * (q - vk))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for t in range(n):
            h[t] = SENTINEL
        return
    k = 0
    for t in range(n):
        while z[k + 1] < t:
            k += 1
        vk = v[k]
        h[t] = g[vk] + w * <double>((t - vk) * (t - vk))


cdef struct Smawk:
    const double* g
    const double* rho
    double w
    Py_ssize_t n
    long count
    double* topval
    char* topset
    Py_ssize_t* ind
    double* val


cdef inline double _entry(Smawk* c, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    c.count += 1
    if c.g[j] >= INF_THRESH:
        return SENTINEL
    return c.g[j] + c.w * c.rho[i - j]


cdef void _smawk_rec(Smawk* c, int level, Py_ssize_t* cols, Py_ssize_t ncols,
                     Py_ssize_t* spare) noexcept nogil:
    cdef Py_ssize_t step = (<Py_ssize_t>1) << level
    cdef Py_ssize_t start = step - 1
    cdef Py_ssize_t nrows, top, col, k, r, row, stop_col, best
    cdef double vc, bestval
    if start >= c.n:
        return
    nrows = (c.n - start + step - 1) // step

    if ncols > nrows:
        # REDUCE: keep at most nrows columns that can hold a leftmost row minimum
        top = -1
        for k in range(ncols):
            col = cols[k]
            while top >= 0:
                row = start + top * step
                if not c.topset[top]:
                    c.topval[top] = _entry(c, row, spare[top])
                    c.topset[top] = 1
                vc = _entry(c, row, col)
                if c.topval[top] > vc:
                    top -= 1
                else:
                    break
            if top + 1 < nrows:
                top += 1
                spare[top] = col
                c.topset[top] = 0
        cols = spare
        ncols = top + 1
        spare = spare + ncols

    _smawk_rec(c, level + 1, cols, ncols, spare)

    # fill rows skipped by the recursion between their neighbours' minima
    k = 0
    for r in range(0, nrows, 2):
        row = start + r * step
        if r + 1 < nrows:
            stop_col = c.ind[row + step]
        else:
            stop_col = cols[ncols - 1]
        best = cols[k]
        bestval = _entry(c, row, best)
        while cols[k] < stop_col:
            k += 1
            vc = _entry(c, row, cols[k])
            if vc < bestval:
                bestval = vc
                best = cols[k]
        c.ind[row] = best
        c.val[row] = _clamp_inf(bestval)


cdef long _smawk_1d(const double* g, double* h, Py_ssize_t* ind, Py_ssize_t n,
                    const double* rho, double w, Py_ssize_t* iwork, double* dwork) noexcept nogil:
    # iwork: >= 4n + 4 ints, dwork: >= 2n doubles
    cdef Smawk c
    cdef Py_ssize_t j
    c.g = g
    c.rho = rho
    c.w = w
    c.n = n
    c.count = 0
    c.topval = dwork
    c.topset = <char*>(dwork + n)
    c.ind = ind
    c.val = h
    for j in range(n):
        iwork[j] = j
    _smawk_rec(&c, 0, iwork, n, iwork + n)
    return c.count


cdef void _minconv1d(int kind, const double* g, double* h, Py_ssize_t n, const double* rho,
                     double w, Py_ssize_t* iwork, double* dwork) noexcept nogil:
    if kind == KIND_L1:
        _dt_l1(g, h, n, w * rho[1])
    elif kind == KIND_L2:
        _dt_quadratic(g, h, n, w, iwork, dwork)
    elif kind == KIND_CONVEX:
        _smawk_1d(g, h, iwork + 4 * n + 4, n, rho, w, iwork, dwork)
    else:
        _brute_1d(g, h, n, rho, w)


# ---------------------------------------------------------------- 2-D kernel

cdef Py_ssize_t _iwork_size(Py_ssize_t n) noexcept nogil:
    return 5 * n + 8


cdef Py_ssize_t _dwork_size(Py_ssize_t n) noexcept nogil:
    # D1 and its transpose (2 n*n) + kernel scratch (2n + 2), with slack
    return 2 * n * n + 4 * n + 4


cdef Py_ssize_t TBLOCK = 16


cdef void _transpose(const double* a, double* b, Py_ssize_t n) noexcept nogil:
    # b = a^T for n x n row-major arrays, in cache-sized tiles
    cdef Py_ssize_t i0 = 0, j0, i, j, ie, je
    while i0 < n:
        ie = i0 + TBLOCK if i0 + TBLOCK < n else n
        j0 = 0
        while j0 < n:
            je = j0 + TBLOCK if j0 + TBLOCK < n else n
            for i in range(i0, ie):
                for j in range(j0, je):
                    b[j * n + i] = a[i * n + j]
            j0 += TBLOCK
        i0 += TBLOCK


cdef void _minconv2d(const double* phi, double* out, Py_ssize_t n, int kind, const double* rho,
                     double w, double tau, bint truncate, Py_ssize_t* iwork,
                     double* dwork) noexcept nogil:
    cdef Py_ssize_t M = n * n, s2, t1, t2, i
    cdef double* d1 = dwork
    cdef double* d2 = dwork + M
    cdef double* kwork = d2 + M
    cdef double lo = SENTINEL, trunc
    for i in range(M):
        if phi[i] < lo:
            lo = phi[i]
    if w <= 0.0:
        for i in range(M):
            out[i] = lo
        return
    # inner minimisation over s1 for each s2 (contiguous rows)
    for s2 in range(n):
        _minconv1d(kind, phi + s2 * n, d1 + s2 * n, n, rho, w, iwork, kwork)
    # outer minimisation over s2: transpose so columns become contiguous rows
    _transpose(d1, d2, n)
    for t1 in range(n):
        _minconv1d(kind, d2 + t1 * n, d1 + t1 * n, n, rho, w, iwork, kwork)
    _transpose(d1, out, n)
    if truncate:
        trunc = lo + w * tau
        for i in range(M):
            if out[i] > trunc:
                out[i] = trunc
    for i in range(M):
        out[i] = _clamp_inf(out[i])


cdef void _minconv2d_brute(const double* phi, double* out, Py_ssize_t n, const double* rho,
                           double w, double tau, bint truncate) noexcept nogil:
    cdef Py_ssize_t t1, t2, s1, s2
    cdef double best, v, pen
    for t2 in range(n):
        for t1 in range(n):
            best = SENTINEL
            for s2 in range(n):
                for s1 in range(n):
                    pen = rho[t1 - s1] + rho[t2 - s2]
                    if truncate and pen > tau:
                        pen = tau
                    v = phi[s2 * n + s1] + w * pen
                    if v < best:
                        best = v
            out[t2 * n + t1] = _clamp_inf(best)


# ---------------------------------------------------------------- python API: 1-D / 2-D

def dt_l1(double[::1] g, double slope):
    cdef Py_ssize_t n = g.shape[0]
    h = np.empty(n)
    cdef double[::1] hv = h
    with nogil:
        _dt_l1(&g[0], &hv[0], n, slope)
    return h


def dt_quadratic(double[::1] g, double weight):
    cdef Py_ssize_t n = g.shape[0]
    h = np.empty(n)
    cdef double[::1] hv = h
    cdef Py_ssize_t* v = <Py_ssize_t*>malloc((n + 1) * sizeof(Py_ssize_t))
    cdef double* z = <double*>malloc((n + 2) * sizeof(double))
    with nogil:
        _dt_quadratic(&g[0], &hv[0], n, weight, v, z)
    free(v)
    free(z)
    return h


def smawk_minconv(double[::1] g, double[::1] rho_tab, double weight):
    """Row minima of A(i, j) = g[j] + weight*rho(i-j); returns (h, ind, evaluations)."""
    cdef Py_ssize_t n = g.shape[0]
    if rho_tab.shape[0] != 2 * n - 1:
        raise ValueError("rho table must cover offsets -(n-1)..n-1")
    h = np.empty(n)
    ind = np.empty(n, dtype=np.intp)
    cdef double[::1] hv = h
    cdef Py_ssize_t[::1] iv = ind
    cdef Py_ssize_t* iwork = <Py_ssize_t*>malloc((4 * n + 4) * sizeof(Py_ssize_t))
    cdef double* dwork = <double*>malloc((2 * n + 2) * sizeof(double))
    cdef long count
    with nogil:
        count = _smawk_1d(&g[0], &hv[0], &iv[0], n, &rho_tab[n - 1], weight, iwork, dwork)
    free(iwork)
    free(dwork)
    return h, ind, count


def minconv_1d(double[::1] g, double[::1] rho_tab, double weight, str kind):
    cdef Py_ssize_t n = g.shape[0]
    cdef int k = KINDS[kind]
    h = np.empty(n)
    cdef double[::1] hv = h
    iw = np.empty(_iwork_size(n), dtype=np.intp)
    dw = np.empty(_dwork_size(n))
    cdef Py_ssize_t[::1] iwv = iw
    cdef double[::1] dwv = dw
    with nogil:
        _minconv1d(k, &g[0], &hv[0], n, &rho_tab[n - 1], weight, &iwv[0], &dwv[0])
    return h


def minconv2d(double[::1] phi, Py_ssize_t n, double[::1] rho_tab, double weight, double tau,
              str kind):
    """Separable 2-D min-convolution with truncation (tau = inf disables it)."""
    if phi.shape[0] != n * n or rho_tab.shape[0] != 2 * n - 1:
        raise ValueError("shape mismatch")
    cdef int k = KINDS[kind]
    cdef bint truncate = tau < INFINITY
    out = np.empty(n * n)
    cdef double[::1] ov = out
    iw = np.empty(_iwork_size(n), dtype=np.intp)
    dw = np.empty(_dwork_size(n))
    cdef Py_ssize_t[::1] iwv = iw
    cdef double[::1] dwv = dw
    with nogil:
        if k == KIND_BRUTE:
            _minconv2d_brute(&phi[0], &ov[0], n, &rho_tab[n - 1], weight, tau, truncate)
        else:
            _minconv2d(&phi[0], &ov[0], n, k, &rho_tab[n - 1], weight, tau, truncate,
                       &iwv[0], &dwv[0])
    return out


def time_message_updates(double[::1] theta_hat, double[::1] m_back, Py_ssize_t n,
                         double[::1] rho_tab, double weight, double tau, str kind, int reps):
    """Wall time of ``reps`` full message updates (phi, min-convolution, normalisation)."""
    cdef int k = KINDS[kind]
    cdef bint truncate = tau < INFINITY
    cdef Py_ssize_t M = n * n, i
    cdef int r
    cdef double lo
    phi_a = np.empty(M)
    out_a = np.empty(M)
    cdef double[::1] phi = phi_a
    cdef double[::1] out = out_a
    iw = np.empty(_iwork_size(n), dtype=np.intp)
    dw = np.empty(_dwork_size(n))
    cdef Py_ssize_t[::1] iwv = iw
    cdef double[::1] dwv = dw
    t0 = time.perf_counter()
    with nogil:
        for r in range(reps):
            for i in range(M):
                phi[i] = 0.5 * theta_hat[i] - m_back[i]
            if k == KIND_BRUTE:
                _minconv2d_brute(&phi[0], &out[0], n, &rho_tab[n - 1], weight, tau, truncate)
            else:
                _minconv2d(&phi[0], &out[0], n, k, &rho_tab[n - 1], weight, tau, truncate,
                           &iwv[0], &dwv[0])
            lo = out[0]
            for i in range(M):
                if out[i] < lo:
                    lo = out[i]
            for i in range(M):
                out[i] = out[i] - lo
    return time.perf_counter() - t0


# ---------------------------------------------------------------- TRW-S sweeps

cdef void _send(const double* theta_hat, const msg_t* m_back, msg_t* dest, double* offset,
                Py_ssize_t n, int kind, const double* rho, double w, double tau, bint truncate,
                double* phi, double* out, Py_ssize_t* iwork, double* dwork) noexcept nogil:
    cdef Py_ssize_t M = n * n, i
    cdef double lo
    for i in range(M):
        phi[i] = 0.5 * theta_hat[i] - <double>m_back[i]
    _minconv2d(phi, out, n, kind, rho, w, tau, truncate, iwork, dwork)
    lo = out[0]
    for i in range(1, M):
        if out[i] < lo:
            lo = out[i]
    for i in range(M):
        dest[i] = <msg_t>(out[i] - lo)
    offset[0] = lo


cdef void _process_pixel(const float* unary, msg_t* msgs, Py_ssize_t N, Py_ssize_t H,
                         Py_ssize_t W, Py_ssize_t y, Py_ssize_t x, bint forward,
                         const double* wh, const double* wv, Py_ssize_t n, int kind,
                         const double* rho, double tau, bint truncate, double* offsets,
                         double* buf, Py_ssize_t* iwork) noexcept nogil:
    cdef Py_ssize_t M = n * n, i
    cdef Py_ssize_t p = y * W + x
    cdef Py_ssize_t NM = N * M
    cdef double* theta_hat = buf
    cdef double* phi = buf + M
    cdef double* out = buf + 2 * M
    cdef double* dwork = buf + 3 * M
    cdef const float* th = unary + p * M
    cdef msg_t* mL = msgs + FROM_LEFT * NM + p * M
    cdef msg_t* mR = msgs + FROM_RIGHT * NM + p * M
    cdef msg_t* mU = msgs + FROM_UP * NM + p * M
    cdef msg_t* mD = msgs + FROM_DOWN * NM + p * M
    for i in range(M):
        theta_hat[i] = <double>th[i] + <double>mL[i] + <double>mR[i] + <double>mU[i] + <double>mD[i]
    if forward:
        if x + 1 < W:
            _send(theta_hat, mR, msgs + FROM_LEFT * NM + (p + 1) * M, offsets + 2 * p,
                  n, kind, rho, wh[y * (W - 1) + x], tau, truncate, phi, out, iwork, dwork)
        if y + 1 < H:
            _send(theta_hat, mD, msgs + FROM_UP * NM + (p + W) * M, offsets + 2 * p + 1,
                  n, kind, rho, wv[y * W + x], tau, truncate, phi, out, iwork, dwork)
    else:
        if x > 0:
            _send(theta_hat, mL, msgs + FROM_RIGHT * NM + (p - 1) * M, offsets + 2 * p,
                  n, kind, rho, wh[y * (W - 1) + x - 1], tau, truncate, phi, out, iwork, dwork)
        if y > 0:
            _send(theta_hat, mU, msgs + FROM_DOWN * NM + (p - W) * M, offsets + 2 * p + 1,
                  n, kind, rho, wv[(y - 1) * W + x], tau, truncate, phi, out, iwork, dwork)


def trws_pass(const float[:, ::1] unary, msg_t[:, :, ::1] msgs, Py_ssize_t H, Py_ssize_t W,
              const double[:, ::1] wh, const double[:, ::1] wv, double[::1] rho_tab,
              str kind, double tau, bint forward, int threads, double[:, ::1] offsets):
    """One directional TRW-S sweep over anti-diagonal wavefronts.

    Pixels on one anti-diagonal read only their own message slots and write
    only into slots of the next diagonal, so they are updated concurrently;
    the result equals a raster-order sweep for any thread count.
    """
    cdef Py_ssize_t N = H * W
    cdef Py_ssize_t M = unary.shape[1]
    cdef Py_ssize_t n = rho_tab.shape[0] // 2 + 1
    cdef int k = KINDS[kind]
    cdef bint truncate = tau < INFINITY
    cdef Py_ssize_t ndiag = H + W - 1, d, dd, y, y0, y1
    cdef int tid
    if unary.shape[0] != N or msgs.shape[0] != 4 or msgs.shape[1] != N or msgs.shape[2] != M:
        raise ValueError("array shape mismatch")
    if n * n != M:
        raise ValueError("rho table does not match the label count")
    if threads < 1:
        threads = 1
    cdef Py_ssize_t bsz = 3 * M + _dwork_size(n)
    cdef Py_ssize_t isz = _iwork_size(n)
    bufs = np.empty((threads, bsz))
    ibufs = np.empty((threads, isz), dtype=np.intp)
    cdef double[:, ::1] bv = bufs
    cdef Py_ssize_t[:, ::1] ibv = ibufs
    # empty edge arrays have no valid address; hand the kernel a dummy
    dummy = np.zeros(1)
    cdef const double[::1] dv = dummy
    cdef const double* whp = &wh[0, 0] if wh.shape[0] * wh.shape[1] > 0 else &dv[0]
    cdef const double* wvp = &wv[0, 0] if wv.shape[0] * wv.shape[1] > 0 else &dv[0]
    cdef const float* up = &unary[0, 0]
    cdef msg_t* mp = &msgs[0, 0, 0]
    cdef double* op = &offsets[0, 0]
    cdef const double* rp = &rho_tab[n - 1]
    with nogil:
        for dd in range(ndiag):
            d = dd if forward else ndiag - 1 - dd
            y0 = d - W + 1 if d - W + 1 > 0 else 0
            y1 = d if d < H - 1 else H - 1
            if threads == 1 or y1 - y0 < 1:
                for y in range(y0, y1 + 1):
                    _process_pixel(up, mp, N, H, W, y, d - y, forward, whp, wvp, n, k, rp,
                                   tau, truncate, op, &bv[0, 0], &ibv[0, 0])
            else:
                for y in prange(y0, y1 + 1, num_threads=threads, schedule="static"):
                    tid = openmp.omp_get_thread_num()
                    _process_pixel(up, mp, N, H, W, y, d - y, forward, whp, wvp, n, k, rp,
                                   tau, truncate, op, &bv[tid, 0], &ibv[tid, 0])


cdef double _chain_min(const float* unary, msg_t* msgs, Py_ssize_t N, Py_ssize_t M, Py_ssize_t n,
                       Py_ssize_t first, Py_ssize_t stride, Py_ssize_t length,
                       const double* weights, Py_ssize_t wstride, int dir_back, int dir_fwd,
                       int kind, const double* rho, double tau, bint truncate,
                       double* buf, Py_ssize_t* iwork) noexcept nogil:
    # exact minimum of one chain subproblem: half unaries of the reparameterised
    # model on the nodes plus the reparameterised pairwise terms on its edges
    cdef double* V = buf
    cdef double* g = buf + M
    cdef double* conv = buf + 2 * M
    cdef double* dwork = buf + 3 * M
    cdef Py_ssize_t NM = N * M, i, e, p, q
    cdef double th, best
    p = first
    for i in range(M):
        th = <double>unary[p * M + i]
        th = th + <double>msgs[p * M + i] + <double>msgs[NM + p * M + i]
        th = th + <double>msgs[2 * NM + p * M + i] + <double>msgs[3 * NM + p * M + i]
        V[i] = 0.5 * th
    for e in range(1, length):
        q = p + stride
        for i in range(M):
            g[i] = V[i] - <double>msgs[dir_back * NM + p * M + i]
        _minconv2d(g, conv, n, kind, rho, weights[(e - 1) * wstride], tau, truncate, iwork, dwork)
        for i in range(M):
            th = <double>unary[q * M + i]
            th = th + <double>msgs[q * M + i] + <double>msgs[NM + q * M + i]
            th = th + <double>msgs[2 * NM + q * M + i] + <double>msgs[3 * NM + q * M + i]
            V[i] = conv[i] - <double>msgs[dir_fwd * NM + q * M + i] + 0.5 * th
        p = q
    best = V[0]
    for i in range(1, M):
        if V[i] < best:
            best = V[i]
    return best


def chain_minima(const float[:, ::1] unary, msg_t[:, :, ::1] msgs, Py_ssize_t H, Py_ssize_t W,
                 const double[:, ::1] wh, const double[:, ::1] wv, double[::1] rho_tab,
                 str kind, double tau, int threads):
    """Minima of the H row chains followed by the W column chains."""
    cdef Py_ssize_t N = H * W
    cdef Py_ssize_t M = unary.shape[1]
    cdef Py_ssize_t n = rho_tab.shape[0] // 2 + 1
    cdef int k = KINDS[kind]
    cdef bint truncate = tau < INFINITY
    cdef Py_ssize_t c
    cdef int tid
    if threads < 1:
        threads = 1
    res = np.empty(H + W)
    cdef double[::1] rv = res
    cdef Py_ssize_t bsz = 3 * M + _dwork_size(n)
    bufs = np.empty((threads, bsz))
    ibufs = np.empty((threads, _iwork_size(n)), dtype=np.intp)
    cdef double[:, ::1] bv = bufs
    cdef Py_ssize_t[:, ::1] ibv = ibufs
    dummy = np.zeros(1)
    cdef const double[::1] dv = dummy
    cdef const double* whp = &wh[0, 0] if wh.shape[0] * wh.shape[1] > 0 else &dv[0]
    cdef const double* wvp = &wv[0, 0] if wv.shape[0] * wv.shape[1] > 0 else &dv[0]
    cdef const float* up = &unary[0, 0]
    cdef msg_t* mp = &msgs[0, 0, 0]
    cdef const double* rp = &rho_tab[n - 1]
    for c in prange(H + W, nogil=True, num_threads=threads, schedule="dynamic"):
        tid = openmp.omp_get_thread_num()
        if c < H:
            rv[c] = _chain_min(up, mp, N, M, n, c * W, 1, W, whp + c * (W - 1), 1,
                               FROM_RIGHT, FROM_LEFT, k, rp, tau, truncate,
                               &bv[tid, 0], &ibv[tid, 0])
        else:
            rv[c] = _chain_min(up, mp, N, M, n, c - H, W, H, wvp + (c - H), W,
                               FROM_DOWN, FROM_UP, k, rp, tau, truncate,
                               &bv[tid, 0], &ibv[tid, 0])
    return res


def decode_greedy(const float[:, ::1] unary, msg_t[:, :, ::1] msgs, Py_ssize_t H, Py_ssize_t W,
                  const double[:, ::1] wh, const double[:, ::1] wv, double[::1] rho_tab,
                  double tau):
    """Raster-order greedy labelling; ties go to the smallest label index."""
    cdef Py_ssize_t N = H * W
    cdef Py_ssize_t M = unary.shape[1]
    cdef Py_ssize_t n = rho_tab.shape[0] // 2 + 1
    cdef Py_ssize_t NM = N * M
    cdef bint truncate = tau < INFINITY
    cdef Py_ssize_t y, x, p, s, best, lq1, lq2, lu1, lu2
    cdef double v, bestv, pen, w
    cdef const double* rho = &rho_tab[n - 1]
    labels = np.empty(N, dtype=np.intp)
    cdef Py_ssize_t[::1] lab = labels
    with nogil:
        for y in range(H):
            for x in range(W):
                p = y * W + x
                best = 0
                bestv = INFINITY
                if x > 0:
                    lq1 = lab[p - 1] % n
                    lq2 = lab[p - 1] // n
                if y > 0:
                    lu1 = lab[p - W] % n
                    lu2 = lab[p - W] // n
                for s in range(M):
                    v = <double>unary[p, s] + <double>msgs[FROM_RIGHT, p, s] + <double>msgs[FROM_DOWN, p, s]
                    if x > 0:
                        pen = rho[s % n - lq1] + rho[s // n - lq2]
                        if truncate and pen > tau:
                            pen = tau
                        v = v + wh[y, x - 1] * pen
                    if y > 0:
                        pen = rho[s % n - lu1] + rho[s // n - lu2]
                        if truncate and pen > tau:
                            pen = tau
                        v = v + wv[y - 1, x] * pen
                    if v < bestv:
                        bestv = v
                        best = s
                lab[p] = best
    return labels


def max_threads():
    return openmp.omp_get_max_threads()
