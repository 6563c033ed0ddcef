# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``copyseq._kernels_py``."""
import numpy as np

cimport cython
from libc.math cimport exp, expf, log, tanh, tanhf, INFINITY

ctypedef fused real:
    float
    double

cdef double K_FLOOR = 1e-12


cdef inline real _sig(real x) noexcept nogil:
    cdef real e
    if real is float:
        if x >= 0:
            return 1.0 / (1.0 + expf(-x))
        e = expf(x)
    else:
        if x >= 0:
            return 1.0 / (1.0 + exp(-x))
        e = exp(x)
    return e / (1 + e)


cdef inline real _tanh(real x) noexcept nogil:
    if real is float:
        return tanhf(x)
    return tanh(x)


def gru_fwd_zr(real[:, ::1] gx_zr, real[:, ::1] gh_zr, real[:, ::1] h):
    # the exponentials go through numpy's vectorized exp; the rest is fused here
    cdef Py_ssize_t b = h.shape[0], d = h.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    a_arr = np.add(gx_zr, gh_zr)
    e_arr = np.exp(-np.abs(a_arr))
    z_arr = np.empty((b, d), dtype=dt)
    r_arr = np.empty((b, d), dtype=dt)
    rh_arr = np.empty((b, d), dtype=dt)
    cdef real[:, ::1] a = a_arr
    cdef real[:, ::1] e = e_arr
    cdef real[:, ::1] z = z_arr
    cdef real[:, ::1] r = r_arr
    cdef real[:, ::1] rh = rh_arr
    with nogil:
        for i in range(b):
            for j in range(d):
                z[i, j] = 1 / (1 + e[i, j]) if a[i, j] >= 0 else e[i, j] / (1 + e[i, j])
                r[i, j] = 1 / (1 + e[i, d + j]) if a[i, d + j] >= 0 else e[i, d + j] / (1 + e[i, d + j])
                rh[i, j] = r[i, j] * h[i, j]
    return z_arr, r_arr, rh_arr


def gru_fwd_out(real[:, ::1] gx_n, real[:, ::1] un, real[:, ::1] z,
                real[:, ::1] h, const unsigned char[::1] active):
    cdef Py_ssize_t b = h.shape[0], d = h.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    n_arr = np.tanh(np.add(gx_n, un))
    hn_arr = np.empty((b, d), dtype=dt)
    cdef real[:, ::1] n = n_arr
    cdef real[:, ::1] hn = hn_arr
    with nogil:
        for i in range(b):
            if active[i]:
                for j in range(d):
                    hn[i, j] = z[i, j] * h[i, j] + (1 - z[i, j]) * n[i, j]
            else:
                for j in range(d):
                    hn[i, j] = h[i, j]
    return n_arr, hn_arr


def gru_bwd_out(real[:, ::1] g, real[:, ::1] z, real[:, ::1] n,
                real[:, ::1] h, const unsigned char[::1] active):
    cdef Py_ssize_t b = h.shape[0], d = h.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    dn_arr = np.empty((b, d), dtype=dt)
    dz_arr = np.empty((b, d), dtype=dt)
    dh_arr = np.empty((b, d), dtype=dt)
    cdef real[:, ::1] dn = dn_arr
    cdef real[:, ::1] dz = dz_arr
    cdef real[:, ::1] dh = dh_arr
    cdef real gz, zz, nn
    with nogil:
        for i in range(b):
            if active[i]:
                for j in range(d):
                    gz = g[i, j]
                    zz = z[i, j]
                    nn = n[i, j]
                    dn[i, j] = gz * (1 - zz) * (1 - nn * nn)
                    dz[i, j] = gz * (h[i, j] - nn) * zz * (1 - zz)
                    dh[i, j] = gz * zz
            else:
                for j in range(d):
                    dn[i, j] = 0
                    dz[i, j] = 0
                    dh[i, j] = g[i, j]
    return dn_arr, dz_arr, dh_arr


def gru_bwd_r(real[:, ::1] drh, real[:, ::1] h, real[:, ::1] r):
    cdef Py_ssize_t b = h.shape[0], d = h.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    dr_arr = np.empty((b, d), dtype=dt)
    dh_arr = np.empty((b, d), dtype=dt)
    cdef real[:, ::1] dr = dr_arr
    cdef real[:, ::1] dh = dh_arr
    cdef real rr
    with nogil:
        for i in range(b):
            for j in range(d):
                rr = r[i, j]
                dr[i, j] = drh[i, j] * h[i, j] * rr * (1 - rr)
                dh[i, j] = drh[i, j] * rr
    return dr_arr, dh_arr


cdef _shift_rows(real[:, ::1] x, const unsigned char[:, ::1] mask, real[:, ::1] out, real[::1] mx):
    # out = x - rowmax over valid entries, -inf elsewhere
    cdef Py_ssize_t b = x.shape[0], k = x.shape[1], i, j
    cdef real m
    with nogil:
        for i in range(b):
            m = -INFINITY
            for j in range(k):
                if mask[i, j] and x[i, j] > m:
                    m = x[i, j]
            mx[i] = m
            for j in range(k):
                out[i, j] = x[i, j] - m if mask[i, j] else -INFINITY


def log_softmax_fwd(real[:, ::1] x, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t b = x.shape[0], k = x.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    out_arr = np.empty((b, k), dtype=dt)
    mx_arr = np.empty(b, dtype=dt)
    cdef real[:, ::1] out = out_arr
    cdef real[::1] mx = mx_arr
    _shift_rows(x, mask, out, mx)
    cdef real[:, ::1] ex = np.exp(out_arr)
    cdef double s, lse
    with nogil:
        for i in range(b):
            s = 0
            for j in range(k):
                s += ex[i, j]
            lse = log(s)
            for j in range(k):
                out[i, j] = <real>(out[i, j] - lse)
    return out_arr


def log_softmax_bwd(real[:, ::1] g, real[:, ::1] out, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t b = g.shape[0], k = g.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    dx_arr = np.empty((b, k), dtype=dt)
    cdef real[:, ::1] dx = dx_arr
    cdef real[:, ::1] p = np.exp(out)
    cdef double gs
    with nogil:
        for i in range(b):
            gs = 0
            for j in range(k):
                if mask[i, j]:
                    gs += g[i, j]
            for j in range(k):
                if mask[i, j]:
                    dx[i, j] = <real>(g[i, j] - p[i, j] * gs)
                else:
                    dx[i, j] = 0
    return dx_arr


def logsumexp_fwd(real[:, ::1] x, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t b = x.shape[0], k = x.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    sh_arr = np.empty((b, k), dtype=dt)
    mx_arr = np.empty(b, dtype=dt)
    out_arr = np.empty(b, dtype=dt)
    cdef real[::1] mx = mx_arr
    cdef real[::1] out = out_arr
    cdef real[:, ::1] sh = sh_arr
    _shift_rows(x, mask, sh, mx)
    cdef real[:, ::1] ex = np.exp(sh_arr)
    cdef double s
    with nogil:
        for i in range(b):
            s = 0
            for j in range(k):
                s += ex[i, j]
            out[i] = <real>(mx[i] + log(s))
    return out_arr


def logsumexp_bwd(real[::1] g, real[:, ::1] x, const unsigned char[:, ::1] mask,
                  real[::1] out):
    cdef Py_ssize_t b = x.shape[0], k = x.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    dx_arr = np.empty((b, k), dtype=dt)
    cdef real[:, ::1] dx = dx_arr
    with nogil:
        for i in range(b):
            for j in range(k):
                dx[i, j] = x[i, j] - out[i] if mask[i, j] else -INFINITY
    np.exp(dx_arr, out=dx_arr)
    with nogil:
        for i in range(b):
            for j in range(k):
                dx[i, j] = dx[i, j] * g[i]
    return dx_arr


def scatter_add_rows(real[:, ::1] out, const long[::1] ids, real[:, ::1] src):
    cdef Py_ssize_t n = ids.shape[0], d = src.shape[1], i, j, row
    with nogil:
        for i in range(n):
            row = ids[i]
            for j in range(d):
                out[row, j] += src[i, j]


def selective_fwd(real[:, ::1] p, const unsigned char[:, ::1] match):
    cdef Py_ssize_t b = p.shape[0], t = p.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    rho_arr = np.zeros((b, t), dtype=dt)
    cdef real[:, ::1] rho = rho_arr
    cdef double k
    cdef Py_ssize_t cnt
    with nogil:
        for i in range(b):
            k = 0
            cnt = 0
            for j in range(t):
                if match[i, j]:
                    k += p[i, j]
                    cnt += 1
            if cnt == 0:
                continue
            if k < K_FLOOR:
                for j in range(t):
                    if match[i, j]:
                        rho[i, j] = <real>(1.0 / cnt)
            else:
                for j in range(t):
                    if match[i, j]:
                        rho[i, j] = <real>(p[i, j] / k)
    return rho_arr


def selective_bwd(real[:, ::1] g, real[:, ::1] p, const unsigned char[:, ::1] match,
                  real[:, ::1] rho):
    cdef Py_ssize_t b = p.shape[0], t = p.shape[1], i, j
    dt = np.float32 if real is float else np.float64
    dp_arr = np.zeros((b, t), dtype=dt)
    cdef real[:, ::1] dp = dp_arr
    cdef double k, gr
    with nogil:
        for i in range(b):
            k = 0
            gr = 0
            for j in range(t):
                if match[i, j]:
                    k += p[i, j]
                    gr += g[i, j] * rho[i, j]
            if k < K_FLOOR:
                continue
            for j in range(t):
                if match[i, j]:
                    dp[i, j] = <real>((g[i, j] - gr) / k)
    return dp_arr


def mixture_scatter(real[:, ::1] p, const long[:, ::1] src_ext, Py_ssize_t n_gen,
                    Py_ssize_t n_ext):
    cdef Py_ssize_t b = p.shape[0], t = src_ext.shape[1], i, j, e
    dt = np.float32 if real is float else np.float64
    out_arr = np.zeros((b, n_ext), dtype=dt)
    cdef real[:, ::1] out = out_arr
    with nogil:
        for i in range(b):
            for j in range(n_gen):
                out[i, j] = p[i, j]
            for j in range(t):
                e = src_ext[i, j]
                if e >= 0:
                    out[i, e] += p[i, n_gen + j]
    return out_arr
