"""Pure-numpy reference implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Arrays are C-contiguous float32 or float64; masks are uint8 (1 = valid).
"""
import numpy as np

# ρ normalizer below which the selective read falls back to uniform weights
K_FLOOR = 1e-12


def _sigmoid(x):
    # exp(-|x|) never overflows; pick the matching form per sign
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def gru_fwd_zr(gx_zr, gh_zr, h):
    d = h.shape[1]
    zr = _sigmoid(gx_zr + gh_zr)
    z = np.ascontiguousarray(zr[:, :d])
    r = np.ascontiguousarray(zr[:, d:])
    return z, r, r * h


def gru_fwd_out(gx_n, un, z, h, active):
    n = np.tanh(gx_n + un)
    h_new = z * h + (1.0 - z) * n
    idle = active == 0
    if idle.any():
        h_new[idle] = h[idle]
    return n, h_new


def gru_bwd_out(g, z, n, h, active):
    act = active.astype(g.dtype)[:, None]
    dn = g * (1.0 - z) * (1.0 - n * n) * act
    dz = g * (h - n) * z * (1.0 - z) * act
    dh = g * z * act + g * (1.0 - act)
    return dn, dz, dh


def gru_bwd_r(drh, h, r):
    return drh * h * r * (1.0 - r), drh * r


def log_softmax_fwd(x, mask):
    valid = mask.astype(bool)
    xm = np.where(valid, x, -np.inf)
    mx = xm.max(axis=1, keepdims=True)
    shifted = xm - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def log_softmax_bwd(g, out, mask):
    valid = mask.astype(bool)
    p = np.exp(out)
    gs = np.where(valid, g, 0.0).sum(axis=1, keepdims=True)
    dx = g - p * gs
    dx[~valid] = 0.0
    return dx


def logsumexp_fwd(x, mask):
    valid = mask.astype(bool)
    xm = np.where(valid, x, -np.inf)
    mx = xm.max(axis=1)
    return mx + np.log(np.exp(xm - mx[:, None]).sum(axis=1))


def logsumexp_bwd(g, x, mask, out):
    valid = mask.astype(bool)
    w = np.exp(np.where(valid, x, -np.inf) - out[:, None])
    return w * g[:, None]


def scatter_add_rows(out, ids, src):
    np.add.at(out, ids, src)


def selective_fwd(p, match):
    m = match.astype(p.dtype)
    pm = p * m
    k = pm.sum(axis=1, keepdims=True)
    cnt = m.sum(axis=1, keepdims=True)
    tiny = (k < K_FLOOR) & (cnt > 0)
    safe_k = np.where(tiny | (cnt == 0), 1.0, k)
    rho = pm / safe_k
    if tiny.any():
        rows = tiny[:, 0]
        rho[rows] = m[rows] / cnt[rows]
    return rho


def selective_bwd(g, p, match, rho):
    m = match.astype(p.dtype)
    k = (p * m).sum(axis=1, keepdims=True)
    normal = k >= K_FLOOR
    safe_k = np.where(normal, k, 1.0)
    gr = (g * rho).sum(axis=1, keepdims=True)
    dp = m * (g - gr) / safe_k
    dp[~normal[:, 0]] = 0.0
    return dp


def mixture_scatter(p, src_ext, n_gen, n_ext):
    b = p.shape[0]
    out = np.zeros((b, n_ext), dtype=p.dtype)
    out[:, :n_gen] = p[:, :n_gen]
    copy = p[:, n_gen:]
    valid = src_ext >= 0
    rows = np.broadcast_to(np.arange(b)[:, None], src_ext.shape)
    np.add.at(out, (rows[valid], src_ext[valid]), copy[valid])
    return out
