"""A small define-by-run reverse-mode autodiff over dense numpy arrays.

Every op that touches a tensor with ``requires_grad`` records its parents and
a backward closure on the output. :meth:`Tensor.backward` collects the
reachable graph and runs the closures in reverse execution order, so each op
is visited exactly once and shared inputs accumulate their contributions.

Broadcasting is deliberately narrow: equal shapes, scalar with anything, and a
row vector ``(n,)`` against a tensor whose last axis is ``n``. Anything else
raises :class:`ShapeError`.
"""
import contextlib
import itertools
import threading

import numpy as np

from copyseq import kernels

_counter = itertools.count()
_local = threading.local()


def grad_enabled():
    return getattr(_local, "enabled", True)


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class MaskError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph (inference); scoped to the calling thread."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq", "_pending")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._seq = next(_counter)
        self._pending = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def _acc(self, g):
        # never accumulate in place: a gradient array may be shared between parents
        self.grad = g if self.grad is None else self.grad + g

    def _defer(self, kind, a, b):
        # contributions that are cheaper to combine in one batched product later
        if self._pending is None:
            self._pending = []
        self._pending.append((kind, a, b))

    def _flush(self):
        pend = self._pending
        if not pend:
            return
        self._pending = None
        total = None
        outer = [(a, b) for k, a, b in pend if k == "outer"]
        if outer:
            lhs = np.concatenate([a for a, _ in outer])
            rhs = np.concatenate([b for _, b in outer])
            total = lhs.T @ rhs
        bouter = [(a, b) for k, a, b in pend if k == "bouter"]
        if bouter:
            w = np.stack([a for a, _ in bouter], axis=2)  # (B, T, n)
            v = np.stack([b for _, b in bouter], axis=1)  # (B, n, d)
            part = w @ v
            total = part if total is None else total + part
        slots = [(a, b) for k, a, b in pend if k == "slot"]
        if slots:
            full = np.zeros_like(self.data)
            for idx, g in slots:
                full[idx] += g
            total = full if total is None else total + full
        self._acc(total)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        nodes, leaves = [], []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._backward is not None:
                nodes.append(t)
                stack.extend(t._parents)
            else:
                leaves.append(t)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self._acc(np.asarray(grad, dtype=self.dtype))
        for t in nodes:
            # every consumer of t ran already, so its deferred terms are complete
            t._flush()
            if t.grad is not None:
                t._backward(t.grad)
        for t in leaves:
            t._flush()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    out._seq = next(_counter)
    out._pending = None
    return out


def _broadcast_kind(a, b):
    if a.shape == b.shape:
        return None
    if a.ndim == 0 or a.size == 1 and a.ndim <= 1:
        return "a_scalar"
    if b.ndim == 0 or b.size == 1 and b.ndim <= 1:
        return "b_scalar"
    if a.ndim == 1 and b.ndim >= 2 and b.shape[-1] == a.shape[0]:
        return "a_row"
    if b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:
        return "b_row"
    raise ShapeError(f"unsupported broadcast between shapes {a.shape} and {b.shape}")


def _reduce(g, kind, side, shape):
    if kind is None:
        return g
    if kind == f"{side}_scalar":
        return np.asarray(g.sum()).reshape(shape)
    if kind == f"{side}_row":
        return g.reshape(-1, shape[0]).sum(axis=0)
    return g


def add(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    kind = _broadcast_kind(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._acc(_reduce(g, kind, "a", a.shape))
        if b.requires_grad:
            b._acc(_reduce(g, kind, "b", b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    kind = _broadcast_kind(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._acc(_reduce(g, kind, "a", a.shape))
        if b.requires_grad:
            b._acc(_reduce(-g, kind, "b", b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    kind = _broadcast_kind(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._acc(_reduce(g * b.data, kind, "a", a.shape))
        if b.requires_grad:
            b._acc(_reduce(g * a.data, kind, "b", b.shape))

    return _node(a.data * b.data, (a, b), bw)


def matmul(a, b):
    """``(..., k) @ (k, n)``; a 3-D left operand is treated as a stack of rows."""
    if b.data.ndim != 2 or a.data.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    k, n = b.shape
    # stacks of rows go through one flat GEMM instead of a GEMM per batch entry
    out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))

    def bw(g):
        if a.requires_grad:
            a._acc((g.reshape(-1, n) @ b.data.T).reshape(a.shape))
        if b.requires_grad:
            b._defer("outer", a.data.reshape(-1, k), g.reshape(-1, n))

    return _node(out, (a, b), bw)


def tanh(x):
    y = np.tanh(x.data)

    def bw(g):
        x._acc(g * (1.0 - y * y))

    return _node(y, (x,), bw)


def sigmoid(x):
    y = kernels._kernels_py._sigmoid(x.data)

    def bw(g):
        x._acc(g * y * (1.0 - y))

    return _node(y, (x,), bw)


def exp(x):
    y = np.exp(x.data)

    def bw(g):
        x._acc(g * y)

    return _node(y, (x,), bw)


def log(x):
    if np.any(x.data <= 0):
        raise DomainError("log of a nonpositive value")
    y = np.log(x.data)

    def bw(g):
        x._acc(g / x.data)

    return _node(y, (x,), bw)


def sum(x, axis=None):
    y = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            x._acc(np.broadcast_to(g, x.shape).copy())
        else:
            x._acc(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _node(np.asarray(y), (x,), bw)


def reshape(x, shape):
    y = x.data.reshape(shape)

    def bw(g):
        x._acc(g.reshape(x.shape))

    return _node(y, (x,), bw)


def index(x, idx):
    y = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x._acc(full)

    return _node(np.ascontiguousarray(y), (x,), bw)


def concat(tensors, axis=-1):
    tensors = tuple(tensors)
    y = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % y.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._acc(np.ascontiguousarray(g[tuple(sl)]))

    return _node(y, tensors, bw)


def stack(tensors, axis=0):
    tensors = tuple(tensors)
    y = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._acc(np.ascontiguousarray(np.take(g, i, axis=axis)))

    return _node(y, tensors, bw)


def gather_rows(table, ids):
    """Row lookup ``table[ids]``; the backward pass scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"row id out of range [0, {n_rows})")
    flat = np.ascontiguousarray(ids.reshape(-1))
    y = table.data[flat].reshape(ids.shape + table.shape[1:])

    def bw(g):
        gt = np.zeros_like(table.data)
        kernels.scatter_add_rows(gt, flat, np.ascontiguousarray(g.reshape(len(flat), -1)))
        table._acc(gt)

    return _node(y, (table,), bw)


def _as_mask(mask, shape):
    m = np.ascontiguousarray(np.asarray(mask), dtype=np.uint8)
    if m.shape != shape:
        raise ShapeError(f"mask shape {m.shape} does not match scores {shape}")
    return m


def masked_log_softmax(x, mask):
    """Row-wise log-softmax over unmasked entries; masked entries are ``-inf``."""
    if x.data.ndim != 2:
        raise ShapeError(f"masked_log_softmax expects a matrix, got {x.shape}")
    m = _as_mask(mask, x.shape)
    if not m.any(axis=1).all():
        raise MaskError("every row needs at least one unmasked entry")
    y = kernels.log_softmax_fwd(np.ascontiguousarray(x.data), m)

    def bw(g):
        x._acc(kernels.log_softmax_bwd(np.ascontiguousarray(g), y, m))

    return _node(y, (x,), bw)


def masked_logsumexp(x, mask):
    """``log sum_j exp(x[b, j])`` over entries with ``mask[b, j] == 1``."""
    m = _as_mask(mask, x.shape)
    if not m.any(axis=1).all():
        raise MaskError("every row needs at least one unmasked entry")
    xd = np.ascontiguousarray(x.data)
    y = kernels.logsumexp_fwd(xd, m)

    def bw(g):
        x._acc(kernels.logsumexp_bwd(np.ascontiguousarray(g), xd, m, y))

    return _node(y, (x,), bw)


def masked_fill(x, mask, value):
    """Replace entries where ``mask == 0`` by the constant ``value``."""
    keep = np.asarray(mask, dtype=bool)
    y = np.where(keep, x.data, value).astype(x.dtype, copy=False)

    def bw(g):
        x._acc(np.where(keep, g, 0.0).astype(g.dtype, copy=False))

    return _node(y, (x,), bw)


def add_expand(x, y):
    """``x[b, t, :] + y[b, :]`` for ``x`` of shape (B, T, d) and ``y`` (B, d)."""
    if x.data.ndim != 3 or y.shape != (x.shape[0], x.shape[2]):
        raise ShapeError(f"add_expand shape mismatch: {x.shape} and {y.shape}")
    out = x.data + y.data[:, None, :]

    def bw(g):
        if x.requires_grad:
            x._acc(g)
        if y.requires_grad:
            y._acc(g.sum(axis=1))

    return _node(out, (x, y), bw)


def batched_dot(mem, s):
    """``out[b, t] = mem[b, t, :] . s[b, :]``."""
    if mem.data.ndim != 3 or s.shape != (mem.shape[0], mem.shape[2]):
        raise ShapeError(f"batched_dot shape mismatch: {mem.shape} and {s.shape}")
    out = (mem.data @ s.data[:, :, None])[:, :, 0]

    def bw(g):
        if mem.requires_grad:
            mem._defer("bouter", g, s.data)
        if s.requires_grad:
            s._acc((g[:, None, :] @ mem.data)[:, 0, :])

    return _node(out, (mem, s), bw)


def weighted_sum(w, mem):
    """``out[b, :] = sum_t w[b, t] * mem[b, t, :]``."""
    if mem.data.ndim != 3 or w.shape != mem.shape[:2]:
        raise ShapeError(f"weighted_sum shape mismatch: {w.shape} and {mem.shape}")
    out = (w.data[:, None, :] @ mem.data)[:, 0, :]

    def bw(g):
        if w.requires_grad:
            w._acc((mem.data @ g[:, :, None])[:, :, 0])
        if mem.requires_grad:
            mem._defer("bouter", w.data, g)

    return _node(out, (w, mem), bw)


def gru_cell(x, h, w_x, b_x, u_zr, u_n, active=None):
    """One GRU step.

    ``w_x`` is (d_in, 3d) with column blocks [update | reset | candidate],
    ``u_zr`` is (d, 2d) and ``u_n`` is (d, d). Rows whose ``active`` flag is 0
    carry ``h`` through unchanged.
    """
    d = h.shape[1]
    if x.shape[0] != h.shape[0] or w_x.shape != (x.shape[1], 3 * d) or b_x.shape != (3 * d,):
        raise ShapeError(
            f"gru_cell shape mismatch: x{x.shape} h{h.shape} W{w_x.shape} b{b_x.shape}"
        )
    return gru_cell_projected(add(matmul(x, w_x), b_x), h, u_zr, u_n, active)


def gru_cell_projected(gx, h, u_zr, u_n, active=None):
    """Fused GRU recurrence given the input projection ``gx = x W + b`` (B, 3d)."""
    b, d = h.shape
    if gx.shape != (b, 3 * d) or u_zr.shape != (d, 2 * d) or u_n.shape != (d, d):
        raise ShapeError(
            f"gru_cell shape mismatch: gx{gx.shape} h{h.shape} Uzr{u_zr.shape} Un{u_n.shape}"
        )
    if active is None:
        act = np.ones(b, dtype=np.uint8)
    else:
        act = np.ascontiguousarray(active, dtype=np.uint8)
    hd = np.ascontiguousarray(h.data)
    gxd = gx.data
    gh = hd @ u_zr.data
    z, r, rh = kernels.gru_fwd_zr(np.ascontiguousarray(gxd[:, : 2 * d]), gh, hd)
    un = rh @ u_n.data
    n, h_new = kernels.gru_fwd_out(np.ascontiguousarray(gxd[:, 2 * d:]), un, z, hd, act)

    def bw(g):
        g = np.ascontiguousarray(g)
        dn, dz, dh = kernels.gru_bwd_out(g, z, n, hd, act)
        drh = dn @ u_n.data.T
        dr, dh_r = kernels.gru_bwd_r(drh, hd, r)
        dzr = np.concatenate([dz, dr], axis=1)
        if h.requires_grad:
            h._acc(dh + dh_r + dzr @ u_zr.data.T)
        if u_n.requires_grad:
            u_n._defer("outer", rh, dn)
        if u_zr.requires_grad:
            u_zr._defer("outer", hd, dzr)
        if gx.requires_grad:
            gx._acc(np.concatenate([dzr, dn], axis=1))

    return _node(h_new, (gx, h, u_zr, u_n), bw)


def unstack(x, axis=1):
    """Split along ``axis`` into separate tensors (views share one gradient buffer)."""
    outs = []
    for i in range(x.shape[axis]):
        idx = (slice(None),) * axis + (i,)

        def bw(g, idx=idx):
            x._defer("slot", idx, g)

        outs.append(_node(np.ascontiguousarray(x.data[idx]), (x,), bw))
    return outs


def selective_weights(p, match):
    """Normalize ``p`` over positions with ``match == 1``; zero elsewhere.

    Rows with matches whose total mass is below 1e-12 fall back to uniform
    weights over the matches; rows without matches are all zero.
    """
    m = _as_mask(match, p.shape)
    pd = np.ascontiguousarray(p.data)
    rho = kernels.selective_fwd(pd, m)

    def bw(g):
        p._acc(kernels.selective_bwd(np.ascontiguousarray(g), pd, m, rho))

    return _node(rho, (p,), bw)
