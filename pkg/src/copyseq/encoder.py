"""Bidirectional GRU encoder producing the memory read by the decoders."""
from dataclasses import dataclass

import numpy as np

from copyseq import autodiff as ad
from copyseq.autodiff import Tensor

INIT_SCALE = 0.08


def uniform_param(rng, shape, dtype, name):
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(dtype), requires_grad=True, name=name)


def zero_param(shape, dtype, name):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)


@dataclass
class GruParams:
    """Weights of one GRU; column blocks of ``w_x`` are [update | reset | candidate]."""

    w_x: Tensor
    b_x: Tensor
    u_zr: Tensor
    u_n: Tensor

    @classmethod
    def init(cls, d_in, d_h, rng, dtype=np.float64, prefix="gru"):
        return cls(
            w_x=uniform_param(rng, (d_in, 3 * d_h), dtype, f"{prefix}.w_x"),
            b_x=zero_param((3 * d_h,), dtype, f"{prefix}.b_x"),
            u_zr=uniform_param(rng, (d_h, 2 * d_h), dtype, f"{prefix}.u_zr"),
            u_n=uniform_param(rng, (d_h, d_h), dtype, f"{prefix}.u_n"),
        )

    @property
    def d_h(self):
        return self.u_n.shape[0]

    def tensors(self):
        return [self.w_x, self.b_x, self.u_zr, self.u_n]


def gru_step(x, h, p, active=None):
    """z = σ(Wz x + Uz h + bz), r = σ(Wr x + Ur h + br),
    n = tanh(W x + U (r*h) + b), h' = z*h + (1 - z)*n."""
    return ad.gru_cell(x, h, p.w_x, p.b_x, p.u_zr, p.u_n, active)


@dataclass
class Memory:
    states: Tensor  # (B, T, 2*d_h), forward || backward
    lengths: np.ndarray
    mask: np.ndarray  # (B, T) uint8
    fwd_final: Tensor  # forward state at the last real token
    bwd_first: Tensor  # backward state at position 0

    @property
    def batch_size(self):
        return self.mask.shape[0]


def encode(src_ids, lengths, embeddings, fwd, bwd):
    src_ids = np.asarray(src_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if (lengths < 1).any():
        raise ValueError("every source needs at least one token")
    b, t_max = src_ids.shape
    dtype = embeddings.dtype
    steps = np.arange(t_max)
    active = (steps[None, :] < lengths[:, None]).astype(np.uint8)
    emb = ad.gather_rows(embeddings, src_ids)
    # input projections for every position in one product per direction
    gx_f = ad.unstack(ad.add(ad.matmul(emb, fwd.w_x), fwd.b_x), axis=1)
    gx_b = ad.unstack(ad.add(ad.matmul(emb, bwd.w_x), bwd.b_x), axis=1)

    h = Tensor(np.zeros((b, fwd.d_h), dtype=dtype))
    f_states = []
    for t in range(t_max):
        h = ad.gru_cell_projected(gx_f[t], h, fwd.u_zr, fwd.u_n, active[:, t])
        f_states.append(h)
    fwd_final = h

    # right-to-left: rows stay at the zero state until their last real token
    h = Tensor(np.zeros((b, bwd.d_h), dtype=dtype))
    b_states = [None] * t_max
    for t in reversed(range(t_max)):
        h = ad.gru_cell_projected(gx_b[t], h, bwd.u_zr, bwd.u_n, active[:, t])
        b_states[t] = h

    states = ad.concat([ad.stack(f_states, axis=1), ad.stack(b_states, axis=1)], axis=-1)
    states = ad.masked_fill(states, active[:, :, None], 0.0)
    return Memory(states, lengths, active, fwd_final, b_states[0])
