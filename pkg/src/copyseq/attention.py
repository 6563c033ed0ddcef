"""Additive attention over the encoder memory."""
from dataclasses import dataclass

import numpy as np

from copyseq import autodiff as ad
from copyseq.autodiff import Tensor
from copyseq.encoder import uniform_param, zero_param


@dataclass
class AttentionParams:
    w_a: Tensor  # (d_s, d_att)
    u_a: Tensor  # (2*d_h, d_att)
    bias: Tensor  # (d_att,)
    v_a: Tensor  # (d_att, 1)

    @classmethod
    def init(cls, d_s, d_mem, d_att, rng, dtype=np.float64, prefix="att"):
        return cls(
            w_a=uniform_param(rng, (d_s, d_att), dtype, f"{prefix}.w_a"),
            u_a=uniform_param(rng, (d_mem, d_att), dtype, f"{prefix}.u_a"),
            bias=zero_param((d_att,), dtype, f"{prefix}.bias"),
            v_a=uniform_param(rng, (d_att, 1), dtype, f"{prefix}.v_a"),
        )

    def tensors(self):
        return [self.w_a, self.u_a, self.bias, self.v_a]


def attention_keys(mem, p):
    """``U_a h_τ + bias`` for every position; independent of the decoder state."""
    return ad.add(ad.matmul(mem.states, p.u_a), p.bias)


def attentive_read(s_prev, mem, p, keys=None):
    """Context ``c = Σ_τ α_τ h_τ`` with ``α = softmax_τ v_a·tanh(W_a s + U_a h_τ + b)``.

    Returns ``(c, alpha)``; alpha is exactly 0 at padded positions.
    """
    if keys is None:
        keys = attention_keys(mem, p)
    b, t = mem.mask.shape
    energy = ad.tanh(ad.add_expand(keys, ad.matmul(s_prev, p.w_a)))
    scores = ad.reshape(ad.matmul(energy, p.v_a), (b, t))
    alpha = ad.exp(ad.masked_log_softmax(scores, mem.mask))
    return ad.weighted_sum(alpha, mem.states), alpha
