"""Decoder with a generate/copy mixture over the extended vocabulary.

Generate scores cover the fixed vocabulary (PAD and BOS are never
predictable), copy scores cover source positions. Both go through one softmax,
so the modes compete for the same normalizer; copy mass is then summed onto
the extended id of each position's token.
"""
from dataclasses import dataclass

import numpy as np

from copyseq import autodiff as ad
from copyseq import kernels
from copyseq.attention import attentive_read
from copyseq.autodiff import Tensor
from copyseq.encoder import gru_step
from copyseq.vocab import BOS, PAD, UNK

NEG_INF = -np.inf


def generate_mask(n_gen):
    m = np.ones(n_gen, dtype=np.uint8)
    m[PAD] = 0
    m[BOS] = 0
    return m


@dataclass
class DecoderState:
    s: Tensor  # (B, d_s)
    prev_copy_probs: Tensor  # (B, T), copy_by_pos of the previous prediction
    prev_token: np.ndarray  # (B,) extended ids

    @classmethod
    def start(cls, s0, t_src):
        b = s0.shape[0]
        return cls(
            s0,
            Tensor(np.zeros((b, t_src), dtype=s0.dtype)),
            np.full(b, BOS, dtype=np.int64),
        )


@dataclass
class MixtureOutput:
    joint_logp: Tensor  # (B, G + T) log-probabilities of [generate || copy] slots
    copy_by_pos: Tensor  # (B, T)
    n_gen: int
    probs: np.ndarray = None  # (B, E) over the extended vocabulary, built on request
    src_ext: np.ndarray = None

    @property
    def gen_probs(self):
        return np.exp(self.joint_logp.data[:, : self.n_gen])


def score_generate(s_t, w_o):
    """ψ_g for every fixed-vocabulary id: ``s_t @ W_o`` with PAD/BOS at -inf."""
    scores = ad.matmul(s_t, w_o)
    return ad.masked_fill(scores, generate_mask(w_o.shape[1])[None, :], NEG_INF)


def copy_keys(mem, w_c):
    """``tanh(h_j W_c)`` for every position, shape (B, T, d_s)."""
    return ad.tanh(ad.matmul(mem.states, w_c))


def score_copy(s_t, mem, w_c, keys=None):
    """ψ_c[b, j] = tanh(h_j W_c) · s_t; padded positions at -inf."""
    if keys is None:
        keys = copy_keys(mem, w_c)
    return ad.masked_fill(ad.batched_dot(keys, s_t), mem.mask, NEG_INF)


def mix_predict(gen_scores, copy_scores, src_ext, n_ext, with_probs=True):
    """Shared-normalizer mixture.

    ``src_ext`` holds each position's extended id (-1 at padding). The joint
    log-softmax runs over ``[gen_scores || copy_scores]``; ``probs`` then puts
    generate mass on fixed-vocabulary ids and scatter-adds each position's copy
    mass onto its token's extended id. Source-only tokens therefore get no
    generate mass, and tokens absent from the source get no copy mass.
    """
    src_ext = np.ascontiguousarray(src_ext, dtype=np.int64)
    n_gen = gen_scores.shape[1]
    mask = np.concatenate(
        [np.isfinite(gen_scores.data), src_ext >= 0], axis=1
    ).astype(np.uint8)
    joint = ad.masked_log_softmax(ad.concat([gen_scores, copy_scores], axis=1), mask)
    copy_by_pos = ad.exp(ad.index(joint, (slice(None), slice(n_gen, None))))
    out = MixtureOutput(joint, copy_by_pos, n_gen, src_ext=src_ext)
    if with_probs:
        out.probs = kernels.mixture_scatter(np.exp(joint.data), src_ext, n_gen, n_ext)
    return out


def selective_read(prev_token, prev_copy_probs, src_ext, mem):
    """ζ = Σ_τ ρ_τ h_τ over positions whose token equals ``prev_token``.

    ρ renormalizes the previous step's copy probabilities over the matching
    positions. Returns ``(zeta, rho)``; both are zero when nothing matches.
    """
    match = np.asarray(src_ext) == np.asarray(prev_token)[:, None]
    rho = ad.selective_weights(prev_copy_probs, match)
    return ad.weighted_sum(rho, mem.states), rho


@dataclass
class CopyParams:
    w_o: Tensor  # (d_s, G) generate projection over the fixed vocabulary
    w_c: Tensor  # (2*d_h, d_s) copy projection

    def tensors(self):
        return [self.w_o, self.w_c]


@dataclass
class SourceContext:
    """Per-batch quantities the decoder reuses at every step."""

    mem: object
    src_ext: np.ndarray
    n_ext: int
    att_keys: Tensor = None
    copy_keys: Tensor = None
    fixed_context: Tensor = None


def embed_feedback(embeddings, prev_token):
    # copied OOV ids have no embedding row of their own
    n = embeddings.shape[0]
    ids = np.where(prev_token >= n, UNK, prev_token)
    return ad.gather_rows(embeddings, ids)


def decoder_step(prev_token, state, ctx, embeddings, gru, att, copy, with_probs=True):
    """One CopyNet step: selective read, attentive read, GRU update, mixture."""
    zeta, _ = selective_read(prev_token, state.prev_copy_probs, ctx.src_ext, ctx.mem)
    c_t, _ = attentive_read(state.s, ctx.mem, att, ctx.att_keys)
    x = ad.concat([embed_feedback(embeddings, prev_token), zeta, c_t], axis=1)
    s_t = gru_step(x, state.s, gru)
    out = mix_predict(
        score_generate(s_t, copy.w_o),
        score_copy(s_t, ctx.mem, copy.w_c, ctx.copy_keys),
        ctx.src_ext,
        ctx.n_ext,
        with_probs=with_probs,
    )
    return DecoderState(s_t, out.copy_by_pos, np.asarray(prev_token)), out
