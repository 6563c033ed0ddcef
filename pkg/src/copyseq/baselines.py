"""Comparison decoders: Enc-Dec (fixed context) and RNNSearch (attention).

Both predict with a plain softmax over the fixed vocabulary and feed back
only the previous token's embedding, so neither can ever emit a source-only
token.
"""
import enum

import numpy as np

from copyseq import autodiff as ad
from copyseq.attention import attentive_read
from copyseq.copy_decoder import MixtureOutput, embed_feedback, generate_mask
from copyseq.encoder import gru_step


class BaselineKind(enum.Enum):
    EncDec = "encdec"
    RNNSearch = "rnnsearch"


def fixed_context(mem):
    """Last forward state and first backward state, concatenated."""
    return ad.concat([mem.fwd_final, mem.bwd_first], axis=1)


def baseline_step(kind, prev_token, state, ctx, embeddings, gru, att, w_o, with_probs=True):
    """Returns ``(s_t, MixtureOutput)``; the output has no copy slots."""
    if kind is BaselineKind.EncDec:
        c = ctx.fixed_context
    else:
        c, _ = attentive_read(state, ctx.mem, att, ctx.att_keys)
    x = ad.concat([embed_feedback(embeddings, prev_token), c], axis=1)
    s_t = gru_step(x, state, gru)
    mask = generate_mask(w_o.shape[1])
    logp = ad.masked_log_softmax(ad.matmul(s_t, w_o), np.broadcast_to(mask, (s_t.shape[0], mask.size)))
    out = MixtureOutput(logp, None, w_o.shape[1], src_ext=ctx.src_ext)
    if with_probs:
        probs = np.zeros((s_t.shape[0], ctx.n_ext), dtype=logp.dtype)
        probs[:, : w_o.shape[1]] = np.exp(logp.data)
        out.probs = probs
    return s_t, out
