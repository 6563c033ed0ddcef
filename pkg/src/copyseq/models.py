"""The three encoder-decoder variants behind one interface."""
from dataclasses import asdict, dataclass

import numpy as np

from copyseq import autodiff as ad
from copyseq.attention import AttentionParams, attention_keys
from copyseq.autodiff import Tensor
from copyseq.baselines import BaselineKind, baseline_step, fixed_context
from copyseq.copy_decoder import (
    CopyParams,
    DecoderState,
    SourceContext,
    copy_keys,
    decoder_step,
)
from copyseq.encoder import GruParams, Memory, encode, uniform_param, zero_param
from copyseq.vocab import BOS

MODEL_KINDS = ("copynet", "rnnsearch", "encdec")


@dataclass
class ModelConfig:
    kind: str = "copynet"
    vocab_size: int = 104  # model vocabulary including the four specials
    d_e: int = 64
    d_h: int = 128
    d_s: int = 128
    d_att: int = 0  # 0 means d_h
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        for name in ("vocab_size", "d_e", "d_h", "d_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        return asdict(self)


class Seq2Seq:
    def __init__(self, config, rng=None):
        self.config = config
        rng = np.random.default_rng(0) if rng is None else rng
        dt = np.dtype(config.dtype)
        c = config
        d_mem = 2 * c.d_h
        d_att = c.d_att or c.d_h
        self.embeddings = uniform_param(rng, (c.vocab_size, c.d_e), dt, "emb")
        self.enc_fwd = GruParams.init(c.d_e, c.d_h, rng, dt, "enc_fwd")
        self.enc_bwd = GruParams.init(c.d_e, c.d_h, rng, dt, "enc_bwd")
        self.w_init = uniform_param(rng, (c.d_h, c.d_s), dt, "init.w")
        self.b_init = zero_param((c.d_s,), dt, "init.b")
        d_in = c.d_e + d_mem + (d_mem if c.kind == "copynet" else 0)
        self.dec = GruParams.init(d_in, c.d_s, rng, dt, "dec")
        self.att = None
        if c.kind != "encdec":
            self.att = AttentionParams.init(c.d_s, d_mem, d_att, rng, dt, "att")
        self.w_o = uniform_param(rng, (c.d_s, c.vocab_size), dt, "out.w_o")
        self.w_c = None
        if c.kind == "copynet":
            self.w_c = uniform_param(rng, (d_mem, c.d_s), dt, "copy.w_c")

    @property
    def kind(self):
        return self.config.kind

    @property
    def dtype(self):
        return self.embeddings.dtype

    def named_params(self):
        tensors = [self.embeddings, *self.enc_fwd.tensors(), *self.enc_bwd.tensors(),
                   self.w_init, self.b_init, *self.dec.tensors(), self.w_o]
        if self.att is not None:
            tensors += self.att.tensors()
        if self.w_c is not None:
            tensors.append(self.w_c)
        return {t.name: t for t in tensors}

    def prepare(self, src_base, src_ext, lengths, n_ext):
        mem = encode(src_base, lengths, self.embeddings, self.enc_fwd, self.enc_bwd)
        ctx = SourceContext(mem, np.ascontiguousarray(src_ext, dtype=np.int64), n_ext)
        if self.att is not None:
            ctx.att_keys = attention_keys(mem, self.att)
        if self.kind == "copynet":
            ctx.copy_keys = copy_keys(mem, self.w_c)
        if self.kind == "encdec":
            ctx.fixed_context = fixed_context(mem)
        return ctx

    def prepare_batch(self, batch):
        return self.prepare(batch.src_base, batch.src_ext, batch.lengths, batch.n_ext)

    def select_context(self, ctx, rows):
        """Context restricted to (possibly repeated) batch ``rows``; inference only."""
        def pick(t):
            return None if t is None else Tensor(t.data[rows])

        m = ctx.mem
        mem = Memory(pick(m.states), m.lengths[rows], m.mask[rows], pick(m.fwd_final), pick(m.bwd_first))
        return SourceContext(mem, ctx.src_ext[rows], ctx.n_ext, pick(ctx.att_keys),
                             pick(ctx.copy_keys), pick(ctx.fixed_context))

    def select_state(self, state, rows):
        return DecoderState(Tensor(state.s.data[rows]), Tensor(state.prev_copy_probs.data[rows]),
                            state.prev_token[rows])

    def initial_state(self, ctx):
        s0 = ad.tanh(ad.add(ad.matmul(ctx.mem.bwd_first, self.w_init), self.b_init))
        return DecoderState.start(s0, ctx.mem.mask.shape[1])

    def step(self, state, prev_token, ctx, with_probs=True):
        prev_token = np.asarray(prev_token, dtype=np.int64)
        if self.kind == "copynet":
            return decoder_step(prev_token, state, ctx, self.embeddings, self.dec, self.att,
                                CopyParams(self.w_o, self.w_c), with_probs)
        kind = BaselineKind(self.kind)
        s_t, out = baseline_step(kind, prev_token, state.s, ctx, self.embeddings, self.dec,
                                 self.att, self.w_o, with_probs)
        return DecoderState(s_t, state.prev_copy_probs, prev_token), out

    def teacher_forced(self, batch):
        """Run the decoder on gold prefixes; one MixtureOutput per target step."""
        ctx = self.prepare_batch(batch)
        state = self.initial_state(ctx)
        prev = np.full(batch.size, BOS, dtype=np.int64)
        outputs = []
        for t in range(batch.tgt.shape[1]):
            state, out = self.step(state, prev, ctx, with_probs=False)
            outputs.append(out)
            prev = batch.tgt[:, t]
        return outputs
