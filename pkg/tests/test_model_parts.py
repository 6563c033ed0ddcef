import numpy as np
import pytest

from copyseq.attention import attentive_read
from copyseq.autodiff import Tensor
from copyseq.baselines import fixed_context
from copyseq.batching import make_example
from copyseq.decoding import beam_search
from copyseq.encoder import encode
from copyseq.models import ModelConfig, Seq2Seq
from copyseq.vocab import BOS, PAD
from conftest import tiny_batch, tiny_model, tiny_vocab

PAIRS = [(["w1", "q", "w2", "w3"], ["q", "w2"]), (["w3", "z"], ["z"]), (["w5", "w6", "w7"], ["w5"])]


def _ref_gru(x, h, p):
    d = h.shape[-1]
    sig = lambda v: 1 / (1 + np.exp(-v))
    gx = x @ p.w_x.data + p.b_x.data
    z = sig(gx[:d] + h @ p.u_zr.data[:, :d])
    r = sig(gx[d:2 * d] + h @ p.u_zr.data[:, d:])
    n = np.tanh(gx[2 * d:] + (r * h) @ p.u_n.data)
    return z * h + (1 - z) * n


class TestEncoder:
    def test_matches_per_sequence_reference(self):
        vocab = tiny_vocab()
        model = tiny_model("copynet", vocab)
        batch = tiny_batch(vocab, PAIRS)
        mem = encode(batch.src_base, batch.lengths, model.embeddings, model.enc_fwd, model.enc_bwd)
        d = model.config.d_h
        for i, n in enumerate(batch.lengths):
            emb = model.embeddings.data[batch.src_base[i, :n]]
            h, fwd = np.zeros(d), []
            for x in emb:
                h = _ref_gru(x, h, model.enc_fwd)
                fwd.append(h)
            h, bwd = np.zeros(d), [None] * n
            for t in reversed(range(n)):
                h = _ref_gru(emb[t], h, model.enc_bwd)
                bwd[t] = h
            want = np.concatenate([np.array(fwd), np.array(bwd)], axis=1)
            np.testing.assert_allclose(mem.states.data[i, :n], want, atol=1e-12)
            assert np.all(mem.states.data[i, n:] == 0)
            np.testing.assert_allclose(mem.fwd_final.data[i], fwd[-1], atol=1e-12)
            np.testing.assert_allclose(mem.bwd_first.data[i], bwd[0], atol=1e-12)

    def test_padding_does_not_leak(self):
        vocab = tiny_vocab()
        model = tiny_model("copynet", vocab)
        alone = tiny_batch(vocab, PAIRS[1:2])
        padded = tiny_batch(vocab, PAIRS)
        a = encode(alone.src_base, alone.lengths, model.embeddings, model.enc_fwd, model.enc_bwd)
        b = encode(padded.src_base, padded.lengths, model.embeddings, model.enc_fwd, model.enc_bwd)
        np.testing.assert_allclose(b.states.data[1, :2], a.states.data[0], atol=1e-13)

    def test_empty_source_rejected(self):
        vocab = tiny_vocab()
        model = tiny_model("copynet", vocab)
        with pytest.raises(ValueError):
            encode(np.zeros((1, 2), dtype=np.int64), [0], model.embeddings, model.enc_fwd, model.enc_bwd)


class TestAttention:
    def test_weights_normalized_and_zero_on_padding(self):
        vocab = tiny_vocab()
        model = tiny_model("rnnsearch", vocab)
        batch = tiny_batch(vocab, PAIRS)
        ctx = model.prepare_batch(batch)
        s = Tensor(np.random.default_rng(0).standard_normal((3, model.config.d_s)))
        c, alpha = attentive_read(s, ctx.mem, model.att)
        a = alpha.data
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(a[batch.mask == 0] == 0)
        p = model.att
        for i in range(3):
            n = batch.lengths[i]
            h = ctx.mem.states.data[i, :n]
            e = np.tanh(s.data[i] @ p.w_a.data + h @ p.u_a.data + p.bias.data) @ p.v_a.data[:, 0]
            w = np.exp(e - e.max())
            w /= w.sum()
            np.testing.assert_allclose(a[i, :n], w, atol=1e-12)
            np.testing.assert_allclose(c.data[i], w @ h, atol=1e-12)


class TestBaselines:
    @pytest.mark.parametrize("kind", ["encdec", "rnnsearch"])
    def test_never_emit_source_only_tokens(self, kind):
        vocab = tiny_vocab()
        model = tiny_model(kind, vocab)
        batch = tiny_batch(vocab, PAIRS)
        ctx = model.prepare_batch(batch)
        state = model.initial_state(ctx)
        prev = np.full(3, BOS)
        g = len(vocab)
        for _ in range(4):
            state, out = model.step(state, prev, ctx)
            assert batch.n_ext > g
            assert np.all(out.probs[:, g:] == 0)
            assert np.all(out.probs[:, [PAD, BOS]] == 0)
            np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-12)
            prev = out.probs.argmax(axis=1)
        for ex, beam in zip(batch.examples, beam_search(model, batch.examples, width=4)):
            assert all(i < g for h in beam for i in h.ids)

    def test_encdec_context_is_final_states(self):
        vocab = tiny_vocab()
        model = tiny_model("encdec", vocab)
        ctx = model.prepare_batch(tiny_batch(vocab, PAIRS))
        want = np.concatenate([ctx.mem.fwd_final.data, ctx.mem.bwd_first.data], axis=1)
        np.testing.assert_array_equal(fixed_context(ctx.mem).data, want)

    def test_rnnsearch_shares_encoder_and_attention_with_copynet(self):
        vocab = tiny_vocab()
        copynet = tiny_model("copynet", vocab)
        rnn = Seq2Seq(ModelConfig(kind="rnnsearch", vocab_size=len(vocab), d_e=8, d_h=10, d_s=10, dtype="float64"))
        shared = rnn.named_params()
        for k, p in copynet.named_params().items():
            if k in shared and shared[k].shape == p.shape:
                shared[k].data = p.data.copy()
        batch = tiny_batch(vocab, PAIRS)
        a, b = copynet.prepare_batch(batch), rnn.prepare_batch(batch)
        np.testing.assert_array_equal(a.mem.states.data, b.mem.states.data)
        np.testing.assert_array_equal(a.att_keys.data, b.att_keys.data)
        s = Tensor(np.random.default_rng(3).standard_normal((3, 10)))
        np.testing.assert_array_equal(
            attentive_read(s, a.mem, copynet.att, a.att_keys)[0].data,
            attentive_read(s, b.mem, rnn.att, b.att_keys)[0].data,
        )


def test_copynet_can_emit_source_only_token():
    vocab = tiny_vocab()
    model = tiny_model("copynet", vocab)
    ex = make_example(vocab, ["zz", "w1"], ["zz"])
    ctx = model.prepare_batch(tiny_batch(vocab, [(["zz", "w1"], ["zz"])]))
    _, out = model.step(model.initial_state(ctx), np.array([BOS]), ctx)
    assert out.probs[0, ex.ext.id("zz")] > 0
