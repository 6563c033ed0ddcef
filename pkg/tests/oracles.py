"""Independent reference implementations used by the unit and acceptance tests."""
import itertools
import math

import numpy as np

from copyseq import autodiff as ad
from copyseq.autodiff import Tensor
from copyseq.batching import make_example
from copyseq.copy_decoder import generate_mask, mix_predict
from copyseq.vocab import BOS, EOS, PAD, UNK, Vocabulary


def brute_mixture(gen, copy, src_ext, n_ext):
    """Per-id probabilities summed term by term from the unnormalized scores."""
    b = gen.shape[0]
    out = np.zeros((b, n_ext))
    for i in range(b):
        terms_g = {v: math.exp(gen[i, v]) for v in range(gen.shape[1]) if v not in (PAD, BOS)}
        terms_c = [(int(src_ext[i, j]), math.exp(copy[i, j])) for j in range(copy.shape[1]) if src_ext[i, j] >= 0]
        z = math.fsum(list(terms_g.values()) + [e for _, e in terms_c])
        for v in range(n_ext):
            parts = [terms_g.get(v, 0.0)] + [e for w, e in terms_c if w == v]
            out[i, v] = math.fsum(parts) / z
    return out


def random_config(rng, g=None):
    g = g or int(rng.integers(5, 12))
    b, t = int(rng.integers(1, 4)), int(rng.integers(1, 7))
    n_oov = int(rng.integers(0, t + 1))
    src_ext = rng.integers(0, g + max(n_oov, 1), size=(b, t))
    src_ext = np.where(np.isin(src_ext, [PAD, BOS]), UNK, src_ext)
    lengths = rng.integers(1, t + 1, size=b)
    src_ext[np.arange(t)[None, :] >= lengths[:, None]] = -1
    n_ext = int(max(g, src_ext.max() + 1))
    gen = rng.standard_normal((b, g)) * 3
    copy = rng.standard_normal((b, t)) * 3
    return gen, copy, src_ext, n_ext


def mix(gen, copy, src_ext, n_ext):
    gmask = generate_mask(gen.shape[1])[None, :]
    gen_t = ad.masked_fill(Tensor(gen), np.broadcast_to(gmask, gen.shape), -np.inf)
    cmask = (src_ext >= 0).astype(np.uint8)
    return mix_predict(gen_t, ad.masked_fill(Tensor(copy), cmask, -np.inf), src_ext, n_ext)


A, B, C = 4, 5, 6
TOKENS = (EOS, A, B, C)


class ToyModel:
    """Next-token distributions looked up from a table keyed by the prefix."""

    kind = "toy"
    dtype = np.float64

    def __init__(self, table):
        self.table = table

    def prepare_batch(self, batch):
        return batch.n_ext

    def initial_state(self, ctx):
        return None

    def select_context(self, ctx, rows):
        return ctx

    def select_state(self, state, rows):
        return [state[r] for r in rows]

    def step(self, state, prev, ctx):
        prefixes = [()] * len(prev) if state is None else [
            s + (int(p),) for s, p in zip(state, prev)
        ]
        probs = np.zeros((len(prev), ctx))
        for i, pre in enumerate(prefixes):
            for tok, p in self.table(pre).items():
                probs[i, tok] = p
        return prefixes, type("Out", (), {"probs": probs})()


HAND = {
    (): {A: 0.5, B: 0.4, C: 0.05, EOS: 0.05},
    (A,): {EOS: 0.45, A: 0.05, B: 0.3, C: 0.2},
    (B,): {EOS: 0.8, A: 0.1, B: 0.05, C: 0.05},
}


def hand_table(prefix):
    if prefix in HAND:
        return HAND[prefix]
    # deeper prefixes: mostly stop
    return {EOS: 0.7, A: 0.1, B: 0.1, C: 0.1}


def random_table(seed):
    cache = {}

    def table(prefix):
        if prefix not in cache:
            rng = np.random.default_rng([seed, len(prefix)] + list(prefix))
            p = rng.dirichlet(np.ones(len(TOKENS)) * 0.7)
            cache[prefix] = dict(zip(TOKENS, p))
        return cache[prefix]

    return table


def enumerate_outputs(table, max_len):
    """Every finished output of length <= max_len with its total log-probability."""
    out = []
    for n in range(1, max_len + 1):
        for seq in itertools.product(TOKENS, repeat=n):
            if EOS in seq[:-1] or (n < max_len and seq[-1] != EOS):
                continue
            score = sum(math.log(table(seq[:k])[seq[k]]) for k in range(n))
            out.append((score, seq))
    out.sort(key=lambda x: -x[0])
    return out


def toy_example():
    vocab = Vocabulary(["a", "b", "c"])
    return make_example(vocab, ["a", "b"], ["a"])
