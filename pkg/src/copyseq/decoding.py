"""Greedy and beam-search inference over the extended vocabulary."""
from dataclasses import dataclass

import numpy as np

from copyseq.autodiff import no_grad
from copyseq.batching import collate
from copyseq.vocab import BOS, EOS, UNK


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple  # emitted extended ids, EOS included when finished
    score: float  # total log-probability
    finished: bool


def default_max_len(example):
    return 2 * len(example.src_base) + 5


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def greedy_decode(model, examples, max_len=None):
    """Batched arg-max decoding; returns extended id lists without the EOS."""
    limits = np.array([max_len or default_max_len(e) for e in examples])
    with no_grad():
        batch = collate(examples, dtype=model.dtype)
        ctx = model.prepare_batch(batch)
        state = model.initial_state(ctx)
        prev = np.full(batch.size, BOS, dtype=np.int64)
        out_ids = [[] for _ in examples]
        done = np.zeros(batch.size, dtype=bool)
        for t in range(int(limits.max())):
            state, out = model.step(state, prev, ctx)
            tok = out.probs.argmax(axis=1)
            for i in np.nonzero(~done)[0]:
                if tok[i] == EOS:
                    done[i] = True
                else:
                    out_ids[i].append(int(tok[i]))
                    if len(out_ids[i]) >= limits[i]:
                        done[i] = True
            if done.all():
                break
            prev = tok
    return out_ids


def beam_search(model, examples, width=10, max_len=None):
    """Beam search for several sources at once.

    Every source keeps ``width`` hypotheses. Finished ones stay in the beam
    with their score frozen and compete with the extensions of live ones.
    Scores are plain sums of log-probabilities. Returns, per source, the
    final beam sorted by score.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    limits = [max_len or default_max_len(e) for e in examples]
    if min(limits) < 1:
        raise ValueError("max_len must be >= 1")
    n = len(examples)
    with no_grad():
        batch = collate(examples, dtype=model.dtype)
        ctx0 = model.prepare_batch(batch)
        state = model.initial_state(ctx0)
        ctx = ctx0
        beams = [[Hypothesis((), 0.0, False)] for _ in range(n)]
        # live rows of the decoder batch: (source index, hypothesis)
        live = [(i, beams[i][0]) for i in range(n)]
        prev = np.full(n, BOS, dtype=np.int64)
        step = 0
        while live:
            state, out = model.step(state, prev, ctx)
            logp = _log(out.probs)
            rows_of = {}
            for r, (i, _) in enumerate(live):
                rows_of.setdefault(i, []).append(r)
            next_rows, next_tokens, next_live = [], [], []
            for i, rows in rows_of.items():
                cands = [(h.score, h, None, None) for h in beams[i] if h.finished]
                for r in rows:
                    hyp = live[r][1]
                    order = np.argsort(-logp[r], kind="stable")[:width]
                    for tok in order:
                        lp = logp[r, tok]
                        if not np.isfinite(lp):
                            break
                        cands.append((hyp.score + float(lp), hyp, r, int(tok)))
                cands.sort(key=lambda c: -c[0])
                new_beam = []
                for score, hyp, r, tok in cands[:width]:
                    if r is None:
                        new_beam.append(hyp)
                        continue
                    ids = hyp.ids + (tok,)
                    fin = tok == EOS or len(ids) >= limits[i]
                    h = Hypothesis(ids, score, fin)
                    new_beam.append(h)
                    if not fin:
                        next_rows.append(r)
                        next_tokens.append(tok)
                        next_live.append((i, h))
                beams[i] = new_beam
            step += 1
            if not next_live:
                break
            rows = np.array(next_rows, dtype=np.int64)
            state = model.select_state(state, rows)
            ctx = model.select_context(ctx0, np.array([i for i, _ in next_live], dtype=np.int64))
            prev = np.array(next_tokens, dtype=np.int64)
            live = next_live
    return [sorted(b, key=lambda h: -h.score) for b in beams]


def strip_ids(ids):
    """Drop a trailing EOS (and everything after it)."""
    out = []
    for i in ids:
        if i == EOS:
            break
        out.append(i)
    return out


def render(example, ids):
    return example.ext.render(strip_ids(ids))


def beam_decode(model, example, width=10, max_len=None):
    """Ranked token sequences for one source; copied OOVs come back as strings."""
    hyps = beam_search(model, [example], width, max_len)[0]
    return [render(example, h.ids) for h in hyps]


def exact_match(predicted, gold):
    """Token-for-token equality after removing special symbols."""
    specials = {"<pad>", "<s>", "</s>"}

    def clean(seq):
        out = []
        for tok in seq:
            if tok == "</s>":
                break
            if tok not in specials:
                out.append(tok)
        return out

    return clean(predicted) == clean(gold)


@dataclass
class StepTrace:
    token: str
    ext_id: int
    prob: float
    gen_share: float
    copy_share: float
    copy_by_pos: np.ndarray
    top: list  # [(token, prob), ...]


def trace_copy(model, example, ids, top_k=5):
    """Teacher-force ``ids`` and record the mixture at every step."""
    ids = list(ids)
    if not ids or ids[-1] != EOS:
        ids = ids + [EOS]
    traces = []
    with no_grad():
        batch = collate([example], dtype=model.dtype)
        ctx = model.prepare_batch(batch)
        state = model.initial_state(ctx)
        prev = np.array([BOS])
        src = batch.src_ext[0]
        for y in ids:
            state, out = model.step(state, prev, ctx)
            probs = out.probs[0]
            joint = np.exp(out.joint_logp.data[0])
            g = out.n_gen
            gen = float(joint[y]) if y < g else 0.0
            if out.copy_by_pos is not None:
                cbp = out.copy_by_pos.data[0].astype(float)
                copy = float(cbp[src == y].sum())
            else:
                cbp = np.zeros(len(src))
                copy = 0.0
                if y >= g:
                    gen = float(joint[UNK])
            top = np.argsort(-probs, kind="stable")[:top_k]
            traces.append(StepTrace(
                example.ext.token(int(y)), int(y), float(probs[y]) if y < len(probs) else 0.0,
                gen, copy, cbp, [(example.ext.token(int(k)), float(probs[k])) for k in top],
            ))
            prev = np.array([y])
    return traces


def location_stats(example, traces):
    """Selective-read concentration and +1 moves over copy-dominated steps.

    A step counts as a copy step when its token occurs in the source and the
    copy path supplies more than half its probability. Returns the list of
    max-ρ values and a list of booleans, one per pair of consecutive copy
    steps, telling whether the top copy position advanced by exactly one.
    """
    src = np.asarray(example.src_ext)
    max_rho, advances = [], []
    prev_pos = None
    for tr in traces:
        in_src = (src == tr.ext_id).any()
        total = tr.gen_share + tr.copy_share
        is_copy = in_src and total > 0 and tr.copy_share / total > 0.5
        if not is_copy:
            prev_pos = None
            continue
        match = src == tr.ext_id
        k = tr.copy_by_pos[match].sum()
        if k > 0:
            max_rho.append(float(tr.copy_by_pos[match].max() / k))
        pos = int(np.argmax(tr.copy_by_pos))
        if prev_pos is not None:
            advances.append(pos == prev_pos + 1)
        prev_pos = pos
    return max_rho, advances


def format_heat(example, traces):
    """TSV lines: step, token, p, generate share, copy share, top-k, per-position heat."""
    lines = ["step\ttoken\tprob\tgen\tcopy\ttop\theat"]
    for t, tr in enumerate(traces):
        top = " ".join(f"{tok}:{p:.3f}" for tok, p in tr.top)
        heat = " ".join(f"{v:.3f}" for v in tr.copy_by_pos)
        lines.append(f"{t}\t{tr.token}\t{tr.prob:.4f}\t{tr.gen_share:.4f}\t{tr.copy_share:.4f}\t{top}\t{heat}")
    return lines

