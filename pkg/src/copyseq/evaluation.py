"""Exact-match accuracy by rule type, plus copy-location diagnostics."""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from copyseq.decoding import beam_search, exact_match, location_stats, render, trace_copy
from copyseq.synthdata import RULE_ORDER


def worker_count():
    """Worker pool size: ``COPYSEQ_THREADS`` if set, else 1."""
    raw = os.environ.get("COPYSEQ_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"COPYSEQ_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class Prediction:
    index: int
    tokens: list
    score: float
    hit_rank: int  # 0-based rank of the gold sequence in the final beam, -1 if absent


def predict(model, examples, width=10, max_len=None, chunk=64, workers=None):
    """Beam-decode every example; results come back in input order."""
    chunks = [examples[i: i + chunk] for i in range(0, len(examples), chunk)]

    def run(part):
        out = []
        for ex, beam in zip(part, beam_search(model, part, width, max_len)):
            rendered = [render(ex, h.ids) for h in beam]
            rank = next((r for r, toks in enumerate(rendered) if exact_match(toks, list(ex.target))), -1)
            out.append(Prediction(ex.index, rendered[0], beam[0].score, rank))
        return out

    workers = workers or worker_count()
    if workers == 1 or len(chunks) < 2:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    return [p for part in results for p in part]


def has_oov_target(example):
    return any(tok not in example.ext.base for tok in example.target)


@dataclass
class GroupScore:
    n: int = 0
    hits: dict = field(default_factory=dict)  # k -> count of gold within top-k

    def add(self, rank, topk):
        self.n += 1
        for k in topk:
            self.hits[k] = self.hits.get(k, 0) + int(0 <= rank < k)

    def accuracy(self, k):
        return self.hits.get(k, 0) / self.n if self.n else float("nan")


@dataclass
class EvalReport:
    topk: tuple
    by_type: dict  # RuleType or None -> GroupScore
    overall: GroupScore
    oov: GroupScore  # instances whose gold contains a token outside the model vocabulary
    predictions: list
    max_rho: list = field(default_factory=list)
    advances: list = field(default_factory=list)

    @property
    def mean_max_rho(self):
        return float(np.mean(self.max_rho)) if self.max_rho else float("nan")

    @property
    def advance_rate(self):
        return float(np.mean(self.advances)) if self.advances else float("nan")


def evaluate(model, examples, width=10, topk=(1,), max_len=None, diagnostics=0, workers=None):
    """Score ``examples``; ``diagnostics`` caps how many get a copy trace."""
    topk = tuple(sorted(set(topk)))
    preds = predict(model, examples, width, max_len, workers=workers)
    report = EvalReport(topk, {}, GroupScore(), GroupScore(), preds)
    for ex, p in zip(examples, preds):
        report.by_type.setdefault(ex.rule_type, GroupScore()).add(p.hit_rank, topk)
        report.overall.add(p.hit_rank, topk)
        if has_oov_target(ex):
            report.oov.add(p.hit_rank, topk)
    if model.kind == "copynet" and diagnostics:
        for ex, p in list(zip(examples, preds))[:diagnostics]:
            ids = [ex.ext.id(t) for t in p.tokens]
            rho, adv = location_stats(ex, trace_copy(model, ex, ids))
            report.max_rho += rho
            report.advances += adv
    return report


def table_header(topk_label="topk"):
    return ["model", topk_label] + [rt.label for rt in RULE_ORDER]


def table_rows(name, reports, topk):
    """One row per k: percent exact match under each rule type column.

    ``reports`` maps rule type to the report that scored it; a cell is ``-``
    when no instance of that type was evaluated.
    """
    rows = []
    for k in topk:
        row = [name, str(k)]
        for rt in RULE_ORDER:
            g = reports.get(rt)
            row.append("-" if g is None or g.n == 0 else f"{100 * g.accuracy(k):.1f}")
        rows.append(row)
    return rows
