"""Desk-scale rule-type experiments: data, one training run, and run grids."""
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from copyseq import synthdata as sd
from copyseq.batching import make_examples
from copyseq.evaluation import evaluate
from copyseq.training import TrainConfig, carve_dev, train
from copyseq.vocab import Vocabulary


@dataclass(frozen=True)
class DeskTask:
    rule_type: str = "x->x"
    seed: int = 0
    n_rules: int = 20
    per_rule: int = 100
    vocab_size: int = 100
    dev_frac: float = 0.1


def task_data(task):
    """Seeded (train, dev, test, data vocabulary) for one rule type."""
    rt = sd.RuleType.parse(task.rule_type)
    rng = np.random.default_rng(task.seed)
    rules = sd.gen_rules(rng, task.n_rules, task.vocab_size, {rt: 1.0})
    instances = []
    for r in rules:
        instances += sd.gen_instances(r, task.per_rule, rng, task.vocab_size)
    train_set, test_set = sd.split_per_rule(instances, 0.5, "shared_pool", rng, rules, task.vocab_size)
    train_set, dev_set = carve_dev(train_set, task.dev_frac, task.seed)
    return train_set, dev_set, test_set, Vocabulary(sd.data_vocab_symbols(task.vocab_size))


@dataclass
class RunOutcome:
    kind: str
    rule_type: str
    seed: int
    model_vocab: int
    epochs: int
    train_seconds: float
    eval_seconds: float
    exact_match: float
    oov_n: int
    oov_exact_match: float
    oov_tokens_emitted: int  # top-1 outputs holding a source token outside the model vocabulary
    reachable_n: int  # instances whose every gold token is in the model vocabulary or the source
    reachable_exact_match: float
    mean_max_rho: float
    advance_rate: float


@dataclass(frozen=True)
class Job:
    kind: str
    task: DeskTask
    training: dict = field(default_factory=dict)
    width: int = 10
    diagnostics: int = 200


def run_job(job):
    train_set, dev_set, test_set, data_vocab = task_data(job.task)
    cfg = TrainConfig.from_dict({**job.training, "kind": job.kind, "seed": job.task.seed})
    t0 = time.perf_counter()
    result = train(cfg, train_set, dev_set, data_vocab)
    t1 = time.perf_counter()
    vocab = Vocabulary(result.checkpoint.vocab)
    examples = make_examples(vocab, test_set)
    report = evaluate(result.model, examples, job.width, (1,), diagnostics=job.diagnostics, workers=1)
    pairs = list(zip(examples, report.predictions))
    emitted = sum(bool(set(p.tokens) & set(ex.ext.oov_symbols)) for ex, p in pairs)
    reachable = [p for ex, p in pairs if all(t in vocab or t in ex.source for t in ex.target)]
    reach_em = sum(p.hit_rank == 0 for p in reachable) / len(reachable) if reachable else float("nan")
    return RunOutcome(
        job.kind, job.task.rule_type, job.task.seed, cfg.model_vocab, len(result.history),
        t1 - t0, time.perf_counter() - t1, report.overall.accuracy(1),
        report.oov.n, report.oov.accuracy(1), emitted,
        len(reachable), reach_em, report.mean_max_rho, report.advance_rate,
    )


def default_workers():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_jobs(jobs, workers=None):
    """Run jobs in separate processes when more than one core is available."""
    workers = min(workers or default_workers(), len(jobs))
    if workers <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(run_job, jobs))


def median_exact_match(outcomes, kind, rule_type):
    vals = [o.exact_match for o in outcomes if o.kind == kind and o.rule_type == rule_type]
    return float(np.median(vals)) if vals else float("nan")


def outcome_rows(outcomes):
    return [asdict(o) for o in outcomes]
