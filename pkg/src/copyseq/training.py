"""Teacher-forced maximum-likelihood training."""
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from copyseq import autodiff as ad
from copyseq.autodiff import Tensor
from copyseq.batching import collate, iterate_batches, make_examples
from copyseq.checkpoint import Checkpoint, CheckpointError
from copyseq.decoding import exact_match, greedy_decode
from copyseq.models import ModelConfig, Seq2Seq
from copyseq.vocab import UNK, Vocabulary

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    kind: str = "copynet"
    batch_size: int = 32
    epochs: int = 50
    lr: float = 1e-3
    clip: float = 5.0
    seed: int = 0
    d_e: int = 64
    d_h: int = 128
    d_s: int = 128
    d_att: int = 0
    model_vocab: int = 0  # regular symbols kept in the model vocabulary; 0 keeps all
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    max_unroll: int = 200
    dtype: str = "float32"

    def __post_init__(self):
        for f in ("batch_size", "epochs", "lr", "clip", "d_e", "d_h", "d_s", "patience", "max_unroll"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"{f} must be positive")
        if self.model_vocab < 0:
            raise ConfigError("model_vocab must be >= 0")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def model_config(self, vocab_size):
        return ModelConfig(self.kind, vocab_size, self.d_e, self.d_h, self.d_s, self.d_att, self.dtype)


def target_match(out, y, src_ext):
    """Indicator over the output slots whose mass makes up p(y_t).

    Generate slot ``y`` when ``y`` is in the fixed vocabulary, plus every copy
    slot whose source token is ``y``. A target nothing can produce falls back
    to the UNK generate slot.
    """
    g = out.n_gen
    b = len(y)
    has_copy = out.copy_by_pos is not None
    k = g + src_ext.shape[1] if has_copy else g
    m = np.zeros((b, k), dtype=np.uint8)
    in_v = y < g
    m[np.nonzero(in_v)[0], y[in_v]] = 1
    if has_copy:
        m[:, g:] = src_ext == y[:, None]
    m[~m.any(axis=1), UNK] = 1
    return m


def nll_loss(outputs, targets, target_mask, src_ext):
    """−(1/B) Σ_b Σ_t log p(y_t | y_<t, X) over unmasked steps."""
    b, steps = targets.shape
    if len(outputs) != steps:
        raise ConfigError(f"{len(outputs)} decoder outputs for {steps} target steps")
    lps = [
        ad.masked_logsumexp(out.joint_logp, target_match(out, targets[:, t], src_ext))
        for t, out in enumerate(outputs)
    ]
    lp = ad.stack(lps, axis=1)
    total = ad.sum(ad.mul(lp, Tensor(np.asarray(target_mask, dtype=lp.dtype))))
    return ad.mul(total, -1.0 / b)


def batch_loss(model, batch):
    return nll_loss(model.teacher_forced(batch), batch.tgt, batch.tgt_mask, batch.src_ext)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                          for p in params if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_exact_match: float


@dataclass
class EarlyStopping:
    """Keeps the best-on-dev parameters and counts epochs without progress.

    The kept parameters maximize dev exact match, ties going to lower dev
    loss. Exact match on a small dev set moves in coarse steps and can sit
    still for many epochs, so an epoch that lowers the best dev loss also
    counts as progress.
    """

    patience: int
    best_em: float = -1.0
    best_loss_at_em: float = math.inf
    best_loss: float = math.inf
    bad_epochs: int = 0

    @property
    def stop(self):
        return self.bad_epochs >= self.patience

    def update(self, dev_em, dev_loss):
        """Record one epoch; returns True when its parameters are the new best."""
        better = dev_em > self.best_em or (dev_em == self.best_em and dev_loss < self.best_loss_at_em)
        if better:
            self.best_em, self.best_loss_at_em = dev_em, dev_loss
        if better or dev_loss < self.best_loss:
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        self.best_loss = min(self.best_loss, dev_loss)
        return better

    def to_state(self):
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else None)
                for k, v in asdict(self).items()}

    @classmethod
    def from_state(cls, d):
        return cls(**{k: (math.inf if v is None else v) for k, v in d.items()})


@dataclass
class TrainResult:
    model: Seq2Seq
    checkpoint: Checkpoint
    history: list = field(default_factory=list)


def model_vocabulary(data_vocab, config):
    if config.model_vocab and config.model_vocab < data_vocab.n_regular:
        return data_vocab.truncated(config.model_vocab)
    return data_vocab


def evaluate_exact_match(model, examples, chunk=128):
    if not examples:
        return float("nan")
    hits = 0
    for lo in range(0, len(examples), chunk):
        part = examples[lo: lo + chunk]
        for ex, ids in zip(part, greedy_decode(model, part)):
            hits += exact_match(ex.ext.render(ids), list(ex.target))
    return hits / len(examples)


def evaluate_loss(model, examples, batch_size=64):
    if not examples:
        return float("nan")
    total = 0.0
    with ad.no_grad():
        for part in iterate_batches(examples, batch_size):
            batch = collate(part, dtype=model.dtype)
            total += float(batch_loss(model, batch).data) * batch.size
    return total / len(examples)


def _snapshot(model):
    return {k: p.data.copy() for k, p in model.named_params().items()}


def make_checkpoint(model, vocab, config, opt, rng, epoch, best, stopper, history, meta=None):
    arrays = {}
    for k, p in model.named_params().items():
        arrays[f"param/{k}"] = p.data
    for k in opt.m:
        arrays[f"adam.m/{k}"] = opt.m[k]
        arrays[f"adam.v/{k}"] = opt.v[k]
    if best is not None:
        for k, a in best.items():
            arrays[f"best/{k}"] = a
    state = {
        "epoch": epoch,
        "rng": rng.bit_generator.state,
        "adam_t": opt.t,
        "early_stopping": stopper.to_state(),
        "best_em": stopper.best_em,
        "history": [asdict(h) for h in history],
        "finished": epoch >= config.epochs or stopper.stop,
    }
    return Checkpoint(model.config.to_dict(), vocab.symbols[4:], arrays, asdict(config), state, meta or {})


def model_from_checkpoint(ckpt, which="best"):
    """Rebuild a model; ``which`` picks the best-on-dev or the last parameters."""
    try:
        cfg = ModelConfig(**ckpt.model_config)
    except TypeError as exc:
        raise CheckpointError(f"checkpoint model config does not match this version: {exc}") from None
    model = Seq2Seq(cfg)
    prefix = "best/" if which == "best" and any(k.startswith("best/") for k in ckpt.arrays) else "param/"
    for k, p in model.named_params().items():
        key = prefix + k
        if key not in ckpt.arrays:
            raise CheckpointError(f"checkpoint lacks parameter {k!r} for model kind {cfg.kind!r}")
        arr = ckpt.arrays[key]
        if arr.shape != p.shape:
            raise CheckpointError(f"parameter {k!r} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(p.dtype).copy()
    return model, Vocabulary(ckpt.vocab)


def carve_dev(instances, frac, seed):
    """Hold out a seeded fraction of the training set for early stopping."""
    if frac == 0 or len(instances) < 2:
        return list(instances), []
    perm = np.random.default_rng(seed).permutation(len(instances))
    n_dev = max(1, int(round(frac * len(instances))))
    dev = [instances[i] for i in sorted(perm[:n_dev])]
    rest = [instances[i] for i in sorted(perm[n_dev:])]
    return rest, dev


def _write_metrics(path, rows):
    if path is None:
        return
    path = Path(path)
    new = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write("epoch\tsplit\tloss\texact_match\n")
        for row in rows:
            fh.write("\t".join("" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v)) for v in row) + "\n")


def train(config, train_instances, dev_instances, data_vocab, metrics_path=None,
          resume=None, max_epochs=None, meta=None, on_epoch=None):
    """Fit one model and return the best-on-dev parameters.

    ``resume`` continues from a checkpoint written by an earlier call;
    ``max_epochs`` bounds the epochs run in this call (for interruption).
    ``on_epoch`` receives a resumable checkpoint after every epoch.
    """
    if not train_instances:
        raise ConfigError("training set is empty")
    vocab = model_vocabulary(data_vocab, config)
    train_ex = make_examples(vocab, train_instances)
    dev_ex = make_examples(vocab, dev_instances or [])
    longest = max(len(e.tgt_ext) for e in train_ex)
    if longest > config.max_unroll:
        raise ConfigError(f"target of {longest} steps exceeds max_unroll={config.max_unroll}")

    rng = np.random.default_rng(config.seed)
    model = Seq2Seq(config.model_config(len(vocab)), rng)
    opt = Adam(model.named_params(), config.lr, config.beta1, config.beta2, config.eps)
    epoch, best, history = 0, None, []
    stopper = EarlyStopping(config.patience)
    if resume is not None:
        if resume.model_config != model.config.to_dict():
            raise CheckpointError("resume checkpoint was written for a different model config")
        for k, p in model.named_params().items():
            p.data = resume.arrays[f"param/{k}"].copy()
            opt.m[k] = resume.arrays[f"adam.m/{k}"].copy()
            opt.v[k] = resume.arrays[f"adam.v/{k}"].copy()
        rng.bit_generator.state = resume.state["rng"]
        opt.t = resume.state["adam_t"]
        epoch = resume.state["epoch"]
        stopper = EarlyStopping.from_state(resume.state["early_stopping"])
        history = [EpochMetrics(**h) for h in resume.state["history"]]
        if any(k.startswith("best/") for k in resume.arrays):
            best = {k[5:]: a.copy() for k, a in resume.arrays.items() if k.startswith("best/")}

    params = list(model.named_params().values())
    stop_at = config.epochs if max_epochs is None else min(config.epochs, epoch + max_epochs)
    while epoch < stop_at and not stopper.stop:
        total, seen = 0.0, 0
        for k, part in enumerate(iterate_batches(train_ex, config.batch_size, rng)):
            batch = collate(part, dtype=model.dtype)
            loss = batch_loss(model, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch + 1}, batch {k}")
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(params, config.clip)
            opt.step()
            total += value * batch.size
            seen += batch.size
        epoch += 1
        dev_em = evaluate_exact_match(model, dev_ex) if dev_ex else float("nan")
        dev_loss = evaluate_loss(model, dev_ex) if dev_ex else float("nan")
        m = EpochMetrics(epoch, total / seen, dev_loss, dev_em)
        history.append(m)
        log.info("epoch %d train_loss %.4f dev_loss %.4f dev_em %.4f", epoch, m.train_loss, dev_loss, dev_em)
        _write_metrics(metrics_path, [(epoch, "train", m.train_loss, None), (epoch, "dev", dev_loss, dev_em)])
        if dev_ex and stopper.update(dev_em, dev_loss):
            best = _snapshot(model)
        if on_epoch is not None:
            on_epoch(make_checkpoint(model, vocab, config, opt, rng, epoch, best, stopper, history, meta))

    ckpt = make_checkpoint(model, vocab, config, opt, rng, epoch, best, stopper, history, meta)
    if best is not None:
        for k, p in model.named_params().items():
            p.data = best[k].copy()
    return TrainResult(model, ckpt, history)
