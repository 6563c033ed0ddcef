import contextlib

import numpy as np
import pytest

from copyseq import kernels
from copyseq.batching import collate, make_example
from copyseq.models import ModelConfig, Seq2Seq
from copyseq.vocab import Vocabulary


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def numeric_grad(f, arr, h=1e-5):
    """Central differences of the scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


@contextlib.contextmanager
def python_backend():
    prev = kernels.BACKEND
    kernels.use_backend("python")
    try:
        yield
    finally:
        kernels.use_backend(prev)


def model_numeric_grads(model, batch, loss_fn, h=1e-5):
    """Central differences of ``loss_fn(model, batch)`` for every parameter.

    The loss is evaluated in extended precision (longdouble, pure-Python
    kernels) so that differencing noise stays far below the smallest
    gradient entries; the perturbation is still ``h``.
    """
    params = model.named_params()
    saved = {k: p.data for k, p in params.items()}
    saved_mask = batch.tgt_mask
    grads = {}
    try:
        with python_backend():
            for p in params.values():
                p.data = p.data.astype(np.longdouble)
            batch.tgt_mask = batch.tgt_mask.astype(np.longdouble)
            for k, p in params.items():
                g = np.zeros(p.shape)
                for idx in np.ndindex(p.shape):
                    old = p.data[idx]
                    p.data[idx] = old + h
                    fp = loss_fn(model, batch).data
                    p.data[idx] = old - h
                    fm = loss_fn(model, batch).data
                    p.data[idx] = old
                    g[idx] = (fp - fm) / (2 * h)
                grads[k] = g
    finally:
        for k, p in params.items():
            p.data = saved[k]
        batch.tgt_mask = saved_mask
    return grads


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def tiny_vocab(n=8):
    return Vocabulary([f"w{i}" for i in range(n)])


def tiny_model(kind, vocab, seed=0, d_e=8, d_h=10, d_s=10, scale=0.5):
    cfg = ModelConfig(kind=kind, vocab_size=len(vocab), d_e=d_e, d_h=d_h, d_s=d_s, dtype="float64")
    model = Seq2Seq(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for p in model.named_params().values():
        p.data[...] = rng.uniform(-scale, scale, p.shape)
    return model


def tiny_batch(vocab, pairs):
    return collate([make_example(vocab, s, t, index=i) for i, (s, t) in enumerate(pairs)])


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)
