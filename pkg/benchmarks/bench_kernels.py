"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200] [--dtype float32]

Reports per-kernel microseconds for both backends and the wall time of a
full CopyNet train step (forward, backward, Adam) on a desk-scale batch.
"""
import argparse
import timeit

import numpy as np

from copyseq import kernels
from copyseq import synthdata as sd
from copyseq.batching import collate, make_examples
from copyseq.models import ModelConfig, Seq2Seq
from copyseq.training import Adam, batch_loss, clip_grad_norm
from copyseq.vocab import Vocabulary


def kernel_cases(dtype, b=32, d=128, k=160, t=24, n_gen=104):
    rng = np.random.default_rng(0)

    def r(*shape):
        return rng.standard_normal(shape).astype(dtype)

    h, z, n = r(b, d), r(b, d), np.tanh(r(b, d))
    h2 = np.hstack([h, h])
    active = np.ones(b, dtype=np.uint8)
    mask = (rng.random((b, k)) < 0.9).astype(np.uint8)
    mask[:, 0] = 1
    x = r(b, k)
    lsm = kernels._kernels_py.log_softmax_fwd(x, mask)
    lse = kernels._kernels_py.logsumexp_fwd(x, mask)
    p = np.abs(r(b, t))
    match = (rng.random((b, t)) < 0.3).astype(np.uint8)
    rho = kernels._kernels_py.selective_fwd(p, match)
    src_ext = rng.integers(0, n_gen + 4, size=(b, t)).astype(np.int64)
    pm = np.abs(r(b, n_gen + t))
    ids = rng.integers(0, 100, size=b * t).astype(np.int64)
    return {
        "gru_fwd_zr": lambda: kernels.gru_fwd_zr(h2, h2, h),
        "gru_fwd_out": lambda: kernels.gru_fwd_out(h, h, z, h, active),
        "gru_bwd_out": lambda: kernels.gru_bwd_out(h, z, n, h, active),
        "gru_bwd_r": lambda: kernels.gru_bwd_r(h, h, z),
        "log_softmax_fwd": lambda: kernels.log_softmax_fwd(x, mask),
        "log_softmax_bwd": lambda: kernels.log_softmax_bwd(x, lsm, mask),
        "logsumexp_fwd": lambda: kernels.logsumexp_fwd(x, mask),
        "logsumexp_bwd": lambda: kernels.logsumexp_bwd(lse, x, mask, lse),
        "scatter_add_rows": lambda: kernels.scatter_add_rows(np.zeros((100, d), dtype=dtype), ids,
                                                             np.ones((b * t, d), dtype=dtype)),
        "selective_fwd": lambda: kernels.selective_fwd(p, match),
        "selective_bwd": lambda: kernels.selective_bwd(p, p, match, rho),
        "mixture_scatter": lambda: kernels.mixture_scatter(pm, src_ext, n_gen, n_gen + 4),
    }


def train_step_case(dtype):
    rules = sd.gen_rules(0, 4, 100, {sd.RuleType.XtoX: 1.0})
    insts = [i for r in rules for i in sd.gen_instances(r, 8, 1, 100)]
    vocab = Vocabulary(sd.data_vocab_symbols(100))
    batch = collate(make_examples(vocab, insts), dtype=dtype)
    model = Seq2Seq(ModelConfig("copynet", len(vocab), 64, 128, 128, dtype=np.dtype(dtype).name),
                    np.random.default_rng(0))
    params = model.named_params()
    opt = Adam(params)

    def step():
        loss = batch_loss(model, batch)
        opt.zero_grad()
        loss.backward()
        clip_grad_norm(params.values(), 5.0)
        opt.step()

    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=10)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args()
    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled extension not built; only the numpy backend is available")
    timings = {}
    for be in backends:
        kernels.use_backend(be)
        for name, fn in kernel_cases(args.dtype).items():
            fn()
            timings[(be, name)] = min(timeit.repeat(fn, number=args.repeat, repeat=3)) / args.repeat * 1e6
        step = train_step_case(args.dtype)
        step()
        timings[(be, "train_step")] = min(timeit.repeat(step, number=args.steps, repeat=3)) / args.steps * 1e6
    names = list(kernel_cases(args.dtype)) + ["train_step"]
    print("kernel\t" + "\t".join(f"{be}_us" for be in backends) + ("\tspeedup" if len(backends) > 1 else ""))
    for name in names:
        row = [f"{timings[(be, name)]:.1f}" for be in backends]
        if len(backends) > 1:
            row.append(f"{timings[('python', name)] / timings[('cython', name)]:.2f}x")
        print(name + "\t" + "\t".join(row))
    kernels.use_backend(backends[0])


if __name__ == "__main__":
    main()
