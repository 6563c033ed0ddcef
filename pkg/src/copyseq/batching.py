"""Turning token sequences into padded id arrays."""
from dataclasses import dataclass

import numpy as np

from copyseq.vocab import EOS, PAD, build_extended, map_target


@dataclass
class Example:
    source: tuple
    target: tuple
    ext: object
    src_base: np.ndarray
    src_ext: np.ndarray
    tgt_ext: np.ndarray  # gold extended ids with EOS appended
    rule_type: object = None
    index: int = 0


def make_example(vocab, source, target=(), rule_type=None, index=0):
    ext = build_extended(vocab, source)
    tgt = np.array(map_target(ext, target) + [EOS], dtype=np.int64)
    return Example(
        tuple(source),
        tuple(target),
        ext,
        np.array(ext.source_base_ids, dtype=np.int64),
        np.array(ext.source_ext_ids, dtype=np.int64),
        tgt,
        rule_type,
        index,
    )


def make_examples(vocab, instances):
    return [
        make_example(vocab, inst.source, inst.target, inst.rule_type, i)
        for i, inst in enumerate(instances)
    ]


@dataclass
class Batch:
    examples: list
    src_base: np.ndarray  # (B, T), PAD-filled
    src_ext: np.ndarray  # (B, T), -1 at padding
    lengths: np.ndarray
    mask: np.ndarray  # (B, T) uint8
    tgt: np.ndarray  # (B, L), EOS-filled past each target
    tgt_mask: np.ndarray  # (B, L) float
    n_ext: int

    @property
    def size(self):
        return len(self.examples)


def collate(examples, dtype=np.float64):
    b = len(examples)
    lengths = np.array([len(e.src_base) for e in examples], dtype=np.int64)
    t_len = np.array([len(e.tgt_ext) for e in examples], dtype=np.int64)
    t_max, l_max = int(lengths.max()), int(t_len.max())
    src_base = np.full((b, t_max), PAD, dtype=np.int64)
    src_ext = np.full((b, t_max), -1, dtype=np.int64)
    tgt = np.full((b, l_max), EOS, dtype=np.int64)
    for i, e in enumerate(examples):
        src_base[i, : lengths[i]] = e.src_base
        src_ext[i, : lengths[i]] = e.src_ext
        tgt[i, : t_len[i]] = e.tgt_ext
    mask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.uint8)
    tgt_mask = (np.arange(l_max)[None, :] < t_len[:, None]).astype(dtype)
    n_ext = max(e.ext.size for e in examples)
    return Batch(examples, src_base, src_ext, lengths, mask, tgt, tgt_mask, n_ext)


def iterate_batches(examples, batch_size, rng=None, bucket=16):
    """Yield lists of examples.

    With an ``rng`` the order is shuffled, then each window of ``bucket``
    batches is sorted by source length so a batch pads little, and the batch
    order is shuffled again.
    """
    if rng is None:
        for lo in range(0, len(examples), batch_size):
            yield examples[lo: lo + batch_size]
        return
    order = rng.permutation(len(examples))
    window = batch_size * max(bucket, 1)
    chunks = []
    for lo in range(0, len(order), window):
        part = sorted(order[lo: lo + window], key=lambda i: (len(examples[i].src_base), i))
        chunks.extend(part[k: k + batch_size] for k in range(0, len(part), batch_size))
    for j in rng.permutation(len(chunks)):
        yield [examples[i] for i in chunks[j]]
