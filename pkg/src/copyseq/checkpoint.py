"""Checkpoint file: a JSON header followed by raw little-endian arrays.

Layout::

    COPYSEQ-CKPT <version> <header-bytes>\\n
    <header JSON, utf-8>
    <array bytes in header order>

The header lists every array's name, shape, dtype and byte offset (relative
to the start of the array section), plus the model config, vocabulary,
training config and resumable training state.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = "COPYSEQ-CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    vocab: list  # regular symbols of the model vocabulary
    arrays: dict  # name -> ndarray (parameters, optimizer moments, best params)
    train_config: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)  # epoch, rng state, early-stopping bookkeeping
    meta: dict = field(default_factory=dict)

    def save(self, path):
        entries, blobs, offset = [], [], 0
        for name, arr in self.arrays.items():
            arr = np.asarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = np.ascontiguousarray(le).tobytes()
            entries.append({
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str.lstrip("<>=|"),
                "offset": offset,
                "nbytes": len(raw),
            })
            blobs.append(raw)
            offset += len(raw)
        header = json.dumps({
            "version": VERSION,
            "model": self.model_config,
            "vocab": self.vocab,
            "train": self.train_config,
            "state": self.state,
            "meta": self.meta,
            "arrays": entries,
        }).encode("utf-8")
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(f"{MAGIC} {VERSION} {len(header)}\n".encode("ascii"))
            fh.write(header)
            for raw in blobs:
                fh.write(raw)
        tmp.replace(path)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            first = fh.readline().decode("ascii", errors="replace").split()
            if len(first) != 3 or first[0] != MAGIC:
                raise CheckpointError(f"{path} is not a copyseq checkpoint")
            if int(first[1]) != VERSION:
                raise CheckpointError(f"checkpoint version {first[1]} unsupported (expected {VERSION})")
            header = json.loads(fh.read(int(first[2])).decode("utf-8"))
            payload = fh.read()
        arrays = {}
        for e in header["arrays"]:
            dt = np.dtype("<" + e["dtype"]) if e["dtype"][0] in "fiu" else np.dtype(e["dtype"])
            buf = payload[e["offset"]: e["offset"] + e["nbytes"]]
            arrays[e["name"]] = np.frombuffer(buf, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
        return cls(header["model"], header["vocab"], arrays, header.get("train", {}),
                   header.get("state", {}), header.get("meta", {}))
