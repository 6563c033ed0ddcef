"""Fixed symbol table plus the per-source extended vocabulary.

Ids 0..3 are reserved for PAD, BOS, EOS and UNK; regular symbols start at 4.
For a given source, every token missing from the table gets an extended id
``len(vocab) + k`` in order of first occurrence, which is what lets the copy
path emit words the model never saw.
"""
from dataclasses import dataclass, field
from pathlib import Path

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")
N_SPECIAL = len(SPECIALS)


class Vocabulary:
    def __init__(self, symbols):
        symbols = list(symbols)
        self.symbols = list(SPECIALS) + symbols
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")

    @property
    def n_regular(self):
        return len(self.symbols) - N_SPECIAL

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, token):
        idx = self._index.get(token)
        return idx is not None and idx >= N_SPECIAL

    def id(self, token):
        return self._index.get(token, UNK)

    def ids(self, tokens):
        return [self._index.get(t, UNK) for t in tokens]

    def token(self, idx):
        return self.symbols[idx]

    def truncated(self, n):
        """The first ``n`` regular symbols as a new vocabulary."""
        return Vocabulary(self.symbols[N_SPECIAL:N_SPECIAL + n])

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)

    def save(self, path):
        Path(path).write_text(
            "".join(s + "\n" for s in self.symbols[N_SPECIAL:]), encoding="utf-8"
        )


@dataclass(frozen=True)
class ExtendedVocab:
    base: Vocabulary
    oov_symbols: tuple
    source_base_ids: tuple
    source_ext_ids: tuple
    _oov_index: dict = field(repr=False, compare=False, hash=False)

    @property
    def size(self):
        return len(self.base) + len(self.oov_symbols)

    def id(self, token):
        if token in self.base:
            return self.base.id(token)
        slot = self._oov_index.get(token)
        if slot is not None:
            return slot
        return UNK

    def token(self, idx):
        n = len(self.base)
        if idx < n:
            return self.base.token(idx)
        return self.oov_symbols[idx - n]

    def render(self, ids, strip=True):
        """Extended ids back to strings; specials dropped when ``strip``."""
        out = []
        for i in ids:
            if strip and i < N_SPECIAL and i != UNK:
                if i == EOS:
                    break
                continue
            out.append(self.token(i))
        return out


def build_extended(vocab, source):
    if not source:
        raise ValueError("source must be nonempty")
    n = len(vocab)
    oov = {}
    base_ids, ext_ids = [], []
    for tok in source:
        if tok in vocab:
            i = vocab.id(tok)
            base_ids.append(i)
            ext_ids.append(i)
        else:
            base_ids.append(UNK)
            if tok not in oov:
                oov[tok] = n + len(oov)
            ext_ids.append(oov[tok])
    return ExtendedVocab(
        base=vocab,
        oov_symbols=tuple(oov),
        source_base_ids=tuple(base_ids),
        source_ext_ids=tuple(ext_ids),
        _oov_index=oov,
    )


def map_target(ext, target):
    return [ext.id(t) for t in target]
