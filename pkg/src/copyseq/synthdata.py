"""Random rule-transduction benchmark.

A rule is a source pattern of literal symbols plus one or two variables and a
target pattern that keeps, repeats or drops the variables. Instances fill the
variables with random symbol strings of length 1..15.
"""
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VAR_X = "X"
VAR_Y = "Y"
MIN_SOURCE, MAX_SOURCE = 5, 20
MIN_FILL, MAX_FILL = 1, 15
MIN_SEGMENT, MAX_SEGMENT = 1, 5


class RuleType(enum.Enum):
    XtoEmpty = "x->0"
    XtoX = "x->x"
    XtoXX = "x->xx"
    XYtoX = "xy->x"
    XYtoXY = "xy->xy"

    @property
    def variables(self):
        return (VAR_X, VAR_Y) if self.name.startswith("XY") else (VAR_X,)

    @property
    def target_slots(self):
        return {
            RuleType.XtoEmpty: (),
            RuleType.XtoX: (VAR_X,),
            RuleType.XtoXX: (VAR_X, VAR_X),
            RuleType.XYtoX: (VAR_X,),
            RuleType.XYtoXY: (VAR_X, VAR_Y),
        }[self]

    @property
    def label(self):
        return self.value.replace("->", "\u2192").replace("\u21920", "\u2192\u2205")

    @classmethod
    def parse(cls, name):
        name = name.strip().replace("\u2192", "->").replace("\u2205", "0")
        for rt in cls:
            if name in (rt.name, rt.value):
                return rt
        raise ValueError(f"unknown rule type {name!r}; expected one of {[r.name for r in cls]}")


# column order of the accuracy report
RULE_ORDER = tuple(RuleType)


class ConfigError(ValueError):
    pass


def symbol(i):
    return "w%04d" % i


@dataclass(frozen=True)
class RuleTemplate:
    rule_id: int
    rule_type: RuleType
    source_pattern: tuple
    target_pattern: tuple

    def substitute(self, fills):
        """Expand both patterns with ``fills`` mapping variable -> token tuple."""
        def expand(pattern):
            out = []
            for el in pattern:
                if el in fills:
                    out.extend(fills[el])
                else:
                    out.append(el)
            return out

        return expand(self.source_pattern), expand(self.target_pattern)

    def pattern_text(self):
        return " ".join(self.source_pattern) + " -> " + " ".join(self.target_pattern)


@dataclass(frozen=True)
class Instance:
    source: tuple
    target: tuple
    rule_id: int
    rule_type: RuleType
    fills: tuple = ()  # ((var, tokens), ...)

    def realization_strings(self):
        return {" ".join(toks) for _, toks in self.fills}


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _type_counts(n_rules, per_type_mix):
    """Largest-remainder apportionment of ``n_rules`` over the mix weights."""
    types = [RuleType.parse(t) if isinstance(t, str) else t for t in per_type_mix]
    w = np.array([per_type_mix[t] for t in per_type_mix], dtype=float)
    if (w < 0).any() or w.sum() <= 0:
        raise ConfigError("rule type mix needs nonnegative weights with a positive sum")
    quota = n_rules * w / w.sum()
    counts = np.floor(quota).astype(int)
    order = sorted(range(len(w)), key=lambda i: (-(quota[i] - counts[i]), i))
    for i in order[: n_rules - counts.sum()]:
        counts[i] += 1
    needed = int((w > 0).sum())
    if n_rules < needed:
        raise ConfigError(f"{n_rules} rules cannot cover {needed} rule types")
    return dict(zip(types, counts.tolist()))


def _make_rule(rule_id, rule_type, rng, n_symbols):
    variables = list(rule_type.variables)
    length = int(rng.integers(MIN_SOURCE, MAX_SOURCE + 1))
    n_lit = length - len(variables)
    if n_lit < 1:
        raise ConfigError("source pattern has no room for literals")
    rng.shuffle(variables)
    slots = np.sort(rng.choice(length, size=len(variables), replace=False))
    source = [symbol(int(s)) for s in rng.integers(0, n_symbols, size=length)]
    for pos, var in zip(slots, variables):
        source[pos] = var

    target = []
    segments = rule_type.target_slots
    for k in range(len(segments) + 1):
        seg_len = int(rng.integers(MIN_SEGMENT, MAX_SEGMENT + 1))
        target.extend(symbol(int(s)) for s in rng.integers(0, n_symbols, size=seg_len))
        if k < len(segments):
            target.append(segments[k])
    return RuleTemplate(rule_id, rule_type, tuple(source), tuple(target))


def gen_rules(seed, n_rules, vocab_size=1000, per_type_mix=None):
    """Sample ``n_rules`` templates; types are assigned in canonical order."""
    if vocab_size < 10:
        raise ConfigError("vocab_size must be at least 10")
    if per_type_mix is None:
        per_type_mix = {rt: 1.0 for rt in RuleType}
    counts = _type_counts(n_rules, per_type_mix)
    rng = _rng(seed)
    rules = []
    for rt in RULE_ORDER:
        for _ in range(counts.get(rt, 0)):
            rules.append(_make_rule(len(rules), rt, rng, vocab_size))
    return rules


def _fill(rng, n_symbols):
    n = int(rng.integers(MIN_FILL, MAX_FILL + 1))
    return tuple(symbol(int(s)) for s in rng.integers(0, n_symbols, size=n))


def _instantiate(rule, rng, n_symbols):
    fills = {v: _fill(rng, n_symbols) for v in rule.rule_type.variables}
    src, tgt = rule.substitute(fills)
    return Instance(tuple(src), tuple(tgt), rule.rule_id, rule.rule_type, tuple(sorted(fills.items())))


def gen_instances(rule, n, seed, vocab_size=1000):
    if n < 1:
        raise ConfigError("need at least one instance")
    rng = _rng(seed)
    return [_instantiate(rule, rng, vocab_size) for _ in range(n)]


def split_dataset(instances, train_frac=0.5, mode="shared_pool", seed=0, rules=None, vocab_size=1000):
    """Random train/test split.

    In ``disjoint_fillers`` mode, any test instance whose variable filling also
    occurs in the training half is re-drawn from its rule (``rules`` maps
    rule_id to template) until no filling is shared.
    """
    rng = _rng(seed)
    n_train = int(round(train_frac * len(instances)))
    perm = rng.permutation(len(instances))
    train = [instances[i] for i in perm[:n_train]]
    test = [instances[i] for i in perm[n_train:]]
    if mode == "shared_pool":
        return train, test
    if mode != "disjoint_fillers":
        raise ConfigError(f"unknown split mode {mode!r}")
    if rules is None:
        raise ConfigError("disjoint_fillers needs the rule templates to redraw fillings")
    by_id = rules if isinstance(rules, dict) else {r.rule_id: r for r in rules}
    seen = set().union(*(inst.realization_strings() for inst in train)) if train else set()
    fixed = []
    for inst in test:
        tries = 0
        while inst.realization_strings() & seen:
            tries += 1
            if tries > 10000:
                raise ConfigError("could not draw a filling disjoint from the training half")
            inst = _instantiate(by_id[inst.rule_id], rng, vocab_size)
        fixed.append(inst)
    return train, fixed


def split_per_rule(instances, train_frac=0.5, mode="shared_pool", seed=0, rules=None, vocab_size=1000):
    """Split every rule's instances separately so each rule appears in both halves."""
    rng = _rng(seed)
    groups = {}
    for inst in instances:
        groups.setdefault(inst.rule_id, []).append(inst)
    train, test = [], []
    for rid in sorted(groups):
        a, b = split_dataset(groups[rid], train_frac, mode, rng, rules, vocab_size)
        train += a
        test += b
    return train, test


def write_dataset(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                f"{' '.join(inst.source)}\t{' '.join(inst.target)}\t{inst.rule_id}\t{inst.rule_type.name}\n"
            )


def read_dataset(path):
    """Read the 4-column TSV; plain 2-column parallel corpora are accepted too."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        cols = line.split("\t")
        src = tuple(cols[0].split())
        tgt = tuple(cols[1].split()) if len(cols) > 1 else ()
        rule_id = int(cols[2]) if len(cols) > 2 else -1
        rtype = RuleType.parse(cols[3]) if len(cols) > 3 else None
        out.append(Instance(src, tgt, rule_id, rtype))
    return out


def write_manifest(path, rules):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rules:
            fh.write(f"{r.rule_id}\t{r.rule_type.name}\t{r.pattern_text()}\n")


def read_manifest(path):
    rules = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rid, rtype, text = line.split("\t")
        src, tgt = text.split(" -> ")
        rules.append(RuleTemplate(int(rid), RuleType[rtype], tuple(src.split()), tuple(tgt.split())))
    return rules


def data_vocab_symbols(vocab_size):
    return [symbol(i) for i in range(vocab_size)]
