"""Command-line entry point: gen-data, train, eval, decode."""
import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from copyseq import synthdata as sd
from copyseq.batching import make_examples
from copyseq.checkpoint import Checkpoint, CheckpointError
from copyseq.decoding import trace_copy, format_heat
from copyseq.evaluation import evaluate, table_header, table_rows
from copyseq.models import MODEL_KINDS
from copyseq.training import (
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    carve_dev,
    model_from_checkpoint,
    train,
)
from copyseq.vocab import Vocabulary

log = logging.getLogger("copyseq")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_types(text):
    if not text:
        return list(sd.RULE_ORDER)
    try:
        return [sd.RuleType.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# gen-data

def cmd_gen_data(args):
    types = _parse_types(args.types)
    if args.instances_per_rule < 2:
        raise ConfigError("need at least 2 instances per rule to split 50/50")
    rng = np.random.default_rng(args.seed)
    rules = sd.gen_rules(rng, args.rules, args.vocab_size, {t: 1.0 for t in types})
    instances = []
    for r in rules:
        instances += sd.gen_instances(r, args.instances_per_rule, rng, args.vocab_size)
    train_set, test_set = sd.split_per_rule(instances, 0.5, args.split, rng, rules, args.vocab_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sd.write_dataset(out / "train.tsv", train_set)
    sd.write_dataset(out / "test.tsv", test_set)
    Vocabulary(sd.data_vocab_symbols(args.vocab_size)).save(out / "vocab.txt")
    sd.write_manifest(out / "rules.tsv", rules)
    _write_json(out / "gen_config.json", {
        "rules": args.rules, "instances_per_rule": args.instances_per_rule,
        "vocab_size": args.vocab_size, "types": [t.value for t in types],
        "split": args.split, "seed": args.seed,
    })
    print(f"wrote {len(train_set)} train / {len(test_set)} test instances to {out}")
    return EXIT_OK


# train

@dataclass
class RunConfig:
    train_data: str
    vocab: str
    out_dir: str
    kinds: list = field(default_factory=lambda: ["copynet"])
    seeds: list = field(default_factory=lambda: [0])
    rule_types: list = None  # None trains on every type present
    mixed: bool = False  # one model across all selected types instead of one per type
    dev_frac: float = 0.1
    training: dict = field(default_factory=dict)  # TrainConfig fields except kind and seed

    @classmethod
    def from_dict(cls, d, base=Path(".")):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        missing = {"train_data", "vocab", "out_dir"} - set(d)
        if missing:
            raise ConfigError(f"run config lacks {sorted(missing)}")
        cfg = cls(**d)
        for k in ("train_data", "vocab", "out_dir"):
            p = Path(getattr(cfg, k))
            setattr(cfg, k, str(p if p.is_absolute() else (base / p).resolve()))
        for kind in cfg.kinds:
            if kind not in MODEL_KINDS:
                raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        if not 0 <= cfg.dev_frac < 1:
            raise ConfigError("dev_frac must be in [0, 1)")
        bad = {"kind", "seed"} & set(cfg.training)
        if bad:
            raise ConfigError(f"set {sorted(bad)} through 'kinds'/'seeds', not 'training'")
        TrainConfig.from_dict(cfg.training)  # validate early
        if cfg.rule_types is not None:
            cfg.rule_types = [sd.RuleType.parse(t).value for t in cfg.rule_types]
        return cfg


def cmd_train(args):
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    run = RunConfig.from_dict(raw, path.parent)
    if args.mixed:
        run.mixed = True
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run_config.json", asdict(run))

    data = sd.read_dataset(run.train_data)
    vocab = Vocabulary.load(run.vocab)
    wanted = None if run.rule_types is None else {sd.RuleType.parse(t) for t in run.rule_types}
    present = [rt for rt in sd.RULE_ORDER if any(i.rule_type is rt for i in data)]
    if wanted is not None:
        present = [rt for rt in present if rt in wanted]
    if not present and any(i.rule_type is None for i in data):
        run.mixed = True
    groups = {"mixed": [i for i in data if wanted is None or i.rule_type in wanted]} if run.mixed else {
        rt.value: [i for i in data if i.rule_type is rt] for rt in present
    }
    for kind in run.kinds:
        for group, instances in groups.items():
            for seed in run.seeds:
                tcfg = TrainConfig.from_dict({**run.training, "kind": kind, "seed": seed})
                run_dir = out / kind / group.replace("->", "_to_") / f"seed{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                _write_json(run_dir / "config.json", {"run": asdict(run), "train": asdict(tcfg), "group": group})
                ckpt_path = run_dir / "model.ckpt"
                resume = None
                if args.resume and ckpt_path.exists():
                    resume = Checkpoint.load(ckpt_path)
                    if resume.state.get("finished"):
                        log.info("%s already finished, skipping", run_dir)
                        continue
                tr, dev = carve_dev(instances, run.dev_frac, seed)
                log.info("training %s on %s (%d train, %d dev), seed %d", kind, group, len(tr), len(dev), seed)
                metrics = run_dir / "metrics.tsv"
                if resume is None and metrics.exists():
                    metrics.unlink()
                meta = {"kind": kind, "group": group, "seed": seed}
                result = train(tcfg, tr, dev, vocab, metrics_path=metrics, resume=resume, meta=meta,
                               on_epoch=lambda c, p=ckpt_path: c.save(p))
                result.checkpoint.save(ckpt_path)
                last = result.history[-1] if result.history else None
                print(f"{kind}\t{group}\tseed{seed}\tepochs={len(result.history)}"
                      f"\tdev_em={result.checkpoint.state['best_em']:.3f}"
                      + (f"\ttrain_loss={last.train_loss:.4f}" if last else ""))
    return EXIT_OK


# eval

def _load_model(path):
    try:
        ckpt = Checkpoint.load(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    model, vocab = model_from_checkpoint(ckpt)
    return ckpt, model, vocab


def _parse_topk(text, width):
    try:
        ks = sorted({int(k) for k in text.split(",") if k.strip()})
    except ValueError:
        raise ConfigError(f"bad --topk {text!r}") from None
    if not ks or ks[0] < 1:
        raise ConfigError("--topk values must be >= 1")
    if ks[-1] > width:
        raise ConfigError(f"--topk {ks[-1]} exceeds beam width {width}")
    return ks


def cmd_eval(args):
    topk = _parse_topk(args.topk, args.beam)
    data = sd.read_dataset(args.data)
    rows, diag = [], []
    by_name = {}
    for path in args.checkpoint:
        ckpt, model, vocab = _load_model(path)
        group = ckpt.meta.get("group", "mixed")
        insts = data if group == "mixed" else [i for i in data if i.rule_type is sd.RuleType.parse(group)]
        if not insts:
            log.warning("%s: no %s instances in %s", path, group, args.data)
            continue
        examples = make_examples(vocab, insts)
        report = evaluate(model, examples, args.beam, topk, diagnostics=args.diagnostics)
        name = args.name or ckpt.meta.get("kind", model.kind)
        slot = by_name.setdefault(name, {})
        for rt, g in report.by_type.items():
            if rt is not None:
                slot[rt] = g
        if model.kind == "copynet":
            diag.append([name, group, f"{report.mean_max_rho:.4f}", f"{report.advance_rate:.4f}",
                         str(len(report.max_rho)), str(len(report.advances))])
    for name, reports in by_name.items():
        rows += table_rows(name, reports, topk)
    lines = ["\t".join(table_header())] + ["\t".join(r) for r in rows]
    if diag:
        lines += ["", "\t".join(["model", "group", "mean_max_rho", "advance_rate", "copy_steps", "copy_pairs"])]
        lines += ["\t".join(d) for d in diag]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


# decode

def cmd_decode(args):
    ckpt, model, vocab = _load_model(args.checkpoint)
    insts = sd.read_dataset(args.input)
    examples = make_examples(vocab, insts)
    report = evaluate(model, examples, args.beam, (1,))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("source\tgold\tprediction\tlogprob\tmatch\n")
        for ex, p in zip(examples, report.predictions):
            match = int(p.hit_rank == 0) if ex.target else ""
            out.write(f"{' '.join(ex.source)}\t{' '.join(ex.target)}\t{' '.join(p.tokens)}\t{p.score:.4f}\t{match}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.dump_copy_heat:
        with open(args.dump_copy_heat, "w", encoding="utf-8") as fh:
            for ex, p in zip(examples, report.predictions):
                fh.write(f"# {ex.index}\t{' '.join(ex.source)}\n")
                traces = trace_copy(model, ex, [ex.ext.id(t) for t in p.tokens])
                fh.write("\n".join(format_heat(ex, traces)) + "\n\n")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="copyseq", description="Copy-augmented sequence-to-sequence toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic rule benchmark")
    g.add_argument("--rules", type=int, default=20)
    g.add_argument("--instances-per-rule", type=int, default=100)
    g.add_argument("--vocab-size", type=int, default=100)
    g.add_argument("--types", default="", help="comma-separated rule types, e.g. x->x,xy->xy (default: all)")
    g.add_argument("--split", choices=["shared_pool", "disjoint_fillers"], default="shared_pool")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train models from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--mixed", action="store_true", help="one model across all rule types")
    t.add_argument("--resume", action="store_true", help="continue unfinished runs from their checkpoints")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-rule-type exact-match table")
    e.add_argument("--checkpoint", required=True, nargs="+")
    e.add_argument("--data", required=True)
    e.add_argument("--beam", type=int, default=10)
    e.add_argument("--topk", default="1,10")
    e.add_argument("--name", default=None, help="row label (default: model kind)")
    e.add_argument("--diagnostics", type=int, default=200, help="instances traced for copy-location stats")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="beam-decode a TSV of sources")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--beam", type=int, default=10)
    d.add_argument("--out", default=None)
    d.add_argument("--dump-copy-heat", default=None, metavar="FILE")
    d.set_defaults(func=cmd_decode)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "beam", 1) < 1:
        print("error: --beam must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, sd.ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
