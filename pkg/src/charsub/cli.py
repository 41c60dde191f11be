"""Command-line entry points: train, build-tables, attack, campaign, census,
retrain, and the synthetic fixture generator.

A flat key=value config file can seed any subcommand's defaults via --config;
explicit flags always win.
"""

import argparse
import json
import sys
from pathlib import Path

from .data import generate_fixture, ingest_conll, ingest_sentence_csv
from .evaluation import (adversarial_records_from_rows, adversarial_retrain,
                         read_results_jsonl, run_campaign, write_results_jsonl)
from .model import TinyTransformerSpec, load_checkpoint, save_checkpoint, train_reference
from .search import AttackConfig
from .vocab import load_vocab, subword_length_census
from .visual import build_tables

_CONVENTIONS = {
    "##": "##", "wordpiece": "##",
    "Ġ": "Ġ", "gpt2": "Ġ",
    "▁": "▁", "sentencepiece": "▁",
}


def _convention(value: str) -> str:
    try:
        return _CONVENTIONS[value]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown convention {value!r}; use ##|wordpiece, gpt2, or sentencepiece"
        ) from None


def _load_dataset(path, task: str):
    return ingest_sentence_csv(path) if task == "SENTENCE" else ingest_conll(path)


def _add_io_flags(p, need_model=False, need_dataset=False):
    p.add_argument("--vocab", required=True, help="vocabulary file, one token per line")
    p.add_argument("--convention", type=_convention, default="##",
                   help="continuation-marker convention (default: ##)")
    if need_model:
        p.add_argument("--model", required=True, help="model checkpoint")
    if need_dataset:
        p.add_argument("--dataset", required=True,
                       help="sentence CSV or CoNLL file, matching the task")
    p.add_argument("--config", help="key=value file supplying flag defaults")


def _add_attack_flags(p):
    p.add_argument("--kappa", type=float, help="margin on the logit scale")
    p.add_argument("--temp", type=float, help="relaxation temperature")
    p.add_argument("--lr", type=float, help="optimizer learning rate")
    p.add_argument("--iters", type=int, help="gradient steps per word-count attempt")
    p.add_argument("--lambda-adv", type=float, help="hard-sample objective weight")
    p.add_argument("--lambda-vis", type=float, help="visual constraint weight")
    p.add_argument("--lambda-len", type=float, help="length constraint weight")
    p.add_argument("--n1", type=int, help="initial attacked-word count")
    p.add_argument("--n2", type=int, help="final attacked-word count")
    p.add_argument("--noise", choices=["gumbel", "uniform"])
    p.add_argument("--resample-noise", action="store_true",
                   help="draw fresh relaxation noise every step")
    p.add_argument("--tables", help="visual/length table cache path")
    p.add_argument("--font")
    p.add_argument("--extractor", choices=["flat", "cnn"], default="flat")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")


_ATTACK_FIELDS = [("kappa", "kappa"), ("temp", "temperature"), ("lr", "learning_rate"),
                  ("iters", "max_iter"), ("lambda_adv", "lambda_adv"),
                  ("lambda_vis", "lambda_vis"), ("lambda_len", "lambda_len"),
                  ("n1", "n1"), ("n2", "n2"), ("noise", "noise_kind")]


def _attack_config(args, task: str) -> AttackConfig:
    overrides = {}
    for flag, fieldname in _ATTACK_FIELDS:
        value = getattr(args, flag)
        if value is not None:
            overrides[fieldname] = value
    if args.resample_noise:
        overrides["resample_noise"] = True
    overrides["seed"] = args.seed
    return AttackConfig.for_task(task, **overrides)


def _load_model_and_vocab(args):
    vocab = load_vocab(args.vocab, args.convention)
    model = load_checkpoint(args.model)
    if model.vocab_sha256 and model.vocab_sha256 != vocab.sha256:
        raise RuntimeError("checkpoint was trained against a different vocabulary")
    if getattr(args, "task", None) and args.task != model.task:
        raise RuntimeError(f"checkpoint task is {model.task}, not {args.task}")
    return model, vocab


def _tables_for(args, vocab, config):
    if config.lambda_vis <= 0.0 and config.lambda_len <= 0.0:
        return None
    return build_tables(vocab, args.font, args.extractor, cache_path=args.tables)


def cmd_train(args) -> int:
    vocab = load_vocab(args.vocab, args.convention)
    dataset = _load_dataset(args.dataset, args.task)
    eval_set = _load_dataset(args.eval_dataset, args.task) if args.eval_dataset else None
    spec = TinyTransformerSpec(layers=args.layers, heads=args.heads, model_dim=args.dim,
                               ff_dim=args.ff_dim, max_len=args.max_len,
                               dropout=args.dropout)
    model = train_reference(dataset, spec, args.seed, vocab, args.task,
                            epochs=args.epochs, lr=args.lr, eval_dataset=eval_set)
    save_checkpoint(model, args.out)
    r = model.train_report
    extra = f" eval_acc={r['eval_accuracy']}" if "eval_accuracy" in r else ""
    print(f"train: task={args.task} examples={r['examples']} "
          f"train_acc={r['train_accuracy']}{extra} -> {args.out}")
    return 0


def cmd_build_tables(args) -> int:
    vocab = load_vocab(args.vocab, args.convention)
    tables = build_tables(vocab, args.font, args.extractor, cache_path=args.out)
    print(f"tables: V={vocab.size} d_v={tables.visual.d_v} "
          f"extractor={tables.visual.extractor_id} font={tables.visual.font_id} "
          f"-> {args.out}")
    return 0


def _run_attacks(args, write_report: bool) -> int:
    model, vocab = _load_model_and_vocab(args)
    dataset = _load_dataset(args.dataset, model.task)
    config = _attack_config(args, model.task)
    tables = _tables_for(args, vocab, config)
    report, rows = run_campaign(dataset, model, config, args.sample_size, args.seed,
                                vocab, tables, parallel=args.parallel,
                                dataset_id=Path(args.dataset).name,
                                model_id=Path(args.model).name)
    out = Path(args.out)
    if write_report:
        results_path = out.with_suffix(".jsonl")
        write_results_jsonl(results_path, rows)
        out.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                       encoding="utf-8")
        where = f"{out} + {results_path.name}"
    else:
        write_results_jsonl(out, rows)
        where = str(out)
    def fmt(key, digits):
        value = report.get(key)
        return "n/a" if value is None else f"{value:.{digits}f}"

    extra = (f"adv_acc={fmt('adv_accuracy', 3)}" if model.task == "SENTENCE"
             else f"adv_f1={fmt('adv_f1', 3)}")
    print(f"{'campaign' if write_report else 'attack'}: n={report['n_attempted']} "
          f"success_rate={fmt('success_rate', 3)} "
          f"mean_queries={fmt('mean_queries', 2)} {extra} -> {where}")
    return 0


def cmd_attack(args) -> int:
    return _run_attacks(args, write_report=False)


def cmd_campaign(args) -> int:
    return _run_attacks(args, write_report=True)


def cmd_census(args) -> int:
    vocab = load_vocab(args.vocab, args.convention)
    lines = ["length\tcount\tpotential\tratio"]
    for row in subword_length_census(vocab):
        lines.append(f"{row.length}\t{row.count}\t{row.potential}\t{row.ratio:.6g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"census: {len(lines) - 1} rows -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_retrain(args) -> int:
    model, vocab = _load_model_and_vocab(args)
    dataset = _load_dataset(args.dataset, model.task)
    rows = read_results_jsonl(args.adv_results)
    adv = adversarial_records_from_rows(rows, dataset, model.task)
    retrained = adversarial_retrain(model.spec, dataset, adv, args.seed, vocab,
                                    model.task, epochs=args.epochs, lr=args.lr,
                                    tag_names=model.tag_names)
    save_checkpoint(retrained, args.out)
    print(f"retrain: {len(adv)} adversarial examples added, "
          f"train_acc={retrained.train_report['train_accuracy']} -> {args.out}")
    return 0


def cmd_fixture(args) -> int:
    kind = {"sentence4": "SENTENCE4", "token-ner": "TOKEN-NER"}[args.kind]
    paths = generate_fixture(kind, args.size, args.seed, args.out, name=args.name)
    print(f"fixture: kind={args.kind} size={args.size} vocab={paths['vocab']} "
          f"data={paths['data']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="charsub",
        description="Character-level adversarial attacks via attachable-subtoken "
                    "substitution against a bundled transformer classifier.")
    sub = parser.add_subparsers(dest="command")
    submap = {}

    p = submap["train"] = sub.add_parser("train", help="train the reference classifier")
    _add_io_flags(p, need_dataset=True)
    p.add_argument("--task", choices=["SENTENCE", "TOKEN"], required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-dataset")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--ff-dim", type=int, default=128)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = submap["build-tables"] = sub.add_parser(
        "build-tables", help="render glyphs and cache the visual/length tables")
    _add_io_flags(p)
    p.add_argument("--font")
    p.add_argument("--extractor", choices=["flat", "cnn"], default="flat")
    p.add_argument("--out", required=True, help="table cache output path")
    p.set_defaults(func=cmd_build_tables)

    for name, func, report in (("attack", cmd_attack, False),
                               ("campaign", cmd_campaign, True)):
        p = submap[name] = sub.add_parser(
            name, help=("attack a dataset and write JSONL results" if not report
                        else "attack a sample and write a report plus JSONL results"))
        _add_io_flags(p, need_model=True, need_dataset=True)
        p.add_argument("--task", choices=["SENTENCE", "TOKEN"])
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--sample-size", type=int, default=100 if report else None)
        _add_attack_flags(p)
        p.set_defaults(func=func)

    p = submap["census"] = sub.add_parser(
        "census", help="attachable-subtoken length census of a vocabulary")
    _add_io_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_census)

    p = submap["retrain"] = sub.add_parser(
        "retrain", help="retrain from scratch on originals plus attack outputs")
    _add_io_flags(p, need_model=True, need_dataset=True)
    p.add_argument("--adv-results", required=True,
                   help="JSONL results produced by attack/campaign on --dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_retrain)

    p = submap["fixture"] = sub.add_parser(
        "fixture", help="generate the synthetic keyword dataset and vocabulary")
    p.add_argument("--kind", choices=["sentence4", "token-ner"], required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", help="dataset filename stem")
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.set_defaults(func=cmd_fixture)

    return parser, submap


def _read_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RuntimeError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _apply_config(argv, submap) -> None:
    """Seed the chosen subparser's defaults from --config; flags still override."""
    if not argv or argv[0] not in submap:
        return
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    if path is None:
        return
    sub = submap[argv[0]]
    actions = {a.dest: a for a in sub._actions}
    for key, raw in _read_config_file(path).items():
        action = actions.get(key)
        if action is None:
            sub.error(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type is not None else raw
            if action.choices is not None and value not in action.choices:
                sub.error(f"config key {key!r}: invalid choice {raw!r}")
        sub.set_defaults(**{key: value})


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, submap = build_parser()
    try:
        _apply_config(argv, submap)
    except SystemExit:
        raise
    except Exception as exc:  # unreadable or malformed --config file
        print(f"error: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
