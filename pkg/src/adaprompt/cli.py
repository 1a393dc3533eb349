"""Command-line entry point: ``adaprompt {train,eval,split,verbalize,pretrain,synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import torch

from . import __version__
from .config import RunConfig, build_backend, read_corpus
from .data import Dataset
from .errors import AdaPromptError, ConfigError, DataFormatError
from .harness import (
    ALL,
    HeadMethod,
    MajorityMethod,
    PromptMethod,
    format_table,
    micro_f1,
    reports_to_json,
    run_experiment,
    sample_split,
)
from .prompts import render_prompt
from .scoring import LabelScorer
from .training import HeadClassifier, HeadModel, TrainingLog
from .verbalizer import RuleConfig, build_schema, label_words, load_schema_labels

log = logging.getLogger("adaprompt")


def _fail(exc: Exception, code: int) -> int:
    err = {"error": getattr(exc, "code", type(exc).__name__), "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    return code


def _k_value(text: str):
    return ALL if text == ALL else int(text)


def _add_run_options(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--dataset", help="directory with train/dev/test .jsonl files")
    p.add_argument("--rules", help="label decomposition rule config (JSON)")
    p.add_argument("--na-label", dest="na_label")
    p.add_argument("--template", choices=["copula", "relation-between"])
    p.add_argument("--scoring", choices=["summed-logit", "marginal"])
    p.add_argument("--method", choices=["adaprompt", "head-finetune", "majority"])
    p.add_argument("--k", dest="k_values", type=_k_value, nargs="+", help="shots per class, or 'all'")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--backend", help="toy or external:<adapter>")
    p.add_argument("--backend-checkpoint", dest="backend_checkpoint")
    p.add_argument("--no-entity-loss", dest="entity_loss", action="store_const", const=False)
    p.add_argument("--lambda-e", dest="lambda_e", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--output-dir", dest="output_dir")


def _run_config(args, need_dataset: bool = True) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: getattr(args, k, None) for k in (
        "dataset", "rules", "na_label", "template", "scoring", "method", "k_values", "seeds",
        "backend", "backend_checkpoint", "entity_loss", "lambda_e", "batch_size", "output_dir")}
    return config.override(**overrides).validate(need_dataset)


def _prepare_output(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schema_for(config: RunConfig, dataset: Dataset):
    return dataset.schema(config.na_label, config.rule_config())


def _backend_for(config: RunConfig, dataset: Dataset, schema):
    corpus = [list(ex.tokens) for ex in dataset.train]
    return build_backend(config, corpus, extra_words=set(label_words(schema)))


def _save_model(directory: Path, config: RunConfig, schema, method: str, model):
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"method": method, "template": config.template, "markers": list(config.markers),
            "scoring": config.scoring, "backend": config.backend}
    if method == "majority":
        meta["majority_class"] = model
    elif method == "adaprompt":
        model.backend.save(directory / "backend")
    else:
        model.backend.save(directory / "backend")
        torch.save(model.head.state_dict(), directory / "head.pt")
    (directory / "schema.json").write_text(json.dumps(
        {"labels": schema.export(), "na_label": schema.na_label.raw if schema.na_label else None,
         "rules": schema.rules.to_dict()}, indent=2))
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def cmd_train(args) -> int:
    try:
        config = _run_config(args)
        dataset = Dataset.load(config.dataset)
        schema = _schema_for(config, dataset)
    except (AdaPromptError, OSError) as exc:
        return _fail(exc, 2)
    out = _prepare_output(config.output_dir)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    sink = TrainingLog(out / "train_log.jsonl")
    try:
        template = config.prompt_template()
        if config.method == "majority":
            method = MajorityMethod(schema)
        else:
            backend = _backend_for(config, dataset, schema)
            factory = backend.clone
            if config.method == "adaprompt":
                method = PromptMethod(factory, schema, template, config.entity_loss, config.lambda_e,
                                      config.scoring, config.batch_size, sink)
            else:
                method = HeadMethod(factory, schema, template, config.batch_size, sink)

        def keep(split, result):
            _save_model(out / "checkpoints" / f"k{split.k}_seed{split.seed}", config, schema,
                        config.method, result.model)

        reports = run_experiment(dataset, config.k_values, config.seeds, config.hparam_grid(), method,
                                 schema, report_path=out / "report.json", budget=config.budget,
                                 on_split=keep)
    except AdaPromptError as exc:
        return _fail(exc, 1)
    finally:
        sink.close()
    (out / "report.json").write_text(reports_to_json(reports))
    table = format_table(reports)
    (out / "report.txt").write_text(table)
    print(table, end="")
    return 0


def _load_checkpoint(path: Path, config: RunConfig):
    meta_path = path / "meta.json"
    if not meta_path.exists():
        # a bare backend checkpoint: zero-shot prompt scoring
        from .backend.toy import ToyBackend

        return {"method": "adaprompt", "template": config.template, "scoring": config.scoring,
                "markers": config.markers}, ToyBackend.load(path), None
    meta = json.loads(meta_path.read_text())
    schema = None
    if (path / "schema.json").exists():
        data = json.loads((path / "schema.json").read_text())
        schema = build_schema([item["label"] for item in data["labels"]], data["na_label"],
                              RuleConfig.from_dict(data["rules"]))
    backend = None
    if meta["method"] != "majority":
        if meta.get("backend", "toy").startswith("external:"):
            from .backend.hf import load_external

            backend = load_external(meta["backend"].split(":", 1)[1], path / "backend",
                                    markers=tuple(meta["markers"]))
        else:
            from .backend.toy import ToyBackend

            backend = ToyBackend.load(path / "backend")
    return meta, backend, schema


def cmd_eval(args) -> int:
    try:
        config = _run_config(args)
        checkpoint = Path(args.checkpoint)
        if not checkpoint.is_dir():
            raise ConfigError(f"checkpoint {checkpoint} does not exist")
        dataset = Dataset.load(config.dataset)
        meta, backend, schema = _load_checkpoint(checkpoint, config)
        schema = schema or _schema_for(config, dataset)
    except (AdaPromptError, OSError) as exc:
        return _fail(exc, 2)
    out = _prepare_output(config.output_dir)
    examples = getattr(dataset, args.split)
    golds = [schema.index(ex.relation) for ex in examples]
    try:
        config_t = config.override(template=meta["template"], markers=meta["markers"])
        template = config_t.prompt_template()
        records = []
        if meta["method"] == "majority":
            preds = [meta["majority_class"]] * len(examples)
        elif meta["method"] == "head-finetune":
            head = HeadClassifier(backend.hidden_size, len(schema), dtype=backend.dtype)
            head.load_state_dict(torch.load(checkpoint / "head.pt", weights_only=True))
            preds = HeadModel(backend, head, template).predict(examples)
        else:
            scorer = LabelScorer(schema, backend, args.scoring or meta["scoring"])
            backend.eval()
            preds = []
            with torch.no_grad():
                for start in range(0, len(examples), 64):
                    chunk = examples[start : start + 64]
                    scores = scorer.score([render_prompt(ex, template, backend) for ex in chunk])
                    for ex, probs in zip(chunk, scores.probs):
                        argmax = int(probs.argmax())
                        records.append({"id": ex.id, "probs": probs.tolist(), "argmax": argmax})
                        preds.append(argmax)
    except AdaPromptError as exc:
        return _fail(exc, 1)
    f1 = micro_f1(preds, golds, schema)
    if records:
        with open(out / "scores.jsonl", "w") as f:
            for r in records:
                f.write(json.dumps(r) + "\n")
    (out / "metrics.json").write_text(json.dumps({"split": args.split, "n": len(examples), "micro_f1": f1}))
    print(json.dumps({"split": args.split, "micro_f1": f1}))
    return 0


def cmd_split(args) -> int:
    try:
        config = _run_config(args)
        dataset = Dataset.load(config.dataset)
        splits = [sample_split(dataset, k, seed).to_dict()
                  for k in config.k_values for seed in (config.seeds[:1] if k == ALL else config.seeds)]
    except (AdaPromptError, OSError) as exc:
        return _fail(exc, 2)
    out = _prepare_output(config.output_dir)
    path = out / "splits.json"
    path.write_text(json.dumps(splits, indent=2))
    print(path)
    return 0


def cmd_verbalize(args) -> int:
    try:
        rules = RuleConfig.load(args.rules) if args.rules else RuleConfig()
        if args.labels:
            labels = [s for s in args.labels.split(",") if s]
        elif args.labels_file:
            labels = load_schema_labels(args.labels_file)
        elif args.dataset:
            labels = Dataset.load(args.dataset).labels
        else:
            raise ConfigError("give --labels, --labels-file or --dataset")
        na = args.na_label if args.na_label in labels else None
        schema = build_schema(labels, na, rules)
    except (AdaPromptError, OSError) as exc:
        return _fail(exc, 2)
    text = json.dumps(schema.export(), indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def cmd_pretrain(args) -> int:
    from .backend.toy import ToyMLMConfig, pretrain_toy
    from .backend.vocab import Vocab
    from .config import TEMPLATE_WORDS

    try:
        toy = ToyMLMConfig(d=args.d, layers=args.layers, heads=args.heads, max_len=args.max_len, seed=args.seed)
        extra = set(TEMPLATE_WORDS)
        if args.synthetic is not None:
            from .synthetic import make_synthetic, vocabulary_words

            _, corpus = make_synthetic(args.synthetic)
            extra |= vocabulary_words()
        elif args.corpus:
            corpus = read_corpus(args.corpus)
        else:
            raise ConfigError("give --corpus or --synthetic")
        if args.extra_words:
            extra |= set(read_corpus(args.extra_words)[0] if Path(args.extra_words).is_file()
                         else args.extra_words.split(","))
        vocab = Vocab.build(corpus, extra=sorted(extra), max_size=toy.vocab_size)
    except (AdaPromptError, OSError) as exc:
        return _fail(exc, 2)
    try:
        backend = pretrain_toy(corpus, toy, args.steps, vocab=vocab, batch_size=args.batch_size, lr=args.lr)
    except AdaPromptError as exc:
        return _fail(exc, 1)
    backend.save(args.output)
    first = backend.history[0] if backend.history else float("nan")
    last = backend.history[-1] if backend.history else float("nan")
    print(json.dumps({"checkpoint": str(args.output), "steps": args.steps, "first_loss": first, "last_loss": last}))
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_synthetic

    dataset, corpus = make_synthetic(args.seed, args.train_per_class, args.dev_per_class, args.test_per_class)
    out = Path(args.output)
    dataset.save(out)
    with open(out / "corpus.txt", "w") as f:
        for seq in corpus:
            f.write(" ".join(seq) + "\n")
    print(json.dumps({"dataset": str(out), "train": len(dataset.train), "dev": len(dataset.dev),
                      "test": len(dataset.test), "corpus": len(corpus)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaprompt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the few-shot protocol and write a report")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset split with a saved checkpoint")
    _add_run_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "dev", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("split", help="write the seeded few-shot splits only")
    _add_run_options(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("verbalize", help="print the label-word set of every relation")
    p.add_argument("--labels", help="comma-separated label strings")
    p.add_argument("--labels-file", dest="labels_file")
    p.add_argument("--dataset")
    p.add_argument("--rules")
    p.add_argument("--na-label", dest="na_label", default="no_relation")
    p.add_argument("--output")
    p.set_defaults(func=cmd_verbalize)

    p = sub.add_parser("pretrain", help="pre-train the toy masked LM")
    p.add_argument("--corpus", help="text file, one whitespace-tokenized sentence per line")
    p.add_argument("--synthetic", type=int, metavar="SEED", help="use the synthetic corpus")
    p.add_argument("--extra-words", dest="extra_words")
    p.add_argument("--output", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--max-len", dest="max_len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("synth", help="write the synthetic relation dataset and pre-training corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-per-class", dest="train_per_class", type=int, default=200)
    p.add_argument("--dev-per-class", dest="dev_per_class", type=int, default=20)
    p.add_argument("--test-per-class", dest="test_per_class", type=int, default=100)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
