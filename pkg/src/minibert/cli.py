"""Command-line entry point.

One binary, subcommand style: tokenizer, corpus-split, pretrain, finetune,
predict, eval, compare, treecode.  Training commands read a sectioned
key=value config file; --set section.key=value flags override it and the
fully resolved config is echoed into the output directory.  Exit codes:
0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

from . import corpus as corpusmod
from . import evaluation, stats, treecodec
from .mlm import MaskingPolicy
from .model import (
    LabelSet,
    ModelConfig,
    OptimizerConfig,
    Phase,
    finetune,
    load_checkpoint,
    predict_corpus,
    prepare_task_data,
    pretrain,
)
from .tokenizer import Vocab, encode_sentence, load_vocab, save_vocab, train_vocab


class ConfigError(Exception):
    pass


# section -> key -> (parser, default); None default means the key is a path
# that must be set explicitly when the command needs it.
_SCHEMA: dict[str, dict[str, tuple]] = {
    "corpus": {
        "train": (str, None),
        "dev": (str, None),
        "train_fraction": (float, 0.95),
    },
    "tokenizer": {
        "vocab": (str, None),
        "size": (int, 30000),
        "min_frequency": (int, 2),
    },
    "model": {
        "n_layers": (int, 2),
        "hidden": (int, 64),
        "n_heads": (int, 4),
        "ffn_size": (int, 256),
        "max_positions": (int, 512),
        "dropout": (float, 0.1),
        "layer_norm_eps": (float, 1e-12),
    },
    "optimizer": {
        "learning_rate": (float, 1e-4),
        "weight_decay": (float, 0.01),
        "adam_eps": (float, 1e-8),
        "adam_beta1": (float, 0.9),
        "adam_beta2": (float, 0.999),
        "total_steps": (int, 0),
        "warmup_steps": (int, 0),
    },
    "masking": {
        "select_rate": (float, 0.15),
        "mask_rate": (float, 0.80),
        "random_rate": (float, 0.10),
        "keep_rate": (float, 0.10),
    },
    "pretrain": {
        "phases": (str, "128:96:2000"),
        "eval_interval": (int, 100),
        "checkpoint_interval": (int, 0),
        "eval_rows": (int, 64),
        "break_documents": (lambda s: s.lower() in ("1", "true", "yes"), False),
    },
    "finetune": {
        "task": (str, "upos"),
        "train": (str, None),
        "dev": (str, None),
        "batch_size": (int, 16),
        "max_epochs": (int, 20),
        "patience": (int, 3),
    },
    "run": {
        "seed": (int, 0),
        "out_dir": (str, None),
    },
}


def load_run_config(path: str | None, overrides: list[str] | None) -> dict:
    values = {sec: {k: d for k, (_p, d) in keys.items()} for sec, keys in _SCHEMA.items()}

    def apply(section: str, key: str, raw: str, where: str):
        if section not in _SCHEMA:
            raise ConfigError(f"{where}: unknown section [{section}]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {key!r} in section [{section}]")
        parser = _SCHEMA[section][key][0]
        try:
            values[section][key] = parser(raw)
        except ValueError as e:
            raise ConfigError(f"{where}: bad value for {section}.{key}: {e}") from None

    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        for section in parser.sections():
            for key, raw in parser.items(section):
                apply(section, key, raw, path)
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        apply(section, key, raw, "--set")
    return values


def echo_config(values: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.ini"), "w", encoding="utf-8") as f:
        for section, keys in values.items():
            f.write(f"[{section}]\n")
            for key, value in keys.items():
                if value is not None:
                    f.write(f"{key} = {value}\n")
            f.write("\n")


def _require(values: dict, section: str, key: str):
    value = values[section][key]
    if value is None:
        raise ConfigError(f"{section}.{key} must be set")
    return value


def _parse_phases(text: str) -> list[Phase]:
    phases = []
    for part in text.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(f"phase {part!r} is not seq_len:batch_size:steps")
        try:
            phases.append(Phase(int(bits[0]), int(bits[1]), int(bits[2])))
        except ValueError as e:
            raise ConfigError(f"phase {part!r}: {e}") from None
    return phases


def _model_config(values: dict, vocab: Vocab) -> ModelConfig:
    m = values["model"]
    return ModelConfig(
        n_layers=m["n_layers"],
        hidden=m["hidden"],
        n_heads=m["n_heads"],
        ffn_size=m["ffn_size"],
        vocab_size=vocab.size,
        max_positions=m["max_positions"],
        dropout=m["dropout"],
        layer_norm_eps=m["layer_norm_eps"],
    )


def _opt_config(values: dict, default_total: int) -> OptimizerConfig:
    o = values["optimizer"]
    return OptimizerConfig(
        learning_rate=o["learning_rate"],
        weight_decay=o["weight_decay"],
        adam_eps=o["adam_eps"],
        adam_beta1=o["adam_beta1"],
        adam_beta2=o["adam_beta2"],
        total_steps=o["total_steps"] or default_total,
        warmup_steps=o["warmup_steps"],
    )


def _masking(values: dict) -> MaskingPolicy:
    k = values["masking"]
    return MaskingPolicy(
        select_rate=k["select_rate"],
        mask_rate=k["mask_rate"],
        random_rate=k["random_rate"],
        keep_rate=k["keep_rate"],
    )


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------- commands


def cmd_tokenizer(args) -> int:
    if args.action == "train":
        docs = corpusmod.load_raw_corpus(args.corpus)
        vocab = train_vocab(docs, target_size=args.size, min_frequency=args.min_frequency)
        save_vocab(vocab, args.out)
        print(f"wrote {vocab.size} pieces to {args.out}", file=sys.stderr)
        return 0
    vocab = load_vocab(args.vocab)
    source = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        for line in source:
            words = line.split()
            seq = encode_sentence(vocab, words, add_specials=False)
            print(" ".join(vocab.pieces[i] for i in seq.ids))
    finally:
        if source is not sys.stdin:
            source.close()
    return 0


def cmd_corpus_split(args) -> int:
    docs = corpusmod.load_raw_corpus(args.input)
    spec = corpusmod.SplitSpec(train_fraction=args.train_fraction)
    train, dev = corpusmod.split_corpus(docs, spec)
    corpusmod.write_raw_corpus(train, args.out_train)
    corpusmod.write_raw_corpus(dev, args.out_dev)
    if args.manifest:
        corpusmod.write_split_manifest(train, dev, spec, args.manifest)
    _emit({"train_documents": len(train), "dev_documents": len(dev)})
    return 0


def _load_pretrain_corpora(values: dict):
    train_path = _require(values, "corpus", "train")
    if values["corpus"]["dev"]:
        return corpusmod.load_raw_corpus(train_path), corpusmod.load_raw_corpus(
            values["corpus"]["dev"]
        )
    docs = corpusmod.load_raw_corpus(train_path)
    return corpusmod.split_corpus(docs, corpusmod.SplitSpec(values["corpus"]["train_fraction"]))


def cmd_pretrain(args) -> int:
    values = load_run_config(args.config, args.set)
    out_dir = _require(values, "run", "out_dir")
    vocab = load_vocab(_require(values, "tokenizer", "vocab"))
    train_docs, dev_docs = _load_pretrain_corpora(values)
    phases = _parse_phases(values["pretrain"]["phases"])
    opt_cfg = _opt_config(values, default_total=sum(p.steps for p in phases))
    resume = load_checkpoint(args.resume, vocab) if args.resume else None
    echo_config(values, out_dir)
    ckpt, rows = pretrain(
        train_docs,
        dev_docs,
        vocab,
        _model_config(values, vocab),
        opt_cfg,
        _masking(values),
        phases,
        values["run"]["seed"],
        out_dir=out_dir,
        eval_interval=values["pretrain"]["eval_interval"],
        checkpoint_interval=values["pretrain"]["checkpoint_interval"],
        eval_rows=values["pretrain"]["eval_rows"],
        break_documents=values["pretrain"]["break_documents"],
        resume=resume,
    )
    _emit(
        {
            "checkpoint": os.path.join(out_dir, "final.ckpt"),
            "steps": ckpt.step,
            "final_dev_perplexity": rows[-1][5],
        }
    )
    return 0


def _task_sentences(path: str, kind: str):
    if kind in ("upos", "fpos"):
        if path.endswith(".conllu"):
            return corpusmod.read_conllu(path)
        return corpusmod.read_tagged_tsv(path, layer=kind)
    if kind == "ner":
        return corpusmod.read_bio(path)
    if kind == "dep-bracket":
        if path.endswith(".conllu"):
            return corpusmod.read_conllu(path)
        return treecodec.read_label_tsv(path)
    raise ConfigError(f"unknown task {kind!r}")


def _task_pairs(path: str, kind: str):
    data = _task_sentences(path, kind)
    if data and isinstance(data[0], tuple):
        return data, 0  # already (words, labels) pairs from a label TSV
    return prepare_task_data(data, kind)


def cmd_finetune(args) -> int:
    values = load_run_config(args.config, args.set)
    out_dir = _require(values, "run", "out_dir")
    vocab = load_vocab(_require(values, "tokenizer", "vocab"))
    ckpt = load_checkpoint(args.checkpoint, vocab)
    kind = values["finetune"]["task"]
    train_pairs, skipped_train = _task_pairs(_require(values, "finetune", "train"), kind)
    dev_pairs, skipped_dev = _task_pairs(_require(values, "finetune", "dev"), kind)
    if skipped_train or skipped_dev:
        print(
            f"skipped unusable sentences: {skipped_train} train, {skipped_dev} dev",
            file=sys.stderr,
        )
    label_set = LabelSet.from_data(kind, (labs for _w, labs in train_pairs))
    steps_per_epoch = -(-len(train_pairs) // values["finetune"]["batch_size"])
    opt_cfg = _opt_config(values, default_total=values["finetune"]["max_epochs"] * steps_per_epoch)
    echo_config(values, out_dir)
    tuned, history = finetune(
        ckpt,
        vocab,
        train_pairs,
        dev_pairs,
        label_set,
        opt_cfg,
        values["run"]["seed"],
        kind=kind,
        batch_size=values["finetune"]["batch_size"],
        max_epochs=values["finetune"]["max_epochs"],
        patience=values["finetune"]["patience"],
        out_dir=out_dir,
    )
    best = max(acc for _e, _l, acc in history)
    _emit(
        {
            "checkpoint": os.path.join(out_dir, "finetuned.ckpt"),
            "labels": len(label_set),
            "epochs": len(history),
            "best_dev_accuracy": best,
        }
    )
    return 0


def _read_words(path: str, fmt: str) -> list[list[str]]:
    if fmt == "conllu":
        return [list(s.words) for s in corpusmod.read_conllu(path)]
    if fmt in ("tsv", "bio"):
        out = []
        with open(path, encoding="utf-8") as f:
            words: list[str] = []
            for line in f:
                line = line.rstrip("\n")
                if line.strip() == "":
                    if words:
                        out.append(words)
                        words = []
                    continue
                words.append(line.split()[0])
            if words:
                out.append(words)
        return out
    if fmt == "text":
        with open(path, encoding="utf-8") as f:
            return [line.split() for line in f if line.strip()]
    raise ConfigError(f"unknown input format {fmt!r}")


def cmd_predict(args) -> int:
    vocab = load_vocab(args.vocab)
    ckpt = load_checkpoint(args.checkpoint, vocab)
    if ckpt.label_set is None:
        raise ConfigError("checkpoint carries no label set; fine-tune first")
    kind = ckpt.label_set.kind
    fmt = args.format or ("conllu" if args.input.endswith(".conllu") else "tsv")
    sentences = _read_words(args.input, fmt)
    predicted = predict_corpus(ckpt, vocab, sentences)
    if kind == "dep-bracket" and not args.labels_only:
        records = []
        for words, labels in zip(sentences, predicted):
            tree, _report = treecodec.decode_labels([treecodec.parse_label(l) for l in labels])
            records.append(
                corpusmod.AnnotatedSentence(words=words, heads=tree.heads, deprels=tree.deprels)
            )
        corpusmod.write_conllu(records, args.out)
    elif kind == "dep-bracket":
        treecodec.write_label_tsv(list(zip(sentences, predicted)), args.out)
    elif kind == "ner":
        records = [
            corpusmod.AnnotatedSentence(words=w, ner=labs)
            for w, labs in zip(sentences, predicted)
        ]
        corpusmod.write_bio(records, args.out)
    else:
        layer = "upos" if kind == "upos" else "fpos"
        records = [
            corpusmod.AnnotatedSentence(words=w, **{layer: labs})
            for w, labs in zip(sentences, predicted)
        ]
        corpusmod.write_tagged_tsv(records, layer, args.out)
    print(f"wrote {len(predicted)} sentences to {args.out}", file=sys.stderr)
    return 0


def _tags_from(path: str, layer: str) -> list[list[str]]:
    if path.endswith(".conllu"):
        sents = corpusmod.read_conllu(path)
        out = []
        for i, s in enumerate(sents):
            tags = getattr(s, layer)
            if tags is None:
                raise ConfigError(f"{path}: sentence {i} lacks the {layer} layer")
            out.append(list(tags))
        return out
    if layer == "ner":
        return [list(s.ner) for s in corpusmod.read_bio(path)]
    return [list(getattr(s, layer)) for s in corpusmod.read_tagged_tsv(path, layer=layer)]


def _trees_from(path: str) -> list[treecodec.DepTree]:
    out = []
    for i, s in enumerate(corpusmod.read_conllu(path)):
        if s.heads is None or s.deprels is None:
            raise ConfigError(f"{path}: sentence {i} lacks heads/deprels")
        out.append(treecodec.DepTree(heads=list(s.heads), deprels=list(s.deprels)))
    return out


def cmd_eval(args) -> int:
    if args.task == "pos":
        report = evaluation.pos_accuracy(
            _tags_from(args.gold, args.layer), _tags_from(args.pred, args.layer)
        )
    elif args.task == "ner":
        report = evaluation.span_f1(_tags_from(args.gold, "ner"), _tags_from(args.pred, "ner"))
    elif args.task == "dep":
        report = evaluation.las_uas(_trees_from(args.gold), _trees_from(args.pred))
    else:
        raise ConfigError(f"unknown eval task {args.task!r}")
    if args.per_sentence:
        report.write_per_sentence_csv(args.per_sentence)
    print(report.to_table() if args.table else report.to_json())
    return 0


def cmd_compare(args) -> int:
    if args.metric in ("las", "uas"):
        gold, a, b = _trees_from(args.gold), _trees_from(args.a), _trees_from(args.b)
    elif args.metric == "spanf1":
        gold, a, b = (_tags_from(p, "ner") for p in (args.gold, args.a, args.b))
    else:
        gold, a, b = (_tags_from(p, args.layer) for p in (args.gold, args.a, args.b))

    if args.test == "shuffle":
        result = stats.stratified_shuffle_test(
            gold, a, b, args.metric, n_trials=args.trials, seed=args.seed
        )
        _emit(
            {
                "test": "shuffle",
                "metric": args.metric,
                "diff": result.observed_diff,
                "p": result.p_value,
                "trials": result.n_trials,
                "seed": result.seed,
            }
        )
        return 0
    if args.metric == "spanf1":
        raise ConfigError("the t-test needs a per-sentence metric; use accuracy, las or uas")
    report_a = _per_sentence_metric(gold, a, args.metric)
    report_b = _per_sentence_metric(gold, b, args.metric)
    sample = stats.PairedSample(tuple(report_a), tuple(report_b))
    try:
        result = stats.paired_ttest(sample)
    except stats.DegenerateSampleError as e:
        _emit({"test": "ttest", "metric": args.metric, "degenerate": True, "mean_diff": e.mean_diff})
        return 0
    _emit(
        {
            "test": "ttest",
            "metric": args.metric,
            "t": result.t,
            "df": result.df,
            "p": result.p,
        }
    )
    return 0


def _per_sentence_metric(gold, out, metric: str) -> list[float]:
    if metric == "accuracy":
        return evaluation.pos_accuracy(gold, out).per_sentence["accuracy"]
    return evaluation.las_uas(gold, out).per_sentence[metric]


def cmd_treecode(args) -> int:
    if args.action == "encode":
        sents = corpusmod.read_conllu(args.input) if args.input else _conllu_from_stdin()
        rows = []
        skipped = 0
        for s in sents:
            if s.heads is None or s.deprels is None:
                raise ConfigError("input sentences lack heads/deprels")
            tree = treecodec.DepTree(heads=list(s.heads), deprels=list(s.deprels))
            try:
                labels = [treecodec.format_label(l) for l in treecodec.encode_tree(tree)]
            except treecodec.TreeError:
                skipped += 1
                continue
            rows.append((list(s.words), labels))
        _write_label_rows(rows, args.output)
        if skipped:
            print(f"skipped {skipped} non-projective sentences", file=sys.stderr)
        return 0
    rows = treecodec.read_label_tsv(args.input) if args.input else _labels_from_stdin()
    records = []
    for words, labels in rows:
        tree, _report = treecodec.decode_labels([treecodec.parse_label(l) for l in labels])
        records.append(
            corpusmod.AnnotatedSentence(words=words, heads=tree.heads, deprels=tree.deprels)
        )
    if args.output:
        corpusmod.write_conllu(records, args.output)
    else:
        import io

        buf = io.StringIO()
        for r in records:
            for i, w in enumerate(r.words):
                buf.write(f"{i + 1}\t{w}\t_\t_\t_\t_\t{r.heads[i]}\t{r.deprels[i]}\t_\t_\n")
            buf.write("\n")
        sys.stdout.write(buf.getvalue())
    return 0


def _conllu_from_stdin():
    import tempfile

    with tempfile.NamedTemporaryFile("w", suffix=".conllu", delete=False) as f:
        f.write(sys.stdin.read())
        tmp = f.name
    try:
        return corpusmod.read_conllu(tmp)
    finally:
        os.unlink(tmp)


def _labels_from_stdin():
    import tempfile

    with tempfile.NamedTemporaryFile("w", suffix=".tsv", delete=False) as f:
        f.write(sys.stdin.read())
        tmp = f.name
    try:
        return treecodec.read_label_tsv(tmp)
    finally:
        os.unlink(tmp)


def _write_label_rows(rows, output: str | None) -> None:
    if output:
        treecodec.write_label_tsv(rows, output)
    else:
        for words, labels in rows:
            for word, label in zip(words, labels):
                sys.stdout.write(f"{word}\t{label}\n")
            sys.stdout.write("\n")


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="minibert", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenizer", help="train a vocabulary or encode text")
    ps = p.add_subparsers(dest="action", required=True)
    pt = ps.add_parser("train")
    pt.add_argument("--corpus", required=True)
    pt.add_argument("--size", type=int, default=30000)
    pt.add_argument("--min-frequency", type=int, default=2)
    pt.add_argument("--out", required=True)
    pe = ps.add_parser("encode")
    pe.add_argument("--vocab", required=True)
    pe.add_argument("--input", default=None, help="default: standard input")
    p.set_defaults(func=cmd_tokenizer)

    p = sub.add_parser("corpus-split", help="deterministic prefix train/dev split")
    p.add_argument("--input", required=True)
    p.add_argument("--train-fraction", type=float, default=0.95)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-dev", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_corpus_split)

    p = sub.add_parser("pretrain", help="masked-language-model pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="continue from a checkpoint")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune for a token-level task")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", help="label sentences with a fine-tuned model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("conllu", "tsv", "bio", "text"), default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--labels-only", action="store_true", help="write bracket labels, not trees")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--task", choices=("pos", "ner", "dep"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--layer", choices=("upos", "fpos"), default="upos")
    p.add_argument("--per-sentence", default=None, help="CSV dump of per-sentence scores")
    p.add_argument("--table", action="store_true", help="plain-text table instead of JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="significance test between two systems")
    p.add_argument("--test", choices=("ttest", "shuffle"), required=True)
    p.add_argument("--metric", choices=stats.METRICS, required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--layer", choices=("upos", "fpos"), default="upos")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("treecode", help="convert between CoNLL-U and bracket labels")
    p.add_argument("action", choices=("encode", "decode"))
    p.add_argument("--input", default=None, help="default: standard input")
    p.add_argument("--output", default=None, help="default: standard output")
    p.set_defaults(func=cmd_treecode)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures: bad data, I/O, numerical aborts
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
