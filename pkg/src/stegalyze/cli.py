"""Command-line entry point: ``stegalyze {generate,train,eval,predict,ablate}``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose keys
are the long flag names (dashes or underscores). Precedence is built-in
defaults < config file < command-line flags. All arguments are validated
before anything is written.

Exit codes: 0 success, 1 usage or configuration error, 2 data or model-file
error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, data, modelfile, training
from .errors import ConfigError, DataError, StegalyzeError
from .model import VARIANT_LABELS, VARIANTS, ModelConfig, forward, labels_from_probs, parse_variant

log = logging.getLogger("stegalyze")

CLASS_NAMES = ("cover", "stego")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        command = self.prog.partition(" ")[2]
        raise UsageError(f"{command}: {message}" if command else message)


# -- argument types --------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return v


def _int_list(text):
    try:
        return tuple(int(p) for p in str(text).replace(" ", "").split(",") if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _variant(text):
    try:
        return parse_variant(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- parser ----------------------------------------------------------------


def _common(p):
    p.add_argument("--config", type=Path, default=None, help="key = value file with defaults for these flags")
    p.add_argument("--seed", type=_non_negative_int, default=0, help="master seed for every random stream")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for generation/evaluation")


def _corpus_flags(p):
    p.add_argument("--cover", type=Path, default=None, help="cover text, one sentence per line (default: bundled sample)")
    p.add_argument("--bpw", type=int, default=3, help="embedded bits per word, 1..5")
    p.add_argument("--per-class", type=_positive_int, default=2000, help="sentences per class")
    p.add_argument("--min-len", type=_positive_int, default=10, help="shortest generated sentence, in tokens")
    p.add_argument("--max-len", type=_positive_int, default=30, help="longest generated sentence, in tokens")
    p.add_argument("--order", type=_positive_int, default=2, help="Markov chain order")


def _model_flags(p, variant=True):
    if variant:
        p.add_argument(
            "--variant",
            type=_variant,
            default="Bi-LSTM+CNN+ATT+CL",
            help="model variant: " + ", ".join(VARIANT_LABELS.values()),
        )
    p.add_argument("--embed-dim", type=_positive_int, default=256, help="word embedding width d")
    p.add_argument("--hidden", type=_positive_int, default=200, help="LSTM units per direction k")
    p.add_argument("--kernel-widths", type=_int_list, default="3,4,5", help="comma-separated conv kernel widths")
    p.add_argument("--feature-maps", type=_positive_int, default=128, help="filters per kernel width F")
    p.add_argument("--fc-dim", type=_positive_int, default=100, help="hidden fully connected width")
    p.add_argument("--dropout", type=float, default=0.5, help="dropout rate before the output layer")
    p.add_argument("--max-seq-len", type=_positive_int, default=30, help="padded sequence length T")
    p.add_argument("--max-vocab", type=_non_negative_int, default=0, help="vocabulary cap incl. PAD/UNK (0: no cap)")
    p.add_argument("--epochs", type=_non_negative_int, default=30, help="training epochs")
    p.add_argument("--batch-size", type=int, default=128, help="mini-batch size (at least 2)")
    p.add_argument("--lr", type=_positive_float, default=0.001, help="Adam learning rate")
    p.add_argument("--clip-norm", type=float, default=5.0, help="global gradient-norm clip (0 disables)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="stegalyze", description="Steganalysis of generated text.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="build a cover/stego dataset", formatter_class=fmt)
    _common(p)
    _corpus_flags(p)
    p.add_argument("--out", type=Path, default=Path("data"), help="output directory")

    p = sub.add_parser("train", help="train a detector", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", type=Path, default=Path("data"), help="directory with train.tsv and val.tsv")
    _model_flags(p)
    p.add_argument("--model-out", type=Path, default=Path("model.bin"), help="where to write the model")
    p.add_argument("--report", type=Path, default=Path("report.tsv"), help="where to write the per-epoch report")

    p = sub.add_parser("eval", help="metrics of a model on a labelled file", formatter_class=fmt)
    _common(p)
    p.add_argument("--model", type=Path, default=Path("model.bin"), help="model file")
    p.add_argument("--data", type=Path, default=Path("data/test.tsv"), help="labelled tsv file")
    p.add_argument("--output", type=Path, default=None, help="also write the metrics as JSON here")

    p = sub.add_parser("predict", help="classify lines read from standard input", formatter_class=fmt)
    _common(p)
    p.add_argument("--model", type=Path, default=Path("model.bin"), help="model file")
    p.add_argument("--top", type=_positive_int, default=3, help="attention words shown per line")

    p = sub.add_parser("ablate", help="train and test all four variants", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", type=Path, default=Path("data"), help="directory with train/val/test tsv files")
    _model_flags(p, variant=False)
    p.add_argument("--output", type=Path, default=None, help="also write the table here")
    return parser


# -- config files ----------------------------------------------------------


def read_config_file(path) -> dict:
    """``key = value`` pairs; ``#`` starts a comment. Keys are normalized to flag dests."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().lstrip("-").replace("-", "_")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def parse_args(argv=None):
    """Parse ``argv`` applying defaults < config file < flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    values = read_config_file(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {args.config} for '{args.command}': {', '.join(unknown)}")
    # string defaults go through each action's type converter, so validation matches the flags
    sub.set_defaults(**values)
    return parser.parse_args(argv)


# -- validation helpers ----------------------------------------------------


def _corpus_spec(args) -> data.StegoCorpusSpec:
    cover = args.cover if args.cover is not None else data.sample_corpus_path()
    if not Path(cover).is_file():
        raise DataError(f"cover corpus not found: {cover}")
    return data.StegoCorpusSpec(
        cover_path=str(cover),
        bpw=args.bpw,
        per_class=args.per_class,
        len_range=(args.min_len, args.max_len),
        seed=args.seed,
        order=args.order,
    )


def _model_config(args, vocab_size=2, variant=None) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        embed_dim=args.embed_dim,
        hidden=args.hidden,
        kernel_widths=args.kernel_widths,
        feature_maps=args.feature_maps,
        fc_dim=args.fc_dim,
        dropout_rate=args.dropout,
        variant=variant or getattr(args, "variant", VARIANTS[-1]),
        max_seq_len=args.max_seq_len,
    )


def _check_training_flags(args):
    if args.batch_size < 2:
        raise ConfigError("--batch-size must be at least 2 (batch normalization)")
    if args.clip_norm < 0 or not np.isfinite(args.clip_norm):
        raise ConfigError("--clip-norm must be a non-negative number")
    if args.max_vocab == 1 or args.max_vocab == 2:
        raise ConfigError("--max-vocab must be 0 (no cap) or at least 3")


def _require_files(*paths):
    for p in paths:
        if not Path(p).is_file():
            raise DataError(f"file not found: {p}")


def _require_parent(*paths):
    for p in paths:
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise ConfigError(f"output directory does not exist: {parent}")


def _load_split(path):
    rows = data.read_dataset(path)
    if not rows:
        raise DataError(f"dataset {path} is empty")
    return rows


def _prepare(args, splits):
    """Read the split files, build the vocabulary on train, and encode them all."""
    rows = {name: _load_split(args.data / f"{name}.tsv") for name in splits}
    vocab = data.build_vocab([t for _, t in rows["train"]], max_size=args.max_vocab or None)
    return rows, vocab


def _encode(rows, vocab, config):
    return data.encode_batch(vocab, [t for _, t in rows], [l for l, _ in rows], config.max_seq_len, config.min_len)


def _load_model(path):
    params, config, vocab = modelfile.load(path)
    if vocab is None:
        raise DataError(f"model file {path} carries no vocabulary")
    try:
        return params, config, data.Vocabulary(vocab)
    except ConfigError as exc:
        raise DataError(f"model file {path}: {exc}") from exc


def _fmt_metrics(m) -> str:
    return f"Acc {m.accuracy:.4f}  P {m.precision:.4f}  R {m.recall:.4f}"


# -- commands --------------------------------------------------------------


def cmd_generate(args, out=None):
    out = out or sys.stdout
    spec = _corpus_spec(args)
    if args.out.exists() and not args.out.is_dir():
        raise ConfigError(f"--out {args.out} exists and is not a directory")
    paths = data.make_dataset(spec, args.out, threads=args.threads)
    meta = json.loads(paths["meta"].read_text(encoding="utf-8"))
    print(
        f"wrote {sum(meta['splits'].values())} sentences to {args.out} "
        f"(mean {meta['mean_bits_per_word']:.3f} bits/word)",
        file=out,
    )
    return 0


def cmd_train(args, out=None):
    out = out or sys.stdout
    _model_config(args)  # validate the architecture before touching any data
    _check_training_flags(args)
    _require_files(args.data / "train.tsv", args.data / "val.tsv")
    _require_parent(args.model_out, args.report)

    rows, vocab = _prepare(args, ("train", "val"))
    config = _model_config(args, vocab_size=len(vocab))
    train_set, val_set = (_encode(rows[n], vocab, config) for n in ("train", "val"))
    params, report = training.train(
        config,
        train_set,
        val_set,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        clip_norm=args.clip_norm or None,
        threads=args.threads,
    )
    report.hyper.update({"data": str(args.data), "max_vocab": args.max_vocab, "threads": args.threads})
    modelfile.save(args.model_out, params, config, vocab.words)
    Path(args.report).write_text(report.to_table(), encoding="utf-8")
    if report.epochs:
        best = report.epochs[report.best_epoch - 1]
        print(f"best epoch {report.best_epoch}: validation {_fmt_metrics(best.val)}", file=out)
    else:
        print("0 epochs: wrote the initialized model", file=out)
    print(f"model: {args.model_out}  report: {args.report}", file=out)
    return 0


def cmd_eval(args, out=None):
    out = out or sys.stdout
    _require_files(args.model, args.data)
    if args.output is not None:
        _require_parent(args.output)
    params, config, vocab = _load_model(args.model)
    rows = _load_split(args.data)
    dataset = _encode(rows, vocab, config)
    m = training.evaluate(config, params, dataset, threads=args.threads)
    print("Acc\tP\tR\tTP\tFP\tFN\tTN", file=out)
    print(f"{m.accuracy!r}\t{m.precision!r}\t{m.recall!r}\t{m.tp}\t{m.fp}\t{m.fn}\t{m.tn}", file=out)
    if args.output is not None:
        Path(args.output).write_text(json.dumps(asdict(m), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def predict_lines(params, config, vocab, lines, top=3, batch_size=256):
    """Output rows ``(label, p_stego, [(word, weight), ...])`` for non-blank ``lines``."""
    sentences = [data.tokenize(line) for line in lines if line.strip()]
    results = []
    for s in range(0, len(sentences), batch_size):
        chunk = sentences[s : s + batch_size]
        batch = data.encode_batch(vocab, chunk, np.zeros(len(chunk)), config.max_seq_len, config.min_len)
        probs, alpha = forward(config, params, batch, mode="infer")
        labels = labels_from_probs(probs.data)
        for j, tokens in enumerate(chunk):
            n = int(batch.lengths[j])
            words = list(tokens[: config.max_seq_len]) + [data.PAD_TOKEN] * (n - min(len(tokens), config.max_seq_len))
            weights = alpha[j, :n]
            order = sorted(range(n), key=lambda i: (-weights[i], i))[:top]
            results.append((int(labels[j]), float(probs.data[j, 1]), [(words[i], float(weights[i])) for i in order]))
    return results


def cmd_predict(args, inp=None, out=None):
    inp, out = inp or sys.stdin, out or sys.stdout
    _require_files(args.model)
    params, config, vocab = _load_model(args.model)
    lines = inp.read().splitlines()
    for label, p, top in predict_lines(params, config, vocab, lines, top=args.top):
        attn = ",".join(f"{w}:{a:.4f}" for w, a in top)
        print(f"{CLASS_NAMES[label]}\t{p:.6f}\t{attn}", file=out)
    return 0


def ablation_table(results) -> str:
    lines = ["#\tmodel\taccuracy"]
    for i, (variant, acc) in enumerate(results):
        lines.append(f"#{i}\t{VARIANT_LABELS[variant]}\t{100 * acc:.2f}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args, out=None):
    out = out or sys.stdout
    for v in VARIANTS:
        _model_config(args, variant=v)
    _check_training_flags(args)
    _require_files(*(args.data / f"{n}.tsv" for n in ("train", "val", "test")))
    if args.output is not None:
        _require_parent(args.output)

    rows, vocab = _prepare(args, ("train", "val", "test"))
    results = []
    for v in VARIANTS:
        config = _model_config(args, vocab_size=len(vocab), variant=v)
        sets = {n: _encode(rows[n], vocab, config) for n in rows}
        params, _ = training.train(
            config,
            sets["train"],
            sets["val"],
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed,
            clip_norm=args.clip_norm or None,
            threads=args.threads,
        )
        m = training.evaluate(config, params, sets["test"], threads=args.threads)
        log.info("%s: test %s", VARIANT_LABELS[v], _fmt_metrics(m))
        results.append((v, m.accuracy))
    table = ablation_table(results)
    out.write(table)
    if args.output is not None:
        Path(args.output).write_text(table, encoding="utf-8")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except StegalyzeError as exc:
        print(f"stegalyze: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"stegalyze: error: {exc}", file=sys.stderr)
        return DataError.exit_code
