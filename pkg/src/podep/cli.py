"""Command-line interface: ``podep train|parse|eval|inspect|stats``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .conllu import ConlluFormatError, ConlluValidationError, Sentence, Token, dataset_stats, parse_conllu, read_conllu, write_conllu
from .decoder import DECODE_MODES
from .metrics import AlignmentError, attachment_scores
from .model import DropoutConfig, ModelConfig
from .parser_head import format_score_matrix
from .training import LossWeights, TrainConfig, evaluate, train

log = logging.getLogger("podep")


class CliError(Exception):
    pass


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PODEP_THREADS", "1")))
    except ValueError:
        raise CliError("PODEP_THREADS must be an integer") from None


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot read {path}: {err.strerror}") from None


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_corpus(path: str) -> list[Sentence]:
    return parse_conllu(_read_text(path), source=path)


def _raw_sentences(text: str) -> list[Sentence]:
    out = []
    for line in text.splitlines():
        forms = line.split()
        if forms:
            out.append(Sentence([Token(id=i, form=f) for i, f in enumerate(forms, start=1)]))
    return out


def _read_input(path: str, fmt: str) -> list[Sentence]:
    text = _read_text(path)
    if fmt == "auto":
        fmt = "conllu" if "\t" in text or not text.strip() else "raw"
    return parse_conllu(text, source=path) if fmt == "conllu" else _raw_sentences(text)


# -- configuration -------------------------------------------------------


def build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    """Defaults < --config file < explicit flags."""
    model_cfg = ModelConfig.tiny() if args.preset == "tiny" else ModelConfig()
    train_cfg = TrainConfig()
    if args.config:
        try:
            doc = json.loads(_read_text(args.config))
        except json.JSONDecodeError as err:
            raise CliError(f"{args.config}: invalid JSON ({err})") from None
        merged = model_cfg.to_dict()
        for section, values in doc.get("model", {}).items():
            if section not in merged:
                raise CliError(f"{args.config}: unknown model section {section!r}")
            if isinstance(values, dict):
                merged[section].update(values)
            else:
                merged[section] = values
        try:
            model_cfg = ModelConfig.from_dict(merged)
            tdoc = dict(doc.get("train", {}))
            if "weights" in tdoc:
                tdoc["weights"] = LossWeights(**tdoc["weights"])
            train_cfg = TrainConfig(**{**asdict(train_cfg), "weights": train_cfg.weights, **tdoc})
        except (TypeError, ValueError) as err:
            raise CliError(f"{args.config}: {err}") from None
    if args.pos_head is not None:
        model_cfg.tagger.pos_head_enabled = args.pos_head
    if args.attention is not None:
        model_cfg.scorer.attention_mode = args.attention
    if args.no_dropout:
        model_cfg.dropout = DropoutConfig(0.0, 0.0, 0.0)
    for flag, attr in (("epochs", "epochs"), ("patience", "patience"), ("seed", "seed"), ("decode", "decode_mode")):
        value = getattr(args, flag)
        if value is not None:
            setattr(train_cfg, attr, value)
    w = train_cfg.weights
    train_cfg.weights = LossWeights(
        alpha_l=w.alpha_l if args.alpha_l is None else args.alpha_l,
        alpha_s=w.alpha_s if args.alpha_s is None else args.alpha_s,
        alpha_t=w.alpha_t if args.alpha_t is None else args.alpha_t,
    )
    return model_cfg, train_cfg


# -- subcommands ---------------------------------------------------------


def cmd_train(args) -> int:
    model_cfg, train_cfg = build_configs(args)
    corpus = _load_corpus(args.train)
    dev = _load_corpus(args.dev)
    log_path = args.log or f"{args.model}.log.jsonl"
    result = train(model_cfg, corpus, dev, train_cfg, log_path=log_path)
    save_checkpoint(result.model, args.model, extra={"train": asdict(train_cfg), "best_epoch": result.best_epoch})
    last = result.log[-1]
    print(f"best epoch {result.best_epoch}: dev UAS {result.best_dev_uas:.2f}; "
          f"{len(result.log)} epochs, {result.dropped_sentences} training sentences dropped", file=sys.stderr)
    print(json.dumps(last))
    if args.test:
        test = _load_corpus(args.test)
        scores = evaluate(result.model, test, train_cfg.decode_mode)
        print(json.dumps({"test_la": round(scores["la"], 2), "test_uas": round(scores["uas"], 2),
                          "test_las": round(scores["las"], 2)}))
    return 0


def _load_model(path: str):
    try:
        return load_checkpoint(path)
    except OSError as err:
        raise CliError(f"cannot read model {path}: {err.strerror}") from None


def cmd_parse(args) -> int:
    model = _load_model(args.model)
    sentences = _read_input(args.input, args.input_format)
    labels = model.lexicon.labels.items

    def run(sent: Sentence) -> Sentence:
        r = model.parse(sent.forms, mode=args.decode, single_root=args.single_root)
        for tok, h, lab in zip(sent.tokens, r.heads, r.labels):
            tok.head = h
            tok.deprel = labels[lab]
        return sent

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        parsed = list(pool.map(run, sentences))
    _write_text(args.output, write_conllu(parsed))
    return 0


def cmd_eval(args) -> int:
    gold = _load_corpus(args.gold)
    pred = _load_corpus(args.pred)
    report = attachment_scores(gold, pred, exclude_punct=args.exclude_punct)
    _write_text(args.output, report.to_json() + "\n" if args.format == "json" else report.to_table())
    return 0


def cmd_inspect(args) -> int:
    model = _load_model(args.model)
    if args.sentence:
        forms = args.sentence.split()
    else:
        sentences = _read_input(args.input, args.input_format)
        if not 0 <= args.index < len(sentences):
            raise CliError(f"sentence index {args.index} out of range (input has {len(sentences)})")
        forms = sentences[args.index].forms
    if not forms:
        raise CliError("nothing to inspect: empty sentence")
    _write_text(args.output, format_score_matrix(model.head_probabilities(forms), forms, args.precision))
    return 0


def cmd_stats(args) -> int:
    total = {"token_count": 0, "sentence_count": 0}
    for path in args.files:
        stats = dataset_stats(read_conllu(path))
        print(f"{path}\t{stats['token_count']}\t{stats['sentence_count']}")
        for k in total:
            total[k] += stats[k]
    if len(args.files) > 1:
        print(f"total\t{total['token_count']}\t{total['sentence_count']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="podep", description="Character-level neural dependency parser")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test")
    p.add_argument("--model", required=True, help="output checkpoint path")
    p.add_argument("--log", help="per-epoch JSON-lines log (default: MODEL.log.jsonl)")
    p.add_argument("--config", help="JSON file with 'model' and 'train' sections")
    p.add_argument("--preset", choices=("full", "tiny"), default="full")
    p.add_argument("--pos-head", type=_on_off, default=None, metavar="{on,off}")
    p.add_argument("--attention", choices=("soft", "hard"))
    p.add_argument("--decode", choices=DECODE_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--alpha-l", type=float)
    p.add_argument("--alpha-s", type=float)
    p.add_argument("--alpha-t", type=float)
    p.add_argument("--no-dropout", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse CoNLL-U or pre-tokenized raw text")
    p.add_argument("--model", required=True)
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--input-format", choices=("auto", "conllu", "raw"), default="auto")
    p.add_argument("--decode", choices=DECODE_MODES, default="greedy_then_cle")
    p.add_argument("--single-root", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="score predicted against gold CoNLL-U")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--exclude-punct", action="store_true")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump the head-probability matrix of one sentence")
    p.add_argument("--model", required=True)
    p.add_argument("--sentence", help="space-separated words")
    p.add_argument("--input", default="-")
    p.add_argument("--input-format", choices=("auto", "conllu", "raw"), default="auto")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--precision", type=int, default=4)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("stats", help="token and sentence counts")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, CheckpointError, ConlluFormatError, ConlluValidationError, AlignmentError,
            ValueError, KeyError, OSError) as err:
        print(f"podep {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
