"""Command-line surface: prepare, train-ner, train-re, predict, eval, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
missing input files). Every training knob is settable by flag or via a
flat JSON config file (flags win).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Optional

from .bench import records_to_csv, sweep_group_size
from .corpus import (
    Corpus,
    LabelSchema,
    infer_schema,
    read_bio,
    read_jsonl,
    write_bio,
    write_jsonl,
)
from .errors import InputError, MarkerPackError
from .metrics import BOUNDARIES, STRICT, EvalReport, expand_symmetric, ner_f1, rel_f1
from .pipeline import (
    NerModel,
    ReModel,
    TrainConfig,
    load_model,
    predict_ner,
    predict_re,
    refine_entity_types,
    save_model,
    train_ner,
    train_re,
    write_predictions,
)

USAGE_EXIT = 2
RUNTIME_EXIT = 1


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field; None means "not set here"."""
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.name in ("prompt_start_word", "prompt_end_word", "packing", "ner_mode"):
            parser.add_argument(flag, type=str, default=None)
        elif f.type == "float":
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=int, default=None)


def _build_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> TrainConfig:
    values: dict = {}
    if args.config:
        _require_file(args.config, parser)
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                values.update(json.load(fh))
            except json.JSONDecodeError as exc:
                parser.error(f"config file {args.config}: invalid JSON: {exc}")
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if "seed" not in values or getattr(args, "seed", None) is None:
        parser.error("--seed is required for training commands")
    return TrainConfig.from_dict(values)


def _require_file(path: str, parser: argparse.ArgumentParser) -> None:
    if not os.path.exists(path):
        parser.error(f"input file not found: {path}")


def _read_corpus(path: str, fmt: str, parser: argparse.ArgumentParser) -> Corpus:
    _require_file(path, parser)
    if fmt == "auto":
        fmt = "jsonl" if path.endswith((".jsonl", ".json")) else "bio"
    diagnostics: list[str] = []
    corpus = read_jsonl(path, diagnostics) if fmt == "jsonl" else read_bio(path, diagnostics)
    for msg in diagnostics:
        print(msg, file=sys.stderr)
    return corpus


def _load_schema(args: argparse.Namespace, corpus: Corpus, parser) -> LabelSchema:
    if getattr(args, "schema", None):
        _require_file(args.schema, parser)
        with open(args.schema, "r", encoding="utf-8") as fh:
            return LabelSchema.from_dict(json.load(fh))
    symmetric = ()
    if getattr(args, "symmetric", None):
        symmetric = tuple(s for s in args.symmetric.split(",") if s)
    return infer_schema(corpus, symmetric=symmetric, nested=getattr(args, "nested", False))


def _entity_keys(corpus: Corpus) -> set[tuple]:
    return {
        (d.doc_id, m.span.start, m.span.end, m.label)
        for d in corpus
        for m in d.entities
    }


def _relation_keys(corpus: Corpus) -> set[tuple]:
    return {
        (d.doc_id, r.subject.start, r.subject.end, r.object.start, r.object.end, r.label)
        for d in corpus
        for r in d.relations
    }


def _entity_type_map(corpus: Corpus) -> dict[tuple, str]:
    return {
        (d.doc_id, m.span.start, m.span.end): m.label
        for d in corpus
        for m in d.entities
    }


def _print_report(name: str, report: EvalReport) -> None:
    print(report.pretty(name))
    for line in report.lines(name):
        print(line)


def cmd_prepare(args, parser) -> int:
    corpus = _read_corpus(args.input, args.format, parser)
    n_sents = sum(d.num_sentences for d in corpus)
    n_tokens = sum(len(d.tokens) for d in corpus)
    n_ents = sum(len(d.entities) for d in corpus)
    n_rels = sum(len(d.relations) for d in corpus)
    schema = infer_schema(corpus)
    print(
        f"documents={len(corpus)} sentences={n_sents} tokens={n_tokens} "
        f"entities={n_ents} ({len(schema.entity_types)} types) "
        f"relations={n_rels} ({len(schema.relation_types)} types)"
    )
    if args.output:
        if args.to == "bio":
            write_bio(corpus, args.output)
        else:
            write_jsonl(corpus, args.output)
        print(f"wrote {args.output}")
    return 0


def cmd_train_ner(args, parser) -> int:
    config = _build_config(args, parser)
    corpus = _read_corpus(args.train, args.format, parser)
    schema = _load_schema(args, corpus, parser)
    model = train_ner(corpus, schema, config)
    save_model(model, args.out)
    print(f"saved NER model to {args.out}")
    return 0


def cmd_train_re(args, parser) -> int:
    config = _build_config(args, parser)
    corpus = _read_corpus(args.train, args.format, parser)
    schema = _load_schema(args, corpus, parser)
    model = train_re(corpus, schema, config)
    save_model(model, args.out)
    print(f"saved RE model to {args.out}")
    return 0


def cmd_predict(args, parser) -> int:
    _require_file(args.model, parser)
    model = load_model(args.model)
    if not isinstance(model, NerModel):
        parser.error(f"{args.model} is not a NER model")
    corpus = _read_corpus(args.input, args.format, parser)
    ner_pred = predict_ner(
        model,
        corpus,
        group_size=args.group_size,
        packing=args.packing,
        stage1_top_m=args.two_stage_m,
        workers=args.workers,
    )
    re_pred = None
    if args.re_model:
        _require_file(args.re_model, parser)
        re_model = load_model(args.re_model)
        if not isinstance(re_model, ReModel):
            parser.error(f"{args.re_model} is not a RE model")
        re_pred = predict_re(re_model, corpus, ner_pred.entities, workers=args.workers)
        if args.refine and re_model.dominance_ratio is not None:
            by_span = {k[:3]: v for k, v in ner_pred.scores.items()}
            ner_pred.entities = refine_entity_types(
                ner_pred.entities,
                re_pred.aux_votes,
                re_model.dominance_ratio,
                enable_threshold=args.refine_threshold,
            )
            ner_pred.scores = {
                (doc_id, m.span.start, m.span.end, m.label): by_span[
                    (doc_id, m.span.start, m.span.end)
                ]
                for doc_id, ms in ner_pred.entities.items()
                for m in ms
            }
    write_predictions(args.output, corpus, ner_pred, re_pred)
    print(
        f"wrote {args.output} "
        f"(sentences={ner_pred.stats.sentences} layouts={ner_pred.stats.layouts})"
    )
    return 0


def cmd_eval(args, parser) -> int:
    gold = _read_corpus(args.gold, "jsonl", parser)
    pred = _read_corpus(args.pred, "jsonl", parser)
    symmetric: tuple[str, ...] = ()
    if args.schema:
        _require_file(args.schema, parser)
        with open(args.schema, "r", encoding="utf-8") as fh:
            symmetric = tuple(LabelSchema.from_dict(json.load(fh)).symmetric_relations)
    elif args.symmetric:
        symmetric = tuple(s for s in args.symmetric.split(",") if s)

    if args.task in ("ner", "both"):
        _print_report("ent", ner_f1(_entity_keys(gold), _entity_keys(pred)))
    if args.task in ("rel", "both"):
        gold_rel = expand_symmetric(_relation_keys(gold), symmetric)
        pred_rel = expand_symmetric(_relation_keys(pred), symmetric)
        if args.mode in (BOUNDARIES, "both"):
            _print_report("rel", rel_f1(gold_rel, pred_rel, mode=BOUNDARIES))
        if args.mode in (STRICT, "both"):
            _print_report(
                "rel_plus",
                rel_f1(
                    gold_rel,
                    pred_rel,
                    entity_types_gold=_entity_type_map(gold),
                    entity_types_pred=_entity_type_map(pred),
                    mode=STRICT,
                ),
            )
    return 0


def cmd_bench(args, parser) -> int:
    _require_file(args.model, parser)
    model = load_model(args.model)
    if not isinstance(model, NerModel):
        parser.error(f"{args.model} is not a NER model")
    corpus = _read_corpus(args.input, args.format, parser)
    try:
        group_sizes = [int(k) for k in args.group_sizes.split(",") if k]
    except ValueError:
        parser.error(f"bad --group-sizes value: {args.group_sizes!r}")
    records = sweep_group_size(
        model,
        corpus,
        group_sizes,
        strategy=args.strategy,
        repeats=args.repeats,
        stage1_top_m=args.two_stage_m,
        workers=args.workers,
    )
    sys.stdout.write(records_to_csv(records))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markerpack",
        description="Span and span-pair classification with packed marker encoding",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate and convert corpora")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("auto", "bio", "jsonl"), default="auto")
    p.add_argument("--output")
    p.add_argument("--to", choices=("jsonl", "bio"), default="jsonl")
    p.set_defaults(func=cmd_prepare)

    for name, fn in (("train-ner", cmd_train_ner), ("train-re", cmd_train_re)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a gold corpus")
        p.add_argument("--train", required=True, help="training corpus")
        p.add_argument("--format", choices=("auto", "bio", "jsonl"), default="auto")
        p.add_argument("--schema", help="JSON schema file (types, symmetric labels)")
        p.add_argument("--symmetric", help="comma-separated symmetric relation labels")
        p.add_argument("--nested", action="store_true", help="keep overlapping mentions")
        p.add_argument("--out", required=True, help="model output path (.npz)")
        p.add_argument("--config", help="flat JSON config file; flags override it")
        _add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("predict", help="predict entities (and relations)")
    p.add_argument("--model", required=True, help="NER model path")
    p.add_argument("--re-model", help="optional RE model path")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("auto", "bio", "jsonl"), default="auto")
    p.add_argument("--output", required=True)
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--packing", choices=("neighborhood", "random"), default="neighborhood")
    p.add_argument("--two-stage-m", type=int, default=None,
                   help="stage-1 keeps the top M spans per sentence")
    p.add_argument("--refine", action=argparse.BooleanOptionalAction, default=True,
                   help="refine entity types from the RE model's aux head")
    p.add_argument("--refine-threshold", type=float, default=0.4)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--task", choices=("ner", "rel", "both"), default="both")
    p.add_argument("--mode", choices=(BOUNDARIES, STRICT, "both"), default="both")
    p.add_argument("--symmetric", help="comma-separated symmetric relation labels")
    p.add_argument("--schema")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="group-size throughput sweep (CSV on stdout)")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("auto", "bio", "jsonl"), default="auto")
    p.add_argument("--group-sizes", required=True, help="comma-separated, e.g. 128,256,512")
    p.add_argument("--strategy", choices=("neighborhood", "random"), default="neighborhood")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--two-stage-m", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args, parser)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except MarkerPackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
