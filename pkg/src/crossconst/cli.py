"""Command-line entry point.

One binary, subcommand style. Every run resolves its configuration from
defaults, an optional preset, an optional ``key = value`` config file, and
explicit flags (in that order), then echoes the resolved configuration at
the top of its output. Exit codes: 0 success, 1 usage error, 2 data error,
3 invariant or divergence failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .bpe import MergeTable, MiniBpe
from .corpus import (SynthSpec, english_centric_pairs, generate_synthetic_corpus,
                     load_corpus, pairs_for_direction, save_corpus)
from .decoding import BeamConfig, decode_corpus, pivot_translate
from .evaluation import (EvalReport, RepresentationDump, evaluate_run,
                         export_representations, similarity_search,
                         write_translations_tsv)
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .optim import DivergenceError
from .theory import verify_theory
from .trainer import (PRESETS, TrainConfig, parse_config_file, run_stage,
                      split_config_keys)
from .validation import ConfigError, DataError

_BEAM_KEYS = {"beam_size": "int", "length_penalty": "float",
              "max_len_factor": "float", "max_len_constant": "int"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _echo_config(resolved: dict, stream=None) -> None:
    stream = stream or sys.stdout
    for key in sorted(resolved):
        print(f"# {key} = {resolved[key]}", file=stream)


def _resolve(args, defaults: dict) -> dict:
    """defaults < preset < config file < explicit CLI flags."""
    resolved = dict(defaults)
    preset = getattr(args, "preset", None)
    if preset:
        resolved.update({k: v for k, v in PRESETS[preset].items() if k in resolved
                         or k in _BEAM_KEYS})
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        known = set(resolved) | set(_BEAM_KEYS)
        for key, raw in file_values.items():
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
        train, model, extra = split_config_keys(
            {k: v for k, v in file_values.items() if k not in _BEAM_KEYS},
            extra_keys=set())
        resolved.update(train)
        resolved.update(model)
        for key in _BEAM_KEYS:
            if key in file_values:
                from .trainer import coerce
                resolved[key] = coerce(file_values[key], _BEAM_KEYS[key])
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _train_defaults() -> dict:
    d = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    d.update({f.name: f.default for f in dataclasses.fields(ModelConfig)
              if f.default is not dataclasses.MISSING})
    d.update({"beam_size": 5, "length_penalty": 0.6, "max_len_factor": 2.0,
              "max_len_constant": 8})
    return d


def _tokenizer_for(corpus, merges_path) -> MiniBpe:
    merges = MergeTable.from_file(merges_path)
    tok = MiniBpe(num_merges=len(merges), tag_tokens=corpus.tag_tokens())
    return tok.load(merges, corpus.all_texts("train"))


def _beam_from(resolved: dict) -> BeamConfig:
    return BeamConfig(beam_size=int(resolved["beam_size"]),
                      length_penalty=float(resolved["length_penalty"]),
                      max_len_factor=float(resolved["max_len_factor"]),
                      max_len_constant=int(resolved["max_len_constant"]))


def _model_config_from(resolved: dict, vocab_size: int) -> ModelConfig:
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    kwargs = {k: v for k, v in resolved.items() if k in names and k != "vocab_size"}
    return ModelConfig(vocab_size=vocab_size, **kwargs)


def _train_config_from(resolved: dict, stage: str) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    kwargs = {k: v for k, v in resolved.items() if k in names and k != "stage"}
    return TrainConfig(stage=stage, **kwargs)


def cmd_make_corpus(args) -> int:
    defaults = {"seed": 0, "num_languages": 3, "num_sentences": 1000,
                "valid_fraction": 0.05, "test_fraction": 0.05}
    resolved = dict(defaults)
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    _echo_config(resolved)
    corpus = generate_synthetic_corpus(SynthSpec(**resolved))
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.renders)} sentences x {len(corpus.languages)} "
          f"languages to {args.out}")
    return 0


def cmd_train_bpe(args) -> int:
    resolved = {"num_merges": args.num_merges if args.num_merges is not None else 200,
                "corpus": args.corpus}
    _echo_config(resolved)
    corpus = load_corpus(args.corpus)
    tok = MiniBpe(num_merges=int(resolved["num_merges"]),
                  tag_tokens=corpus.tag_tokens())
    tok.fit(corpus.all_texts("train"))
    path = os.path.join(args.out or args.corpus, "merges.txt")
    tok.merges.to_file(path)
    print(f"learned {len(tok.merges)} merges, vocab size {len(tok.vocab)} -> {path}")
    return 0


def _run_training_stage(args, stage: str) -> int:
    resolved = _resolve(args, _train_defaults())
    out_dir = args.out or args.corpus
    os.makedirs(out_dir, exist_ok=True)
    corpus = load_corpus(args.corpus)
    tok = _tokenizer_for(corpus, args.merges or os.path.join(args.corpus, "merges.txt"))
    vocab_size = len(tok.vocab)

    init_params = None
    if stage == "finetune":
        if not args.init_checkpoint:
            print("error: finetune requires --init-checkpoint: the two-stage "
                  "recipe finetunes a conventionally pretrained model",
                  file=sys.stderr)
            return 1
        init_params, model_config, _, _ = load_checkpoint(
            args.init_checkpoint, expected_vocab_size=vocab_size)
    else:
        model_config = _model_config_from(resolved, vocab_size)

    train_config = _train_config_from(resolved, stage)
    log_path = os.path.join(out_dir, f"log_{stage}.tsv")
    train_pairs = english_centric_pairs(corpus, tok, split="train")
    valid_pairs = english_centric_pairs(corpus, tok, split="valid")
    with open(log_path, "w", encoding="utf-8") as log_fh:
        _echo_config(resolved)
        _echo_config(resolved, stream=log_fh)
        result = run_stage(train_pairs, valid_pairs, model_config, train_config,
                           tok.vocab, params=init_params,
                           log_fn=lambda line: (print(line), log_fh.write(line + "\n")))
    ckpt_path = os.path.join(out_dir, f"ckpt_{stage}.npz")
    save_checkpoint(result.params, model_config, stage, ckpt_path,
                    extra={"best_step": result.best_step,
                           "best_valid_ce": result.best_valid_ce})
    print(f"best step {result.best_step} valid_ce {result.best_valid_ce:.6f} "
          f"-> {ckpt_path}")
    return 0


def cmd_pretrain(args) -> int:
    return _run_training_stage(args, "pretrain")


def cmd_finetune(args) -> int:
    return _run_training_stage(args, "finetune")


def cmd_translate(args) -> int:
    resolved = _resolve(args, _train_defaults())
    _echo_config(resolved)
    corpus = load_corpus(args.corpus)
    tok = _tokenizer_for(corpus, args.merges or os.path.join(args.corpus, "merges.txt"))
    params, model_config, _, _ = load_checkpoint(args.checkpoint,
                                                 expected_vocab_size=len(tok.vocab))
    beam = _beam_from(resolved)
    pairs = pairs_for_direction(corpus, tok, args.src_lang, args.tgt_lang, args.split)
    hyps = decode_corpus(pairs, params, model_config, beam, tok.vocab.bos_id,
                         tok.vocab.eos_id, threads=args.threads or 1)
    rows = []
    for sid, hyp in zip(corpus.split_ids(args.split), hyps):
        tokens = hyp.tokens[:-1] if hyp.tokens[-1] == tok.vocab.eos_id else hyp.tokens
        rows.append((sid, args.src_lang, args.tgt_lang, tok.decode(tokens),
                     hyp.normalized_score))
    out_file = args.out_file or os.path.join(args.out or args.corpus,
                                             f"hyp_{args.src_lang}_{args.tgt_lang}.tsv")
    write_translations_tsv(out_file, rows)
    print(f"wrote {len(rows)} hypotheses to {out_file}")
    return 0


def cmd_pivot_translate(args) -> int:
    resolved = _resolve(args, _train_defaults())
    _echo_config(resolved)
    corpus = load_corpus(args.corpus)
    tok = _tokenizer_for(corpus, args.merges or os.path.join(args.corpus, "merges.txt"))
    params, model_config, _, _ = load_checkpoint(args.checkpoint,
                                                 expected_vocab_size=len(tok.vocab))
    beam = _beam_from(resolved)
    pivot = args.pivot_lang or corpus.pivot.code
    tag_ids = {lang.code: tok.vocab.tag_id(lang.tag_token)
               for lang in corpus.languages}
    rows = []
    for sid in corpus.split_ids(args.split):
        tokens = tuple(tok.encode(corpus.text(sid, args.src_lang)))
        hyp = pivot_translate(tokens, tag_ids, args.src_lang, pivot, args.tgt_lang,
                              params, model_config, beam, tok.vocab.bos_id,
                              tok.vocab.eos_id)
        out = hyp.tokens[:-1] if hyp.tokens[-1] == tok.vocab.eos_id else hyp.tokens
        rows.append((sid, args.src_lang, args.tgt_lang, tok.decode(out),
                     hyp.normalized_score))
    out_file = args.out_file or os.path.join(
        args.out or args.corpus, f"pivot_{args.src_lang}_{args.tgt_lang}.tsv")
    write_translations_tsv(out_file, rows)
    print(f"wrote {len(rows)} pivot hypotheses to {out_file}")
    return 0


def cmd_evaluate(args) -> int:
    resolved = _resolve(args, _train_defaults())
    _echo_config(resolved)
    corpus = load_corpus(args.corpus)
    tok = _tokenizer_for(corpus, args.merges or os.path.join(args.corpus, "merges.txt"))
    params, model_config, _, _ = load_checkpoint(args.checkpoint,
                                                 expected_vocab_size=len(tok.vocab))
    report = evaluate_run(corpus, tok, params, model_config, _beam_from(resolved),
                          split=args.split, include_pivot=args.pivot,
                          threads=args.threads or 1)
    print(report.table())
    out_file = args.out_file or os.path.join(args.out or args.corpus, "report.json")
    report.to_json(out_file)
    print(f"wrote report to {out_file}")
    return 0


def cmd_simsearch(args) -> int:
    dump = RepresentationDump.from_jsonl(args.dump)
    langs = sorted({lang for _, lang, _ in dump.records})
    directions = ([(args.src_lang, args.tgt_lang)]
                  if args.src_lang and args.tgt_lang
                  else [(a, b) for a in langs for b in langs if a != b])
    _echo_config({"dump": args.dump, "directions": len(directions)})
    for src, tgt in directions:
        acc = similarity_search(dump, src, tgt)
        print(f"{src}->{tgt}\t{acc:.2f}")
    return 0


def cmd_export_reprs(args) -> int:
    resolved = {"split": args.split, "checkpoint": args.checkpoint}
    _echo_config(resolved)
    corpus = load_corpus(args.corpus)
    tok = _tokenizer_for(corpus, args.merges or os.path.join(args.corpus, "merges.txt"))
    params, model_config, _, _ = load_checkpoint(args.checkpoint,
                                                 expected_vocab_size=len(tok.vocab))
    dump = export_representations(corpus, tok, params, model_config, split=args.split)
    out_file = args.out_file or os.path.join(args.out or args.corpus, "reprs.jsonl")
    dump.to_jsonl(out_file)
    print(f"wrote {len(dump.records)} records to {out_file}")
    return 0


def cmd_verify_theory(args) -> int:
    resolved = {"seeds": args.seeds, "sizes": args.sizes}
    _echo_config(resolved)
    nx, ny, nz = (int(s) for s in args.sizes.split(","))
    rows, all_ok = verify_theory(args.seeds, nx, ny, nz)
    lines = ["seed\t|X|\t|Y|\t|Z|\tL\tL_bar\tgap\tkl_sum\tresidual"]
    for row in rows:
        lines.append("\t".join(
            str(v) if isinstance(v, int) else f"{v:.12g}" for v in row))
    text = "\n".join(lines)
    print(text)
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if not all_ok:
        print("theory invariants FAILED", file=sys.stderr)
        return 3
    print(f"all invariants hold on {args.seeds} worlds")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="crossconst",
                     description="Desk-scale multilingual translation laboratory "
                                 "with cross-lingual consistency regularization")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help="output directory")
        if corpus:
            p.add_argument("--corpus", required=True, help="corpus directory")
            p.add_argument("--merges", help="merge table file")

    p = sub.add_parser("make-corpus", help="generate the synthetic multiway corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--num-languages", dest="num_languages", type=int)
    p.add_argument("--num-sentences", dest="num_sentences", type=int)
    p.add_argument("--valid-fraction", dest="valid_fraction", type=float)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("train-bpe", help="learn the shared merge table")
    p.add_argument("--corpus", required=True)
    p.add_argument("--num-merges", dest="num_merges", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_bpe)

    for stage in ("pretrain", "finetune"):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        common(p)
        for name, typ in (("alpha", float), ("label_smoothing", float),
                          ("lr_base", float), ("warmup_steps", int),
                          ("max_steps", int), ("valid_interval", int),
                          ("max_tokens", int), ("clip_norm", float),
                          ("num_layers", int), ("num_heads", int),
                          ("d_model", int), ("d_ff", int),
                          ("dropout_rate", float)):
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
        if stage == "finetune":
            p.add_argument("--init-checkpoint", dest="init_checkpoint")
        p.set_defaults(func=cmd_pretrain if stage == "pretrain" else cmd_finetune)

    for name, fn in (("translate", cmd_translate),
                     ("pivot-translate", cmd_pivot_translate)):
        p = sub.add_parser(name, help=f"{name} a corpus split")
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--src-lang", dest="src_lang", required=True)
        p.add_argument("--tgt-lang", dest="tgt_lang", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--out-file", dest="out_file")
        p.add_argument("--beam-size", dest="beam_size", type=int)
        p.add_argument("--length-penalty", dest="length_penalty", type=float)
        if name == "pivot-translate":
            p.add_argument("--pivot-lang", dest="pivot_lang")
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="decode all directions and report BLEU "
                                        "and similarity search")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--pivot", action="store_true")
    p.add_argument("--out-file", dest="out_file")
    p.add_argument("--beam-size", dest="beam_size", type=int)
    p.add_argument("--length-penalty", dest="length_penalty", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simsearch", help="similarity-search accuracy from a dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--src-lang", dest="src_lang")
    p.add_argument("--tgt-lang", dest="tgt_lang")
    p.set_defaults(func=cmd_simsearch)

    p = sub.add_parser("export-reprs", help="pooled sentence representations")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out-file", dest="out_file")
    p.set_defaults(func=cmd_export_reprs)

    p = sub.add_parser("verify-theory", help="numeric bound and gap verifier")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--sizes", default="5,5,5")
    p.add_argument("--out-file", dest="out_file")
    p.set_defaults(func=cmd_verify_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        kind = 2 if isinstance(exc, CheckpointError) else 1
        print(f"error: {exc}", file=sys.stderr)
        return kind
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
