"""Corpus BLEU, multilingual similarity search, and run-level reports.

BLEU is corpus-level BLEU-4 with brevity penalty on whitespace tokens of
decoded (de-BPE'd) text, unsmoothed: a zero precision at any order zeroes
the score. All comparisons in this package are internal, baseline versus
regularized, on this one metric.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .bpe import MiniBpe
from .corpus import (MultiwayCorpus, pairs_for_direction, supervised_directions,
                     zero_shot_directions)
from .decoding import BeamConfig, decode_corpus, pivot_translate
from .model import ModelConfig, encode, pooled_representation

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuScore:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int


def _ngrams(tokens: list[str], order: int) -> Counter:
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def corpus_bleu(hypotheses: list[str], references: list[str]) -> BleuScore:
    """Clipped n-gram precision up to 4-grams with brevity penalty."""
    if not hypotheses or len(hypotheses) != len(references):
        raise ValueError("need equally many non-empty hypothesis/reference lists")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = hyp.split()
        ref_tokens = ref.split()
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp_tokens, n)
            ref_counts = _ngrams(ref_tokens, n)
            totals[n - 1] += max(len(hyp_tokens) - n + 1, 0)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    bp = min(1.0, np.exp(1.0 - ref_len / hyp_len)) if hyp_len else 0.0
    if any(p == 0.0 for p in precisions):
        bleu = 0.0
    else:
        bleu = 100.0 * bp * float(np.exp(np.mean(np.log(precisions))))
    return BleuScore(bleu=bleu, precisions=precisions, brevity_penalty=float(bp),
                     hyp_length=hyp_len, ref_length=ref_len)


@dataclass
class RepresentationDump:
    """Pooled sentence vectors keyed by (sentence id, language)."""

    records: list[tuple[int, str, np.ndarray]] = field(default_factory=list)

    def add(self, sentence_id: int, lang: str, vec: np.ndarray) -> None:
        self.records.append((int(sentence_id), lang, np.asarray(vec, dtype=np.float64)))

    def by_lang(self, lang: str) -> tuple[list[int], np.ndarray]:
        rows = sorted((sid, vec) for sid, code, vec in self.records if code == lang)
        if not rows:
            raise KeyError(f"no representations for language {lang!r}")
        ids = [sid for sid, _ in rows]
        return ids, np.stack([vec for _, vec in rows])

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for sid, lang, vec in self.records:
                fh.write(json.dumps({"id": sid, "lang": lang,
                                     "vec": [float(x) for x in vec]}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RepresentationDump":
        dump = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    dump.add(rec["id"], rec["lang"], np.asarray(rec["vec"]))
        return dump


def similarity_search(dump: RepresentationDump, src_lang: str, tgt_lang: str) -> float:
    """Percentage of sentences whose cosine-nearest neighbour on the target
    side is their true parallel counterpart; ties resolve to the lower id.
    """
    src_ids, src = dump.by_lang(src_lang)
    tgt_ids, tgt = dump.by_lang(tgt_lang)
    if src_ids != tgt_ids:
        raise ValueError("similarity search needs identical id sets on both sides")
    for name, mat in (("source", src), ("target", tgt)):
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"zero-norm {name} representation")
    sims = (src / np.linalg.norm(src, axis=1, keepdims=True)) @ \
           (tgt / np.linalg.norm(tgt, axis=1, keepdims=True)).T
    nearest = sims.argmax(axis=1)          # first maximum: lowest id on ties
    return float((nearest == np.arange(len(src_ids))).mean() * 100.0)


def parallel_cosine(dump: RepresentationDump, lang_a: str, lang_b: str) -> float:
    """Mean cosine similarity between parallel sentence pairs."""
    ids_a, a = dump.by_lang(lang_a)
    ids_b, b = dump.by_lang(lang_b)
    if ids_a != ids_b:
        raise ValueError("parallel cosine needs identical id sets")
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    return float((a * b).sum(axis=1).mean())


def export_representations(corpus: MultiwayCorpus, tokenizer: MiniBpe, params,
                           config: ModelConfig, split: str = "test",
                           probe_lang: str | None = None) -> RepresentationDump:
    """Pooled encoder vectors for every (sentence, language) of a split.

    Every source is tagged toward one fixed probe language (the pivot by
    default) so vectors differ only by source language.
    """
    from . import autodiff as ad

    probe = probe_lang or corpus.pivot.code
    tag = tokenizer.vocab.tag_id(corpus.language(probe).tag_token)
    dump = RepresentationDump()
    with ad.no_grad():
        for lang in corpus.languages:
            for sid in corpus.split_ids(split):
                ids = np.asarray([[tag, *tokenizer.encode(corpus.text(sid, lang.code))]],
                                 dtype=np.int64)
                enc = encode(ids, np.ones_like(ids, dtype=bool), params, config)
                dump.add(sid, lang.code, pooled_representation(enc)[0])
    return dump


@dataclass
class DirectionResult:
    src: str
    tgt: str
    kind: str                  # "supervised" | "zero_shot" | "pivot"
    bleu: BleuScore


@dataclass
class EvalReport:
    directions: list[DirectionResult]
    simsearch: dict[str, float]
    supervised_avg: float
    zero_shot_avg: float
    pivot_avg: float | None = None

    def to_dict(self) -> dict:
        return {
            "directions": [
                {"src": d.src, "tgt": d.tgt, "kind": d.kind, "bleu": d.bleu.bleu,
                 "precisions": list(d.bleu.precisions),
                 "brevity_penalty": d.bleu.brevity_penalty}
                for d in self.directions],
            "simsearch": self.simsearch,
            "supervised_avg": self.supervised_avg,
            "zero_shot_avg": self.zero_shot_avg,
            "pivot_avg": self.pivot_avg,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def table(self) -> str:
        lines = [f"{'direction':<12}{'kind':<12}{'BLEU':>8}"]
        for d in self.directions:
            lines.append(f"{d.src + '->' + d.tgt:<12}{d.kind:<12}{d.bleu.bleu:>8.2f}")
        lines.append(f"{'supervised':<24}{self.supervised_avg:>8.2f}")
        lines.append(f"{'zero-shot':<24}{self.zero_shot_avg:>8.2f}")
        if self.pivot_avg is not None:
            lines.append(f"{'pivot':<24}{self.pivot_avg:>8.2f}")
        for direction, acc in sorted(self.simsearch.items()):
            lines.append(f"{direction:<12}{'simsearch':<12}{acc:>8.2f}")
        return "\n".join(lines)


def _decode_direction(corpus, tokenizer, params, config, beam, src, tgt,
                      split, threads) -> BleuScore:
    pairs = pairs_for_direction(corpus, tokenizer, src, tgt, split)
    hyps = decode_corpus(pairs, params, config, beam, tokenizer.vocab.bos_id,
                         tokenizer.vocab.eos_id, threads=threads)
    texts = [tokenizer.decode(h.tokens[:-1] if h.tokens[-1] == tokenizer.vocab.eos_id
                              else h.tokens) for h in hyps]
    refs = [corpus.text(sid, tgt) for sid in corpus.split_ids(split)]
    return corpus_bleu(texts, refs)


def evaluate_run(corpus: MultiwayCorpus, tokenizer: MiniBpe, params,
                 config: ModelConfig, beam: BeamConfig, split: str = "test",
                 include_pivot: bool = False, threads: int = 1) -> EvalReport:
    """Decode every supervised and zero-shot direction and aggregate."""
    directions: list[DirectionResult] = []
    supervised = supervised_directions(corpus)
    zero_shot = zero_shot_directions(corpus)
    for src, tgt in supervised:
        bleu = _decode_direction(corpus, tokenizer, params, config, beam, src, tgt,
                                 split, threads)
        directions.append(DirectionResult(src, tgt, "supervised", bleu))
    for src, tgt in zero_shot:
        bleu = _decode_direction(corpus, tokenizer, params, config, beam, src, tgt,
                                 split, threads)
        directions.append(DirectionResult(src, tgt, "zero_shot", bleu))

    pivot_avg = None
    if include_pivot:
        vocab = tokenizer.vocab
        tag_ids = {lang.code: vocab.tag_id(lang.tag_token) for lang in corpus.languages}
        pivot_scores = []
        for src, tgt in zero_shot:
            hyps = []
            for sid in corpus.split_ids(split):
                tokens = tuple(tokenizer.encode(corpus.text(sid, src)))
                hyp = pivot_translate(tokens, tag_ids, src, corpus.pivot.code, tgt,
                                      params, config, beam, vocab.bos_id, vocab.eos_id)
                out = hyp.tokens[:-1] if hyp.tokens[-1] == vocab.eos_id else hyp.tokens
                hyps.append(tokenizer.decode(out))
            refs = [corpus.text(sid, tgt) for sid in corpus.split_ids(split)]
            bleu = corpus_bleu(hyps, refs)
            directions.append(DirectionResult(src, tgt, "pivot", bleu))
            pivot_scores.append(bleu.bleu)
        pivot_avg = float(np.mean(pivot_scores))

    dump = export_representations(corpus, tokenizer, params, config, split=split)
    simsearch = {f"{a}->{b}": similarity_search(dump, a, b)
                 for a in [l.code for l in corpus.languages]
                 for b in [l.code for l in corpus.languages] if a != b}

    sup = [d.bleu.bleu for d in directions if d.kind == "supervised"]
    zs = [d.bleu.bleu for d in directions if d.kind == "zero_shot"]
    return EvalReport(directions=directions, simsearch=simsearch,
                      supervised_avg=float(np.mean(sup)),
                      zero_shot_avg=float(np.mean(zs)), pivot_avg=pivot_avg)


def write_translations_tsv(path, rows) -> None:
    """Columns: id, src_lang, tgt_lang, hypothesis text, normalized_score."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid, src_lang, tgt_lang, text, score in rows:
            fh.write(f"{sid}\t{src_lang}\t{tgt_lang}\t{text}\t{score:.6f}\n")
