"""Sequence generation: greedy and beam search with length-normalized
scoring, plus the two-pass pivot baseline.

Decoding always runs at 64 bit on a read-only parameter snapshot so that
hypothesis scores and teacher-forced re-scores agree tightly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import TaggedPair
from .model import ModelConfig, decode_logits, encode
from .validation import check_int, check_scalar


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    length_penalty: float = 0.6
    max_len_factor: float = 2.0
    max_len_constant: int = 8

    def __post_init__(self):
        check_int(self.beam_size, "beam_size", minimum=1)
        check_scalar(self.length_penalty, "length_penalty", minimum=0.0)
        check_scalar(self.max_len_factor, "max_len_factor", minimum=0.0)
        check_int(self.max_len_constant, "max_len_constant", minimum=1)

    def max_len(self, src_len: int) -> int:
        return int(self.max_len_factor * src_len) + self.max_len_constant


@dataclass(frozen=True)
class Hypothesis:
    """Decoded target tokens (ending in <eos> unless truncated) and scores."""

    tokens: tuple[int, ...]
    raw_score: float
    normalized_score: float

    @staticmethod
    def ranked(tokens: tuple[int, ...], raw: float, beta: float) -> "Hypothesis":
        return Hypothesis(tokens, raw, raw / len(tokens) ** beta)


def _as_float64(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(np.float64)) for k, v in params.items()}


def _encode_src(src_tokens, params, config: ModelConfig):
    src = np.asarray(src_tokens, dtype=np.int64)[None, :]
    mask = np.ones_like(src, dtype=bool)
    return encode(src, mask, params, config, train=False)


def _next_log_probs(enc, prefixes: np.ndarray, params, config: ModelConfig) -> np.ndarray:
    """Log-probability rows for the next token of each prefix (K, V)."""
    k = prefixes.shape[0]
    if enc.hidden.data.shape[0] != k:
        hidden = Tensor(np.broadcast_to(
            enc.hidden.data, (k,) + enc.hidden.data.shape[1:]).copy())
        mask = np.broadcast_to(enc.mask, (k,) + enc.mask.shape[1:])
        enc = type(enc)(hidden=hidden, mask=mask)
    logits = decode_logits(enc, prefixes, params, config, train=False)
    last = logits.data[:, -1, :]
    shifted = last - last.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def greedy_decode(src_tokens, params, config: ModelConfig, beam: BeamConfig,
                  bos_id: int, eos_id: int) -> Hypothesis:
    """Argmax token per step until <eos> or the length cap."""
    with ad.no_grad():
        params = _as_float64(params)
        enc = _encode_src(src_tokens, params, config)
        max_len = min(beam.max_len(len(src_tokens)), config.max_positions - 1)
        prefix = [bos_id]
        tokens: list[int] = []
        raw = 0.0
        while len(tokens) < max_len:
            logp = _next_log_probs(enc, np.asarray([prefix], dtype=np.int64),
                                   params, config)[0]
            nxt = int(np.argmax(logp))
            raw += float(logp[nxt])
            tokens.append(nxt)
            prefix.append(nxt)
            if nxt == eos_id:
                break
    return Hypothesis.ranked(tuple(tokens), raw, beam.length_penalty)


def beam_search(src_tokens, params, config: ModelConfig, beam: BeamConfig,
                bos_id: int, eos_id: int) -> list[Hypothesis]:
    """Standard beam search; finished hypotheses compete by normalized score.

    Ties break toward the lexicographically smaller token sequence, making
    results platform-deterministic.
    """
    with ad.no_grad():
        params = _as_float64(params)
        enc = _encode_src(src_tokens, params, config)
        max_len = min(beam.max_len(len(src_tokens)), config.max_positions - 1)
        beta = beam.length_penalty
        alive: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
        finished: list[Hypothesis] = []

        for _ in range(max_len):
            prefixes = np.asarray([(bos_id, *tok) for _, tok in alive], dtype=np.int64)
            logp = _next_log_probs(enc, prefixes, params, config)
            raws = np.asarray([raw for raw, _ in alive])
            scores = raws[:, None] + logp                       # (K, V)
            flat = scores.ravel()
            top = np.argsort(-flat, kind="stable")[:beam.beam_size]
            vocab = scores.shape[1]
            next_alive: list[tuple[float, tuple[int, ...]]] = []
            for i in top:
                raw = float(flat[i])
                tok = (*alive[i // vocab][1], int(i % vocab))
                if tok[-1] == eos_id:
                    finished.append(Hypothesis.ranked(tok, raw, beta))
                else:
                    next_alive.append((raw, tok))
            finished.sort(key=lambda h: (-h.normalized_score, h.tokens))
            finished = finished[:beam.beam_size]
            next_alive.sort(key=lambda c: (-c[0], c[1]))
            alive = next_alive
            if not alive:
                break
            # best continuation cannot beat the kept pool: scores only decay
            if len(finished) >= beam.beam_size:
                bound = alive[0][0] / max_len ** beta
                if bound <= finished[-1].normalized_score:
                    break

        for raw, tok in alive:
            if len(tok) == max_len:
                finished.append(Hypothesis.ranked(tok, raw, beta))
        finished.sort(key=lambda h: (-h.normalized_score, h.tokens))
        return finished[:beam.beam_size]


def rescore(src_tokens, hyp_tokens, params, config: ModelConfig, bos_id: int) -> float:
    """Teacher-forced log probability of an emitted sequence."""
    with ad.no_grad():
        params = _as_float64(params)
        enc = _encode_src(src_tokens, params, config)
        tgt_in = np.asarray([[bos_id, *hyp_tokens[:-1]]], dtype=np.int64)
        logits = decode_logits(enc, tgt_in, params, config, train=False)
        rows = logits.data[0]
        shifted = rows - rows.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        return float(logp[np.arange(len(hyp_tokens)), list(hyp_tokens)].sum())


def translate_pair(pair: TaggedPair, params, config: ModelConfig, beam: BeamConfig,
                   bos_id: int, eos_id: int) -> Hypothesis:
    return beam_search(pair.src_tokens, params, config, beam, bos_id, eos_id)[0]


def pivot_translate(src_text_tokens, tag_ids: dict[str, int], src_lang: str,
                    pivot_lang: str, tgt_lang: str, params, config: ModelConfig,
                    beam: BeamConfig, bos_id: int, eos_id: int) -> Hypothesis:
    """Decode source -> pivot, retag the intermediate, decode pivot -> target.

    With pivot == target this is a single direct decode.
    """
    if pivot_lang == tgt_lang:
        tagged = (tag_ids[tgt_lang], *src_text_tokens)
        return beam_search(tagged, params, config, beam, bos_id, eos_id)[0]
    first = beam_search((tag_ids[pivot_lang], *src_text_tokens), params, config,
                        beam, bos_id, eos_id)[0]
    bridge = first.tokens[:-1] if first.tokens[-1] == eos_id else first.tokens
    # a truncated max-length bridge must still fit the encoder with its tag
    bridge = bridge[:config.max_positions - 1]
    retagged = (tag_ids[tgt_lang], *bridge)
    return beam_search(retagged, params, config, beam, bos_id, eos_id)[0]


def decode_corpus(pairs: list[TaggedPair], params, config: ModelConfig,
                  beam: BeamConfig, bos_id: int, eos_id: int,
                  threads: int = 1) -> list[Hypothesis]:
    """Sentence-parallel decoding; output order matches input order."""
    if threads <= 1:
        return [translate_pair(p, params, config, beam, bos_id, eos_id)
                for p in pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(
            lambda p: translate_pair(p, params, config, beam, bos_id, eos_id), pairs))
