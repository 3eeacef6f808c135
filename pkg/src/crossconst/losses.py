"""Training objectives: label-smoothed cross entropy, the cross-lingual KL
consistency term, and their weighted combination.

Two routes exist on purpose: contract functions operate on probability
rows (used by tests and reports), while the ``*_from_logits`` versions run
through log-softmax for stable training. Both agree at 64 bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Batch, TaggedPair, collate
from .model import ModelConfig, encode, decode_logits
from .validation import check_scalar

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    kl: float
    alpha: float
    token_count: int

    @property
    def total(self) -> float:
        return self.ce + self.alpha * self.kl


def smoothed_targets(gold: np.ndarray, vocab_size: int, smoothing: float,
                     mask: np.ndarray) -> np.ndarray:
    """Dense target rows: 1 - eps on gold, eps / (V - 1) elsewhere.

    Pad positions get all-zero rows so they carry no weight anywhere.
    """
    check_scalar(smoothing, "label_smoothing", minimum=0.0, maximum=1.0,
                 include_max=False)
    gold = np.asarray(gold, dtype=np.int64)
    rows = np.full(gold.shape + (vocab_size,), smoothing / (vocab_size - 1),
                   dtype=np.float64)
    np.put_along_axis(rows, gold[..., None], 1.0 - smoothing, axis=-1)
    rows *= np.asarray(mask, dtype=np.float64)[..., None]
    return rows


def cross_entropy_loss(probs: np.ndarray, target: np.ndarray,
                       mask: np.ndarray) -> float:
    """Mean over non-pad tokens of -sum_v q_v log p_v (probability inputs)."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape} vs target {target.shape}")
    per_pos = -(target * np.log(np.maximum(probs, LOG_FLOOR))).sum(axis=-1)
    mask = np.asarray(mask, dtype=np.float64)
    return float((per_pos * mask).sum() / mask.sum())


def kl_divergence_rows(p: np.ndarray, q: np.ndarray, mask: np.ndarray) -> float:
    """Mean over non-pad positions of KL(p_row || q_row) on probability rows."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    ratio = np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR))
    per_pos = (p * ratio).sum(axis=-1)
    mask = np.asarray(mask, dtype=np.float64)
    return float((per_pos * mask).sum() / mask.sum())


def _masked_mean(per_pos: Tensor, mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=per_pos.data.dtype)
    total = ad.tensor_sum(ad.mul(per_pos, mask))
    return ad.mul(total, 1.0 / float(mask.sum()))


def cross_entropy_from_logits(logits: Tensor, gold: np.ndarray, smoothing: float,
                              mask: np.ndarray) -> Tensor:
    """Differentiable label-smoothed CE via log-softmax.

    Algebraic form: -(1 - eps) log p_gold - eps/(V-1) (sum_v log p_v - log p_gold).
    """
    vocab_size = logits.data.shape[-1]
    logp = ad.log_softmax(logits, axis=-1)
    gold = np.asarray(gold, dtype=np.int64)
    logp_gold = ad.take_label(logp, gold)
    if smoothing == 0.0:
        return _masked_mean(ad.mul(logp_gold, -1.0), mask)
    off = smoothing / (vocab_size - 1)
    logp_sum = ad.tensor_sum(logp, axis=-1)
    per_pos = ad.add(ad.mul(logp_gold, -(1.0 - smoothing - off)),
                     ad.mul(logp_sum, -off))
    return _masked_mean(per_pos, mask)


def kl_consistency_from_logits(p_logits: Tensor, q_logits: Tensor,
                               mask: np.ndarray) -> Tensor:
    """KL(softmax(p) || softmax(q)), mean over non-pad target positions.

    Gradients propagate into both argument branches.
    """
    if p_logits.data.shape != q_logits.data.shape:
        raise ValueError("consistency branches must share the target length")
    logp = ad.log_softmax(p_logits, axis=-1)
    logq = ad.log_softmax(q_logits, axis=-1)
    p = ad.exp(logp)
    per_pos = ad.tensor_sum(ad.mul(p, ad.add(logp, ad.mul(logq, -1.0))), axis=-1)
    return _masked_mean(per_pos, mask)


def make_copied_pair(pair: TaggedPair, eos_id: int) -> TaggedPair:
    """Target-to-target copy: same tag, source becomes the target text."""
    src = (pair.src_tokens[0], *pair.tgt_tokens[:-1])
    if pair.tgt_tokens[-1] != eos_id:
        raise ValueError("tagged pair target must end with <eos>")
    return TaggedPair(src, pair.tgt_tokens, pair.tgt_lang, pair.tgt_lang)


def copied_batch(batch: Batch, pad_id: int, bos_id: int, eos_id: int) -> Batch:
    """Batch of target-to-target copies, aligned row-for-row with ``batch``.

    The copy's source is the tag followed by the target text, which is
    exactly the teacher-forcing input with <bos> swapped for the tag.
    """
    src = batch.tgt_in.copy()
    src[:, 0] = batch.src[:, 0]
    return Batch(src=src, src_mask=batch.tgt_mask.copy(), tgt_in=batch.tgt_in,
                 tgt_out=batch.tgt_out, tgt_mask=batch.tgt_mask,
                 pairs=batch.pairs)


def copied_batch_reference(batch: Batch, pad_id: int, bos_id: int, eos_id: int) -> Batch:
    """Per-pair construction route; kept as the oracle for the fast path."""
    return collate([make_copied_pair(p, eos_id) for p in batch.pairs], pad_id, bos_id)


def consistency_loss(batch: Batch, copied: Batch, params, config: ModelConfig,
                     alpha: float, smoothing: float, train: bool = False,
                     rng=None) -> tuple[Tensor, LossBreakdown]:
    """Combined objective: CE on the translation pair plus the weighted KL
    between the translation and copy branches (skipped when alpha == 0).

    The two branches draw independent dropout masks in train mode.
    """
    check_scalar(alpha, "alpha", minimum=0.0)
    logits = _batch_logits(batch, params, config, train, rng)
    ce = cross_entropy_from_logits(logits, batch.tgt_out, smoothing, batch.tgt_mask)
    if alpha == 0.0:
        breakdown = LossBreakdown(ce=float(ce.data), kl=0.0, alpha=alpha,
                                  token_count=batch.num_target_tokens)
        return ce, breakdown
    copy_logits = _batch_logits(copied, params, config, train, rng)
    kl = kl_consistency_from_logits(logits, copy_logits, batch.tgt_mask)
    total = ad.add(ce, ad.mul(kl, alpha))
    breakdown = LossBreakdown(ce=float(ce.data), kl=float(kl.data), alpha=alpha,
                              token_count=batch.num_target_tokens)
    return total, breakdown


def _batch_logits(batch: Batch, params, config: ModelConfig, train: bool, rng) -> Tensor:
    enc = encode(batch.src, batch.src_mask, params, config, train=train, rng=rng)
    return decode_logits(enc, batch.tgt_in, params, config, train=train, rng=rng,
                         tgt_mask=batch.tgt_mask)
