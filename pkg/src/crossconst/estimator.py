"""Estimator facade over the corpus / training / decoding machinery.

``ZeroShotTranslator`` follows the fit/predict/transform convention with
``get_params``/``set_params``, so it clones and composes like any other
estimator. Rows of X are (src_lang, tgt_lang, src_text[, tgt_text]).
"""

from __future__ import annotations

import numpy as np

from .bpe import MiniBpe
from .corpus import LanguageId, make_tagged_pair
from .decoding import BeamConfig, beam_search
from .evaluation import corpus_bleu
from .model import ModelConfig, encode, pooled_representation
from .trainer import TrainConfig, run_stage
from .validation import DataError

_PARAM_NAMES = (
    "num_layers", "num_heads", "d_model", "d_ff", "dropout_rate", "num_merges",
    "alpha", "label_smoothing", "lr_base", "warmup_steps", "pretrain_steps",
    "finetune_steps", "valid_interval", "max_tokens", "beam_size",
    "length_penalty", "seed",
)


class ZeroShotTranslator:
    """Multilingual translator trained in two stages: plain cross-entropy
    pretraining, then consistency-regularized finetuning."""

    def __init__(self, num_layers=2, num_heads=4, d_model=64, d_ff=128,
                 dropout_rate=0.1, num_merges=200, alpha=0.25,
                 label_smoothing=0.1, lr_base=2e-3, warmup_steps=100,
                 pretrain_steps=400, finetune_steps=200, valid_interval=100,
                 max_tokens=2048, beam_size=5, length_penalty=0.6, seed=0):
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.dropout_rate = dropout_rate
        self.num_merges = num_merges
        self.alpha = alpha
        self.label_smoothing = label_smoothing
        self.lr_base = lr_base
        self.warmup_steps = warmup_steps
        self.pretrain_steps = pretrain_steps
        self.finetune_steps = finetune_steps
        self.valid_interval = valid_interval
        self.max_tokens = max_tokens
        self.beam_size = beam_size
        self.length_penalty = length_penalty
        self.seed = seed

    # -- sklearn plumbing -------------------------------------------------
    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def set_params(self, **params) -> "ZeroShotTranslator":
        for name, value in params.items():
            if name not in _PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("translator is not fitted; call fit() first")

    # -- estimator API -----------------------------------------------------
    def fit(self, X, y=None) -> "ZeroShotTranslator":
        """Train on parallel rows (src_lang, tgt_lang, src_text, tgt_text)."""
        rows = [tuple(r) for r in X]
        if not rows or any(len(r) != 4 for r in rows):
            raise DataError("fit expects rows of (src_lang, tgt_lang, src_text, tgt_text)")
        codes = sorted({r[0] for r in rows} | {r[1] for r in rows})
        self.languages_ = [LanguageId(code=c, tag_token=f"<{c}>") for c in codes]
        by_code = {lang.code: lang for lang in self.languages_}

        texts = [r[2] for r in rows] + [r[3] for r in rows]
        self.tokenizer_ = MiniBpe(num_merges=self.num_merges,
                                  tag_tokens=tuple(l.tag_token for l in self.languages_))
        self.tokenizer_.fit(texts)

        pairs = [make_tagged_pair(self.tokenizer_, src_text, tgt_text,
                                  by_code[src], by_code[tgt])
                 for src, tgt, src_text, tgt_text in rows]
        valid = pairs[::20] or pairs[:1]
        train = [p for i, p in enumerate(pairs) if i % 20 != 0] or pairs

        self.model_config_ = ModelConfig(
            vocab_size=len(self.tokenizer_.vocab), num_layers=self.num_layers,
            num_heads=self.num_heads, d_model=self.d_model, d_ff=self.d_ff,
            dropout_rate=self.dropout_rate)
        common = dict(label_smoothing=self.label_smoothing, lr_base=self.lr_base,
                      warmup_steps=self.warmup_steps, max_tokens=self.max_tokens,
                      valid_interval=self.valid_interval, seed=self.seed,
                      alpha=self.alpha)
        pre = run_stage(train, valid, self.model_config_,
                        TrainConfig(stage="pretrain", max_steps=self.pretrain_steps,
                                    **common),
                        self.tokenizer_.vocab)
        self.params_ = pre.params
        self.pretrain_history_ = pre.history
        if self.finetune_steps > 0:
            fine = run_stage(train, valid, self.model_config_,
                             TrainConfig(stage="finetune",
                                         max_steps=self.finetune_steps, **common),
                             self.tokenizer_.vocab, params=pre.params)
            self.params_ = fine.params
            self.finetune_history_ = fine.history
        return self

    def _beam(self) -> BeamConfig:
        return BeamConfig(beam_size=self.beam_size, length_penalty=self.length_penalty)

    def predict(self, X) -> list[str]:
        """Translate rows (src_lang, tgt_lang, src_text)."""
        self._check_fitted()
        by_code = {lang.code: lang for lang in self.languages_}
        out = []
        vocab = self.tokenizer_.vocab
        for src, tgt, text in (tuple(r) for r in X):
            tagged = (vocab.tag_id(by_code[tgt].tag_token),
                      *self.tokenizer_.encode(text))
            hyp = beam_search(tagged, self.params_, self.model_config_,
                              self._beam(), vocab.bos_id, vocab.eos_id)[0]
            tokens = hyp.tokens[:-1] if hyp.tokens[-1] == vocab.eos_id else hyp.tokens
            out.append(self.tokenizer_.decode(tokens))
        return out

    def transform(self, X) -> np.ndarray:
        """Pooled encoder vectors for rows (lang, text), probe-tagged toward
        the first language."""
        self._check_fitted()
        probe = self.languages_[0]
        tag = self.tokenizer_.vocab.tag_id(probe.tag_token)
        from . import autodiff as ad

        vecs = []
        with ad.no_grad():
            for _, text in (tuple(r) for r in X):
                ids = np.asarray([[tag, *self.tokenizer_.encode(text)]], dtype=np.int64)
                enc = encode(ids, np.ones_like(ids, dtype=bool), self.params_,
                             self.model_config_)
                vecs.append(pooled_representation(enc)[0])
        return np.stack(vecs)

    def score(self, X, y) -> float:
        """Corpus BLEU of predictions against references, in [0, 100]."""
        return corpus_bleu(self.predict(X), list(y)).bleu
