"""Encoder-decoder transformer over the shared multilingual vocabulary.

Pre-layer-norm residual blocks, sinusoidal positions, shared input
embedding with a tied output projection (both configurable off). Every
forward is expressed through the autodiff ops so one recorded graph
serves training; evaluation paths run under ``no_grad``.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .validation import ConfigError, check_int, check_scalar

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt or incompatible."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    dropout_rate: float = 0.1
    max_positions: int = 256
    share_embeddings: bool = True
    tie_output: bool = True

    def __post_init__(self):
        check_int(self.vocab_size, "vocab_size", minimum=1)
        check_int(self.num_layers, "num_layers", minimum=1)
        check_int(self.num_heads, "num_heads", minimum=1)
        check_int(self.d_model, "d_model", minimum=1)
        check_int(self.d_ff, "d_ff", minimum=1)
        check_int(self.max_positions, "max_positions", minimum=1)
        check_scalar(self.dropout_rate, "dropout_rate", minimum=0.0, maximum=1.0,
                     include_max=False)
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})")


@dataclass
class EncoderOutput:
    hidden: Tensor            # (batch, src_len, d_model)
    mask: np.ndarray          # (batch, src_len) bool, True on real tokens


def _uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int,
                  shape: tuple, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameter registry; names partition into emb.* / enc.* / dec.*."""
    rng = np.random.default_rng(seed)
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    params: dict[str, np.ndarray] = {}

    def attn_block(prefix: str):
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.{w}"] = _uniform_init(rng, d, d, (d, d), dtype)
        for b in ("bq", "bk", "bv", "bo"):
            params[f"{prefix}.{b}"] = np.zeros(d, dtype=dtype)

    def ln_block(prefix: str):
        params[f"{prefix}.g"] = np.ones(d, dtype=dtype)
        params[f"{prefix}.b"] = np.zeros(d, dtype=dtype)

    def ffn_block(prefix: str):
        params[f"{prefix}.w1"] = _uniform_init(rng, d, f, (d, f), dtype)
        params[f"{prefix}.b1"] = np.zeros(f, dtype=dtype)
        params[f"{prefix}.w2"] = _uniform_init(rng, f, d, (f, d), dtype)
        params[f"{prefix}.b2"] = np.zeros(d, dtype=dtype)

    if config.share_embeddings:
        params["emb.weight"] = _uniform_init(rng, v, d, (v, d), dtype)
    else:
        params["enc.emb.weight"] = _uniform_init(rng, v, d, (v, d), dtype)
        params["dec.emb.weight"] = _uniform_init(rng, v, d, (v, d), dtype)
    for layer in range(config.num_layers):
        attn_block(f"enc.{layer}.attn")
        ln_block(f"enc.{layer}.ln1")
        ffn_block(f"enc.{layer}.ffn")
        ln_block(f"enc.{layer}.ln2")
    ln_block("enc.norm")
    for layer in range(config.num_layers):
        attn_block(f"dec.{layer}.self")
        ln_block(f"dec.{layer}.ln1")
        attn_block(f"dec.{layer}.cross")
        ln_block(f"dec.{layer}.ln2")
        ffn_block(f"dec.{layer}.ffn")
        ln_block(f"dec.{layer}.ln3")
    ln_block("dec.norm")
    if not config.tie_output:
        params["dec.out.weight"] = _uniform_init(rng, d, v, (v, d), dtype)
    return {name: Tensor(arr) for name, arr in params.items()}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient registry after backward; unreached parameters report zero."""
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


@functools.lru_cache(maxsize=32)
def _sinusoidal_cached(max_positions: int, d_model: int, dtype_name: str) -> np.ndarray:
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * (dim // 2) / d_model)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype_name)


def sinusoidal_positions(max_positions: int, d_model: int, dtype=np.float64) -> np.ndarray:
    return _sinusoidal_cached(max_positions, d_model, np.dtype(dtype).name)


def _check_ids(ids: np.ndarray, config: ModelConfig, what: str) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError(f"{what} token index out of range for vocab_size {config.vocab_size}")
    if ids.shape[-1] > config.max_positions:
        raise ValueError(
            f"{what} length {ids.shape[-1]} exceeds max_positions {config.max_positions}")
    return ids.astype(np.int64)


def _embed(ids: np.ndarray, emb: Tensor, config: ModelConfig, train: bool,
           rng, rate: float) -> Tensor:
    d = config.d_model
    pe = sinusoidal_positions(ids.shape[-1], d, dtype=emb.data.dtype)
    x = ad.embedding(emb, ids, scale=float(np.sqrt(d)), positions=pe)
    if train and rate > 0:
        x = ad.dropout(x, rate, rng)
    return x


_NEG = -1.0e9


def _multihead(x: Tensor, kv: Tensor, params: dict[str, Tensor], prefix: str,
               config: ModelConfig, bias_mask: np.ndarray, train: bool, rng,
               rate: float) -> Tensor:
    h = config.num_heads
    dh = config.d_model // h

    q = ad.split_heads(ad.linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"]), h)
    k = ad.split_heads(ad.linear(kv, params[f"{prefix}.wk"], params[f"{prefix}.bk"]), h)
    v = ad.split_heads(ad.linear(kv, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), h)
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    scores = ad.mul(scores, np.asarray(1.0 / np.sqrt(dh), dtype=x.data.dtype))
    scores = ad.add(scores, bias_mask.astype(x.data.dtype))
    attn = ad.softmax(scores, axis=-1)
    if train and rate > 0:
        attn = ad.dropout(attn, rate, rng)
    ctx = ad.merge_heads(ad.matmul(attn, v))
    return ad.linear(ctx, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _ffn(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    # gelu keeps the loss smooth in every parameter, so finite-difference
    # oracles are well-posed at any coordinate
    hidden = ad.gelu(ad.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return ad.linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _key_bias(mask: np.ndarray) -> np.ndarray:
    # (batch, len) bool -> additive (batch, 1, 1, len)
    return np.where(mask, 0.0, _NEG)[:, None, None, :]


@functools.lru_cache(maxsize=128)
def _causal_bias(length: int) -> np.ndarray:
    return np.where(np.tril(np.ones((length, length), dtype=bool)), 0.0, _NEG)


def encode(src_ids: np.ndarray, src_mask: np.ndarray, params: dict[str, Tensor],
           config: ModelConfig, train: bool = False, rng=None) -> EncoderOutput:
    """Run the encoder stack; pad positions are excluded from attention keys."""
    src_ids = _check_ids(src_ids, config, "source")
    src_mask = np.asarray(src_mask, dtype=bool)
    rate = config.dropout_rate if train else 0.0
    emb = params["emb.weight"] if config.share_embeddings else params["enc.emb.weight"]
    x = _embed(src_ids, emb, config, train, rng, rate)
    bias = _key_bias(src_mask)
    for layer in range(config.num_layers):
        pre = f"enc.{layer}"
        norm1 = ad.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        a = _multihead(norm1, norm1, params, f"{pre}.attn", config, bias,
                       train, rng, rate)
        if train and rate > 0:
            a = ad.dropout(a, rate, rng)
        x = ad.add(x, a)
        f = _ffn(ad.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"]),
                 params, f"{pre}.ffn")
        if train and rate > 0:
            f = ad.dropout(f, rate, rng)
        x = ad.add(x, f)
    x = ad.layer_norm(x, params["enc.norm.g"], params["enc.norm.b"])
    return EncoderOutput(hidden=x, mask=src_mask)


def decode_logits(enc: EncoderOutput, tgt_in_ids: np.ndarray, params: dict[str, Tensor],
                  config: ModelConfig, train: bool = False, rng=None,
                  tgt_mask: np.ndarray | None = None) -> Tensor:
    """Teacher-forced decoder logits, causally masked over target positions."""
    tgt_in_ids = _check_ids(tgt_in_ids, config, "target")
    b, j = tgt_in_ids.shape
    rate = config.dropout_rate if train else 0.0
    emb = params["emb.weight"] if config.share_embeddings else params["dec.emb.weight"]
    y = _embed(tgt_in_ids, emb, config, train, rng, rate)
    self_bias = _causal_bias(j)[None, None, :, :]
    if tgt_mask is not None:
        self_bias = self_bias + _key_bias(np.asarray(tgt_mask, dtype=bool))
    cross_bias = _key_bias(enc.mask)
    for layer in range(config.num_layers):
        pre = f"dec.{layer}"
        norm1 = ad.layer_norm(y, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        a = _multihead(norm1, norm1, params, f"{pre}.self", config, self_bias,
                       train, rng, rate)
        if train and rate > 0:
            a = ad.dropout(a, rate, rng)
        y = ad.add(y, a)
        c = _multihead(ad.layer_norm(y, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"]),
                       enc.hidden, params, f"{pre}.cross", config, cross_bias,
                       train, rng, rate)
        if train and rate > 0:
            c = ad.dropout(c, rate, rng)
        y = ad.add(y, c)
        f = _ffn(ad.layer_norm(y, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"]),
                 params, f"{pre}.ffn")
        if train and rate > 0:
            f = ad.dropout(f, rate, rng)
        y = ad.add(y, f)
    y = ad.layer_norm(y, params["dec.norm.g"], params["dec.norm.b"])
    if config.tie_output:
        return ad.matmul(y, ad.transpose(emb, (1, 0)))
    return ad.matmul(y, ad.transpose(params["dec.out.weight"], (1, 0)))


def forward_logits(src_ids, src_mask, tgt_in_ids, params, config,
                   train: bool = False, rng=None, tgt_mask=None) -> Tensor:
    enc = encode(src_ids, src_mask, params, config, train=train, rng=rng)
    return decode_logits(enc, tgt_in_ids, params, config, train=train, rng=rng,
                         tgt_mask=tgt_mask)


def forward_probs(src_ids, src_mask, tgt_in_ids, params, config,
                  train: bool = False, rng=None) -> Tensor:
    """Per-position probability rows over the vocabulary (each sums to 1)."""
    return ad.softmax(
        forward_logits(src_ids, src_mask, tgt_in_ids, params, config, train, rng),
        axis=-1)


def pooled_representation(enc: EncoderOutput) -> np.ndarray:
    """Elementwise max over non-pad encoder positions, one vector per sentence."""
    if not enc.mask.any(axis=-1).all():
        raise ValueError("pooled representation requires at least one non-pad position")
    return ad.max_pool(enc.hidden, enc.mask, axis=1).data


def save_checkpoint(params: dict[str, Tensor], config: ModelConfig, stage: str,
                    path, extra: dict | None = None) -> None:
    """Self-describing container: version, config, stage, named f32 tensors."""
    meta = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(config),
        "stage": stage,
        "extra": extra or {},
        "param_names": sorted(params),
    }
    blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    arrays = {f"param/{name}": np.ascontiguousarray(p.data.astype("<f4"))
              for name, p in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=blob, **arrays)


def load_checkpoint(path, expected_vocab_size: int | None = None, dtype=np.float32):
    """Inverse of ``save_checkpoint``; returns (params, config, stage, extra)."""
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint version {meta.get('format_version')}")
            arrays = {name: data[f"param/{name}"] for name in meta["param_names"]}
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    config = ModelConfig(**meta["config"])
    if expected_vocab_size is not None and config.vocab_size != expected_vocab_size:
        raise CheckpointError(
            f"checkpoint vocab_size {config.vocab_size} != expected {expected_vocab_size}")
    params = {name: Tensor(arr.astype(dtype)) for name, arr in arrays.items()}
    return params, config, meta["stage"], meta["extra"]
