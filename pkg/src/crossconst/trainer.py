"""Two-stage optimization loop: conventional multilingual pretraining, then
consistency-regularized finetuning from a pretrained checkpoint.

Validation uses mean label-smoothed cross entropy on the supervised
directions only; the best-validation parameters are what a stage returns.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import Batch, TaggedPair, make_batches
from .losses import LossBreakdown, consistency_loss, copied_batch, cross_entropy_from_logits, _batch_logits
from .model import ModelConfig, collect_grads, init_params, zero_grads
from .optim import AdamState, DivergenceError, adam_update, clip_gradients, lr_schedule
from .validation import ConfigError, check_int, check_scalar

STAGES = ("pretrain", "finetune")

# The two published training recipes, selectable from the command line.
PRESETS: dict[str, dict] = {
    "lowres": {"alpha": 0.25, "label_smoothing": 0.1, "lr_base": 7e-4,
               "warmup_steps": 4000, "adam_beta1": 0.9, "adam_beta2": 0.98,
               "adam_eps": 1e-8, "beam_size": 5, "length_penalty": 0.6,
               "max_tokens": 4096},
    "highres": {"alpha": 0.1, "label_smoothing": 0.1, "lr_base": 3e-4,
                "warmup_steps": 10000, "adam_beta1": 0.9, "adam_beta2": 0.98,
                "adam_eps": 1e-6, "clip_norm": 5.0, "beam_size": 5,
                "length_penalty": 1.0, "max_tokens": 1536},
}


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "pretrain"
    alpha: float = 0.25
    label_smoothing: float = 0.1
    lr_base: float = 7e-4
    warmup_steps: int = 4000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    max_steps: int = 2000
    valid_interval: int = 200
    max_tokens: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        check_scalar(self.alpha, "alpha", minimum=0.0)
        check_scalar(self.label_smoothing, "label_smoothing", minimum=0.0,
                     maximum=1.0, include_max=False)
        check_scalar(self.lr_base, "lr_base", minimum=0.0, include_min=False)
        check_int(self.warmup_steps, "warmup_steps", minimum=1)
        check_scalar(self.adam_beta1, "adam_beta1", minimum=0.0, maximum=1.0,
                     include_min=False, include_max=False)
        check_scalar(self.adam_beta2, "adam_beta2", minimum=0.0, maximum=1.0,
                     include_min=False, include_max=False)
        check_scalar(self.adam_eps, "adam_eps", minimum=0.0, include_min=False)
        check_int(self.max_steps, "max_steps", minimum=1)
        check_int(self.valid_interval, "valid_interval", minimum=1)
        check_int(self.max_tokens, "max_tokens", minimum=1)
        check_int(self.seed, "seed", minimum=0)


@dataclass
class ValidationPoint:
    step: int
    lr: float
    train_ce: float
    train_kl: float
    valid_ce: float

    def log_line(self) -> str:
        return (f"{self.step}\t{self.lr:.8g}\t{self.train_ce:.6f}"
                f"\t{self.train_kl:.6f}\t{self.valid_ce:.6f}")


@dataclass
class StageResult:
    params: dict                      # best-validation parameters
    stage: str
    best_step: int
    best_valid_ce: float
    history: list[ValidationPoint] = field(default_factory=list)
    breakdowns: list[LossBreakdown] = field(default_factory=list)


def evaluate_ce(batches: list[Batch], params, model_config: ModelConfig,
                smoothing: float) -> float:
    """Token-weighted mean label-smoothed CE over batches, dropout off."""
    total, tokens = 0.0, 0
    with ad.no_grad():
        for batch in batches:
            logits = _batch_logits(batch, params, model_config, train=False, rng=None)
            ce = cross_entropy_from_logits(logits, batch.tgt_out, smoothing,
                                           batch.tgt_mask)
            total += float(ce.data) * batch.num_target_tokens
            tokens += batch.num_target_tokens
    return total / tokens


def run_stage(train_pairs: list[TaggedPair], valid_pairs: list[TaggedPair],
              model_config: ModelConfig, train_config: TrainConfig,
              vocab, params=None, log_fn=None,
              step_callback=None) -> StageResult:
    """Run one stage to ``max_steps``, returning the best-validation state.

    Pretraining optimizes cross entropy alone; finetuning adds the
    consistency term and requires pretrained parameters.
    """
    cfg = train_config
    if cfg.stage == "finetune":
        if params is None:
            raise ConfigError(
                "finetune requires a pretrained checkpoint: run the pretrain "
                "stage first and pass its parameters in")
        params = {k: type(v)(v.data.copy()) for k, v in params.items()}
    elif params is None:
        params = init_params(model_config, cfg.seed)
    else:
        params = {k: type(v)(v.data.copy()) for k, v in params.items()}

    alpha = cfg.alpha if cfg.stage == "finetune" else 0.0
    pad, bos, eos = vocab.pad_id, vocab.bos_id, vocab.eos_id
    valid_batches = make_batches(valid_pairs, cfg.max_tokens, cfg.seed, pad, bos)
    state = AdamState(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    dropout_rng = np.random.default_rng([cfg.seed, 0xD0])

    result = StageResult(params=params, stage=cfg.stage, best_step=0,
                         best_valid_ce=float("inf"))
    best_params = None
    interval_ce: list[float] = []
    interval_kl: list[float] = []
    step = 0
    epoch = 0
    done = False
    while not done:
        for batch in make_batches(train_pairs, cfg.max_tokens, [cfg.seed, epoch], pad, bos):
            step += 1
            copied = copied_batch(batch, pad, bos, eos) if alpha > 0 else batch
            zero_grads(params)
            loss, breakdown = consistency_loss(batch, copied, params, model_config,
                                               alpha, cfg.label_smoothing,
                                               train=True, rng=dropout_rng)
            if not np.isfinite(loss.data):
                raise DivergenceError(f"non-finite loss at step {step}")
            loss.backward()
            grads, _ = clip_gradients(collect_grads(params), cfg.clip_norm)
            lr = lr_schedule(step, cfg.lr_base, cfg.warmup_steps)
            adam_update(params, grads, state, lr)
            interval_ce.append(breakdown.ce)
            interval_kl.append(breakdown.kl)
            result.breakdowns.append(breakdown)
            if step_callback is not None:
                step_callback(step, breakdown)
            if step % cfg.valid_interval == 0 or step == cfg.max_steps:
                valid_ce = evaluate_ce(valid_batches, params, model_config,
                                       cfg.label_smoothing)
                point = ValidationPoint(step=step, lr=lr,
                                        train_ce=float(np.mean(interval_ce)),
                                        train_kl=float(np.mean(interval_kl)),
                                        valid_ce=valid_ce)
                result.history.append(point)
                if log_fn is not None:
                    log_fn(point.log_line())
                interval_ce.clear()
                interval_kl.clear()
                if valid_ce < result.best_valid_ce:
                    result.best_valid_ce = valid_ce
                    result.best_step = step
                    best_params = {k: v.data.copy() for k, v in params.items()}
            if step >= cfg.max_steps:
                done = True
                break
        epoch += 1

    if best_params is not None:
        for name, arr in best_params.items():
            params[name].data = arr
    result.params = params
    return result


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and #-comments are ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_MODEL_FIELDS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}


def coerce(value: str, type_name: str):
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    if type_name == "bool":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    return value


def split_config_keys(values: dict[str, str], extra_keys: set[str] = frozenset()):
    """Partition flat keys into TrainConfig / ModelConfig / extra; reject unknowns."""
    train: dict = {}
    model: dict = {}
    extra: dict[str, str] = {}
    for key, value in values.items():
        if key in _FIELD_TYPES:
            train[key] = coerce(value, _FIELD_TYPES[key])
        elif key in _MODEL_FIELDS:
            model[key] = coerce(value, _MODEL_FIELDS[key])
        elif key in extra_keys:
            extra[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    return train, model, extra
