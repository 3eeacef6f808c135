"""Shared fixtures: a tiny 64-bit model and batches for gradient checking."""

import numpy as np
import pytest

from crossconst import autodiff as ad
from crossconst.corpus import TaggedPair, collate
from crossconst.model import ModelConfig, init_params, zero_grads, collect_grads

TINY_VOCAB = 23          # 4 specials + 3 tags + 16 text symbols
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
TAG_IDS = (4, 5, 6)
FIRST_TEXT_ID = 7


def tiny_config(**overrides) -> ModelConfig:
    kwargs = dict(vocab_size=TINY_VOCAB, num_layers=2, num_heads=2, d_model=16,
                  d_ff=32, dropout_rate=0.0, max_positions=64)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def tiny_params(config=None, seed=0):
    return init_params(config or tiny_config(), seed=seed, dtype=np.float64)


def random_pairs(rng, count, min_len=3, max_len=6):
    pairs = []
    for _ in range(count):
        tag = int(rng.choice(TAG_IDS))
        src = tuple(int(x) for x in rng.integers(FIRST_TEXT_ID, TINY_VOCAB,
                                                 size=rng.integers(min_len, max_len + 1)))
        tgt = tuple(int(x) for x in rng.integers(FIRST_TEXT_ID, TINY_VOCAB,
                                                 size=rng.integers(min_len, max_len + 1)))
        pairs.append(TaggedPair((tag, *src), (*tgt, EOS_ID), "L1", "L2"))
    return pairs


def tiny_batch(seed=0, count=3):
    rng = np.random.default_rng(seed)
    return collate(random_pairs(rng, count), PAD_ID, BOS_ID)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def finite_difference_check(loss_fn, params, step=1e-4, names=None):
    """Max relative error between backward() and central differences.

    ``loss_fn()`` must rebuild the graph from the current parameter values.
    """
    zero_grads(params)
    loss = loss_fn()
    loss.backward()
    grads = collect_grads(params)
    worst = 0.0
    with ad.no_grad():
        for name in (names or params):
            flat = params[name].data.reshape(-1)
            gflat = grads[name].reshape(-1)
            numeric = np.zeros_like(gflat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            worst = max(worst, max_relative_error(gflat, numeric))
    return worst


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def params(config):
    return tiny_params(config)
