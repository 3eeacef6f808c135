"""Transformer forward contracts: shapes, masking, causality, checkpoints."""

import numpy as np
import pytest

from conftest import (BOS_ID, EOS_ID, PAD_ID, TAG_IDS, TINY_VOCAB, tiny_batch,
                      tiny_config, tiny_params)
from crossconst.model import (CheckpointError, EncoderOutput, ModelConfig, encode,
                              decode_logits, forward_probs, init_params,
                              load_checkpoint, pooled_representation,
                              save_checkpoint)
from crossconst.validation import ConfigError


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=10, d_model=10, num_heads=3)

    def test_dropout_range(self):
        with pytest.raises(Exception):
            ModelConfig(vocab_size=10, dropout_rate=1.0)


class TestEncoder:
    def test_eval_determinism(self, config, params):
        ids = np.array([[4, 8, 9, 10]])
        mask = np.ones_like(ids, dtype=bool)
        a = encode(ids, mask, params, config).hidden.data
        b = encode(ids, mask, params, config).hidden.data
        np.testing.assert_array_equal(a, b)

    def test_single_token_shape(self, config, params):
        out = encode(np.array([[4]]), np.array([[True]]), params, config)
        assert out.hidden.data.shape == (1, 1, config.d_model)

    def test_padding_does_not_leak(self, config, params):
        ids = np.array([[4, 8, 9, 10]])
        mask = np.ones_like(ids, dtype=bool)
        base = encode(ids, mask, params, config).hidden.data
        padded_ids = np.concatenate([ids, [[PAD_ID, PAD_ID]]], axis=1)
        padded_mask = np.concatenate([mask, [[False, False]]], axis=1)
        padded = encode(padded_ids, padded_mask, params, config).hidden.data
        np.testing.assert_allclose(padded[:, :4], base, atol=1e-6)

    def test_out_of_range_index(self, config, params):
        with pytest.raises(ValueError):
            encode(np.array([[TINY_VOCAB]]), np.array([[True]]), params, config)

    def test_overlong_sequence(self, params):
        config = tiny_config(max_positions=4)
        ids = np.full((1, 5), 8)
        with pytest.raises(ValueError):
            encode(ids, np.ones_like(ids, dtype=bool), params, config)

    def test_dropout_only_in_train_mode(self, config, params):
        config = tiny_config(dropout_rate=0.5)
        ids = np.array([[4, 8, 9]])
        mask = np.ones_like(ids, dtype=bool)
        eval_out = encode(ids, mask, params, config).hidden.data
        rng = np.random.default_rng(0)
        train_out = encode(ids, mask, params, config, train=True, rng=rng).hidden.data
        assert not np.allclose(eval_out, train_out)


class TestForward:
    def test_rows_normalized(self, config, params):
        batch = tiny_batch(seed=1)
        probs = forward_probs(batch.src, batch.src_mask, batch.tgt_in, params,
                              config).data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
        assert (probs > 0).all()

    def test_causality(self, config, params):
        rng = np.random.default_rng(3)
        tgt_in = np.array([[BOS_ID, 8, 9, 10, 11]])
        src = np.array([[4, 12, 13]])
        mask = np.ones_like(src, dtype=bool)
        base = forward_probs(src, mask, tgt_in, params, config).data
        for j in range(1, tgt_in.shape[1]):
            perturbed = tgt_in.copy()
            perturbed[0, j] = 14
            out = forward_probs(src, mask, perturbed, params, config).data
            np.testing.assert_allclose(out[0, :j], base[0, :j], atol=1e-6)
            assert not np.allclose(out[0, j], base[0, j])

    def test_near_uniform_at_init(self):
        # Bound recorded by running fresh inits (20 seeds x 3 batches gave a
        # worst max/min row ratio of ~420); trained models exceed 1e6.
        config = tiny_config()
        for seed in range(5):
            params = tiny_params(config, seed=seed)
            batch = tiny_batch(seed=seed)
            probs = forward_probs(batch.src, batch.src_mask, batch.tgt_in, params,
                                  config).data
            rows = probs[batch.tgt_mask]
            ratio = rows.max(axis=-1) / rows.min(axis=-1)
            assert ratio.max() < 1000.0


class TestPooledRepresentation:
    def test_single_position_is_identity(self, config, params):
        enc = encode(np.array([[4]]), np.array([[True]]), params, config)
        np.testing.assert_array_equal(pooled_representation(enc),
                                      enc.hidden.data[:, 0])

    def test_pad_column_ignored(self, config, params):
        ids = np.array([[4, 8, 9, PAD_ID]])
        mask = np.array([[True, True, True, False]])
        enc = encode(ids, mask, params, config)
        pooled = pooled_representation(enc)
        trimmed = EncoderOutput(hidden=type(enc.hidden)(enc.hidden.data[:, :3]),
                                mask=mask[:, :3])
        np.testing.assert_allclose(pooled, pooled_representation(trimmed), atol=1e-12)

    def test_elementwise_max(self, config, params):
        enc = encode(np.array([[4, 8]]), np.array([[True, True]]), params, config)
        manual = np.maximum(enc.hidden.data[0, 0], enc.hidden.data[0, 1])
        np.testing.assert_array_equal(pooled_representation(enc)[0], manual)

    def test_all_pad_rejected(self, config, params):
        enc = encode(np.array([[4, 8]]), np.array([[True, True]]), params, config)
        enc.mask = np.array([[False, False]])
        with pytest.raises(ValueError):
            pooled_representation(enc)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        config = tiny_config()
        params = init_params(config, seed=0)      # float32 storage path
        path = tmp_path / "ckpt.npz"
        save_checkpoint(params, config, "pretrain", path, extra={"note": "x"})
        loaded, cfg, stage, extra = load_checkpoint(path)
        assert cfg == config and stage == "pretrain" and extra == {"note": "x"}
        assert set(loaded) == set(params)
        for name in params:
            np.testing.assert_array_equal(loaded[name].data, params[name].data)

    def test_vocab_size_mismatch(self, tmp_path):
        config = tiny_config()
        path = tmp_path / "ckpt.npz"
        save_checkpoint(init_params(config, 0), config, "pretrain", path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected_vocab_size=99)

    def test_stage_label_recorded(self, tmp_path):
        config = tiny_config()
        path = tmp_path / "ckpt.npz"
        save_checkpoint(init_params(config, 0), config, "finetune", path)
        assert load_checkpoint(path)[2] == "finetune"

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
