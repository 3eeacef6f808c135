"""Synthetic corpus invariants: round trips, pair construction, batching."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossconst.bpe import MiniBpe
from crossconst.corpus import (SynthSpec, TaggedPair, apply_reorder,
                               english_centric_pairs, generate_synthetic_corpus,
                               invert_reorder, load_corpus, make_batches,
                               recover_pivot_render, save_corpus,
                               supervised_directions, zero_shot_directions)
from crossconst.validation import ConfigError, DataError


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(SynthSpec(seed=7, num_languages=3,
                                               num_sentences=200))


@pytest.fixture(scope="module")
def tokenizer(corpus):
    tok = MiniBpe(num_merges=60, tag_tokens=corpus.tag_tokens())
    return tok.fit(corpus.all_texts("train"))


class TestGeneration:
    def test_two_languages_rejected(self):
        with pytest.raises(ConfigError):
            SynthSpec(seed=0, num_languages=2)

    def test_deterministic(self, corpus):
        again = generate_synthetic_corpus(SynthSpec(seed=7, num_languages=3,
                                                    num_sentences=200))
        assert corpus.renders == again.renders
        assert corpus.train_ids == again.train_ids

    def test_every_language_renders_every_sentence(self, corpus):
        for sid, per_lang in corpus.renders.items():
            assert set(per_lang) == {l.code for l in corpus.languages}

    def test_splits_disjoint_and_cover(self, corpus):
        train, valid, test = (set(corpus.train_ids), set(corpus.valid_ids),
                              set(corpus.test_ids))
        assert not (train & valid) and not (train & test) and not (valid & test)
        assert train | valid | test == set(corpus.renders)

    def test_lengths_in_range(self, corpus):
        for per_lang in corpus.renders.values():
            for tokens in per_lang.values():
                assert 3 <= len(tokens) <= 20

    def test_cipher_reorder_round_trip(self, corpus):
        pivot = corpus.pivot.code
        for sid, per_lang in corpus.renders.items():
            for code, tokens in per_lang.items():
                recovered = recover_pivot_render(corpus, code, tokens)
                assert recovered == per_lang[pivot]

    def test_construction_identity(self, corpus):
        # render in L1 equals cipher1(reorder1(render in L0))
        l1 = corpus.languages[1].code
        for sid in list(corpus.renders)[:20]:
            base = corpus.renders[sid][corpus.pivot.code]
            expected = [corpus.ciphers[l1][w]
                        for w in apply_reorder(corpus.reorder_rules[l1], base)]
            assert corpus.renders[sid][l1] == expected

    def test_save_load_round_trip(self, corpus, tmp_path):
        save_corpus(corpus, tmp_path)
        loaded = load_corpus(tmp_path)
        assert loaded.renders == corpus.renders
        assert loaded.train_ids == corpus.train_ids
        assert loaded.ciphers == corpus.ciphers
        assert [l.code for l in loaded.languages] == [l.code for l in corpus.languages]


class TestReorderRules:
    @given(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=20),
           st.sampled_from(("identity", "reverse", "rotate_left", "swap_pairs")))
    @settings(max_examples=100, deadline=None)
    def test_invertible(self, tokens, rule):
        assert invert_reorder(rule, apply_reorder(rule, tokens)) == tokens


class TestEnglishCentricPairs:
    def test_pair_count(self, corpus, tokenizer):
        pairs = english_centric_pairs(corpus, tokenizer, split="train")
        assert len(pairs) == 4 * len(corpus.train_ids)   # 2 languages x 2 directions

    def test_tag_and_eos_placement(self, corpus, tokenizer):
        vocab = tokenizer.vocab
        for pair in english_centric_pairs(corpus, tokenizer, split="valid"):
            tag = corpus.language(pair.tgt_lang).tag_token
            assert pair.src_tokens[0] == vocab.tag_id(tag)
            assert pair.tgt_tokens[-1] == vocab.eos_id
            assert vocab.pad_id not in pair.src_tokens
            assert vocab.pad_id not in pair.tgt_tokens

    def test_no_non_pivot_directions(self, corpus, tokenizer):
        pairs = english_centric_pairs(corpus, tokenizer, split="train")
        pivot = corpus.pivot.code
        assert all(pivot in (p.src_lang, p.tgt_lang) for p in pairs)

    def test_unknown_pivot(self, corpus, tokenizer):
        with pytest.raises(DataError):
            english_centric_pairs(corpus, tokenizer, pivot_code="L9")

    def test_direction_enumeration(self, corpus):
        assert len(supervised_directions(corpus)) == 4
        assert sorted(zero_shot_directions(corpus)) == [("L1", "L2"), ("L2", "L1")]


def _pairs_of_lengths(lengths):
    return [TaggedPair(tuple(range(4, 4 + n)), tuple(range(4, 4 + n - 1)) + (2,),
                       "L1", "L0") for n in lengths]


class TestBatching:
    def test_overlong_pair_rejected(self):
        pairs = _pairs_of_lengths([4, 4, 9])
        with pytest.raises(DataError):
            make_batches(pairs, max_tokens=8, seed=0, pad_id=0, bos_id=1)

    def test_short_pairs_share_batch(self):
        pairs = _pairs_of_lengths([4, 4])
        batches = make_batches(pairs, max_tokens=8, seed=0, pad_id=0, bos_id=1)
        assert len(batches) == 1 and len(batches[0].pairs) == 2

    def test_epoch_covers_input_multiset(self, corpus, tokenizer):
        pairs = english_centric_pairs(corpus, tokenizer, split="valid")
        batches = make_batches(pairs, max_tokens=256, seed=3,
                               pad_id=tokenizer.vocab.pad_id,
                               bos_id=tokenizer.vocab.bos_id)
        seen = [p for b in batches for p in b.pairs]
        assert sorted(seen, key=lambda p: (p.src_tokens, p.tgt_tokens)) == \
               sorted(pairs, key=lambda p: (p.src_tokens, p.tgt_tokens))

    def test_same_seed_same_order(self, corpus, tokenizer):
        pairs = english_centric_pairs(corpus, tokenizer, split="valid")
        kw = dict(max_tokens=256, seed=9, pad_id=0, bos_id=1)
        a = make_batches(pairs, **kw)
        b = make_batches(pairs, **kw)
        assert [tuple(p.src_tokens for p in x.pairs) for x in a] == \
               [tuple(p.src_tokens for p in x.pairs) for x in b]

    def test_padding_and_masks(self, corpus, tokenizer):
        pairs = english_centric_pairs(corpus, tokenizer, split="valid")[:7]
        vocab = tokenizer.vocab
        for batch in make_batches(pairs, 512, 0, vocab.pad_id, vocab.bos_id):
            assert (batch.src[~batch.src_mask] == vocab.pad_id).all()
            assert (batch.tgt_out[~batch.tgt_mask] == vocab.pad_id).all()
            assert (batch.tgt_in[:, 0] == vocab.bos_id).all()
            for row, pair in enumerate(batch.pairs):
                n = len(pair.tgt_tokens)
                np.testing.assert_array_equal(batch.tgt_out[row, :n], pair.tgt_tokens)
                np.testing.assert_array_equal(batch.tgt_in[row, 1:n],
                                              pair.tgt_tokens[:-1])

    def test_budget_respected(self, corpus, tokenizer):
        pairs = english_centric_pairs(corpus, tokenizer, split="valid")
        for batch in make_batches(pairs, 128, 0, 0, 1):
            width = max(max(len(p.src_tokens), len(p.tgt_tokens)) for p in batch.pairs)
            assert len(batch.pairs) * width <= 128
