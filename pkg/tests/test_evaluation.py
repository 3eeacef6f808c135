"""Metric oracles: BLEU against a brute-force counter, similarity search."""

import json
import math

import numpy as np
import pytest

from crossconst.evaluation import (RepresentationDump, corpus_bleu, parallel_cosine,
                                   similarity_search)


def bleu_oracle(hyps, refs):
    """Independent reimplementation with explicit loops and clipping."""
    match = {n: 0 for n in (1, 2, 3, 4)}
    total = {n: 0 for n in (1, 2, 3, 4)}
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h, r = hyp.split(), ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in (1, 2, 3, 4):
            ref_grams = {}
            for i in range(len(r) - n + 1):
                g = tuple(r[i:i + n])
                ref_grams[g] = ref_grams.get(g, 0) + 1
            seen = {}
            for i in range(len(h) - n + 1):
                g = tuple(h[i:i + n])
                seen[g] = seen.get(g, 0) + 1
                total[n] += 1
            for g, c in seen.items():
                match[n] += min(c, ref_grams.get(g, 0))
    precisions = []
    for n in (1, 2, 3, 4):
        precisions.append(match[n] / total[n] if total[n] else 0.0)
    if min(precisions) == 0.0:
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precisions) / 4)
    bp = min(1.0, math.exp(1 - ref_len / hyp_len))
    return 100.0 * bp * geo


def random_corpus(rng, sentences=8, vocab=("a", "b", "c", "d", "e")):
    hyps, refs = [], []
    for _ in range(sentences):
        hyps.append(" ".join(rng.choice(vocab, size=rng.integers(1, 12))))
        refs.append(" ".join(rng.choice(vocab, size=rng.integers(1, 12))))
    return hyps, refs


class TestCorpusBleu:
    def test_identity_is_100(self):
        texts = ["the cat sees the dog", "a bird", "every stone holds a cloud"]
        assert corpus_bleu(texts, texts).bleu == pytest.approx(100.0)

    def test_worked_example(self):
        score = corpus_bleu(["a b c d e"], ["a b c d"])
        assert score.precisions == pytest.approx((4 / 5, 3 / 4, 2 / 3, 1 / 2))
        assert score.brevity_penalty == pytest.approx(1.0)
        assert score.bleu == pytest.approx(100 * 0.2 ** 0.25, abs=1e-9)
        assert score.bleu == pytest.approx(66.87, abs=0.01)

    def test_no_shared_4gram_scores_zero(self):
        assert corpus_bleu(["a b c d"], ["b a d c"]).bleu == 0.0

    def test_brevity_penalty(self):
        score = corpus_bleu(["a b"], ["a b c d"])
        assert score.brevity_penalty == pytest.approx(math.exp(1 - 4 / 2))

    def test_matches_oracle_on_random_corpora(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            hyps, refs = random_corpus(rng)
            assert corpus_bleu(hyps, refs).bleu == pytest.approx(
                bleu_oracle(hyps, refs), abs=1e-9)

    def test_order_permutation_invariance(self):
        rng = np.random.default_rng(1)
        hyps, refs = random_corpus(rng, sentences=10)
        base = corpus_bleu(hyps, refs).bleu
        perm = rng.permutation(10)
        assert corpus_bleu([hyps[i] for i in perm],
                           [refs[i] for i in perm]).bleu == pytest.approx(base)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            corpus_bleu([], [])


def make_dump(vectors_by_lang):
    dump = RepresentationDump()
    for lang, vectors in vectors_by_lang.items():
        for i, vec in enumerate(vectors):
            dump.add(i, lang, vec)
    return dump


class TestSimilaritySearch:
    def test_identical_vectors_score_100(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((20, 8))
        dump = make_dump({"L0": v, "L1": v})
        assert similarity_search(dump, "L0", "L1") == 100.0

    def test_shuffled_counterparts_score_0(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((10, 8))
        dump = make_dump({"L0": v, "L1": np.roll(v, 1, axis=0)})
        assert similarity_search(dump, "L0", "L1") == 0.0

    def test_random_vectors_near_chance(self):
        rng = np.random.default_rng(2)
        n = 1000
        dump = make_dump({"L0": rng.standard_normal((n, 64)),
                          "L1": rng.standard_normal((n, 64))})
        acc = similarity_search(dump, "L0", "L1")
        assert acc < 1.0                      # chance level is 100/n = 0.1%

    def test_rotation_and_scale_invariance(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((15, 6)), rng.standard_normal((15, 6))
        base = similarity_search(make_dump({"A": a, "B": b}), "A", "B")
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        rotated = similarity_search(make_dump({"A": 3.0 * a @ q, "B": 2.0 * b @ q}),
                                    "A", "B")
        assert rotated == base

    def test_tie_breaks_to_lower_id(self):
        v = np.array([[1.0, 0.0]])
        dump = make_dump({"A": v, "B": np.array([[1.0, 0.0]])})
        dump.add(1, "A", np.array([1.0, 0.0]))
        dump.add(1, "B", np.array([1.0, 0.0]))   # duplicate of id 0's vector
        assert similarity_search(dump, "A", "B") == 50.0   # id 1 loses the tie

    def test_zero_norm_rejected(self):
        dump = make_dump({"A": np.zeros((2, 3)), "B": np.ones((2, 3))})
        with pytest.raises(ValueError):
            similarity_search(dump, "A", "B")

    def test_mismatched_ids_rejected(self):
        dump = make_dump({"A": np.ones((3, 2)), "B": np.ones((2, 2))})
        with pytest.raises(ValueError):
            similarity_search(dump, "A", "B")

    def test_parallel_cosine(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert parallel_cosine(make_dump({"A": a, "B": b}), "A", "B") == \
               pytest.approx(0.5)


class TestDumpFile:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        dump = make_dump({"L0": rng.standard_normal((4, 5)),
                          "L1": rng.standard_normal((4, 5))})
        path = tmp_path / "reprs.jsonl"
        dump.to_jsonl(path)
        loaded = RepresentationDump.from_jsonl(path)
        assert len(loaded.records) == len(dump.records)
        for (i1, l1, v1), (i2, l2, v2) in zip(loaded.records, dump.records):
            assert (i1, l1) == (i2, l2)
            np.testing.assert_allclose(v1, v2)
        line = path.read_text().splitlines()[0]
        rec = json.loads(line)
        assert set(rec) == {"id", "lang", "vec"}
