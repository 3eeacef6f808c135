"""Shared subword vocabulary: a small byte-pair tokenizer over all languages.

Merges are learned within whitespace words on the pooled text of every
language; words in the encoded stream are separated by an explicit space
symbol that never takes part in merges, so decoding is an exact inverse.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .validation import check_int

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPACE = " "


@dataclass(frozen=True)
class MergeTable:
    """Ordered pair merges; application order equals learning order."""

    merges: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.merges)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for left, right in self.merges:
                fh.write(f"{left} {right} → {left + right}\n")

    @classmethod
    def from_file(cls, path) -> "MergeTable":
        merges = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                lhs, _, merged = line.partition(" → ")
                left, _, right = lhs.partition(" ")
                if not left or not right or left + right != merged:
                    raise ValueError(f"malformed merge line: {line!r}")
                merges.append((left, right))
        return cls(tuple(merges))


class Vocab:
    """Bijective symbol/index lookup; specials occupy the lowest indices."""

    def __init__(self, tag_tokens: tuple[str, ...], symbols: tuple[str, ...]):
        self.specials = (PAD, BOS, EOS, UNK) + tuple(tag_tokens)
        if len(set(self.specials)) != len(self.specials):
            raise ValueError("tag tokens must be distinct and disjoint from specials")
        seen = set(self.specials)
        self.symbols = list(self.specials)
        for s in symbols:
            if s not in seen:            # two merge paths can yield one string
                seen.add(s)
                self.symbols.append(s)
        self._index = {s: i for i, s in enumerate(self.symbols)}
        self.pad_id, self.bos_id, self.eos_id, self.unk_id = range(4)
        self._tag_ids = {tag: 4 + i for i, tag in enumerate(tag_tokens)}

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        return self._index.get(symbol, self.unk_id)

    def symbol(self, idx: int) -> str:
        return self.symbols[idx]

    def tag_id(self, tag_token: str) -> int:
        return self._tag_ids[tag_token]

    @property
    def tag_tokens(self) -> tuple[str, ...]:
        return tuple(self._tag_ids)


def _word_pairs(symbols: tuple[str, ...]) -> Counter:
    return Counter(zip(symbols[:-1], symbols[1:]))


def train_merges(texts, num_merges: int) -> MergeTable:
    """Greedy most-frequent-pair merges over word-internal symbol pairs.

    Ties break toward the lexicographically smallest pair, which makes the
    table a pure function of the corpus.
    """
    check_int(num_merges, "num_merges", minimum=0)
    words = Counter()
    for text in texts:
        words.update(text.split())
    forms: dict[tuple[str, ...], int] = {tuple(w): c for w, c in words.items()}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_counts = Counter()
        for sym, count in forms.items():
            for pair, n in _word_pairs(sym).items():
                pair_counts[pair] += n * count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        new_forms: dict[tuple[str, ...], int] = {}
        for sym, count in forms.items():
            out = []
            i = 0
            while i < len(sym):
                if i + 1 < len(sym) and (sym[i], sym[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            key = tuple(out)
            new_forms[key] = new_forms.get(key, 0) + count
        forms = new_forms
    return MergeTable(tuple(merges))


def _segment_word(word: str, merges: MergeTable) -> tuple[str, ...]:
    sym = list(word)
    for left, right in merges.merges:
        merged = left + right
        i = 0
        out = []
        while i < len(sym):
            if i + 1 < len(sym) and sym[i] == left and sym[i + 1] == right:
                out.append(merged)
                i += 2
            else:
                out.append(sym[i])
                i += 1
        sym = out
    return tuple(sym)


@dataclass
class MiniBpe:
    """Estimator-style tokenizer: ``fit`` learns merges, ``transform`` encodes.

    ``tag_tokens`` are reserved language markers that live in the same
    vocabulary but are never produced by text tokenization.
    """

    num_merges: int = 200
    tag_tokens: tuple[str, ...] = ()
    merges: MergeTable | None = field(default=None, repr=False)
    vocab: Vocab | None = field(default=None, repr=False)

    def __post_init__(self):
        check_int(self.num_merges, "num_merges", minimum=0)
        self._word_cache: dict[str, tuple[int, ...]] = {}

    def fit(self, texts) -> "MiniBpe":
        texts = list(texts)
        self.merges = train_merges(texts, self.num_merges)
        self._build_vocab(texts)
        return self

    def _build_vocab(self, texts) -> None:
        alphabet = sorted({ch for text in texts for word in text.split() for ch in word})
        produced = [left + right for left, right in self.merges.merges]
        self.vocab = Vocab(self.tag_tokens, (SPACE, *alphabet, *produced))
        self._word_cache.clear()

    def load(self, merges: MergeTable, texts) -> "MiniBpe":
        """Adopt a previously learned table; texts supply the base alphabet."""
        self.merges = merges
        self._build_vocab(list(texts))
        return self

    def _check_fitted(self) -> None:
        if self.vocab is None or self.merges is None:
            raise RuntimeError("MiniBpe is not fitted; call fit() first")

    def _encode_word(self, word: str) -> tuple[int, ...]:
        ids = self._word_cache.get(word)
        if ids is None:
            ids = tuple(self.vocab.index(s) for s in _segment_word(word, self.merges))
            self._word_cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        """Index sequence for a sentence; unknown characters map to <unk>."""
        self._check_fitted()
        out: list[int] = []
        space = self.vocab.index(SPACE)
        for i, word in enumerate(text.split()):
            if i:
                out.append(space)
            out.extend(self._encode_word(word))
        return out

    def decode(self, ids) -> str:
        self._check_fitted()
        return "".join(self.vocab.symbol(int(i)) for i in ids)

    def transform(self, texts) -> list[list[int]]:
        return [self.encode(t) for t in texts]

    def inverse_transform(self, sequences) -> list[str]:
        return [self.decode(seq) for seq in sequences]

    def get_params(self, deep: bool = True) -> dict:
        return {"num_merges": self.num_merges, "tag_tokens": self.tag_tokens}

    def set_params(self, **params) -> "MiniBpe":
        for key, value in params.items():
            if key not in ("num_merges", "tag_tokens"):
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self
