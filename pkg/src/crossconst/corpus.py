"""Synthetic multiway-parallel corpus with deterministic toy languages.

Language L0 is the pivot. Every other language renders the same sentence
through a seeded bijective word substitution plus an invertible positional
reordering, so semantic equivalence holds by construction and zero-shot
references are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bpe import MiniBpe
from .validation import ConfigError, DataError, check_int, check_scalar

BASE_LEXICON: dict[str, tuple[str, ...]] = {
    "det": ("the", "a", "every"),
    "adj": ("small", "big", "red", "old", "quick", "happy"),
    "noun": ("cat", "dog", "bird", "fish", "tree", "house", "river", "stone",
             "cloud", "child"),
    "verb": ("sees", "likes", "finds", "follows", "holds", "paints", "watches",
             "greets"),
    "adv": ("today", "slowly", "quietly", "often", "twice"),
    "prep": ("under", "over", "beside", "behind"),
    "conj": ("and",),
    "pron": ("it", "she", "he"),
}

BASE_VOCABULARY: tuple[str, ...] = tuple(w for role in BASE_LEXICON.values() for w in role)

# Clause skeletons; optional parts let lengths spread over [3, 20].
_NP = (("det", "noun"), ("det", "adj", "noun"), ("pron",))
_PP = (("prep", "det", "noun"), ("prep", "det", "adj", "noun"))
_TAIL = ((), ("adv",), ("adv", "adv"))

REORDER_RULES = ("identity", "reverse", "rotate_left", "swap_pairs")


def apply_reorder(rule: str, tokens: list[str]) -> list[str]:
    if rule == "identity":
        return list(tokens)
    if rule == "reverse":
        return tokens[::-1]
    if rule == "rotate_left":
        return tokens[1:] + tokens[:1] if len(tokens) > 1 else list(tokens)
    if rule == "swap_pairs":
        out = list(tokens)
        for i in range(0, len(out) - 1, 2):
            out[i], out[i + 1] = out[i + 1], out[i]
        return out
    raise ConfigError(f"unknown reorder rule {rule!r}")


def invert_reorder(rule: str, tokens: list[str]) -> list[str]:
    if rule == "rotate_left":
        return tokens[-1:] + tokens[:-1] if len(tokens) > 1 else list(tokens)
    # identity, reverse and swap_pairs are involutions
    return apply_reorder(rule, tokens)


@dataclass(frozen=True)
class LanguageId:
    code: str
    tag_token: str


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    num_languages: int
    num_sentences: int = 1000
    valid_fraction: float = 0.05
    test_fraction: float = 0.05
    min_len: int = 3
    max_len: int = 20

    def __post_init__(self):
        check_int(self.seed, "seed", minimum=0)
        check_int(self.num_sentences, "num_sentences", minimum=3)
        check_scalar(self.valid_fraction, "valid_fraction", minimum=0.0, maximum=0.5)
        check_scalar(self.test_fraction, "test_fraction", minimum=0.0, maximum=0.5)
        if self.num_languages < 3:
            raise ConfigError(
                "num_languages must be >= 3: zero-shot needs at least two "
                "non-pivot languages")


@dataclass
class MultiwayCorpus:
    languages: list[LanguageId]
    renders: dict[int, dict[str, list[str]]]   # id -> lang code -> word tokens
    train_ids: list[int]
    valid_ids: list[int]
    test_ids: list[int]
    ciphers: dict[str, dict[str, str]] = field(repr=False, default_factory=dict)
    reorder_rules: dict[str, str] = field(default_factory=dict)

    @property
    def pivot(self) -> LanguageId:
        return self.languages[0]

    def language(self, code: str) -> LanguageId:
        for lang in self.languages:
            if lang.code == code:
                return lang
        raise KeyError(f"unknown language {code!r}")

    def text(self, sentence_id: int, code: str) -> str:
        return " ".join(self.renders[sentence_id][code])

    def split_ids(self, split: str) -> list[int]:
        return {"train": self.train_ids, "valid": self.valid_ids,
                "test": self.test_ids}[split]

    def all_texts(self, split: str = "train") -> list[str]:
        ids = self.split_ids(split)
        return [self.text(i, lang.code) for i in ids for lang in self.languages]

    def tag_tokens(self) -> tuple[str, ...]:
        return tuple(lang.tag_token for lang in self.languages)


def _sample_sentence(rng: np.random.Generator, max_len: int) -> tuple[str, ...]:
    def pick(role: str) -> str:
        words = BASE_LEXICON[role]
        return words[rng.integers(len(words))]

    def clause() -> list[str]:
        words = [pick(r) for r in _NP[rng.integers(len(_NP))]]
        words.append(pick("verb"))
        words += [pick(r) for r in _NP[rng.integers(len(_NP))]]
        if rng.random() < 0.4:
            words += [pick(r) for r in _PP[rng.integers(len(_PP))]]
        return words

    words = clause()
    if rng.random() < 0.35:
        words += [pick("conj")] + clause()
    words += [pick(r) for r in _TAIL[rng.integers(len(_TAIL))]]
    return tuple(words[:max_len])


def generate_synthetic_corpus(spec: SynthSpec) -> MultiwayCorpus:
    """Deterministic multiway corpus; every invariant holds by construction."""
    rng = np.random.default_rng(spec.seed)
    languages = [LanguageId(code=f"L{i}", tag_token=f"<L{i}>")
                 for i in range(spec.num_languages)]

    ciphers: dict[str, dict[str, str]] = {languages[0].code: {w: w for w in BASE_VOCABULARY}}
    reorder_rules: dict[str, str] = {languages[0].code: "identity"}
    non_identity = [r for r in REORDER_RULES if r != "identity"]
    for i, lang in enumerate(languages[1:]):
        perm = rng.permutation(len(BASE_VOCABULARY))
        ciphers[lang.code] = {BASE_VOCABULARY[j]: BASE_VOCABULARY[perm[j]]
                              for j in range(len(BASE_VOCABULARY))}
        reorder_rules[lang.code] = non_identity[i % len(non_identity)]

    for code, cmap in ciphers.items():
        if sorted(cmap.values()) != sorted(BASE_VOCABULARY):
            raise ConfigError(f"cipher for {code} is not a bijection")

    seen: set[tuple[str, ...]] = set()
    base_sentences: list[tuple[str, ...]] = []
    attempts = 0
    while len(base_sentences) < spec.num_sentences:
        attempts += 1
        if attempts > 200 * spec.num_sentences:
            raise ConfigError("grammar too small for the requested corpus size")
        sent = _sample_sentence(rng, spec.max_len)
        if len(sent) < spec.min_len or sent in seen:
            continue
        seen.add(sent)
        base_sentences.append(sent)

    renders: dict[int, dict[str, list[str]]] = {}
    for sid, sent in enumerate(base_sentences):
        per_lang: dict[str, list[str]] = {}
        for lang in languages:
            reordered = apply_reorder(reorder_rules[lang.code], list(sent))
            per_lang[lang.code] = [ciphers[lang.code][w] for w in reordered]
        renders[sid] = per_lang

    ids = rng.permutation(spec.num_sentences)
    n_valid = max(1, int(spec.num_sentences * spec.valid_fraction))
    n_test = max(1, int(spec.num_sentences * spec.test_fraction))
    valid_ids = sorted(int(i) for i in ids[:n_valid])
    test_ids = sorted(int(i) for i in ids[n_valid:n_valid + n_test])
    train_ids = sorted(int(i) for i in ids[n_valid + n_test:])
    return MultiwayCorpus(languages=languages, renders=renders,
                          train_ids=train_ids, valid_ids=valid_ids,
                          test_ids=test_ids, ciphers=ciphers,
                          reorder_rules=reorder_rules)


def recover_pivot_render(corpus: MultiwayCorpus, code: str, tokens: list[str]) -> list[str]:
    """Invert cipher and reordering, recovering the pivot-language render."""
    inverse = {v: k for k, v in corpus.ciphers[code].items()}
    unciphered = [inverse[w] for w in tokens]
    return invert_reorder(corpus.reorder_rules[code], unciphered)


@dataclass(frozen=True)
class TaggedPair:
    """One training example: target-language tag + source ids -> target ids."""

    src_tokens: tuple[int, ...]
    tgt_tokens: tuple[int, ...]
    src_lang: str
    tgt_lang: str

    @property
    def length(self) -> int:
        return max(len(self.src_tokens), len(self.tgt_tokens))


def make_tagged_pair(tokenizer: MiniBpe, src_text: str, tgt_text: str,
                     src_lang: LanguageId, tgt_lang: LanguageId) -> TaggedPair:
    vocab = tokenizer.vocab
    src = (vocab.tag_id(tgt_lang.tag_token), *tokenizer.encode(src_text))
    tgt = (*tokenizer.encode(tgt_text), vocab.eos_id)
    return TaggedPair(src, tgt, src_lang.code, tgt_lang.code)


def pairs_for_direction(corpus: MultiwayCorpus, tokenizer: MiniBpe,
                        src_code: str, tgt_code: str, split: str) -> list[TaggedPair]:
    src_lang = corpus.language(src_code)
    tgt_lang = corpus.language(tgt_code)
    return [make_tagged_pair(tokenizer, corpus.text(i, src_code),
                             corpus.text(i, tgt_code), src_lang, tgt_lang)
            for i in corpus.split_ids(split)]


def english_centric_pairs(corpus: MultiwayCorpus, tokenizer: MiniBpe,
                          pivot_code: str | None = None,
                          split: str = "train") -> list[TaggedPair]:
    """Both directions pivot<->Li for every non-pivot language Li."""
    pivot_code = pivot_code or corpus.pivot.code
    codes = [lang.code for lang in corpus.languages]
    if pivot_code not in codes:
        raise DataError(f"pivot {pivot_code!r} not in corpus languages {codes}")
    pairs: list[TaggedPair] = []
    for code in codes:
        if code == pivot_code:
            continue
        pairs.extend(pairs_for_direction(corpus, tokenizer, pivot_code, code, split))
        pairs.extend(pairs_for_direction(corpus, tokenizer, code, pivot_code, split))
    return pairs


def supervised_directions(corpus: MultiwayCorpus) -> list[tuple[str, str]]:
    pivot = corpus.pivot.code
    out = []
    for lang in corpus.languages[1:]:
        out.append((pivot, lang.code))
        out.append((lang.code, pivot))
    return out


def zero_shot_directions(corpus: MultiwayCorpus) -> list[tuple[str, str]]:
    non_pivot = [lang.code for lang in corpus.languages[1:]]
    return [(a, b) for a in non_pivot for b in non_pivot if a != b]


@dataclass
class Batch:
    src: np.ndarray          # (B, I) int64, padded
    src_mask: np.ndarray     # (B, I) bool
    tgt_in: np.ndarray       # (B, J) int64, starts with <bos>
    tgt_out: np.ndarray      # (B, J) int64, ends with <eos>
    tgt_mask: np.ndarray     # (B, J) bool over real target tokens
    pairs: list[TaggedPair]

    @property
    def num_target_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def collate(pairs: list[TaggedPair], pad_id: int, bos_id: int) -> Batch:
    b = len(pairs)
    max_i = max(len(p.src_tokens) for p in pairs)
    max_j = max(len(p.tgt_tokens) for p in pairs)
    src = np.full((b, max_i), pad_id, dtype=np.int64)
    tgt_in = np.full((b, max_j), pad_id, dtype=np.int64)
    tgt_out = np.full((b, max_j), pad_id, dtype=np.int64)
    src_mask = np.zeros((b, max_i), dtype=bool)
    tgt_mask = np.zeros((b, max_j), dtype=bool)
    for row, pair in enumerate(pairs):
        si, ti = len(pair.src_tokens), len(pair.tgt_tokens)
        src[row, :si] = pair.src_tokens
        src_mask[row, :si] = True
        tgt_in[row, 0] = bos_id
        tgt_in[row, 1:ti] = pair.tgt_tokens[:-1]
        tgt_out[row, :ti] = pair.tgt_tokens
        tgt_mask[row, :ti] = True
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask, list(pairs))


def make_batches(pairs: list[TaggedPair], max_tokens: int, seed: int,
                 pad_id: int, bos_id: int) -> list[Batch]:
    """Length-bucketed batches covering every pair exactly once per epoch."""
    if not pairs:
        return []
    longest = max(p.length for p in pairs)
    if longest > max_tokens:
        raise DataError(
            f"a pair of length {longest} exceeds max_tokens {max_tokens}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    shuffled.sort(key=lambda p: p.length)          # stable: keeps shuffle within a length
    batches: list[list[TaggedPair]] = []
    current: list[TaggedPair] = []
    width = 0
    for pair in shuffled:
        new_width = max(width, pair.length)
        if current and (len(current) + 1) * new_width > max_tokens:
            batches.append(current)
            current, width = [pair], pair.length
        else:
            current.append(pair)
            width = new_width
    if current:
        batches.append(current)
    batch_order = rng.permutation(len(batches))
    return [collate(batches[i], pad_id, bos_id) for i in batch_order]


def write_multiway_tsv(corpus: MultiwayCorpus, path) -> None:
    """Columns: sentence_id, lang, text; one row per rendering, no header."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(corpus.renders):
            for lang in corpus.languages:
                fh.write(f"{sid}\t{lang.code}\t{corpus.text(sid, lang.code)}\n")


def save_corpus(corpus: MultiwayCorpus, directory) -> None:
    """Persist renders as TSV plus splits/ciphers/rules as JSON sidecar."""
    import json
    import os

    os.makedirs(directory, exist_ok=True)
    write_multiway_tsv(corpus, os.path.join(directory, "corpus.tsv"))
    meta = {
        "languages": [[lang.code, lang.tag_token] for lang in corpus.languages],
        "train_ids": corpus.train_ids,
        "valid_ids": corpus.valid_ids,
        "test_ids": corpus.test_ids,
        "ciphers": corpus.ciphers,
        "reorder_rules": corpus.reorder_rules,
    }
    with open(os.path.join(directory, "corpus.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(directory) -> MultiwayCorpus:
    import json
    import os

    with open(os.path.join(directory, "corpus.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    renders: dict[int, dict[str, list[str]]] = {}
    with open(os.path.join(directory, "corpus.tsv"), encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"corpus.tsv:{n}: expected 3 tab-separated columns")
            sid, code, text = parts
            renders.setdefault(int(sid), {})[code] = text.split()
    return MultiwayCorpus(
        languages=[LanguageId(code=c, tag_token=t) for c, t in meta["languages"]],
        renders=renders, train_ids=meta["train_ids"], valid_ids=meta["valid_ids"],
        test_ids=meta["test_ids"], ciphers=meta["ciphers"],
        reorder_rules=meta["reorder_rules"])


def write_pairs_tsv(rows, path) -> None:
    """Columns: src_lang, tgt_lang, src_text, tgt_text; no header."""
    with open(path, "w", encoding="utf-8") as fh:
        for src_lang, tgt_lang, src_text, tgt_text in rows:
            fh.write(f"{src_lang}\t{tgt_lang}\t{src_text}\t{tgt_text}\n")


def read_pairs_tsv(path) -> list[tuple[str, str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{n}: expected 4 tab-separated columns")
            rows.append(tuple(parts))
    return rows
