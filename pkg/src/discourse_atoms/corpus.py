"""Vocabulary, windowed co-occurrence counts, and artificial word merges."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from ._backend import get_kernels

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Raised for invalid vocabulary, store, or merge requests."""


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Words ordered by descending count; ``index == rank``.

    Ties in count are broken by lexicographic word order, so ``rank`` is the
    position in ``words``.
    """

    words: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})
        if len(self._index) != len(self.words):
            raise CorpusError("vocabulary words must be unique")

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "Vocabulary":
        items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(w for w, _ in items), np.array([c for _, c in items], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise CorpusError(f"word {word!r} not in vocabulary") from None

    def get(self, word: str, default: int = -1) -> int:
        return self._index.get(word, default)

    def rank(self, word: str) -> int:
        return self.index(word)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def probability(self, word: str) -> float:
        return float(self.counts[self.index(word)]) / self.total


@dataclass(frozen=True, eq=False)
class CooccurrenceStore:
    """Symmetric pair counts stored once per unordered pair (``rows <= cols``)."""

    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    n_words: int
    window: int

    def __post_init__(self):
        for name, dtype in (("rows", np.int64), ("cols", np.int64), ("counts", np.float64)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.rows > self.cols):
            raise CorpusError("store entries must satisfy row <= col")
        if len(self.rows) and (self.cols.max() >= self.n_words or self.rows.min() < 0):
            raise CorpusError("store index out of vocabulary range")

    @property
    def total_pairs(self) -> float:
        return float(self.counts.sum())

    @property
    def nnz(self) -> int:
        return len(self.counts)

    @cached_property
    def _keys(self) -> np.ndarray:
        return self.rows * self.n_words + self.cols

    def get(self, i: int, j: int) -> float:
        a, b = (i, j) if i <= j else (j, i)
        key = a * self.n_words + b
        keys = self._keys
        pos = np.searchsorted(keys, key)
        if pos < len(keys) and keys[pos] == key:
            return float(self.counts[pos])
        return 0.0

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        """Full symmetric matrix with each off-diagonal count mirrored."""
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.counts, self.counts[off]])
        return sparse.csr_matrix((v, (r, c)), shape=(self.n_words, self.n_words))

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Context indices and counts of word ``i`` (self pair included)."""
        m = self.csr
        start, stop = m.indptr[i], m.indptr[i + 1]
        return m.indices[start:stop].copy(), m.data[start:stop].copy()

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(c) for a, b, c in zip(self.rows, self.cols, self.counts)}

    @classmethod
    def from_dict(cls, entries: dict[tuple[int, int], float], n_words: int, window: int):
        acc: dict[tuple[int, int], float] = {}
        for (i, j), c in entries.items():
            key = (min(i, j), max(i, j))
            acc[key] = acc.get(key, 0.0) + float(c)
        keys = sorted(k for k, v in acc.items() if v != 0)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        counts = np.array([acc[k] for k in keys], dtype=np.float64)
        return cls(rows, cols, counts, n_words, window)


@dataclass(frozen=True)
class MergeSpec:
    word_a: str
    word_b: str
    merged_token: str
    ratio_r: float

    @classmethod
    def for_pair(cls, vocab: Vocabulary, w1: str, w2: str, merged_token: str | None = None):
        """Order the pair so ``word_a`` is the more frequent word (``ratio_r >= 1``)."""
        if w1 == w2:
            raise CorpusError("cannot merge a word with itself")
        c1, c2 = vocab.counts[vocab.index(w1)], vocab.counts[vocab.index(w2)]
        a, b = (w1, w2) if (c1 > c2 or (c1 == c2 and w1 < w2)) else (w2, w1)
        ca, cb = max(c1, c2), min(c1, c2)
        token = merged_token or f"{a}+{b}"
        return cls(a, b, token, float(ca) / float(cb))


def read_documents(lines: Iterable[str]) -> list[list[str]]:
    """Whitespace-tokenize one document per line, skipping blank lines."""
    return [toks for toks in (line.split() for line in lines) if toks]


def _flatten(token_stream) -> tuple[list[str], np.ndarray]:
    """Accept a flat token sequence or a sequence of documents."""
    if len(token_stream) and not isinstance(token_stream[0], str):
        tokens: list[str] = []
        doc_ids: list[int] = []
        for d, toks in enumerate(token_stream):
            tokens.extend(toks)
            doc_ids.extend([d] * len(toks))
        return tokens, np.asarray(doc_ids, dtype=np.int64)
    return list(token_stream), np.zeros(len(token_stream), dtype=np.int64)


def build_vocabulary(token_stream: Sequence, min_count: int = 1) -> Vocabulary:
    """Count tokens and keep those seen at least ``min_count`` times."""
    if min_count < 1:
        raise CorpusError("min_count must be >= 1")
    tokens, _ = _flatten(token_stream)
    if not tokens:
        raise CorpusError("empty token stream")
    counts = Counter(tokens)
    kept = {w: c for w, c in counts.items() if c >= min_count}
    if not kept:
        raise CorpusError(f"no token occurs at least {min_count} times")
    return Vocabulary.from_counts(kept)


def count_cooccurrences(token_stream: Sequence, vocab: Vocabulary, window: int = 10,
                        backend: str | None = None) -> CooccurrenceStore:
    """Flat-weighted counts of in-vocabulary token pairs within ``window`` positions.

    Every unordered pair of positions ``p < q`` with ``q - p <= window`` in the
    same document contributes 1. Out-of-vocabulary tokens keep their position
    but are never counted.
    """
    if window < 1:
        raise CorpusError("window must be >= 1")
    tokens, doc = _flatten(token_stream)
    ids = np.fromiter((vocab.get(t) for t in tokens), dtype=np.int64, count=len(tokens))
    n = len(vocab)
    keys, counts = get_kernels(backend).count_window_pairs(ids, doc, int(window), int(n))
    return CooccurrenceStore(keys // n, keys % n, counts, n, window)


def merge_words(store: CooccurrenceStore, vocab: Vocabulary,
                spec: MergeSpec) -> tuple[CooccurrenceStore, Vocabulary]:
    """Replace ``word_a`` and ``word_b`` by one token whose counts are their sums.

    The a-b pair mass and both self pairs land on the merged word's self pair,
    so ``total_pairs`` is unchanged.
    """
    if spec.word_a == spec.word_b:
        raise CorpusError("cannot merge a word with itself")
    ia, ib = vocab.index(spec.word_a), vocab.index(spec.word_b)
    if spec.merged_token in vocab:
        raise CorpusError(f"merged token {spec.merged_token!r} already in vocabulary")

    new_counts = {w: int(c) for w, c in zip(vocab.words, vocab.counts)
                  if w not in (spec.word_a, spec.word_b)}
    new_counts[spec.merged_token] = int(vocab.counts[ia] + vocab.counts[ib])
    new_vocab = Vocabulary.from_counts(new_counts)

    remap = np.array([new_vocab.get(w) for w in vocab.words], dtype=np.int64)
    remap[ia] = remap[ib] = new_vocab.index(spec.merged_token)
    r, c = remap[store.rows], remap[store.cols]
    lo, hi = np.minimum(r, c), np.maximum(r, c)
    n = len(new_vocab)
    keys, inv = np.unique(lo * n + hi, return_inverse=True)
    sums = np.zeros(len(keys), dtype=np.float64)
    np.add.at(sums, inv, store.counts)
    log.debug("merged %s + %s -> %s (r=%.3f)", spec.word_a, spec.word_b,
              spec.merged_token, spec.ratio_r)
    return CooccurrenceStore(keys // n, keys % n, sums, n, store.window), new_vocab


def combine_stores(stores: Sequence[CooccurrenceStore]) -> CooccurrenceStore:
    """Sum per-shard stores built against the same vocabulary."""
    if not stores:
        raise CorpusError("no stores to combine")
    n, window = stores[0].n_words, stores[0].window
    if any(s.n_words != n or s.window != window for s in stores):
        raise CorpusError("shard stores disagree on vocabulary size or window")
    keys = np.concatenate([s.rows * n + s.cols for s in stores])
    counts = np.concatenate([s.counts for s in stores])
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.zeros(len(uniq), dtype=np.float64)
    np.add.at(sums, inv, counts)
    return CooccurrenceStore(uniq // n, uniq % n, sums, n, window)
