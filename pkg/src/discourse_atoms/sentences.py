"""Sentences that show each sense of a word, and short coherent word groups.

A sentence is represented by the best rank-3 subspace of its (non-stopword)
word vectors, uncentered. An atom's relevance to the sentence is how much of
it that subspace captures, relative to the average atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .embed import EmbeddingSet
from .senses import InflectionLexicon
from .sparse_coding import AtomBasis, SparseCode

REP_RANK = 3
CLUSTER_THRESHOLD = 0.6
MIN_SENTENCE_TOKENS = 11


class SentenceTooShortError(ValueError):
    pass


class NoSentenceError(LookupError):
    pass


class UngrowableGroupError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SemanticRep:
    basis3: np.ndarray

    def project(self, v: np.ndarray) -> np.ndarray:
        return self.basis3 @ v

    def norm(self, v: np.ndarray) -> float:
        return float(np.linalg.norm(self.basis3 @ v))


def stopwords_from_counts(words: Sequence[str], n: int = 100) -> frozenset[str]:
    """The ``n`` leading words of a frequency-sorted vocabulary."""
    return frozenset(words[:n])


def semantic_rep(sentence: Sequence[str], embeddings: EmbeddingSet,
                 stopwords: frozenset[str] | set[str] = frozenset()) -> SemanticRep:
    toks = [t for t in sentence if t in embeddings and t not in stopwords]
    if len(toks) < REP_RANK:
        raise SentenceTooShortError(f"need {REP_RANK} content words, got {len(toks)}")
    M = embeddings.rows(toks)
    # full V gives a deterministic orthonormal completion when rank < 3
    _, _, vt = np.linalg.svd(M, full_matrices=True)
    return SemanticRep(vt[:REP_RANK].copy())


def relevance_all(rep: SemanticRep, basis: AtomBasis) -> np.ndarray:
    """``rel(a, s)`` for every atom at once."""
    norms = np.linalg.norm(basis.atoms @ rep.basis3.T, axis=1)
    return norms - norms.mean()


def relevance(atom: int | np.ndarray, rep: SemanticRep, basis: AtomBasis) -> float:
    mean = float(np.linalg.norm(basis.atoms @ rep.basis3.T, axis=1).mean())
    vec = basis.atoms[atom] if np.isscalar(atom) else np.asarray(atom)
    return rep.norm(vec) - mean


def cluster_atoms(basis: AtomBasis, atom_ids: Sequence[int],
                  threshold: float = CLUSTER_THRESHOLD) -> list[list[int]]:
    """Connected components of the graph joining atoms with inner product > threshold.

    Components are listed in order of their first member in ``atom_ids``.
    """
    ids = list(dict.fromkeys(int(a) for a in atom_ids))
    if not ids:
        return []
    A = basis.atoms[ids]
    adj = csr_matrix(A @ A.T > threshold)
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, list[int]] = {}
    for a, lab in zip(ids, labels):
        groups.setdefault(int(lab), []).append(a)
    return list(groups.values())


@dataclass(frozen=True)
class SentenceHit:
    sentence: tuple[str, ...]
    atoms: tuple[int, ...]
    rel: float
    best_atom: int


def top_sentences(word: str, sentences: Sequence[Sequence[str]], basis: AtomBasis,
                  codes: SparseCode, embeddings: EmbeddingSet,
                  lexicon: InflectionLexicon | None = None,
                  stopwords: frozenset[str] | set[str] = frozenset(), n: int = 7,
                  min_tokens: int = MIN_SENTENCE_TOKENS) -> list[SentenceHit]:
    """One representative sentence per atom cluster of ``word``, best first."""
    forms = {word, *(lexicon.of(word) if lexicon else ())}
    atoms = [a for f in sorted(forms, key=lambda f: (f != word, f)) if f in codes
             for a, _ in codes.entries(f)]
    if not atoms:
        raise LookupError(f"{word!r} has no atoms")
    clusters = cluster_atoms(basis, atoms)

    reps, kept = [], []
    for s in sentences:
        if len(s) >= min_tokens and forms.intersection(s):
            try:
                reps.append(relevance_all(semantic_rep(s, embeddings, stopwords), basis))
            except SentenceTooShortError:
                continue
            kept.append(tuple(s))
    if not kept:
        raise NoSentenceError(f"no sentence with {min_tokens}+ tokens contains {word!r}")
    rel = np.asarray(reps)

    hits = []
    for cluster in clusters:
        sub = rel[:, cluster]
        flat = int(np.argmax(sub))
        i, j = divmod(flat, len(cluster))
        hits.append(SentenceHit(kept[i], tuple(cluster), float(sub[i, j]), cluster[j]))
    hits.sort(key=lambda h: -h.rel)
    return hits[:n]


@dataclass(frozen=True)
class WordGroup:
    seed_atom: int
    seed_word: str
    members: tuple[str, ...]
    tau_used: float
    d_used: float


def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ``ceil(pct/100 * n)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        raise ValueError("percentile of an empty list")
    rank = max(1, math.ceil(pct / 100.0 * len(v)))
    return float(v[rank - 1])


def is_dense(cos: np.ndarray, tau: float, pct: float = 30.0) -> bool:
    """Every member's ``pct``-th percentile cosine to the others is at least ``tau``."""
    n = cos.shape[0]
    if n < 2:
        return True
    return all(nearest_rank_percentile(np.delete(cos[i], i), pct) >= tau for i in range(n))


def _grow(seed: int, atom_cos: np.ndarray, Wn: np.ndarray, tau: float, d: float,
          max_size: int, pct: float) -> list[int]:
    members = [seed]
    if atom_cos[seed] < d:
        return members
    cand = np.ones(len(Wn), dtype=bool)
    cand[seed] = False
    to_members = (Wn @ Wn[seed])[:, None]
    while len(members) < max_size and cand.any():
        i = len(members)
        # nearest-rank percentile of each candidate's cosines to current members
        srt = np.sort(to_members, axis=1)
        tau_w = srt[:, max(1, math.ceil(pct / 100.0 * i)) - 1]
        score = np.where(cand, tau_w + 0.5 * (1.0 + 4.0 / i) * atom_cos, -np.inf)
        best = int(np.argmax(score))
        trial = members + [best]
        if atom_cos[best] < d or not is_dense(Wn[trial] @ Wn[trial].T, tau, pct):
            break
        members.append(best)
        cand[best] = False
        to_members = np.hstack([to_members, (Wn @ Wn[best])[:, None]])
    return members


def word_group(atom: int, word: str, embeddings: EmbeddingSet, basis: AtomBasis,
               tau0: float = 0.45, d0: float = 0.5, max_size: int = 8, min_size: int = 3,
               relax: float = 0.9, floor: float = 0.1, pct: float = 30.0,
               candidates: Sequence[str] | None = None) -> WordGroup:
    """Greedily grow a dense group of words near one atom, starting from ``word``.

    At step ``i`` the candidate maximizing ``tau_w + 0.5 (1 + 4/i) d_w`` is
    tried, where ``tau_w`` is its percentile cosine to the members and ``d_w``
    its cosine to the atom; growth stops at the first candidate that would
    break density or nearness. Groups under ``min_size`` retry with both
    thresholds scaled by ``relax`` until ``floor``.
    """
    pool = list(candidates) if candidates is not None else list(embeddings.words)
    if word not in pool:
        pool = [word] + pool
    W = embeddings.rows(pool)
    Wn = W / np.maximum(np.linalg.norm(W, axis=1, keepdims=True), 1e-300)
    atom_cos = Wn @ basis.atoms[atom]
    seed = pool.index(word)
    tau, d = tau0, d0
    while True:
        members = _grow(seed, atom_cos, Wn, tau, d, max_size, pct)
        if len(members) >= min_size:
            return WordGroup(atom, word, tuple(pool[i] for i in members), tau, d)
        if tau <= floor and d <= floor:
            raise UngrowableGroupError(
                f"no group of {min_size} around {word!r} / atom {atom} even at tau=d={floor}")
        tau, d = max(tau * relax, floor), max(d * relax, floor)
