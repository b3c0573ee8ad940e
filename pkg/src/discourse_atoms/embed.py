"""Word vectors from co-occurrence counts: SN training and PMI refits.

The SN objective fits ``log X[w, w'] ~ ||v_w + v_w'||^2 + C`` with weight
``X[w, w']`` summed over ordered pairs. ``fit_pmi`` re-embeds one word under
the weighted PMI model while all other vectors stay fixed.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._backend import get_kernels
from .corpus import CooccurrenceStore, Vocabulary

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """SN training produced a non-finite loss."""


class UndefinedPMIError(ValueError):
    """PMI requested for a pair that never co-occurs."""


class RankDeficiencyWarning(UserWarning):
    """A least-squares design was singular and the ridge term was used."""


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    words: tuple[str, ...]
    vectors: np.ndarray
    bias_C: float = 0.0
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float64, copy=True)
        if vecs.ndim != 2 or vecs.shape[0] != len(self.words):
            raise ValueError("vectors must be an N x d matrix with one row per word")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise KeyError(f"no vector for {word!r}") from None

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.index(word)]

    def rows(self, words: Sequence[str]) -> np.ndarray:
        return self.vectors[[self.index(w) for w in words]]

    def normalized(self) -> np.ndarray:
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return self.vectors / np.where(norms > 0, norms, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 300
    epochs: int = 25
    learning_rate: float = 0.05
    seed: int = 0
    weight_cap: float | None = None
    eps: float = 1e-8
    backend: str | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.weight_cap is not None and self.weight_cap <= 0:
            raise ValueError("weight_cap must be positive")


def _pair_arrays(store: CooccurrenceStore, weight_cap: float | None):
    """Rows, cols, log X and per-entry weight (ordered-pair multiplicity folded in)."""
    if store.nnz == 0:
        raise ValueError("co-occurrence store is empty")
    x = store.counts
    w = x if weight_cap is None else np.minimum(x, weight_cap)
    w = w * np.where(store.rows == store.cols, 1.0, 2.0)
    return store.rows, store.cols, np.log(x), np.ascontiguousarray(w)


def sn_objective(vectors: np.ndarray, bias_C: float, store: CooccurrenceStore,
                 weight_cap: float | None = None) -> float:
    rows, cols, log_x, w = _pair_arrays(store, weight_cap)
    s = vectors[rows] + vectors[cols]
    res = np.einsum("ij,ij->i", s, s) + bias_C - log_x
    return float(np.dot(w, res * res))


def sn_gradient(vectors: np.ndarray, bias_C: float, store: CooccurrenceStore,
                weight_cap: float | None = None) -> tuple[float, np.ndarray, float]:
    """Loss and exact gradients with respect to all vectors and ``C``."""
    rows, cols, log_x, w = _pair_arrays(store, weight_cap)
    s = vectors[rows] + vectors[cols]
    res = np.einsum("ij,ij->i", s, s) + bias_C - log_x
    g = 2.0 * w * res
    gs = (2.0 * g)[:, None] * s
    grad = np.zeros_like(vectors)
    np.add.at(grad, rows, gs)
    np.add.at(grad, cols, gs)
    return float(np.dot(w, res * res)), grad, float(g.sum())


def train_sn(store: CooccurrenceStore, vocab: Vocabulary, cfg: TrainConfig,
             init: np.ndarray | None = None) -> EmbeddingSet:
    """Minimize the SN objective with per-pair AdaGrad over shuffled pairs.

    Deterministic for a fixed seed; the compiled and Python backends run the
    same sequential update order.
    """
    if store.n_words != len(vocab):
        raise ValueError("store and vocabulary sizes differ")
    rows, cols, log_x, w = _pair_arrays(store, cfg.weight_cap)
    kernels = get_kernels(cfg.backend)
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    if init is None:
        vectors = rng.uniform(-0.5 / d, 0.5 / d, size=(len(vocab), d))
    else:
        vectors = np.array(init, dtype=np.float64, copy=True)
    vectors = np.ascontiguousarray(vectors)
    accum = np.zeros_like(vectors)
    bias_state = np.zeros(2)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(rows)).astype(np.int64)
        kernels.sn_adagrad_epoch(vectors, accum, bias_state, rows, cols, log_x, w,
                                 order, float(cfg.learning_rate), float(cfg.eps))
        loss = sn_objective(vectors, bias_state[0], store, cfg.weight_cap)
        if not np.isfinite(loss) or not np.all(np.isfinite(vectors)):
            raise DivergenceError(f"SN loss became non-finite at epoch {epoch}")
        history.append(loss)
        log.info("sn epoch %d loss %.6g (%.2fs)", epoch, loss, time.perf_counter() - t0)
    return EmbeddingSet(vocab.words, vectors, float(bias_state[0]), tuple(history))


def pmi(store: CooccurrenceStore, vocab: Vocabulary, w1: str, w2: str) -> float:
    """``log(Pr[w1, w2] / (Pr[w1] Pr[w2]))`` from empirical counts."""
    i, j = vocab.index(w1), vocab.index(w2)
    x = store.get(i, j)
    if x <= 0:
        raise UndefinedPMIError(f"{w1!r} and {w2!r} never co-occur")
    joint = x / store.total_pairs
    return float(np.log(joint) - np.log(vocab.probability(w1)) - np.log(vocab.probability(w2)))


def pmi_row(store: CooccurrenceStore, vocab: Vocabulary, word: str,
            exclude_self: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Context indices, PMI values and joint probabilities for one word."""
    i = vocab.index(word)
    ctx, x = store.row(i)
    if exclude_self:
        keep = ctx != i
        ctx, x = ctx[keep], x[keep]
    p_marg = vocab.counts / vocab.total
    joint = x / store.total_pairs
    values = np.log(joint) - np.log(p_marg[ctx]) - np.log(p_marg[i])
    return ctx, values, joint


def weighted_lstsq(design: np.ndarray, targets: np.ndarray, weights: np.ndarray,
                   ridge_rel: float = 1e-10, cond_tol: float = 1e-12) -> tuple[np.ndarray, bool]:
    """Solve ``min_z sum_k w_k (y_k - <x_k, z>)^2`` through the normal equations.

    A ridge of ``ridge_rel * trace`` is added only when the Gram matrix is
    numerically singular; the second return value says whether it was.
    """
    design = np.asarray(design, dtype=np.float64)
    wx = design * np.asarray(weights, dtype=np.float64)[:, None]
    gram = design.T @ wx
    rhs = wx.T @ np.asarray(targets, dtype=np.float64)
    evals = np.linalg.eigvalsh(gram)
    top = max(evals[-1], np.finfo(float).tiny)
    singular = evals[0] <= cond_tol * top
    if singular:
        gram = gram + ridge_rel * max(np.trace(gram), np.finfo(float).tiny) * np.eye(gram.shape[0])
    return np.linalg.solve(gram, rhs), bool(singular)


def fit_pmi(store: CooccurrenceStore, vocab: Vocabulary, fixed: EmbeddingSet,
            target_word: str) -> np.ndarray:
    """Weighted least-squares PMI embedding of ``target_word`` against fixed vectors.

    Minimizes ``sum_chi Pr(chi, w) (pmi(chi, w) - <v_chi, z>)^2`` over observed
    contexts, excluding the word's own self pair.
    """
    ctx, values, joint = pmi_row(store, vocab, target_word)
    if len(ctx) == 0:
        raise UndefinedPMIError(f"{target_word!r} has no observed contexts")
    missing = [vocab.words[c] for c in ctx if vocab.words[c] not in fixed]
    if missing:
        raise KeyError(f"contexts without fixed vectors: {missing[:5]}")
    design = fixed.rows([vocab.words[c] for c in ctx])
    z, singular = weighted_lstsq(design, values, joint)
    if singular:
        warnings.warn(f"rank-deficient PMI design for {target_word!r}; ridge applied",
                      RankDeficiencyWarning, stacklevel=2)
    return z


def refit_pmi_vectors(store: CooccurrenceStore, vocab: Vocabulary, fixed: EmbeddingSet,
                      words: Sequence[str]) -> EmbeddingSet:
    """Replace ``words`` in ``fixed`` with their PMI refits (others unchanged)."""
    vecs = {w: fixed.vector(w) for w in fixed.words}
    for w in words:
        vecs[w] = fit_pmi(store, vocab, fixed, w)
    order = list(fixed.words) + [w for w in words if w not in fixed]
    return EmbeddingSet(tuple(order), np.array([vecs[w] for w in order]), fixed.bias_C)
