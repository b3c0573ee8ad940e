"""Discourse-atom dictionaries: k-SVD with hard sparsity, plus basis upkeep.

Codes are stored as fixed-width ``(N, k)`` index/coefficient arrays with
``-1`` padding at the end of each row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AtomBasis:
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, copy=True).reshape(-1, self.atoms.shape[-1])
        norms = np.linalg.norm(atoms, axis=1)
        if np.any(norms == 0):
            raise ValueError("atoms must be non-zero")
        # rows already unit length are left bit-for-bit unchanged
        off = np.abs(norms - 1.0) > 4 * np.finfo(np.float64).eps
        atoms[off] /= norms[off, None]
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def names(self) -> list[str]:
        return [f"atom_{j:04d}" for j in range(self.m)]

    def max_duplicate_overlap(self) -> float:
        if self.m < 2:
            return 0.0
        g = np.abs(self.atoms @ self.atoms.T)
        np.fill_diagonal(g, 0.0)
        return float(g.max())


@dataclass(frozen=True, eq=False)
class SparseCode:
    words: tuple[str, ...]
    indices: np.ndarray
    coeffs: np.ndarray
    k: int

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64, copy=True)
        cf = np.array(self.coeffs, dtype=np.float64, copy=True)
        if idx.shape != cf.shape or idx.shape[0] != len(self.words):
            raise ValueError("indices/coeffs must be N x width")
        if np.any((idx >= 0).sum(axis=1) > self.k):
            raise ValueError(f"a code uses more than k={self.k} atoms")
        cf[idx < 0] = 0.0
        for arr in (idx, cf):
            arr.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coeffs", cf)
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def entries(self, word: str) -> list[tuple[int, float]]:
        """(atom, coefficient) pairs of ``word`` in decreasing coefficient order."""
        i = self._index[word]
        pairs = [(int(a), float(c)) for a, c in zip(self.indices[i], self.coeffs[i]) if a >= 0]
        return sorted(pairs, key=lambda p: (-p[1], p[0]))

    def dense(self, m: int) -> np.ndarray:
        out = np.zeros((len(self.words), m))
        rows, slots = np.nonzero(self.indices >= 0)
        out[rows, self.indices[rows, slots]] = self.coeffs[rows, slots]
        return out

    def usage(self, m: int) -> np.ndarray:
        """Number of words whose code contains each atom."""
        used = self.indices[self.indices >= 0]
        return np.bincount(used, minlength=m)

    def nnz_per_word(self) -> np.ndarray:
        return (self.indices >= 0).sum(axis=1)

    def positive_fraction(self) -> float:
        mask = self.indices >= 0
        return float((self.coeffs[mask] > 0).mean()) if mask.any() else 0.0


def _compact(idx: np.ndarray, coef: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Move valid entries to the front of each row, keeping their order."""
    order = np.argsort(idx < 0, axis=1, kind="stable")
    return np.take_along_axis(idx, order, 1), np.take_along_axis(coef, order, 1)


def _solve_batched(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(G, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("nij,nj->ni", np.linalg.pinv(G), b)


def solve_support(corr: np.ndarray, gram: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Least-squares coefficients for each row on its (padded) support.

    ``corr`` is ``X @ D.T`` and ``gram`` is ``D @ D.T``.
    """
    coef = np.zeros(idx.shape)
    sizes = (idx >= 0).sum(axis=1)
    for s in np.unique(sizes):
        if s == 0:
            continue
        rows = np.nonzero(sizes == s)[0]
        S = idx[rows, :s]
        G = gram[S[:, :, None], S[:, None, :]]
        b = np.take_along_axis(corr[rows], S, axis=1)
        coef[rows, :s] = _solve_batched(G, b)
    return coef


def omp(X: np.ndarray, D: np.ndarray, k: int, tol: float = 1e-12,
        chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal matching pursuit of each row of ``X`` on unit atoms ``D``.

    At most ``k`` atoms per row, each step choosing the largest absolute
    correlation with the current residual (lowest index on ties) and
    refitting all chosen coefficients by least squares. A row stops early
    once its residual is negligible.
    """
    X = np.asarray(X, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    N, m = X.shape[0], D.shape[0]
    k = min(k, m)
    idx = -np.ones((N, k), dtype=np.int64)
    coef = np.zeros((N, k))
    gram = D @ D.T
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        xc = X[lo:hi] @ D.T
        sq = np.einsum("ij,ij->i", X[lo:hi], X[lo:hi])
        n = hi - lo
        active = sq > 0
        res_corr = xc.copy()
        ci = idx[lo:hi]
        cc = coef[lo:hi]
        rows_all = np.arange(n)
        for s in range(k):
            score = np.abs(res_corr)
            if s:
                score[rows_all[:, None], ci[:, :s]] = -1.0
            pick = np.argmax(score, axis=1)
            active &= score[rows_all, pick] > 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            ci[rows, s] = pick[rows]
            S = ci[rows, :s + 1]
            G = gram[S[:, :, None], S[:, None, :]]
            b = np.take_along_axis(xc[rows], S, axis=1)
            c = _solve_batched(G, b)
            cc[rows, :s + 1] = c
            res_corr[rows] = xc[rows] - np.einsum("ns,nsm->nm", c, gram[S])
            resid = sq[rows] - np.einsum("ns,ns->n", c, b)
            active[rows[resid <= tol * sq[rows]]] = False
    return idx, coef


def reconstruct(D: np.ndarray, idx: np.ndarray, coef: np.ndarray) -> np.ndarray:
    safe = np.where(idx >= 0, idx, 0)
    return np.einsum("nk,nkd->nd", np.where(idx >= 0, coef, 0.0), D[safe])


def reconstruction_error(X: np.ndarray, basis: AtomBasis, code: SparseCode) -> float:
    R = np.asarray(X) - reconstruct(basis.atoms, code.indices, code.coeffs)
    return float(np.einsum("ij,ij->", R, R))


def _as_matrix(data) -> tuple[np.ndarray, tuple[str, ...]]:
    if hasattr(data, "vectors"):
        return np.asarray(data.vectors, dtype=np.float64), tuple(data.words)
    X = np.asarray(data, dtype=np.float64)
    return X, tuple(str(i) for i in range(X.shape[0]))


@dataclass
class KSVDResult:
    basis: AtomBasis
    code: SparseCode
    errors: list[float]

    def __iter__(self):
        # allow ``basis, code = ksvd(...)``
        return iter((self.basis, self.code))


def _code_step(X, D, k, prev_idx, monotone):
    idx, coef = omp(X, D, k)
    if prev_idx is not None and monotone:
        old_coef = solve_support(X @ D.T, D @ D.T, prev_idx)
        e_new = np.sum((X - reconstruct(D, idx, coef)) ** 2, axis=1)
        e_old = np.sum((X - reconstruct(D, prev_idx, old_coef)) ** 2, axis=1)
        keep_old = e_old < e_new
        idx[keep_old] = prev_idx[keep_old]
        coef[keep_old] = old_coef[keep_old]
    return idx, coef


def _sweep(X, norms, D, k, prev_idx, monotone):
    """One coding pass plus rank-1 updates of every atom; returns a new state."""
    D = D.copy()
    m = D.shape[0]
    idx, coef = _code_step(X, D, k, prev_idx, monotone)
    R = X - reconstruct(D, idx, coef)
    flat = idx.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(m + 1))
    row_err = np.einsum("ij,ij->i", R, R)
    worst = iter(np.argsort(-row_err, kind="stable"))
    for j in range(m):
        pos = order[bounds[j]:bounds[j + 1]]
        if len(pos) == 0:
            # unused atom: re-seed from the worst-reconstructed rows (error unchanged)
            w = next(worst)
            while norms[w] == 0:
                w = next(worst)
            D[j] = X[w] / norms[w]
            continue
        users, slots = np.divmod(pos, k)
        E = R[users] + np.outer(coef[users, slots], D[j])
        u, s, vt = np.linalg.svd(E, full_matrices=False)
        atom = vt[0]
        new = s[0] * u[:, 0]
        if new.sum() < 0:
            atom, new = -atom, -new
        D[j] = atom
        coef[users, slots] = new
        R[users] = E - np.outer(new, atom)
    return D, idx, coef, R, float(np.einsum("ij,ij->", R, R))


def _replacement_proposal(D, idx, coef, R, attempt):
    """Swap a low-energy atom for the worst residual direction.

    ``attempt`` counts consecutive rejected proposals and walks up the
    energy ranking so the same swap is not retried forever.
    """
    m = D.shape[0]
    valid = idx >= 0
    energy = np.bincount(idx[valid], weights=coef[valid] ** 2, minlength=m)
    row_err = np.einsum("ij,ij->i", R, R)
    w = int(np.argmax(row_err))
    if row_err[w] <= 0:
        return None
    j = int(np.argsort(energy, kind="stable")[attempt % m])
    D = D.copy()
    D[j] = R[w] / np.sqrt(row_err[w])
    return D


_TRIAL_SWEEPS = 3


def ksvd(data, m: int, k: int, iters: int, seed: int = 0,
         init: np.ndarray | None = None, monotone: bool = True,
         replace: bool = True) -> KSVDResult:
    """Alternate OMP coding and per-atom rank-1 SVD updates.

    ``data`` is an EmbeddingSet or an ``N x d`` array. The basis starts from
    ``m`` distinct random data rows. The coding step keeps, per row, whichever
    is better of the fresh OMP code and a least-squares refit of the previous
    support, so the reconstruction error after each sweep never increases.
    Atoms nobody uses are re-seeded with the worst-reconstructed data rows.

    With ``replace`` each sweep is also tried from a basis in which the
    lowest-energy atom is swapped for the largest residual direction; the
    trial is kept only if it ends with lower error. This escapes the usual
    local minima where one atom straddles two true directions.
    """
    X, words = _as_matrix(data)
    N, d = X.shape
    if not 1 <= m < N:
        raise ValueError("need 1 <= m < number of data rows")
    if k < 1 or iters < 1:
        raise ValueError("k and iters must be >= 1")
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(X, axis=1)
    if init is None:
        candidates = np.nonzero(norms > 0)[0]
        if len(candidates) < m:
            raise ValueError("fewer non-zero rows than atoms")
        pick = rng.choice(candidates, size=m, replace=False)
        D = X[pick] / norms[pick, None]
    else:
        D = np.array(init, dtype=np.float64, copy=True)
        if D.shape != (m, d):
            raise ValueError(f"init must be {m} x {d}")
        D /= np.linalg.norm(D, axis=1, keepdims=True)
    k = min(k, m)

    idx = coef = R = None
    errors: list[float] = []
    n_replaced = rejected = 0
    for it in range(iters):
        state = _sweep(X, norms, D, k, idx, monotone)
        if replace and R is not None:
            trial_D = _replacement_proposal(D, idx, coef, R, rejected)
            if trial_D is not None:
                # the trial codes from scratch; its previous supports may not fit
                trial = _sweep(X, norms, trial_D, k, None, monotone)
                for _ in range(_TRIAL_SWEEPS - 1):
                    trial = _sweep(X, norms, trial[0], k, trial[1], monotone)
                if trial[4] < state[4]:
                    state = trial
                    n_replaced += 1
                    rejected = 0
                else:
                    rejected += 1
        D, idx, coef, R, err = state
        errors.append(err)
        log.debug("ksvd sweep %d error %.6g", it, err)
    if n_replaced:
        log.debug("ksvd kept %d atom replacements", n_replaced)
    return KSVDResult(AtomBasis(D), SparseCode(words, idx, coef, k), errors)


def coefficient_floor(ranks: np.ndarray, n_vocab: int) -> np.ndarray:
    """Per-word threshold ``0.1 + 0.2 * rank / N`` (rank 0 = most frequent)."""
    return 0.1 + 0.2 * np.asarray(ranks, dtype=np.float64) / float(n_vocab)


def encode(embeddings, basis: AtomBasis, k: int, coeff_floor=None, vocab=None) -> SparseCode:
    """OMP codes against a fixed basis, then drop entries below a per-word floor.

    ``coeff_floor`` may be ``None`` (keep everything), a scalar, an array with
    one value per word, or ``"rank"`` for the frequency-rank floor, which
    takes ranks from ``vocab`` (or row order when ``vocab`` is None).
    """
    X, words = _as_matrix(embeddings)
    idx, coef = omp(X, basis.atoms, k)
    if coeff_floor is not None:
        if isinstance(coeff_floor, str):
            if coeff_floor != "rank":
                raise ValueError(f"unknown floor {coeff_floor!r}")
            if vocab is None:
                ranks, n = np.arange(len(words)), len(words)
            else:
                ranks = np.array([vocab.rank(w) if w in vocab else len(vocab) for w in words])
                n = len(vocab)
            floor = coefficient_floor(ranks, n)
        else:
            floor = np.broadcast_to(np.asarray(coeff_floor, dtype=np.float64), (len(words),))
        drop = (idx >= 0) & (coef < floor[:, None])
        idx = np.where(drop, -1, idx)
        coef = np.where(drop, 0.0, coef)
        idx, coef = _compact(idx, coef)
    return SparseCode(words, idx, coef, k)


def stabilize_basis(runs: Sequence[AtomBasis], dup_threshold: float = 0.85,
                    keep_threshold: float = 0.2) -> AtomBasis:
    """Merge bases from independent runs into one stable, duplicate-free basis.

    An atom survives only if some atom of another run has |inner product| of
    at least ``keep_threshold`` with it. Survivors are grouped greedily: an
    atom joins the best existing group when its |inner product| with every
    member exceeds ``dup_threshold``. Each group becomes its sign-aligned,
    renormalized centroid.
    """
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    dims = {b.dim for b in runs}
    if len(dims) != 1:
        raise ValueError(f"runs disagree on dimension: {sorted(dims)}")
    A = np.vstack([b.atoms for b in runs])
    run_id = np.concatenate([np.full(b.m, r) for r, b in enumerate(runs)])
    overlap = np.abs(A @ A.T)
    other = run_id[:, None] != run_id[None, :]
    stable = np.where(other, overlap, 0.0).max(axis=1) >= keep_threshold
    A, overlap = A[stable], overlap[np.ix_(stable, stable)]

    groups: list[list[int]] = []
    for a in range(len(A)):
        best, best_score = None, -1.0
        for g, members in enumerate(groups):
            ips = overlap[a, members]
            if ips.min() > dup_threshold and ips.mean() > best_score:
                best, best_score = g, ips.mean()
        if best is None:
            groups.append([a])
        else:
            groups[best].append(a)
    if not groups:
        return AtomBasis(np.zeros((0, next(iter(dims)))))
    centroids = []
    for members in groups:
        ref = A[members[0]]
        signs = np.sign(A[members] @ ref)
        signs[signs == 0] = 1.0
        centroids.append((signs[:, None] * A[members]).mean(axis=0))
    return AtomBasis(np.asarray(centroids))


def filter_atoms(basis: AtomBasis, code: SparseCode,
                 popular_cutoff: int) -> tuple[AtomBasis, list[int]]:
    """Drop the ``popular_cutoff`` atoms used by the most words (ties by index)."""
    usage = code.usage(basis.m)
    order = sorted(range(basis.m), key=lambda j: (-usage[j], j))
    removed = sorted(order[:max(0, popular_cutoff)])
    keep = [j for j in range(basis.m) if j not in set(removed)]
    if not keep:
        return AtomBasis(np.zeros((0, basis.dim))), removed
    return AtomBasis(basis.atoms[keep]), removed


def incoherence_score(basis: AtomBasis, embeddings, top: int = 10) -> np.ndarray:
    """Mean pairwise cosine among each atom's ``top`` nearest words.

    Low values flag atoms whose neighbourhoods do not hang together.
    """
    X, _ = _as_matrix(embeddings)
    Xn = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-300)
    cos = basis.atoms @ Xn.T
    scores = np.empty(basis.m)
    for j in range(basis.m):
        near = np.argsort(-cos[j], kind="stable")[:top]
        G = Xn[near] @ Xn[near].T
        n = len(near)
        scores[j] = (G.sum() - np.trace(G)) / max(n * (n - 1), 1)
    return scores
