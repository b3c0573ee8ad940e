"""What happens to an embedding when two unrelated words are fused into one token.

Under the weighted PMI model a merged word ``w`` built from ``w1`` (the more
frequent, ratio ``r = Pr[w1]/Pr[w2] >= 1``) and ``w2`` sees its PMI with
contexts of ``w_i`` shifted down by ``kappa_i``::

    kappa1 = ln(1 + 1/r),   kappa2 = ln(1 + r)

The closed-form predictors below give ``v_w`` as a combination of ``v1`` and
``v2``; ``oracle_solve`` solves the full weighted least-squares problem
exactly and serves as ground truth.

Scale conventions. With ``a = <v_chi, v_i>`` and weights ``p``:

* ``G_i = sum p a^2`` (so ``gamma_i = G_i / |v_i|^4``),
* ``c_i = sum p a / sum p a^2``,
* ``tau_i = (tr Sigma_i - vhat' Sigma_i vhat) / (d - 1)``, the mean variance
  orthogonal to ``v_i``,

which are exact when ``Sigma_i = gamma_i v_i v_i' + tau_i I`` for any norm
of ``v_i`` and coincide with the usual forms for unit vectors.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CooccurrenceStore, MergeSpec, Vocabulary, merge_words
from .embed import EmbeddingSet, RankDeficiencyWarning, fit_pmi, weighted_lstsq

log = logging.getLogger(__name__)

R_GRID = tuple(2.0 ** e for e in range(8))


class EmptyContextError(ValueError):
    """One of the words has no exclusive contexts."""


class DegenerateSpanError(ValueError):
    """``v1`` and ``v2`` are (nearly) parallel, so alpha/beta are not identifiable."""


def kappas(r: float) -> tuple[float, float]:
    if not r >= 1.0:
        raise ValueError(f"ratio r must be >= 1, got {r}")
    return math.log1p(1.0 / r), math.log1p(r)


@dataclass(frozen=True)
class TheoryParams:
    ratio_r: float
    c1: float
    c2: float
    gamma1: float
    gamma2: float
    tau1: float
    tau2: float
    b1: float = 0.0
    b2: float = 0.0
    dim: int | None = None

    def __post_init__(self):
        kappas(self.ratio_r)

    @property
    def kappa1(self) -> float:
        return kappas(self.ratio_r)[0]

    @property
    def kappa2(self) -> float:
        return kappas(self.ratio_r)[1]

    def with_ratio(self, r: float) -> "TheoryParams":
        return TheoryParams(r, self.c1, self.c2, self.gamma1, self.gamma2,
                            self.tau1, self.tau2, self.b1, self.b2, self.dim)

    def tau_regime(self, factor: float = 10.0) -> dict[str, bool]:
        """Whether each ``tau_i`` lies within ``factor`` of ``gamma_i / d``."""
        if not self.dim:
            return {}
        out = {}
        for name, tau, gamma in (("tau1", self.tau1, self.gamma1), ("tau2", self.tau2, self.gamma2)):
            ratio = tau * self.dim / gamma if gamma > 0 else math.inf
            out[name] = 1.0 / factor <= ratio <= factor
        return out


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    v1: np.ndarray
    v2: np.ndarray
    contexts1: np.ndarray
    contexts2: np.ndarray
    weights1: np.ndarray
    weights2: np.ndarray

    def __post_init__(self):
        for name in ("v1", "v2", "contexts1", "contexts2", "weights1", "weights2"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.weights1 <= 0) or np.any(self.weights2 <= 0):
            raise ValueError("context weights must be positive")

    @property
    def dim(self) -> int:
        return self.v1.shape[0]

    @property
    def pmi1(self) -> np.ndarray:
        return self.contexts1 @ self.v1

    @property
    def pmi2(self) -> np.ndarray:
        return self.contexts2 @ self.v2


def zipf_weights(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    w = rng.permutation(w)
    return w / w.sum()


def make_world(d: int = 50, n_contexts: int = 300, seed: int | np.random.Generator = 0,
               rho_range: tuple[float, float] = (0.5, 1.5), noise: float = 1.0,
               zipf_exponent: float = 1.0) -> SyntheticWorld:
    """Orthonormal ``v1, v2`` with disjoint context sets ``rho * v_i + xi``.

    ``xi`` is Gaussian in the orthogonal complement of ``v_i`` with
    ``E|xi|^2 = noise^2``. Weights follow a shuffled Zipf profile and sum to
    one on each side.
    """
    if d < 3:
        raise ValueError("d must be >= 3")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    v1, v2 = q[:, 0], q[:, 1]

    def side(v):
        rho = rng.uniform(rho_range[0], rho_range[1], n_contexts)
        xi = rng.standard_normal((n_contexts, d)) * noise / math.sqrt(d - 1)
        xi -= np.outer(xi @ v, v)
        return rho[:, None] * v + xi, zipf_weights(n_contexts, zipf_exponent, rng)

    c1, p1 = side(v1)
    c2, p2 = side(v2)
    return SyntheticWorld(v1, v2, c1, c2, p1, p2)


def _side_constants(contexts: np.ndarray, weights: np.ndarray, v: np.ndarray):
    if len(weights) == 0:
        raise EmptyContextError("empty context set")
    d = len(v)
    nv2 = float(v @ v)
    if nv2 == 0:
        raise ValueError("zero word vector")
    a = contexts @ v
    G = float(weights @ (a * a))
    c = float(weights @ a) / G
    b = float(weights @ a) / math.sqrt(nv2)
    trace = float(weights @ np.einsum("ij,ij->i", contexts, contexts))
    tau = (trace - G / nv2) / (d - 1)
    return c, G / nv2 ** 2, tau, b


def estimate_constants(world: SyntheticWorld, ratio_r: float = 1.0) -> TheoryParams:
    c1, g1, t1, b1 = _side_constants(world.contexts1, world.weights1, world.v1)
    c2, g2, t2, b2 = _side_constants(world.contexts2, world.weights2, world.v2)
    return TheoryParams(ratio_r, c1, c2, g1, g2, t1, t2, b1, b2, world.dim)


def real_world(store: CooccurrenceStore, vocab: Vocabulary, embeddings: EmbeddingSet,
               w1: str, w2: str, v1: np.ndarray | None = None,
               v2: np.ndarray | None = None) -> SyntheticWorld:
    """Package a word pair from a corpus in the same shape as a synthetic world.

    ``T_i`` are the contexts seen with ``w_i`` but not with the other word;
    weights are joint probabilities ``X / total_pairs``.
    """
    i1, i2 = vocab.index(w1), vocab.index(w2)
    ctx1, x1 = store.row(i1)
    ctx2, x2 = store.row(i2)
    shared = set(ctx1.tolist()) & set(ctx2.tolist())
    drop = shared | {i1, i2}

    def side(ctx, x):
        keep = np.array([c not in drop and vocab.words[c] in embeddings for c in ctx], dtype=bool)
        if not keep.any():
            raise EmptyContextError("no exclusive contexts with vectors")
        return embeddings.rows([vocab.words[c] for c in ctx[keep]]), x[keep] / store.total_pairs

    c1, p1 = side(ctx1, x1)
    c2, p2 = side(ctx2, x2)
    v1 = embeddings.vector(w1) if v1 is None else v1
    v2 = embeddings.vector(w2) if v2 is None else v2
    return SyntheticWorld(v1, v2, c1, c2, p1, p2)


def estimate_constants_real(store: CooccurrenceStore, vocab: Vocabulary,
                            embeddings: EmbeddingSet, w1: str, w2: str) -> TheoryParams:
    c1, c2 = vocab.counts[vocab.index(w1)], vocab.counts[vocab.index(w2)]
    if c1 < c2:
        raise ValueError("w1 must be the more frequent word")
    return estimate_constants(real_world(store, vocab, embeddings, w1, w2), float(c1) / float(c2))


def predict_merged(params: TheoryParams, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    return (1.0 - params.kappa1 * params.c1) * np.asarray(v1) + \
        (1.0 - params.kappa2 * params.c2) * np.asarray(v2)


def general_coefficients(params: TheoryParams, v1: np.ndarray, v2: np.ndarray) -> tuple[float, float]:
    """Coefficients on ``v1``, ``v2`` with the cross-side isotropic terms kept.

    Off-axis mean terms are dropped. For unit vectors this is
    ``gamma1 (1 - kappa1 c1) / (gamma1 + tau2)`` and its mirror image.
    """
    n1, n2 = float(np.dot(v1, v1)), float(np.dot(v2, v2))
    G1, G2 = params.gamma1 * n1 * n1, params.gamma2 * n2 * n2
    z1 = G1 * (1.0 - params.kappa1 * params.c1) / (G1 + params.tau2 * n1)
    z2 = G2 * (1.0 - params.kappa2 * params.c2) / (G2 + params.tau1 * n2)
    return z1, z2


def predict_merged_general(params: TheoryParams, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    z1, z2 = general_coefficients(params, v1, v2)
    return z1 * np.asarray(v1) + z2 * np.asarray(v2)


def _stacked(world: SyntheticWorld, ratio_r: float):
    k1, k2 = kappas(ratio_r)
    X = np.vstack([world.contexts1, world.contexts2])
    y = np.concatenate([world.pmi1 - k1, world.pmi2 - k2])
    p = np.concatenate([world.weights1, world.weights2])
    return X, y, p


def oracle_objective(world: SyntheticWorld, ratio_r: float, z: np.ndarray) -> float:
    X, y, p = _stacked(world, ratio_r)
    res = y - X @ z
    return float(p @ (res * res))


def oracle_gradient(world: SyntheticWorld, ratio_r: float, z: np.ndarray) -> np.ndarray:
    X, y, p = _stacked(world, ratio_r)
    return -2.0 * X.T @ (p * (y - X @ z))


def oracle_solve(world: SyntheticWorld, ratio_r: float) -> np.ndarray:
    """Exact minimizer of the merged word's weighted PMI least-squares loss."""
    X, y, p = _stacked(world, ratio_r)
    z, singular = weighted_lstsq(X, y, p)
    if singular:
        warnings.warn("singular oracle design; ridge applied", RankDeficiencyWarning, stacklevel=2)
    return z


def span_coefficients(v: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``(alpha, beta)`` of ``v ~ alpha v1 + beta v2`` and the subspace cosine."""
    B = np.column_stack([v1, v2])
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0 or n2 == 0 or abs(float(v1 @ v2)) >= (1 - 1e-10) * n1 * n2:
        raise DegenerateSpanError("v1 and v2 do not span a plane")
    coef, *_ = np.linalg.lstsq(B, v, rcond=None)
    nv = np.linalg.norm(v)
    cos = float(np.linalg.norm(B @ coef) / nv) if nv > 0 else 0.0
    return float(coef[0]), float(coef[1]), min(cos, 1.0)


@dataclass(frozen=True)
class MergeEntry:
    r: float
    alpha_fit: float
    beta_fit: float
    cos: float
    alpha_theory: float = math.nan
    beta_theory: float = math.nan
    label: str = ""


def analyze_merge(v_new: np.ndarray, v1: np.ndarray, v2: np.ndarray, r: float,
                  params: TheoryParams | None = None, label: str = "") -> MergeEntry:
    alpha, beta, cos = span_coefficients(np.asarray(v_new), np.asarray(v1), np.asarray(v2))
    a_th = b_th = math.nan
    if params is not None:
        a_th, b_th = general_coefficients(params.with_ratio(r), v1, v2)
    return MergeEntry(float(r), alpha, beta, cos, a_th, b_th, label)


@dataclass
class MergeReport:
    entries: list[MergeEntry] = field(default_factory=list)

    def add(self, entry: MergeEntry) -> None:
        self.entries.append(entry)

    def _col(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries], dtype=np.float64)

    @property
    def c_regression(self) -> float:
        """Slope of ``1 - beta`` against ``lg r``."""
        lg = np.log2(self._col("r"))
        if len(lg) < 2 or np.ptp(lg) == 0:
            return math.nan
        return float(np.polyfit(lg, 1.0 - self._col("beta_fit"), 1)[0])

    @property
    def pearson(self) -> float:
        lg = np.log2(self._col("r"))
        beta = self._col("beta_fit")
        if len(lg) < 2 or np.ptp(lg) == 0 or np.ptp(beta) == 0:
            return math.nan
        return float(np.corrcoef(beta, -lg)[0, 1])

    @property
    def mean_cos(self) -> float:
        return float(self._col("cos").mean()) if self.entries else math.nan

    @property
    def std_cos(self) -> float:
        return float(self._col("cos").std()) if self.entries else math.nan

    def summary(self) -> dict[str, float]:
        return {"n": len(self.entries), "slope": self.c_regression, "pearson": self.pearson,
                "mean_cos": self.mean_cos, "std_cos": self.std_cos}


CSV_COLUMNS = ("r", "alpha_fit", "beta_fit", "cos", "alpha_theory", "beta_theory")


def write_report_csv(report: MergeReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for e in report.entries:
            out.writerow([repr(float(getattr(e, c))) for c in CSV_COLUMNS])


def read_report_csv(path: Path) -> MergeReport:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return MergeReport([MergeEntry(**{c: float(row[c]) for c in CSV_COLUMNS}) for row in rows])


def write_summary_json(report: MergeReport, path: Path, extra: dict | None = None) -> None:
    data = {k: (None if isinstance(v, float) and math.isnan(v) else v)
            for k, v in report.summary().items()}
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_scatter_svg(report: MergeReport, path: Path) -> bool:
    """Scatter of alpha and beta against ``lg r``; returns False without matplotlib."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return False
    lg = np.log2(report._col("r"))
    with matplotlib.rc_context({"svg.hashsalt": "atoms", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.scatter(lg, report._col("alpha_fit"), s=12, marker="o", label="alpha")
        ax.scatter(lg, report._col("beta_fit"), s=12, marker="^", label="beta")
        ax.set_xlabel("lg r")
        ax.set_ylabel("coefficient")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return True


@dataclass
class SyntheticBatch:
    ratios: np.ndarray
    error_general: np.ndarray
    error_simple: np.ndarray
    error_in_span: np.ndarray
    report: MergeReport
    monotone: np.ndarray
    seconds: float

    def summary(self) -> dict:
        return {
            "worlds": int(len(self.ratios)),
            "median_error_general": float(np.median(self.error_general)),
            "frac_error_general_below_0.15": float(np.mean(self.error_general < 0.15)),
            "median_error_simple": float(np.median(self.error_simple)),
            "median_error_in_span": float(np.median(self.error_in_span)),
            "frac_monotone_beta": float(np.mean(self.monotone)),
            "seconds": self.seconds,
            **{f"report_{k}": v for k, v in self.report.summary().items()},
        }


def beta_monotone(world: SyntheticWorld, grid: Sequence[float] = R_GRID, slack: float = 1e-12) -> bool:
    """Whether the oracle's ``v2`` coefficient is non-increasing along ``grid``."""
    betas = [span_coefficients(oracle_solve(world, r), world.v1, world.v2)[1] for r in grid]
    return bool(np.all(np.diff(betas) <= slack))


def run_synthetic_batch(n_worlds: int = 200, d: int = 50, n_contexts: int = 300,
                        r_range: tuple[float, float] = (1.0, 100.0), seed: int = 0,
                        grid: Sequence[float] = R_GRID, **world_kw) -> SyntheticBatch:
    """Compare the predictors against the oracle on independent random worlds."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ratios, eg, es, ein, mono = [], [], [], [], []
    report = MergeReport()
    lo, hi = math.log(r_range[0]), math.log(r_range[1])
    for i in range(n_worlds):
        world = make_world(d, n_contexts, rng, **world_kw)
        r = math.exp(rng.uniform(lo, hi))
        params = estimate_constants(world, r)
        z = oracle_solve(world, r)
        nz = np.linalg.norm(z)
        gen = predict_merged_general(params, world.v1, world.v2)
        simple = predict_merged(params, world.v1, world.v2)
        B = np.column_stack([world.v1, world.v2])
        z_span = B @ np.linalg.lstsq(B, z, rcond=None)[0]
        ratios.append(r)
        eg.append(np.linalg.norm(gen - z) / nz)
        es.append(np.linalg.norm(simple - z) / nz)
        ein.append(np.linalg.norm(gen - z_span) / np.linalg.norm(z_span))
        report.add(analyze_merge(z, world.v1, world.v2, r, params, label=f"world{i}"))
        mono.append(beta_monotone(world, grid))
    return SyntheticBatch(np.array(ratios), np.array(eg), np.array(es), np.array(ein),
                          report, np.array(mono), time.perf_counter() - t0)


def sample_unrelated_pairs(vocab: Vocabulary, n_pairs: int, seed: int = 0,
                           topics: dict[str, list[int]] | None = None,
                           lexicon: dict[str, list[str]] | None = None,
                           min_count: int = 50, skip_top: int = 100) -> list[tuple[str, str]]:
    """Random word pairs with no shared topic label and no inflectional link.

    Candidates skip the ``skip_top`` most frequent words and need at least
    ``min_count`` occurrences; each word is used at most once. When
    ``topics`` is given only words carrying a topic label are drawn, which
    keeps function-like words (contexts uncorrelated with the word) out.
    """
    rng = np.random.default_rng(seed)
    pool = [w for i, w in enumerate(vocab.words)
            if i >= skip_top and vocab.counts[i] >= min_count and (not topics or topics.get(w))]
    related: dict[str, set[str]] = {}
    for base, forms in (lexicon or {}).items():
        group = {base, *forms}
        for w in group:
            related.setdefault(w, set()).update(group)
    order = rng.permutation(len(pool))
    used: set[str] = set()
    pairs: list[tuple[str, str]] = []
    for a_pos in order:
        a = pool[a_pos]
        if a in used:
            continue
        for b_pos in rng.permutation(len(pool)):
            b = pool[b_pos]
            if b == a or b in used or b in related.get(a, ()):
                continue
            if topics and set(topics.get(a, ())) & set(topics.get(b, ())):
                continue
            pairs.append((a, b))
            used.update((a, b))
            break
        if len(pairs) == n_pairs:
            break
    if len(pairs) < n_pairs:
        raise ValueError(f"only {len(pairs)} unrelated pairs available")
    return pairs


def run_real_pairs(store: CooccurrenceStore, vocab: Vocabulary, embeddings: EmbeddingSet,
                   pairs: Iterable[tuple[str, str]]) -> MergeReport:
    """Merge each pair in the counts, refit the fused token, and measure alpha/beta.

    ``v1`` and ``v2`` are PMI refits of the original words against the same
    fixed context vectors, so all three vectors share one scale.
    """
    report = MergeReport()
    for a, b in pairs:
        spec = MergeSpec.for_pair(vocab, a, b)
        merged_store, merged_vocab = merge_words(store, vocab, spec)
        v_new = fit_pmi(merged_store, merged_vocab, embeddings, spec.merged_token)
        v1 = fit_pmi(store, vocab, embeddings, spec.word_a)
        v2 = fit_pmi(store, vocab, embeddings, spec.word_b)
        params = None
        try:
            params = estimate_constants(real_world(store, vocab, embeddings, spec.word_a,
                                                   spec.word_b, v1, v2), spec.ratio_r)
        except EmptyContextError:
            log.warning("no exclusive contexts for %s; theory columns left empty", spec.merged_token)
        report.add(analyze_merge(v_new, v1, v2, spec.ratio_r, params, label=spec.merged_token))
    return report
