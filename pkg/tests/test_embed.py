import math
import warnings

import numpy as np
import pytest
from scipy.stats import ortho_group

from discourse_atoms.corpus import CooccurrenceStore, Vocabulary
from discourse_atoms.embed import (EmbeddingSet, RankDeficiencyWarning, TrainConfig,
                                   UndefinedPMIError, fit_pmi, pmi, pmi_row, refit_pmi_vectors,
                                   sn_gradient, sn_objective, train_sn, weighted_lstsq)


def planted_store(n=20, d=5, c0=2.0, seed=0):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((n, d)) * 0.3
    entries = {}
    for i in range(n):
        for j in range(i, n):
            s = U[i] + U[j]
            entries[(i, j)] = float(np.exp(s @ s + c0))
    vocab = Vocabulary.from_counts({f"w{i:02d}": 1000 - i for i in range(n)})
    return CooccurrenceStore.from_dict(entries, n, 10), vocab


def random_store(rng, n=6, density=0.7):
    entries = {}
    for i in range(n):
        for j in range(i, n):
            if rng.random() < density:
                entries[(i, j)] = float(rng.integers(1, 30))
    vocab = Vocabulary.from_counts({f"t{i}": int(rng.integers(20, 200)) for i in range(n)})
    return CooccurrenceStore.from_dict(entries, n, 10), vocab


def brute_objective(V, C, store):
    """Sum over ordered pairs (i, j) of X (|v_i + v_j|^2 + C - log X)^2."""
    M = store.csr.toarray()
    total = 0.0
    for i in range(M.shape[0]):
        for j in range(M.shape[0]):
            if M[i, j] > 0:
                s = V[i] + V[j]
                total += M[i, j] * (s @ s + C - math.log(M[i, j])) ** 2
    return total


class TestObjective:
    def test_matches_ordered_pair_sum(self, rng):
        store, vocab = random_store(rng)
        V = rng.standard_normal((6, 4)) * 0.3
        np.testing.assert_allclose(sn_objective(V, 0.7, store), brute_objective(V, 0.7, store),
                                   rtol=1e-12)

    def test_gradient_finite_differences(self, rng):
        store, vocab = random_store(rng)
        V = rng.standard_normal((6, 4)) * 0.3
        C = -0.4
        _, grad, gC = sn_gradient(V, C, store)
        h = 1e-6
        num = np.zeros_like(V)
        for i in range(V.shape[0]):
            for q in range(V.shape[1]):
                Vp, Vm = V.copy(), V.copy()
                Vp[i, q] += h
                Vm[i, q] -= h
                num[i, q] = (sn_objective(Vp, C, store) - sn_objective(Vm, C, store)) / (2 * h)
        numC = (sn_objective(V, C + h, store) - sn_objective(V, C - h, store)) / (2 * h)
        np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-6 * np.abs(num).max())
        np.testing.assert_allclose(gC, numC, rtol=1e-4)

    def test_orthogonal_invariance(self, rng):
        store, vocab = random_store(rng)
        V = rng.standard_normal((6, 4))
        Q = ortho_group.rvs(4, random_state=3)
        np.testing.assert_allclose(sn_objective(V @ Q.T, 0.2, store), sn_objective(V, 0.2, store),
                                   rtol=1e-12)

    def test_weight_cap(self, rng):
        store, vocab = random_store(rng)
        V = rng.standard_normal((6, 3)) * 0.1
        assert sn_objective(V, 0.0, store, weight_cap=1.0) < sn_objective(V, 0.0, store)


class TestTraining:
    def test_planted_recovery(self):
        store, vocab = planted_store()
        # the objective is non-convex; keep the best of a few restarts
        best = min((train_sn(store, vocab, TrainConfig(dim=5, epochs=3000, learning_rate=0.2,
                                                       seed=s)) for s in range(4)),
                   key=lambda e: e.loss_history[-1])
        S = best.vectors[store.rows] + best.vectors[store.cols]
        res = np.einsum("ij,ij->i", S, S) + best.bias_C - np.log(store.counts)
        assert math.sqrt(np.mean(res ** 2)) < 1e-3
        assert best.loss_history[-1] < 1e-6
        assert best.bias_C == pytest.approx(2.0, abs=1e-3)

    def test_deterministic(self):
        store, vocab = planted_store(n=10)
        cfg = TrainConfig(dim=4, epochs=5, seed=7)
        a, b = train_sn(store, vocab, cfg), train_sn(store, vocab, cfg)
        np.testing.assert_array_equal(a.vectors, b.vectors)
        assert a.bias_C == b.bias_C

    def test_loss_decreases_overall(self):
        store, vocab = planted_store(n=12)
        e = train_sn(store, vocab, TrainConfig(dim=5, epochs=50, learning_rate=0.1))
        assert e.loss_history[-1] < e.loss_history[0]

    def test_size_mismatch(self):
        store, vocab = planted_store(n=5)
        bigger = Vocabulary.from_counts({f"x{i}": 1 for i in range(6)})
        with pytest.raises(ValueError):
            train_sn(store, bigger, TrainConfig(dim=3, epochs=1))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(dim=1)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)


class TestPMI:
    def make(self, joint_factor):
        # Pr[a] = Pr[b] = 0.5 from counts; Pr[a,b] = joint_factor * 0.25
        vocab = Vocabulary.from_counts({"a": 50, "b": 50})
        total = 1000.0
        ab = joint_factor * 0.25 * total
        store = CooccurrenceStore.from_dict({(0, 1): ab, (0, 0): (total - ab) / 2,
                                             (1, 1): (total - ab) / 2}, 2, 10)
        return store, vocab

    def test_independent_is_zero(self):
        store, vocab = self.make(1.0)
        assert pmi(store, vocab, "a", "b") == pytest.approx(0.0, abs=1e-12)

    def test_double_is_log2(self):
        store, vocab = self.make(2.0)
        assert pmi(store, vocab, "a", "b") == pytest.approx(math.log(2.0), rel=1e-12)

    def test_undefined(self):
        vocab = Vocabulary.from_counts({"a": 5, "b": 5})
        store = CooccurrenceStore.from_dict({(0, 0): 3.0}, 2, 10)
        with pytest.raises(UndefinedPMIError):
            pmi(store, vocab, "a", "b")

    def test_random_store_direct_formula(self, rng):
        store, vocab = random_store(rng, n=5, density=1.0)
        M = store.csr.toarray()
        total = store.counts.sum()
        probs = vocab.counts / vocab.counts.sum()
        for i in range(5):
            for j in range(5):
                expect = math.log(M[i, j] / total / (probs[i] * probs[j]))
                got = pmi(store, vocab, vocab.words[i], vocab.words[j])
                assert got == pytest.approx(expect, rel=1e-12, abs=1e-12)

    def test_row_excludes_self(self, rng):
        store, vocab = random_store(rng, n=5, density=1.0)
        ctx, vals, joint = pmi_row(store, vocab, vocab.words[2])
        assert 2 not in ctx
        np.testing.assert_allclose(joint.sum() * store.total_pairs,
                                   store.csr.toarray()[2].sum() - store.get(2, 2))


class TestWeightedLstsq:
    def test_matches_lstsq(self, rng):
        X = rng.standard_normal((30, 4))
        y = rng.standard_normal(30)
        w = rng.uniform(0.1, 2.0, 30)
        z, singular = weighted_lstsq(X, y, w)
        sw = np.sqrt(w)
        ref = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        assert not singular
        np.testing.assert_allclose(z, ref, rtol=1e-10)

    def test_single_equation_min_norm(self):
        z, singular = weighted_lstsq(np.array([[1.0, 0.0, 0.0]]), np.array([0.7]), np.array([1.0]))
        assert singular
        np.testing.assert_allclose(z, [0.7, 0.0, 0.0], atol=1e-8)


class TestFitPMI:
    def test_single_context(self):
        # word "w" seen only with context "c"; pmi(c, w) chosen as 0.7
        vocab = Vocabulary.from_counts({"c": 10, "w": 10})
        total = 100.0
        x = math.exp(0.7) * 0.25 * total
        store = CooccurrenceStore.from_dict({(0, 1): x, (0, 0): total - x}, 2, 10)
        fixed = EmbeddingSet(("c",), np.array([[1.0, 0.0, 0.0]]))
        with pytest.warns(RankDeficiencyWarning):
            z = fit_pmi(store, vocab, fixed, "w")
        np.testing.assert_allclose(z, [0.7, 0.0, 0.0], atol=1e-8)

    def test_perfect_fit_recovers_vector(self, rng):
        # counts built so that pmi(chi, w) = <v_chi, v_w> exactly
        d, n_ctx = 4, 12
        V = rng.standard_normal((n_ctx, d)) * 0.3
        v_w = rng.standard_normal(d) * 0.3
        words = [f"c{i}" for i in range(n_ctx)] + ["w"]
        vocab = Vocabulary.from_counts({w: 100 for w in words})
        p = 1.0 / len(words)
        total = 1e6
        entries = {}
        wi = vocab.index("w")
        for i in range(n_ctx):
            ci = vocab.index(words[i])
            entries[(min(ci, wi), max(ci, wi))] = math.exp(V[i] @ v_w) * p * p * total
        # the remaining mass sits on a self pair so the total stays fixed
        c0 = vocab.index("c0")
        entries[(c0, c0)] = total - sum(entries.values())
        store = CooccurrenceStore.from_dict(entries, len(words), 10)
        fixed = EmbeddingSet(tuple(words[:n_ctx]), V)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            z = fit_pmi(store, vocab, fixed, "w")
        np.testing.assert_allclose(z, v_w, atol=1e-8)

    def test_refit_replaces_only_named(self, rng):
        store, vocab = random_store(rng, n=6, density=1.0)
        fixed = EmbeddingSet(vocab.words, rng.standard_normal((6, 3)))
        out = refit_pmi_vectors(store, vocab, fixed, [vocab.words[0]])
        np.testing.assert_array_equal(out.vector(vocab.words[1]), fixed.vector(vocab.words[1]))
        np.testing.assert_allclose(out.vector(vocab.words[0]),
                                   fit_pmi(store, vocab, fixed, vocab.words[0]))
