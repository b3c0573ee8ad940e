import math

import numpy as np
import pytest

from discourse_atoms.corpus import Vocabulary
from discourse_atoms.merge_theory import (R_GRID, DegenerateSpanError, EmptyContextError,
                                          MergeEntry, MergeReport, SyntheticWorld, TheoryParams,
                                          analyze_merge, beta_monotone, estimate_constants,
                                          general_coefficients, kappas, make_world, oracle_gradient,
                                          oracle_objective, oracle_solve, predict_merged,
                                          predict_merged_general, read_report_csv,
                                          run_synthetic_batch, sample_unrelated_pairs,
                                          span_coefficients, write_report_csv, write_scatter_svg,
                                          write_summary_json)

D = 50


def basis_pair(rng, d=D):
    q, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    return q[:, 0], q[:, 1]


def antithetic_world(n, seed, noise=0.5, d=D):
    """Contexts rho v + xi and rho v - xi in pairs, so the weighted noise mean is zero."""
    rng = np.random.default_rng(seed)
    v1, v2 = basis_pair(rng, d)

    def side(v):
        h = n // 2
        rho = rng.uniform(0.5, 1.5, h)
        xi = rng.standard_normal((h, d)) * noise / math.sqrt(d - 1)
        xi -= np.outer(xi @ v, v)
        C = np.vstack([rho[:, None] * v + xi, rho[:, None] * v - xi])
        p = np.tile(rng.uniform(0.5, 1.5, h), 2)
        return C, p / p.sum()

    c1, p1 = side(v1)
    c2, p2 = side(v2)
    return SyntheticWorld(v1, v2, c1, c2, p1, p2)


def mirrored_world(rng, n=200):
    """Side 2 is side 1 reflected across the bisector of v1 and v2."""
    v1, v2 = basis_pair(rng)
    u = (v1 - v2) / np.linalg.norm(v1 - v2)
    H = np.eye(D) - 2 * np.outer(u, u)
    xi = rng.standard_normal((n, D)) * 0.3
    c1 = rng.uniform(0.5, 1.5, n)[:, None] * v1 + xi
    p = rng.uniform(0.5, 1.5, n)
    p /= p.sum()
    return SyntheticWorld(v1, v2, c1, c1 @ H.T, p, p)


class TestKappas:
    def test_values(self):
        k1, k2 = kappas(1.0)
        assert k1 == pytest.approx(math.log(2)) and k2 == pytest.approx(math.log(2))
        k1, k2 = kappas(9.0)
        assert k1 == pytest.approx(math.log(10 / 9)) and k2 == pytest.approx(math.log(10))

    def test_ratio_below_one(self):
        with pytest.raises(ValueError):
            kappas(0.5)

    def test_grid(self):
        assert R_GRID == (1, 2, 4, 8, 16, 32, 64, 128)


class TestConstants:
    def test_all_contexts_on_v1(self, rng):
        v1, v2 = basis_pair(rng)
        n = 10
        w = rng.uniform(1, 2, n)
        world = SyntheticWorld(v1, v2, np.tile(v1, (n, 1)), np.tile(v2, (n, 1)),
                               w / w.sum(), w / w.sum())
        p = estimate_constants(world)
        assert p.gamma1 == pytest.approx(1.0, rel=1e-12)
        assert p.c1 == pytest.approx(1.0, rel=1e-12)
        assert p.tau1 == pytest.approx(0.0, abs=1e-14)

    def test_brute_force_definitions(self, rng):
        world = make_world(12, 40, seed=5)
        p = estimate_constants(world, 3.0)
        v = world.v1
        ip = world.contexts1 @ v
        G = float(np.sum(world.weights1 * ip ** 2))
        Sigma = sum(wt * np.outer(c, c) for wt, c in zip(world.weights1, world.contexts1))
        assert p.gamma1 == pytest.approx(G / (v @ v) ** 2, rel=1e-12)
        assert p.c1 == pytest.approx(np.sum(world.weights1 * ip) / G, rel=1e-12)
        assert p.tau1 == pytest.approx((np.trace(Sigma) - G / (v @ v)) / 11, rel=1e-10)
        assert p.kappa1 == pytest.approx(math.log1p(1 / 3))

    @pytest.mark.parametrize("s1,s2", [(1.0, 1.0), (2.5, 0.4), (0.1, 7.0)])
    def test_exact_for_aligned_contexts_at_any_scale(self, rng, s1, s2):
        # noise-free contexts along each word's direction: tau = 0 and the closed form is exact
        u1, u2 = basis_pair(rng)
        n = 40
        c1 = rng.uniform(0.5, 1.5, n)[:, None] * u1
        c2 = rng.uniform(0.5, 1.5, n)[:, None] * u2
        p1, p2 = rng.uniform(1, 2, n), rng.uniform(1, 2, n)
        world = SyntheticWorld(s1 * u1, s2 * u2, c1, c2, p1 / p1.sum(), p2 / p2.sum())
        p = estimate_constants(world, 6.0)
        assert p.tau1 == pytest.approx(0.0, abs=1e-14)
        with pytest.warns(Warning):
            z = oracle_solve(world, 6.0)
        # the design spans two directions only; the ridge fallback lifts rounding noise in
        # the null space by about eps / 1e-10, hence the looser tolerance
        np.testing.assert_allclose(predict_merged_general(p, world.v1, world.v2), z,
                                   atol=1e-5 * np.linalg.norm(z))

    def test_isotropic_ratio_for_unit_planted_world(self):
        world = make_world(D, 3000, seed=0, rho_range=(1.0, 1.0), noise=1.0)
        p = estimate_constants(world)
        assert 0.5 / D <= p.tau1 / p.gamma1 <= 2.0 / D

    def test_empty_context(self, rng):
        v1, v2 = basis_pair(rng)
        world = SyntheticWorld(v1, v2, np.zeros((0, D)), np.tile(v2, (3, 1)),
                               np.zeros(0), np.full(3, 1 / 3))
        with pytest.raises(EmptyContextError):
            estimate_constants(world)


class TestPredictors:
    def test_symmetric_r1(self, rng):
        v1, v2 = basis_pair(rng)
        p = TheoryParams(1.0, 0.8, 0.8, 1.0, 1.0, 0.0, 0.0)
        np.testing.assert_allclose(predict_merged(p, v1, v2),
                                   (1 - 0.8 * math.log(2)) * (v1 + v2), rtol=1e-14)

    def test_large_ratio_limit(self, rng):
        v1, v2 = basis_pair(rng)
        p = TheoryParams(1e9, 0.8, 0.8, 1.0, 1.0, 0.0, 0.0)
        alpha, _ = general_coefficients(p, v1, v2)
        assert alpha == pytest.approx(1.0, abs=1e-8)

    def test_zero_tau_reduces_to_simple(self, rng):
        v1, v2 = basis_pair(rng)
        p = TheoryParams(5.0, 0.7, 1.1, 0.9, 1.3, 0.0, 0.0)
        np.testing.assert_allclose(predict_merged_general(p, v1, v2), predict_merged(p, v1, v2),
                                   rtol=1e-14)

    def test_tau_equal_gamma_halves(self, rng):
        v1, v2 = basis_pair(rng)
        p = TheoryParams(3.0, 0.6, 0.9, 0.7, 1.0, 0.05, 0.7)
        z1, _ = general_coefficients(p, v1, v2)
        assert z1 == pytest.approx((1 - p.kappa1 * p.c1) / 2, rel=1e-14)

    def test_general_beats_simple_when_scales_differ(self):
        rng = np.random.default_rng(0)
        v1, v2 = basis_pair(rng)

        def side(v, rho, noise, n=2000):
            xi = rng.standard_normal((n, D)) * noise / math.sqrt(D - 1)
            xi -= np.outer(xi @ v, v)
            return rho * v + xi, np.full(n, 1.0 / n)

        c1, p1 = side(v1, 1.0, 3.0)
        c2, p2 = side(v2, 0.1, 0.1)
        world = SyntheticWorld(v1, v2, c1, c2, p1, p2)
        p = estimate_constants(world, 2.0)
        assert p.gamma1 / p.gamma2 > D
        z = oracle_solve(world, 2.0)
        general = np.linalg.norm(predict_merged_general(p, v1, v2) - z)
        simple = np.linalg.norm(predict_merged(p, v1, v2) - z)
        assert general < simple


class TestOracle:
    def test_no_shift_no_second_side(self, rng):
        v1, v2 = basis_pair(rng)
        world = make_world(D, 200, seed=3)
        lone = SyntheticWorld(world.v1, world.v2, world.contexts1, np.zeros((0, D)),
                              world.weights1, np.zeros(0))
        # kappa1 = log1p(1/r) vanishes as r grows
        np.testing.assert_allclose(oracle_solve(lone, 1e15), world.v1, atol=1e-10)

    def test_symmetric_world_equal_projections(self, rng):
        world = mirrored_world(rng)
        z = oracle_solve(world, 1.0)
        assert z @ world.v1 == pytest.approx(z @ world.v2, rel=1e-9)

    def test_gradient_zero_at_solution(self):
        world = make_world(20, 80, seed=1)
        z = oracle_solve(world, 5.0)
        g = oracle_gradient(world, 5.0, z)
        assert np.linalg.norm(g) < 1e-10

    def test_gradient_matches_finite_difference(self, rng):
        world = make_world(8, 30, seed=4)
        z = rng.standard_normal(8)
        g = oracle_gradient(world, 2.0, z)
        h = 1e-6
        num = np.array([(oracle_objective(world, 2.0, z + h * e) -
                         oracle_objective(world, 2.0, z - h * e)) / (2 * h) for e in np.eye(8)])
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)

    def test_consistency_with_more_contexts(self):
        def median_error(n):
            errs = []
            for s in range(6):
                w = antithetic_world(n, s)
                p = estimate_constants(w, 4.0)
                assert p.tau1 <= p.gamma1 / D
                z = oracle_solve(w, 4.0)
                errs.append(np.linalg.norm(predict_merged_general(p, w.v1, w.v2) - z)
                            / np.linalg.norm(z))
            return np.median(errs)

        small, large = median_error(300), median_error(3000)
        assert large < small / 2


class TestAnalyze:
    def test_identity(self, rng):
        v1, v2 = basis_pair(rng)
        e = analyze_merge(v1, v1, v2, 2.0)
        assert (e.alpha_fit, e.beta_fit, e.cos) == pytest.approx((1.0, 0.0, 1.0), abs=1e-12)

    def test_degenerate_span(self, rng):
        v1, _ = basis_pair(rng)
        with pytest.raises(DegenerateSpanError):
            span_coefficients(v1, v1, -3 * v1)

    def test_subspace_cosine_brute(self, rng):
        v1, v2 = basis_pair(rng)
        v = rng.standard_normal(D)
        _, _, cos = span_coefficients(v, v1, v2)
        proj = (v @ v1) * v1 + (v @ v2) * v2
        assert cos == pytest.approx(np.linalg.norm(proj) / np.linalg.norm(v), rel=1e-12)

    def test_beta_monotone_on_world(self):
        assert beta_monotone(make_world(D, 300, seed=9))

    def test_report_statistics(self):
        rep = MergeReport()
        for r in (1, 2, 4, 8):
            lg = math.log2(r)
            rep.add(MergeEntry(r, 1.0, 1.0 - 0.25 * lg, 0.9))
        assert rep.c_regression == pytest.approx(0.25)
        assert rep.pearson == pytest.approx(1.0)
        assert rep.mean_cos == pytest.approx(0.9)

    def test_report_nan_when_single(self):
        rep = MergeReport([MergeEntry(2.0, 1.0, 0.5, 0.9)])
        assert math.isnan(rep.pearson) and math.isnan(rep.c_regression)


class TestBatchAndExport:
    def test_small_batch(self, tmp_path):
        batch = run_synthetic_batch(8, d=20, n_contexts=60, seed=1)
        assert batch.report.summary()["n"] == 8
        assert batch.monotone.all()
        write_report_csv(batch.report, tmp_path / "r.csv")
        back = read_report_csv(tmp_path / "r.csv")
        np.testing.assert_array_equal(back._col("beta_fit"), batch.report._col("beta_fit"))
        write_summary_json(batch.report, tmp_path / "s.json", extra={"x": 1})
        assert '"x": 1' in (tmp_path / "s.json").read_text()
        assert write_scatter_svg(batch.report, tmp_path / "s.svg")
        assert (tmp_path / "s.svg").read_text().lstrip().startswith("<?xml")

    def test_svg_reproducible(self, tmp_path):
        rep = MergeReport([MergeEntry(r, 1.0, 1.0 / r, 0.9) for r in (1.0, 3.0, 9.0)])
        write_scatter_svg(rep, tmp_path / "a.svg")
        write_scatter_svg(rep, tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


class TestPairSampling:
    def vocab(self):
        return Vocabulary.from_counts({f"w{i:03d}": 1000 - i for i in range(300)})

    def test_unrelated_and_disjoint(self):
        v = self.vocab()
        topics = {w: [i % 5] for i, w in enumerate(v.words)}
        lex = {"w150": ["w151"]}
        pairs = sample_unrelated_pairs(v, 20, seed=0, topics=topics, lexicon=lex)
        used = [w for p in pairs for w in p]
        assert len(set(used)) == 40
        for a, b in pairs:
            assert not set(topics[a]) & set(topics[b])
            assert {a, b} != {"w150", "w151"}
            assert v.rank(a) >= 100 and v.rank(b) >= 100

    def test_topics_restrict_pool(self):
        v = self.vocab()
        topics = {w: [0 if i % 2 else 1] for i, w in enumerate(v.words) if i < 160}
        pairs = sample_unrelated_pairs(v, 10, seed=1, topics=topics)
        assert all(a in topics and b in topics for a, b in pairs)

    def test_not_enough(self):
        with pytest.raises(ValueError):
            sample_unrelated_pairs(self.vocab(), 500, seed=0)
