import math

import numpy as np
import pytest

from conftest import random_basis, random_embeddings
from discourse_atoms.embed import EmbeddingSet
from discourse_atoms.senses import (InflectionLexicon, LineupCase, NoAtomsError, SenseDefinition,
                                    SenseError, baseline_similarities, lineup, lineup_scores,
                                    precision_recall, read_testbed, similarity, synthetic_testbed,
                                    target_atoms, write_testbed)
from discourse_atoms.sparse_coding import AtomBasis, SparseCode, encode


def brute_similarity(x, Y, emb):
    return math.sqrt(sum(float(np.dot(x, emb.vector(y))) ** 2 for y in Y))


def brute_baselines(Y, basis, emb):
    s1 = sum(brute_similarity(a, Y, emb) for a in basis.atoms) / basis.m
    s2 = sum(brute_similarity(emb.vector(w), Y, emb) for w in emb.words) / len(emb)
    return s1, s2


class TestSimilarity:
    def test_orthogonal_is_zero(self):
        emb = EmbeddingSet(("a", "b"), np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]))
        assert similarity(np.array([1.0, 0, 0]), ["a", "b"], emb) == 0.0

    def test_single_identical_unit(self):
        emb = EmbeddingSet(("y",), np.array([[0.6, 0.8]]))
        assert similarity(np.array([0.6, 0.8]), ["y"], emb) == pytest.approx(1.0, rel=1e-15)

    def test_random_matches_formula(self, rng):
        emb = random_embeddings(rng, n=15, d=6)
        x = rng.standard_normal(6)
        Y = ["w1", "w4", "w9"]
        assert similarity(x, Y, emb) == pytest.approx(brute_similarity(x, Y, emb), rel=1e-12)

    def test_empty(self, rng):
        with pytest.raises(ValueError):
            similarity(np.zeros(3), [], random_embeddings(rng, d=3))


class TestBaselines:
    def test_atom_orthogonal(self):
        emb = EmbeddingSet(("a", "b"), np.array([[1.0, 0.0], [1.0, 0.0]]))
        s1, _ = baseline_similarities(["a"], AtomBasis(np.array([[0.0, 1.0]])), emb)
        assert s1 == 0.0

    def test_identical_words(self):
        v = np.array([0.0, 0.6, 0.8])
        emb = EmbeddingSet(("a", "b", "c"), np.tile(v, (3, 1)))
        _, s2 = baseline_similarities(["b"], AtomBasis(np.eye(3)), emb)
        assert s2 == pytest.approx(1.0, rel=1e-15)

    def test_double_loop(self, rng):
        emb = random_embeddings(rng, n=12, d=5)
        basis = random_basis(rng, m=4, d=5)
        Y = ["w0", "w3", "w7", "w11"]
        np.testing.assert_allclose(baseline_similarities(Y, basis, emb),
                                   brute_baselines(Y, basis, emb), rtol=1e-12)


class TestDefinitions:
    def test_size_limits(self):
        SenseDefinition("s", tuple("abcd"))
        with pytest.raises(SenseError):
            SenseDefinition("s", tuple("abc"))
        with pytest.raises(SenseError):
            SenseDefinition("s", tuple("abcdefghi"))

    def test_in_vocab_drops_with_warning(self):
        known = set("abcdef")
        with pytest.warns(UserWarning, match="s1"):
            s = SenseDefinition.in_vocab("s1", list("abcdexyz"), known)
        assert s.words == tuple("abcde")
        with pytest.raises(SenseError, match="s2"), pytest.warns(UserWarning):
            SenseDefinition.in_vocab("s2", list("abcxyzuv"), known)

    def test_truth_subset(self):
        s = SenseDefinition("s", tuple("abcd"))
        with pytest.raises(SenseError):
            LineupCase("t", (s,), ("other",))

    def test_lexicon(self):
        lex = InflectionLexicon({"run": ("runs", "run", "ran")})
        assert lex.of("run") == ("runs", "ran")
        assert lex.related("ran") == {"run", "runs", "ran"}
        assert lex.restrict({"run", "ran"}).of("run") == ("ran",)


class TestTargetAtoms:
    def test_top_atom_per_form(self):
        codes = SparseCode(("go", "goes"), np.array([[0, 1, 2, 3, 4, 5], [7, 1, -1, -1, -1, -1]]),
                           np.array([[0.9, 0.8, 0.7, 0.6, 0.5, 0.4], [0.3, 0.9, 0, 0, 0, 0]]), 6)
        lex = InflectionLexicon({"go": ("goes",)})
        # five of the target's atoms, then the top-coefficient atom of "goes"
        assert target_atoms("go", codes, lex) == [0, 1, 2, 3, 4]
        codes2 = SparseCode(("go", "goes"), np.array([[0, -1], [7, 1]]),
                            np.array([[0.9, 0.0], [0.95, 0.9]]), 2)
        assert target_atoms("go", codes2, lex) == [0, 7]


def separable_case():
    e = np.eye(4)
    words = [f"a{i}" for i in range(8)] + [f"b{i}" for i in range(8)] + ["t"]
    vecs = np.vstack([np.tile(e[0], (8, 1)), np.tile(e[1], (8, 1)), e[0][None] * 0.5])
    emb = EmbeddingSet(tuple(words), vecs)
    basis = AtomBasis(np.vstack([e[0], e[2], e[3]]))
    codes = SparseCode(("t",), np.array([[0]]), np.array([[0.5]]), 1)
    case = LineupCase("t", (SenseDefinition("off", tuple(words[8:16])),
                            SenseDefinition("on", tuple(words[:8]))), ("on",))
    return case, basis, codes, emb


class TestLineup:
    def test_separable(self):
        case, basis, codes, emb = separable_case()
        assert lineup(case, basis, codes, emb, None, 1) == ["on"]

    def test_no_atoms(self):
        case, basis, _, emb = separable_case()
        empty = SparseCode(("x",), np.array([[0]]), np.array([[1.0]]), 1)
        with pytest.raises(NoAtomsError):
            lineup(case, basis, empty, emb, None, 1)

    def test_scores_match_brute_force(self, rng):
        emb = random_embeddings(rng, n=60, d=6)
        basis = random_basis(rng, m=10, d=6)
        codes = encode(emb, basis, 4)
        senses = tuple(SenseDefinition(f"s{j}", tuple(rng.choice(emb.words, 8, replace=False)))
                       for j in range(6))
        case = LineupCase("w5", senses)
        res = lineup_scores(case, basis, codes, emb, None, 3)
        atoms = [a for a, _ in codes.entries("w5")][:5]
        expect = {}
        for a in atoms:
            row = []
            for s in senses:
                s1, s2 = brute_baselines(s.words, basis, emb)
                row.append(brute_similarity(basis.atoms[a], s.words, emb) - s1
                           + brute_similarity(emb.vector("w5"), s.words, emb) - s2)
            for c in sorted(range(len(senses)), key=lambda c: (-row[c], c))[:2]:
                expect[senses[c].sense_id] = expect.get(senses[c].sense_id, 0.0) + row[c]
        assert set(res.scores) == set(expect)
        for sid, val in expect.items():
            assert res.scores[sid] == pytest.approx(val, rel=1e-10, abs=1e-12)
        ranked = sorted(expect, key=lambda s: (-expect[s], int(s[1:])))[:3]
        assert list(res.selected) == ranked


class TestScoring:
    def cases(self):
        senses = tuple(SenseDefinition(f"s{j}", tuple(f"{j}{c}" for c in "abcd")) for j in range(4))
        return [LineupCase("t", senses, ("s0", "s1"))]

    def test_perfect(self):
        s = precision_recall(self.cases(), [["s0", "s1"]])
        assert (s.precision, s.recall) == (1.0, 1.0)

    def test_empty_predictions(self):
        s = precision_recall(self.cases(), [[]])
        assert (s.precision, s.recall, s.precision_defined) == (0.0, 0.0, False)

    def test_half(self):
        s = precision_recall(self.cases(), [["s0", "s3"]])
        assert (s.precision, s.recall) == (0.5, 0.5)


class TestTestbed:
    def test_synthetic_and_roundtrip(self, rng, tmp_path):
        emb = random_embeddings(rng, n=120, d=8)
        basis = random_basis(rng, m=30, d=8)
        codes = encode(emb, basis, 5)
        cases = synthetic_testbed(basis, codes, emb, None, n_targets=5, m=10, n_true=3, seed=2)
        assert len(cases) == 5
        for c in cases:
            assert len(c.candidates) == 10 and len(c.truth) == 3
            assert all(len(s.words) == 8 for s in c.candidates)
        write_testbed(cases, tmp_path / "tb.jsonl")
        back = read_testbed(tmp_path / "tb.jsonl")
        assert [(c.target, c.truth, c.candidates) for c in back] == \
            [(c.target, c.truth, c.candidates) for c in cases]

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text('{"target": "x"}\n')
        with pytest.raises(SenseError, match="bad.jsonl:1"):
            read_testbed(tmp_path / "bad.jsonl")
