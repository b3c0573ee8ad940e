"""Police-lineup sense selection: pick a word's true senses out of a lineup.

Each candidate sense is a short word list ``L``. For every atom ``a`` of the
target ``w`` (plus the top atom of each inflected form) a candidate scores::

    s(a, L) - s1(L) + s(w, L) - s2(L),     s(x, Y) = sqrt(sum_y <x, v_y>^2)

where ``s1`` / ``s2`` are the mean similarities of all atoms / all words to
``L``. Each atom nominates its two best candidates; nominations accumulate.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embed import EmbeddingSet
from .sparse_coding import AtomBasis, SparseCode

log = logging.getLogger(__name__)

SENSE_SIZE = 8
MIN_SENSE_WORDS = 4
ATOMS_PER_TARGET = 5
NOMINATIONS_PER_ATOM = 2


class SenseError(ValueError):
    """A sense definition has too few usable words, or a case is malformed."""


class NoAtomsError(LookupError):
    """The target word (and its inflections) has no atoms to score with."""


@dataclass(frozen=True)
class SenseDefinition:
    sense_id: str
    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if not MIN_SENSE_WORDS <= len(self.words) <= SENSE_SIZE:
            raise SenseError(f"sense {self.sense_id!r} needs {MIN_SENSE_WORDS}..{SENSE_SIZE} "
                             f"words, got {len(self.words)}")

    @classmethod
    def in_vocab(cls, sense_id: str, words: Iterable[str], known) -> "SenseDefinition":
        """Drop unknown words with a warning; fewer than four left is an error."""
        words = list(words)
        kept = tuple(w for w in words if w in known)
        if len(kept) < len(words):
            warnings.warn(f"sense {sense_id!r}: dropped {len(words) - len(kept)} unknown words",
                          stacklevel=2)
        if len(kept) < MIN_SENSE_WORDS:
            raise SenseError(f"sense {sense_id!r} has only {len(kept)} known words")
        return cls(sense_id, kept)


@dataclass(frozen=True)
class LineupCase:
    target: str
    candidates: tuple[SenseDefinition, ...]
    truth: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        ids = [c.sense_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise SenseError(f"duplicate sense ids for {self.target!r}")
        if self.truth is not None:
            object.__setattr__(self, "truth", tuple(self.truth))
            missing = set(self.truth) - set(ids)
            if missing:
                raise SenseError(f"truth ids not among candidates: {sorted(missing)}")

    @property
    def m(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class InflectionLexicon:
    forms: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for base, fs in self.forms.items():
            uniq = tuple(dict.fromkeys(f for f in fs if f != base))
            if uniq:
                clean[base] = uniq
        object.__setattr__(self, "forms", clean)

    def of(self, word: str) -> tuple[str, ...]:
        return self.forms.get(word, ())

    def restrict(self, known) -> "InflectionLexicon":
        return InflectionLexicon({b: tuple(f for f in fs if f in known)
                                  for b, fs in self.forms.items()})

    def related(self, word: str) -> set[str]:
        """The word, its forms, and any base listing it as a form."""
        out = {word, *self.of(word)}
        for base, fs in self.forms.items():
            if word in fs:
                out.add(base)
                out.update(fs)
        return out


def similarity(x: np.ndarray, Y: Sequence[str], embeddings: EmbeddingSet) -> float:
    if len(Y) == 0:
        raise ValueError("similarity needs a non-empty word set")
    ips = embeddings.rows(Y) @ np.asarray(x, dtype=np.float64)
    return float(np.sqrt(ips @ ips))


def _similarities(X: np.ndarray, Y: Sequence[str], embeddings: EmbeddingSet) -> np.ndarray:
    """``s(x, Y)`` for every row ``x`` of ``X``."""
    ips = X @ embeddings.rows(Y).T
    return np.sqrt(np.einsum("ij,ij->i", ips, ips))


def baseline_similarities(Y: Sequence[str], basis: AtomBasis,
                          embeddings: EmbeddingSet) -> tuple[float, float]:
    """Mean similarity of all atoms (``s1``) and of all words (``s2``) to ``Y``."""
    if len(Y) == 0:
        raise ValueError("baseline needs a non-empty word set")
    s1 = float(_similarities(basis.atoms, Y, embeddings).mean()) if basis.m else 0.0
    s2 = float(_similarities(embeddings.vectors, Y, embeddings).mean())
    return s1, s2


def target_atoms(word: str, codes: SparseCode, lexicon: InflectionLexicon | None = None,
                 per_target: int = ATOMS_PER_TARGET) -> list[int]:
    """Up to five atoms of the word, then the top atom of each inflected form."""
    atoms: list[int] = []
    if word in codes:
        atoms.extend(a for a, _ in codes.entries(word)[:per_target])
    for form in (lexicon.of(word) if lexicon else ()):
        if form in codes:
            entries = codes.entries(form)
            if entries and entries[0][0] not in atoms:
                atoms.append(entries[0][0])
    return atoms


@dataclass(frozen=True)
class LineupResult:
    selected: tuple[str, ...]
    scores: dict[str, float]
    atoms: tuple[int, ...]


def lineup_scores(case: LineupCase, basis: AtomBasis, codes: SparseCode,
                  embeddings: EmbeddingSet, lexicon: InflectionLexicon | None, k: int,
                  use_word_term: bool = True, baselines: dict | None = None) -> LineupResult:
    atoms = target_atoms(case.target, codes, lexicon)
    if not atoms:
        raise NoAtomsError(f"{case.target!r} has no atoms")
    cands = case.candidates
    base = baselines if baselines is not None else {}
    s1 = np.empty(len(cands))
    s2 = np.empty(len(cands))
    for c, sense in enumerate(cands):
        key = frozenset(sense.words)
        if key not in base:
            base[key] = baseline_similarities(sense.words, basis, embeddings)
        s1[c], s2[c] = base[key]
    atom_part = np.array([_similarities(basis.atoms[atoms], s.words, embeddings) for s in cands]).T
    score = atom_part - s1[None, :]
    if use_word_term:
        v_w = embeddings.vector(case.target)
        word_part = np.array([similarity(v_w, s.words, embeddings) for s in cands])
        score = score + (word_part - s2)[None, :]

    acc: dict[int, float] = {}
    for row in score:
        # stable sort: ties keep candidate order
        for c in np.argsort(-row, kind="stable")[:NOMINATIONS_PER_ATOM]:
            acc[int(c)] = acc.get(int(c), 0.0) + float(row[c])
    ranked = sorted(acc, key=lambda c: (-acc[c], c))[:max(k, 0)]
    return LineupResult(tuple(cands[c].sense_id for c in ranked),
                        {cands[c].sense_id: v for c, v in acc.items()}, tuple(atoms))


def lineup(case: LineupCase, basis: AtomBasis, codes: SparseCode, embeddings: EmbeddingSet,
           lexicon: InflectionLexicon | None = None, k: int = 4) -> list[str]:
    """Top-``k`` sense ids for the case (all nominated ones if fewer)."""
    return list(lineup_scores(case, basis, codes, embeddings, lexicon, k).selected)


@dataclass(frozen=True)
class TestbedScore:
    precision: float
    recall: float
    precision_defined: bool = True
    n_cases: int = 0


def precision_recall(cases: Sequence[LineupCase],
                     predictions: Sequence[Sequence[str]]) -> TestbedScore:
    """Micro-averaged precision and recall over cases with truth labels."""
    hit = returned = truth = 0
    for case, pred in zip(cases, predictions, strict=True):
        if case.truth is None:
            raise SenseError(f"case {case.target!r} has no truth labels")
        hit += len(set(pred) & set(case.truth))
        returned += len(pred)
        truth += len(case.truth)
    precision = hit / returned if returned else 0.0
    recall = hit / truth if truth else 0.0
    return TestbedScore(precision, recall, returned > 0, len(cases))


def score_testbed(cases: Sequence[LineupCase], basis: AtomBasis, codes: SparseCode,
                  embeddings: EmbeddingSet, lexicon: InflectionLexicon | None = None,
                  k: int = 4) -> tuple[TestbedScore, list[list[str]]]:
    cache: dict = {}
    preds = [list(lineup_scores(c, basis, codes, embeddings, lexicon, k, baselines=cache).selected)
             for c in cases]
    return precision_recall(cases, preds), preds


def atom_sense_words(basis: AtomBasis, embeddings: EmbeddingSet, atom: int,
                     exclude: set[str], n: int = SENSE_SIZE) -> tuple[str, ...]:
    """The ``n`` nearest words (cosine) to an atom, skipping ``exclude``."""
    cos = embeddings.normalized() @ basis.atoms[atom]
    out = []
    for i in np.lexsort((np.arange(len(cos)), -cos)):
        w = embeddings.words[i]
        if w not in exclude:
            out.append(w)
            if len(out) == n:
                break
    return tuple(out)


def synthetic_testbed(basis: AtomBasis, codes: SparseCode, embeddings: EmbeddingSet,
                      lexicon: InflectionLexicon | None = None, n_targets: int = 50,
                      m: int = 20, n_true: int = 4, seed: int = 0,
                      targets: Sequence[str] | None = None) -> list[LineupCase]:
    """Lineups whose true senses come from the target's own atoms.

    Each true sense is the eight nearest words of one of ``n_true`` randomly
    chosen atoms of the target (its forms excluded). Distractors use one atom
    of each of ``m - n_true`` other randomly drawn words, never an atom the
    target itself uses.
    """
    lexicon = lexicon or InflectionLexicon()
    rng = np.random.default_rng(seed)
    eligible = [w for w in (targets if targets is not None else codes.words)
                if w in codes and w in embeddings and len(codes.entries(w)) >= n_true]
    if len(eligible) < n_targets:
        raise SenseError(f"only {len(eligible)} words have {n_true} or more atoms")
    chosen = [eligible[i] for i in sorted(rng.choice(len(eligible), n_targets, replace=False))]
    donors = [w for w in codes.words if codes.entries(w)]
    cases = []
    for target in chosen:
        own = [a for a, _ in codes.entries(target)]
        exclude = lexicon.related(target)
        true_atoms = [own[i] for i in sorted(rng.choice(len(own), n_true, replace=False))]
        used = set(own)
        senses = [SenseDefinition(f"{target}#t{j}", atom_sense_words(basis, embeddings, a, exclude))
                  for j, a in enumerate(true_atoms)]
        n_fake = 0
        while n_fake < m - n_true:
            donor = donors[rng.integers(len(donors))]
            if donor in exclude:
                continue
            options = [a for a, _ in codes.entries(donor) if a not in used]
            if not options:
                continue
            a = options[rng.integers(len(options))]
            used.add(a)
            senses.append(SenseDefinition(f"{target}#d{n_fake}",
                                          atom_sense_words(basis, embeddings, a, exclude)))
            n_fake += 1
        order = rng.permutation(len(senses))
        cands = tuple(senses[i] for i in order)
        cases.append(LineupCase(target, cands, tuple(s.sense_id for s in senses[:n_true])))
    return cases


def read_testbed(path: Path, known=None) -> list[LineupCase]:
    cases = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cands = [SenseDefinition.in_vocab(c["id"], c["words"], known)
                         if known is not None else SenseDefinition(c["id"], c["words"])
                         for c in rec["candidates"]]
                cases.append(LineupCase(rec["target"], cands, rec.get("truth")))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise SenseError(f"{path}:{line_no}: malformed testbed record ({exc})") from exc
    return cases


def write_testbed(cases: Sequence[LineupCase], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            rec = {"target": case.target,
                   "candidates": [{"id": c.sense_id, "words": list(c.words)} for c in case.candidates]}
            if case.truth is not None:
                rec["truth"] = list(case.truth)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
