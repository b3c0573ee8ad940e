"""Reading atoms back as words, and a second level of atoms over atoms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingSet
from .sparse_coding import AtomBasis, SparseCode, ksvd

META_EDGE_THRESHOLD = 0.05


@dataclass(frozen=True)
class AtomReport:
    atom_index: int
    nearest_words: tuple[tuple[str, float], ...]
    usage_count: int = 0
    incoherence: float | None = None


def _cosines(basis: AtomBasis, embeddings: EmbeddingSet, atom_index: int) -> np.ndarray:
    if not 0 <= atom_index < basis.m:
        raise IndexError(f"atom {atom_index} out of range 0..{basis.m - 1}")
    cos = embeddings.normalized() @ basis.atoms[atom_index]
    return np.clip(cos, -1.0, 1.0)


def nearest_words(basis: AtomBasis, embeddings: EmbeddingSet, atom_index: int,
                  top_n: int = 10, codes: SparseCode | None = None) -> AtomReport:
    """Top words by cosine to one atom.

    Ties fall back to row order, which is vocabulary rank for trained
    embeddings.
    """
    cos = _cosines(basis, embeddings, atom_index)
    order = np.lexsort((np.arange(len(cos)), -cos))[:top_n]
    usage = int(codes.usage(basis.m)[atom_index]) if codes is not None else 0
    return AtomReport(atom_index, tuple((embeddings.words[i], float(cos[i])) for i in order), usage)


@dataclass(frozen=True, eq=False)
class MetaBasis:
    meta: AtomBasis
    atom_codes: SparseCode
    errors: tuple[float, ...] = ()

    @property
    def meta_atoms(self) -> np.ndarray:
        return self.meta.atoms

    def edges(self, threshold: float = META_EDGE_THRESHOLD) -> list[tuple[int, int, float]]:
        """(atom, meta atom, coefficient) with ``|coefficient| > threshold``."""
        out = []
        for a, (idx, cf) in enumerate(zip(self.atom_codes.indices, self.atom_codes.coeffs)):
            for j, c in zip(idx, cf):
                if j >= 0 and abs(c) > threshold:
                    out.append((a, int(j), float(c)))
        return out


def build_meta(basis: AtomBasis, m2: int = 200, k2: int = 2, iters: int = 30,
               seed: int = 0) -> MetaBasis:
    """Sparse-code the atoms themselves with the first-level engine."""
    if not m2 < basis.m:
        raise ValueError("m2 must be smaller than the number of atoms")
    atoms = EmbeddingSet(tuple(basis.names()), basis.atoms)
    result = ksvd(atoms, m2, k2, iters, seed=seed)
    return MetaBasis(result.basis, result.code, tuple(result.errors))


def meta_to_dot(meta: MetaBasis, threshold: float = META_EDGE_THRESHOLD,
                atom_labels: dict[int, str] | None = None,
                meta_labels: dict[int, str] | None = None) -> str:
    """Graphviz text: small nodes for atoms, large ones for meta atoms."""
    edges = meta.edges(threshold)
    used_atoms = sorted({a for a, _, _ in edges})
    used_meta = sorted({j for _, j, _ in edges})
    lines = ["graph meta {", "  node [fontname=Helvetica];"]
    for j in used_meta:
        label = (meta_labels or {}).get(j, f"meta_{j:04d}")
        lines.append(f'  m{j} [label="{label}", shape=ellipse, width=1.6, fontsize=14];')
    for a in used_atoms:
        label = (atom_labels or {}).get(a, f"atom_{a:04d}")
        lines.append(f'  a{a} [label="{label}", shape=box, width=0.4, fontsize=8];')
    for a, j, c in edges:
        lines.append(f'  a{a} -- m{j} [weight={c:.4f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
