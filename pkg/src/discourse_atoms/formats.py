"""Readers and writers for every on-disk artifact.

Floats are written with 17 significant digits so text files round-trip
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CooccurrenceStore, Vocabulary
from .embed import EmbeddingSet
from .senses import InflectionLexicon
from .sparse_coding import AtomBasis, SparseCode

COOC_MAGIC = b"COOC0001"
_RECORD = np.dtype([("i", "<u4"), ("j", "<u4"), ("x", "<f8")])
_FMT = "%.17g"


class FormatError(ValueError):
    pass


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_vocab(vocab: Vocabulary, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w, c in zip(vocab.words, vocab.counts):
            fh.write(f"{w}\t{int(c)}\n")


def read_vocab(path: Path) -> Vocabulary:
    counts: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                w, c = line.rstrip("\n").split("\t")
                counts[w] = int(c)
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: expected 'word<TAB>count'") from exc
    return Vocabulary.from_counts(counts)


def write_cooc_text(store: CooccurrenceStore, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_words={store.n_words} window={store.window}\n")
        for i, j, x in zip(store.rows, store.cols, store.counts):
            fh.write(f"{i} {j} {x:.17g}\n")


def read_cooc_text(path: Path, n_words: int | None = None, window: int | None = None) -> CooccurrenceStore:
    meta = {}
    acc: dict[tuple[int, int], float] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = int(v)
                continue
            try:
                a, b, x = line.split()
                key = (min(int(a), int(b)), max(int(a), int(b)))
                acc[key] = acc.get(key, 0.0) + float(x)
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: expected 'i j count'") from exc
    n = n_words or meta.get("n_words") or (max((max(k) for k in acc), default=-1) + 1)
    return CooccurrenceStore.from_dict(acc, n, window or meta.get("window", 0))


def write_cooc_binary(store: CooccurrenceStore, path: Path) -> None:
    rec = np.empty(store.nnz, dtype=_RECORD)
    rec["i"], rec["j"], rec["x"] = store.rows, store.cols, store.counts
    with open(path, "wb") as fh:
        fh.write(COOC_MAGIC)
        fh.write(rec.tobytes())


def read_cooc_binary(path: Path, n_words: int | None = None, window: int = 0) -> CooccurrenceStore:
    raw = Path(path).read_bytes()
    if raw[:8] != COOC_MAGIC:
        raise FormatError(f"{path}: missing {COOC_MAGIC.decode()} header")
    body = raw[8:]
    if len(body) % _RECORD.itemsize:
        raise FormatError(f"{path}: truncated record")
    rec = np.frombuffer(body, dtype=_RECORD)
    i, j = rec["i"].astype(np.int64), rec["j"].astype(np.int64)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    n = n_words if n_words is not None else (int(hi.max()) + 1 if len(hi) else 0)
    keys, inv = np.unique(lo * n + hi, return_inverse=True)
    sums = np.zeros(len(keys))
    np.add.at(sums, inv, rec["x"])
    return CooccurrenceStore(keys // n, keys % n, sums, n, window)


def read_cooc(path: Path, n_words: int | None = None, window: int = 0) -> CooccurrenceStore:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == COOC_MAGIC:
        return read_cooc_binary(path, n_words, window)
    return read_cooc_text(path, n_words, window or None)


def _write_matrix(tokens: Sequence[str], M: np.ndarray, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for tok, row in zip(tokens, M):
            fh.write(tok + " " + " ".join(_FMT % x for x in row) + "\n")


def _read_matrix(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be 'N d'")
        n, d = int(header[0]), int(header[1])
        tokens, rows = [], []
        for ln, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise FormatError(f"{path}:{ln}: expected token plus {d} values")
            tokens.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(tokens) != n:
        raise FormatError(f"{path}: header says {n} rows, found {len(tokens)}")
    return tokens, np.array(rows, dtype=np.float64).reshape(n, d)


def write_embeddings(emb: EmbeddingSet, path: Path) -> None:
    _write_matrix(emb.words, emb.vectors, path)


def read_embeddings(path: Path) -> EmbeddingSet:
    words, M = _read_matrix(path)
    return EmbeddingSet(tuple(words), M)


def write_basis(basis: AtomBasis, path: Path) -> None:
    _write_matrix(basis.names(), basis.atoms, path)


def read_basis(path: Path) -> AtomBasis:
    names, M = _read_matrix(path)
    expected = [f"atom_{j:04d}" for j in range(len(names))]
    if names != expected:
        raise FormatError(f"{path}: atom tokens must be atom_0000, atom_0001, ... in order")
    return AtomBasis(M)


def write_codes(codes: SparseCode, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w, idx, cf in zip(codes.words, codes.indices, codes.coeffs):
            body = ",".join(f"{int(a)}:{_FMT % c}" for a, c in zip(idx, cf) if a >= 0)
            fh.write(f"{w}\t{body}\n")


def read_codes(path: Path, k: int | None = None) -> SparseCode:
    words, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                w, body = line.split("\t")
                entries = [(int(a), float(c)) for a, c in
                           (item.split(":") for item in body.split(",") if item)]
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: expected 'word<TAB>idx:coeff,...'") from exc
            if len({a for a, _ in entries}) != len(entries):
                raise FormatError(f"{path}:{n}: repeated atom index")
            words.append(w)
            rows.append(entries)
    width = max([len(r) for r in rows] + [k or 0, 1])
    if k is not None and any(len(r) > k for r in rows):
        raise FormatError(f"{path}: a code has more than k={k} entries")
    idx = -np.ones((len(rows), width), dtype=np.int64)
    cf = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        for s, (a, c) in enumerate(r):
            idx[i, s], cf[i, s] = a, c
    return SparseCode(tuple(words), idx, cf, k or width)


def read_lexicon(path: Path) -> InflectionLexicon:
    forms: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{n}: expected 'base<TAB>form1,form2'")
            forms[parts[0]] = tuple(f for f in parts[1].split(",") if f)
    return InflectionLexicon(forms)


def write_lexicon(lex: InflectionLexicon, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for base in sorted(lex.forms):
            fh.write(f"{base}\t{','.join(lex.forms[base])}\n")


def write_jsonl(records: Iterable[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(data, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
