"""Deterministic toy corpus drawn from a log-linear discourse model.

Each document follows a slowly drifting discourse vector ``c`` and emits words
with probability proportional to ``prior_w * exp(<c, u_w>)``. Topic words sit
near one of ``n_topics`` directions, a block of generic high-frequency words
sits near the origin, and polysemous surface tokens are emitted by two or three
latent senses living in different topics. Some words get an inflected form
(suffix ``s``) that shares the base's latent direction.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).with_name("data")

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gl", "kr", "pl", "st", "tr", "sh", "ch", "th"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]


@dataclass
class ToyCorpus:
    documents: list[list[str]]
    sentences: list[list[str]]
    lexicon: dict[str, list[str]]
    topics: dict[str, list[int]]
    generic: list[str] = field(default_factory=list)

    @property
    def n_tokens(self) -> int:
        return sum(len(d) for d in self.documents)


def _pseudo_words(rng: np.random.Generator, n: int) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        k = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(k))
        # inflected forms append "s"; keep base forms free of that suffix
        if w not in seen and not w.endswith("s"):
            seen.add(w)
            out.append(w)
    return out


def generate_toy_corpus(seed: int = 20161, n_tokens: int = 200_000, dim: int = 50,
                        n_topics: int = 40, words_per_topic: int = 42,
                        n_generic: int = 120, n_polysemous: int = 90,
                        doc_len: int = 80, strength: float = 5.0) -> ToyCorpus:
    if n_topics > dim:
        raise ValueError("n_topics must not exceed dim")
    rng = np.random.default_rng(seed)
    topics = np.linalg.qr(rng.standard_normal((dim, dim)))[0][:, :n_topics].T

    n_topic_words = n_topics * words_per_topic
    names = _pseudo_words(rng, n_topic_words + n_generic + n_polysemous)
    topic_names = names[:n_topic_words]
    generic_names = names[n_topic_words:n_topic_words + n_generic]
    poly_names = names[n_topic_words + n_generic:]

    latent_vecs: list[np.ndarray] = []
    latent_surface: list[str] = []
    latent_prior: list[float] = []
    word_topics: dict[str, list[int]] = {}

    def add_latent(surface, vec, prior, topic=None):
        latent_vecs.append(vec)
        latent_surface.append(surface)
        latent_prior.append(prior)
        if topic is not None:
            word_topics.setdefault(surface, []).append(int(topic))

    def topic_vec(k):
        noise = rng.standard_normal(dim) / np.sqrt(dim)
        return strength * (topics[k] + 0.35 * noise)

    for t, name in enumerate(topic_names):
        k = t % n_topics
        add_latent(name, topic_vec(k), 1.0 / (1.0 + rng.integers(0, words_per_topic)) ** 0.8, k)
    for name in generic_names:
        add_latent(name, 0.6 * rng.standard_normal(dim) / np.sqrt(dim), 12.0 * rng.uniform(0.3, 1.0))
    for name in poly_names:
        n_senses = 2 if rng.uniform() < 0.6 else 3
        for k in rng.choice(n_topics, size=n_senses, replace=False):
            add_latent(name, topic_vec(k), rng.uniform(0.5, 1.0), k)

    # inflected forms: same direction as a base sense, lower prior
    lexicon: dict[str, list[str]] = {}
    n_base = len(latent_vecs)
    bases = rng.choice(n_base, size=n_base // 8, replace=False)
    for b in sorted(bases):
        surface = latent_surface[b]
        if surface in generic_names:
            continue
        form = surface + "s"
        vec = latent_vecs[b] + 0.5 * rng.standard_normal(dim) / np.sqrt(dim)
        topic = word_topics[surface][0] if surface not in poly_names else None
        add_latent(form, vec, 0.5 * latent_prior[b], topic)
        if form not in lexicon.setdefault(surface, []):
            lexicon[surface].append(form)

    U = np.asarray(latent_vecs)
    log_prior = np.log(np.asarray(latent_prior))
    surface = np.asarray(latent_surface)

    documents: list[list[str]] = []
    total = 0
    while total < n_tokens:
        ks = [rng.integers(n_topics)]
        if rng.uniform() < 0.3:
            ks.append(rng.integers(n_topics))
        drift = rng.standard_normal(dim) * 0.3 / np.sqrt(dim)
        doc: list[str] = []
        for part, k in enumerate(ks):
            span = doc_len // len(ks)
            for _ in range(0, span, 5):
                drift = 0.8 * drift + rng.standard_normal(dim) * 0.25 / np.sqrt(dim)
                c = topics[k] + drift
                c /= np.linalg.norm(c)
                logits = log_prior + U @ c
                p = np.exp(logits - logits.max())
                p /= p.sum()
                doc.extend(surface[rng.choice(len(p), size=5, p=p)].tolist())
        documents.append(doc)
        total += len(doc)

    sentences: list[list[str]] = []
    for doc in documents:
        pos = 0
        while pos < len(doc):
            n = int(rng.integers(12, 21))
            piece = doc[pos:pos + n]
            if len(piece) >= 4:
                sentences.append(piece)
            pos += n

    return ToyCorpus(documents, sentences, lexicon, word_topics, list(generic_names))


def write_toy_corpus(toy: ToyCorpus, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out_dir / "toy_corpus.txt.gz",
        "sentences": out_dir / "toy_sentences.txt.gz",
        "lexicon": out_dir / "toy_lexicon.tsv",
        "topics": out_dir / "toy_topics.json",
    }
    # mtime=0 keeps the gzip bytes reproducible
    for key, rows in (("corpus", toy.documents), ("sentences", toy.sentences)):
        with open(paths[key], "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write("".join(" ".join(r) + "\n" for r in rows).encode("utf-8"))
    with open(paths["lexicon"], "w", encoding="utf-8") as fh:
        for base in sorted(toy.lexicon):
            fh.write(f"{base}\t{','.join(toy.lexicon[base])}\n")
    with open(paths["topics"], "w", encoding="utf-8") as fh:
        json.dump({"topics": toy.topics, "generic": toy.generic}, fh, sort_keys=True)
    return paths


def read_lines(path: Path) -> list[str]:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return fh.read().splitlines()


def bundled_paths() -> dict[str, Path]:
    return {
        "corpus": DATA_DIR / "toy_corpus.txt.gz",
        "sentences": DATA_DIR / "toy_sentences.txt.gz",
        "lexicon": DATA_DIR / "toy_lexicon.tsv",
        "topics": DATA_DIR / "toy_topics.json",
    }
