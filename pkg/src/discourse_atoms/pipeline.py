"""End-to-end runs: corpus -> embeddings -> atoms -> analyses, with stage caching.

Each stage writes into ``<workdir>/<stage>/`` and records a cache key (hash
of its configuration section, upstream keys and input-file checksums) plus
artifact checksums in ``stage.json``. A stage whose key and artifacts still
match is skipped. ``manifest.json`` summarizes the run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import formats as fmt
from .atoms import build_meta, meta_to_dot, nearest_words
from .corpus import build_vocabulary, count_cooccurrences, read_documents
from .embed import TrainConfig, train_sn
from .merge_theory import (run_real_pairs, run_synthetic_batch, sample_unrelated_pairs,
                           write_report_csv, write_scatter_svg, write_summary_json)
from .senses import InflectionLexicon, score_testbed, synthetic_testbed, write_testbed
from .sentences import (NoSentenceError, UngrowableGroupError, stopwords_from_counts,
                        top_sentences, word_group)
from .sparse_coding import (encode, filter_atoms, incoherence_score, ksvd,
                            reconstruction_error, stabilize_basis)
from .toycorpus import bundled_paths, read_lines

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).with_name("configs")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PathsConfig:
    corpus: str = "@toy"
    sentences: str = "@toy"
    lexicon: str = "@toy"
    topics: str = "@toy"
    workdir: str = "atoms_work"


@dataclass(frozen=True)
class CorpusConfig:
    min_count: int = 5
    window: int = 10

    def validate(self):
        _check(self.min_count >= 1, "corpus.min_count must be >= 1")
        _check(self.window >= 1, "corpus.window must be >= 1")


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 50
    epochs: int = 25
    learning_rate: float = 0.05
    seed: int = 0
    weight_cap: float = 0.0

    def validate(self):
        _check(self.dim >= 2, "embed.dim must be >= 2")
        _check(self.epochs >= 1, "embed.epochs must be >= 1")
        _check(self.learning_rate > 0, "embed.learning_rate must be > 0")
        _check(self.weight_cap >= 0, "embed.weight_cap must be >= 0")


@dataclass(frozen=True)
class SparseConfig:
    m: int = 60
    k: int = 5
    iters: int = 30
    runs: int = 3
    seed: int = 0
    dup_threshold: float = 0.85
    keep_threshold: float = 0.2
    popular_cutoff: int = 5
    coeff_floor: str = "rank"

    def validate(self):
        _check(self.m >= 1 and self.k >= 1 and self.iters >= 1, "sparse.m, k, iters must be >= 1")
        _check(self.runs >= 1, "sparse.runs must be >= 1")
        _check(0 < self.keep_threshold < self.dup_threshold <= 1,
               "need 0 < sparse.keep_threshold < sparse.dup_threshold <= 1")
        _check(self.popular_cutoff >= 0, "sparse.popular_cutoff must be >= 0")
        _check(self.coeff_floor in ("rank", "none"), "sparse.coeff_floor must be 'rank' or 'none'")


@dataclass(frozen=True)
class MetaConfig:
    enabled: bool = True
    m2: int = 10
    k2: int = 2
    iters: int = 30
    seed: int = 0

    def validate(self):
        _check(self.m2 >= 1 and self.k2 >= 1 and self.iters >= 1, "meta.m2, k2, iters must be >= 1")


@dataclass(frozen=True)
class TheoryConfig:
    enabled: bool = True
    worlds: int = 200
    d: int = 50
    contexts: int = 300
    r_min: float = 1.0
    r_max: float = 100.0
    seed: int = 0
    pairs: int = 20
    pair_seed: int = 0

    def validate(self):
        _check(self.worlds >= 1 and self.contexts >= 1, "theory.worlds and contexts must be >= 1")
        _check(self.d >= 3, "theory.d must be >= 3")
        _check(1.0 <= self.r_min <= self.r_max, "need 1 <= theory.r_min <= theory.r_max")
        _check(self.pairs >= 0, "theory.pairs must be >= 0")


@dataclass(frozen=True)
class LineupConfig:
    enabled: bool = True
    targets: int = 50
    m: int = 20
    k: int = 4
    seed: int = 0

    def validate(self):
        _check(self.targets >= 1, "lineup.targets must be >= 1")
        _check(1 <= self.k <= self.m, "need 1 <= lineup.k <= lineup.m")


@dataclass(frozen=True)
class SentencesConfig:
    enabled: bool = True
    words: tuple[str, ...] = ()
    auto_words: int = 3
    top: int = 7
    stopwords: int = 100

    def validate(self):
        _check(self.top >= 1, "sentences.top must be >= 1")
        _check(self.stopwords >= 0 and self.auto_words >= 0, "sentences counts must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    threads: int = 1

    def validate(self):
        _check(self.threads >= 1, "run.threads must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = PathsConfig()
    corpus: CorpusConfig = CorpusConfig()
    embed: EmbedConfig = EmbedConfig()
    sparse: SparseConfig = SparseConfig()
    meta: MetaConfig = MetaConfig()
    theory: TheoryConfig = TheoryConfig()
    lineup: LineupConfig = LineupConfig()
    sentences: SentencesConfig = SentencesConfig()
    run: RunConfig = RunConfig()
    base_dir: str = "."

    def validate(self) -> "PipelineConfig":
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    def section(self, name: str) -> dict:
        return dataclasses.asdict(getattr(self, name))

    def hash(self) -> str:
        data = {f.name: self.section(f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}
        data["paths"].pop("workdir")
        return _digest(data)

    def replace(self, **sections) -> "PipelineConfig":
        return dataclasses.replace(self, **sections)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


_SECTION_TYPES = {
    "paths": PathsConfig, "corpus": CorpusConfig, "embed": EmbedConfig, "sparse": SparseConfig,
    "meta": MetaConfig, "theory": TheoryConfig, "lineup": LineupConfig,
    "sentences": SentencesConfig, "run": RunConfig,
}


def config_from_dict(data: dict, base_dir: str = ".") -> PipelineConfig:
    sections = {}
    for name, value in data.items():
        if name not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{name}]")
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        cls = _SECTION_TYPES[name]
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, v in value.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            default = getattr(cls(), key)
            if isinstance(default, tuple):
                if not isinstance(v, list):
                    raise ConfigError(f"{name}.{key} must be a list")
                v = tuple(v)
            elif isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{name}.{key} must be true or false")
            elif isinstance(default, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{name}.{key} must be a number")
                v = float(v)
            elif isinstance(default, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"{name}.{key} must be an integer")
            elif isinstance(default, str) and not isinstance(v, str):
                raise ConfigError(f"{name}.{key} must be a string")
            kwargs[key] = v
        sections[name] = cls(**kwargs)
    return PipelineConfig(**sections, base_dir=base_dir).validate()


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, base_dir=str(path.resolve().parent))


def bundled_config(name: str = "toy") -> Path:
    path = CONFIG_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"no bundled config {name!r}")
    return path


def resolve_workdir(cfg: PipelineConfig, override: str | None = None) -> Path:
    """``override``, then ``$ATOMS_WORKDIR``, then the config value.

    The first two are taken relative to the current directory, the config
    value relative to the config file.
    """
    raw = override or os.environ.get("ATOMS_WORKDIR")
    if raw:
        return Path(raw).resolve()
    path = Path(cfg.paths.workdir)
    return path if path.is_absolute() else Path(cfg.base_dir) / path


def resolve_input(cfg: PipelineConfig, key: str) -> Path | None:
    raw = getattr(cfg.paths, key)
    if raw == "":
        return None
    if raw == "@toy":
        return bundled_paths()[key]
    path = Path(raw)
    return path if path.is_absolute() else Path(cfg.base_dir) / path


def _digest(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class StageRecord:
    name: str
    key: str
    cache_hit: bool
    seconds: float
    artifacts: dict[str, str]
    summary: dict = field(default_factory=dict)


@dataclass
class Context:
    cfg: PipelineConfig
    workdir: Path
    keys: dict[str, str] = field(default_factory=dict)

    def stage_dir(self, name: str) -> Path:
        return self.workdir / name

    def path(self, stage: str, filename: str) -> Path:
        return self.workdir / stage / filename


def _write_stage_record(stage_dir: Path, rec: StageRecord) -> None:
    fmt.write_json({"key": rec.key, "artifacts": rec.artifacts, "summary": rec.summary},
                   stage_dir / "stage.json")


def _cached(stage_dir: Path, key: str) -> dict | None:
    meta = stage_dir / "stage.json"
    if not meta.exists():
        return None
    try:
        data = json.loads(meta.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if data.get("key") != key:
        return None
    for name, digest in data.get("artifacts", {}).items():
        p = stage_dir / name
        if not p.exists() or fmt.sha256_file(p) != digest:
            return None
    return data


def _file_digest(path: Path | None) -> str | None:
    return fmt.sha256_file(path) if path is not None and path.exists() else None


# --- stages ---------------------------------------------------------------

def _stage_corpus(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.corpus
    docs = read_documents(read_lines(resolve_input(ctx.cfg, "corpus")))
    vocab = build_vocabulary(docs, cfg.min_count)
    store = count_cooccurrences(docs, vocab, cfg.window)
    fmt.write_vocab(vocab, out / "vocab.tsv")
    fmt.write_cooc_binary(store, out / "cooc.bin")
    return {"documents": len(docs), "tokens": sum(len(d) for d in docs),
            "vocab": len(vocab), "pairs": store.nnz, "total_pairs": store.total_pairs}


def _load_corpus(ctx: Context):
    vocab = fmt.read_vocab(ctx.path("corpus", "vocab.tsv"))
    store = fmt.read_cooc_binary(ctx.path("corpus", "cooc.bin"), len(vocab), ctx.cfg.corpus.window)
    return vocab, store


def _stage_embed(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.embed
    vocab, store = _load_corpus(ctx)
    tc = TrainConfig(dim=cfg.dim, epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                     seed=cfg.seed, weight_cap=cfg.weight_cap or None)
    emb = train_sn(store, vocab, tc)
    fmt.write_embeddings(emb, out / "embeddings.txt")
    info = {"bias_C": emb.bias_C, "loss_history": list(emb.loss_history)}
    fmt.write_json(info, out / "train.json")
    return {"final_loss": emb.loss_history[-1] if emb.loss_history else None, "bias_C": emb.bias_C}


def _load_embeddings(ctx: Context):
    return fmt.read_embeddings(ctx.path("embed", "embeddings.txt"))


def _stage_sparse(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.sparse
    emb = _load_embeddings(ctx)
    vocab, _ = _load_corpus(ctx)
    runs = [ksvd(emb, cfg.m, cfg.k, cfg.iters, seed=cfg.seed + i) for i in range(cfg.runs)]
    for i, r in enumerate(runs):
        fmt.write_basis(r.basis, out / f"run{i}_basis.txt")
    if cfg.runs >= 2:
        basis = stabilize_basis([r.basis for r in runs], cfg.dup_threshold, cfg.keep_threshold)
    else:
        basis = runs[0].basis
    # codes are recomputed after every change to the basis
    raw_codes = encode(emb, basis, cfg.k)
    basis, removed = filter_atoms(basis, raw_codes, cfg.popular_cutoff)
    floor = "rank" if cfg.coeff_floor == "rank" else None
    codes = encode(emb, basis, cfg.k, floor, vocab=vocab)
    fmt.write_basis(basis, out / "basis.txt")
    fmt.write_codes(codes, out / "codes.tsv")

    incoh = incoherence_score(basis, emb)
    usage = codes.usage(basis.m)
    with open(out / "atoms.tsv", "w", encoding="utf-8") as fh:
        fh.write("atom\tusage\tincoherence\tnearest\n")
        for j in range(basis.m):
            rep = nearest_words(basis, emb, j, 9)
            words = ",".join(w for w, _ in rep.nearest_words)
            fh.write(f"atom_{j:04d}\t{int(usage[j])}\t{incoh[j]:.6f}\t{words}\n")
    summary = {
        "run_errors": [r.errors for r in runs],
        "stabilized_atoms": int(basis.m + len(removed)),
        "removed_popular": removed,
        "final_atoms": basis.m,
        "unfloored_error": reconstruction_error(emb.vectors, basis, encode(emb, basis, cfg.k)),
        "positive_fraction": codes.positive_fraction(),
        "mean_atoms_per_word": float(codes.nnz_per_word().mean()),
    }
    fmt.write_json(summary, out / "sparse.json")
    return {k: v for k, v in summary.items() if k != "run_errors"}


def _load_model(ctx: Context):
    basis = fmt.read_basis(ctx.path("sparse", "basis.txt"))
    codes = fmt.read_codes(ctx.path("sparse", "codes.tsv"), ctx.cfg.sparse.k)
    return basis, codes


def _load_lexicon(ctx: Context, known) -> InflectionLexicon:
    path = resolve_input(ctx.cfg, "lexicon")
    if path is None:
        return InflectionLexicon()
    return fmt.read_lexicon(path).restrict(known)


def _stage_meta(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.meta
    basis, _ = _load_model(ctx)
    meta = build_meta(basis, cfg.m2, cfg.k2, cfg.iters, cfg.seed)
    fmt.write_basis(meta.meta, out / "meta_basis.txt")
    fmt.write_codes(meta.atom_codes, out / "meta_codes.tsv")
    emb = _load_embeddings(ctx)
    labels = {j: "/".join(w for w, _ in nearest_words(basis, emb, j, 3).nearest_words)
              for j in range(basis.m)}
    meta_labels = {j: "/".join(w for w, _ in nearest_words(meta.meta, emb, j, 3).nearest_words)
                   for j in range(meta.meta.m)}
    (out / "meta.dot").write_text(meta_to_dot(meta, atom_labels=labels, meta_labels=meta_labels),
                                  encoding="utf-8")
    return {"meta_atoms": meta.meta.m, "edges": len(meta.edges()), "final_error": meta.errors[-1]}


def _stage_theory_synth(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.theory
    batch = run_synthetic_batch(cfg.worlds, cfg.d, cfg.contexts, (cfg.r_min, cfg.r_max), cfg.seed)
    write_report_csv(batch.report, out / "report.csv")
    summary = batch.summary()
    summary.pop("seconds")
    write_summary_json(batch.report, out / "summary.json", extra=summary)
    write_scatter_svg(batch.report, out / "scatter.svg")
    return summary


def _stage_theory_real(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.theory
    vocab, store = _load_corpus(ctx)
    emb = _load_embeddings(ctx)
    topics = None
    tp = resolve_input(ctx.cfg, "topics")
    if tp is not None:
        topics = json.loads(tp.read_text(encoding="utf-8"))["topics"]
    lex = _load_lexicon(ctx, vocab)
    pairs = sample_unrelated_pairs(vocab, cfg.pairs, cfg.pair_seed, topics=topics,
                                   lexicon={b: list(f) for b, f in lex.forms.items()})
    (out / "pairs.txt").write_text("".join(f"{a}\t{b}\n" for a, b in pairs), encoding="utf-8")
    report = run_real_pairs(store, vocab, emb, pairs)
    write_report_csv(report, out / "report.csv")
    write_summary_json(report, out / "summary.json")
    write_scatter_svg(report, out / "scatter.svg")
    return report.summary()


def _stage_lineup(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.lineup
    emb = _load_embeddings(ctx)
    basis, codes = _load_model(ctx)
    lex = _load_lexicon(ctx, emb)
    cases = synthetic_testbed(basis, codes, emb, lex, cfg.targets, cfg.m, min(4, cfg.m), cfg.seed)
    score, preds = score_testbed(cases, basis, codes, emb, lex, cfg.k)
    write_testbed(cases, out / "testbed.jsonl")
    fmt.write_jsonl(({"target": c.target, "selected": p} for c, p in zip(cases, preds)),
                    out / "predictions.jsonl")
    result = {"precision": score.precision, "recall": score.recall,
              "precision_defined": score.precision_defined, "cases": score.n_cases}
    fmt.write_json(result, out / "score.json")
    return result


def _stage_sentences(ctx: Context, out: Path) -> dict:
    cfg = ctx.cfg.sentences
    emb = _load_embeddings(ctx)
    vocab, _ = _load_corpus(ctx)
    basis, codes = _load_model(ctx)
    lex = _load_lexicon(ctx, emb)
    stop = stopwords_from_counts(vocab.words, cfg.stopwords)
    spath = resolve_input(ctx.cfg, "sentences")
    sentences = read_documents(read_lines(spath)) if spath is not None else []
    words = list(cfg.words)
    if not words:
        ranked = sorted((w for w in codes.words if w not in stop),
                        key=lambda w: (-len(codes.entries(w)), vocab.get(w)))
        words = ranked[:cfg.auto_words]
    records, groups = [], []
    for w in words:
        try:
            hits = top_sentences(w, sentences, basis, codes, emb, lex, stop, cfg.top)
        except (NoSentenceError, LookupError) as exc:
            log.warning("sentences for %s: %s", w, exc)
            hits = []
        for h in hits:
            records.append({"word": w, "sentence": " ".join(h.sentence), "rel": h.rel,
                            "atoms": list(h.atoms), "best_atom": h.best_atom})
        for a, _ in (codes.entries(w) if w in codes else []):
            try:
                g = word_group(a, w, emb, basis)
            except UngrowableGroupError as exc:
                log.warning("group for %s/%d: %s", w, a, exc)
                continue
            groups.append(g)
    fmt.write_jsonl(records, out / "sentences.jsonl")
    with open(out / "groups.tsv", "w", encoding="utf-8") as fh:
        fh.write("word\tatom\ttau\td\tmembers\n")
        for g in groups:
            fh.write(f"{g.seed_word}\tatom_{g.seed_atom:04d}\t{g.tau_used:.6g}\t{g.d_used:.6g}\t"
                     f"{','.join(g.members)}\n")
    return {"words": words, "sentences": len(records), "groups": len(groups)}


@dataclass(frozen=True)
class Stage:
    name: str
    run: Callable[[Context, Path], dict]
    section: str | None
    upstream: tuple[str, ...]
    inputs: tuple[str, ...] = ()
    enabled: Callable[[PipelineConfig], bool] = lambda cfg: True


STAGES = (
    Stage("corpus", _stage_corpus, "corpus", (), ("corpus",)),
    Stage("embed", _stage_embed, "embed", ("corpus",)),
    Stage("sparse", _stage_sparse, "sparse", ("embed",)),
    Stage("meta", _stage_meta, "meta", ("sparse",), (), lambda c: c.meta.enabled),
    Stage("theory_synth", _stage_theory_synth, "theory", (), (), lambda c: c.theory.enabled),
    Stage("theory_real", _stage_theory_real, "theory", ("embed",), ("topics", "lexicon"),
          lambda c: c.theory.enabled and c.theory.pairs > 0),
    Stage("lineup", _stage_lineup, "lineup", ("sparse",), ("lexicon",), lambda c: c.lineup.enabled),
    Stage("sentences", _stage_sentences, "sentences", ("sparse",), ("sentences", "lexicon"),
          lambda c: c.sentences.enabled),
)


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        import contextlib
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def run_pipeline(cfg: PipelineConfig, workdir: Path | None = None,
                 force: bool = False) -> dict:
    """Run every enabled stage, reusing cached outputs; returns the manifest."""
    workdir = Path(workdir) if workdir is not None else resolve_workdir(cfg)
    workdir.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, workdir)
    records: list[StageRecord] = []
    with _limit_threads(cfg.run.threads):
        for stage in STAGES:
            if not stage.enabled(cfg):
                continue
            key = _digest({
                "stage": stage.name,
                "version": __version__,
                "config": cfg.section(stage.section) if stage.section else None,
                "upstream": {u: ctx.keys[u] for u in stage.upstream},
                "inputs": {i: _file_digest(resolve_input(cfg, i)) for i in stage.inputs},
            })
            ctx.keys[stage.name] = key
            sdir = ctx.stage_dir(stage.name)
            cached = None if force else _cached(sdir, key)
            if cached is not None:
                log.info("stage %s: cache hit", stage.name)
                records.append(StageRecord(stage.name, key, True, 0.0, cached["artifacts"],
                                           cached.get("summary", {})))
                continue
            sdir.mkdir(parents=True, exist_ok=True)
            for old in sdir.iterdir():
                if old.is_file():
                    old.unlink()
            t0 = time.perf_counter()
            log.info("stage %s: running", stage.name)
            try:
                summary = stage.run(ctx, sdir)
            except Exception as exc:
                raise StageError(stage.name, exc) from exc
            seconds = time.perf_counter() - t0
            artifacts = {p.name: fmt.sha256_file(p) for p in sorted(sdir.iterdir())
                         if p.is_file() and p.name != "stage.json"}
            rec = StageRecord(stage.name, key, False, seconds, artifacts, _jsonable(summary))
            _write_stage_record(sdir, rec)
            records.append(rec)
            log.info("stage %s: done in %.1fs", stage.name, seconds)
    manifest = {
        "version": __version__,
        "config_hash": cfg.hash(),
        "workdir": str(workdir),
        "stages": [dataclasses.asdict(r) for r in records],
    }
    fmt.write_json(manifest, workdir / "manifest.json")
    return manifest


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and obj != obj:
        return None
    return obj
