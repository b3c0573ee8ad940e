"""``atoms`` command line.

Every file argument defaults to the matching artifact inside the workdir
(``--workdir``, else ``$ATOMS_WORKDIR``, else ``./atoms_work``), laid out the
way ``atoms run`` writes it. Exit status: 0 ok, 2 bad input, 1 failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import formats as fmt

log = logging.getLogger("discourse_atoms")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2

# default artifact locations, relative to the workdir
DEFAULTS = {
    "vocab": "corpus/vocab.tsv",
    "cooc": "corpus/cooc.bin",
    "embeddings": "embed/embeddings.txt",
    "basis": "sparse/basis.txt",
    "codes": "sparse/codes.tsv",
    "meta_dir": "meta",
    "theory_synth": "theory_synth",
    "theory_real": "theory_real",
    "testbed": "lineup/testbed.jsonl",
    "predictions": "lineup/predictions.jsonl",
}


class UsageError(ValueError):
    pass


def _workdir(args) -> Path:
    return Path(args.workdir or os.environ.get("ATOMS_WORKDIR") or "atoms_work")


def _path(args, attr: str, key: str | None = None) -> Path:
    value = getattr(args, attr, None)
    if value:
        return Path(value)
    return _workdir(args) / DEFAULTS[key or attr]


def _out(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _toy_or(value: str | None, key: str) -> Path | None:
    from .toycorpus import bundled_paths
    if value in (None, "@toy"):
        return bundled_paths()[key]
    return None if value == "" else Path(value)


def _load_store(args):
    vocab = fmt.read_vocab(_path(args, "vocab"))
    store = fmt.read_cooc(_path(args, "cooc"), len(vocab), getattr(args, "window", 0) or 0)
    return vocab, store


def _lexicon(args, known):
    from .senses import InflectionLexicon
    path = _toy_or(getattr(args, "lexicon", None), "lexicon")
    return fmt.read_lexicon(path).restrict(known) if path else InflectionLexicon()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


# --- corpus ---------------------------------------------------------------

def cmd_corpus_vocab(args):
    from .corpus import build_vocabulary, read_documents
    from .toycorpus import read_lines
    docs = read_documents(read_lines(_toy_or(args.corpus, "corpus")))
    vocab = build_vocabulary(docs, args.min_count)
    fmt.write_vocab(vocab, _out(_path(args, "out", "vocab")))
    _emit({"words": len(vocab), "tokens": vocab.total})


def cmd_corpus_cooc(args):
    from .corpus import count_cooccurrences, read_documents
    from .toycorpus import read_lines
    vocab = fmt.read_vocab(_path(args, "vocab"))
    docs = read_documents(read_lines(_toy_or(args.corpus, "corpus")))
    store = count_cooccurrences(docs, vocab, args.window)
    out = _out(_path(args, "out", "cooc"))
    if args.text:
        fmt.write_cooc_text(store, out)
    else:
        fmt.write_cooc_binary(store, out)
    _emit({"pairs": store.nnz, "total_pairs": store.total_pairs})


def cmd_corpus_merge(args):
    from .corpus import MergeSpec, merge_words
    parts = args.pair.split(",")
    if len(parts) != 2 or not all(parts):
        raise UsageError("--pair must look like a,b")
    vocab, store = _load_store(args)
    spec = MergeSpec.for_pair(vocab, *parts)
    merged, mvocab = merge_words(store, vocab, spec)
    out_dir = Path(args.out_dir) if args.out_dir else _workdir(args) / "merged"
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt.write_vocab(mvocab, out_dir / "vocab.tsv")
    fmt.write_cooc_binary(merged, out_dir / "cooc.bin")
    _emit({"token": spec.merged_token, "ratio_r": spec.ratio_r, "out": str(out_dir)})


# --- embed ----------------------------------------------------------------

def cmd_embed_train(args):
    from .embed import TrainConfig, train_sn
    vocab, store = _load_store(args)
    cfg = TrainConfig(dim=args.dim, epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    emb = train_sn(store, vocab, cfg)
    fmt.write_embeddings(emb, _out(_path(args, "out", "embeddings")))
    _emit({"words": len(emb), "dim": emb.dim, "final_loss": emb.loss_history[-1]})


def cmd_embed_refit(args):
    from .embed import fit_pmi
    vocab, store = _load_store(args)
    fixed = fmt.read_embeddings(_path(args, "embeddings"))
    vec = fit_pmi(store, vocab, fixed, args.word)
    print(args.word + " " + " ".join("%.17g" % x for x in vec))


# --- sparse ---------------------------------------------------------------

def cmd_sparse_learn(args):
    from .sparse_coding import encode, ksvd, stabilize_basis
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    runs = [ksvd(emb, args.m, args.k, args.iters, seed=args.seed + i) for i in range(args.runs)]
    basis = stabilize_basis([r.basis for r in runs]) if args.runs > 1 else runs[0].basis
    codes = encode(emb, basis, args.k)
    fmt.write_basis(basis, _out(_path(args, "out", "basis")))
    fmt.write_codes(codes, _out(_path(args, "codes_out", "codes")))
    _emit({"atoms": basis.m, "run_final_errors": [r.errors[-1] for r in runs]})


def cmd_sparse_encode(args):
    from .sparse_coding import encode
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    basis = fmt.read_basis(_path(args, "basis"))
    floor, vocab = None, None
    if args.floor == "rank":
        floor, vocab = "rank", fmt.read_vocab(_path(args, "vocab"))
    elif args.floor is not None:
        floor = float(args.floor)
    codes = encode(emb, basis, args.k, floor, vocab=vocab)
    fmt.write_codes(codes, _out(_path(args, "out", "codes")))
    _emit({"words": len(codes), "mean_atoms_per_word": float(codes.nnz_per_word().mean())})


def cmd_sparse_filter(args):
    from .sparse_coding import encode, filter_atoms
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    basis = fmt.read_basis(_path(args, "basis"))
    codes = fmt.read_codes(_path(args, "codes"))
    kept, removed = filter_atoms(basis, codes, args.top)
    fmt.write_basis(kept, _out(_path(args, "out", "basis")))
    recoded = encode(emb, kept, int(codes.k))
    fmt.write_codes(recoded, _out(_path(args, "codes_out", "codes")))
    _emit({"removed": removed, "atoms": kept.m})


# --- atoms ----------------------------------------------------------------

def cmd_inspect(args):
    from .atoms import nearest_words
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    basis = fmt.read_basis(_path(args, "basis"))
    codes_path = _path(args, "codes")
    codes = fmt.read_codes(codes_path) if codes_path.exists() else None
    if args.word is not None:
        if codes is None or args.word not in codes:
            raise UsageError(f"{args.word!r} has no code")
        atoms = [a for a, _ in codes.entries(args.word)]
    else:
        atoms = [args.atom] if args.atom is not None else list(range(basis.m))
    for a in atoms:
        rep = nearest_words(basis, emb, a, args.top, codes)
        words = " ".join(f"{w}({c:.2f})" for w, c in rep.nearest_words)
        print(f"atom_{a:04d}\tusage={rep.usage_count}\t{words}")


def cmd_meta(args):
    from .atoms import build_meta, meta_to_dot
    basis = fmt.read_basis(_path(args, "basis"))
    meta = build_meta(basis, args.m2, args.k2, args.iters, args.seed)
    out_dir = Path(args.out_dir) if args.out_dir else _path(args, "out_dir", "meta_dir")
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt.write_basis(meta.meta, out_dir / "meta_basis.txt")
    fmt.write_codes(meta.atom_codes, out_dir / "meta_codes.tsv")
    (out_dir / "meta.dot").write_text(meta_to_dot(meta, args.threshold), encoding="utf-8")
    _emit({"meta_atoms": meta.meta.m, "edges": len(meta.edges(args.threshold))})


# --- theory ---------------------------------------------------------------

def _write_report(report, out_dir: Path, extra=None):
    from .merge_theory import write_report_csv, write_scatter_svg, write_summary_json
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / "report.csv")
    write_summary_json(report, out_dir / "summary.json", extra=extra)
    write_scatter_svg(report, out_dir / "scatter.svg")


def cmd_theory_synth(args):
    from .merge_theory import run_synthetic_batch
    if args.r_min < 1 or args.r_max < args.r_min:
        raise UsageError("need 1 <= --r-min <= --r-max")
    batch = run_synthetic_batch(args.worlds, args.d, args.contexts, (args.r_min, args.r_max),
                                args.seed)
    out_dir = Path(args.out_dir) if args.out_dir else _workdir(args) / DEFAULTS["theory_synth"]
    summary = batch.summary()
    _write_report(batch.report, out_dir, extra={k: v for k, v in summary.items() if k != "seconds"})
    _emit(summary)


def _read_pairs(path: Path) -> list[tuple[str, str]]:
    pairs = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.replace(",", "\t").split()
        if not parts:
            continue
        if len(parts) != 2:
            raise fmt.FormatError(f"{path}:{n}: expected two words")
        pairs.append((parts[0], parts[1]))
    return pairs


def cmd_theory_real(args):
    from .merge_theory import run_real_pairs, sample_unrelated_pairs
    vocab, store = _load_store(args)
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    if args.pairs:
        pairs = _read_pairs(Path(args.pairs))
    else:
        topics_path = _toy_or(args.topics, "topics")
        topics = json.loads(topics_path.read_text())["topics"] if topics_path else None
        lex = _lexicon(args, vocab)
        pairs = sample_unrelated_pairs(vocab, args.n_pairs, args.seed, topics=topics,
                                       lexicon={b: list(f) for b, f in lex.forms.items()})
    report = run_real_pairs(store, vocab, emb, pairs)
    out_dir = Path(args.out_dir) if args.out_dir else _workdir(args) / DEFAULTS["theory_real"]
    _write_report(report, out_dir)
    _emit(report.summary())


# --- senses ---------------------------------------------------------------

def cmd_lineup_run(args):
    from .senses import lineup, read_testbed, synthetic_testbed, write_testbed
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    basis = fmt.read_basis(_path(args, "basis"))
    codes = fmt.read_codes(_path(args, "codes"))
    lex = _lexicon(args, emb)
    testbed = _path(args, "testbed")
    if args.generate or not testbed.exists():
        cases = synthetic_testbed(basis, codes, emb, lex, args.targets, args.m, 4, args.seed)
        write_testbed(cases, _out(testbed))
    else:
        cases = read_testbed(testbed, known=emb)
    bad = [c.target for c in cases if c.m != args.m]
    if bad:
        raise UsageError(f"{len(bad)} lineups do not have --m {args.m} candidates "
                         f"(first: {bad[0]!r})")
    out = _out(_path(args, "out", "predictions"))
    fmt.write_jsonl(({"target": c.target, "selected": lineup(c, basis, codes, emb, lex, args.k)}
                     for c in cases), out)
    _emit({"cases": len(cases), "predictions": str(out)})


def cmd_lineup_score(args):
    from .senses import precision_recall, read_testbed
    cases = read_testbed(_path(args, "testbed"))
    preds = {r["target"]: r["selected"] for r in fmt.read_jsonl(_path(args, "predictions"))}
    missing = [c.target for c in cases if c.target not in preds]
    if missing:
        raise UsageError(f"no prediction for {missing[0]!r}")
    score = precision_recall(cases, [preds[c.target] for c in cases])
    _emit(dataclasses.asdict(score))


def _sentence_inputs(args):
    from .sentences import stopwords_from_counts
    emb = fmt.read_embeddings(_path(args, "embeddings"))
    basis = fmt.read_basis(_path(args, "basis"))
    codes = fmt.read_codes(_path(args, "codes"))
    vocab = fmt.read_vocab(_path(args, "vocab"))
    return emb, basis, codes, _lexicon(args, emb), stopwords_from_counts(vocab.words, args.stopwords)


def cmd_sentences(args):
    from .corpus import read_documents
    from .sentences import top_sentences
    from .toycorpus import read_lines
    emb, basis, codes, lex, stop = _sentence_inputs(args)
    sents = read_documents(read_lines(_toy_or(args.sentences, "sentences")))
    hits = top_sentences(args.word, sents, basis, codes, emb, lex, stop, args.top)
    for h in hits:
        atoms = ",".join(f"atom_{a:04d}" for a in h.atoms)
        print(f"{h.rel:.4f}\t{atoms}\t{' '.join(h.sentence)}")


def cmd_groups(args):
    from .sentences import UngrowableGroupError, word_group
    emb, basis, codes, _, _ = _sentence_inputs(args)
    if args.word not in codes:
        raise UsageError(f"{args.word!r} has no code")
    atoms = [args.atom] if args.atom is not None else [a for a, _ in codes.entries(args.word)]
    for a in atoms:
        try:
            g = word_group(a, args.word, emb, basis)
        except UngrowableGroupError as exc:
            log.warning("%s", exc)
            continue
        print(f"atom_{a:04d}\ttau={g.tau_used:.3f}\td={g.d_used:.3f}\t{' '.join(g.members)}")


# --- pipeline -------------------------------------------------------------

def cmd_run(args):
    from .pipeline import bundled_config, load_config, run_pipeline
    cfg_path = Path(args.config) if args.config != "@toy" else bundled_config("toy")
    cfg = load_config(cfg_path)
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = cfg.replace(run=dataclasses.replace(cfg.run, threads=args.threads))
    from .pipeline import resolve_workdir
    manifest = run_pipeline(cfg, resolve_workdir(cfg, args.workdir), force=args.force)
    for st in manifest["stages"]:
        state = "cached" if st["cache_hit"] else f"{st['seconds']:.1f}s"
        print(f"{st['name']:<13} {state}")
    print(f"manifest: {Path(manifest['workdir']) / 'manifest.json'}")


# --- parser ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser, *files: str) -> None:
    for name in files:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None,
                       help=f"default: <workdir>/{DEFAULTS[name]}" if name in DEFAULTS else None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atoms", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--workdir", default=None)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="vocabulary and co-occurrence counts")
    csub = corpus.add_subparsers(dest="action", required=True)
    p = csub.add_parser("vocab")
    p.add_argument("--corpus", default="@toy", help="text file (one document per line) or @toy")
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_corpus_vocab)
    p = csub.add_parser("cooc")
    p.add_argument("--corpus", default="@toy")
    _common(p, "vocab")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--text", action="store_true", help="write text triplets instead of binary")
    p.add_argument("--out")
    p.set_defaults(func=cmd_corpus_cooc)
    p = csub.add_parser("merge")
    p.add_argument("--pair", required=True, help="a,b")
    _common(p, "vocab", "cooc")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_corpus_merge)

    embed = sub.add_parser("embed", help="train or refit word vectors")
    esub = embed.add_subparsers(dest="action", required=True)
    p = esub.add_parser("train")
    _common(p, "vocab", "cooc")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed_train)
    p = esub.add_parser("refit")
    _common(p, "vocab", "cooc", "embeddings")
    p.add_argument("--word", required=True)
    p.set_defaults(func=cmd_embed_refit)

    sparse = sub.add_parser("sparse", help="learn atoms and sparse codes")
    ssub = sparse.add_subparsers(dest="action", required=True)
    p = ssub.add_parser("learn")
    _common(p, "embeddings")
    p.add_argument("--m", type=int, default=60)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--codes-out")
    p.set_defaults(func=cmd_sparse_learn)
    p = ssub.add_parser("encode")
    _common(p, "embeddings", "basis", "vocab")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--floor", default=None, help="'rank' or a number")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sparse_encode)
    p = ssub.add_parser("filter")
    _common(p, "embeddings", "basis", "codes")
    p.add_argument("--top", type=int, default=25, help="drop this many most-used atoms")
    p.add_argument("--out")
    p.add_argument("--codes-out")
    p.set_defaults(func=cmd_sparse_filter)

    p = sub.add_parser("inspect", help="nearest words of atoms")
    _common(p, "embeddings", "basis", "codes")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--atom", type=int)
    g.add_argument("--word")
    p.add_argument("--top", type=int, default=9)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("meta", help="atoms over atoms")
    _common(p, "basis")
    p.add_argument("--m2", type=int, default=10)
    p.add_argument("--k2", type=int, default=2)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_meta)

    theory = sub.add_parser("theory", help="merged-word experiments")
    tsub = theory.add_subparsers(dest="action", required=True)
    p = tsub.add_parser("synth")
    p.add_argument("--worlds", type=int, default=200)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--contexts", type=int, default=300)
    p.add_argument("--r-min", type=float, default=1.0)
    p.add_argument("--r-max", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_theory_synth)
    p = tsub.add_parser("real")
    _common(p, "vocab", "cooc", "embeddings")
    p.add_argument("--pairs", help="file of word pairs; sampled when omitted")
    p.add_argument("--n-pairs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topics", default="@toy")
    p.add_argument("--lexicon", default="@toy")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_theory_real)

    lineup = sub.add_parser("lineup", help="sense lineup test")
    lsub = lineup.add_subparsers(dest="action", required=True)
    p = lsub.add_parser("run")
    _common(p, "embeddings", "basis", "codes", "testbed")
    p.add_argument("--lexicon", default="@toy")
    p.add_argument("--m", type=int, default=20, help="candidates per lineup")
    p.add_argument("--k", type=int, default=4, help="senses to select")
    p.add_argument("--targets", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generate", action="store_true", help="write a fresh synthetic testbed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lineup_run)
    p = lsub.add_parser("score")
    _common(p, "testbed", "predictions")
    p.set_defaults(func=cmd_lineup_score)

    for name, func in (("sentences", cmd_sentences), ("groups", cmd_groups)):
        p = sub.add_parser(name)
        _common(p, "embeddings", "basis", "codes", "vocab")
        p.add_argument("--word", required=True)
        p.add_argument("--lexicon", default="@toy")
        p.add_argument("--stopwords", type=int, default=100)
        if name == "sentences":
            p.add_argument("--sentences", default="@toy")
            p.add_argument("--top", type=int, default=7)
        else:
            p.add_argument("--atom", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True, help="TOML file, or @toy for the bundled one")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--force", action="store_true", help="ignore cached stages")
    p.add_argument("--workdir", dest="workdir", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage already; keep 0 for --help/--version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    from .pipeline import StageError
    try:
        args.func(args)
    except StageError as exc:
        print(f"atoms: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.cause, (ValueError, FileNotFoundError)) else EXIT_RUNTIME
    except (ValueError, FileNotFoundError, LookupError) as exc:
        print(f"atoms: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"atoms: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
