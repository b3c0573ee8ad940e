"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py --docs 300 --dim 50 --repeat 3

Both backends run on the same slice of the bundled toy corpus; the script
also checks that they agree before reporting timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from discourse_atoms.corpus import build_vocabulary, count_cooccurrences, read_documents
from discourse_atoms.embed import TrainConfig, train_sn
from discourse_atoms.toycorpus import bundled_paths, read_lines


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=300, help="documents from the toy corpus")
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    docs = read_documents(read_lines(bundled_paths()["corpus"]))[: args.docs]
    vocab = build_vocabulary(docs, 2)
    print(f"{len(docs)} documents, {sum(map(len, docs))} tokens, {len(vocab)} words")

    rows = []
    stores = {}
    for backend in ("cython", "python"):
        secs, store = best_of(lambda: count_cooccurrences(docs, vocab, args.window, backend=backend),
                              args.repeat)
        stores[backend] = store
        rows.append(("count_window_pairs", backend, secs))
    a, b = stores["cython"], stores["python"]
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.counts, b.counts)
    store = a
    print(f"{store.nnz} distinct pairs")

    vecs = {}
    for backend in ("cython", "python"):
        cfg = TrainConfig(dim=args.dim, epochs=1, seed=0, backend=backend)
        secs, emb = best_of(lambda: train_sn(store, vocab, cfg), 1 if backend == "python" else args.repeat)
        vecs[backend] = emb.vectors
        rows.append(("sn_adagrad_epoch", backend, secs))
    np.testing.assert_allclose(vecs["cython"], vecs["python"], rtol=1e-9, atol=1e-12)

    print(f"\n{'kernel':<20} {'backend':<8} {'seconds':>10} {'speedup':>8}")
    for i in range(0, len(rows), 2):
        (name, _, fast), (_, _, slow) = rows[i], rows[i + 1]
        print(f"{name:<20} {'cython':<8} {fast:>10.4f} {slow / fast:>7.1f}x")
        print(f"{name:<20} {'python':<8} {slow:>10.4f}")


if __name__ == "__main__":
    main()
