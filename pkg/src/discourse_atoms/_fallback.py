"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Signatures and results match the compiled module; used when the extension is
not built or when ``ATOMS_BACKEND=python`` is set.
"""

import math

import numpy as np


def count_window_pairs(ids, doc, window, n_words):
    ids = np.asarray(ids, dtype=np.int64)
    doc = np.asarray(doc, dtype=np.int64)
    chunks = []
    for off in range(1, window + 1):
        if off >= len(ids):
            break
        a, b = ids[:-off], ids[off:]
        keep = (a >= 0) & (b >= 0) & (doc[:-off] == doc[off:])
        lo = np.minimum(a[keep], b[keep])
        hi = np.maximum(a[keep], b[keep])
        chunks.append(lo * n_words + hi)
    if not chunks:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    keys, counts = np.unique(np.concatenate(chunks), return_counts=True)
    return keys.astype(np.int64), counts.astype(np.float64)


def sn_adagrad_epoch(vectors, accum, bias_state, rows, cols, log_x, weight,
                     order, lr, eps):
    c, gc = float(bias_state[0]), float(bias_state[1])
    d = vectors.shape[1]
    total = 0.0
    for k in order:
        i, j = int(rows[k]), int(cols[k])
        vi, vj = vectors[i], vectors[j]
        s = [vi[q] + vj[q] for q in range(d)]
        norm2 = 0.0
        for x in s:
            norm2 += x * x
        res = norm2 + c - log_x[k]
        total += weight[k] * res * res
        g = 2.0 * weight[k] * res
        scale = 4.0 * g if i == j else 2.0 * g
        rows_to_update = (i,) if i == j else (i, j)
        for q in range(d):
            gk = scale * s[q]
            for r in rows_to_update:
                accum[r, q] += gk * gk
                vectors[r, q] -= lr * gk / math.sqrt(accum[r, q] + eps)
        gc += g * g
        c -= lr * g / math.sqrt(gc + eps)
    bias_state[0] = c
    bias_state[1] = gc
    return total
