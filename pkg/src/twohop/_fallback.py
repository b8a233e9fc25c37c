"""Pure-numpy versions of the hot loops; same signatures as ``_kernels``."""
from __future__ import annotations

import numpy as np

_CHUNK_CELLS = 1 << 22


def scatter_rows(labels, values, n_labels):
    """``out[labels[i]] += values[i]`` for a 2-D ``values``."""
    labels = np.asarray(labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n_labels, values.shape[1]))
    np.add.at(out, labels, values)
    return out


def pair_scores(codebook, lut, n):
    """``out[i, j] = sum_k lut[codebook[i, k], digit_k(j)]`` over all ``j < B**n``."""
    codebook = np.asarray(codebook, dtype=np.int64)
    lut = np.asarray(lut, dtype=np.float64)
    out = lut[codebook[:, 0]]
    for k in range(1, n):
        out = (out[:, :, None] + lut[codebook[:, k]][:, None, :]).reshape(codebook.shape[0], -1)
    return np.ascontiguousarray(out)


def best_codeword(codebook, lut, n):
    """For every sequence, the first codeword index attaining the maximal score."""
    codebook = np.asarray(codebook, dtype=np.int64)
    lut = np.asarray(lut, dtype=np.float64)
    n_seq = lut.shape[1] ** n
    best = np.full(n_seq, -np.inf)
    arg = np.zeros(n_seq, dtype=np.int64)
    step = max(1, _CHUNK_CELLS // max(n_seq, 1))
    for start in range(0, codebook.shape[0], step):
        sc = pair_scores(codebook[start:start + step], lut, n)
        loc = np.argmax(sc, axis=0)
        val = sc[loc, np.arange(n_seq)]
        upd = val > best
        best[upd] = val[upd]
        arg[upd] = loc[upd] + start
    return arg, best
