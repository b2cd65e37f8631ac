"""Pure numpy implementations of the retrieval/consistency kernels.

Must stay result-identical to ``_kernels.pyx``; the test suite runs both.
"""

import numpy as np


def topk_rows(sims, ids, k):
    """Column indices of the top-k entries per row of ``sims``.

    Order is similarity descending, then item id ascending. Excluded columns
    are expected to hold ``-inf``; the caller guarantees k eligible columns.
    """
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    n_rows, n_cols = sims.shape
    out = np.empty((n_rows, k), dtype=np.int64)
    if k == 0:
        return out
    for r in range(n_rows):
        row = sims[r]
        if k < n_cols:
            kth = np.partition(row, n_cols - k)[n_cols - k]
            cand = np.flatnonzero(row >= kth)
        else:
            cand = np.arange(n_cols)
        order = np.lexsort((ids[cand], -row[cand]))
        out[r] = cand[order[:k]]
    return out


def membership_counts(ids):
    """For support ids shaped (Q, N, K): how many other experts hold each item."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    eq = ids[:, :, :, None, None] == ids[:, None, None, :, :]
    present = eq.any(axis=-1)  # (Q, N, K, N)
    return present.sum(axis=-1).astype(np.int64) - 1


def common_counts(ids):
    """Size of the intersection of all N support-id sets, per query."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    n = ids.shape[1]
    return (membership_counts(ids)[:, 0, :] == n - 1).sum(axis=-1).astype(np.int64)
