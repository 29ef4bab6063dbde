"""NumPy implementations of the hot kernels.

These are the reference semantics for ``_ckernels``; both modules expose the
same three functions and must agree draw-for-draw on identical inputs.
"""

import numpy as np

_CHUNK = 4096


def nearest_code(patches, codes):
    """Index of the closest code (squared Euclidean) for every patch row.

    Ties resolve to the smallest code index.
    """
    patches = np.ascontiguousarray(patches, dtype=np.float64)
    codes = np.ascontiguousarray(codes, dtype=np.float64)
    out = np.empty(patches.shape[0], dtype=np.int64)
    for start in range(0, patches.shape[0], _CHUNK):
        block = patches[start:start + _CHUNK]
        diff = block[:, None, :] - codes[None, :, :]
        dist = (diff * diff).sum(axis=2)
        out[start:start + _CHUNK] = np.argmin(dist, axis=1)
    return out


def _keep_mask(logits, k):
    n = logits.shape[1]
    if k >= n:
        return np.ones(logits.shape, dtype=bool)
    thr = -np.partition(-logits, k - 1, axis=1)[:, k - 1]
    gt = logits > thr[:, None]
    eq = logits == thr[:, None]
    need = k - gt.sum(axis=1)
    return gt | (eq & (np.cumsum(eq, axis=1) <= need[:, None]))


def sample_rows(logits, u, k):
    """Draw one column index per row of ``logits``.

    Only the ``k`` largest entries of a row (ties by lower index) are eligible.
    Weights are ``exp(logit - rowmax)``; the draw is the first index whose
    running weight sum exceeds ``u * total``, scanning in index order.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    keep = _keep_mask(logits, k)
    masked = np.where(keep, logits, -np.inf)
    top = masked.max(axis=1)
    w = np.exp(masked - top[:, None])
    cs = np.cumsum(w, axis=1)
    target = u * cs[:, -1]
    idx = (cs <= target[:, None]).sum(axis=1)
    overflow = idx >= logits.shape[1]
    if overflow.any():
        last = logits.shape[1] - 1 - np.argmax(keep[:, ::-1], axis=1)
        idx = np.where(overflow, last, idx)
    return idx.astype(np.int64)


def top_indices(values, count):
    """Indices of the ``count`` largest values, best first, ties by lower index."""
    values = np.ascontiguousarray(values, dtype=np.float64).ravel()
    n = values.shape[0]
    count = min(int(count), n)
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    if count < n:
        idx = np.flatnonzero(_keep_mask(values[None, :], count)[0])
    else:
        idx = np.arange(n)
    order = np.argsort(-values[idx], kind="stable")
    return idx[order].astype(np.int64)
