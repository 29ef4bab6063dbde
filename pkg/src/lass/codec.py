"""Patch codebook: quantizes 1-D signals into token sequences and back.

A signal of length ``N`` is cut into ``S = N / P`` consecutive patches of
``P`` samples. Each patch maps to the index of its nearest code vector, and
decoding concatenates code vectors. This plays the role of the encoder,
bottleneck and decoder of a vector-quantized autoencoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ModelFileError, ValidationError

KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class Codebook:
    """Ordered set of ``K`` code vectors of length ``P``."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] < 1 or codes.shape[1] < 1:
            raise ValidationError(f"codes must be a non-empty K x P array, got shape {codes.shape}")
        if not np.all(np.isfinite(codes)):
            raise ValidationError("codes must be finite")
        if len(np.unique(codes, axis=0)) != codes.shape[0]:
            raise ValidationError("codes must be pairwise distinct")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def k(self) -> int:
        return self.codes.shape[0]

    @property
    def p(self) -> int:
        return self.codes.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.codes.shape == other.codes.shape and bool(np.array_equal(self.codes, other.codes))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"k": self.k, "p": self.p, "codes": self.codes.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Codebook":
        try:
            k, p, codes = int(data["k"]), int(data["p"]), data["codes"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"malformed codebook: {exc}") from exc
        try:
            book = cls(np.asarray(codes, dtype=np.float64))
        except (ValueError, ValidationError) as exc:
            raise ModelFileError(f"malformed codebook: {exc}") from exc
        if book.k != k or book.p != p:
            raise ModelFileError(f"codebook header k={k}, p={p} disagrees with codes {book.codes.shape}")
        return book

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Codebook":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelFileError(f"cannot read codebook {path}: {exc}") from exc
        return cls.from_dict(data)


def as_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("a signal must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise ValidationError("signal samples must be finite")
    return x


def to_patches(x, p: int) -> np.ndarray:
    """View a signal as an ``(N / p, p)`` array of consecutive patches."""
    x = as_signal(x)
    if x.size % p:
        raise ValidationError(f"signal length {x.size} is not divisible by patch length {p}")
    return x.reshape(-1, p)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then proportional to squared distance."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValidationError("not enough distinct patches for k-means++ seeding")
        j = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        j = min(j, n - 1)
        centers[i] = points[j]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def lloyd(points: np.ndarray, centers: np.ndarray, tol: float = KMEANS_TOL,
          max_iter: int = KMEANS_MAX_ITER) -> np.ndarray:
    """Lloyd iterations until the largest centroid shift drops below ``tol``.

    A cluster that loses all its points keeps its previous centroid.
    """
    centers = np.array(centers, dtype=np.float64)
    k, p = centers.shape
    for _ in range(max_iter):
        labels = _kernels.nearest_code(points, centers)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros((k, p))
        for j in range(p):
            sums[:, j] = np.bincount(labels, weights=points[:, j], minlength=k)
        new = centers.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    return centers


def fit_codebook(corpus, k: int, p: int, seed: int) -> Codebook:
    """Learn ``k`` codes of length ``p`` by k-means over every patch in ``corpus``.

    Codes are returned in lexicographic order so the result depends only on
    the learned centroid set.
    """
    if k < 2:
        raise ValidationError("k must be at least 2")
    if p < 1:
        raise ValidationError("p must be at least 1")
    signals = list(corpus)
    if not signals:
        raise ValidationError("empty corpus")
    points = np.concatenate([to_patches(x, p) for x in signals])
    if len(np.unique(points, axis=0)) < k:
        raise ValidationError(f"corpus has fewer than k={k} distinct patches")
    rng = np.random.default_rng(seed)
    centers = lloyd(points, kmeans_pp_init(points, k, rng))
    order = np.lexsort(centers.T[::-1])
    return Codebook(centers[order])


def encode(codec: Codebook, x) -> np.ndarray:
    """Token sequence of nearest codes, one token per patch."""
    return _kernels.nearest_code(to_patches(x, codec.p), codec.codes)


def check_tokens(z, k: int) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim != 1 or z.size == 0:
        raise ValidationError("a token sequence must be a non-empty 1-D sequence")
    if not np.issubdtype(z.dtype, np.integer):
        if not np.all(np.mod(z, 1) == 0):
            raise ValidationError("tokens must be integers")
    z = z.astype(np.int64)
    if z.min() < 0 or z.max() >= k:
        raise ValidationError(f"token out of range [0, {k})")
    return z


def decode(codec: Codebook, z) -> np.ndarray:
    """Concatenation of the code vectors named by ``z``."""
    z = check_tokens(z, codec.k)
    return codec.codes[z].reshape(-1).copy()


def embed(codec: Codebook, z) -> np.ndarray:
    """Dense ``(S, P)`` embedding whose rows are the codes of ``z``."""
    z = check_tokens(z, codec.k)
    return codec.codes[z].copy()


def decode_dense(codec: Codebook, e) -> np.ndarray:
    """Decode continuous embeddings; the decoder is plain concatenation."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] == 0 or e.shape[1] != codec.p:
        raise ValidationError(f"embedding must have shape (S, {codec.p}), got {e.shape}")
    return e.reshape(-1).copy()
