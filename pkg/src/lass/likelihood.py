"""Sparse count tensor over latent triples and its row-normalized likelihood.

``F[a, b, m]`` counts how often source tokens ``a`` and ``b`` at the same
position produced mixture token ``m``. Every observation is recorded in both
orders so ``F`` is symmetric in its first two indices. Normalizing each
``(a, b)`` row gives ``P[a, b, :]``, a distribution over mixture tokens.
Storage is coordinate format with triples sorted lexicographically.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .codec import Codebook, encode
from .errors import ModelFileError, ValidationError

FLOOR_LOGP = math.log(1e-12)


def _keys(coords, k):
    return (coords[:, 0] * k + coords[:, 1]) * k + coords[:, 2]


def _unkey(keys, k):
    return np.stack([keys // (k * k), (keys // k) % k, keys % k], axis=1).astype(np.int64)


class CountTensor:
    """Symmetric sparse rank-3 integer tensor."""

    def __init__(self, k: int, coords=None, counts=None):
        if k < 1:
            raise ValidationError("k must be positive")
        self.k = int(k)
        if coords is None:
            coords = np.empty((0, 3), dtype=np.int64)
            counts = np.empty(0, dtype=np.int64)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        counts = np.asarray(counts, dtype=np.int64).ravel()
        if coords.shape[0] != counts.shape[0]:
            raise ValidationError("coords and counts disagree in length")
        if coords.size and (coords.min() < 0 or coords.max() >= k):
            raise ValidationError(f"triple index out of range [0, {k})")
        if counts.size and counts.min() < 0:
            raise ValidationError("counts must be non-negative")
        # canonicalize: merge duplicates, drop zeros, sort
        keys, inv = np.unique(_keys(coords, self.k), return_inverse=True)
        summed = np.zeros(keys.size, dtype=np.int64)
        np.add.at(summed, inv.ravel(), counts)
        nz = summed != 0
        self.coords = _unkey(keys[nz], self.k)
        self.counts = summed[nz]

    @classmethod
    def from_tokens(cls, k: int, z1, z2, m) -> "CountTensor":
        """Counts from aligned token sequences, each position added in both orders."""
        z1, z2, m = (np.asarray(v, dtype=np.int64).ravel() for v in (z1, z2, m))
        if not (z1.size == z2.size == m.size):
            raise ValidationError("token sequences must have equal length")
        coords = np.concatenate([np.stack([z1, z2, m], 1), np.stack([z2, z1, m], 1)])
        return cls(k, coords, np.ones(coords.shape[0], dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def nnz(self) -> int:
        return int(self.counts.size)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in c): int(n) for c, n in zip(self.coords, self.counts)}

    def get(self, a: int, b: int, m: int) -> int:
        key = (a * self.k + b) * self.k + m
        keys = _keys(self.coords, self.k)
        i = np.searchsorted(keys, key)
        return int(self.counts[i]) if i < keys.size and keys[i] == key else 0

    def dense(self) -> np.ndarray:
        out = np.zeros((self.k,) * 3, dtype=np.int64)
        out[tuple(self.coords.T)] = self.counts
        return out

    def __add__(self, other: "CountTensor") -> "CountTensor":
        if not isinstance(other, CountTensor):
            return NotImplemented
        if other.k != self.k:
            raise ValidationError(f"cannot merge tensors with K={self.k} and K={other.k}")
        return CountTensor(self.k, np.concatenate([self.coords, other.coords]),
                           np.concatenate([self.counts, other.counts]))

    def __eq__(self, other):
        if not isinstance(other, CountTensor):
            return NotImplemented
        return (self.k == other.k and np.array_equal(self.coords, other.coords)
                and np.array_equal(self.counts, other.counts))

    __hash__ = None

    def __repr__(self):
        return f"CountTensor(k={self.k}, nnz={self.nnz}, total={self.total})"

    def to_dict(self) -> dict:
        triples = np.column_stack([self.coords, self.counts]).tolist()
        return {"k": self.k, "triples": triples}

    @classmethod
    def from_dict(cls, data: dict) -> "CountTensor":
        try:
            k = int(data["k"])
            rows = np.asarray(data["triples"], dtype=np.int64).reshape(-1, 4)
            return cls(k, rows[:, :3], rows[:, 3])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"malformed count file: {exc}") from exc


def build_counts(pairs, codec: Codebook) -> CountTensor:
    """Accumulate ``F`` over a stream of ``(x1, x2)`` source pairs."""
    parts = []
    for x1, x2 in pairs:
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        if x1.shape != x2.shape:
            raise ValidationError(f"paired signals differ in length: {x1.shape} vs {x2.shape}")
        y = (x1 + x2) / 2
        z1, z2, m = encode(codec, x1), encode(codec, x2), encode(codec, y)
        parts.append(np.concatenate([np.stack([z1, z2, m], 1), np.stack([z2, z1, m], 1)]))
    if not parts:
        return CountTensor(codec.k)
    coords = np.concatenate(parts)
    return CountTensor(codec.k, coords, np.ones(coords.shape[0], dtype=np.int64))


def density(f: CountTensor) -> float:
    """Percentage of stored (nonzero) triples out of ``K**3``."""
    return 100.0 * f.nnz / float(f.k) ** 3


class LikelihoodModel:
    """Row-normalized likelihood ``P[a, b, m]`` with a log floor for unseen cells."""

    def __init__(self, k: int, coords, probs, floor_logp: float = FLOOR_LOGP):
        self.k = int(k)
        self.coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        self.probs = np.asarray(probs, dtype=np.float64).ravel()
        self.floor_logp = float(floor_logp)
        if self.coords.shape[0] != self.probs.shape[0]:
            raise ValidationError("coords and probs disagree in length")
        if self.coords.size and (self.coords.min() < 0 or self.coords.max() >= self.k):
            raise ValidationError(f"triple index out of range [0, {self.k})")
        order = np.argsort(_keys(self.coords, self.k), kind="stable")
        self.coords, self.probs = self.coords[order], self.probs[order]
        self.logp = np.log(self.probs)
        if self.probs.size and not self.floor_logp < self.logp.min():
            raise ValidationError("floor_logp must lie below every stored log-probability")
        # per-m index for slicing
        by_m = np.argsort(self.coords[:, 2], kind="stable")
        self._by_m = by_m
        self._m_start = np.searchsorted(self.coords[by_m, 2], np.arange(self.k + 1))
        self._slices = {}

    def row(self, a: int, b: int) -> dict:
        """Stored distribution of row ``(a, b)`` as ``{m: prob}``; empty if unseen."""
        sel = (self.coords[:, 0] == a) & (self.coords[:, 1] == b)
        return {int(m): float(p) for m, p in zip(self.coords[sel, 2], self.probs[sel])}

    def rows(self):
        """Yield ``((a, b), {m: prob})`` for every stored row in sorted order."""
        ab = self.coords[:, 0] * self.k + self.coords[:, 1]
        bounds = np.flatnonzero(np.diff(ab)) + 1
        for chunk in np.split(np.arange(ab.size), bounds):
            if chunk.size == 0:
                continue
            a, b = (int(v) for v in self.coords[chunk[0], :2])
            yield (a, b), {int(self.coords[i, 2]): float(self.probs[i]) for i in chunk}

    def logprob(self, a: int, b: int, m: int) -> float:
        return float(self.slice(m)[a, b])

    def slice(self, m: int) -> np.ndarray:
        """``K x K`` matrix of ``log P[:, :, m]`` with unseen cells at the floor."""
        m = int(m)
        if not 0 <= m < self.k:
            raise ValidationError(f"mixture token {m} out of range [0, {self.k})")
        cached = self._slices.get(m)
        if cached is None:
            cached = np.full((self.k, self.k), self.floor_logp)
            idx = self._by_m[self._m_start[m]:self._m_start[m + 1]]
            cached[self.coords[idx, 0], self.coords[idx, 1]] = self.logp[idx]
            cached.setflags(write=False)
            self._slices[m] = cached
        return cached

    def slice_entries(self, m: int):
        """Stored entries of slice ``m`` as ``(a, b, logp)`` arrays."""
        m = int(m)
        if not 0 <= m < self.k:
            raise ValidationError(f"mixture token {m} out of range [0, {self.k})")
        idx = self._by_m[self._m_start[m]:self._m_start[m + 1]]
        return self.coords[idx, 0], self.coords[idx, 1], self.logp[idx]

    def __eq__(self, other):
        if not isinstance(other, LikelihoodModel):
            return NotImplemented
        return (self.k == other.k and self.floor_logp == other.floor_logp
                and np.array_equal(self.coords, other.coords)
                and np.array_equal(self.probs, other.probs))

    __hash__ = None

    def __repr__(self):
        return f"LikelihoodModel(k={self.k}, nnz={self.probs.size})"

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "floor_logp": self.floor_logp,
            "rows": [[a, b, [[m, p] for m, p in dist.items()]] for (a, b), dist in self.rows()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LikelihoodModel":
        try:
            k = int(data["k"])
            floor = float(data["floor_logp"])
            coords, probs = [], []
            for a, b, dist in data["rows"]:
                for m, p in dist:
                    coords.append((int(a), int(b), int(m)))
                    probs.append(float(p))
            return cls(k, np.asarray(coords, dtype=np.int64).reshape(-1, 3), probs, floor)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"malformed likelihood file: {exc}") from exc


def normalize(f: CountTensor, floor_logp: float = FLOOR_LOGP) -> LikelihoodModel:
    """Divide every nonempty ``(a, b)`` row of ``f`` by its sum."""
    if f.nnz == 0:
        return LikelihoodModel(f.k, np.empty((0, 3), dtype=np.int64), [], floor_logp)
    ab = f.coords[:, 0] * f.k + f.coords[:, 1]
    _, inv = np.unique(ab, return_inverse=True)
    sums = np.bincount(inv.ravel(), weights=f.counts.astype(np.float64))
    return LikelihoodModel(f.k, f.coords, f.counts / sums[inv.ravel()], floor_logp)


def slice(p: LikelihoodModel, m: int) -> np.ndarray:  # noqa: A001 - mirrors the tensor operation name
    return p.slice(m)


def save(obj, path) -> None:
    """Write a CountTensor (triples) or LikelihoodModel (rows) as JSON."""
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh)
        fh.write("\n")


def load(path, k: int | None = None):
    """Read a likelihood file.

    Files with ``triples`` load as a :class:`CountTensor`; files with ``rows``
    as a :class:`LikelihoodModel`. ``k`` checks the stored code count.
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read likelihood file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ModelFileError(f"malformed likelihood file {path}")
    if "triples" in data:
        obj = CountTensor.from_dict(data)
    elif "rows" in data:
        obj = LikelihoodModel.from_dict(data)
    else:
        raise ModelFileError(f"{path} holds neither 'triples' nor 'rows'")
    if k is not None and obj.k != k:
        raise ModelFileError(f"likelihood K={obj.k} does not match expected K={k}")
    return obj


def load_model(path, k: int | None = None) -> LikelihoodModel:
    """Load a likelihood file, normalizing it first if it stores raw counts."""
    obj = load(path, k)
    return normalize(obj) if isinstance(obj, CountTensor) else obj
