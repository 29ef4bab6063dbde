"""Count-based autoregressive token priors.

An order-``n`` model conditions each token on at most ``n - 1`` previous
tokens. Training records, for every position and every context length the
position allows, the (context, next token) pair; so the empty context holds
unigram counts over all positions. Lookups truncate the history to the last
``n - 1`` tokens and never back off further.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ModelFileError, ValidationError

DEFAULT_ORDER = 3
DEFAULT_DELTA = 0.1


class NGramPrior:
    """Add-``delta`` smoothed n-gram model over ``K`` tokens."""

    def __init__(self, k: int, order: int, delta: float = DEFAULT_DELTA, contexts=None):
        if k < 1:
            raise ValidationError("k must be positive")
        if order < 1:
            raise ValidationError("order must be at least 1")
        if not (delta >= 0 and np.isfinite(delta)):
            raise ValidationError("delta must be finite and non-negative")
        self.k = int(k)
        self.order = int(order)
        self.delta = float(delta)
        self.contexts: dict[tuple, np.ndarray] = {}
        for ctx, counts in (contexts or {}).items():
            ctx = tuple(int(t) for t in ctx)
            counts = np.asarray(counts, dtype=np.int64)
            if len(ctx) >= self.order or counts.shape != (self.k,) or counts.min(initial=0) < 0:
                raise ValidationError(f"bad context table entry for {ctx}")
            if any(t < 0 or t >= self.k for t in ctx):
                raise ValidationError(f"context token out of range [0, {self.k})")
            self.contexts[ctx] = counts
        self._cache: dict[tuple, np.ndarray] = {}

    def truncate(self, context) -> tuple:
        ctx = tuple(int(t) for t in context)
        keep = self.order - 1
        return ctx[len(ctx) - keep:] if keep else ()

    def conditional(self, context) -> np.ndarray:
        """Next-token distribution given ``context`` (any length)."""
        ctx = self.truncate(context)
        if any(t < 0 or t >= self.k for t in ctx):
            raise ValidationError(f"context token out of range [0, {self.k})")
        return np.exp(self._log_conditional(ctx))

    def log_conditional(self, context) -> np.ndarray:
        ctx = self.truncate(context)
        if any(t < 0 or t >= self.k for t in ctx):
            raise ValidationError(f"context token out of range [0, {self.k})")
        return self._log_conditional(ctx)

    def _log_conditional(self, ctx: tuple) -> np.ndarray:
        # ctx is already truncated and validated
        out = self._cache.get(ctx)
        if out is None:
            counts = self.contexts.get(ctx)
            total = 0 if counts is None else int(counts.sum())
            if total == 0:
                probs = np.full(self.k, 1.0 / self.k)
            else:
                probs = (counts + self.delta) / (total + self.delta * self.k)
            with np.errstate(divide="ignore"):
                out = np.log(probs)
            out.setflags(write=False)
            self._cache[ctx] = out
        return out

    def sequence_logprob(self, z) -> float:
        """Chain-rule log-probability of the whole sequence ``z``."""
        z = [int(t) for t in z]
        if any(t < 0 or t >= self.k for t in z):
            raise ValidationError(f"token out of range [0, {self.k})")
        total = 0.0
        for s, tok in enumerate(z):
            total += float(self._log_conditional(self.truncate(z[:s]))[tok])
        return total

    def __eq__(self, other):
        if not isinstance(other, NGramPrior):
            return NotImplemented
        if (self.k, self.order, self.delta) != (other.k, other.order, other.delta):
            return False
        if self.contexts.keys() != other.contexts.keys():
            return False
        return all(np.array_equal(v, other.contexts[c]) for c, v in self.contexts.items())

    __hash__ = None

    def __repr__(self):
        return f"NGramPrior(k={self.k}, order={self.order}, delta={self.delta}, contexts={len(self.contexts)})"

    def to_dict(self) -> dict:
        entries = []
        for ctx in sorted(self.contexts):
            counts = self.contexts[ctx]
            nz = np.flatnonzero(counts)
            entries.append([list(ctx), [[int(t), int(counts[t])] for t in nz]])
        return {"k": self.k, "order": self.order, "delta": self.delta, "contexts": entries}

    @classmethod
    def from_dict(cls, data: dict) -> "NGramPrior":
        try:
            k, order, delta = int(data["k"]), int(data["order"]), float(data["delta"])
            tables = {}
            for ctx, pairs in data["contexts"]:
                counts = np.zeros(k, dtype=np.int64)
                for tok, n in pairs:
                    counts[int(tok)] = int(n)
                tables[tuple(int(t) for t in ctx)] = counts
            return cls(k, order, delta, tables)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ModelFileError(f"malformed prior file: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path, k: int | None = None) -> "NGramPrior":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelFileError(f"cannot read prior {path}: {exc}") from exc
        prior = cls.from_dict(data)
        if k is not None and prior.k != k:
            raise ModelFileError(f"prior K={prior.k} does not match expected K={k}")
        return prior


@dataclass(frozen=True)
class PriorPair:
    first: NGramPrior
    second: NGramPrior

    def __post_init__(self):
        if self.first.k != self.second.k:
            raise ValidationError(f"priors disagree on K: {self.first.k} vs {self.second.k}")

    @property
    def k(self) -> int:
        return self.first.k

    @classmethod
    def shared(cls, prior: NGramPrior) -> "PriorPair":
        """Unsupervised setting: the same prior for both sources."""
        return cls(prior, prior)


def train_ngram(corpus, k: int, order: int = DEFAULT_ORDER, delta: float = DEFAULT_DELTA) -> NGramPrior:
    """Count (context, next token) occurrences over a corpus of token sequences."""
    seqs = [np.asarray(z, dtype=np.int64).ravel() for z in corpus]
    if not seqs:
        raise ValidationError("empty corpus")
    if order < 1:
        raise ValidationError("order must be at least 1")
    tables: dict[tuple, np.ndarray] = {}
    for z in seqs:
        if z.size and (z.min() < 0 or z.max() >= k):
            raise ValidationError(f"token out of range [0, {k})")
        toks = z.tolist()
        for s, tok in enumerate(toks):
            for length in range(min(s, order - 1) + 1):
                ctx = tuple(toks[s - length:s])
                row = tables.get(ctx)
                if row is None:
                    row = tables[ctx] = np.zeros(k, dtype=np.int64)
                row[tok] += 1
    return NGramPrior(k, order, delta, tables)


def conditional(prior: NGramPrior, context) -> np.ndarray:
    return prior.conditional(context)


def sequence_logprob(prior: NGramPrior, z) -> float:
    return prior.sequence_logprob(z)
