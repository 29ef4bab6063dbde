"""Exact inference by enumerating every pair of token sequences.

Only usable on tiny instances; it is the reference the samplers are tested
against. The score of a pair is the sum of the per-position step scores,
i.e. the two prior sequence log-probabilities plus ``lam`` times the summed
log-likelihood of the mixture tokens.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .likelihood import CountTensor, LikelihoodModel, normalize
from .priors import PriorPair, train_ngram
from .separator import beam_search, sample_sequences

MAX_TABLE = 10**7


@dataclass
class PosteriorTable:
    k: int
    s: int
    scores: np.ndarray  # shape (K**S, K**S), row = z1 index, column = z2 index
    log_partition: float

    def sequence(self, index: int) -> np.ndarray:
        """Token sequence with lexicographic rank ``index`` (first token most significant)."""
        digits = np.zeros(self.s, dtype=np.int64)
        for pos in range(self.s - 1, -1, -1):
            index, digits[pos] = divmod(index, self.k)
        return digits

    def index(self, z) -> int:
        out = 0
        for t in z:
            out = out * self.k + int(t)
        return out

    def probabilities(self) -> np.ndarray:
        return np.exp(self.scores - self.log_partition)

    def score(self, z1, z2) -> float:
        return float(self.scores[self.index(z1), self.index(z2)])


def all_sequences(k: int, s: int) -> np.ndarray:
    """Every length-``s`` sequence over ``k`` tokens, lexicographic order."""
    return np.array(list(itertools.product(range(k), repeat=s)), dtype=np.int64).reshape(-1, s)


def logsumexp(values) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    top = values.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(values - top).sum()))


def exact_posterior(m, priors: PriorPair, p: LikelihoodModel, lam: float) -> PosteriorTable:
    m = np.asarray(m, dtype=np.int64).ravel()
    k, s = p.k, m.size
    if priors.k != k:
        raise ValidationError(f"K mismatch: priors {priors.k}, likelihood {k}")
    if float(k) ** (2 * s) > MAX_TABLE:
        raise ValidationError(f"instance too large: K^(2S) = {k}^{2 * s} exceeds {MAX_TABLE}")
    seqs = all_sequences(k, s)
    lp1 = np.array([priors.first.sequence_logprob(z) for z in seqs])
    lp2 = lp1 if priors.second is priors.first else np.array(
        [priors.second.sequence_logprob(z) for z in seqs])
    ll = np.zeros((seqs.shape[0], seqs.shape[0]))
    for pos in range(s):
        ll += p.slice(m[pos])[seqs[:, pos][:, None], seqs[:, pos][None, :]]
    scores = lp1[:, None] + lp2[None, :] + lam * ll
    return PosteriorTable(k, s, scores, logsumexp(scores))


def exact_map(table: PosteriorTable):
    """Highest-scoring pair; ties go to the lexicographically smallest ``(z1, z2)``."""
    flat = int(np.argmax(table.scores.ravel()))
    i, j = divmod(flat, table.scores.shape[1])
    return table.sequence(i), table.sequence(j)


def random_instance(rng: np.random.Generator, k: int, s: int, order: int = 2,
                    delta: float = 0.1, corpus_size: int = 12, pairs: int = 30):
    """Small random ``(m, priors, likelihood)`` triple for cross-checks.

    Priors are trained on random token sequences; the likelihood counts come
    from random aligned token triples, so many cells stay at the floor.
    """
    corpus1 = rng.integers(k, size=(corpus_size, s + 2))
    corpus2 = rng.integers(k, size=(corpus_size, s + 2))
    priors = PriorPair(train_ngram(corpus1, k, order, delta), train_ngram(corpus2, k, order, delta))
    trip = rng.integers(k, size=(3, pairs))
    counts = CountTensor.from_tokens(k, trip[0], trip[1], trip[2])
    m = rng.integers(k, size=s)
    return m, priors, normalize(counts)


def cross_check(seed: int = 0, instances: int = 20, samples: int = 200_000) -> list[dict]:
    """Validate beam search and ancestral sampling against exact enumeration.

    Returns one ``{"test", "pass", "max_error"}`` record per check.
    """
    rng = np.random.default_rng(seed)
    report = []

    worst_map = worst_all = worst_norm = 0.0
    for i in range(instances):
        lam = (0.0, 1.0, 3.0)[i % 3]
        m, priors, lik = random_instance(rng, 3, 4, order=2)
        table = exact_posterior(m, priors, lik, lam)
        z1, z2 = exact_map(table)
        beams = beam_search(m, priors, lik, lam, 3 ** 8)
        worst_map = max(worst_map, abs(beams[0].logscore - table.score(z1, z2)))
        got = np.array([h.logscore for h in beams])
        want = np.array([table.score(h.z1, h.z2) for h in beams])
        worst_all = max(worst_all, float(np.abs(got - want).max()), abs(len(beams) - table.scores.size))
        worst_norm = max(worst_norm, abs(float(table.probabilities().sum()) - 1.0))
    report.append({"test": "beam_matches_exact_map", "pass": worst_map <= 1e-9, "max_error": worst_map})
    report.append({"test": "exhaustive_beam_matches_table", "pass": worst_all <= 1e-9, "max_error": worst_all})
    report.append({"test": "posterior_normalization", "pass": worst_norm <= 1e-6, "max_error": worst_norm})

    m, priors, lik = random_instance(rng, 3, 3, order=1)
    table = exact_posterior(m, priors, lik, 1.0)
    z1, z2, _ = sample_sequences(m, priors, lik, 1.0, samples, rng)
    idx = _rank(z1, 3) * table.scores.shape[1] + _rank(z2, 3)
    freq = np.bincount(idx, minlength=table.scores.size) / samples
    tv = 0.5 * float(np.abs(freq - table.probabilities().ravel()).sum())
    report.append({"test": "ancestral_matches_posterior", "pass": tv <= 0.02, "max_error": tv})
    for rec in report:
        rec["pass"], rec["max_error"] = bool(rec["pass"]), float(rec["max_error"])
    return report


def _rank(z, k):
    out = np.zeros(z.shape[0], dtype=np.int64)
    for col in range(z.shape[1]):
        out = out * k + z[:, col]
    return out
