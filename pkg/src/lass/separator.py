"""Stepwise joint posterior over token pairs and the samplers that decode it.

At position ``s`` the score of a candidate pair ``(a, b)`` is

    log p1(a | z1[<s]) + log p2(b | z2[<s]) + lam * log P[a, b, m_s]

and a sampler picks one cell of that ``K x K`` matrix. Stochastic samplers
draw ``num_candidates`` complete separations and keep the one whose decoded
average lies closest (L2) to the mixture.

RNG order: every stochastic run draws one vector of ``num_candidates``
uniforms per position, in position order, from a single generator seeded
with ``cfg.seed``. Candidate ``c`` consumes entry ``c`` of each vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .codec import Codebook, encode
from .errors import ModelFileError, ValidationError
from .likelihood import LikelihoodModel
from .priors import PriorPair

SAMPLERS = ("greedy", "ancestral", "topk", "beam")


@dataclass(frozen=True)
class SeparationConfig:
    lam: float = 1.0
    sampler: str = "topk"
    k: int | None = 32
    b: int | None = None
    num_candidates: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValidationError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError("lambda must be finite and non-negative")
        if self.sampler == "topk" and (self.k is None or self.k < 1):
            raise ValidationError("topk sampler needs k >= 1")
        if self.sampler == "beam" and (self.b is None or self.b < 1):
            raise ValidationError("beam sampler needs b >= 1")
        if self.num_candidates < 1:
            raise ValidationError("num_candidates must be >= 1")

    @property
    def stochastic(self) -> bool:
        return self.sampler in ("ancestral", "topk")

    def to_dict(self) -> dict:
        sampler = {"kind": self.sampler}
        if self.sampler == "topk":
            sampler["k"] = self.k
        if self.sampler == "beam":
            sampler["b"] = self.b
        return {"lambda": self.lam, "sampler": sampler,
                "num_candidates": self.num_candidates, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "SeparationConfig":
        try:
            sampler = data.get("sampler", {"kind": "topk", "k": 32})
            if isinstance(sampler, str):
                sampler = {"kind": sampler}
            kind = sampler["kind"]
            return cls(
                lam=float(data.get("lambda", 1.0)),
                sampler=kind,
                k=int(sampler["k"]) if "k" in sampler else (32 if kind == "topk" else None),
                b=int(sampler["b"]) if "b" in sampler else None,
                num_candidates=int(data.get("num_candidates", 1)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValidationError(f"malformed separation config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SeparationConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelFileError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class Hypothesis:
    z1: tuple = ()
    z2: tuple = ()
    logscore: float = 0.0


@dataclass
class SeparationResult:
    x1: np.ndarray
    x2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    logscore: float
    residual: float
    extra: dict = field(default_factory=dict)


def posterior_step(p1, p2, ll_slice, lam: float) -> np.ndarray:
    """Unnormalized log joint posterior over ``(a, b)`` for one position."""
    with np.errstate(divide="ignore"):
        return _posterior_logs(np.log(np.asarray(p1, dtype=np.float64)),
                               np.log(np.asarray(p2, dtype=np.float64)), ll_slice, lam)


def _posterior_logs(lp1, lp2, ll_slice, lam):
    return lp1[..., :, None] + lp2[..., None, :] + lam * np.asarray(ll_slice)


def greedy_select(post) -> tuple[int, int]:
    post = np.asarray(post)
    idx = int(np.argmax(post.ravel()))
    return divmod(idx, post.shape[1])


def _draw(post, k, rng, size):
    post = np.asarray(post, dtype=np.float64)
    if size is None:
        idx = int(_kernels.sample_rows(post.reshape(1, -1), np.array([rng.random()]), k)[0])
        return divmod(idx, post.shape[1])
    rows = np.broadcast_to(post.reshape(1, -1), (size, post.size))
    return np.divmod(_kernels.sample_rows(rows, rng.random(size), k), post.shape[1])


def ancestral_sample(post, rng: np.random.Generator, size: int | None = None):
    """Draw one cell ``(a, b)`` from ``softmax(post)`` over all ``K*K`` cells.

    With ``size``, returns arrays of ``size`` independent draws; these equal
    ``size`` successive single draws from the same generator.
    """
    return _draw(post, np.size(post), rng, size)


def topk_sample(post, k: int, rng: np.random.Generator, size: int | None = None):
    """Draw from ``softmax(post)`` restricted to its ``k`` largest cells."""
    n = np.size(post)
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} outside [1, {n}]")
    return _draw(post, k, rng, size)


def beam_step(beams, post_per_beam, b: int) -> list[Hypothesis]:
    """Extend every beam by every cell and keep the ``b`` best extensions.

    Ties go to the lower parent index, then lower ``a``, then lower ``b``.
    """
    if len(beams) != len(post_per_beam):
        raise ValidationError("need exactly one posterior matrix per beam")
    if not beams:
        return []
    kk = np.asarray(post_per_beam[0]).shape[1]
    cells = kk * kk
    scores = np.concatenate([h.logscore + np.asarray(post, dtype=np.float64).ravel()
                             for h, post in zip(beams, post_per_beam)])
    out = []
    for idx in _kernels.top_indices(scores, b):
        parent, cell = divmod(int(idx), cells)
        a, c = divmod(cell, kk)
        h = beams[parent]
        out.append(Hypothesis(h.z1 + (a,), h.z2 + (c,), float(scores[idx])))
    return out


def _check_models(priors: PriorPair, p: LikelihoodModel, codec: Codebook):
    if not (priors.k == p.k == codec.k):
        raise ValidationError(f"K mismatch: priors {priors.k}, likelihood {p.k}, codec {codec.k}")


def _context_logs(prior, rows, s):
    lo = max(0, s - (prior.order - 1))
    return np.stack([prior._log_conditional(tuple(r)) for r in rows[:, lo:s].tolist()])


def sample_sequences(m, priors: PriorPair, p: LikelihoodModel, lam: float, n: int,
                     rng: np.random.Generator, k: int | None = None):
    """Draw ``n`` token-pair sequences stepwise from the local posteriors.

    ``k=None`` is plain ancestral sampling; otherwise top-``k`` filtering on
    the joint cells. Returns ``(z1, z2, logscores)`` with shapes ``(n, S)``,
    ``(n, S)`` and ``(n,)``.
    """
    m = np.asarray(m, dtype=np.int64)
    K = p.k
    keep = K * K if k is None else int(k)
    if not 1 <= keep <= K * K:
        raise ValidationError(f"k={keep} outside [1, {K * K}]")
    S = m.size
    z1 = np.zeros((n, S), dtype=np.int64)
    z2 = np.zeros((n, S), dtype=np.int64)
    scores = np.zeros(n)
    rows = np.arange(n)
    for s in range(S):
        lp1 = _context_logs(priors.first, z1, s)
        lp2 = _context_logs(priors.second, z2, s)
        post = _posterior_logs(lp1, lp2, p.slice(m[s]), lam).reshape(n, K * K)
        idx = _kernels.sample_rows(post, rng.random(n), keep)
        z1[:, s], z2[:, s] = np.divmod(idx, K)
        scores += post[rows, idx]
    return z1, z2, scores


def greedy_decode(m, priors: PriorPair, p: LikelihoodModel, lam: float):
    m = np.asarray(m, dtype=np.int64)
    z1, z2, score = [], [], 0.0
    for s in range(m.size):
        post = _posterior_logs(priors.first._log_conditional(priors.first.truncate(z1)),
                               priors.second._log_conditional(priors.second.truncate(z2)),
                               p.slice(m[s]), lam)
        a, b = greedy_select(post)
        z1.append(a)
        z2.append(b)
        score += float(post[a, b])
    return np.array(z1, dtype=np.int64), np.array(z2, dtype=np.int64), score


def beam_search(m, priors: PriorPair, p: LikelihoodModel, lam: float, b: int) -> list[Hypothesis]:
    """All surviving hypotheses after the last position, best first."""
    beams = [Hypothesis()]
    for s in range(len(m)):
        ll = p.slice(int(m[s]))
        posts = [_posterior_logs(priors.first._log_conditional(priors.first.truncate(h.z1)),
                                 priors.second._log_conditional(priors.second.truncate(h.z2)),
                                 ll, lam)
                 for h in beams]
        beams = beam_step(beams, posts, b)
    return beams


def _residual(x1, x2, y):
    return float(np.linalg.norm((x1 + x2) / 2 - y))


def separate(y, priors: PriorPair, p: LikelihoodModel, codec: Codebook,
             cfg: SeparationConfig) -> SeparationResult:
    """Separate the mixture ``y`` into two sources."""
    _check_models(priors, p, codec)
    y = np.asarray(y, dtype=np.float64)
    m = encode(codec, y)
    K = codec.k
    if cfg.sampler == "greedy":
        z1, z2, score = greedy_decode(m, priors, p, cfg.lam)
        extra = {}
    elif cfg.sampler == "beam":
        best = beam_search(m, priors, p, cfg.lam, cfg.b)[0]
        z1, z2, score = np.array(best.z1), np.array(best.z2), best.logscore
        extra = {}
    else:
        if cfg.sampler == "topk" and not 1 <= cfg.k <= K * K:
            raise ValidationError(f"topk k={cfg.k} outside [1, {K * K}]")
        rng = np.random.default_rng(cfg.seed)
        Z1, Z2, scores = sample_sequences(m, priors, p, cfg.lam, cfg.num_candidates, rng,
                                          cfg.k if cfg.sampler == "topk" else None)
        X1 = codec.codes[Z1].reshape(Z1.shape[0], -1)
        X2 = codec.codes[Z2].reshape(Z2.shape[0], -1)
        dist = np.linalg.norm((X1 + X2) / 2 - y[None, :], axis=1)
        c = int(np.argmin(dist))
        z1, z2, score = Z1[c], Z2[c], float(scores[c])
        extra = {"candidate": c}
    x1 = codec.codes[z1].reshape(-1)
    x2 = codec.codes[z2].reshape(-1)
    return SeparationResult(x1, x2, np.asarray(z1, dtype=np.int64), np.asarray(z2, dtype=np.int64),
                            float(score), _residual(x1, x2, y), extra)
