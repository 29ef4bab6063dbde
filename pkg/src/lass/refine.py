"""Gradient refinement of dense embeddings toward the observed mixture.

Minimizes ``||D(e1) + D(e2) - 2y||^2`` over the continuous embeddings of
both sources. The decoder is linear, so the gradient with respect to either
embedding is ``2r`` reshaped into patches, where ``r`` is the residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import Codebook, decode_dense, to_patches
from .errors import ValidationError

MAX_HALVINGS = 30


@dataclass(frozen=True)
class RefinementConfig:
    steps: int = 500
    alpha: float = 0.1
    use_backtracking: bool = False
    # <= 0 disables early stopping
    tolerance: float = 0.0

    def __post_init__(self):
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError("alpha must be finite and positive")


def objective(e1, e2, y) -> float:
    r = np.ravel(e1) + np.ravel(e2) - 2 * np.asarray(y)
    return float(r @ r)


def gradient(e1, e2, y):
    """Gradient of :func:`objective` with respect to ``e1`` and ``e2`` (identical)."""
    e1 = np.asarray(e1, dtype=np.float64)
    r = e1.ravel() + np.ravel(e2) - 2 * np.asarray(y)
    g = (2 * r).reshape(e1.shape)
    return g, g.copy()


def refine(x1, x2, y, codec: Codebook, cfg: RefinementConfig | None = None, history: list | None = None):
    """Refine a separation so the decoded pair averages closer to ``y``.

    Embeddings start at the patches of ``x1`` and ``x2``, which are exactly
    their code vectors when the inputs are decoded tokens. If ``history``
    is given, the residual norm before each step and after the last one is
    appended to it.
    """
    cfg = cfg or RefinementConfig()
    x1, x2, y = (np.asarray(v, dtype=np.float64) for v in (x1, x2, y))
    if not (x1.shape == x2.shape == y.shape):
        raise ValidationError(f"length mismatch: {x1.shape}, {x2.shape}, {y.shape}")
    to_patches(y, codec.p)
    e1 = to_patches(x1, codec.p).copy()
    e2 = to_patches(x2, codec.p).copy()
    f = objective(e1, e2, y)
    if history is not None:
        history.append(np.sqrt(f))
    for _ in range(cfg.steps):
        g1, g2 = gradient(e1, e2, y)
        step = cfg.alpha
        n1, n2 = e1 - step * g1, e2 - step * g2
        fn = objective(n1, n2, y)
        if cfg.use_backtracking:
            halvings = 0
            while fn > f and halvings < MAX_HALVINGS:
                step *= 0.5
                n1, n2 = e1 - step * g1, e2 - step * g2
                fn = objective(n1, n2, y)
                halvings += 1
            if fn > f:
                break
        improvement = np.sqrt(f) - np.sqrt(fn)
        e1, e2, f = n1, n2, fn
        if history is not None:
            history.append(np.sqrt(f))
        if cfg.tolerance > 0 and improvement < cfg.tolerance:
            break
    return decode_dense(codec, e1), decode_dense(codec, e2)
