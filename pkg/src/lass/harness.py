"""Synthetic sources, mixing, PSNR scoring and the experiment runner."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codec import Codebook, encode, fit_codebook
from .errors import ModelFileError, ValidationError
from .likelihood import build_counts, density, load as load_likelihood, normalize, CountTensor
from .priors import NGramPrior, PriorPair, train_ngram
from .refine import RefinementConfig, refine
from .separator import SeparationConfig, separate

log = logging.getLogger(__name__)

GENERATORS = ("markov_levels", "tone_bank")
TEST_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class SourceSpec:
    """Recipe for one synthetic source class.

    ``markov_levels``: piecewise-constant signal. The level index is redrawn
    every ``hold`` samples unless a uniform draw falls below ``persistence``.
    ``tone_bank``: sum of ``n_tones`` sinusoids, each with a frequency (cycles
    per sample) drawn from ``values`` and a phase drawn from ``phase_steps``
    equally spaced values (continuous when ``phase_steps`` is 0).
    Both add ``noise`` times standard normal noise and clip to [-1, 1].
    """

    class_name: str
    kind: str
    values: tuple = (-0.5, 0.5)
    persistence: float = 0.9
    amplitude: float = 1.0
    seed: int = 0
    hold: int = 1
    n_tones: int = 1
    phase_steps: int = 0
    noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind not in GENERATORS:
            raise ValidationError(f"unknown generator {self.kind!r}")
        if not self.values:
            raise ValidationError("level/frequency set must be non-empty")
        nums = (*self.values, self.persistence, self.amplitude, self.noise)
        if not all(math.isfinite(v) for v in nums):
            raise ValidationError("source parameters must be finite")
        if not 0.0 <= self.persistence <= 1.0:
            raise ValidationError("persistence must lie in [0, 1]")
        if self.hold < 1 or self.n_tones < 1 or self.phase_steps < 0 or self.noise < 0:
            raise ValidationError("hold and n_tones must be >= 1; phase_steps and noise >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "SourceSpec":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(f"malformed source spec: {exc}") from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["values"] = list(self.values)
        return out


def _markov_levels(spec: SourceSpec, rng, n: int) -> np.ndarray:
    levels = np.asarray(spec.values)
    nseg = -(-n // spec.hold)
    idx = np.empty(nseg, dtype=np.int64)
    idx[0] = rng.integers(levels.size)
    for j in range(1, nseg):
        idx[j] = idx[j - 1] if rng.random() < spec.persistence else rng.integers(levels.size)
    return spec.amplitude * np.repeat(levels[idx], spec.hold)[:n]


def _tone_bank(spec: SourceSpec, rng, n: int) -> np.ndarray:
    t = np.arange(n)
    x = np.zeros(n)
    for _ in range(spec.n_tones):
        f = spec.values[rng.integers(len(spec.values))]
        if spec.phase_steps:
            phase = 2 * np.pi * rng.integers(spec.phase_steps) / spec.phase_steps
        else:
            phase = rng.uniform(0, 2 * np.pi)
        x += spec.amplitude * np.sin(2 * np.pi * f * t + phase)
    return x


def generate_signal(spec: SourceSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    x = _markov_levels(spec, rng, n) if spec.kind == "markov_levels" else _tone_bank(spec, rng, n)
    if spec.noise > 0:
        x = x + spec.noise * rng.standard_normal(n)
    return np.clip(x, -1.0, 1.0)


def generate_dataset(spec1: SourceSpec, spec2: SourceSpec, count: int, n: int, seed: int):
    """``count`` independent source pairs of length ``n``.

    Source ``j`` (0 or 1) draws its signals in order from
    ``np.random.default_rng([seed, spec.seed, j])``.
    Returns two ``(count, n)`` arrays.
    """
    if count < 0 or n < 1:
        raise ValidationError("count must be >= 0 and length >= 1")
    out = []
    for j, spec in enumerate((spec1, spec2)):
        rng = np.random.default_rng([seed, spec.seed, j])
        out.append(np.array([generate_signal(spec, rng, n) for _ in range(count)]).reshape(count, n))
    return out[0], out[1]


def mix(x1, x2) -> np.ndarray:
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ValidationError(f"length mismatch: {x1.shape} vs {x2.shape}")
    return (x1 + x2) / 2


def psnr(est, ref, peak: float = 1.0) -> float:
    """PSNR in dB; ``inf`` for an exact match."""
    est, ref = np.asarray(est, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValidationError(f"length mismatch: {est.shape} vs {ref.shape}")
    mse = float(np.mean((est - ref) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak * peak / mse)


def average_baseline(y):
    y = np.asarray(y, dtype=np.float64)
    return y.copy(), y.copy()


def best_permutation_psnr(e1, e2, x1, x2, peak: float = 1.0):
    """PSNR pair under whichever source assignment has the higher mean."""
    straight = (psnr(e1, x1, peak), psnr(e2, x2, peak))
    swapped = (psnr(e2, x1, peak), psnr(e1, x2, peak))
    return straight if _mean(straight) >= _mean(swapped) else swapped


def _mean(vals):
    vals = list(vals)
    return sum(vals) / len(vals) if vals else math.nan


def summarize(pairs) -> dict:
    p1 = [a for a, _ in pairs]
    p2 = [b for _, b in pairs]
    flat = np.array(p1 + p2, dtype=np.float64)
    finite = bool(np.all(np.isfinite(flat))) if flat.size else True
    return {
        "psnr_x1": p1,
        "psnr_x2": p2,
        "mean": float(flat.mean()) if flat.size else None,
        "std": float(flat.std()) if flat.size and finite else None,
    }


# --- experiment runner ----------------------------------------------------------


@dataclass
class ExperimentConfig:
    sources: tuple
    signal_length: int = 256
    train_pairs: int = 400
    test_mixtures: int = 100
    seed: int = 7
    codec_k: int = 64
    codec_p: int = 4
    prior_order: int = 3
    prior_delta: float = 0.1
    shared_prior: bool = False
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    refinement: RefinementConfig | None = None
    workers: int = 1
    record_timing: bool = False
    models: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ValidationError("experiment config must be a JSON object")
        try:
            sources = tuple(SourceSpec.from_dict(s) for s in data["sources"])
            if len(sources) != 2:
                raise ValidationError("exactly two source specs are required")
            codec = data.get("codec", {})
            prior = data.get("prior", {})
            ref = data.get("refine")
            return cls(
                sources=sources,
                signal_length=int(data.get("signal_length", 256)),
                train_pairs=int(data.get("train_pairs", 400)),
                test_mixtures=int(data.get("test_mixtures", 100)),
                seed=int(data.get("seed", 7)),
                codec_k=int(codec.get("k", 64)),
                codec_p=int(codec.get("p", 4)),
                prior_order=int(prior.get("order", 3)),
                prior_delta=float(prior.get("delta", 0.1)),
                shared_prior=bool(prior.get("shared", False)),
                separation=SeparationConfig.from_dict(data.get("separation", {})),
                refinement=None if not ref else RefinementConfig(
                    steps=int(ref.get("steps", 500)), alpha=float(ref.get("alpha", 0.1)),
                    use_backtracking=bool(ref.get("backtrack", False)),
                    tolerance=float(ref.get("tolerance", 0.0))),
                workers=int(data.get("workers", 1)),
                record_timing=bool(data.get("record_timing", False)),
                models=dict(data.get("models", {})),
                base_dir=Path(base_dir),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed experiment config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelFileError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def model_path(self, name):
        value = self.models.get(name)
        return None if value is None else self.base_dir / value


@dataclass
class Models:
    codec: Codebook
    priors: PriorPair
    counts: CountTensor | None
    likelihood: object

    @property
    def density(self):
        return None if self.counts is None else density(self.counts)


def build_models(cfg: ExperimentConfig) -> Models:
    """Load the models named in ``cfg.models``; train the missing ones on synthetic data."""
    train1 = train2 = None

    def training():
        nonlocal train1, train2
        if train1 is None:
            train1, train2 = generate_dataset(*cfg.sources, cfg.train_pairs, cfg.signal_length, cfg.seed)
        return train1, train2

    path = cfg.model_path("codec")
    if path is not None:
        codec = Codebook.load(path)
    else:
        t1, t2 = training()
        corpus = list(t1) + list(t2) + list(mix(t1, t2))
        codec = fit_codebook(corpus, cfg.codec_k, cfg.codec_p, cfg.seed)

    p1, p2 = cfg.model_path("prior1"), cfg.model_path("prior2")
    if p1 is not None or p2 is not None:
        if p1 is None or p2 is None:
            raise ValidationError("models.prior1 and models.prior2 must be given together")
        priors = PriorPair(NGramPrior.load(p1, codec.k), NGramPrior.load(p2, codec.k))
    else:
        t1, t2 = training()
        z1 = [encode(codec, x) for x in t1]
        z2 = [encode(codec, x) for x in t2]
        if cfg.shared_prior:
            shared = train_ngram(z1 + z2, codec.k, cfg.prior_order, cfg.prior_delta)
            priors = PriorPair.shared(shared)
        else:
            priors = PriorPair(train_ngram(z1, codec.k, cfg.prior_order, cfg.prior_delta),
                               train_ngram(z2, codec.k, cfg.prior_order, cfg.prior_delta))

    path = cfg.model_path("likelihood")
    if path is not None:
        obj = load_likelihood(path, codec.k)
        counts = obj if isinstance(obj, CountTensor) else None
        lik = normalize(obj) if counts is not None else obj
    else:
        t1, t2 = training()
        counts = build_counts(zip(t1, t2), codec)
        lik = normalize(counts)
    if not (codec.k == priors.k == lik.k):
        raise ModelFileError(f"K mismatch: codec {codec.k}, priors {priors.k}, likelihood {lik.k}")
    return Models(codec, priors, counts, lik)


def mixture_seed(seed: int, index: int) -> int:
    """Per-mixture RNG seed; independent of worker scheduling."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _separate_one(args):
    index, y, models, sep, ref = args
    cfg = SeparationConfig(sep.lam, sep.sampler, sep.k, sep.b, sep.num_candidates,
                           mixture_seed(sep.seed, index))
    start = time.perf_counter()
    res = separate(y, models.priors, models.likelihood, models.codec, cfg)
    refined = None
    if ref is not None:
        refined = refine(res.x1, res.x2, y, models.codec, ref)
    return res, refined, time.perf_counter() - start


def run_experiment(cfg: ExperimentConfig, models: Models | None = None, test_set=None) -> dict:
    """Separate the test mixtures and score them against the true sources.

    ``test_set`` may supply ``(x1, x2)`` arrays; otherwise it is generated
    from the config with a seed disjoint from the training data.
    """
    models = models or build_models(cfg)
    if test_set is None:
        test_set = generate_dataset(*cfg.sources, cfg.test_mixtures, cfg.signal_length,
                                    cfg.seed + TEST_SEED_OFFSET)
    t1, t2 = (np.asarray(v, dtype=np.float64) for v in test_set)
    mixtures = [mix(a, b) for a, b in zip(t1, t2)]
    jobs = [(i, y, models, cfg.separation, cfg.refinement) for i, y in enumerate(mixtures)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outputs = list(pool.map(_separate_one, jobs))
    else:
        outputs = [_separate_one(job) for job in jobs]

    lass, refined, baseline, timings = [], [], [], []
    for (res, ref, elapsed), y, x1, x2 in zip(outputs, mixtures, t1, t2):
        lass.append(best_permutation_psnr(res.x1, res.x2, x1, x2))
        if ref is not None:
            refined.append(best_permutation_psnr(ref[0], ref[1], x1, x2))
        b1, b2 = average_baseline(y)
        baseline.append(best_permutation_psnr(b1, b2, x1, x2))
        timings.append(elapsed)
        log.debug("mixture %d: psnr %s (%.3fs)", len(lass) - 1, lass[-1], elapsed)

    report = {
        "n_mixtures": len(mixtures),
        "k": models.codec.k,
        "p": models.codec.p,
        "density": models.density,
        "separation": cfg.separation.to_dict(),
        "refinement": None if cfg.refinement is None else asdict(cfg.refinement),
        "lass": summarize(lass),
        "baseline": summarize(baseline),
    }
    if cfg.refinement is not None:
        report["refined"] = summarize(refined)
    if lass:
        report["margin_db"] = report["lass"]["mean"] - report["baseline"]["mean"]
    if cfg.record_timing:
        report["seconds_per_separation"] = timings
    return report


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def dump_report(report: dict, path) -> None:
    """Write a report as JSON; non-finite PSNRs become the strings ``"inf"``/``"-inf"``."""
    with open(path, "w") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_report(report: dict) -> str:
    def fmt(v):
        return "-" if v is None else f"{v:8.2f}"

    lines = [f"mixtures: {report['n_mixtures']}   K={report['k']}  P={report['p']}"]
    if report.get("density") is not None:
        lines.append(f"likelihood density: {report['density']:.4f} %")
    lines.append(f"{'method':<12}{'mean PSNR':>10}{'std':>10}")
    for name in ("baseline", "lass", "refined"):
        if name in report:
            lines.append(f"{name:<12}{fmt(report[name]['mean']):>10}{fmt(report[name]['std']):>10}")
    if "margin_db" in report:
        lines.append(f"margin over baseline: {report['margin_db']:.2f} dB")
    if "seconds_per_separation" in report and report["seconds_per_separation"]:
        lines.append(f"mean seconds/separation: {np.mean(report['seconds_per_separation']):.4f}")
    return "\n".join(lines)
