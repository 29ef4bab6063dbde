"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 model/file error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, likelihood, oracle
from .codec import Codebook, decode, encode, fit_codebook
from .errors import ModelFileError, ValidationError
from .priors import NGramPrior, PriorPair, train_ngram
from .refine import RefinementConfig, refine
from .separator import SeparationConfig, separate

log = logging.getLogger("lass")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def read_jsonl(path) -> list[dict]:
    try:
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON line: {exc}") from exc
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ValidationError(f"{path}:{i + 1}: expected a JSON object")
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _field(row, name, path):
    try:
        return row[name]
    except KeyError:
        raise ValidationError(f"{path}: record {row.get('id', '?')!r} lacks {name!r}") from None


def _signals(path):
    rows = read_jsonl(path)
    return rows, [np.asarray(_field(r, "samples", path), dtype=np.float64) for r in rows]


def cmd_codec_fit(args):
    _, signals = _signals(args.input)
    fit_codebook(signals, args.k, args.p, args.seed).save(args.out)


def cmd_encode(args):
    codec = Codebook.load(args.codec)
    rows, signals = _signals(args.input)
    out = []
    for row, x in zip(rows, signals):
        out.append({"id": row.get("id"), "class": row.get("class"), "tokens": encode(codec, x).tolist()})
    write_jsonl(args.out, out)


def cmd_decode(args):
    codec = Codebook.load(args.codec)
    out = []
    for row in read_jsonl(args.input):
        z = _field(row, "tokens", args.input)
        out.append({"id": row.get("id"), "class": row.get("class"), "samples": decode(codec, z).tolist()})
    write_jsonl(args.out, out)


def cmd_likelihood_build(args):
    codec = Codebook.load(args.codec)
    rows = read_jsonl(args.pairs)
    pairs = ((_field(r, "x1", args.pairs), _field(r, "x2", args.pairs)) for r in rows)
    counts = likelihood.build_counts(pairs, codec)
    likelihood.save(likelihood.normalize(counts) if args.normalized else counts, args.out)
    log.info("likelihood density %.6f %% (%d nonzero triples)", likelihood.density(counts), counts.nnz)


def cmd_prior_train(args):
    codec = Codebook.load(args.codec)
    rows, signals = _signals(args.input)
    corpus = [encode(codec, x) for row, x in zip(rows, signals)
              if args.source_class is None or row.get("class") == args.source_class]
    train_ngram(corpus, codec.k, args.order, args.delta).save(args.out)


def _refine_cfg(args):
    if not args.refine_steps:
        return None
    return RefinementConfig(steps=args.refine_steps, alpha=args.refine_alpha,
                            use_backtracking=args.refine_backtrack)


def cmd_separate(args):
    codec = Codebook.load(args.codec)
    lik = likelihood.load_model(args.likelihood, codec.k)
    priors = PriorPair(NGramPrior.load(args.prior1, codec.k), NGramPrior.load(args.prior2, codec.k))
    cfg = SeparationConfig.load(args.config)
    ref_cfg = _refine_cfg(args)
    rows, mixtures = _signals(args.mixture)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (row, y) in enumerate(zip(rows, mixtures)):
        run_cfg = SeparationConfig(cfg.lam, cfg.sampler, cfg.k, cfg.b, cfg.num_candidates,
                                   harness.mixture_seed(cfg.seed, i))
        res = separate(y, priors, lik, codec, run_cfg)
        x1, x2 = res.x1, res.x2
        if ref_cfg is not None:
            x1, x2 = refine(x1, x2, y, codec, ref_cfg)
        records.append({
            "id": row.get("id", str(i)),
            "z1": res.z1.tolist(),
            "z2": res.z2.tolist(),
            "x1": x1.tolist(),
            "x2": x2.tolist(),
            "logscore": res.logscore,
            "residual": float(np.linalg.norm((x1 + x2) / 2 - y)),
        })
    write_jsonl(out_dir / "separations.jsonl", records)


def cmd_evaluate(args):
    cfg = harness.ExperimentConfig.load(args.config)
    report = harness.run_experiment(cfg)
    harness.dump_report(report, args.out)
    print(harness.format_report(report))


def cmd_generate(args):
    cfg = harness.ExperimentConfig.load(args.config)
    count = cfg.train_pairs if args.split == "train" else cfg.test_mixtures
    seed = cfg.seed if args.split == "train" else cfg.seed + harness.TEST_SEED_OFFSET
    x1, x2 = harness.generate_dataset(*cfg.sources, count, cfg.signal_length, seed)
    c1, c2 = cfg.sources[0].class_name, cfg.sources[1].class_name
    if args.signals:
        rows = []
        for i, (a, b) in enumerate(zip(x1, x2)):
            rows.append({"id": f"{args.split}-{i}-1", "class": c1, "samples": a.tolist()})
            rows.append({"id": f"{args.split}-{i}-2", "class": c2, "samples": b.tolist()})
        write_jsonl(args.signals, rows)
    if args.pairs:
        write_jsonl(args.pairs, [{"id": f"{args.split}-{i}", "x1": a.tolist(), "x2": b.tolist()}
                                 for i, (a, b) in enumerate(zip(x1, x2))])
    if args.mixtures:
        write_jsonl(args.mixtures, [{"id": f"{args.split}-{i}", "class": "mixture",
                                     "samples": harness.mix(a, b).tolist()}
                                    for i, (a, b) in enumerate(zip(x1, x2))])


def cmd_oracle_check(args):
    report = oracle.cross_check(seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    for rec in report:
        print(f"{'PASS' if rec['pass'] else 'FAIL'}  {rec['test']:<32} max_error={rec['max_error']:.3e}")
    return 0 if all(r["pass"] for r in report) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lass", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("codec-fit", help="learn a patch codebook from a signal dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_codec_fit)

    for name, func in (("encode", cmd_encode), ("decode", cmd_decode)):
        p = sub.add_parser(name, help=f"{name} a JSON-lines file with a codebook")
        p.add_argument("--codec", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("likelihood-build", help="count latent triples over paired sources")
    p.add_argument("--codec", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalized", action="store_true", help="write normalized rows instead of counts")
    p.set_defaults(func=cmd_likelihood_build)

    p = sub.add_parser("prior-train", help="train an n-gram token prior")
    p.add_argument("--codec", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--class", dest="source_class", default=None, help="only use signals of this class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prior_train)

    p = sub.add_parser("separate", help="separate mixtures into two sources")
    p.add_argument("--mixture", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--likelihood", required=True)
    p.add_argument("--prior1", required=True)
    p.add_argument("--prior2", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--refine-steps", type=int, default=0)
    p.add_argument("--refine-alpha", type=float, default=0.1)
    p.add_argument("--refine-backtrack", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="run an experiment config and write a report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="write the synthetic dataset of an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--signals")
    p.add_argument("--pairs")
    p.add_argument("--mixtures")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("oracle-check", help="cross-validate samplers against exact enumeration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ModelFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
