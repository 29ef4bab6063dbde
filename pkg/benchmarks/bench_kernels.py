"""Compare the compiled and pure-NumPy kernel backends.

Times each hot kernel on identical inputs, checks that both backends return
identical results, and times one end-to-end ``separate`` call per backend.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from lass import _kernels, separator
from lass.codec import encode, fit_codebook
from lass.harness import SourceSpec, generate_dataset, mix
from lass.likelihood import build_counts, normalize
from lass.priors import PriorPair, train_ngram


def kernel_cases(rng):
    codes = rng.normal(size=(64, 4))
    patches = rng.normal(size=(20_000, 4))
    logits = rng.normal(size=(64, 64 * 64))
    u = rng.random(64)
    scores = rng.normal(size=32 * 64 * 64)
    return {
        "nearest_code": lambda m: m.nearest_code(patches, codes),
        "sample_rows_k32": lambda m: m.sample_rows(logits, u, 32),
        "sample_rows_full": lambda m: m.sample_rows(logits, u, logits.shape[1]),
        "top_indices_b32": lambda m: m.top_indices(scores, 32),
    }


def separation_case():
    steps = SourceSpec("steps", "markov_levels", values=(-0.8, -0.3, 0.3, 0.8), persistence=0.8,
                       hold=4, noise=0.03, seed=1)
    tones = SourceSpec("tones", "tone_bank", values=(1 / 32, 1 / 16, 1 / 8), amplitude=0.5,
                       noise=0.03, seed=2)
    x1, x2 = generate_dataset(steps, tones, 200, 256, 7)
    codec = fit_codebook(list(x1) + list(x2) + list(mix(x1, x2)), 64, 4, 7)
    priors = PriorPair(train_ngram([encode(codec, x) for x in x1], 64, 3, 0.1),
                       train_ngram([encode(codec, x) for x in x2], 64, 3, 0.1))
    lik = normalize(build_counts(zip(x1, x2), codec))
    y = mix(*(d[0] for d in generate_dataset(steps, tones, 1, 256, 99)))
    cfg = separator.SeparationConfig(lam=1.0, sampler="topk", k=32, num_candidates=64, seed=7)
    return lambda: separator.separate(y, priors, lik, codec, cfg)


def same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(np.atleast_1d(a), np.atleast_1d(b)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the timings here")
    args = parser.parse_args(argv)

    backends = _kernels.available_backends()
    if len(backends) < 2:
        print(f"only {sorted(backends)} available; build the extension to compare", file=sys.stderr)
    rows = []
    for name, case in kernel_cases(np.random.default_rng(0)).items():
        results = {b: case(mod) for b, mod in backends.items()}
        ref = next(iter(results.values()))
        agree = all(same(ref, r) for r in results.values())
        times = {b: min(timeit.repeat(lambda: case(mod), number=1, repeat=args.repeat))
                 for b, mod in backends.items()}
        rows.append({"case": name, "seconds": times, "identical": agree})

    run = separation_case()
    times = {}
    original = {attr: getattr(_kernels, attr) for attr in ("nearest_code", "sample_rows", "top_indices")}
    try:
        for b, mod in backends.items():
            for attr in original:
                setattr(_kernels, attr, getattr(mod, attr))
            times[b] = min(timeit.repeat(run, number=1, repeat=max(1, args.repeat // 2)))
    finally:
        for attr, fn in original.items():
            setattr(_kernels, attr, fn)
    rows.append({"case": "separate_topk_end_to_end", "seconds": times, "identical": None})

    names = sorted(backends)
    print(f"{'case':<28}" + "".join(f"{n:>12}" for n in names) + "   speedup  identical")
    for row in rows:
        t = row["seconds"]
        speed = t["python"] / t["cython"] if {"python", "cython"} <= t.keys() else float("nan")
        ident = "-" if row["identical"] is None else str(row["identical"])
        print(f"{row['case']:<28}" + "".join(f"{t[n] * 1e3:>10.2f}ms" for n in names)
              + f"   {speed:6.2f}x  {ident}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["identical"] in (True, None) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
