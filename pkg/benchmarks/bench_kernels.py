"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on identical inputs with both backends; the script checks
that the outputs agree bit for bit and prints the per-call time and speedup.
"""

import argparse
import sys
import timeit

import numpy as np

from jointembed import kernels
from jointembed.numerics import pairwise_euclidean


def _pk_inputs(rng, p, k, d=32):
    labels = np.repeat(np.arange(p), k)
    x = rng.standard_normal((p * k, d))
    return pairwise_euclidean(x), labels


def _eval_inputs(rng, n_query, n_gallery, n_ids=50, n_cams=4):
    sims = rng.standard_normal((n_query, n_gallery))
    order = np.argsort(-sims, axis=1, kind="stable")
    return (
        order,
        rng.integers(0, n_ids, n_query),
        rng.integers(0, n_cams, n_query),
        rng.integers(0, n_ids, n_gallery),
        rng.integers(0, n_cams, n_gallery),
    )


def cases(rng):
    dist, labels = _pk_inputs(rng, 4, 8)
    big_dist, big_labels = _pk_inputs(rng, 16, 8)
    ev = _eval_inputs(rng, 200, 600)
    return [
        ("batch_hard_select P4 K8", kernels.batch_hard_select, (dist, labels)),
        ("batch_hard_select P16 K8", kernels.batch_hard_select, (big_dist, big_labels)),
        ("triplet_all P4 K8", kernels.triplet_all, (dist, labels, 0.3, False)),
        ("triplet_all P16 K8", kernels.triplet_all, (big_dist, big_labels, 0.3, False)),
        ("query_metrics 200x600", kernels.query_metrics, ev),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the Python fallback is available", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for name, fn, inputs in cases(rng):
        outs, times = {}, {}
        for b in ("python", "cython"):
            outs[b] = fn(*inputs, backend=b)
            timer = timeit.Timer(lambda b=b: fn(*inputs, backend=b))
            number, _ = timer.autorange()
            times[b] = min(timer.repeat(repeat=args.repeat, number=number)) / number * 1e3
        print(
            f"{name:28s} {times['python']:10.3f} {times['cython']:10.4f} "
            f"{times['python'] / times['cython']:8.1f}  {same(outs['python'], outs['cython'])}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
