"""Compare the numba and numpy kernel backends on scoring and one training pass.

    python benchmarks/bench_kernels.py [--entities 40000] [--triples 90000] [--dim 50]
"""
import argparse
import time

import numpy as np

from kgcal.kernels import numba_impl, numpy_impl

KINDS = {"transe": 0, "transh": 1, "distmult": 2, "complex": 3}


def _params(kind, n_ent, n_rel, dim, rng):
    width = 2 * dim if kind == "complex" else dim
    ent = rng.normal(size=(n_ent, width))
    rel = rng.normal(size=(n_rel, width))
    if kind == "transh":
        nrm = rng.normal(size=(n_rel, width))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    else:
        nrm = np.zeros((1, 1))
    return ent, rel, nrm


def _epoch(be, code, ent, rel, nrm, triples, negatives, batch, rng):
    g_ent, g_rel, g_nrm = np.zeros_like(ent), np.zeros_like(rel), np.zeros_like(nrm)
    k = rel.shape[0]
    for lo in range(0, len(triples), batch):
        b = triples[lo:lo + batch]
        heads, rels, tails = (np.ascontiguousarray(b[:, i]) for i in range(3))
        negs = (rels[:, None] + rng.integers(1, k, size=(len(b), negatives))) % k
        g_ent[:] = 0.0
        g_rel[:] = 0.0
        g_nrm[:] = 0.0
        be.accumulate_grads(code, 0, 1.0, ent, rel, nrm, heads, rels, tails, negs,
                            g_ent, g_rel, g_nrm, 1.0 / len(b))


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=40000)
    ap.add_argument("--relations", type=int, default=11)
    ap.add_argument("--triples", type=int, default=90000)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--negatives", type=int, default=5)
    ap.add_argument("--batch", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    triples = np.stack([
        rng.integers(0, args.entities, args.triples),
        rng.integers(0, args.relations, args.triples),
        rng.integers(0, args.entities, args.triples),
    ], axis=1)
    rels = np.arange(args.relations, dtype=np.int64)

    print(f"{'model':<9} {'task':<8} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for kind, code in KINDS.items():
        ent, rel, nrm = _params(kind, args.entities, args.relations, args.dim, rng)
        heads = np.ascontiguousarray(triples[:, 0])
        tails = np.ascontiguousarray(triples[:, 2])
        tasks = {
            "score": lambda be: be.score_pairs(code, ent, rel, nrm, heads, tails, rels),
            "epoch": lambda be: _epoch(be, code, ent.copy(), rel.copy(), nrm.copy(), triples,
                                       args.negatives, args.batch, np.random.default_rng(1)),
        }
        for task, fn in tasks.items():
            fn(numba_impl)  # compile
            t_nb = _best(lambda: fn(numba_impl), args.repeat)
            t_np = _best(lambda: fn(numpy_impl), args.repeat)
            print(f"{kind:<9} {task:<8} {t_nb:>9.3f} {t_np:>9.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
