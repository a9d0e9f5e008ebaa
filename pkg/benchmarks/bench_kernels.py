"""Time one training batch on the compiled and numpy kernels.

    python benchmarks/bench_kernels.py [--dim 128] [--batch 256] [--negatives 64]
"""

import argparse
import timeit

import numpy as np

from kgebench.kernels import get_backend
from kgebench.models import ModelConfig, ModelKind, init
from kgebench.trainer import sample_batch


def bench(kind, backend, dim, batch, negatives, entities=5000, relations=20, repeat=5):
    cfg = ModelConfig(kind, dim=dim)
    table = init(cfg, entities, relations, seed=0)
    rng = np.random.default_rng(0)
    pos = np.stack(
        [rng.integers(0, entities, batch), rng.integers(0, relations, batch), rng.integers(0, entities, batch)],
        axis=1,
    ).astype(np.int64)
    neg, flip = sample_batch(pos, negatives, entities, rng)
    flip = flip.astype(np.uint8)

    def step():
        # small lr keeps the table stable across repeats
        backend.train_batch(kind.code, table.entity, table.relation, pos, neg, flip,
                            cfg.margin, cfg.p_norm, 1.0, 0.0, 1e-6)

    step()
    return min(timeit.repeat(step, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--negatives", type=int, default=64)
    args = ap.parse_args()
    try:
        compiled = get_backend("cython")
    except ImportError:
        compiled = None
    python = get_backend("python")
    print(f"dim={args.dim} batch={args.batch} negatives={args.negatives}")
    print(f"{'model':<10}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for kind in ModelKind:
        tp = bench(kind, python, args.dim, args.batch, args.negatives)
        if compiled is None:
            print(f"{kind.value:<10}{'n/a':>12}{tp * 1e3:>12.2f}{'':>10}")
            continue
        tc = bench(kind, compiled, args.dim, args.batch, args.negatives)
        print(f"{kind.value:<10}{tc * 1e3:>12.2f}{tp * 1e3:>12.2f}{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
