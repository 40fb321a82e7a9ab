#!/usr/bin/env python3
"""Compare the numba and pure-numpy CSR kernels on synthetic training-shaped data.

Usage:
    python benchmarks/bench_kernels.py [--rows 12000] [--cols 20000] [--nnz-per-row 600]

Times the two matrix-vector products that dominate ridge training, plus one
full conjugate-gradient solve per backend. The numpy numbers are what you get
with RECIPE_NUTRIENTS_BACKEND=numpy; the numba numbers need numba installed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from recipe_nutrients import kernels
from recipe_nutrients.dataset import NutrientVector
from recipe_nutrients.kernels import (
    CsrMatrix,
    csr_matvec_numba,
    csr_matvec_numpy,
    csr_rmatvec_numba,
    csr_rmatvec_numpy,
)
from recipe_nutrients.ridge import RidgeConfig, train


def synthetic_csr(rows: int, cols: int, nnz_per_row: int, seed: int = 0) -> CsrMatrix:
    rng = np.random.default_rng(seed)
    indptr = np.arange(rows + 1, dtype=np.int64) * nnz_per_row
    indices = np.empty(rows * nnz_per_row, dtype=np.int64)
    for i in range(rows):
        indices[i * nnz_per_row:(i + 1) * nnz_per_row] = np.sort(
            rng.choice(cols, size=nnz_per_row, replace=False))
    data = rng.random(rows * nnz_per_row)
    return CsrMatrix(data=data, indices=indices, indptr=indptr, shape=(rows, cols))


def time_fn(fn, repeats: int = 10) -> float:
    fn()  # warmup (also triggers jit compilation)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=12000)
    parser.add_argument("--cols", type=int, default=20000)
    parser.add_argument("--nnz-per-row", type=int, default=600)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()

    matrix = synthetic_csr(args.rows, args.cols, args.nnz_per_row)
    x = np.random.default_rng(1).random(args.cols)
    y = np.random.default_rng(2).random(args.rows)
    print(f"matrix: {args.rows} x {args.cols}, nnz {matrix.nnz:,} "
          f"(active backend: {kernels.BACKEND})\n")

    variants = [("numpy", csr_matvec_numpy, csr_rmatvec_numpy)]
    if kernels.NUMBA_AVAILABLE:
        variants.append(("numba", csr_matvec_numba, csr_rmatvec_numba))
    else:
        print("numba unavailable; benchmarking numpy only\n")

    results = {}
    for name, matvec, rmatvec in variants:
        t_mv = time_fn(lambda: matvec(matrix.data, matrix.indices, matrix.indptr, x),
                       args.repeats)
        t_rmv = time_fn(lambda: rmatvec(matrix.data, matrix.indices, matrix.indptr, y,
                                        args.cols), args.repeats)
        results[name] = (t_mv, t_rmv)
        print(f"{name:>6}  matvec {t_mv * 1e3:8.2f} ms   rmatvec {t_rmv * 1e3:8.2f} ms")

    if len(results) == 2:
        mv_np, rmv_np = results["numpy"]
        mv_nb, rmv_nb = results["numba"]
        print(f"\nspeedup  matvec x{mv_np / mv_nb:.2f}   rmatvec x{rmv_np / rmv_nb:.2f}")

    # one full CG training solve with whichever backend is active
    labels = [NutrientVector(energy=0, fat=v, protein=v, salt=0, saturates=v, sugars=v)
              for v in np.abs(y)]
    start = time.perf_counter()
    model = train(matrix, labels, targets=["fat"],
                  config=RidgeConfig(alpha=1.0, solver_tol=1e-8, max_iterations=200))
    elapsed = time.perf_counter() - start
    note = f" ({len(model.warnings)} warnings)" if model.warnings else ""
    print(f"\nfull CG solve (1 target, {kernels.BACKEND} backend): {elapsed:.2f} s{note}")


if __name__ == "__main__":
    main()
