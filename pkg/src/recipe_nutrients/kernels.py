"""Sparse CSR kernels with a numba fast path and a pure-numpy fallback.

The ridge solver spends essentially all of its time in the two matrix-vector
products below, so they are jitted with numba when available. Set

    RECIPE_NUTRIENTS_BACKEND=numpy

to force the vectorized numpy implementations instead (the default "numba"
silently falls back to numpy when numba cannot be imported). Both variants
stay importable so benchmarks/bench_kernels.py can compare them directly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np


# --- pure-numpy implementations -------------------------------------------

def csr_matvec_numpy(data: np.ndarray, indices: np.ndarray, indptr: np.ndarray,
                     x: np.ndarray) -> np.ndarray:
    """y = A @ x for CSR A. Cumulative-sum segment reduction; handles empty rows."""
    products = data * x[indices]
    sums = np.concatenate(([0.0], np.cumsum(products)))
    return sums[indptr[1:]] - sums[indptr[:-1]]


def csr_rmatvec_numpy(data: np.ndarray, indices: np.ndarray, indptr: np.ndarray,
                      y: np.ndarray, n_cols: int) -> np.ndarray:
    """z = A.T @ y for CSR A, scattered with bincount."""
    row_counts = np.diff(indptr)
    weights = data * np.repeat(y, row_counts)
    return np.bincount(indices, weights=weights, minlength=n_cols)


# --- numba implementations --------------------------------------------------

try:
    from numba import njit

    @njit(cache=True)
    def _matvec_jit(data, indices, indptr, x, out):  # pragma: no cover - jitted
        for i in range(out.shape[0]):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] = acc

    @njit(cache=True)
    def _rmatvec_jit(data, indices, indptr, y, out):  # pragma: no cover - jitted
        for i in range(y.shape[0]):
            yi = y[i]
            for k in range(indptr[i], indptr[i + 1]):
                out[indices[k]] += data[k] * yi

    def csr_matvec_numba(data, indices, indptr, x):
        out = np.empty(len(indptr) - 1, dtype=np.float64)
        _matvec_jit(data, indices, indptr, x, out)
        return out

    def csr_rmatvec_numba(data, indices, indptr, y, n_cols):
        out = np.zeros(n_cols, dtype=np.float64)
        _rmatvec_jit(data, indices, indptr, y, out)
        return out

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    csr_matvec_numba = None
    csr_rmatvec_numba = None
    NUMBA_AVAILABLE = False


def _select_backend() -> str:
    requested = os.environ.get("RECIPE_NUTRIENTS_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(
            f"RECIPE_NUTRIENTS_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not NUMBA_AVAILABLE:
        return "numpy"
    return requested


BACKEND = _select_backend()

if BACKEND == "numba":
    csr_matvec = csr_matvec_numba
    csr_rmatvec = csr_rmatvec_numba
else:
    csr_matvec = csr_matvec_numpy
    csr_rmatvec = csr_rmatvec_numpy


# --- CSR container -----------------------------------------------------------

@dataclass
class CsrMatrix:
    data: np.ndarray
    indices: np.ndarray
    indptr: np.ndarray
    shape: tuple[int, int]

    @property
    def nnz(self) -> int:
        return len(self.data)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return csr_matvec(self.data, self.indices, self.indptr, x)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return csr_rmatvec(self.data, self.indices, self.indptr, y, self.shape[1])

    def toarray(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=np.float64)
        for i in range(self.shape[0]):
            start, stop = self.indptr[i], self.indptr[i + 1]
            dense[i, self.indices[start:stop]] = self.data[start:stop]
        return dense


def stack_rows(vectors: Sequence, dim: int | None = None) -> CsrMatrix:
    """Stack SparseVector rows into one CsrMatrix."""
    if not vectors:
        raise ValueError("cannot stack zero rows")
    if dim is None:
        dim = vectors[0].dim
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, vec in enumerate(vectors):
        if vec.dim != dim:
            raise ValueError(f"row {i} has dim {vec.dim}, expected {dim}")
        indptr[i + 1] = indptr[i] + vec.nnz
    data = np.empty(indptr[-1], dtype=np.float64)
    indices = np.empty(indptr[-1], dtype=np.int64)
    for i, vec in enumerate(vectors):
        start, stop = indptr[i], indptr[i + 1]
        data[start:stop] = vec.values
        indices[start:stop] = vec.indices
    return CsrMatrix(data=data, indices=indices, indptr=indptr, shape=(len(vectors), dim))


def from_dense(matrix: np.ndarray) -> CsrMatrix:
    """CSR view of a dense matrix (test and benchmark convenience)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    rows, cols = np.nonzero(matrix)
    indptr = np.zeros(matrix.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return CsrMatrix(data=matrix[rows, cols], indices=cols.astype(np.int64),
                     indptr=indptr, shape=matrix.shape)
