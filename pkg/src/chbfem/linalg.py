"""Sparse assembly buffers and direct linear solves.

Storage and factorization are delegated to scipy.sparse; this module pins
down the contracts the rest of the code relies on: duplicate triplets sum
on compression, compressed rows are sorted, and every solve is verified
against the residual tolerance below.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# relative residual every successful solve must satisfy
SOLVE_RTOL = 1e-10


class LinearSolveFailure(Exception):
    """Factorization breakdown or a solve that missed the residual contract."""


class TripletBuffer:
    """Accumulates (row, col, value) contributions; duplicates sum on compress."""

    def __init__(self):
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, row: int, col: int, value: float) -> None:
        self._rows.append(np.asarray([row], dtype=np.int64))
        self._cols.append(np.asarray([col], dtype=np.int64))
        self._vals.append(np.asarray([value], dtype=np.float64))

    def add_block(self, rows, cols, values) -> None:
        """Append flattened index/value arrays of equal length."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have matching sizes")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(values)

    def arrays(self):
        if self._rows:
            return (np.concatenate(self._rows), np.concatenate(self._cols),
                    np.concatenate(self._vals))
        empty_i = np.empty(0, dtype=np.int64)
        return empty_i, empty_i.copy(), np.empty(0, dtype=np.float64)

    def __len__(self) -> int:
        return sum(len(r) for r in self._rows)


class SparseMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free columns."""

    def __init__(self, csr: sp.csr_matrix):
        csr = csr.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr

    @property
    def shape(self):
        return self._csr.shape

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr


def compress(buffer: TripletBuffer, nrows: int, ncols: int) -> SparseMatrix:
    """Compress a triplet buffer, summing duplicate entries.

    Raises
    ------
    ValueError
        If any index falls outside [0, nrows) x [0, ncols).
    """
    rows, cols, vals = buffer.arrays()
    if len(rows) and (rows.min() < 0 or rows.max() >= nrows):
        raise ValueError("row index out of range")
    if len(cols) and (cols.min() < 0 or cols.max() >= ncols):
        raise ValueError("column index out of range")
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    return SparseMatrix(coo.tocsr())


def solve_linear(A: SparseMatrix | sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve with partial pivoting and a residual check.

    Handles nonsymmetric and indefinite (saddle-point) systems.  The
    returned x satisfies ||b - A x||_2 / max(||b||_2, 1) <= 1e-10, else
    LinearSolveFailure is raised; singular factorizations raise the same
    error so callers can tell linear breakdown apart from nonlinear
    non-convergence.
    """
    mat = A.to_scipy() if isinstance(A, SparseMatrix) else A.tocsr()
    nrows, ncols = mat.shape
    if nrows != ncols:
        raise LinearSolveFailure(f"matrix is not square: {mat.shape}")
    b = np.asarray(b, dtype=np.float64)
    try:
        lu = spla.splu(mat.tocsc())
        x = lu.solve(b)
    except RuntimeError as exc:  # raised by SuperLU on singular factors
        raise LinearSolveFailure(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("solve produced non-finite entries")
    residual = np.linalg.norm(b - mat @ x) / max(np.linalg.norm(b), 1.0)
    if residual > SOLVE_RTOL:
        raise LinearSolveFailure(
            f"relative residual {residual:.3e} exceeds {SOLVE_RTOL:.1e}")
    return x


def norms(v: np.ndarray) -> tuple[float, float]:
    """(l2, linf) norms of a vector; (0, 0) for the empty vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0, 0.0
    return float(np.linalg.norm(v)), float(np.max(np.abs(v)))
