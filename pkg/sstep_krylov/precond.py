"""
ILU(0) factorization and right preconditioning.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, spsolve_triangular

from sstep_krylov.errors import IluBreakdownError
from sstep_krylov.sparse_core import SparseMatrix, spmv

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class Ilu0Factors:
    """
    Incomplete LU factors on the pattern of A.

    L_unit holds the strictly lower part (unit diagonal implied), U_upper the
    upper part including the diagonal.
    """
    L_unit: SparseMatrix
    U_upper: SparseMatrix

    @property
    def n(self) -> int:
        return self.U_upper.n_rows

    @cached_property
    def _lower(self) -> sp.csr_matrix:
        # triangular solves expect the diagonal stored in every row
        return (self.L_unit.csr + sp.identity(self.n, format='csr')).tocsr()

    @cached_property
    def _upper(self) -> sp.csr_matrix:
        return self.U_upper.csr

    def product(self) -> np.ndarray:
        """Dense L*U, for checks on small matrices."""
        return self._lower.toarray() @ self._upper.toarray()


def ilu0_factor(A: SparseMatrix) -> Ilu0Factors:
    """
    Compute ILU(0) by row-wise (IKJ) elimination restricted to pattern(A).

    Args:
        A: Square matrix with every diagonal entry present in its pattern

    Returns:
        Ilu0Factors

    Raises:
        ValueError: if A is not square or lacks a stored diagonal entry
        IluBreakdownError: if a pivot falls below PIVOT_TOL * max|diag(A)|
    """
    if A.n_rows != A.n_cols:
        raise ValueError(f"ILU(0) needs a square matrix, got {A.n_rows}x{A.n_cols}")
    n = A.n_rows
    offsets, cols = A.row_offsets, A.col_indices
    vals = A.values.copy()

    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        start, end = offsets[i], offsets[i + 1]
        hit = np.searchsorted(cols[start:end], i)
        if hit == end - start or cols[start + hit] != i:
            raise ValueError(f"row {i} has no diagonal entry in its pattern")
        diag_pos[i] = start + hit

    scale = np.abs(vals[diag_pos]).max() if n else 0.0
    threshold = PIVOT_TOL * scale

    for i in range(n):
        start, end = offsets[i], offsets[i + 1]
        position = {int(c): p for p, c in zip(range(start, end), cols[start:end])}
        for p in range(start, diag_pos[i]):
            k = cols[p]
            vals[p] /= vals[diag_pos[k]]
            factor = vals[p]
            for q in range(diag_pos[k] + 1, offsets[k + 1]):
                target = position.get(int(cols[q]))
                if target is not None:
                    vals[target] -= factor * vals[q]
        if abs(vals[diag_pos[i]]) < threshold or not np.isfinite(vals[diag_pos[i]]):
            raise IluBreakdownError(f"zero pivot {vals[diag_pos[i]]:.3e} in ILU(0)", i)

    factored = sp.csr_matrix((vals, cols.copy(), offsets.copy()), shape=A.shape)
    lower = SparseMatrix.from_scipy(sp.tril(factored, k=-1, format='csr'))
    upper = SparseMatrix.from_scipy(sp.triu(factored, k=0, format='csr'))
    logger.debug("ILU(0) of order %d: %d lower, %d upper entries", n, lower.nnz, upper.nnz)
    return Ilu0Factors(L_unit=lower, U_upper=upper)


def ilu0_apply(F: Ilu0Factors, r: np.ndarray) -> np.ndarray:
    """Solve L U z = r by forward then backward substitution."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.shape[0] != F.n:
        raise ValueError(f"vector of length {r.shape[0]} does not match factors of order {F.n}")
    y = spsolve_triangular(F._lower, r, lower=True, unit_diagonal=True)
    return np.asarray(spsolve_triangular(F._upper, y, lower=False), dtype=np.float64).ravel()


Preconditioner = Union[Ilu0Factors, Callable[[np.ndarray], np.ndarray]]


def as_preconditioner(preconditioner: Optional[Preconditioner]) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """Callable applying K^-1, or None for no preconditioning."""
    if preconditioner is None:
        return None
    if isinstance(preconditioner, Ilu0Factors):
        return lambda v: ilu0_apply(preconditioner, v)
    if callable(preconditioner):
        return preconditioner
    raise ValueError(f"unsupported preconditioner: {type(preconditioner).__name__}")


def right_preconditioned(A: SparseMatrix, F: Preconditioner) -> LinearOperator:
    """The operator v -> A K^-1 v."""
    apply = as_preconditioner(F)
    return LinearOperator(A.shape, matvec=lambda v: spmv(A, apply(np.ravel(v))), dtype=np.float64)
