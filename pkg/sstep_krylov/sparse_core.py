"""
Compressed-sparse-row storage, matrix-vector products and blocked vector
kernels shared by all solvers.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from sstep_krylov.accounting import OpCounter

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Nonsymmetric operator stored in compressed sparse row form."""
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, 'row_offsets', offsets)
        object.__setattr__(self, 'col_indices', cols)
        object.__setattr__(self, 'values', vals)

        if offsets.shape != (self.n_rows + 1,):
            raise ValueError(
                f"row_offsets has length {offsets.size}, expected {self.n_rows + 1}"
            )
        if offsets[0] != 0 or np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must start at 0 and be non-decreasing")
        if offsets[-1] != vals.size or cols.size != vals.size:
            raise ValueError(
                f"row_offsets ends at {offsets[-1]} but there are {vals.size} values "
                f"and {cols.size} column indices"
            )
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ValueError(f"column index out of range for {self.n_cols} columns")
        if cols.size > 1:
            starts = np.zeros(cols.size, dtype=bool)
            starts[offsets[:-1][offsets[:-1] < cols.size]] = True
            within_row = ~starts[1:]
            bad = within_row & (np.diff(cols) <= 0)
            if np.any(bad):
                row = int(np.searchsorted(offsets, np.argmax(bad) + 1, side="right") - 1)
                raise ValueError(f"column indices of row {row} are not strictly increasing")

    @classmethod
    def from_scipy(cls, matrix) -> 'SparseMatrix':
        """Build from any scipy sparse matrix; explicit zeros are kept."""
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(
            n_rows=csr.shape[0],
            n_cols=csr.shape[1],
            row_offsets=csr.indptr,
            col_indices=csr.indices,
            values=csr.data,
        )

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> 'SparseMatrix':
        """Build from a dense array, dropping exact zeros."""
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """scipy view sharing this matrix's arrays."""
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def row(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row i."""
        start, end = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[start:end], self.values[start:end]


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """
    Sparse matrix-vector product y = A x.

    Entries of each row are accumulated in ascending column order.

    Args:
        A: Sparse operator
        x: Dense vector of length A.n_cols

    Returns:
        Dense vector of length A.n_rows
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != A.n_cols:
        raise ValueError(f"vector of length {x.shape} does not match {A.n_cols} columns")
    return A.csr @ x


Operator = Union[SparseMatrix, LinearOperator, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def as_operator(op: Operator, n: Optional[int] = None) -> LinearOperator:
    """Wrap a SparseMatrix, dense/sparse array or callable as a LinearOperator."""
    if isinstance(op, LinearOperator):
        return op
    if isinstance(op, SparseMatrix):
        return LinearOperator(op.shape, matvec=lambda v: spmv(op, np.ravel(v)), dtype=np.float64)
    if callable(op) and not hasattr(op, 'shape'):
        if n is None:
            raise ValueError("a callable operator needs an explicit dimension")
        return LinearOperator((n, n), matvec=lambda v: op(np.ravel(v)), dtype=np.float64)
    return aslinearoperator(op)


class CountedOperator:
    """Applies an operator and counts every application as one matvec."""

    def __init__(self, op: Operator, counter: Optional[OpCounter] = None, n: Optional[int] = None):
        self.op = as_operator(op, n)
        self.counter = counter if counter is not None else OpCounter()
        self.shape = self.op.shape
        self.dtype = np.dtype(np.float64)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        self.counter.matvec()
        return np.array(self.op.matvec(v), dtype=np.float64).ravel()

    matvec = __call__


@dataclass
class DirectionBlock:
    """An n x s block of vectors, stored column-major."""
    columns: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.float64)
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.ndim != 2 or cols.shape[1] < 1:
            raise ValueError(f"a direction block needs at least one column, got shape {cols.shape}")
        self.columns = np.asfortranarray(cols)

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def s(self) -> int:
        return self.columns.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.columns[:, j]


Block = Union[DirectionBlock, np.ndarray]


def _columns(block: Block) -> np.ndarray:
    if isinstance(block, DirectionBlock):
        return block.columns
    cols = np.asarray(block, dtype=np.float64)
    return cols[:, None] if cols.ndim == 1 else cols


def krylov_block(op, v: np.ndarray, s: int) -> DirectionBlock:
    """
    Monomial Krylov block [v, Av, ..., A^(s-1) v].

    Args:
        op: Callable applying A (a CountedOperator counts its own matvecs)
        v: Starting vector, used unchanged as column 1
        s: Number of columns

    Returns:
        DirectionBlock with s columns
    """
    if s < 1:
        raise ValueError(f"block width must be at least 1, got {s}")
    v = np.asarray(v, dtype=np.float64)
    apply = op if callable(op) else as_operator(op).matvec
    cols = np.empty((v.shape[0], s), dtype=np.float64, order='F')
    cols[:, 0] = v
    for j in range(1, s):
        cols[:, j] = apply(cols[:, j - 1])
    return DirectionBlock(cols)


def block_gram(
    U: Block,
    V: Optional[Block] = None,
    symmetrize: bool = False,
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    """
    Matrix of inner products G[j, l] = dot(U_j, V_l).

    With V omitted the self-Gram U^T U is formed and symmetrized by
    averaging with its transpose.

    Args:
        U: Left block
        V: Right block (defaults to U)
        symmetrize: Average with the transpose (implied when V is None)
        counter: Optional operation counter

    Returns:
        Dense (U.s x V.s) array
    """
    left = _columns(U)
    right = left if V is None else _columns(V)
    if left.shape[0] != right.shape[0]:
        raise ValueError(f"block lengths differ: {left.shape[0]} vs {right.shape[0]}")
    gram = left.T @ right
    if V is None or symmetrize:
        if gram.shape[0] != gram.shape[1]:
            raise ValueError("only square Gram matrices can be symmetrized")
        gram = 0.5 * (gram + gram.T)
        if counter is not None:
            counter.dot(gram.shape[0] * (gram.shape[0] + 1) // 2)
    elif counter is not None:
        counter.dot(gram.size)
    return gram


def block_axpy(Y: Block, X: Block, C: np.ndarray, counter: Optional[OpCounter] = None) -> DirectionBlock:
    """
    Block update Y + X C.

    Args:
        Y: n x p block
        X: n x q block
        C: q x p coefficients

    Returns:
        New DirectionBlock; inputs are not modified
    """
    y = _columns(Y)
    x = _columns(X)
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 1:
        C = C[:, None]
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"block lengths differ: {y.shape[0]} vs {x.shape[0]}")
    if C.shape != (x.shape[1], y.shape[1]):
        raise ValueError(f"coefficients of shape {C.shape} do not map {x.shape[1]} onto {y.shape[1]} columns")
    result = np.array(y, dtype=np.float64, order='F', copy=True)
    for j in range(result.shape[1]):
        result[:, j] += x @ C[:, j]
    if counter is not None:
        counter.update(C.size)
    return DirectionBlock(result)
