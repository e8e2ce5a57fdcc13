"""
Small dense kernels: s x s Gram solves, block Cholesky of block-diagonal
Gram matrices, and Givens least squares for (block) Hessenberg matrices.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla
from scipy.linalg.blas import drotg

from sstep_krylov.errors import GramBreakdownError, RankDeficiencyError

logger = logging.getLogger(__name__)

# Cholesky pivot below CHOLESKY_EPS * trace / s switches to pivoted LDL^T
CHOLESKY_EPS = 1e-13
# min/max pivot ratio below which a Gram matrix is numerically singular
SINGULAR_RATIO = 1e-15
RANK_TOL = 1e-14


@dataclass
class GramMatrix:
    """Symmetric s x s matrix of inner products."""
    entries: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.entries, dtype=np.float64))
        if W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise ValueError(f"a Gram matrix must be square, got shape {W.shape}")
        scale = max(np.abs(W).max(), np.finfo(float).tiny)
        if np.abs(W - W.T).max() > 1e-12 * scale:
            raise ValueError("Gram matrix is not symmetric")
        self.entries = W

    @property
    def s(self) -> int:
        return self.entries.shape[0]


@dataclass
class GramFactorization:
    """Decomposition of a diagonally equilibrated Gram matrix."""
    kind: str
    scale: np.ndarray
    pivot_ratio: float
    cho: Optional[Tuple[np.ndarray, bool]] = None
    ldl: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve W x = rhs for a vector or for every column of a matrix."""
        rhs = np.asarray(rhs, dtype=np.float64)
        vector = rhs.ndim == 1
        b = rhs[:, None] if vector else rhs
        if b.shape[0] != self.scale.size:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {self.scale.size}")
        scaled = b * self.scale[:, None]
        if self.kind == 'cholesky':
            z = sla.cho_solve(self.cho, scaled)
        else:
            lu, d = self.ldl
            z = np.linalg.solve(lu.T, np.linalg.solve(d, np.linalg.solve(lu, scaled)))
        x = z * self.scale[:, None]
        return x[:, 0] if vector else x


@dataclass
class SymSolveResult:
    """Solution of a Gram system together with its conditioning estimate."""
    solution: np.ndarray
    pivot_ratio: float
    kind: str


def _entries(W: Union[GramMatrix, np.ndarray]) -> np.ndarray:
    return W.entries if isinstance(W, GramMatrix) else np.atleast_2d(np.asarray(W, dtype=np.float64))


def factor_gram(W: Union[GramMatrix, np.ndarray], index: Optional[int] = None) -> GramFactorization:
    """
    Decompose a symmetric Gram matrix.

    The matrix is scaled to unit diagonal first. Cholesky is used while every
    pivot exceeds CHOLESKY_EPS * trace / s; otherwise symmetric-pivoted LDL^T.

    Args:
        W: Symmetric s x s matrix
        index: Block/iteration index reported on breakdown

    Returns:
        GramFactorization ready for repeated solves

    Raises:
        GramBreakdownError: if the pivot ratio drops below SINGULAR_RATIO
    """
    W = _entries(W)
    s = W.shape[0]
    diag = np.diag(W)
    if np.any(~np.isfinite(W)) or np.any(diag <= 0.0):
        raise GramBreakdownError("Gram matrix has a non-positive diagonal", index)
    scale = 1.0 / np.sqrt(diag)
    Ws = W * np.outer(scale, scale)
    threshold = CHOLESKY_EPS * np.trace(Ws) / s

    try:
        c = sla.cholesky(Ws, lower=True)
        pivots = np.diag(c) ** 2
        if pivots.min() > threshold:
            ratio = float(pivots.min() / pivots.max())
            if ratio < SINGULAR_RATIO:
                raise GramBreakdownError(f"Gram matrix numerically singular (pivot ratio {ratio:.2e})", index)
            return GramFactorization('cholesky', scale, ratio, cho=(c, True))
    except sla.LinAlgError:
        pass

    lu, d, _ = sla.ldl(Ws, lower=True)
    pivots = np.abs(np.linalg.eigvalsh(d))
    ratio = float(pivots.min() / pivots.max()) if pivots.max() > 0 else 0.0
    if ratio < SINGULAR_RATIO:
        raise GramBreakdownError(f"Gram matrix numerically singular (pivot ratio {ratio:.2e})", index)
    logger.debug("Gram matrix of order %d factored by LDL^T (pivot ratio %.2e)", s, ratio)
    return GramFactorization('ldlt', scale, ratio, ldl=(lu, d))


def sym_solve(W: Union[GramMatrix, np.ndarray], rhs: np.ndarray) -> SymSolveResult:
    """
    Solve W x = rhs for symmetric W (Scalar1/Scalar2).

    Args:
        W: Gram matrix
        rhs: Vector of length s, or s x q matrix of right-hand sides

    Returns:
        SymSolveResult with solution, pivot ratio and factorization kind
    """
    factor = factor_gram(W)
    return SymSolveResult(factor.solve(rhs), factor.pivot_ratio, factor.kind)


@dataclass
class BlockCholeskyFactor:
    """
    Block-diagonal factor L with L^T L = D.

    Each block is upper triangular, so L e_1 = sqrt(D[0, 0]) e_1.
    """
    blocks: List[np.ndarray]
    trailing: float

    @property
    def order(self) -> int:
        return sum(b.shape[0] for b in self.blocks) + 1

    def dense(self) -> np.ndarray:
        return sla.block_diag(*self.blocks, np.array([[self.trailing]]))


def block_cholesky(
    blocks: Sequence[Union[GramMatrix, np.ndarray]],
    trailing: float,
) -> BlockCholeskyFactor:
    """
    Factor D = diag(W_1, ..., W_k, trailing).

    Args:
        blocks: Symmetric positive definite diagonal blocks
        trailing: Final scalar entry (squared norm of the next seed vector)

    Returns:
        BlockCholeskyFactor

    Raises:
        GramBreakdownError: naming the first block that is not positive definite
    """
    factors = []
    for i, W in enumerate(blocks):
        try:
            factors.append(sla.cholesky(_entries(W), lower=False))
        except sla.LinAlgError:
            raise GramBreakdownError("diagonal block is not positive definite", i) from None
    if not trailing > 0.0:
        raise GramBreakdownError("trailing entry is not positive", len(factors))
    return BlockCholeskyFactor(blocks=factors, trailing=float(np.sqrt(trailing)))


@dataclass
class BlockHessenberg:
    """
    The ((k+1)s) x (ks) matrix of the s-step Arnoldi relation.

    Rows of block k+1 hold a single entry, in its first row and the last
    column.
    """
    s: int
    k: int
    entries: np.ndarray

    @classmethod
    def zeros(cls, s: int, k: int) -> 'BlockHessenberg':
        return cls(s=s, k=k, entries=np.zeros(((k + 1) * s, k * s)))

    def truncated(self, k: int) -> 'BlockHessenberg':
        """Leading block columns 1..k."""
        s = self.s
        return BlockHessenberg(s=s, k=k, entries=self.entries[:(k + 1) * s, :k * s].copy())

    def active(self) -> np.ndarray:
        """The (ks+1) x ks part that can be nonzero."""
        ks = self.k * self.s
        return self.entries[:ks + 1, :ks]


@dataclass
class GivensLeastSquares:
    """
    Incremental QR by Givens rotations for min || beta e_1 - G y ||.

    Columns are appended one at a time; every stored rotation is applied to
    the new column before its subdiagonal entries are annihilated, so the
    attained residual is available after each column.
    """
    beta: float
    rotations: List[Tuple[int, int, float, float]] = field(default_factory=list)
    r_columns: List[np.ndarray] = field(default_factory=list)
    g: np.ndarray = None
    residual_norms: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.g is None:
            self.g = np.array([float(self.beta)])
        self.residual_norms.append(float(self.beta))

    @property
    def n_columns(self) -> int:
        return len(self.r_columns)

    def add_column(self, column: np.ndarray) -> float:
        """
        Append a column of G and return the attained residual norm.

        Raises:
            RankDeficiencyError: if the new diagonal entry of R is negligible
        """
        col = np.array(column, dtype=np.float64)
        j = self.n_columns
        rows = max(col.size, j + 1, self.g.size)
        if col.size < rows:
            col = np.concatenate([col, np.zeros(rows - col.size)])
        if self.g.size < rows:
            self.g = np.concatenate([self.g, np.zeros(rows - self.g.size)])
        col_norm = np.linalg.norm(col)

        for i1, i2, c, s in self.rotations:
            a, b = col[i1], col[i2]
            col[i1] = c * a + s * b
            col[i2] = -s * a + c * b

        for i in range(rows - 1, j, -1):
            if col[i] == 0.0:
                continue
            c, s = drotg(col[i - 1], col[i])
            a, b = col[i - 1], col[i]
            col[i - 1] = c * a + s * b
            col[i] = 0.0
            ga, gb = self.g[i - 1], self.g[i]
            self.g[i - 1] = c * ga + s * gb
            self.g[i] = -s * ga + c * gb
            self.rotations.append((i - 1, i, c, s))

        if abs(col[j]) <= RANK_TOL * col_norm or col_norm == 0.0:
            raise RankDeficiencyError("least-squares matrix lost full column rank", j)
        self.r_columns.append(col[:j + 1].copy())
        residual = float(np.linalg.norm(self.g[j + 1:]))
        self.residual_norms.append(residual)
        return residual

    @property
    def residual(self) -> float:
        return self.residual_norms[-1]

    def solve(self, n_columns: Optional[int] = None) -> np.ndarray:
        """Minimizer using the first n_columns columns (all by default)."""
        j = self.n_columns if n_columns is None else n_columns
        if j == 0:
            return np.zeros(0)
        R = np.zeros((j, j))
        for col_index in range(j):
            R[:col_index + 1, col_index] = self.r_columns[col_index]
        return sla.solve_triangular(R, self.g[:j], lower=False)


def hessenberg_lsq(G: Union[BlockHessenberg, np.ndarray], beta: float) -> Tuple[np.ndarray, float]:
    """
    Solve min_y || beta e_1 - G y ||_2.

    Args:
        G: (Block) Hessenberg matrix with full column rank
        beta: Non-negative scale of e_1

    Returns:
        Tuple of (y, attained residual norm)
    """
    dense = G.active() if isinstance(G, BlockHessenberg) else np.atleast_2d(np.asarray(G, dtype=np.float64))
    lsq = GivensLeastSquares(beta)
    for j in range(dense.shape[1]):
        lsq.add_column(dense[:, j])
    return lsq.solve(), lsq.residual
