"""
Convection-diffusion test problems on the unit square.

    -(b u_x)_x - (c u_y)_y + (d u)_x + (e u)_y + f u = g,   u = u_true on the boundary

discretized with the five-point stencil: conservative differences with
midpoint coefficients for diffusion, central differences of d*u and e*u for
convection. The manufactured solution is u = x e^{xy} sin(pi x) sin(pi y).
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Protocol, Tuple

import numpy as np
import scipy.sparse as sp

from sstep_krylov.sparse_core import SparseMatrix

logger = logging.getLogger(__name__)

TERMS: FrozenSet[str] = frozenset({'diffusion', 'convection', 'reaction'})
DEFAULT_BETA = 1.0
DEFAULT_GAMMA = 50.0
SCHEME = "five-point; conservative midpoint diffusion; central convection of d*u, e*u"


class CoefficientField(Protocol):
    """Coefficient functions b, c, d, e, f and the derivatives the source term needs."""

    def b(self, x, y): ...
    def c(self, x, y): ...
    def d(self, x, y): ...
    def e(self, x, y): ...
    def f(self, x, y): ...
    def b_x(self, x, y): ...
    def c_y(self, x, y): ...
    def d_x(self, x, y): ...
    def e_y(self, x, y): ...


@dataclass(frozen=True)
class ConvectionDiffusionCoefficients:
    """b = e^{-xy}, c = e^{xy}, d = beta(x+y), e = gamma(x+y), f = 1/(1+xy)."""
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA

    def b(self, x, y):
        return np.exp(-x * y)

    def c(self, x, y):
        return np.exp(x * y)

    def d(self, x, y):
        return self.beta * (x + y)

    def e(self, x, y):
        return self.gamma * (x + y)

    def f(self, x, y):
        return 1.0 / (1.0 + x * y)

    def b_x(self, x, y):
        return -y * np.exp(-x * y)

    def c_y(self, x, y):
        return x * np.exp(x * y)

    def d_x(self, x, y):
        return self.beta + 0.0 * x

    def e_y(self, x, y):
        return self.gamma + 0.0 * y


@dataclass(frozen=True)
class ConstantCoefficients:
    """Spatially constant coefficients (b = c = 1 with the rest zero is the Laplacian)."""
    b0: float = 1.0
    c0: float = 1.0
    d0: float = 0.0
    e0: float = 0.0
    f0: float = 0.0

    def b(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.b0)

    def c(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.c0)

    def d(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.d0)

    def e(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.e0)

    def f(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.f0)

    def b_x(self, x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    c_y = d_x = e_y = b_x


def coefficients(x: float, y: float, beta: float = DEFAULT_BETA,
                 gamma: float = DEFAULT_GAMMA) -> Tuple[float, float, float, float, float]:
    """Evaluate (b, c, d, e, f) of the standard problem at one point."""
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"point ({x}, {y}) lies outside the unit square")
    field_ = ConvectionDiffusionCoefficients(beta, gamma)
    return tuple(float(fn(x, y)) for fn in (field_.b, field_.c, field_.d, field_.e, field_.f))


@dataclass(frozen=True)
class ProblemSpec:
    """Grid size and coefficient choice for one test problem."""
    nx: int
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    terms: FrozenSet[str] = TERMS
    coefficient_field: Any = None

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 1:
            raise ValueError(f"nx must be a positive integer, got {self.nx}")
        terms = frozenset(self.terms)
        unknown = terms - TERMS
        if unknown:
            raise ValueError(f"unknown terms: {sorted(unknown)}")
        object.__setattr__(self, 'terms', terms)
        if self.coefficient_field is None:
            object.__setattr__(self, 'coefficient_field',
                               ConvectionDiffusionCoefficients(self.beta, self.gamma))

    @property
    def h(self) -> float:
        return 1.0 / (self.nx + 1)

    @property
    def n(self) -> int:
        return self.nx * self.nx

    @classmethod
    def laplacian(cls, nx: int) -> 'ProblemSpec':
        return cls(nx=nx, beta=0.0, gamma=0.0, terms=frozenset({'diffusion'}),
                   coefficient_field=ConstantCoefficients())


@dataclass
class DiscretizedProblem:
    """Assembled system A x = f with the analytic solution and starting vector."""
    A: SparseMatrix
    f: np.ndarray
    u_true: np.ndarray
    x0: np.ndarray
    spec: ProblemSpec = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.n_rows

    def to_dict(self) -> Dict[str, Any]:
        data = {'n': self.n, 'nnz': self.A.nnz, 'scheme': SCHEME}
        if self.spec is not None:
            data.update(nx=self.spec.nx, beta=self.spec.beta, gamma=self.spec.gamma,
                        terms=sorted(self.spec.terms))
        data.update(self.meta)
        return data


def exact_solution(x, y):
    return x * np.exp(x * y) * np.sin(np.pi * x) * np.sin(np.pi * y)


def source_term(x, y, coef: CoefficientField, terms: FrozenSet[str] = TERMS):
    """Apply the continuous operator to the manufactured solution."""
    pi = np.pi
    E = np.exp(x * y)
    sx, cx = np.sin(pi * x), np.cos(pi * x)
    sy, cy = np.sin(pi * y), np.cos(pi * y)

    u = x * E * sx * sy
    u_x = E * sy * ((1.0 + x * y) * sx + pi * x * cx)
    u_xx = E * sy * ((y * (2.0 + x * y) - pi * pi * x) * sx + pi * (2.0 + 2.0 * x * y) * cx)
    u_y = x * E * sx * (x * sy + pi * cy)
    u_yy = x * E * sx * ((x * x - pi * pi) * sy + 2.0 * pi * x * cy)

    g = np.zeros_like(u)
    if 'diffusion' in terms:
        g -= coef.b_x(x, y) * u_x + coef.b(x, y) * u_xx
        g -= coef.c_y(x, y) * u_y + coef.c(x, y) * u_yy
    if 'convection' in terms:
        g += coef.d_x(x, y) * u + coef.d(x, y) * u_x
        g += coef.e_y(x, y) * u + coef.e(x, y) * u_y
    if 'reaction' in terms:
        g += coef.f(x, y) * u
    return g


def _stencil(spec: ProblemSpec, ii: np.ndarray, jj: np.ndarray):
    """Five-point weights (P, E, W, N, S) at grid nodes (ii, jj)."""
    h = spec.h
    coef = spec.coefficient_field
    x, y = ii * h, jj * h
    zero = np.zeros_like(x)
    P, E, W, N, S = zero.copy(), zero.copy(), zero.copy(), zero.copy(), zero.copy()

    if 'diffusion' in spec.terms:
        # midpoints from half-integer indices so neighbouring rows share the same value
        b_e = coef.b((ii + 0.5) * h, y)
        b_w = coef.b((ii - 0.5) * h, y)
        c_n = coef.c(x, (jj + 0.5) * h)
        c_s = coef.c(x, (jj - 0.5) * h)
        inv_h2 = 1.0 / (h * h)
        P += (b_e + b_w + c_n + c_s) * inv_h2
        E -= b_e * inv_h2
        W -= b_w * inv_h2
        N -= c_n * inv_h2
        S -= c_s * inv_h2
    if 'convection' in spec.terms:
        inv_2h = 1.0 / (2.0 * h)
        E += coef.d((ii + 1) * h, y) * inv_2h
        W -= coef.d((ii - 1) * h, y) * inv_2h
        N += coef.e(x, (jj + 1) * h) * inv_2h
        S -= coef.e(x, (jj - 1) * h) * inv_2h
    if 'reaction' in spec.terms:
        P += coef.f(x, y)
    return P, E, W, N, S


def discretize(spec: ProblemSpec) -> DiscretizedProblem:
    """
    Assemble the five-point system for a problem.

    Unknown (i, j), 1 <= i, j <= nx, is row (j-1)*nx + i - 1. Neighbours on
    the boundary contribute their Dirichlet value to the right-hand side.

    Args:
        spec: Grid size and coefficients

    Returns:
        DiscretizedProblem with A, f, u_true and the standard initial guess
    """
    nx, h = spec.nx, spec.h
    grid = np.arange(1, nx + 1, dtype=np.float64)
    ii, jj = np.meshgrid(grid, grid)
    ii, jj = ii.ravel(), jj.ravel()
    rows = np.arange(nx * nx)

    P, E, W, N, S = _stencil(spec, ii, jj)
    x, y = ii * h, jj * h
    rhs = source_term(x, y, spec.coefficient_field, spec.terms)
    u_true = exact_solution(x, y)

    row_parts, col_parts, val_parts = [rows], [rows], [P]
    neighbours = (
        (E, ii == nx, 1, (ii + 1) * h, y),
        (W, ii == 1, -1, (ii - 1) * h, y),
        (N, jj == nx, nx, x, (jj + 1) * h),
        (S, jj == 1, -nx, x, (jj - 1) * h),
    )
    for weight, on_boundary, offset, bx, by in neighbours:
        inside = ~on_boundary
        row_parts.append(rows[inside])
        col_parts.append(rows[inside] + offset)
        val_parts.append(weight[inside])
        rhs[on_boundary] -= weight[on_boundary] * exact_solution(bx[on_boundary], by[on_boundary])

    coo = sp.coo_matrix(
        (np.concatenate(val_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
        shape=(nx * nx, nx * nx),
    )
    A = SparseMatrix.from_scipy(coo.tocsr())
    logger.debug("Assembled nx=%d problem: n=%d, nnz=%d", nx, A.n_rows, A.nnz)
    return DiscretizedProblem(A=A, f=rhs, u_true=u_true, x0=initial_guess(nx * nx), spec=spec)


def initial_guess(n: int) -> np.ndarray:
    """x(i) = 0.05 * mod(i, 50) for i = 1..n."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return 0.05 * (np.arange(1, n + 1) % 50)
