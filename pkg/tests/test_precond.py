import numpy as np
import pytest
import scipy.sparse as sp

from sstep_krylov.errors import IluBreakdownError
from sstep_krylov.precond import (
    Ilu0Factors,
    as_preconditioner,
    ilu0_apply,
    ilu0_factor,
    right_preconditioned,
)
from sstep_krylov.problem_gen import ProblemSpec, discretize
from sstep_krylov.sparse_core import SparseMatrix


def _tridiagonal(n=8):
    main = 4.0 + np.arange(n) * 0.1
    return SparseMatrix.from_scipy(sp.diags([-1.0 * np.ones(n - 1), main, -2.0 * np.ones(n - 1)], [-1, 0, 1]))


def test_ilu0_is_exact_on_tridiagonal(rng):
    A = _tridiagonal()
    factors = ilu0_factor(A)
    np.testing.assert_allclose(factors.product(), A.to_dense(), atol=1e-12)
    r = rng.standard_normal(A.n_rows)
    np.testing.assert_allclose(A.to_dense() @ ilu0_apply(factors, r), r, atol=1e-12)


def test_ilu0_matches_a_on_its_pattern():
    A = discretize(ProblemSpec(nx=4)).A
    factors = ilu0_factor(A)
    LU = factors.product()
    dense = A.to_dense()
    rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_offsets))
    np.testing.assert_allclose(LU[rows, A.col_indices], dense[rows, A.col_indices],
                               rtol=1e-12, atol=1e-10)
    assert factors.L_unit.nnz + factors.U_upper.nnz == A.nnz


def test_ilu0_apply_approximately_inverts_five_point_matrix(rng):
    A = discretize(ProblemSpec(nx=8)).A
    factors = ilu0_factor(A)
    r = rng.standard_normal(A.n_rows)
    z = ilu0_apply(factors, r)
    np.testing.assert_allclose(factors.product() @ z, r, rtol=1e-10, atol=1e-10)
    assert np.linalg.norm(A.to_dense() @ z - r) < np.linalg.norm(r)


def test_factors_are_triangular():
    factors = ilu0_factor(discretize(ProblemSpec(nx=3)).A)
    lower, upper = factors.L_unit.to_dense(), factors.U_upper.to_dense()
    np.testing.assert_array_equal(np.triu(lower), 0.0)
    np.testing.assert_array_equal(np.tril(upper, -1), 0.0)


def test_missing_diagonal_is_rejected():
    A = SparseMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(ValueError, match='row 0'):
        ilu0_factor(A)


def test_non_square_is_rejected():
    with pytest.raises(ValueError):
        ilu0_factor(SparseMatrix.from_dense(np.ones((2, 3))))


def test_zero_pivot_names_the_row():
    A = SparseMatrix.from_dense(np.ones((2, 2)))
    with pytest.raises(IluBreakdownError) as info:
        ilu0_factor(A)
    assert info.value.index == 1


def test_apply_rejects_wrong_length():
    factors = ilu0_factor(_tridiagonal(4))
    with pytest.raises(ValueError):
        ilu0_apply(factors, np.ones(5))


def test_right_preconditioned_operator(rng):
    A = discretize(ProblemSpec(nx=3)).A
    factors = ilu0_factor(A)
    op = right_preconditioned(A, factors)
    v = rng.standard_normal(A.n_rows)
    expected = A.to_dense() @ np.linalg.solve(factors.product(), v)
    np.testing.assert_allclose(op.matvec(v), expected, rtol=1e-10, atol=1e-10)


def test_as_preconditioner():
    assert as_preconditioner(None) is None
    scale = as_preconditioner(lambda v: 0.5 * v)
    np.testing.assert_array_equal(scale(np.ones(2)), [0.5, 0.5])
    factors = ilu0_factor(_tridiagonal(3))
    assert callable(as_preconditioner(factors))
    assert isinstance(factors, Ilu0Factors)
    with pytest.raises(ValueError):
        as_preconditioner(3.0)
