import numpy as np
import pytest

from sstep_krylov.errors import GramBreakdownError, RankDeficiencyError
from sstep_krylov.small_dense import (
    BlockHessenberg,
    GivensLeastSquares,
    GramMatrix,
    block_cholesky,
    factor_gram,
    hessenberg_lsq,
    sym_solve,
)


def _spd(rng, s):
    V = rng.standard_normal((20, s))
    return V.T @ V


def test_sym_solve_vector_and_matrix(rng):
    W = _spd(rng, 4)
    b = rng.standard_normal(4)
    result = sym_solve(W, b)
    assert result.kind == 'cholesky'
    np.testing.assert_allclose(W @ result.solution, b, rtol=1e-10, atol=1e-12)
    B = rng.standard_normal((4, 3))
    X = factor_gram(GramMatrix(W)).solve(B)
    np.testing.assert_allclose(W @ X, B, rtol=1e-10, atol=1e-12)


def test_badly_scaled_gram_is_equilibrated(rng):
    V = rng.standard_normal((20, 3)) * np.array([1.0, 1e4, 1e8])
    W = V.T @ V
    factor = factor_gram(W)
    assert factor.kind == 'cholesky'
    assert factor.pivot_ratio > 1e-3
    b = rng.standard_normal(3)
    np.testing.assert_allclose(W @ factor.solve(b), b, rtol=1e-8)


def test_nearly_dependent_gram_uses_ldlt():
    delta = 1e-14
    W = np.array([[1.0, 1.0 - delta], [1.0 - delta, 1.0]])
    factor = factor_gram(W)
    assert factor.kind == 'ldlt'
    assert factor.pivot_ratio < 1e-13


def test_singular_gram_breaks_down():
    with pytest.raises(GramBreakdownError):
        factor_gram(np.ones((2, 2)), index=3)


def test_non_positive_diagonal_breaks_down():
    with pytest.raises(GramBreakdownError) as info:
        factor_gram(np.array([[0.0, 0.0], [0.0, 1.0]]), index=5)
    assert info.value.index == 5


def test_solve_rejects_wrong_rows(rng):
    factor = factor_gram(_spd(rng, 3))
    with pytest.raises(ValueError):
        factor.solve(np.ones(4))


def test_gram_matrix_validation():
    with pytest.raises(ValueError):
        GramMatrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        GramMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert GramMatrix(np.eye(3)).s == 3


def test_block_cholesky(rng):
    blocks = [_spd(rng, 2), _spd(rng, 3)]
    factor = block_cholesky(blocks, 4.0)
    for R, W in zip(factor.blocks, blocks):
        np.testing.assert_allclose(R.T @ R, W, rtol=1e-12)
        np.testing.assert_array_equal(np.tril(R, -1), 0.0)
    assert factor.trailing == 2.0
    assert factor.order == 6
    D = factor.dense()
    assert D.shape == (6, 6)
    assert D[5, 5] == 2.0


def test_block_cholesky_names_failing_block(rng):
    with pytest.raises(GramBreakdownError) as info:
        block_cholesky([_spd(rng, 2), -np.eye(2)], 1.0)
    assert info.value.index == 1
    with pytest.raises(GramBreakdownError):
        block_cholesky([_spd(rng, 2)], 0.0)


def test_block_hessenberg_shapes():
    G = BlockHessenberg.zeros(2, 3)
    assert G.entries.shape == (8, 6)
    assert G.active().shape == (7, 6)
    assert G.truncated(2).entries.shape == (6, 4)


def _hessenberg(rng, rows):
    return np.triu(rng.standard_normal((rows, rows - 1)), -1)


def test_givens_matches_dense_least_squares(rng):
    H = _hessenberg(rng, 7)
    beta = 2.5
    rhs = np.zeros(7)
    rhs[0] = beta
    expected, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    y, residual = hessenberg_lsq(H, beta)
    np.testing.assert_allclose(y, expected, rtol=1e-10)
    assert residual == pytest.approx(np.linalg.norm(rhs - H @ expected), rel=1e-10)


def test_incremental_residuals_are_nonincreasing(rng):
    H = _hessenberg(rng, 9)
    lsq = GivensLeastSquares(1.0)
    for j in range(H.shape[1]):
        lsq.add_column(H[:j + 2, j])
    norms = np.array(lsq.residual_norms)
    assert norms[0] == 1.0
    assert np.all(np.diff(norms) <= 1e-15)
    # the partial solution minimizes over the leading columns
    y3 = lsq.solve(3)
    rhs = np.zeros(4)
    rhs[0] = 1.0
    np.testing.assert_allclose(np.linalg.norm(rhs - H[:4, :3] @ y3), norms[3], rtol=1e-10)


def test_block_hessenberg_least_squares(rng):
    G = BlockHessenberg.zeros(2, 2)
    G.entries[:5, :4] = _hessenberg(rng, 5)
    y, residual = hessenberg_lsq(G, 1.0)
    assert y.shape == (4,)
    assert residual >= 0.0


def test_rank_deficiency_is_detected():
    lsq = GivensLeastSquares(1.0)
    lsq.add_column(np.array([1.0, 1.0]))
    with pytest.raises(RankDeficiencyError):
        lsq.add_column(np.zeros(3))
    with pytest.raises(ValueError):
        GivensLeastSquares(-1.0)
