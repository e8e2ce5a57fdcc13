import json

import numpy as np
import pytest

from sstep_krylov.accounting import OpCounter
from sstep_krylov.precond import ilu0_factor, right_preconditioned
from sstep_krylov.problem_gen import ProblemSpec, discretize
from sstep_krylov.solvers_standard import (
    IterationLog,
    Method,
    PreparedSystem,
    SolverConfig,
    arnoldi,
    gmres_solve,
    mr_solve,
    omin_solve,
)

from conftest import assert_histories_match, random_operator


@pytest.mark.parametrize('kwargs', [
    dict(method='omin'),
    dict(method='gmres'),
    dict(method='omin', k=0),
    dict(method='gmres', m=-2),
    dict(method='mr', tol=0.0),
    dict(method='mr', colour='red'),
])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_strict_termination_squares_tolerance():
    assert SolverConfig(method='mr', tol=1e-3).threshold == 1e-3
    assert SolverConfig(method='mr', tol=1e-3, strict_termination=True).threshold == pytest.approx(1e-6)
    assert SolverConfig(method='omin', k=3).k_or_m == 3
    assert SolverConfig(method='gcr').k_or_m is None


def test_mr_on_identity_converges_in_one_step(rng):
    f = rng.standard_normal(10)
    report = mr_solve(np.eye(10), f, cfg=SolverConfig(method=Method.MR))
    assert report.converged
    assert report.iterations == 1
    np.testing.assert_allclose(report.x, f, atol=1e-12)
    assert report.residual_history[0] == pytest.approx(np.linalg.norm(f))


def test_mr_stagnates_on_skew_symmetric_operator():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    report = mr_solve(A, np.array([1.0, 2.0]), cfg=SolverConfig(method=Method.MR, max_iterations=5))
    assert not report.converged
    assert report.iterations == 5
    np.testing.assert_allclose(report.residual_history, np.sqrt(5.0))


def test_gmres_solves_small_problem_exactly(problem3):
    cfg = SolverConfig(method=Method.GMRES, m=9, tol=1e-10)
    report = gmres_solve(problem3.A, problem3.f, problem3.x0, cfg)
    assert report.converged
    expected = np.linalg.solve(problem3.A.to_dense(), problem3.f)
    np.testing.assert_allclose(report.x, expected, rtol=1e-8, atol=1e-10)


def test_arnoldi_basis_and_relation():
    A = random_operator(60, shift=2.0)
    v = np.random.default_rng(5).standard_normal(60)
    Q, G = arnoldi(A, v, 8)
    assert Q.shape == (60, 9) and G.shape == (9, 8)
    assert np.abs(Q.T @ Q - np.eye(9)).max() <= 1e-10
    np.testing.assert_allclose(A @ Q[:, :8], Q @ G, atol=1e-10)
    np.testing.assert_array_equal(np.tril(G, -2), 0.0)


@pytest.mark.parametrize('precondition', [False, True])
def test_arnoldi_stays_orthonormal_over_30_steps(problem7, precondition):
    A = problem7.A.to_dense()
    if precondition:
        op = right_preconditioned(problem7.A, ilu0_factor(problem7.A))
        A = np.column_stack([op.matvec(e) for e in np.eye(problem7.n)])
    Q, G = arnoldi(A, problem7.f, 30)
    steps = G.shape[1]
    assert steps >= 10
    Qm = Q[:, :steps]
    scale = np.linalg.norm(A)
    assert np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])) <= 1e-10
    assert np.linalg.norm(A @ Qm - Q @ G) <= 1e-8 * scale
    assert np.linalg.norm(Qm.T @ A @ Qm - G[:steps, :steps]) <= 1e-8 * scale


def test_reorthogonalization_is_not_counted_as_work():
    A = random_operator(80, seed=6, shift=0.5)
    v = np.random.default_rng(7).standard_normal(80)
    counter = OpCounter()
    Q, _ = arnoldi(A, v, 30, counter=counter)
    assert np.linalg.norm(Q.T @ Q - np.eye(31)) <= 1e-10
    assert counter.matvecs == 30
    assert counter.dotprods == sum(j + 2 for j in range(30))
    assert counter.vec_updates == sum(j + 2 for j in range(30))
    assert counter.check_dotprods >= 30


def test_arnoldi_stops_on_invariant_subspace():
    Q, G = arnoldi(np.eye(5), np.ones(5), 3)
    assert Q.shape == (5, 1) and G.shape == (1, 1)
    assert G[0, 0] == pytest.approx(1.0)


def test_arnoldi_rejects_zero_vector():
    with pytest.raises(ValueError):
        arnoldi(np.eye(3), np.zeros(3), 2)


def test_gmres_cycle_matches_dense_least_squares(problem7):
    A = problem7.A.to_dense()
    cfg = SolverConfig(method=Method.GMRES, m=6, max_iterations=6)
    report = gmres_solve(problem7.A, problem7.f, problem7.x0, cfg)
    assert report.cycles == 1

    r0 = problem7.f - A @ problem7.x0
    K = np.empty((A.shape[0], 6))
    K[:, 0] = r0 / np.linalg.norm(r0)
    for j in range(1, 6):
        K[:, j] = A @ K[:, j - 1]
        K[:, j] /= np.linalg.norm(K[:, j])
    Q, _ = np.linalg.qr(K)
    y, *_ = np.linalg.lstsq(A @ Q, r0, rcond=None)
    expected = problem7.x0 + Q @ y
    assert report.final_residual == pytest.approx(np.linalg.norm(problem7.f - A @ expected), rel=1e-6)
    np.testing.assert_allclose(report.x, expected, rtol=1e-6, atol=1e-8 * np.linalg.norm(expected))


@pytest.mark.parametrize('method, k', [('gcr', None), ('omin', 1), ('omin', 3)])
def test_orthomin_residuals_are_nonincreasing(problem7, method, k):
    cfg = SolverConfig(method=method, k=k, max_iterations=80)
    report = omin_solve(problem7.A, problem7.f, problem7.x0, cfg)
    history = np.array(report.residual_history)
    assert np.all(np.diff(history) <= 1e-10 * history[0])


def test_gcr_matches_gmres_before_restart(problem7):
    gcr = omin_solve(problem7.A, problem7.f, problem7.x0, SolverConfig(method='gcr', max_iterations=5))
    gmres = gmres_solve(problem7.A, problem7.f, problem7.x0, SolverConfig(method='gmres', m=5, max_iterations=5))
    assert gcr.iterations == gmres.iterations == 5
    assert_histories_match(gcr.residual_history, gmres.residual_history, gcr.residual_history[0], rtol=1e-6)


def test_orthomin1_equals_gcr_on_symmetric_problem(symmetric7):
    kwargs = dict(max_iterations=10)
    omin = omin_solve(symmetric7.A, symmetric7.f, symmetric7.x0, SolverConfig(method='omin', k=1, **kwargs))
    gcr = omin_solve(symmetric7.A, symmetric7.f, symmetric7.x0, SolverConfig(method='gcr', **kwargs))
    assert_histories_match(omin.residual_history, gcr.residual_history, gcr.residual_history[0], rtol=1e-6)


def test_divergence_is_flagged(problem3):
    cfg = SolverConfig(method=Method.MR)
    system = PreparedSystem(problem3.A, problem3.f, problem3.x0, cfg)
    log = IterationLog(system, cfg, 'mr')
    assert not log.diverged(log.r0_norm)
    assert log.diverged(100.0 * log.r0_norm)
    assert log.breakdown == 'divergence'
    assert log.diverged(float('nan'))


def test_preconditioning_needs_sparse_matrix(rng):
    cfg = SolverConfig(method=Method.GMRES, m=5, precondition=True)
    with pytest.raises(ValueError):
        gmres_solve(np.eye(4), rng.standard_normal(4), cfg=cfg)


def test_initial_guess_length_is_checked(problem3):
    with pytest.raises(ValueError):
        gmres_solve(problem3.A, problem3.f, np.zeros(4), SolverConfig(method='gmres', m=3))


def test_solver_rejects_foreign_method(problem3):
    with pytest.raises(ValueError):
        omin_solve(problem3.A, problem3.f, cfg=SolverConfig(method='gmres', m=3))
    with pytest.raises(ValueError):
        gmres_solve(problem3.A, problem3.f, cfg=SolverConfig(method='gcr'))


def test_ilu0_reduces_gmres_iterations(problem7):
    plain = gmres_solve(problem7.A, problem7.f, problem7.x0, SolverConfig(method='gmres', m=20))
    cfg = SolverConfig(method='gmres', m=20, precondition=True)
    preconditioned = gmres_solve(problem7.A, problem7.f, problem7.x0, cfg)
    assert plain.converged and preconditioned.converged
    assert preconditioned.preconditioned
    assert preconditioned.iterations < plain.iterations
    true_residual = np.linalg.norm(problem7.f - problem7.A.to_dense() @ preconditioned.x)
    assert true_residual <= 1.001e-6


def test_explicit_preconditioner_is_used(problem7):
    factors = ilu0_factor(problem7.A)
    report = omin_solve(problem7.A, problem7.f, problem7.x0, SolverConfig(method='omin', k=4), preconditioner=factors)
    assert report.converged and report.preconditioned


def test_report_to_dict_is_json(problem3):
    report = gmres_solve(problem3.A, problem3.f, problem3.x0, SolverConfig(method='gmres', m=4))
    data = report.to_dict()
    assert 'x' not in data
    decoded = json.loads(json.dumps(data))
    assert decoded['method'] == 'gmres'
    assert decoded['k_or_m'] == 4
    assert decoded['op_counts']['matvecs'] == report.op_counts.matvecs
    assert len(decoded['cycle_residuals']) == report.cycles + 1


def test_recurrence_drift_stays_small(problem7):
    cfg = SolverConfig(method='omin', k=2, check_interval=1, max_iterations=100)
    report = omin_solve(problem7.A, problem7.f, problem7.x0, cfg)
    assert report.max_recurrence_drift < 1e-8


def test_debug_orthogonality_check_passes():
    A = random_operator(40, seed=3, shift=3.0)
    f = np.ones(40)
    report = omin_solve(A, f, cfg=SolverConfig(method='omin', k=2, debug=True, tol=1e-10))
    assert report.converged
    assert report.op_counts.check_dotprods > 0


def test_mr_matches_gmres1_on_laplacian(rng):
    A = discretize(ProblemSpec.laplacian(3)).A
    f = rng.standard_normal(9)
    mr = mr_solve(A, f, cfg=SolverConfig(method='mr', max_iterations=10, tol=1e-14))
    gmres1 = gmres_solve(A, f, cfg=SolverConfig(method='gmres', m=1, max_iterations=10, tol=1e-14))
    assert_histories_match(mr.residual_history, gmres1.residual_history, mr.residual_history[0], rtol=1e-10)


def test_gmres_history_within_and_across_cycles(problem7):
    m = 5
    cfg = SolverConfig(method=Method.GMRES, m=m, tol=1e-10, max_iterations=60)
    report = gmres_solve(problem7.A, problem7.f, problem7.x0, cfg)
    history = np.array(report.residual_history)
    r0 = history[0]
    assert report.cycles >= 3
    for c in range(report.cycles - 1):
        inner = history[c * m:(c + 1) * m + 1]
        assert np.all(np.diff(inner) <= 1e-12 * r0)
        # the next cycle starts from the residual the previous one attained
        assert abs(report.cycle_residuals[c + 1] - history[(c + 1) * m]) <= 1e-10 * r0
