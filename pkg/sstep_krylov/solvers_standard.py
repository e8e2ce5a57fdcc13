"""
Standard Krylov solvers: MR, Orthomin(k)/GCR and restarted GMRES(m).

All solvers iterate on the correction w of x = x0 + K^-1 w, so with right
preconditioning the monitored residual is the true residual f - A x.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.sparse.linalg import LinearOperator

from sstep_krylov.accounting import OpCounter
from sstep_krylov.errors import OrthogonalityLossError, RankDeficiencyError
from sstep_krylov.precond import Preconditioner, as_preconditioner, ilu0_factor
from sstep_krylov.small_dense import GivensLeastSquares
from sstep_krylov.sparse_core import CountedOperator, Operator, SparseMatrix, as_operator

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10000
# subdiagonal below HAPPY_TOL * ||column|| ends the Arnoldi process
HAPPY_TOL = 1e-14
ORTH_TOL = 1e-8
# a second Gram-Schmidt pass runs when the first leaves less than this share of the norm
REORTH_RATIO = 0.7071


class Method(str, Enum):
    MR = 'mr'
    OMIN = 'omin'
    GCR = 'gcr'
    GMRES = 'gmres'


class BaseSolverConfig(BaseModel):
    """Termination and diagnostics settings shared by every solver."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    tol: float = Field(DEFAULT_TOL, gt=0)
    max_iterations: int = Field(DEFAULT_MAX_ITER, ge=0)
    precondition: bool = False
    strict_termination: bool = False
    check_interval: int = Field(10, ge=1)
    debug: bool = False
    divergence_factor: float = Field(10.0, gt=1.0)

    @property
    def threshold(self) -> float:
        """Bound on ||r||_2; the strict reading squares the tolerance."""
        return self.tol ** 2 if self.strict_termination else self.tol


class SolverConfig(BaseSolverConfig):
    """Configuration of MR, Orthomin(k), GCR or GMRES(m)."""
    method: Method
    k: Optional[int] = None
    m: Optional[int] = None

    @field_validator('k', 'm')
    @classmethod
    def _positive(cls, value):
        if value is not None and value < 1:
            raise ValueError(f"must be at least 1, got {value}")
        return value

    @model_validator(mode='after')
    def _method_parameters(self):
        if self.method == Method.OMIN and self.k is None:
            raise ValueError("Orthomin needs a window length k")
        if self.method == Method.GMRES and self.m is None:
            raise ValueError("GMRES needs a restart length m")
        return self

    @property
    def k_or_m(self) -> Optional[int]:
        if self.method == Method.OMIN:
            return self.k
        if self.method == Method.GMRES:
            return self.m
        return None


def _finite(value) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


@dataclass
class SolveReport:
    """Outcome of one solve."""
    converged: bool
    iterations: int
    cycles: int
    residual_history: List[float]
    final_residual: float
    op_counts: OpCounter
    breakdown: Optional[str] = None
    method: str = ''
    s: int = 1
    k_or_m: Optional[int] = None
    preconditioned: bool = False
    cycle_residuals: List[float] = field(default_factory=list)
    op_history: List[Dict[str, Any]] = field(default_factory=list)
    max_recurrence_drift: float = 0.0
    fallback_cycles: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)
    audit: Optional[Dict[str, Any]] = None
    x: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'converged': self.converged,
            'iterations': self.iterations,
            'cycles': self.cycles,
            'residual_history': [_finite(v) for v in self.residual_history],
            'final_residual': _finite(self.final_residual),
            'op_counts': self.op_counts.to_dict(),
            'breakdown': self.breakdown,
            'method': self.method,
            's': self.s,
            'k_or_m': self.k_or_m,
            'preconditioned': self.preconditioned,
            'cycle_residuals': [_finite(v) for v in self.cycle_residuals],
            'op_history': list(self.op_history),
            'max_recurrence_drift': _finite(self.max_recurrence_drift),
            'fallback_cycles': self.fallback_cycles,
            'meta': dict(self.meta),
            'audit': self.audit,
        }


class PreparedSystem:
    """
    The system a solver iterates on.

    Holds A, the optional preconditioner, x0 and the counted operator
    A K^-1 (or A) whose applications are the solver's matvecs.
    """

    def __init__(
        self,
        op: Operator,
        f: np.ndarray,
        x0: Optional[np.ndarray],
        cfg: BaseSolverConfig,
        preconditioner: Optional[Preconditioner] = None,
        counter: Optional[OpCounter] = None,
    ):
        self.f = np.array(f, dtype=np.float64).ravel()
        n = self.f.shape[0]
        self.x0 = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64).ravel()
        if self.x0.shape[0] != n:
            raise ValueError(f"initial guess has length {self.x0.shape[0]}, right-hand side {n}")
        self.counter = counter if counter is not None else OpCounter()
        self.threshold = cfg.threshold

        if preconditioner is None and cfg.precondition:
            if not isinstance(op, SparseMatrix):
                raise ValueError("ILU(0) preconditioning needs a SparseMatrix operator")
            preconditioner = ilu0_factor(op)
        self.precond = as_preconditioner(preconditioner)

        self.A = as_operator(op, n)
        if self.A.shape != (n, n):
            raise ValueError(f"operator of shape {self.A.shape} does not match right-hand side of length {n}")
        if self.precond is None:
            effective = self.A
        else:
            effective = LinearOperator(
                (n, n), matvec=lambda v: self.A.matvec(self.precond(np.ravel(v))), dtype=np.float64
            )
        self.apply = CountedOperator(effective, self.counter)
        self.r0 = self.residual(np.zeros(n), work=True)

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def preconditioned(self) -> bool:
        return self.precond is not None

    def solution(self, w: np.ndarray) -> np.ndarray:
        return self.x0 + (w if self.precond is None else self.precond(w))

    def residual(self, w: np.ndarray, work: bool = False) -> np.ndarray:
        """f - A x for the correction w; the matvec counts as work only if asked."""
        x = self.solution(w)
        if work:
            self.counter.matvec()
        else:
            with self.counter.checking():
                self.counter.matvec()
        Ax = np.asarray(self.A.matvec(x), dtype=np.float64).ravel()
        with self.counter.checking():
            self.counter.update()
        return self.f - Ax

    def norm(self, v: np.ndarray) -> float:
        """Termination-check norm, counted outside the method's work."""
        with self.counter.checking():
            self.counter.dot()
        return float(np.linalg.norm(v))


class IterationLog:
    """Residual histories and per-iteration work of one solve."""

    def __init__(self, system: PreparedSystem, cfg: BaseSolverConfig, method: str,
                 s: int = 1, k_or_m: Optional[int] = None):
        self.system = system
        self.cfg = cfg
        self.method = method
        self.s = s
        self.k_or_m = k_or_m
        self.r0_norm = system.norm(system.r0)
        self.history = [self.r0_norm]
        self.cycle_residuals = [self.r0_norm]
        self.op_history: List[Dict[str, Any]] = []
        self.iterations = 0
        self.cycles = 0
        self.breakdown: Optional[str] = None
        self.max_drift = 0.0
        self.fallback_cycles = 0
        self._snapshot = system.counter.work()

    def start(self) -> None:
        self._snapshot = self.system.counter.work()

    def record(self, index: int, kind: str = 'iteration', complete: bool = True) -> None:
        entry = {'index': index, 'kind': kind, 'complete': complete}
        entry.update(self.system.counter.delta(self._snapshot))
        self.op_history.append(entry)
        self._snapshot = self.system.counter.work()

    def diverged(self, rnorm: float) -> bool:
        if rnorm > self.cfg.divergence_factor * self.r0_norm or not np.isfinite(rnorm):
            self.breakdown = 'divergence'
            logger.warning("%s diverged at iteration %d: ||r|| = %.3e (||r0|| = %.3e)",
                           self.method, self.iterations, rnorm, self.r0_norm)
            return True
        return False

    def true_residual(self, w: np.ndarray) -> Tuple[np.ndarray, float]:
        r = self.system.residual(w)
        return r, self.system.norm(r)

    def check_drift(self, r: np.ndarray, w: np.ndarray) -> float:
        """Distance between the recursive and the recomputed residual, relative to ||f||."""
        true_r = self.system.residual(w)
        with self.system.counter.checking():
            self.system.counter.update()
            self.system.counter.dot()
        scale = float(np.linalg.norm(self.system.f)) or 1.0
        drift = float(np.linalg.norm(r - true_r)) / scale
        self.max_drift = max(self.max_drift, drift)
        if self.cfg.debug and drift > 1e-9:
            logger.warning("%s residual recurrence drifted by %.2e at iteration %d",
                           self.method, drift, self.iterations)
        return drift

    def report(self, w: np.ndarray, converged: bool, final_residual: Optional[float] = None) -> SolveReport:
        if final_residual is None:
            _, final_residual = self.true_residual(w)
        history = list(self.history)
        history[-1] = final_residual
        level = logging.INFO if converged else logging.WARNING
        logger.log(level, "%s %s after %d iterations (%d cycles), ||r|| = %.3e%s",
                   self.method, 'converged' if converged else 'stopped', self.iterations,
                   self.cycles, final_residual, f" [{self.breakdown}]" if self.breakdown else '')
        return SolveReport(
            converged=converged,
            iterations=self.iterations,
            cycles=self.cycles,
            residual_history=history,
            final_residual=final_residual,
            op_counts=self.system.counter,
            breakdown=self.breakdown,
            method=self.method,
            s=self.s,
            k_or_m=self.k_or_m,
            preconditioned=self.system.preconditioned,
            cycle_residuals=list(self.cycle_residuals),
            op_history=self.op_history,
            max_recurrence_drift=self.max_drift,
            fallback_cycles=self.fallback_cycles,
            x=self.system.solution(w),
        )


def mr_solve(op: Operator, f: np.ndarray, x0: Optional[np.ndarray] = None,
             cfg: Optional[SolverConfig] = None, preconditioner: Optional[Preconditioner] = None,
             counter: Optional[OpCounter] = None) -> SolveReport:
    """
    Minimal residual (steepest descent in the A^T A norm).

    Each step: a = (r^T A r) / ((Ar)^T Ar), x += a r, r -= a Ar.

    Args:
        op: Operator A
        f: Right-hand side
        x0: Initial guess (zero if omitted)
        cfg: Solver configuration
        preconditioner: Ilu0Factors or callable K^-1
        counter: Operation counter to accumulate into

    Returns:
        SolveReport
    """
    cfg = cfg or SolverConfig(method=Method.MR)
    system = PreparedSystem(op, f, x0, cfg, preconditioner, counter)
    log = IterationLog(system, cfg, 'mr')
    counter = system.counter
    logger.info("MR: n=%d, threshold %.1e", system.n, system.threshold)

    r = system.r0.copy()
    w = np.zeros(system.n)
    if log.r0_norm <= system.threshold:
        return log.report(w, True, log.r0_norm)

    for i in range(cfg.max_iterations):
        log.start()
        Ar = system.apply(r)
        num, denom = r @ Ar, Ar @ Ar
        counter.dot(2)
        if denom == 0.0:
            log.breakdown = 'stagnation'
            break
        a = num / denom
        w += a * r
        r -= a * Ar
        counter.update(2)
        counter.store(4)
        log.iterations += 1
        log.record(i)

        rnorm = system.norm(r)
        log.history.append(rnorm)
        if rnorm <= system.threshold:
            true_r, true_norm = log.true_residual(w)
            if true_norm <= system.threshold:
                return log.report(w, True, true_norm)
            r = true_r
        if log.diverged(rnorm):
            break
        if log.iterations % cfg.check_interval == 0:
            log.check_drift(r, w)

    return log.report(w, False)


def _check_window_orthogonality(Ap_new: np.ndarray, window, counter: OpCounter, index: int) -> None:
    with counter.checking():
        counter.dot(len(window) + 1)
    new_norm = np.linalg.norm(Ap_new)
    for _, Ap_j, ApAp_j in window:
        cosine = abs(Ap_new @ Ap_j) / (new_norm * np.sqrt(ApAp_j))
        if cosine > ORTH_TOL:
            raise OrthogonalityLossError(
                f"A p directions lost orthogonality at iteration {index} (cosine {cosine:.2e})"
            )


def omin_solve(op: Operator, f: np.ndarray, x0: Optional[np.ndarray] = None,
               cfg: Optional[SolverConfig] = None, preconditioner: Optional[Preconditioner] = None,
               counter: Optional[OpCounter] = None) -> SolveReport:
    """
    Orthomin(k), or GCR when cfg.method is GCR.

    Directions are A^T A-orthogonalized against the last k directions
    (all directions for GCR). A p is updated by the same recurrence as p.

    Args:
        op: Operator A
        f: Right-hand side
        x0: Initial guess (zero if omitted)
        cfg: Solver configuration with method OMIN (and k) or GCR
        preconditioner: Ilu0Factors or callable K^-1
        counter: Operation counter to accumulate into

    Returns:
        SolveReport
    """
    cfg = cfg or SolverConfig(method=Method.GCR)
    if cfg.method not in (Method.OMIN, Method.GCR):
        raise ValueError(f"omin_solve cannot run method {cfg.method.value}")
    k = cfg.k if cfg.method == Method.OMIN else None
    system = PreparedSystem(op, f, x0, cfg, preconditioner, counter)
    log = IterationLog(system, cfg, cfg.method.value, k_or_m=k)
    counter = system.counter
    logger.info("%s: n=%d, k=%s, threshold %.1e", cfg.method.value, system.n, k, system.threshold)

    r = system.r0.copy()
    w = np.zeros(system.n)
    if log.r0_norm <= system.threshold:
        return log.report(w, True, log.r0_norm)

    window = deque(maxlen=k)

    def restart_directions(residual: np.ndarray) -> None:
        window.clear()
        Ap = system.apply(residual)
        counter.dot()
        window.append((residual.copy(), Ap, float(Ap @ Ap)))

    restart_directions(r)
    log.start()
    for i in range(cfg.max_iterations):
        p, Ap, ApAp = window[-1]
        if ApAp == 0.0:
            log.breakdown = 'stagnation'
            break
        a = (r @ Ap) / ApAp
        counter.dot()
        w += a * p
        r -= a * Ap
        counter.update(2)
        log.iterations += 1

        rnorm = system.norm(r)
        log.history.append(rnorm)
        if rnorm <= system.threshold:
            true_r, true_norm = log.true_residual(w)
            if true_norm <= system.threshold:
                log.record(i, complete=False)
                return log.report(w, True, true_norm)
            logger.debug("%s: recursive residual passed but true residual %.3e did not; restarting",
                         cfg.method.value, true_norm)
            r = true_r
            restart_directions(r)
            log.record(i, kind='restart', complete=False)
            continue
        if log.diverged(rnorm):
            log.record(i, complete=False)
            break
        if log.iterations % cfg.check_interval == 0:
            log.check_drift(r, w)

        Ar = system.apply(r)
        coeffs = [-(Ar @ Ap_j) / ApAp_j for _, Ap_j, ApAp_j in window]
        counter.dot(len(window))
        p_new, Ap_new = r.copy(), Ar
        for b, (p_j, Ap_j, _) in zip(coeffs, window):
            p_new += b * p_j
            Ap_new += b * Ap_j
        counter.update(2 * len(window))
        ApAp_new = float(Ap_new @ Ap_new)
        counter.dot()
        if cfg.debug:
            _check_window_orthogonality(Ap_new, window, counter, i)
        window.append((p_new, Ap_new, ApAp_new))
        counter.store(2 * len(window) + 2)
        log.record(i)

    return log.report(w, False)


def _mgs(Q: np.ndarray, v: np.ndarray, count: int, h: np.ndarray, counter: OpCounter) -> float:
    """
    Orthogonalize v in place against Q[:, :count] by modified Gram-Schmidt.

    Coefficients go to h[:count]. Work counts cover one pass and the final
    norm; the norm taken beforehand and any second pass are check counts.

    Returns:
        ||v|| after orthogonalization
    """
    with counter.checking():
        counter.dot()
    before = np.linalg.norm(v)
    for i in range(count):
        h[i] = Q[:, i] @ v
        v -= h[i] * Q[:, i]
    counter.dot(count + 1)
    counter.update(count)
    after = float(np.linalg.norm(v))
    if after < REORTH_RATIO * before:
        for i in range(count):
            c = Q[:, i] @ v
            v -= c * Q[:, i]
            h[i] += c
        after = float(np.linalg.norm(v))
        with counter.checking():
            counter.dot(count + 1)
            counter.update(count)
    return after


def arnoldi(op: Operator, v: np.ndarray, m: int,
            counter: Optional[OpCounter] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Modified Gram-Schmidt Arnoldi process.

    Args:
        op: Operator A
        v: Nonzero starting vector
        m: Number of steps
        counter: Optional operation counter

    Returns:
        (Q, G) with Q of shape n x (m+1) and G of shape (m+1) x m so that
        A Q[:, :m] = Q G. If the process terminates after j < m steps, Q is
        n x j and G is the square j x j matrix with A Q = Q G.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    beta = np.linalg.norm(v)
    if beta == 0.0:
        raise ValueError("Arnoldi needs a nonzero starting vector")
    counter = counter if counter is not None else OpCounter()
    apply = CountedOperator(op, counter, v.shape[0])

    Q = np.zeros((v.shape[0], m + 1), order='F')
    G = np.zeros((m + 1, m))
    Q[:, 0] = v / beta
    for j in range(m):
        q = apply(Q[:, j])
        G[j + 1, j] = _mgs(Q, q, j + 1, G[:, j], counter)
        counter.update()
        if G[j + 1, j] <= HAPPY_TOL * np.linalg.norm(G[:j + 2, j]):
            logger.debug("Arnoldi terminated after %d steps", j + 1)
            return Q[:, :j + 1], G[:j + 1, :j + 1]
        Q[:, j + 1] = q / G[j + 1, j]
    return Q, G


def gmres_cycle(system: PreparedSystem, log: IterationLog, w: np.ndarray, r: np.ndarray,
                beta: float, m: int, budget: int) -> Tuple[int, float, Optional[str]]:
    """
    One GMRES(m) cycle from residual r with ||r|| = beta; updates w in place.

    q_j is normalized when step j starts, so step j costs j+1 inner
    products, j+1 vector updates and one matvec; forming Q y costs one
    update per step.

    Returns:
        (inner steps taken, least-squares residual, breakdown reason or None)
    """
    counter = system.counter
    Q = np.zeros((system.n, m + 1), order='F')
    H = np.zeros((m + 1, m))
    lsq = GivensLeastSquares(beta)
    q_hat, scale = r, beta
    steps, reason = 0, None

    for j in range(min(m, budget)):
        Q[:, j] = q_hat / scale
        counter.update()
        v = system.apply(Q[:, j])
        H[j + 1, j] = _mgs(Q, v, j + 1, H[:, j], counter)
        try:
            residual = lsq.add_column(H[:j + 2, j])
        except RankDeficiencyError:
            reason = 'rank deficiency'
            logger.warning("GMRES least-squares problem lost rank at inner step %d", j + 1)
            break
        steps = j + 1
        log.iterations += 1
        log.history.append(residual)
        counter.store(steps + 2)
        if residual <= system.threshold:
            break
        if H[j + 1, j] <= HAPPY_TOL * np.linalg.norm(H[:j + 2, j]):
            logger.debug("GMRES: invariant subspace reached after %d inner steps", steps)
            break
        q_hat, scale = v, H[j + 1, j]

    if steps:
        y = lsq.solve(steps)
        w += Q[:, :steps] @ y
        counter.update(steps)
    return steps, lsq.residual_norms[steps], reason


def gmres_solve(op: Operator, f: np.ndarray, x0: Optional[np.ndarray] = None,
                cfg: Optional[SolverConfig] = None, preconditioner: Optional[Preconditioner] = None,
                counter: Optional[OpCounter] = None) -> SolveReport:
    """
    Restarted GMRES(m) with modified Gram-Schmidt and Givens least squares.

    The least-squares residual is monitored after every inner step; a cycle
    ends early once it passes the threshold. Each cycle ends with the true
    residual f - A x, which must also pass for convergence.

    Args:
        op: Operator A
        f: Right-hand side
        x0: Initial guess (zero if omitted)
        cfg: Solver configuration with method GMRES and restart length m
        preconditioner: Ilu0Factors or callable K^-1
        counter: Operation counter to accumulate into

    Returns:
        SolveReport; iterations are inner steps summed over cycles
    """
    cfg = cfg or SolverConfig(method=Method.GMRES, m=10)
    if cfg.method != Method.GMRES:
        raise ValueError(f"gmres_solve cannot run method {cfg.method.value}")
    system = PreparedSystem(op, f, x0, cfg, preconditioner, counter)
    log = IterationLog(system, cfg, 'gmres', k_or_m=cfg.m)
    logger.info("GMRES(%d): n=%d, threshold %.1e", cfg.m, system.n, system.threshold)

    w = np.zeros(system.n)
    r, rnorm = system.r0.copy(), log.r0_norm
    if rnorm <= system.threshold:
        return log.report(w, True, rnorm)

    while log.iterations < cfg.max_iterations:
        log.start()
        steps, lsq_residual, reason = gmres_cycle(
            system, log, w, r, rnorm, cfg.m, cfg.max_iterations - log.iterations
        )
        r = system.residual(w, work=True)
        rnorm = system.norm(r)
        log.cycle_residuals.append(rnorm)
        log.record(log.cycles, kind='cycle', complete=steps == cfg.m)
        log.cycles += 1
        logger.debug("GMRES cycle %d: %d steps, least squares %.3e, true %.3e",
                     log.cycles, steps, lsq_residual, rnorm)

        if rnorm <= system.threshold:
            return log.report(w, True, rnorm)
        if reason is not None:
            log.breakdown = reason
            break
        if steps == 0 or log.diverged(rnorm):
            break

    return log.report(w, False, rnorm)
