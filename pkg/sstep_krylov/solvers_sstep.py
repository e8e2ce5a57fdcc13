"""
s-step Krylov solvers.

Every iteration builds s directions with s consecutive matvecs on a
monomial basis [v, Av, ..., A^(s-1) v] and advances with small s x s Gram
solves instead of one inner product per direction.
"""
import logging
import warnings
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from sstep_krylov.accounting import OpCounter
from sstep_krylov.errors import BasisCollapseError, GramBreakdownError, OrthogonalityLossError, RankDeficiencyError
from sstep_krylov.precond import Preconditioner
from sstep_krylov.small_dense import (
    BlockCholeskyFactor,
    BlockHessenberg,
    GivensLeastSquares,
    GramFactorization,
    GramMatrix,
    block_cholesky,
    factor_gram,
)
from sstep_krylov.solvers_standard import (
    BaseSolverConfig,
    IterationLog,
    PreparedSystem,
    SolveReport,
    gmres_cycle,
)
from sstep_krylov.sparse_core import (
    CountedOperator,
    DirectionBlock,
    Operator,
    as_operator,
    block_axpy,
    block_gram,
    krylov_block,
)

logger = logging.getLogger(__name__)

MAX_STABLE_S = 5
# cross-block orthogonality tolerance of the s-step Arnoldi basis
ORTH_TOL = 1e-8
BLOCK_ORTH_TOL = 1e-7
# blocks whose equilibrated Gram pivot ratio falls below this have collapsed
COLLAPSE_RATIO = 1e-12
LUCKY_TOL = 1e-14


class SStepMethod(str, Enum):
    SMR = 'smr'
    SOMIN = 'somin'
    SGCR = 'sgcr'
    SGMRES = 'sgmres'


class SStepConfig(BaseSolverConfig):
    """Configuration of s-MR, s-Omin(k), s-GCR or s-GMRES(m)."""
    method: SStepMethod
    s: int = Field(2, ge=1, le=8)
    k: Optional[int] = None
    m: Optional[int] = None

    @field_validator('s')
    @classmethod
    def _warn_large_s(cls, value):
        if value > MAX_STABLE_S:
            warnings.warn(
                f"s={value} exceeds {MAX_STABLE_S}; the monomial basis is likely to lose independence",
                UserWarning,
                stacklevel=2,
            )
        return value

    @field_validator('k', 'm')
    @classmethod
    def _positive(cls, value):
        if value is not None and value < 1:
            raise ValueError(f"must be at least 1, got {value}")
        return value

    @model_validator(mode='after')
    def _method_parameters(self):
        if self.method == SStepMethod.SOMIN and self.k is None:
            raise ValueError("s-step Orthomin needs a window length k")
        if self.method == SStepMethod.SGMRES and self.m is None:
            raise ValueError("s-step GMRES needs a block count m")
        return self

    @property
    def k_or_m(self) -> Optional[int]:
        if self.method == SStepMethod.SOMIN:
            return self.k
        if self.method == SStepMethod.SGMRES:
            return self.m
        return None


def _applier(op, counter: Optional[OpCounter], n: int):
    if isinstance(op, CountedOperator):
        return op
    if counter is not None:
        return CountedOperator(op, counter, n)
    return op if callable(op) and not hasattr(op, 'shape') else as_operator(op, n).matvec


def smr_step(op, x: np.ndarray, r: np.ndarray, s: int,
             counter: Optional[OpCounter] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One s-step minimal residual step.

    Minimizes ||r - A R a|| over a for R = [r, Ar, ..., A^(s-1) r] by solving
    (AR)^T (AR) a = (AR)^T r.

    Args:
        op: Operator (a CountedOperator counts its own matvecs)
        x: Current iterate
        r: Its residual
        s: Block size
        counter: Operation counter for dot products and updates

    Returns:
        (x', r', a)

    Raises:
        BasisCollapseError: if the Gram matrix is numerically singular
    """
    r = np.asarray(r, dtype=np.float64)
    apply = _applier(op, counter, r.shape[0])
    K = krylov_block(apply, r, s + 1).columns
    R, AR = K[:, :s], K[:, 1:]
    W = block_gram(AR, counter=counter)
    rhs = AR.T @ r
    try:
        a = factor_gram(W).solve(rhs)
    except GramBreakdownError as exc:
        raise BasisCollapseError(f"s-MR basis lost independence ({exc.reason}); try a smaller s") from exc
    if counter is not None:
        counter.dot(s)
        counter.update(2 * s)
    return x + R @ a, r - AR @ a, a


def smr_solve(op: Operator, f: np.ndarray, x0: Optional[np.ndarray] = None,
              cfg: Optional[SStepConfig] = None, preconditioner: Optional[Preconditioner] = None,
              counter: Optional[OpCounter] = None) -> SolveReport:
    """Repeated s-MR steps; iterations count s-step iterations."""
    cfg = cfg or SStepConfig(method=SStepMethod.SMR)
    system = PreparedSystem(op, f, x0, cfg, preconditioner, counter)
    log = IterationLog(system, cfg, 'smr', s=cfg.s)
    logger.info("s-MR: n=%d, s=%d, threshold %.1e", system.n, cfg.s, system.threshold)

    r = system.r0.copy()
    w = np.zeros(system.n)
    if log.r0_norm <= system.threshold:
        return log.report(w, True, log.r0_norm)

    for i in range(cfg.max_iterations):
        log.start()
        try:
            w, r, _ = smr_step(system.apply, w, r, cfg.s, system.counter)
        except BasisCollapseError as exc:
            log.breakdown = f"basis collapse at iteration {i}"
            logger.warning("s-MR: %s", exc)
            break
        system.counter.store(2 * cfg.s + 2)
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


@dataclass
class _DirectionSet:
    P: np.ndarray
    AP: np.ndarray
    factor: GramFactorization


def somin_solve(op: Operator, f: np.ndarray, x0: Optional[np.ndarray] = None,
                cfg: Optional[SStepConfig] = None, preconditioner: Optional[Preconditioner] = None,
                counter: Optional[OpCounter] = None) -> SolveReport:
    """
    s-step Orthomin(k), or s-GCR when cfg.method is SGCR.

    Per iteration: a_i from W_i a_i = (AP_i)^T r_i, x and r updates, the
    Krylov block R_{i+1} with A R_{i+1} from s matvecs, then
    P_{i+1} = R_{i+1} + sum_j P_j B_j with W_j B_j = -(AP_j)^T A R_{i+1}
    over the window, and AP_{i+1} by the same combination.

    Args:
        op: Operator A
        f: Right-hand side
        x0: Initial guess (zero if omitted)
        cfg: Configuration with method SOMIN (and k) or SGCR
        preconditioner: Ilu0Factors or callable K^-1
        counter: Operation counter to accumulate into

    Returns:
        SolveReport; iterations count s-step iterations
    """
    cfg = cfg or SStepConfig(method=SStepMethod.SGCR)
    if cfg.method not in (SStepMethod.SOMIN, SStepMethod.SGCR):
        raise ValueError(f"somin_solve cannot run method {cfg.method.value}")
    s = cfg.s
    k = cfg.k if cfg.method == SStepMethod.SOMIN else None
    system = PreparedSystem(op, f, x0, cfg, preconditioner, counter)
    log = IterationLog(system, cfg, cfg.method.value, s=s, k_or_m=k)
    counter = system.counter
    logger.info("%s: n=%d, s=%d, k=%s, threshold %.1e",
                cfg.method.value, system.n, s, k, system.threshold)

    r = system.r0.copy()
    w = np.zeros(system.n)
    if log.r0_norm <= system.threshold:
        return log.report(w, True, log.r0_norm)

    window = deque(maxlen=k)

    def next_block(residual: np.ndarray):
        K = krylov_block(system.apply, residual, s + 1).columns
        return K[:, :s], K[:, 1:]

    def push(P: np.ndarray, AP: np.ndarray, index: int) -> None:
        W = block_gram(AP, counter=counter)
        try:
            factor = factor_gram(W, index)
        except GramBreakdownError as exc:
            raise BasisCollapseError(exc.reason, index) from exc
        window.append(_DirectionSet(P, AP, factor))
        counter.store(2 * s * len(window) + s + 1)

    try:
        push(*next_block(r), -1)
    except BasisCollapseError as exc:
        log.breakdown = "basis collapse at setup"
        logger.warning("%s: %s", cfg.method.value, exc)
        return log.report(w, False)

    log.start()
    for i in range(cfg.max_iterations):
        current = window[-1]
        rhs = current.AP.T @ r
        counter.dot(s)
        a = current.factor.solve(rhs)
        w += current.P @ a
        r -= current.AP @ a
        counter.update(2 * s)
        log.iterations += 1

        rnorm = system.norm(r)
        log.history.append(rnorm)
        try:
            if rnorm <= system.threshold:
                true_r, true_norm = log.true_residual(w)
                if true_norm <= system.threshold:
                    log.record(i, complete=False)
                    return log.report(w, True, true_norm)
                logger.debug("%s: true residual %.3e failed the check; restarting directions",
                             cfg.method.value, true_norm)
                r = true_r
                window.clear()
                push(*next_block(r), i)
                log.record(i, kind='restart', complete=False)
                continue
            if log.diverged(rnorm):
                log.record(i, complete=False)
                break
            if log.iterations % cfg.check_interval == 0:
                log.check_drift(r, w)

            R, AR = next_block(r)
            P_new, AP_new = R, AR
            for direction in window:
                C = block_gram(direction.AP, AR, counter=counter)
                B = -direction.factor.solve(C)
                P_new = block_axpy(P_new, direction.P, B, counter=counter).columns
                AP_new = block_axpy(AP_new, direction.AP, B, counter=counter).columns
            if cfg.debug:
                _check_block_orthogonality(AP_new, window, counter, i)
            push(P_new, AP_new, i)
        except BasisCollapseError as exc:
            log.breakdown = f"basis collapse at iteration {i}"
            logger.warning("%s: %s; try a smaller s", cfg.method.value, exc)
            log.record(i, complete=False)
            break
        log.record(i)

    return log.report(w, False)


def _check_block_orthogonality(AP_new: np.ndarray, window, counter: OpCounter, index: int) -> None:
    with counter.checking():
        counter.dot(AP_new.shape[1] * AP_new.shape[1] * len(window))
    new_norm = np.linalg.norm(AP_new)
    for direction in window:
        cross = np.linalg.norm(direction.AP.T @ AP_new)
        if cross > BLOCK_ORTH_TOL * new_norm * np.linalg.norm(direction.AP):
            raise OrthogonalityLossError(
                f"AP blocks lost A^T A-orthogonality at iteration {index}"
            )


@dataclass
class SStepBasis:
    """
    Blocks V_1..V_k of the s-step Arnoldi process and their relation
    A V_k = U_k G_k with U_k = [V_1, ..., V_k, v_{k+1}^1].
    """
    blocks: List[DirectionBlock]
    grams: List[GramMatrix]
    hess: BlockHessenberg
    next_seed: np.ndarray
    next_seed_norm: float
    lucky: bool = False

    @property
    def s(self) -> int:
        return self.hess.s

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def V(self) -> np.ndarray:
        return np.hstack([b.columns for b in self.blocks])

    @property
    def U(self) -> np.ndarray:
        return np.column_stack([self.V, self.next_seed])

    def cholesky(self) -> BlockCholeskyFactor:
        """Factor of D = U^T U = diag(W_1, ..., W_k, ||v_{k+1}^1||^2)."""
        return block_cholesky(self.grams, self.next_seed_norm ** 2)


class SStepArnoldi:
    """
    Incremental s-step Arnoldi process.

    start() builds V_1 from the normalized seed; each extend() builds the
    next block and completes the last column of the previous block column
    of G, returning that block column of R G where R is the upper block
    Cholesky factor of the block-diagonal Gram matrix. R G is upper
    Hessenberg, so its columns feed GivensLeastSquares directly.
    """

    def __init__(self, apply, s: int, max_blocks: int, counter: Optional[OpCounter] = None,
                 orth_tol: float = ORTH_TOL):
        if s < 1 or max_blocks < 1:
            raise ValueError(f"invalid block size {s} or block count {max_blocks}")
        self.apply = apply
        self.s = s
        self.max_blocks = max_blocks
        self.counter = counter if counter is not None else OpCounter()
        self.orth_tol = orth_tol
        self.hess = BlockHessenberg.zeros(s, max_blocks)
        self.blocks: List[np.ndarray] = []
        self.grams: List[np.ndarray] = []
        self.factors: List[GramFactorization] = []
        self.uppers: List[np.ndarray] = []
        self.lucky = False
        self.max_cross = 0.0
        self._V = None

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def basis_columns(self, count: int) -> np.ndarray:
        """The first count columns of [V_1, V_2, ...]."""
        return self._V[:, :count]

    def _accept(self, block: np.ndarray, index: int) -> None:
        W = block_gram(block, counter=self.counter)
        try:
            factor = factor_gram(W, index)
            if factor.pivot_ratio < COLLAPSE_RATIO:
                raise GramBreakdownError(f"pivot ratio {factor.pivot_ratio:.2e}", index)
            upper = block_cholesky([W], 1.0).blocks[0]
        except GramBreakdownError as exc:
            raise BasisCollapseError(f"s-step basis collapsed ({exc.reason})", index) from exc
        s = self.s
        self._V[:, index * s:(index + 1) * s] = block
        self.blocks.append(block)
        self.grams.append(W)
        self.factors.append(factor)
        self.uppers.append(upper)
        self.counter.store((index + 1) * s + 1)

    def start(self, v1: np.ndarray, norm: Optional[float] = None) -> float:
        """Normalize v1 and build V_1; returns ||v1||."""
        v1 = np.asarray(v1, dtype=np.float64).ravel()
        beta = float(np.linalg.norm(v1)) if norm is None else float(norm)
        if beta == 0.0:
            raise ValueError("s-step Arnoldi needs a nonzero starting vector")
        self._V = np.zeros((v1.shape[0], (self.max_blocks + 1) * self.s), order='F')
        u = v1 / beta
        self.counter.update()
        self._accept(krylov_block(self.apply, u, self.s).columns, 0)
        for c in range(self.s - 1):
            self.hess.entries[c + 1, c] = 1.0
        return beta

    def _solve_blocks(self, projections: np.ndarray, count: int) -> np.ndarray:
        s = self.s
        out = np.empty_like(projections)
        for i in range(count):
            out[i * s:(i + 1) * s] = self.factors[i].solve(projections[i * s:(i + 1) * s])
        return out

    def extend(self) -> np.ndarray:
        """
        Build the next block.

        Returns:
            The s columns of R G for the block column just completed

        Raises:
            BasisCollapseError: if the new block's Gram matrix fails its conditioning check
        """
        kb = self.n_blocks - 1
        if kb < 0:
            raise ValueError("start() must be called before extend()")
        if kb >= self.max_blocks or self.lucky:
            raise ValueError("the basis cannot be extended further")
        s, counter = self.s, self.counter
        width = (kb + 1) * s
        V_all = self._V[:, :width]
        G = self.hess.entries

        w = self.apply(V_all[:, -1])
        h = self._solve_blocks(V_all.T @ w, kb + 1)
        y1 = w - V_all @ h
        sigma = float(np.linalg.norm(y1))
        counter.dot(width + 1)
        counter.update(width)
        w_norm = np.sqrt(max(sum(
            h[i * s:(i + 1) * s] @ self.grams[i] @ h[i * s:(i + 1) * s] for i in range(kb + 1)
        ), 0.0) + sigma ** 2)

        last = width - 1
        if sigma <= LUCKY_TOL * w_norm:
            G[:width, last] = h
            G[width, last] = sigma
            self.lucky = True
            logger.debug("s-step Arnoldi: invariant subspace after %d blocks", kb + 1)
            return self._rg_columns(kb, next_diag=1.0)

        u = y1 / sigma
        counter.update()
        Y = krylov_block(self.apply, u, s).columns
        T = np.zeros((width, s))
        if s > 1:
            T[:, 1:] = self._solve_blocks(V_all.T @ Y[:, 1:], kb + 1)
            counter.dot(width * (s - 1))
            Y = np.column_stack([Y[:, :1], block_axpy(Y[:, 1:], V_all, -T[:, 1:], counter=counter).columns])

        cross = self._cross_orthogonality(V_all, Y, kb + 1)
        if cross > self.orth_tol:
            logger.debug("s-step Arnoldi: reorthogonalizing block %d (cross %.2e)", kb + 1, cross)
            T2 = self._solve_blocks(V_all.T @ Y, kb + 1)
            counter.dot(width * s)
            Y = block_axpy(Y, V_all, -T2, counter=counter).columns
            T += T2
            cross = self._cross_orthogonality(V_all, Y, kb + 1)
            if cross > self.orth_tol:
                logger.warning("s-step Arnoldi: block %d still off by %.2e after reorthogonalization",
                               kb + 1, cross)
        self.max_cross = max(self.max_cross, cross)

        self._accept(Y, kb + 1)

        G[:width, last] = h + sigma * T[:, 0]
        G[width, last] = sigma
        if kb + 1 < self.max_blocks:
            for c in range(s - 1):
                col = width + c
                G[width + c + 1, col] = 1.0
                G[:width, col] += T[:, c + 1]
                G[:, col] -= G[:, :width] @ T[:, c]
        return self._rg_columns(kb, next_diag=self.uppers[kb + 1][0, 0])

    def _cross_orthogonality(self, V_all: np.ndarray, Y: np.ndarray, count: int) -> float:
        """Largest ||V_i^T Y||_F / (||V_i||_F ||Y||_F) over previous blocks."""
        s = self.s
        with self.counter.checking():
            self.counter.dot(V_all.shape[1] * Y.shape[1])
        X = V_all.T @ Y
        y_norm = np.linalg.norm(Y)
        worst = 0.0
        for i in range(count):
            v_norm = np.sqrt(np.trace(self.grams[i]))
            worst = max(worst, np.linalg.norm(X[i * s:(i + 1) * s]) / (v_norm * y_norm))
        return float(worst)

    def _rg_columns(self, kb: int, next_diag: float) -> np.ndarray:
        s = self.s
        G = self.hess.entries
        cols = slice(kb * s, (kb + 1) * s)
        out = np.zeros(((kb + 1) * s + 1, s))
        for i in range(kb + 1):
            out[i * s:(i + 1) * s] = self.uppers[i] @ G[i * s:(i + 1) * s, cols]
        out[(kb + 1) * s] = next_diag * G[(kb + 1) * s, cols]
        return out

    def basis(self) -> SStepBasis:
        """Snapshot of the completed block columns."""
        k = self.n_blocks - 1 if not self.lucky else self.n_blocks
        if self.lucky:
            seed = np.zeros(self._V.shape[0])
            seed_norm = 0.0
        else:
            seed = self.blocks[k][:, 0].copy()
            seed_norm = float(np.sqrt(self.grams[k][0, 0]))
        return SStepBasis(
            blocks=[DirectionBlock(b.copy()) for b in self.blocks[:k]],
            grams=[GramMatrix(W) for W in self.grams[:k]],
            hess=self.hess.truncated(k),
            next_seed=seed,
            next_seed_norm=seed_norm,
            lucky=self.lucky,
        )


def sarnoldi(op: Operator, v1: np.ndarray, s: int, m_blocks: int,
             counter: Optional[OpCounter] = None) -> SStepBasis:
    """
    Run the s-step Arnoldi process for m_blocks block iterations.

    Args:
        op: Operator A
        v1: Nonzero starting vector
        s: Block size
        m_blocks: Number of block columns
        counter: Optional operation counter

    Returns:
        SStepBasis; shorter than m_blocks if an invariant subspace is reached

    Raises:
        BasisCollapseError: if a block loses linear independence
    """
    v1 = np.asarray(v1, dtype=np.float64).ravel()
    if s * m_blocks > v1.shape[0]:
        raise ValueError(f"s*m_blocks = {s * m_blocks} exceeds the dimension {v1.shape[0]}")
    counter = counter if counter is not None else OpCounter()
    engine = SStepArnoldi(CountedOperator(op, counter, v1.shape[0]), s, m_blocks, counter)
    engine.start(v1)
    for _ in range(m_blocks):
        engine.extend()
        if engine.lucky:
            break
    return engine.basis()


def _sgmres_cycle(system: PreparedSystem, log: IterationLog, w: np.ndarray, r: np.ndarray,
                  beta: float, s: int, m: int, budget: int) -> Tuple[int, float, Optional[str]]:
    """
    One s-GMRES(m) cycle; updates w in place.

    Returns:
        (inner columns used, least-squares residual, collapse message or None)
    """
    counter = system.counter
    engine = SStepArnoldi(system.apply, s, m, counter)
    lsq: Optional[GivensLeastSquares] = None
    steps, collapse = 0, None
    try:
        engine.start(r, norm=beta)
        lsq = GivensLeastSquares(beta * engine.uppers[0][0, 0])
        done = False
        for _ in range(m):
            columns = engine.extend()
            for c in range(s):
                if steps >= budget:
                    done = True
                    break
                residual = lsq.add_column(columns[:, c])
                steps += 1
                log.iterations += 1
                log.history.append(residual)
                if residual <= system.threshold:
                    done = True
                    break
            if done or engine.lucky:
                break
    except (BasisCollapseError, RankDeficiencyError) as exc:
        collapse = str(exc)

    if steps:
        y = lsq.solve(steps)
        w += engine.basis_columns(steps) @ y
        counter.update(steps)
    residual = lsq.residual_norms[steps] if lsq is not None else beta
    return steps, residual, collapse


def sgmres_solve(op: Operator, f: np.ndarray, x0: Optional[np.ndarray] = None,
                 cfg: Optional[SStepConfig] = None, preconditioner: Optional[Preconditioner] = None,
                 counter: Optional[OpCounter] = None) -> SolveReport:
    """
    Restarted s-step GMRES(m).

    Each cycle runs m block iterations of the s-step Arnoldi process and
    minimizes ||R (beta e_1 - G y)|| column by column; the cycle ends at the
    first column whose least-squares residual passes the threshold. When the
    basis collapses and the attained residual does not pass, one GMRES(s*m)
    cycle is run from the current iterate before s-step cycles resume.

    Args:
        op: Operator A
        f: Right-hand side
        x0: Initial guess (zero if omitted)
        cfg: Configuration with method SGMRES, s and m
        preconditioner: Ilu0Factors or callable K^-1
        counter: Operation counter to accumulate into

    Returns:
        SolveReport; iterations are inner basis columns summed over cycles
    """
    cfg = cfg or SStepConfig(method=SStepMethod.SGMRES, s=2, m=5)
    if cfg.method != SStepMethod.SGMRES:
        raise ValueError(f"sgmres_solve cannot run method {cfg.method.value}")
    s, m = cfg.s, cfg.m
    system = PreparedSystem(op, f, x0, cfg, preconditioner, counter)
    log = IterationLog(system, cfg, 'sgmres', s=s, k_or_m=m)
    logger.info("s-GMRES(%d), s=%d: n=%d, threshold %.1e", m, s, system.n, system.threshold)

    w = np.zeros(system.n)
    r, rnorm = system.r0.copy(), log.r0_norm
    if rnorm <= system.threshold:
        return log.report(w, True, rnorm)

    while log.iterations < cfg.max_iterations:
        log.start()
        steps, lsq_residual, collapse = _sgmres_cycle(
            system, log, w, r, rnorm, s, m, cfg.max_iterations - log.iterations
        )
        r = system.residual(w, work=True)
        rnorm = system.norm(r)
        log.cycle_residuals.append(rnorm)
        log.record(log.cycles, kind='cycle', complete=collapse is None and steps == s * m)
        log.cycles += 1
        logger.debug("s-GMRES cycle %d: %d columns, least squares %.3e, true %.3e",
                     log.cycles, steps, lsq_residual, rnorm)

        if rnorm <= system.threshold:
            return log.report(w, True, rnorm)
        if log.diverged(rnorm):
            break
        if collapse is None:
            if steps == 0:
                break
            continue

        logger.warning("s-GMRES: %s; running one GMRES(%d) cycle", collapse, s * m)
        budget = cfg.max_iterations - log.iterations
        if budget <= 0:
            log.breakdown = 'basis collapse'
            break
        log.start()
        fallback_steps, _, reason = gmres_cycle(system, log, w, r, rnorm, s * m, budget)
        r = system.residual(w, work=True)
        rnorm = system.norm(r)
        log.cycle_residuals.append(rnorm)
        log.record(log.cycles, kind='fallback', complete=False)
        log.cycles += 1
        log.fallback_cycles += 1
        if rnorm <= system.threshold:
            return log.report(w, True, rnorm)
        if reason is not None or fallback_steps == 0:
            log.breakdown = f"basis collapse; fallback {reason or 'stalled'}"
            break

    return log.report(w, False, rnorm)
