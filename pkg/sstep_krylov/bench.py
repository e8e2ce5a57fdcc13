"""
Sweep harness: run method x problem-size grids and tabulate iteration and
operation counts.
"""
import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sstep_krylov.accounting import (
    WORK_FIELDS,
    AuditVerdict,
    OpCounter,
    audit,
    bounded_slack,
    predicted_gmres,
    predicted_omin,
)
from sstep_krylov.errors import KrylovError
from sstep_krylov.matrix_market import load_problem
from sstep_krylov.problem_gen import DEFAULT_BETA, DEFAULT_GAMMA, ProblemSpec, discretize
from sstep_krylov.solvers_sstep import SStepConfig, SStepMethod, sgmres_solve, smr_solve, somin_solve
from sstep_krylov.solvers_standard import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Method,
    SolveReport,
    SolverConfig,
    gmres_solve,
    mr_solve,
    omin_solve,
)

logger = logging.getLogger(__name__)

MethodName = Literal['mr', 'omin', 'gcr', 'gmres', 'smr', 'somin', 'sgcr', 'sgmres']
STANDARD_METHODS = ('mr', 'omin', 'gcr', 'gmres')
AuditMode = Literal['exact', 'bounded', 'off']

SOLVERS: Dict[str, Callable[..., SolveReport]] = {
    'mr': mr_solve,
    'omin': omin_solve,
    'gcr': omin_solve,
    'gmres': gmres_solve,
    'smr': smr_solve,
    'somin': somin_solve,
    'sgcr': somin_solve,
    'sgmres': sgmres_solve,
}

TABLE_FOOTER = (
    "Iterations: MR/Omin/GCR outer iterations; s-MR/s-Omin/s-GCR s-step iterations; "
    "GMRES/s-GMRES inner basis columns summed over cycles.\n"
    "DIV(i): diverged after i iterations; NC(i): not converged after i; ERR: failed; -: not run."
)


class MethodSpec(BaseModel):
    """One column of a sweep: a method and its parameters."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    method: MethodName
    s: int = Field(1, ge=1, le=8)
    k: Optional[int] = Field(None, ge=1)
    m: Optional[int] = Field(None, ge=1)
    precondition: bool = False
    label: Optional[str] = None

    @model_validator(mode='after')
    def _standard_methods_have_unit_s(self):
        if self.method in STANDARD_METHODS and self.s != 1:
            raise ValueError(f"{self.method} has no block size; use the s-step variant")
        return self

    @property
    def k_or_m(self) -> Optional[int]:
        if self.method in ('omin', 'somin'):
            return self.k
        if self.method in ('gmres', 'sgmres'):
            return self.m
        return None

    @property
    def column_label(self) -> str:
        if self.label:
            return self.label
        if self.method in ('omin', 'somin'):
            return f"s={self.s},k={self.k}"
        if self.method in ('gmres', 'sgmres'):
            return f"s={self.s},m={self.m}"
        return f"{self.method},s={self.s}"

    def solver_config(self, tol: float = DEFAULT_TOL, strict: bool = False,
                      max_iterations: int = DEFAULT_MAX_ITER) -> Union[SolverConfig, SStepConfig]:
        common = dict(tol=tol, strict_termination=strict, max_iterations=max_iterations,
                      precondition=self.precondition)
        k = self.k if self.method in ('omin', 'somin') else None
        m = self.m if self.method in ('gmres', 'sgmres') else None
        if self.method in STANDARD_METHODS:
            return SolverConfig(method=Method(self.method), k=k, m=m, **common)
        return SStepConfig(method=SStepMethod(self.method), s=self.s, k=k, m=m, **common)


class ProblemConfig(BaseModel):
    """Either generated grids (nx, beta, gamma) or an external Matrix Market system."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    nx: Optional[Union[int, List[int]]] = None
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    matrix_market: Optional[str] = None
    rhs: Optional[str] = None

    @field_validator('nx')
    @classmethod
    def _positive_sizes(cls, value):
        sizes = [value] if isinstance(value, int) else value
        if sizes is not None and (not sizes or any(n < 1 for n in sizes)):
            raise ValueError(f"grid sizes must be positive, got {value}")
        return value

    @model_validator(mode='after')
    def _one_source(self):
        if (self.nx is None) == (self.matrix_market is None):
            raise ValueError("give exactly one of nx or matrix_market")
        return self

    @property
    def sizes(self) -> List[Optional[int]]:
        if self.nx is None:
            return [None]
        return [self.nx] if isinstance(self.nx, int) else list(self.nx)


class TerminationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    tol: float = Field(DEFAULT_TOL, gt=0)
    strict: bool = False


class OutputConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    path: Optional[str] = None
    table: Literal['iterations', 'opcounts'] = 'iterations'


class RunConfig(BaseModel):
    """A sweep: problem sizes x methods."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    problem: ProblemConfig
    methods: List[MethodSpec] = Field(..., min_length=1)
    termination: TerminationConfig = TerminationConfig()
    max_iterations: int = Field(DEFAULT_MAX_ITER, ge=1)
    audit: AuditMode = 'bounded'
    workers: int = Field(1, ge=1)
    output: OutputConfig = OutputConfig()

    @classmethod
    def from_json_file(cls, path: Union[str, Path]) -> 'RunConfig':
        path = Path(path)
        if not path.exists():
            raise ValueError(f"Config file does not exist: {path}")
        with open(path, 'r') as f:
            return cls.model_validate(json.load(f))


def _omin_column(k: Optional[int], s: int = 1, column: Optional[str] = None):
    return lambda j: predicted_omin(j, k, s, column=column)


def audit_report(report: SolveReport, spec: MethodSpec, mode: AuditMode = 'bounded') -> Optional[AuditVerdict]:
    """
    Check a report's per-iteration work against the analytic counts.

    MR, s-MR, Omin/GCR (and their s=1 s-step forms) and GMRES are always
    audited exactly. The s-step Orthomin family with s > 1 is audited in
    the requested mode. s-GMRES cycles are audited on matvecs only.
    """
    if mode == 'off':
        return None
    s = spec.s
    method = spec.method
    k = spec.k if method in ('omin', 'somin') else None

    if method == 'mr':
        return audit(report, OpCounter(dotprods=2, matvecs=1, vec_updates=2))
    if method == 'smr':
        predicted = OpCounter(dotprods=s + s * (s + 1) // 2, matvecs=s, vec_updates=2 * s)
        return audit(report, predicted)
    if method in ('omin', 'gcr') or (method in ('somin', 'sgcr') and s == 1):
        return audit(report, _omin_column(k))
    if method in ('somin', 'sgcr'):
        predicted = _omin_column(k, s, column='somin')
        if mode == 'exact':
            return audit(report, predicted, mode='exact')
        return audit(report, predicted, mode='bounded', slack=bounded_slack(s))
    if method == 'gmres':
        return audit(report, predicted_gmres(spec.m, 1).gmres, fields=WORK_FIELDS)
    return audit(report, predicted_gmres(spec.m, s).sgmres, fields=('matvecs',))


def _failed_report(spec: MethodSpec, reason: str) -> SolveReport:
    return SolveReport(
        converged=False,
        iterations=0,
        cycles=0,
        residual_history=[],
        final_residual=float('nan'),
        op_counts=OpCounter(),
        breakdown=f"error: {reason}",
        method=spec.method,
        s=spec.s,
        k_or_m=spec.k_or_m,
        preconditioned=spec.precondition,
    )


def solve_cell(system, spec: MethodSpec, termination: TerminationConfig = TerminationConfig(),
               max_iterations: int = DEFAULT_MAX_ITER, audit_mode: AuditMode = 'bounded') -> SolveReport:
    """
    Solve one assembled system with one method.

    Args:
        system: DiscretizedProblem or ExternalSystem (A, f, x0)
        spec: Method and parameters
        termination: Tolerance and termination reading
        max_iterations: Iteration cap
        audit_mode: Operation audit mode

    Returns:
        SolveReport with meta['label'] and, unless audit_mode is 'off', the audit verdict
    """
    cfg = spec.solver_config(termination.tol, termination.strict, max_iterations)
    report = SOLVERS[spec.method](system.A, system.f, system.x0, cfg)
    report.meta['label'] = spec.column_label
    verdict = audit_report(report, spec, audit_mode)
    if verdict is not None:
        report.audit = verdict.to_dict()
    return report


@dataclass
class _Cell:
    position: int
    size: Optional[int]
    spec: MethodSpec


def _assemble(config: RunConfig, size: Optional[int]):
    problem = config.problem
    if size is None:
        return load_problem(problem.matrix_market, problem.rhs)
    return discretize(ProblemSpec(nx=size, beta=problem.beta, gamma=problem.gamma))


def run_sweep(config: RunConfig, progress_callback: Optional[Callable[[int, int], None]] = None) -> List[SolveReport]:
    """
    Run every (problem size x method) cell of a sweep.

    Systems are assembled once per size and shared read-only between cells.
    Breakdowns and errors are recorded in the failing cell's report.

    Args:
        config: Sweep configuration
        progress_callback: Optional callback(done, total)

    Returns:
        Reports in config order (sizes outer, methods inner)
    """
    systems: Dict[Optional[int], object] = {}
    failures: Dict[Optional[int], str] = {}
    for size in config.problem.sizes:
        try:
            systems[size] = _assemble(config, size)
        except (KrylovError, ValueError) as exc:
            logger.warning("Could not assemble problem nx=%s: %s", size, exc)
            failures[size] = str(exc)

    cells = [
        _Cell(position, size, spec)
        for position, (size, spec) in enumerate(
            (size, spec) for size in config.problem.sizes for spec in config.methods
        )
    ]
    total = len(cells)

    def run(cell: _Cell) -> SolveReport:
        if cell.size in failures:
            report = _failed_report(cell.spec, failures[cell.size])
        else:
            system = systems[cell.size]
            try:
                report = solve_cell(system, cell.spec, config.termination,
                                    config.max_iterations, config.audit)
            except (KrylovError, ValueError) as exc:
                logger.warning("Cell %s on nx=%s failed: %s", cell.spec.column_label, cell.size, exc)
                report = _failed_report(cell.spec, str(exc))
        report.meta.update(nx=cell.size, label=cell.spec.column_label, n=_dimension(systems.get(cell.size)))
        return report

    logger.info("Sweep: %d cells on %d workers", total, config.workers)
    reports: List[Optional[SolveReport]] = [None] * total
    # progress is reported from this thread only
    if config.workers == 1:
        for done, cell in enumerate(cells, 1):
            reports[cell.position] = run(cell)
            if progress_callback:
                progress_callback(done, total)
        return reports
    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        futures = {executor.submit(run, cell): cell.position for cell in cells}
        for done, future in enumerate(as_completed(futures), 1):
            reports[futures[future]] = future.result()
            if progress_callback:
                progress_callback(done, total)
    return reports


def _dimension(system) -> Optional[int]:
    return None if system is None else system.n


def _cell_text(report: SolveReport, layout: str) -> str:
    value = report.iterations if layout == 'iterations' else report.op_counts.matvecs
    if report.breakdown and report.breakdown.startswith('error'):
        return 'ERR'
    if report.converged:
        return str(value)
    if report.breakdown == 'divergence':
        return f"DIV({report.iterations})"
    return f"NC({report.iterations})"


@dataclass
class TableOutput:
    text: str
    csv: str


CSV_COLUMNS = ('nx', 'method', 's', 'k_or_m', 'preconditioned', 'iterations', 'matvecs',
               'dotprods', 'updates', 'final_residual', 'converged', 'breakdown')


def emit_table(reports: List[SolveReport], layout: str = 'iterations') -> TableOutput:
    """
    Format reports as a size x method grid plus a CSV with one row per report.

    Args:
        reports: Reports carrying meta['nx'] (or meta['n']) and meta['label']
        layout: 'iterations' or 'opcounts' (cells show matvecs)

    Returns:
        TableOutput(text, csv); missing cells are rendered '-'
    """
    if layout not in ('iterations', 'opcounts'):
        raise ValueError(f"unknown table layout: {layout}")

    rows: List[Optional[int]] = []
    columns: List[str] = []
    cells: Dict[Tuple[Optional[int], str], str] = {}
    for report in reports:
        row = report.meta.get('nx', report.meta.get('n'))
        label = report.meta.get('label') or report.method
        if row not in rows:
            rows.append(row)
        if label not in columns:
            columns.append(label)
        cells[(row, label)] = _cell_text(report, layout)

    header = ['nx'] + columns
    body = [[str(row) if row is not None else 'ext'] + [cells.get((row, col), '-') for col in columns]
            for row in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = [' | '.join(value.rjust(w) for value, w in zip(header, widths))]
    lines.append('-+-'.join('-' * w for w in widths))
    for line in body:
        lines.append(' | '.join(value.rjust(w) for value, w in zip(line, widths)))
    title = 'Iterations' if layout == 'iterations' else 'Matrix-vector products'
    text = f"{title}\n" + '\n'.join(lines) + '\n\n' + TABLE_FOOTER + '\n'

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        counts = report.op_counts
        writer.writerow([
            report.meta.get('nx', ''),
            report.method,
            report.s,
            '' if report.k_or_m is None else report.k_or_m,
            report.preconditioned,
            report.iterations,
            counts.matvecs,
            counts.dotprods,
            counts.vec_updates,
            repr(float(report.final_residual)),
            report.converged,
            report.breakdown or '',
        ])
    return TableOutput(text=text, csv=buffer.getvalue())


def reports_json(reports: List[SolveReport]) -> str:
    """Deterministic JSON for a list of reports."""
    return json.dumps([report.to_dict() for report in reports], indent=2, sort_keys=True)


def write_outputs(reports: List[SolveReport], out_dir: Union[str, Path], layout: str = 'iterations') -> Dict[str, Path]:
    """Write reports.json, table.txt and table.csv into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = emit_table(reports, layout)
    paths = {
        'reports': out_dir / 'reports.json',
        'table': out_dir / 'table.txt',
        'csv': out_dir / 'table.csv',
    }
    paths['reports'].write_text(reports_json(reports) + '\n')
    paths['table'].write_text(table.text)
    paths['csv'].write_text(table.csv)
    return paths
