"""
CLI interface for sstep-krylov.
"""
import logging
from pathlib import Path

import click
from pydantic import ValidationError
from tqdm import tqdm

from sstep_krylov.bench import (
    MethodSpec,
    RunConfig,
    TerminationConfig,
    emit_table,
    reports_json,
    run_sweep,
    solve_cell,
    write_outputs,
)
from sstep_krylov.errors import KrylovError
from sstep_krylov.matrix_market import export_problem
from sstep_krylov.problem_gen import DEFAULT_BETA, DEFAULT_GAMMA, ProblemSpec, discretize
from sstep_krylov.solvers_standard import DEFAULT_MAX_ITER, DEFAULT_TOL

METHODS = ['mr', 'omin', 'gcr', 'gmres', 'smr', 'somin', 'sgcr', 'sgmres']
LOG_LEVELS = [logging.WARNING, logging.INFO, logging.DEBUG]


@click.group()
@click.option('-v', '--verbose', count=True, help='Increase log verbosity (-v info, -vv debug)')
def cli(verbose):
    """s-step Krylov solvers - Orthomin, GCR and GMRES with blocked inner products."""
    logging.basicConfig(
        level=LOG_LEVELS[min(verbose, len(LOG_LEVELS) - 1)],
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


@cli.command()
@click.option('--nx', type=int, required=True, help='Interior grid points per direction')
@click.option('--method', type=click.Choice(METHODS), required=True, help='Solver')
@click.option('--s', 's', type=int, default=1, help='Block size (s-step methods)')
@click.option('--k', 'k', type=int, default=None, help='Orthomin window length')
@click.option('--m', 'm', type=int, default=None, help='GMRES restart length / s-GMRES block count')
@click.option('--precond', type=click.Choice(['none', 'ilu0']), default='none', help='Right preconditioner')
@click.option('--tol', type=float, default=DEFAULT_TOL, help='Residual norm threshold')
@click.option('--max-iter', type=int, default=DEFAULT_MAX_ITER, help='Iteration cap')
@click.option('--strict-termination', is_flag=True, help='Read the tolerance as ||r||^(1/2) < tol')
@click.option('--audit', 'audit_mode', type=click.Choice(['exact', 'bounded', 'off']), default='bounded',
              help='Operation-count audit')
@click.option('--beta', type=float, default=DEFAULT_BETA, help='x convection coefficient scale')
@click.option('--gamma', type=float, default=DEFAULT_GAMMA, help='y convection coefficient scale')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Write the report as JSON')
def solve(nx, method, s, k, m, precond, tol, max_iter, strict_termination, audit_mode, beta, gamma, out):
    """Solve one convection-diffusion problem."""
    try:
        spec = MethodSpec(method=method, s=s, k=k, m=m, precondition=precond == 'ilu0')
        termination = TerminationConfig(tol=tol, strict=strict_termination)
        spec.solver_config(tol, strict_termination, max_iter)
    except ValidationError as exc:
        raise click.UsageError(str(exc))

    try:
        problem = discretize(ProblemSpec(nx=nx, beta=beta, gamma=gamma))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    click.echo(f"Solving n={problem.n} (nx={nx}) with {spec.column_label} [{method}]"
               f"{' + ILU(0)' if spec.precondition else ''}...")

    try:
        report = solve_cell(problem, spec, termination, max_iter, audit_mode)
    except KrylovError as exc:
        raise click.ClickException(str(exc))
    report.meta.update(nx=nx, n=problem.n)

    status = 'converged' if report.converged else f"stopped ({report.breakdown or 'max iterations'})"
    click.echo(f"  {status} after {report.iterations} iterations, {report.cycles} cycles")
    click.echo(f"  ||f - A x|| = {report.final_residual:.3e}")
    counts = report.op_counts
    click.echo(f"  matvecs {counts.matvecs}, dot products {counts.dotprods}, updates {counts.vec_updates}")
    if report.fallback_cycles:
        click.echo(f"  fallback GMRES cycles: {report.fallback_cycles}")
    if report.audit is not None:
        verdict = 'passed' if report.audit['passed'] else f"{len(report.audit['diffs'])} mismatches"
        click.echo(f"  audit ({report.audit['mode']}): {verdict}")

    if out:
        Path(out).write_text(reports_json([report]) + '\n')
        click.echo(f"Report saved to {out}")


@cli.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), required=True,
              help='Sweep configuration (JSON)')
@click.option('--out-dir', type=click.Path(file_okay=False), default=None, help='Output directory')
@click.option('--table', 'layout', type=click.Choice(['iterations', 'opcounts']), default=None,
              help='Table cells')
def sweep(config_path, out_dir, layout):
    """Run a problem-size x method sweep."""
    try:
        config = RunConfig.from_json_file(config_path)
    except (ValidationError, ValueError) as exc:
        raise click.UsageError(f"invalid config: {exc}")
    layout = layout or config.output.table
    out_dir = out_dir or config.output.path

    total = len(config.problem.sizes) * len(config.methods)
    click.echo(f"Running {total} cells...")
    with tqdm(total=total) as pbar:
        def progress_update(done, total):
            pbar.update(1)

        reports = run_sweep(config, progress_callback=progress_update)

    click.echo()
    click.echo(emit_table(reports, layout).text)
    if out_dir:
        paths = write_outputs(reports, out_dir, layout)
        click.echo(f"Reports saved to {paths['reports']}")


@cli.command()
@click.option('--nx', type=int, required=True, help='Interior grid points per direction')
@click.option('--beta', type=float, default=DEFAULT_BETA, help='x convection coefficient scale')
@click.option('--gamma', type=float, default=DEFAULT_GAMMA, help='y convection coefficient scale')
@click.option('--out', 'stem', type=click.Path(), required=True, help='Output path without extension')
def export(nx, beta, gamma, stem):
    """Write a test problem in Matrix Market format."""
    try:
        problem = discretize(ProblemSpec(nx=nx, beta=beta, gamma=gamma))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    paths = export_problem(problem, stem)
    click.echo(f"Exported n={problem.n}, nnz={problem.A.nnz}:")
    for name, path in paths.to_dict().items():
        click.echo(f"  {name}: {path}")


if __name__ == '__main__':
    cli()
