"""
Matrix Market import/export of test systems.
"""
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from sstep_krylov.problem_gen import SCHEME, DiscretizedProblem, initial_guess
from sstep_krylov.sparse_core import SparseMatrix, spmv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class ExportedPaths:
    """Files written by export_problem."""
    matrix: Path
    rhs: Path
    sidecar: Path

    def to_dict(self) -> Dict[str, str]:
        return {'matrix': str(self.matrix), 'rhs': str(self.rhs), 'sidecar': str(self.sidecar)}


@dataclass
class ExternalSystem:
    """A system read from disk: no analytic solution is known."""
    A: SparseMatrix
    f: np.ndarray
    x0: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)
    u_true: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.A.n_rows

    def to_dict(self) -> Dict[str, Any]:
        data = {'n': self.n, 'nnz': self.A.nnz}
        data.update(self.meta)
        return data


def read_matrix_market(path: PathLike) -> SparseMatrix:
    """
    Read a coordinate or array Matrix Market file.

    Raises:
        ValueError: if the file does not exist or does not hold a matrix
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"Matrix file does not exist: {path}")
    data = scipy.io.mmread(str(path))
    if sp.issparse(data):
        return SparseMatrix.from_scipy(data)
    return SparseMatrix.from_dense(np.atleast_2d(data))


def write_matrix_market(A: SparseMatrix, path: PathLike, comment: str = '') -> Path:
    """Write A in coordinate real general format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), A.csr.tocoo(), comment=comment, field='real', symmetry='general')
    return path


def _read_vector(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"Right-hand side file does not exist: {path}")
    data = scipy.io.mmread(str(path))
    if sp.issparse(data):
        data = data.toarray()
    return np.asarray(data, dtype=np.float64).ravel()


def export_problem(problem: DiscretizedProblem, stem: PathLike) -> ExportedPaths:
    """
    Write <stem>.mtx, <stem>_rhs.mtx and the <stem>.json sidecar.

    Args:
        problem: Assembled problem
        stem: Output path without extension

    Returns:
        ExportedPaths
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    matrix_path = stem.with_name(stem.name + '.mtx')
    rhs_path = stem.with_name(stem.name + '_rhs.mtx')
    sidecar_path = stem.with_name(stem.name + '.json')

    write_matrix_market(problem.A, matrix_path, comment=SCHEME)
    scipy.io.mmwrite(str(rhs_path), problem.f.reshape(-1, 1), field='real')

    data = {
        'exported_at': datetime.now().isoformat(),
        'matrix': matrix_path.name,
        'rhs': rhs_path.name,
    }
    data.update(problem.to_dict())
    with open(sidecar_path, 'w') as f:
        json.dump(data, f, indent=2)

    logger.info("Exported n=%d system to %s", problem.n, matrix_path)
    return ExportedPaths(matrix=matrix_path, rhs=rhs_path, sidecar=sidecar_path)


def load_problem(matrix_path: PathLike, rhs_path: Optional[PathLike] = None) -> ExternalSystem:
    """
    Load an external system.

    Without a right-hand side file, f = A * ones(n). A <stem>.json sidecar
    next to the matrix, if present, is merged into meta.

    Raises:
        ValueError: if A is not square or the right-hand side length differs
    """
    matrix_path = Path(matrix_path)
    A = read_matrix_market(matrix_path)
    if A.n_rows != A.n_cols:
        raise ValueError(f"matrix must be square, got {A.n_rows}x{A.n_cols}")
    if rhs_path is None:
        f = spmv(A, np.ones(A.n_cols))
    else:
        f = _read_vector(rhs_path)
        if f.shape[0] != A.n_rows:
            raise ValueError(f"right-hand side has length {f.shape[0]}, matrix has {A.n_rows} rows")

    meta: Dict[str, Any] = {'matrix_market': str(matrix_path)}
    sidecar = matrix_path.with_suffix('.json')
    if sidecar.exists():
        with open(sidecar, 'r') as handle:
            meta.update(json.load(handle))
    logger.debug("Loaded %s: n=%d, nnz=%d", matrix_path, A.n_rows, A.nnz)
    return ExternalSystem(A=A, f=f, x0=initial_guess(A.n_rows), meta=meta)
