"""
Vector-operation accounting.

Solvers count inner products, vector updates and matrix-vector products
into a per-solve OpCounter. The predicted_* functions evaluate the
analytic per-iteration/per-cycle costs of Orthomin(k), s-Omin(k),
GMRES(sm) and s-GMRES(m); audit() compares the two.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, Dict, Iterable, List, Optional, Union

logger = logging.getLogger(__name__)

WORK_FIELDS = ('dotprods', 'matvecs', 'vec_updates')

# Dot products spent on the termination check, one per iteration.
TERMINATION_SLACK = 1


@dataclass
class OpCounter:
    """Counts of vector operations for one solve."""
    dotprods: int = 0
    matvecs: int = 0
    vec_updates: int = 0
    stored_vectors: int = 0
    check_dotprods: int = 0
    check_matvecs: int = 0
    check_updates: int = 0
    _checking: int = field(default=0, repr=False, compare=False)

    def dot(self, count: int = 1) -> None:
        if self._checking:
            self.check_dotprods += count
        else:
            self.dotprods += count

    def matvec(self, count: int = 1) -> None:
        if self._checking:
            self.check_matvecs += count
        else:
            self.matvecs += count

    def update(self, count: int = 1) -> None:
        if self._checking:
            self.check_updates += count
        else:
            self.vec_updates += count

    def store(self, live_vectors: int) -> None:
        """Record the number of logical n-vectors alive; keeps the peak."""
        self.stored_vectors = max(self.stored_vectors, int(live_vectors))

    @contextmanager
    def checking(self):
        """Route counts made inside the block to the check counters."""
        self._checking += 1
        try:
            yield self
        finally:
            self._checking -= 1

    def work(self) -> Dict[str, int]:
        return {name: getattr(self, name) for name in WORK_FIELDS}

    def delta(self, since: Dict[str, int]) -> Dict[str, int]:
        """Work done since a previous work() snapshot."""
        now = self.work()
        return {name: now[name] - since[name] for name in WORK_FIELDS}

    def to_dict(self) -> Dict[str, int]:
        data = asdict(self)
        data.pop('_checking')
        return data


def _gauss(n: int) -> int:
    return n * (n + 1) // 2


def predicted_omin(j: int, k: Optional[int], s: int = 1, column: Optional[str] = None) -> OpCounter:
    """
    Operation counts for iteration j of Orthomin(k) or s-step Orthomin(k).

    Args:
        j: Iteration index (0-based)
        k: Window length; None for GCR (unbounded window)
        s: Block size
        column: 'omin' or 'somin'; defaults to 'omin' when s == 1

    Returns:
        OpCounter holding dotprods, matvecs and vec_updates
    """
    if j < 0 or s < 1 or (k is not None and k < 1):
        raise ValueError(f"invalid arguments j={j}, k={k}, s={s}")
    column = column or ('omin' if s == 1 else 'somin')
    window = j + 1 if k is None else min(j + 1, k)

    if column == 'omin':
        if s != 1:
            raise ValueError("the Omin(k) column is defined for s=1 only")
        # min([(j+1)+2],[k+2]) dots; updates 2*window+2 (the printed
        # 2(j+1)+1 branch undercounts the r update)
        return OpCounter(dotprods=window + 2, matvecs=1, vec_updates=2 * window + 2)
    if column == 'somin':
        tri = s * (s + 1) // 2
        growing_dots = (j + 1) * s * s + tri
        growing_updates = 2 * (j + 1) * s * s + s
        if k is None:
            return OpCounter(dotprods=growing_dots, matvecs=s, vec_updates=growing_updates)
        return OpCounter(
            dotprods=min(growing_dots, k * s * s + tri),
            matvecs=s,
            vec_updates=min(growing_updates, 2 * k * s * s + tri),
        )
    raise ValueError(f"unknown column: {column}")


def predicted_omin_storage(k: int, s: int = 1) -> int:
    """Logical vectors stored besides A: 2k+2 for Omin(k), 2ks+s+1 for s-Omin(k)."""
    if s == 1:
        return 2 * k + 2
    return 2 * k * s + s + 1


@dataclass
class GmresPrediction:
    """One-cycle costs of GMRES(sm) next to s-GMRES(m)."""
    gmres: OpCounter
    sgmres: OpCounter

    def to_dict(self) -> Dict[str, Any]:
        return {'gmres': self.gmres.to_dict(), 'sgmres': self.sgmres.to_dict()}


def predicted_gmres(m: int, s: int = 1) -> GmresPrediction:
    """
    Vector operations of one cycle of GMRES(sm) and of s-GMRES(m).

    Args:
        m: Block iterations per cycle (restart length for s=1)
        s: Block size

    Returns:
        GmresPrediction with both columns evaluated
    """
    if m < 1 or s < 1:
        raise ValueError(f"invalid arguments m={m}, s={s}")
    ms = m * s
    gmres = OpCounter(
        dotprods=ms + _gauss(ms),
        matvecs=ms + 1,
        vec_updates=(ms * ms + ms) // 2 + 2 * ms,
        stored_vectors=ms + 1,
    )
    sgmres = OpCounter(
        dotprods=(m * (m - 1) * s * s) // 2 + _gauss(s) + s,
        matvecs=s * (m + 1),
        vec_updates=m * (m + 1) * s * s,
        stored_vectors=(s * (m + 1) * m) // 2 + m,
    )
    return GmresPrediction(gmres=gmres, sgmres=sgmres)


def bounded_slack(s: int) -> Dict[str, int]:
    """
    Allowance used by bounded audits of the s-step Orthomin family.

    The termination check costs one dot per iteration; the s-step column of
    the operation table leaves out the s products of the right-hand side m_i
    and counts s instead of 2s updates of x and r.
    """
    return {'dotprods': TERMINATION_SLACK + (s if s > 1 else 0),
            'matvecs': 0,
            'vec_updates': s if s > 1 else 0}


@dataclass
class AuditVerdict:
    """Outcome of comparing counted against predicted operations."""
    passed: bool
    mode: str
    checked: int
    diffs: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


Prediction = Union[OpCounter, Callable[[int], OpCounter]]


def audit(
    report,
    predicted: Prediction,
    mode: str = 'exact',
    fields: Iterable[str] = WORK_FIELDS,
    slack: Optional[Dict[str, int]] = None,
    steady_from: int = 0,
) -> AuditVerdict:
    """
    Compare the per-iteration (or per-cycle) work recorded in a report.

    Only complete entries of report.op_history are audited: the trailing
    iteration that stopped at the convergence test and fallback cycles are
    skipped. Matvecs are always compared exactly.

    Args:
        report: SolveReport with op_history
        predicted: OpCounter, or callable(index) -> OpCounter
        mode: 'exact' or 'bounded'
        fields: Counters to compare
        slack: Per-counter allowance in bounded mode
        steady_from: First entry index to audit

    Returns:
        AuditVerdict with a structured diff for every mismatch
    """
    if mode not in ('exact', 'bounded'):
        raise ValueError(f"unknown audit mode: {mode}")
    slack = slack or {}
    diffs = []
    checked = 0

    for entry in report.op_history:
        if not entry.get('complete', True) or entry['index'] < steady_from:
            continue
        expected = predicted(entry['index']) if callable(predicted) else predicted
        checked += 1
        for name in fields:
            counted = entry[name]
            target = getattr(expected, name)
            if mode == 'exact' or name == 'matvecs':
                ok = counted == target
            else:
                ok = counted <= target + slack.get(name, 0)
            if not ok:
                diffs.append({
                    'kind': entry.get('kind', 'iteration'),
                    'index': entry['index'],
                    'counter': name,
                    'counted': counted,
                    'predicted': target,
                })

    verdict = AuditVerdict(passed=not diffs, mode=mode, checked=checked, diffs=diffs)
    if diffs:
        logger.warning("Operation audit found %d mismatches", len(diffs))
    return verdict
