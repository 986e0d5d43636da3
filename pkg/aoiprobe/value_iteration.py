"""Shared machinery for the tabular value-iteration solvers
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from runtype import dataclass

from .config import SystemConfig, validate
from .energy import ArrivalDistribution
from .utils import getLogger

logger = getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 100_000
# Grid sizes above this only produce a warning
WARN_CELLS = 10**6
DEFAULT_MAX_CELLS = 5 * 10**7
# Relative slack for the contraction check, to absorb rounding of large values
CONTRACTION_SLACK = 1e-12
STRUCTURE_TOLERANCE = 1e-10


class NoConvergence(RuntimeError):
    pass


class ContractionViolation(NoConvergence):
    pass


class StructureViolation(AssertionError):
    pass


class StateSpaceTooLarge(MemoryError):
    pass


@dataclass
class ValueTables:
    """Converged (or intermediate) value tables

    Parameters:
        J: Value of each state.
        W: Value of each intermediate state (None when the model has no probing stage).
        V: Expected value of probing, V = E_C W (None when the model has no probing stage).
        q_state: Action values at states, last axis b (or a, without probing). Infeasible actions are inf.
        q_inter: Action values at intermediate states, last axis a. Infeasible actions are inf.
    """

    J: np.ndarray
    W: Optional[np.ndarray]
    V: Optional[np.ndarray]
    q_state: np.ndarray
    q_inter: Optional[np.ndarray]


@dataclass
class SolveResult:
    tables: ValueTables
    policy: Any
    error_trace: List[float]

    @property
    def iterations(self) -> int:
        return len(self.error_trace)


@dataclass
class ConjectureCheck:
    """Outcome of a structural property that is checked and reported, never enforced"""

    name: str
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return f"{self.name}: satisfied"
        return f"{self.name}: {len(self.violations)} violation(s), first at {self.violations[0]}"


def age_successor(age_cap: int) -> np.ndarray:
    "Index map of the saturating age increment, for 0-based age indices (index i is age i+1)"
    return np.minimum(np.arange(age_cap) + 1, age_cap - 1)


def expect_arrivals(J: np.ndarray, dist: ArrivalDistribution, capacity: int) -> np.ndarray:
    """Returns EJ with EJ[e, ...] = E_A J[min(e + A, B), ...], an exact finite sum over the support"""
    levels = np.arange(capacity + 1)
    out = np.zeros_like(J)
    for a, w in zip(dist.support, dist.probs):
        out += w * J[np.minimum(levels + a, capacity)]
    return out


def bool_order_violations(flags: np.ndarray, axis: int, upward: bool = True) -> List[Tuple[int, ...]]:
    """Cells where a boolean array fails to be monotone along an axis.

    With upward=True the flags must look like F..FT..T along the axis; with upward=False, T..TF..F.
    Returns the index of the first cell of each offending pair.
    """
    flags = np.moveaxis(np.asarray(flags, dtype=bool), axis, -1)
    lo, hi = flags[..., :-1], flags[..., 1:]
    bad = (lo & ~hi) if upward else (~lo & hi)
    cells = np.argwhere(bad)
    return [tuple(int(i) for i in np.insert(c[:-1], axis, c[-1])) for c in cells]


def monotone_violations(
    values: np.ndarray,
    axis: int,
    increasing: bool = True,
    tol: float = STRUCTURE_TOLERANCE,
    mask: Optional[np.ndarray] = None,
) -> List[Tuple[int, ...]]:
    """Cells where values fail to be monotone (within tol) along an axis.

    ``mask`` (same shape as values) restricts the check to pairs where both cells are masked in.
    Infinite values compare as usual (inf <= inf holds); NaN cells are skipped.
    """
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    lo, hi = values[..., :-1], values[..., 1:]
    with np.errstate(invalid="ignore"):
        diff = (lo - hi) if increasing else (hi - lo)
        bad = diff > tol
        both_inf = np.isinf(lo) & np.isinf(hi) & (lo == hi)
    bad &= ~both_inf & ~np.isnan(lo) & ~np.isnan(hi)
    if mask is not None:
        m = np.moveaxis(np.asarray(mask, dtype=bool), axis, -1)
        bad &= m[..., :-1] & m[..., 1:]
    cells = np.argwhere(bad)
    return [tuple(int(i) for i in np.insert(c[:-1], axis, c[-1])) for c in cells]


def dominance_violations(
    lower: np.ndarray, upper: np.ndarray, tol: float = STRUCTURE_TOLERANCE, mask: Optional[np.ndarray] = None
) -> List[Tuple[int, ...]]:
    "Cells where lower > upper (by more than tol). NaN cells and equal infinities are skipped."
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    with np.errstate(invalid="ignore"):
        bad = (lower - upper) > tol
    bad &= ~np.isnan(lower) & ~np.isnan(upper)
    if mask is not None:
        bad &= mask
    return [tuple(int(i) for i in c) for c in np.argwhere(bad)]


def min_where(flags: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    "Smallest value whose flag is set along an axis; inf where no flag is set"
    return np.where(flags, values, np.inf).min(axis=axis)


def untruncated(age_cap: int) -> np.ndarray:
    "bool[T-1], ages far enough from T_max (T <= T_max - 2) for the cap not to shape the policy"
    return np.arange(1, age_cap + 1) <= age_cap - 2


def age_mask(shape: Tuple[int, ...], axis: int, age_cap: int) -> np.ndarray:
    "bool array of ``shape``, selecting the untruncated ages along ``axis``"
    view = [1] * len(shape)
    view[axis] = age_cap
    return np.broadcast_to(untruncated(age_cap).reshape(view), shape)


def censor_ages(thresholds: np.ndarray, age_cap: int) -> np.ndarray:
    "Age thresholds above T_max - 2 become inf. Under the cap they cannot be told apart from 'never'."
    thresholds = np.asarray(thresholds, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(thresholds > age_cap - 2, np.inf, thresholds)


def checks_frame(checks: Sequence[ConjectureCheck]) -> pd.DataFrame:
    "One row per check: name, ok, number of violations and the first violating cell"
    return pd.DataFrame(
        {
            "check": [c.name for c in checks],
            "ok": [c.ok for c in checks],
            "violations": [len(c.violations) for c in checks],
            "first_violation": ["" if c.ok else str(c.violations[0]) for c in checks],
        }
    )


def check_counts(checks: Sequence[ConjectureCheck]) -> Dict[str, int]:
    "Check name -> number of violations, for metadata.json"
    return {c.name: len(c.violations) for c in checks}


def rate_order_checks(
    rates: Sequence[float],
    t_thresholds: Sequence[np.ndarray],
    p_thresholds: Sequence[np.ndarray],
    age_cap: int,
    t_age_axis: Optional[int] = None,
    p_age_axis: int = 1,
) -> List[ConjectureCheck]:
    """Age and success-probability thresholds must not grow with the arrival rate.

    ``t_thresholds[i]`` and ``p_thresholds[i]`` belong to ``rates[i]``; all share one shape per kind.
    ``t_age_axis`` and ``p_age_axis`` name the age axis of each kind (None if it has none), which is
    restricted to untruncated ages. Violations are reported as (lower rate, *cell).
    """
    order = np.argsort(rates)
    ordered = [float(rates[i]) for i in order]
    T = np.stack([censor_ages(t_thresholds[i], age_cap) for i in order])
    P = np.stack([np.asarray(p_thresholds[i], dtype=float) for i in order])
    t_mask = None if t_age_axis is None else age_mask(T.shape, t_age_axis + 1, age_cap)
    p_mask = age_mask(P.shape, p_age_axis + 1, age_cap)

    def label(cells):
        return [(ordered[c[0]],) + c[1:] for c in cells]

    return [
        ConjectureCheck(
            "T_th non-increasing in lambda", label(monotone_violations(T, axis=0, increasing=False, mask=t_mask))
        ),
        ConjectureCheck(
            "p_th non-increasing in lambda", label(monotone_violations(P, axis=0, increasing=False, mask=p_mask))
        ),
    ]


class ValueIterationSolver(ABC):
    """Base class for the value-iteration solvers

    Iterates the Bellman backup from J = 0 until the sup-norm change drops to ``tol``,
    asserting the contraction bound e_{t+1} <= alpha * e_t on the way.

    Subclasses are dataclasses declaring (at least) the fields below.
    """

    cfg: SystemConfig
    tol: float
    max_iters: int
    max_cells: int

    @property
    @abstractmethod
    def state_shape(self) -> Tuple[int, ...]: ...

    @abstractmethod
    def _backup(self, J: np.ndarray) -> ValueTables:
        "One application of the Bellman operator, with the action values kept"

    @abstractmethod
    def _greedy_policy(self, tables: ValueTables): ...

    def bellman_backup(self, J: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
        tables = self._backup(J)
        return tables.J, tables.W, tables.V

    def _check_size(self, max_cells: int = DEFAULT_MAX_CELLS):
        cells = int(np.prod(self.state_shape))
        if cells > max_cells:
            raise StateSpaceTooLarge(f"State grid has {cells} cells, over the limit of {max_cells}")
        if cells > WARN_CELLS:
            logger.warning(f"Large state grid: {cells} cells. Value iteration may be slow.")
        return cells

    def value_iteration(self) -> SolveResult:
        validate(self.cfg)
        if self.tol <= 0:
            raise ValueError(f"tol must be positive (got {self.tol})")
        cells = self._check_size(self.max_cells)
        alpha = self.cfg.discount
        logger.info(f"{type(self).__name__}: value iteration over {cells} states (alpha={alpha}, tol={self.tol})")

        J = np.zeros(self.state_shape)
        trace: List[float] = []
        for it in range(1, self.max_iters + 1):
            tables = self._backup(J)
            err = float(np.max(np.abs(tables.J - J)))
            if trace:
                slack = CONTRACTION_SLACK * max(1.0, float(np.max(np.abs(tables.J))))
                if err > alpha * trace[-1] + slack:
                    raise ContractionViolation(
                        f"Iteration {it}: e_t={err!r} > alpha * e_(t-1) = {alpha * trace[-1]!r}"
                    )
            trace.append(err)
            logger.debug(f"Iteration {it}: e_t={err:.3e}")
            J = tables.J
            if err <= self.tol:
                break
        else:
            raise NoConvergence(f"No convergence after {self.max_iters} iterations (e_t={trace[-1]:.3e})")

        logger.info(f"{type(self).__name__}: converged after {len(trace)} iterations (e_t={trace[-1]:.3e})")
        return SolveResult(tables, self._greedy_policy(tables), trace)
