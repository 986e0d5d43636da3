"""Value iteration for N processes sharing one i.i.d. channel

State (E, T_1..T_N). The per-slot cost is the sum of ages; sampling process k after observing C
costs sum_{i!=k} T_i + T_k (1-p(C)). A delivered process restarts at age 1, the others age by one.

Age vectors are flattened to a single table index by an ``AgeGrid``. The full grid enumerates all
T_max^N vectors in C order; the compact grid keeps only non-increasing vectors, which is exact because
the processes are interchangeable (one shared channel, one sample cost).
"""

from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from runtype import dataclass

from .channel import IidChannel
from .config import InvalidConfig, SystemConfig
from .energy import EnergyModel
from .utils import getLogger
from .value_iteration import (
    DEFAULT_MAX_CELLS,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    ConjectureCheck,
    SolveResult,
    StateSpaceTooLarge,
    StructureViolation,
    ValueIterationSolver,
    ValueTables,
    bool_order_violations,
    censor_ages,
    checks_frame,
    expect_arrivals,
    min_where,
    monotone_violations,
    untruncated,
)

logger = getLogger(__name__)

PERMUTATION_TOLERANCE = 1e-12


class AgeGrid:
    """Enumerates the age vectors of N processes, and maps each to its successors

    Attributes:
        ages: int[K, N], the age vector stored at each table index.
        succ_all: int[K], index of the vector with every age incremented (saturating).
        reset: int[K, N], index of the vector after delivering process k.
    """

    def __init__(self, age_cap: int, num_processes: int, compact: bool = False):
        self.age_cap = age_cap
        self.num_processes = num_processes
        self.compact = compact
        shape = (age_cap,) * num_processes

        if compact:
            vectors = list(combinations_with_replacement(range(age_cap, 0, -1), num_processes))
            self._lookup = {v: i for i, v in enumerate(vectors)}
            self.ages = np.array(vectors, dtype=int).reshape(len(vectors), num_processes)
        else:
            self._lookup = None
            self.ages = np.indices(shape).reshape(num_processes, -1).T + 1

        bumped = np.minimum(self.ages + 1, age_cap)
        self.succ_all = self.indices_of(bumped)
        self.reset = np.empty((len(self.ages), num_processes), dtype=int)
        for k in range(num_processes):
            after = bumped.copy()
            after[:, k] = 1
            self.reset[:, k] = self.indices_of(after)

    @property
    def size(self) -> int:
        return len(self.ages)

    def indices_of(self, vectors: np.ndarray) -> np.ndarray:
        "Table index of each row of an int[n, N] array of age vectors"
        if self._lookup is None:
            return np.ravel_multi_index(tuple((vectors - 1).T), (self.age_cap,) * self.num_processes)
        canon = -np.sort(-vectors, axis=1)
        return np.array([self._lookup[tuple(row)] for row in canon.tolist()], dtype=int)

    def locate(self, ages: Sequence[int]) -> Tuple[int, List[int]]:
        """Returns the table index of an age vector, and the process stored at each table position.

        Equal ages keep their relative order, so ties resolve to the lowest process index.
        """
        N = self.num_processes
        if len(ages) != N:
            raise ValueError(f"Expected {N} ages, got {len(ages)}")
        if self._lookup is None:
            return int(np.ravel_multi_index(tuple(a - 1 for a in ages), (self.age_cap,) * N)), list(range(N))
        order = sorted(range(N), key=lambda i: -ages[i])
        return self._lookup[tuple(int(ages[i]) for i in order)], order

    def full_index_map(self) -> np.ndarray:
        "For every vector of the full grid (in C order), its index in this grid"
        N = self.num_processes
        return self.indices_of(np.indices((self.age_cap,) * N).reshape(N, -1).T + 1)


@lru_cache(maxsize=8)
def age_grid(age_cap: int, num_processes: int, compact: bool = False) -> AgeGrid:
    return AgeGrid(age_cap, num_processes, compact)


@dataclass
class MultiValueTables(ValueTables):
    """Value tables of the multi-process model, indexed [E, K] and [E, K, j]

    ``choice[E, K, j]`` is the table position (column of ``AgeGrid.ages``) of the best process to sample,
    -1 where sampling is unaffordable.
    """

    choice: np.ndarray


@dataclass
class MultiPolicy:
    probe: np.ndarray
    sample: np.ndarray
    process: np.ndarray
    grid: AgeGrid

    def decide_probe(self, energy: int, ages: Sequence[int]) -> bool:
        k, _ = self.grid.locate(ages)
        return bool(self.probe[energy, k])

    def choose_process(self, energy: int, ages: Sequence[int], channel_pos: int) -> Optional[int]:
        "The process to sample after observing the channel, or None to idle"
        k, order = self.grid.locate(ages)
        if not self.sample[energy, k, channel_pos]:
            return None
        return order[int(self.process[energy, k, channel_pos])]


@dataclass
class IidMultiSolver(ValueIterationSolver):
    cfg: SystemConfig
    channel: IidChannel
    energy: EnergyModel
    compact: bool = False
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    max_cells: int = DEFAULT_MAX_CELLS

    @property
    def grid(self) -> AgeGrid:
        return age_grid(self.cfg.age_cap, self.cfg.num_processes, self.compact)

    @property
    def state_shape(self) -> Tuple[int, ...]:
        N, Tm = self.cfg.num_processes, self.cfg.age_cap
        # Non-increasing vectors: C(Tm+N-1, N)
        size = comb(Tm + N - 1, N) if self.compact else Tm**N
        return (self.cfg.energy_levels, size)

    def _backup(self, J: np.ndarray) -> MultiValueTables:
        if self.energy.harvest is not None:
            raise InvalidConfig("The i.i.d. solvers do not model a harvesting chain. Use the Markov solver.")
        cfg = self.cfg
        alpha = cfg.discount
        B, N = cfg.buffer_capacity, cfg.num_processes
        Ep, Es = cfg.probe_cost, cfg.sample_cost
        grid = self.grid
        K, m = grid.size, self.channel.num_states
        p = self.channel.success_probs
        ages = grid.ages.astype(float)
        cost = ages.sum(axis=1)

        EJ = expect_arrivals(J, self.energy.arrivals, B)
        EJ_next = EJ[:, grid.succ_all]
        EJ_reset = EJ[:, grid.reset]  # [E, K, k]

        no_probe = cost + alpha * EJ_next
        q_state = np.full((B + 1, K, 2), np.inf)
        q_state[..., 0] = no_probe
        q_inter = np.full((B + 1, K, m, 2), np.inf)
        W = np.repeat(no_probe[:, :, None], m, axis=2)
        choice = np.full((B + 1, K, m), -1, dtype=int)

        e = np.arange(cfg.min_energy, B + 1)
        after = e - Ep - Es
        idle = cost + alpha * EJ_next[e - Ep]
        # [e, K, k, j]: sample process k when the channel is in state j
        sample = (
            (cost[:, None, None] - ages[:, :, None] * p)
            + alpha * p * EJ_reset[after][..., None]
            + alpha * (1 - p) * EJ_next[after][:, :, None, None]
        )
        best = sample.min(axis=2)
        # Among equally good processes prefer the oldest, then the lowest position
        priority = ages * N - np.arange(N)
        score = np.where(sample == best[:, :, None, :], priority[None, :, :, None], -np.inf)
        choice[e] = score.argmax(axis=2)

        q_inter[e, :, :, 0] = idle[:, :, None]
        q_inter[e, :, :, 1] = best
        W[e] = np.minimum(idle[:, :, None], best)

        V = W @ self.channel.weights
        q_state[e, :, 1] = V[e]
        J_new = no_probe.copy()
        J_new[e] = np.minimum(no_probe[e], V[e])
        return MultiValueTables(J_new, W, V, q_state, q_inter, choice)

    def _greedy_policy(self, tables: MultiValueTables) -> MultiPolicy:
        probe = tables.q_state[..., 1] < tables.q_state[..., 0]
        sample = tables.q_inter[..., 1] < tables.q_inter[..., 0]
        return MultiPolicy(probe, sample, tables.choice, self.grid)


def bellman_backup_multi(
    J: np.ndarray, cfg: SystemConfig, channel: IidChannel, energy: EnergyModel, compact: bool = False
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    solver = IidMultiSolver(cfg, channel, energy, compact=compact)
    solver._check_size(solver.max_cells)
    return solver.bellman_backup(J)


def value_iteration_multi(
    cfg: SystemConfig,
    channel: IidChannel,
    energy: EnergyModel,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    compact: bool = False,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> SolveResult:
    return IidMultiSolver(
        cfg, channel, energy, compact=compact, tol=tol, max_iters=max_iters, max_cells=max_cells
    ).value_iteration()


@dataclass
class MultiThresholdReport:
    """Thresholds of a converged multi-process solution

    Parameters:
        p_threshold: float[E, K]. Smallest success probability the source samples at. inf if never,
                     nan below E_p + E_s.
        t_threshold: float[E, T_2, .., T_N] (flattened to [E, Tm^(N-1)]). Smallest T_1 >= max(T_2..T_N)
                     at which the source probes, i.e. the probing threshold on the largest age.
        probe_check: Whether probing is upward-closed in the largest age.
        checks: probe_check, then the orderings of the thresholds across E and the largest age.
    """

    cfg: SystemConfig
    grid: AgeGrid
    tables: MultiValueTables
    policy: MultiPolicy
    p_threshold: np.ndarray
    t_threshold: np.ndarray
    probe_check: ConjectureCheck
    checks: List[ConjectureCheck]

    def state_frame(self) -> pd.DataFrame:
        B, N = self.cfg.buffer_capacity, self.cfg.num_processes
        K = self.grid.size
        data = {"E": np.repeat(np.arange(B + 1), K)}
        for k in range(N):
            data[f"T{k + 1}"] = np.tile(self.grid.ages[:, k], B + 1)
        data.update(
            action=np.where(self.policy.probe, "probe", "idle").ravel(),
            J=self.tables.J.ravel(),
            V=self.tables.V.ravel(),
            p_th=self.p_threshold.ravel(),
        )
        return pd.DataFrame(data)

    def probe_threshold_frame(self) -> pd.DataFrame:
        B, N, Tm = self.cfg.buffer_capacity, self.cfg.num_processes, self.cfg.age_cap
        others = _other_ages(Tm, N)
        cols = len(others)
        data = {"E": np.repeat(np.arange(B + 1), cols)}
        for k in range(N - 1):
            data[f"T{k + 2}"] = np.tile(others[:, k], B + 1)
        data["T_th"] = self.t_threshold.ravel()
        return pd.DataFrame(data)

    def checks_frame(self) -> pd.DataFrame:
        return checks_frame(self.checks)


def _other_ages(age_cap: int, num_processes: int) -> np.ndarray:
    "All vectors (T_2, .., T_N), as int[Tm^(N-1), N-1]. A single empty vector when N = 1."
    if num_processes == 1:
        return np.zeros((1, 0), dtype=int)
    n = num_processes - 1
    return np.indices((age_cap,) * n).reshape(n, -1).T + 1


def _full_view(arr: np.ndarray, grid: AgeGrid) -> np.ndarray:
    "Re-indexes a [E, K, ...] table by the full age grid, [E, T_1, .., T_N, ...]"
    Tm, N = grid.age_cap, grid.num_processes
    full = arr[:, grid.full_index_map()]
    return full.reshape((arr.shape[0],) + (Tm,) * N + arr.shape[2:])


def _check_full_size(cfg: SystemConfig, max_cells: int):
    cells = cfg.energy_levels * cfg.age_cap**cfg.num_processes
    if cells > max_cells:
        raise StateSpaceTooLarge(f"Full age grid has {cells} cells, over the limit of {max_cells}")


def extract_thresholds_multi(
    result: SolveResult, cfg: SystemConfig, channel: IidChannel, max_cells: int = DEFAULT_MAX_CELLS
) -> MultiThresholdReport:
    """Derives the thresholds of a converged multi-process solution.

    Raises StructureViolation if a sampling set is not of the form {p_j >= p_th}, or if the process
    chosen for sampling is not one of the oldest.
    A probing set that is not upward-closed in the largest age is only reported.
    """
    tables, policy = result.tables, result.policy
    grid = policy.grid
    N, Tm = cfg.num_processes, cfg.age_cap
    feasible = np.arange(cfg.energy_levels) >= cfg.min_energy

    bad = [c for c in bool_order_violations(policy.sample, axis=2, upward=False) if feasible[c[0]]]
    if bad:
        E, k, _j = bad[0]
        raise StructureViolation(
            f"Sampling set is not a threshold set in p at E={E}, T={grid.ages[k].tolist()} ({len(bad)} cell(s))"
        )

    chosen_age = np.take_along_axis(grid.ages[None, :, :], np.maximum(policy.process, 0), axis=2)
    oldest = grid.ages.max(axis=1)[None, :, None]
    wrong = np.argwhere(policy.sample & (chosen_age != oldest))
    if len(wrong):
        E, k, j = wrong[0]
        raise StructureViolation(
            f"Sampled process is not among the oldest at E={E}, T={grid.ages[k].tolist()}, channel position {j}"
        )

    p_th = min_where(policy.sample, channel.success_probs, axis=2)
    p_th[~feasible] = np.nan

    _check_full_size(cfg, max_cells)
    probe = _full_view(policy.probe, grid).reshape(cfg.energy_levels, Tm, -1)
    others = _other_ages(Tm, N)
    others_max = others.max(axis=1, initial=0)
    t1 = np.arange(1, Tm + 1)
    region = t1[:, None] >= others_max[None, :]
    flags = probe & region[None, :, :]
    t_th = min_where(flags, t1[:, None].astype(float), axis=1)
    t_th[~feasible] = np.nan

    violations = [
        (e, t + 1) + tuple(others[col].tolist())
        for e, t, col in bool_order_violations(flags, axis=1, upward=True)
    ]
    probe_check = ConjectureCheck("probing set upward-closed in the largest age", violations)

    # Orderings, over age vectors whose largest age is T_1 and stays clear of the cap
    p_full = _full_view(p_th, grid).reshape(cfg.energy_levels, Tm, -1)
    clear = region & untruncated(Tm)[:, None]
    p_mask = np.broadcast_to(clear[None], p_full.shape)
    t_mask = np.broadcast_to((others_max <= Tm - 2)[None], t_th.shape)
    checks = [
        probe_check,
        ConjectureCheck(
            "T_th non-increasing in E",
            monotone_violations(censor_ages(t_th, Tm), axis=0, increasing=False, mask=t_mask),
        ),
        ConjectureCheck(
            "p_th non-increasing in E", monotone_violations(p_full, axis=0, increasing=False, mask=p_mask)
        ),
        ConjectureCheck(
            "p_th non-increasing in the largest age",
            monotone_violations(p_full, axis=1, increasing=False, mask=p_mask),
        ),
    ]
    for check in checks:
        if not check.ok:
            logger.warning(check.summary())

    return MultiThresholdReport(cfg, grid, tables, policy, p_th, t_th, probe_check, checks)


def check_value_structure_multi(
    tables: MultiValueTables, cfg: SystemConfig, grid: AgeGrid, max_cells: int = DEFAULT_MAX_CELLS
) -> List[ConjectureCheck]:
    """Structural properties every solution satisfies:

    J non-decreasing in each age, W non-increasing in p, and J invariant under permutations of the ages.
    """
    _check_full_size(cfg, max_cells)
    N = cfg.num_processes
    J = _full_view(tables.J, grid)
    feasible = np.zeros(tables.W.shape, dtype=bool)
    feasible[cfg.min_energy :] = True

    checks = [
        ConjectureCheck(f"J non-decreasing in T{k + 1}", monotone_violations(J, axis=k + 1)) for k in range(N)
    ]
    checks.append(ConjectureCheck("W non-increasing in p", monotone_violations(tables.W, axis=2, mask=feasible)))
    swaps = []
    for k in range(1, N):
        axes = list(range(N + 1))
        axes[1], axes[k + 1] = axes[k + 1], axes[1]
        diff = np.abs(J - J.transpose(axes))
        swaps += [tuple(c) for c in np.argwhere(diff > PERMUTATION_TOLERANCE).tolist()]
    checks.append(ConjectureCheck("J invariant under age permutations", swaps))
    return checks


def assert_value_structure_multi(tables: MultiValueTables, cfg: SystemConfig, grid: AgeGrid) -> None:
    for check in check_value_structure_multi(tables, cfg, grid):
        if not check.ok:
            raise StructureViolation(check.summary())
