"""Value iteration for a single process over an i.i.d. channel

State (E, T): energy level and age. Tables are indexed [E, T-1] (and [E, T-1, j] for the channel
state at internal position j, which orders states by descending success probability).

At E >= E_p + E_s the source may probe. After observing C it either idles or samples:

    J(E,T)   = min{ T + alpha E_A J(min(E+A,B), T+),  sum_j q_j W(E,T,j) }
    W(E,T,j) = min{ T + alpha E_A J(E-E_p+A, T+),
                    T(1-p_j) + alpha p_j E_A J(E-E_p-E_s+A, 1) + alpha (1-p_j) E_A J(E-E_p-E_s+A, T+) }

Below E_p + E_s the source can only idle.
"""

from typing import List, Tuple

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
    StructureViolation,
    ValueIterationSolver,
    ValueTables,
    age_successor,
    age_mask,
    bool_order_violations,
    censor_ages,
    checks_frame,
    dominance_violations,
    expect_arrivals,
    min_where,
    monotone_violations,
    untruncated,
)

logger = getLogger(__name__)


@dataclass
class SinglePolicy:
    """Greedy policy of the probing model

    Parameters:
        probe: bool[E, T-1], probe at state (E,T).
        sample: bool[E, T-1, j], sample after observing channel state j.
    """

    probe: np.ndarray
    sample: np.ndarray

    def decide_probe(self, energy: int, age: int) -> bool:
        return bool(self.probe[energy, age - 1])

    def decide_sample(self, energy: int, age: int, channel_pos: int) -> bool:
        return bool(self.sample[energy, age - 1, channel_pos])


@dataclass
class NoProbePolicy:
    """Greedy policy of the model without probing: sample[E, T-1] samples blind"""

    sample: np.ndarray

    def decide_sample(self, energy: int, age: int) -> bool:
        return bool(self.sample[energy, age - 1])


def _check_energy(energy: EnergyModel):
    if energy.harvest is not None:
        raise InvalidConfig("The i.i.d. solvers do not model a harvesting chain. Use the Markov solver.")


def _greedy(tables: ValueTables) -> SinglePolicy:
    # Ties go to the action that saves energy
    probe = tables.q_state[..., 1] < tables.q_state[..., 0]
    sample = tables.q_inter[..., 1] < tables.q_inter[..., 0]
    return SinglePolicy(probe, sample)


@dataclass
class IidSingleSolver(ValueIterationSolver):
    cfg: SystemConfig
    channel: IidChannel
    energy: EnergyModel
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    max_cells: int = DEFAULT_MAX_CELLS

    @property
    def state_shape(self) -> Tuple[int, ...]:
        return (self.cfg.energy_levels, self.cfg.age_cap)

    def _backup(self, J: np.ndarray) -> ValueTables:
        _check_energy(self.energy)
        cfg = self.cfg
        alpha = cfg.discount
        B, Tm = cfg.buffer_capacity, cfg.age_cap
        Ep, Es = cfg.probe_cost, cfg.sample_cost
        m = self.channel.num_states
        p = self.channel.success_probs
        ages = np.arange(1, Tm + 1, dtype=float)

        EJ = expect_arrivals(J, self.energy.arrivals, B)
        EJ_next = EJ[:, age_successor(Tm)]  # E_A J(min(E+A,B), T+)
        EJ_reset = EJ[:, 0]  # E_A J(min(E+A,B), 1)

        no_probe = ages + alpha * EJ_next

        q_state = np.full((B + 1, Tm, 2), np.inf)
        q_state[..., 0] = no_probe
        q_inter = np.full((B + 1, Tm, m, 2), np.inf)
        W = np.repeat(no_probe[:, :, None], m, axis=2)

        e = np.arange(cfg.min_energy, B + 1)
        idle = ages + alpha * EJ_next[e - Ep]
        after = e - Ep - Es
        sample = (
            ages[:, None] * (1 - p)
            + alpha * p * EJ_reset[after][:, None, None]
            + alpha * (1 - p) * EJ_next[after][:, :, None]
        )
        q_inter[e, :, :, 0] = idle[:, :, None]
        q_inter[e, :, :, 1] = sample
        W[e] = np.minimum(idle[:, :, None], sample)

        V = W @ self.channel.weights
        q_state[e, :, 1] = V[e]
        J_new = no_probe.copy()
        J_new[e] = np.minimum(no_probe[e], V[e])
        return ValueTables(J_new, W, V, q_state, q_inter)

    def _greedy_policy(self, tables: ValueTables) -> SinglePolicy:
        return _greedy(tables)


@dataclass
class IidNoProbeSolver(ValueIterationSolver):
    """The same system when the source cannot probe: it samples blind at cost E_s.

    J(E,T) = min{ T + alpha E_A J(min(E+A,B), T+),
                  T(1-pbar) + alpha pbar E_A J(E-E_s+A, 1) + alpha (1-pbar) E_A J(E-E_s+A, T+) }
    with pbar = sum_j q_j p_j.
    """

    cfg: SystemConfig
    channel: IidChannel
    energy: EnergyModel
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    max_cells: int = DEFAULT_MAX_CELLS

    @property
    def state_shape(self) -> Tuple[int, ...]:
        return (self.cfg.energy_levels, self.cfg.age_cap)

    def _backup(self, J: np.ndarray) -> ValueTables:
        _check_energy(self.energy)
        cfg = self.cfg
        alpha = cfg.discount
        B, Tm, Es = cfg.buffer_capacity, cfg.age_cap, cfg.sample_cost
        pbar = self.channel.mean_success_prob()
        ages = np.arange(1, Tm + 1, dtype=float)

        EJ = expect_arrivals(J, self.energy.arrivals, B)
        EJ_next = EJ[:, age_successor(Tm)]
        EJ_reset = EJ[:, 0]

        idle = ages + alpha * EJ_next
        q_state = np.full((B + 1, Tm, 2), np.inf)
        q_state[..., 0] = idle

        e = np.arange(Es, B + 1)
        after = e - Es
        q_state[e, :, 1] = (
            ages * (1 - pbar) + alpha * pbar * EJ_reset[after][:, None] + alpha * (1 - pbar) * EJ_next[after]
        )
        J_new = q_state.min(axis=-1)
        return ValueTables(J_new, None, None, q_state, None)

    def _greedy_policy(self, tables: ValueTables) -> NoProbePolicy:
        return NoProbePolicy(tables.q_state[..., 1] < tables.q_state[..., 0])


def bellman_backup(
    J: np.ndarray, cfg: SystemConfig, channel: IidChannel, energy: EnergyModel
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    "One application of the Bellman operator. Returns (J', W', V')"
    return IidSingleSolver(cfg, channel, energy).bellman_backup(J)


def value_iteration(
    cfg: SystemConfig,
    channel: IidChannel,
    energy: EnergyModel,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> SolveResult:
    return IidSingleSolver(cfg, channel, energy, tol=tol, max_iters=max_iters).value_iteration()


def value_iteration_no_probe(
    cfg: SystemConfig,
    channel: IidChannel,
    energy: EnergyModel,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> SolveResult:
    return IidNoProbeSolver(cfg, channel, energy, tol=tol, max_iters=max_iters).value_iteration()


@dataclass
class SingleThresholdReport:
    """Thresholds of a converged single-process solution

    Parameters:
        p_threshold: float[E, T-1]. Smallest success probability the source samples at, after probing.
                     inf where it never samples; nan where it cannot afford to probe and sample.
        t_threshold: float[E]. Smallest age the source probes at. inf if never; nan if unaffordable.
        probe_check: Whether the probing set is upward-closed in T, for every E.
        truncated: bool[T-1]. Ages within 2 of T_max, where the cap affects the values.
        checks: probe_check, then the orderings of the thresholds across E and T (reported, never enforced).
    """

    cfg: SystemConfig
    tables: ValueTables
    policy: SinglePolicy
    p_threshold: np.ndarray
    t_threshold: np.ndarray
    probe_check: ConjectureCheck
    truncated: np.ndarray
    checks: List[ConjectureCheck]

    def state_frame(self) -> pd.DataFrame:
        B, Tm = self.cfg.buffer_capacity, self.cfg.age_cap
        E, T = np.meshgrid(np.arange(B + 1), np.arange(1, Tm + 1), indexing="ij")
        return pd.DataFrame(
            {
                "E": E.ravel(),
                "T": T.ravel(),
                "action": np.where(self.policy.probe, "probe", "idle").ravel(),
                "J": self.tables.J.ravel(),
                "V": self.tables.V.ravel(),
                "p_th": self.p_threshold.ravel(),
                "truncated": np.broadcast_to(self.truncated, E.shape).ravel(),
            }
        )

    def probe_threshold_frame(self) -> pd.DataFrame:
        upward = np.ones(self.cfg.energy_levels, dtype=bool)
        for e, _t in self.probe_check.violations:
            upward[e] = False
        return pd.DataFrame(
            {"E": np.arange(self.cfg.energy_levels), "T_th": self.t_threshold, "upward_closed": upward}
        )

    def checks_frame(self) -> pd.DataFrame:
        return checks_frame(self.checks)


def extract_thresholds(result: SolveResult, cfg: SystemConfig, channel: IidChannel) -> SingleThresholdReport:
    """Derives the thresholds from a converged solution.

    Raises StructureViolation if at some (E,T) the sampling set is not of the form {p_j >= p_th}.
    A probing set that is not upward-closed in T is only reported.
    """
    tables, policy = result.tables, result.policy
    feasible = np.arange(cfg.energy_levels) >= cfg.min_energy

    bad = bool_order_violations(policy.sample, axis=2, upward=False)
    bad = [c for c in bad if feasible[c[0]]]
    if bad:
        E, T, j = bad[0]
        raise StructureViolation(
            f"Sampling set is not a threshold set in p at E={E}, T={T + 1} "
            f"({len(bad)} cell(s)): {policy.sample[E, T].tolist()}"
        )

    p_th = min_where(policy.sample, channel.success_probs, axis=2)
    p_th[~feasible] = np.nan

    t_th = min_where(policy.probe, np.arange(1, cfg.age_cap + 1, dtype=float), axis=1)
    t_th[~feasible] = np.nan

    violations = [(e, t + 1) for e, t in bool_order_violations(policy.probe, axis=1, upward=True)]
    probe_check = ConjectureCheck("probing set upward-closed in T", violations)
    checks = [probe_check] + threshold_order_checks(t_th, p_th, cfg.age_cap)
    for check in checks:
        if not check.ok:
            logger.warning(check.summary())

    truncated = ~untruncated(cfg.age_cap)
    return SingleThresholdReport(cfg, tables, policy, p_th, t_th, probe_check, truncated, checks)


def threshold_order_checks(t_threshold: np.ndarray, p_threshold: np.ndarray, age_cap: int) -> List[ConjectureCheck]:
    """T_th[E] non-increasing in E, and p_th[E, T-1] non-increasing in E and in T.

    Ages within 2 of T_max are left out. Unaffordable rows (nan) are skipped.
    """
    t_th = censor_ages(t_threshold, age_cap)
    mask = age_mask(p_threshold.shape, 1, age_cap)
    return [
        ConjectureCheck("T_th non-increasing in E", monotone_violations(t_th, axis=0, increasing=False)),
        ConjectureCheck(
            "p_th non-increasing in E", monotone_violations(p_threshold, axis=0, increasing=False, mask=mask)
        ),
        ConjectureCheck(
            "p_th non-increasing in T", monotone_violations(p_threshold, axis=1, increasing=False, mask=mask)
        ),
    ]


@dataclass
class NoProbeThresholdReport:
    cfg: SystemConfig
    tables: ValueTables
    t_threshold: np.ndarray
    sample_check: ConjectureCheck
    checks: List[ConjectureCheck]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"E": np.arange(self.cfg.energy_levels), "T_th": self.t_threshold})

    def checks_frame(self) -> pd.DataFrame:
        return checks_frame(self.checks)


def extract_no_probe_thresholds(result: SolveResult, cfg: SystemConfig) -> NoProbeThresholdReport:
    sample = result.policy.sample
    t_th = min_where(sample, np.arange(1, cfg.age_cap + 1, dtype=float), axis=1)
    t_th[: cfg.sample_cost] = np.nan
    violations = [(e, t + 1) for e, t in bool_order_violations(sample, axis=1, upward=True)]
    check = ConjectureCheck("blind sampling set upward-closed in T", violations)
    ordered = monotone_violations(censor_ages(t_th, cfg.age_cap), axis=0, increasing=False)
    checks = [check, ConjectureCheck("T_th non-increasing in E", ordered)]
    for c in checks:
        if not c.ok:
            logger.warning(c.summary())
    return NoProbeThresholdReport(cfg, result.tables, t_th, check, checks)


def check_value_structure(tables: ValueTables, cfg: SystemConfig) -> List[ConjectureCheck]:
    """Structural properties every solution satisfies:

    J and V non-decreasing in T, W non-decreasing in T and non-increasing in p (up to 1e-10),
    and J <= the value of idling.
    """
    feasible = np.zeros(tables.W.shape, dtype=bool)
    feasible[cfg.min_energy :] = True
    return [
        ConjectureCheck("J non-decreasing in T", monotone_violations(tables.J, axis=1)),
        ConjectureCheck("V non-decreasing in T", monotone_violations(tables.V, axis=1)),
        ConjectureCheck("W non-decreasing in T", monotone_violations(tables.W, axis=1)),
        # States are stored by descending p, so W must be non-decreasing along the channel axis
        ConjectureCheck("W non-increasing in p", monotone_violations(tables.W, axis=2, mask=feasible)),
        ConjectureCheck("J <= idle value", dominance_violations(tables.J, tables.q_state[..., 0])),
    ]


def assert_value_structure(tables: ValueTables, cfg: SystemConfig) -> None:
    for check in check_value_structure(tables, cfg):
        if not check.ok:
            raise StructureViolation(check.summary())

