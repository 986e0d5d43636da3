"""Value iteration for a single process over a Markov channel, with Markov harvesting

State (E, T, tau, C_prev, H): energy, age, slots since the last probe, the channel state that probe saw,
and the harvesting state. Tables are indexed [E, T-1, tau-1, c_prev, h]; intermediate tables
[E, T-1, c, h]. Cells with tau > T are unreachable. They are computed like the rest but masked out of
every report.

Probing at (E, T, tau, C_prev, H) reveals C ~ Q^tau[C_prev, :]. Afterwards tau restarts at 1 and C_prev
becomes C. Without probing both T and tau age by one (saturating at T_max). Arrivals and the next
harvesting state are drawn independently given H; in H_2 nothing arrives.
"""

from typing import List, Tuple

import numpy as np
import pandas as pd
from runtype import dataclass

from .channel import MarkovChannel
from .config import InvalidConfig, SystemConfig
from .energy import ArrivalDistribution, EnergyModel, HarvestChain, HarvestState
from .utils import getLogger
from .value_iteration import (
    DEFAULT_MAX_CELLS,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    ConjectureCheck,
    SolveResult,
    ValueIterationSolver,
    ValueTables,
    age_mask,
    age_successor,
    bool_order_violations,
    censor_ages,
    checks_frame,
    expect_arrivals,
    min_where,
    monotone_violations,
)

logger = getLogger(__name__)

NO_SWITCHING = HarvestChain(0.0, 0.0)


def harvest_expectation(
    F: np.ndarray, arrivals: ArrivalDistribution, harvest: HarvestChain, capacity: int
) -> np.ndarray:
    """G[E, ..., h] = E[ F[min(E+A, B), ..., H'] | H = h ], with A and H' independent given H.

    F's last axis is the harvesting state. A is drawn from ``arrivals`` in H_1 and is 0 in H_2.
    """
    mixed = F @ harvest.matrix.T  # mixed[..., h] = sum_h' P(h'|h) F[..., h']
    out = mixed.copy()
    h1 = int(HarvestState.HARVESTING)
    out[..., h1] = expect_arrivals(mixed[..., h1], arrivals, capacity)
    return out


@dataclass
class MarkovPolicy:
    """Greedy policy of the Markov model

    Parameters:
        probe: bool[E, T-1, tau-1, c_prev, h]
        sample: bool[E, T-1, c, h], after probing and observing c.
    """

    probe: np.ndarray
    sample: np.ndarray

    def decide_probe(self, energy: int, age: int, tau: int, c_prev: int, harvest: int) -> bool:
        return bool(self.probe[energy, age - 1, tau - 1, c_prev, harvest])

    def decide_sample(self, energy: int, age: int, channel_pos: int, harvest: int) -> bool:
        return bool(self.sample[energy, age - 1, channel_pos, harvest])


@dataclass
class MarkovSolver(ValueIterationSolver):
    cfg: SystemConfig
    channel: MarkovChannel
    energy: EnergyModel
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    max_cells: int = DEFAULT_MAX_CELLS

    @property
    def state_shape(self) -> Tuple[int, ...]:
        Tm = self.cfg.age_cap
        return (self.cfg.energy_levels, Tm, Tm, self.channel.num_states, len(HarvestState))

    @property
    def harvest(self) -> HarvestChain:
        return self.energy.harvest or NO_SWITCHING

    def probe_weights(self, tau: int, c_prev: int) -> np.ndarray:
        "Channel distribution the probe branch mixes W with"
        return self._probe_matrices()[tau - 1, c_prev]

    def _probe_matrices(self) -> np.ndarray:
        "Q^tau for tau = 1..T_max, as float[tau-1, c_prev, c]"
        return np.stack([self.channel.transition_power(tau) for tau in range(1, self.cfg.age_cap + 1)])

    def _backup(self, J: np.ndarray) -> ValueTables:
        cfg = self.cfg
        if cfg.num_processes != 1:
            raise InvalidConfig("The Markov solver models a single process")
        alpha = cfg.discount
        B, Tm = cfg.buffer_capacity, cfg.age_cap
        Ep, Es = cfg.probe_cost, cfg.sample_cost
        m = self.channel.num_states
        p = self.channel.success_probs[:, None]  # broadcasts over h
        succ = age_successor(Tm)
        ages = np.arange(1, Tm + 1, dtype=float)

        EJ = harvest_expectation(J, self.energy.arrivals, self.harvest, B)
        no_probe = ages[:, None, None, None] + alpha * EJ[:, succ][:, :, succ]

        # After a probe, tau restarts at 1 and c_prev is the observed state
        EJ_probed = EJ[:, :, 0]  # [E, T-1, c, h]
        EJ_probed_next = EJ_probed[:, succ]
        EJ_probed_reset = EJ_probed[:, 0]

        shape = self.state_shape
        q_state = np.full(shape + (2,), np.inf)
        q_state[..., 0] = no_probe
        q_inter = np.full((B + 1, Tm, m, 2, 2), np.inf)
        W = np.full((B + 1, Tm, m, 2), np.nan)

        e = np.arange(cfg.min_energy, B + 1)
        after = e - Ep - Es
        idle = ages[:, None, None] + alpha * EJ_probed_next[e - Ep]
        sample = (
            ages[:, None, None] * (1 - p)
            + alpha * p * EJ_probed_reset[after][:, None]
            + alpha * (1 - p) * EJ_probed_next[after]
        )
        q_inter[e, ..., 0] = idle
        q_inter[e, ..., 1] = sample
        W[e] = np.minimum(idle, sample)

        V = np.full(shape, np.nan)
        V[e] = np.einsum("upd,etdh->etuph", self._probe_matrices(), W[e])
        q_state[e, ..., 1] = V[e]
        J_new = no_probe.copy()
        J_new[e] = np.minimum(no_probe[e], V[e])
        return ValueTables(J_new, W, V, q_state, q_inter)

    def _greedy_policy(self, tables: ValueTables) -> MarkovPolicy:
        probe = tables.q_state[..., 1] < tables.q_state[..., 0]
        sample = tables.q_inter[..., 1] < tables.q_inter[..., 0]
        return MarkovPolicy(probe, sample)

    def value_iteration(self) -> SolveResult:
        Tm = self.cfg.age_cap
        deviation = np.abs(self.channel.transition_power(Tm) - self.channel.stationary_distribution()).max()
        logger.info(f"tau is capped at {Tm}. Largest deviation of Q^{Tm} rows from stationarity: {deviation:.2e}")
        return super(MarkovSolver, self).value_iteration()


@dataclass
class MarkovNoProbePolicy:
    """Greedy policy of the Markov model without probing

    Parameters:
        sample: bool[E, T-1, tau-1, c_prev, h]. Sample blind at this state. Without probes, tau counts the
                slots since the channel was last known (the start of the run) and c_prev is the state it was in.
    """

    sample: np.ndarray

    def decide_sample(self, energy: int, age: int, tau: int, c_prev: int, harvest: int) -> bool:
        return bool(self.sample[energy, age - 1, tau - 1, c_prev, harvest])


@dataclass
class MarkovNoProbeSolver(MarkovSolver):
    """The Markov model when the source cannot probe: it samples blind at cost E_s.

    The success probability of a blind sample is that of the belief Q^tau[C_prev, :], which tends to the
    stationary distribution as tau grows (and is stationary at the cap tau = T_max). Delivery feedback does
    not update the belief.

        J(E,T,tau,c,h) = min{ T + alpha E J(min(E+A,B), T+, tau+, c, H'),
                              T(1-pbar) + alpha pbar E J(E-E_s+A, 1, tau+, c, H')
                                        + alpha (1-pbar) E J(E-E_s+A, T+, tau+, c, H') }
        with pbar = sum_j Q^tau[c, j] p_j.
    """

    def blind_success_probs(self) -> np.ndarray:
        "pbar as float[tau-1, c_prev]"
        return self._probe_matrices() @ self.channel.success_probs

    def _backup(self, J: np.ndarray) -> ValueTables:
        cfg = self.cfg
        if cfg.num_processes != 1:
            raise InvalidConfig("The Markov solver models a single process")
        alpha = cfg.discount
        B, Tm, Es = cfg.buffer_capacity, cfg.age_cap, cfg.sample_cost
        succ = age_successor(Tm)
        ages = np.arange(1, Tm + 1, dtype=float)[:, None, None, None]
        pbar = self.blind_success_probs()[:, :, None]  # broadcasts over h

        EJ = harvest_expectation(J, self.energy.arrivals, self.harvest, B)
        EJ_next = EJ[:, succ][:, :, succ]  # both T and tau age
        EJ_reset = EJ[:, 0][:, succ]  # delivered: T restarts, tau still ages

        q_state = np.full(self.state_shape + (2,), np.inf)
        q_state[..., 0] = ages + alpha * EJ_next

        e = np.arange(Es, B + 1)
        after = e - Es
        q_state[e, ..., 1] = (
            ages * (1 - pbar) + alpha * pbar * EJ_reset[after][:, None] + alpha * (1 - pbar) * EJ_next[after]
        )
        return ValueTables(q_state.min(axis=-1), None, None, q_state, None)

    def _greedy_policy(self, tables: ValueTables) -> MarkovNoProbePolicy:
        return MarkovNoProbePolicy(tables.q_state[..., 1] < tables.q_state[..., 0])


def valid_mask(age_cap: int) -> np.ndarray:
    "bool[T-1, tau-1], True where tau <= T"
    t = np.arange(1, age_cap + 1)
    return t[None, :] <= t[:, None]


def bellman_backup_markov(
    J: np.ndarray, cfg: SystemConfig, channel: MarkovChannel, energy: EnergyModel
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return MarkovSolver(cfg, channel, energy).bellman_backup(J)


def value_iteration_markov(
    cfg: SystemConfig,
    channel: MarkovChannel,
    energy: EnergyModel,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> SolveResult:
    return MarkovSolver(cfg, channel, energy, tol=tol, max_iters=max_iters).value_iteration()


@dataclass
class MarkovThresholdReport:
    """Threshold surfaces of a converged Markov solution. inf means never; nan means unaffordable.

    Parameters:
        probe_threshold: float[E, tau-1, c_prev, h]. Smallest T >= tau at which the source probes.
        p_threshold: float[E, T-1, h]. Smallest success probability the source samples at.
        post_probe_threshold: float[E, c, h]. Smallest T at which the source samples after observing c.
        checks: Structural diagnostics, reported and never enforced.
    """

    cfg: SystemConfig
    channel: MarkovChannel
    tables: ValueTables
    policy: MarkovPolicy
    probe_threshold: np.ndarray
    p_threshold: np.ndarray
    post_probe_threshold: np.ndarray
    checks: List[ConjectureCheck]

    def _labels(self):
        return [s.index for s in self.channel.states], [int(h) + 1 for h in HarvestState]

    def probe_threshold_frame(self) -> pd.DataFrame:
        c_idx, h_idx = self._labels()
        E, tau, c, h = np.meshgrid(
            np.arange(self.cfg.energy_levels), np.arange(1, self.cfg.age_cap + 1), c_idx, h_idx, indexing="ij"
        )
        return pd.DataFrame(
            {
                "E": E.ravel(),
                "tau": tau.ravel(),
                "C_prev": c.ravel(),
                "H": h.ravel(),
                "T_th": self.probe_threshold.ravel(),
            }
        )

    def sample_threshold_frame(self) -> pd.DataFrame:
        _, h_idx = self._labels()
        E, T, h = np.meshgrid(
            np.arange(self.cfg.energy_levels), np.arange(1, self.cfg.age_cap + 1), h_idx, indexing="ij"
        )
        return pd.DataFrame({"E": E.ravel(), "T": T.ravel(), "H": h.ravel(), "p_th": self.p_threshold.ravel()})

    def post_probe_frame(self) -> pd.DataFrame:
        c_idx, h_idx = self._labels()
        E, c, h = np.meshgrid(np.arange(self.cfg.energy_levels), c_idx, h_idx, indexing="ij")
        return pd.DataFrame(
            {"E": E.ravel(), "C": c.ravel(), "H": h.ravel(), "T_th": self.post_probe_threshold.ravel()}
        )

    def checks_frame(self) -> pd.DataFrame:
        return checks_frame(self.checks)


def extract_thresholds_markov(result: SolveResult, cfg: SystemConfig, channel: MarkovChannel) -> MarkovThresholdReport:
    tables, policy = result.tables, result.policy
    Tm = cfg.age_cap
    ages = np.arange(1, Tm + 1, dtype=float)
    feasible = np.arange(cfg.energy_levels) >= cfg.min_energy
    valid = valid_mask(Tm)

    probe = policy.probe & valid[None, :, :, None, None]
    probe_th = min_where(probe, ages[:, None, None, None], axis=1)
    probe_th[~feasible] = np.nan
    probe_bad = [(e, t + 1, u + 1, c, h) for e, t, u, c, h in bool_order_violations(probe, axis=1) if feasible[e]]

    sample = policy.sample
    p_th = min_where(sample, channel.success_probs[:, None], axis=2)
    p_th[~feasible] = np.nan
    p_bad = [(e, t + 1, c, h) for e, t, c, h in bool_order_violations(sample, axis=2, upward=False) if feasible[e]]

    post_th = min_where(sample, ages[:, None, None], axis=1)
    post_th[~feasible] = np.nan
    post_bad = [(e, t + 1, c, h) for e, t, c, h in bool_order_violations(sample, axis=1) if feasible[e]]

    checks = [
        ConjectureCheck("probing set upward-closed in T", probe_bad),
        ConjectureCheck("sampling set a threshold set in p", p_bad),
        ConjectureCheck("sampling set upward-closed in T", post_bad),
    ]
    checks += threshold_order_checks_markov(probe_th, p_th, Tm)
    checks += check_value_structure_markov(tables, cfg)
    for check in checks:
        if not check.ok:
            logger.warning(check.summary())

    return MarkovThresholdReport(cfg, channel, tables, policy, probe_th, p_th, post_th, checks)


def threshold_order_checks_markov(
    probe_threshold: np.ndarray, p_threshold: np.ndarray, age_cap: int
) -> List[ConjectureCheck]:
    """Orderings of the thresholds across slices of the state:

    - T_th[E, tau-1, c_prev, h] is non-increasing in E, no larger after seeing a better channel state,
      and no larger in H_1 than in H_2.
    - p_th[E, T-1, h] is non-increasing in E and T, and no larger in H_1 than in H_2.

    Channel states are stored by descending p, so "better" is the lower position. Only tau and T up to
    T_max - 2 take part, and age thresholds above T_max - 2 count as never.
    """
    t_th = censor_ages(probe_threshold, age_cap)
    t_mask = age_mask(t_th.shape, 1, age_cap)
    p_mask = age_mask(p_threshold.shape, 1, age_cap)
    return [
        ConjectureCheck(
            "T_th non-increasing in E", monotone_violations(t_th, axis=0, increasing=False, mask=t_mask)
        ),
        ConjectureCheck(
            "T_th non-increasing in p(C_prev)", monotone_violations(t_th, axis=2, increasing=True, mask=t_mask)
        ),
        ConjectureCheck(
            "T_th non-decreasing from H_1 to H_2", monotone_violations(t_th, axis=3, increasing=True, mask=t_mask)
        ),
        ConjectureCheck(
            "p_th non-increasing in E", monotone_violations(p_threshold, axis=0, increasing=False, mask=p_mask)
        ),
        ConjectureCheck(
            "p_th non-increasing in T", monotone_violations(p_threshold, axis=1, increasing=False, mask=p_mask)
        ),
        ConjectureCheck(
            "p_th non-decreasing from H_1 to H_2",
            monotone_violations(p_threshold, axis=2, increasing=True, mask=p_mask),
        ),
    ]


def check_value_structure_markov(tables: ValueTables, cfg: SystemConfig) -> List[ConjectureCheck]:
    "J non-decreasing in T, and W non-decreasing in T and non-increasing in p. Reported, not enforced."
    valid = np.broadcast_to(valid_mask(cfg.age_cap)[None, :, :, None, None], tables.J.shape)
    return [
        ConjectureCheck("J non-decreasing in T", monotone_violations(tables.J, axis=1, mask=valid)),
        ConjectureCheck("W non-decreasing in T", monotone_violations(tables.W, axis=1)),
        ConjectureCheck("W non-increasing in p", monotone_violations(tables.W, axis=2)),
    ]


@dataclass
class MarkovNoProbeReport:
    """Blind-sampling thresholds of a converged Markov solution, once the belief is stationary (tau = T_max)

    Parameters:
        t_threshold: float[E, c_prev, h]. Smallest T at which the source samples blind. inf if never; nan below E_s.
    """

    cfg: SystemConfig
    channel: MarkovChannel
    tables: ValueTables
    policy: MarkovNoProbePolicy
    t_threshold: np.ndarray
    checks: List[ConjectureCheck]

    def frame(self) -> pd.DataFrame:
        c_idx = [s.index for s in self.channel.states]
        h_idx = [int(h) + 1 for h in HarvestState]
        E, c, h = np.meshgrid(np.arange(self.cfg.energy_levels), c_idx, h_idx, indexing="ij")
        return pd.DataFrame({"E": E.ravel(), "C_prev": c.ravel(), "H": h.ravel(), "T_th": self.t_threshold.ravel()})

    def checks_frame(self) -> pd.DataFrame:
        return checks_frame(self.checks)


def extract_no_probe_thresholds_markov(
    result: SolveResult, cfg: SystemConfig, channel: MarkovChannel
) -> MarkovNoProbeReport:
    Tm = cfg.age_cap
    sample = result.policy.sample[:, :, Tm - 1]  # [E, T-1, c_prev, h]
    t_th = min_where(sample, np.arange(1, Tm + 1, dtype=float)[:, None, None], axis=1)
    t_th[: cfg.sample_cost] = np.nan

    upward = [(e, t + 1, c, h) for e, t, c, h in bool_order_violations(sample, axis=1, upward=True)]
    ordered = monotone_violations(censor_ages(t_th, Tm), axis=0, increasing=False)
    checks = [
        ConjectureCheck("blind sampling set upward-closed in T", upward),
        ConjectureCheck("T_th non-increasing in E", ordered),
    ]
    for check in checks:
        if not check.ok:
            logger.warning(check.summary())
    return MarkovNoProbeReport(cfg, channel, result.tables, result.policy, t_th, checks)
