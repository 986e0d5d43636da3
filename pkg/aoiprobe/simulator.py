"""Monte-Carlo environment for the slot dynamics, policy evaluation and the probing comparison

Event order within a slot:

    observe state -> decide b -> (probe: pay E_p, observe C) -> decide a
    -> (sample: pay E_s, transmit, observe r) -> cost -> arrivals -> clip at B -> chain transitions

The realized cost of a slot is the sum of the ages, where a process delivered in this slot counts as 0.
Its expectation given C is the T(1-p(C)) of the Bellman equations.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from runtype import dataclass
from scipy import stats

from .channel import ChannelModel, IidChannel, MarkovChannel, sample_success
from .config import SystemConfig, validate
from .energy import (
    ArrivalDistribution,
    EnergyModel,
    HarvestChain,
    HarvestState,
    buffer_add,
    draw_arrival,
    step_harvest,
)
from .solver_iid_multi import MultiPolicy
from .solver_iid_single import IidNoProbeSolver, IidSingleSolver, NoProbePolicy, SinglePolicy
from .solver_markov import MarkovNoProbePolicy, MarkovNoProbeSolver, MarkovPolicy, MarkovSolver
from .thread_utils import ThreadBase
from .utils import getLogger
from .value_iteration import DEFAULT_TOL

logger = getLogger(__name__)

DEFAULT_HORIZON = 10**6
DEFAULT_SEEDS = 10
CONFIDENCE_LEVEL = 0.95


class InfeasibleAction(ValueError):
    pass


@dataclass(frozen=False)
class EnvState:
    """Everything the environment tracks

    Parameters:
        energy (int): Energy packets in the buffer.
        ages (List[int]): Age of each process.
        tau (int): Slots since the last probe (Markov channel).
        c_prev (int): Internal position of the channel state the last probe revealed.
        channel (int): Internal position of the current channel state. Hidden from policies.
        harvest (int): Harvesting state (0 = H_1, 1 = H_2).
        t (int): Slot counter.
    """

    energy: int
    ages: List[int]
    tau: int = 1
    c_prev: int = 0
    channel: int = 0
    harvest: int = 0
    t: int = 0

    def copy(self) -> "EnvState":
        return EnvState(self.energy, list(self.ages), self.tau, self.c_prev, self.channel, self.harvest, self.t)


@dataclass
class SlotOutcome:
    """What happened in one slot. Observations are None unless the matching action was taken."""

    state: EnvState
    probed: bool
    channel: Optional[int]
    process: Optional[int]
    success: Optional[int]
    arrival: int
    next_harvest: int
    cost: float
    next_state: EnvState


class Policy(ABC):
    """Two-stage decision rule.

    ``decide_probe`` is asked first. If it probes, ``decide_sample`` receives the revealed channel position.
    Policies with ``probing = False`` skip the first stage and sample blind (channel_pos is None).
    ``decide_sample`` returns the process to sample, or None to idle.
    """

    probing: bool = True

    @abstractmethod
    def decide_probe(self, state: EnvState, rng: np.random.Generator) -> bool: ...

    @abstractmethod
    def decide_sample(
        self, state: EnvState, channel_pos: Optional[int], rng: np.random.Generator
    ) -> Optional[int]: ...


class IidTablePolicy(Policy):
    def __init__(self, table: SinglePolicy):
        self.table = table

    def decide_probe(self, state, rng):
        return self.table.decide_probe(state.energy, state.ages[0])

    def decide_sample(self, state, channel_pos, rng):
        return 0 if self.table.decide_sample(state.energy, state.ages[0], channel_pos) else None


class NoProbeTablePolicy(Policy):
    probing = False

    def __init__(self, table: NoProbePolicy):
        self.table = table

    def decide_probe(self, state, rng):
        return False

    def decide_sample(self, state, channel_pos, rng):
        return 0 if self.table.decide_sample(state.energy, state.ages[0]) else None


class MultiTablePolicy(Policy):
    def __init__(self, table: MultiPolicy):
        self.table = table

    def decide_probe(self, state, rng):
        return self.table.decide_probe(state.energy, state.ages)

    def decide_sample(self, state, channel_pos, rng):
        return self.table.choose_process(state.energy, state.ages, channel_pos)


class MarkovTablePolicy(Policy):
    def __init__(self, table: MarkovPolicy):
        self.table = table

    def decide_probe(self, state, rng):
        return self.table.decide_probe(state.energy, state.ages[0], state.tau, state.c_prev, state.harvest)

    def decide_sample(self, state, channel_pos, rng):
        return 0 if self.table.decide_sample(state.energy, state.ages[0], channel_pos, state.harvest) else None


class MarkovNoProbeTablePolicy(Policy):
    "Samples blind from the belief left by the last known channel state (EnvState.tau, EnvState.c_prev)"

    probing = False

    def __init__(self, table: MarkovNoProbePolicy):
        self.table = table

    def decide_probe(self, state, rng):
        return False

    def decide_sample(self, state, channel_pos, rng):
        sample = self.table.decide_sample(state.energy, state.ages[0], state.tau, state.c_prev, state.harvest)
        return 0 if sample else None


def table_policy(
    policy: Union[SinglePolicy, NoProbePolicy, MultiPolicy, MarkovPolicy, MarkovNoProbePolicy]
) -> Policy:
    "Wraps the greedy table of a solver as a simulator policy"
    if isinstance(policy, SinglePolicy):
        return IidTablePolicy(policy)
    if isinstance(policy, NoProbePolicy):
        return NoProbeTablePolicy(policy)
    if isinstance(policy, MultiPolicy):
        return MultiTablePolicy(policy)
    if isinstance(policy, MarkovPolicy):
        return MarkovTablePolicy(policy)
    if isinstance(policy, MarkovNoProbePolicy):
        return MarkovNoProbeTablePolicy(policy)
    raise TypeError(f"Not a policy table: {type(policy).__name__}")


class AlwaysIdle(Policy):
    def decide_probe(self, state, rng):
        return False

    def decide_sample(self, state, channel_pos, rng):
        return None


class ProbeAlways(Policy):
    "Probes and samples the oldest process whenever the energy allows both"

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg

    def decide_probe(self, state, rng):
        return state.energy >= self.cfg.min_energy

    def decide_sample(self, state, channel_pos, rng):
        return int(np.argmax(state.ages))


class RandomFeasible(Policy):
    "Picks uniformly among the feasible actions at both stages"

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg

    def decide_probe(self, state, rng):
        return state.energy >= self.cfg.min_energy and bool(rng.integers(2))

    def decide_sample(self, state, channel_pos, rng):
        choice = int(rng.integers(self.cfg.num_processes + 1))
        return None if choice == 0 else choice - 1


class Environment:
    """Simulates the source, its buffer and the channel, one slot at a time

    Each environment owns its random generator, so the same seed and policy reproduce the same trace.
    """

    def __init__(
        self,
        cfg: SystemConfig,
        channel: ChannelModel,
        energy: EnergyModel,
        seed: Optional[int] = None,
        initial: Optional[EnvState] = None,
        initial_channel: int = 0,
    ):
        self.cfg = validate(cfg)
        self.channel = channel
        self.energy = energy
        self.markov = isinstance(channel, MarkovChannel)
        self.rng = np.random.default_rng(seed)
        if initial is None:
            initial = EnvState(0, [1] * cfg.num_processes, c_prev=initial_channel, channel=initial_channel)
        elif len(initial.ages) != cfg.num_processes:
            raise ValueError(f"Initial state has {len(initial.ages)} ages, expected {cfg.num_processes}")
        self.state = initial.copy()

    def _slot(self, policy: Policy) -> Tuple[bool, Optional[int], Optional[int], Optional[int], int, int, float]:
        cfg, rng, s = self.cfg, self.rng, self.state
        start_energy = s.energy
        c = s.channel if self.markov else self.channel.draw(rng)

        probed = False
        observed = None
        process = None
        success = None
        if policy.probing:
            probed = bool(policy.decide_probe(s, rng))
            if probed:
                if start_energy < cfg.probe_cost:
                    raise InfeasibleAction(f"Cannot probe with E={start_energy} < E_p={cfg.probe_cost}")
                observed = c
                process = policy.decide_sample(s, observed, rng)
        else:
            process = policy.decide_sample(s, None, rng)

        spent = cfg.probe_cost if probed else 0
        if process is not None:
            if not 0 <= process < cfg.num_processes:
                raise InfeasibleAction(f"No such process: {process}")
            if start_energy - spent < cfg.sample_cost:
                raise InfeasibleAction(
                    f"Cannot sample with E={start_energy - spent} < E_s={cfg.sample_cost} (after probing: {probed})"
                )
            spent += cfg.sample_cost
            success = sample_success(self.channel.states[c], rng)

        ages = s.ages
        cost = float(sum(ages) - (ages[process] if success else 0))
        for k in range(len(ages)):
            ages[k] = 1 if (success and k == process) else min(ages[k] + 1, cfg.age_cap)

        harvest_state = HarvestState(s.harvest) if self.energy.harvest is not None else None
        arrival = draw_arrival(self.energy.arrivals, harvest_state, rng)
        s.energy = buffer_add(start_energy - spent, arrival, cfg.buffer_capacity)
        assert s.energy == min(
            start_energy - cfg.probe_cost * probed - cfg.sample_cost * (process is not None) + arrival,
            cfg.buffer_capacity,
        )
        assert 0 <= s.energy <= cfg.buffer_capacity

        if self.energy.harvest is not None:
            s.harvest = int(step_harvest(self.energy.harvest, harvest_state, rng))
        if self.markov:
            s.channel = self.channel.draw(rng, c)
        if probed:
            s.tau = 1
            s.c_prev = observed
        else:
            s.tau = min(s.tau + 1, cfg.age_cap)
        s.t += 1
        return probed, observed, process, success, arrival, s.harvest, cost

    def step(self, policy: Policy) -> SlotOutcome:
        before = self.state.copy()
        probed, observed, process, success, arrival, next_harvest, cost = self._slot(policy)
        return SlotOutcome(before, probed, observed, process, success, arrival, next_harvest, cost, self.state.copy())

    def run(self, policy: Policy, horizon: int, trace_every: int = 0) -> "ReplicateResult":
        "Runs ``horizon`` slots. With trace_every > 0, records the state every that many slots."
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1 (got {horizon})")
        min_energy = self.cfg.min_energy
        total = 0.0
        outage = 0
        trace = []
        for t in range(horizon):
            if self.state.energy < min_energy:
                outage += 1
            if trace_every and t % trace_every == 0:
                outcome = self.step(policy)
                trace.append(_trace_row(outcome))
                total += outcome.cost
            else:
                total += self._slot(policy)[-1]
        return ReplicateResult(total / horizon, outage / horizon, trace)


def _trace_row(outcome: SlotOutcome) -> Dict[str, Any]:
    s = outcome.state
    row = {"t": s.t, "E": s.energy}
    row.update({f"T{k + 1}": age for k, age in enumerate(s.ages)})
    row.update(
        tau=s.tau,
        H=s.harvest + 1,
        b=int(outcome.probed),
        C=-1 if outcome.channel is None else outcome.channel,
        a=0 if outcome.process is None else outcome.process + 1,
        r=-1 if outcome.success is None else outcome.success,
        A=outcome.arrival,
        cost=outcome.cost,
    )
    return row


@dataclass
class ReplicateResult:
    aoi: float
    outage: float
    trace: list


def confidence_half_width(values: Sequence[float], level: float = CONFIDENCE_LEVEL) -> float:
    "Half-width of the Student-t confidence interval of the mean. inf with fewer than two values."
    if len(values) < 2:
        return float("inf")
    sem = stats.sem(values)
    if sem == 0:
        return 0.0
    return float(stats.t.ppf((1 + level) / 2, len(values) - 1) * sem)


@dataclass
class EvalReport:
    """Time-averaged AoI of a policy over independent replicates

    Parameters:
        seeds: Seed of each replicate.
        per_seed: Time-averaged AoI of each replicate.
        horizon: Slots per replicate.
        outage: Fraction of slots that started with E < E_p + E_s, averaged over replicates.
    """

    seeds: List[int]
    per_seed: List[float]
    horizon: int
    outage: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))

    @property
    def ci_half_width(self) -> float:
        return confidence_half_width(self.per_seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "ci95": self.ci_half_width,
            "horizon": self.horizon,
            "outage": self.outage,
            "seeds": list(self.seeds),
            "per_seed": list(self.per_seed),
        }


@dataclass
class Evaluator(ThreadBase):
    """Runs replicates of a policy, one per seed (base_seed, base_seed+1, ...)

    Policies must not keep per-run state; each replicate owns its generator.
    """

    cfg: SystemConfig = None
    channel: ChannelModel = None
    energy: EnergyModel = None
    horizon: int = DEFAULT_HORIZON
    n_seeds: int = DEFAULT_SEEDS
    base_seed: int = 0
    initial_channel: int = 0
    trace_every: int = 0

    @property
    def seeds(self) -> List[int]:
        return [self.base_seed + i for i in range(self.n_seeds)]

    def run_replicate(self, policy: Policy, seed: int) -> ReplicateResult:
        env = Environment(self.cfg, self.channel, self.energy, seed=seed, initial_channel=self.initial_channel)
        return env.run(policy, self.horizon, self.trace_every)

    def replicates(self, policy: Policy) -> List[ReplicateResult]:
        if self.n_seeds < 1:
            raise ValueError(f"n_seeds must be >= 1 (got {self.n_seeds})")
        logger.info(f"Evaluating {type(policy).__name__} over {self.n_seeds} seed(s) x {self.horizon} slots")
        return self._thread_map(lambda seed: self.run_replicate(policy, seed), self.seeds)

    def evaluate(self, policy: Policy) -> EvalReport:
        results = self.replicates(policy)
        return EvalReport(
            self.seeds, [r.aoi for r in results], self.horizon, float(np.mean([r.outage for r in results]))
        )


def evaluate_policy(
    policy: Policy,
    cfg: SystemConfig,
    channel: ChannelModel,
    energy: EnergyModel,
    horizon: int = DEFAULT_HORIZON,
    n_seeds: int = DEFAULT_SEEDS,
    base_seed: int = 0,
    threads: int = 1,
    initial_channel: int = 0,
) -> EvalReport:
    if n_seeds < 5:
        logger.warning(f"Only {n_seeds} seed(s); the confidence interval will be wide")
    evaluator = Evaluator(
        threaded=threads > 1,
        max_threadpool_size=threads,
        cfg=cfg,
        channel=channel,
        energy=energy,
        horizon=horizon,
        n_seeds=n_seeds,
        base_seed=base_seed,
        initial_channel=initial_channel,
    )
    return evaluator.evaluate(policy)


#
# Exact evaluation on the truncated single-process i.i.d. chain
#


def policy_chain(
    policy: Union[SinglePolicy, NoProbePolicy], cfg: SystemConfig, channel: IidChannel, energy: EnergyModel
) -> Tuple[np.ndarray, np.ndarray]:
    """Transition matrix over states (E,T) (flattened E-major) and expected per-slot cost, under a table policy"""
    B, Tm = cfg.buffer_capacity, cfg.age_cap
    Ep, Es = cfg.probe_cost, cfg.sample_cost
    n = (B + 1) * Tm
    P = np.zeros((n, n))
    cost = np.zeros(n)
    p, q = channel.success_probs, channel.weights

    def index(e: int, t: int) -> int:
        return e * Tm + t - 1

    for e in range(B + 1):
        for t in range(1, Tm + 1):
            i = index(e, t)
            nxt = min(t + 1, Tm)
            moves = []  # (probability, energy after spending, next age)
            if isinstance(policy, NoProbePolicy):
                if policy.sample[e, t - 1]:
                    pbar = float(q @ p)
                    cost[i] = t * (1 - pbar)
                    moves += [(pbar, e - Es, 1), (1 - pbar, e - Es, nxt)]
                else:
                    cost[i] = t
                    moves.append((1.0, e, nxt))
            elif policy.probe[e, t - 1]:
                for j in range(channel.num_states):
                    if policy.sample[e, t - 1, j]:
                        cost[i] += q[j] * t * (1 - p[j])
                        moves += [(q[j] * p[j], e - Ep - Es, 1), (q[j] * (1 - p[j]), e - Ep - Es, nxt)]
                    else:
                        cost[i] += q[j] * t
                        moves.append((q[j], e - Ep, nxt))
            else:
                cost[i] = t
                moves.append((1.0, e, nxt))

            for w, e_after, t_next in moves:
                if e_after < 0:
                    raise InfeasibleAction(f"Policy spends more energy than available at E={e}, T={t}")
                for a, pa in zip(energy.arrivals.support, energy.arrivals.probs):
                    P[i, index(min(e_after + a, B), t_next)] += w * pa
    return P, cost


def evaluate_exact_discounted(
    policy: Union[SinglePolicy, NoProbePolicy], cfg: SystemConfig, channel: IidChannel, energy: EnergyModel
) -> np.ndarray:
    "Discounted cost of a table policy from every state, as float[E, T-1]"
    P, cost = policy_chain(policy, cfg, channel, energy)
    v = np.linalg.solve(np.eye(len(cost)) - cfg.discount * P, cost)
    return v.reshape(cfg.energy_levels, cfg.age_cap)


def exact_average_cost(
    policy: Union[SinglePolicy, NoProbePolicy], cfg: SystemConfig, channel: IidChannel, energy: EnergyModel
) -> float:
    """Long-run time-averaged AoI of a table policy, from the stationary distribution of its chain.

    Assumes the chain has a single recurrent class, which holds whenever arrivals are possible.
    """
    P, cost = policy_chain(policy, cfg, channel, energy)
    n = len(cost)
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(pi @ cost)


#
# Probing versus blind sampling
#


@dataclass
class ComparisonRow:
    rate: float
    probe_cost: int
    sample_cost: int
    probing: EvalReport
    no_probing: EvalReport
    exact_probing: float
    exact_no_probing: float

    @property
    def differences(self) -> List[float]:
        "Paired per-seed differences, probing minus blind sampling"
        return [a - b for a, b in zip(self.probing.per_seed, self.no_probing.per_seed)]

    def to_dict(self) -> Dict[str, Any]:
        diffs = self.differences
        return {
            "lambda": self.rate,
            "E_p": self.probe_cost,
            "E_s": self.sample_cost,
            "aoi_probe": self.probing.mean,
            "ci_probe": self.probing.ci_half_width,
            "aoi_noprobe": self.no_probing.mean,
            "ci_noprobe": self.no_probing.ci_half_width,
            "diff": float(np.mean(diffs)),
            "ci_diff": confidence_half_width(diffs),
            "exact_probe": self.exact_probing,
            "exact_noprobe": self.exact_no_probing,
        }


@dataclass
class ProbingComparison(ThreadBase):
    """Solves and simulates the probing and blind-sampling models at each (lambda, E_p, E_s) point

    With a MarkovChannel both models are solved over the Markov state (and the harvesting chain, if given).
    Exact average costs are only available on the i.i.d. single-process chain; they are nan otherwise.
    """

    cfg: SystemConfig = None
    channel: ChannelModel = None
    harvest: Optional[HarvestChain] = None
    initial_channel: int = 0
    horizon: int = DEFAULT_HORIZON
    n_seeds: int = DEFAULT_SEEDS
    base_seed: int = 0
    tol: float = DEFAULT_TOL

    @property
    def markov(self) -> bool:
        return isinstance(self.channel, MarkovChannel)

    def _solve_pair(self, cfg: SystemConfig, energy: EnergyModel):
        if self.markov:
            probing = MarkovSolver(cfg, self.channel, energy, tol=self.tol)
            blind = MarkovNoProbeSolver(cfg, self.channel, energy, tol=self.tol)
        else:
            probing = IidSingleSolver(cfg, self.channel, energy, tol=self.tol)
            blind = IidNoProbeSolver(cfg, self.channel, energy, tol=self.tol)
        return probing.value_iteration(), blind.value_iteration()

    def compare_point(self, point: Tuple[float, int, int]) -> ComparisonRow:
        rate, probe_cost, sample_cost = point
        cfg = self.cfg.with_overrides(probe_cost=probe_cost, sample_cost=sample_cost)
        energy = EnergyModel(ArrivalDistribution.bernoulli(rate), self.harvest)
        logger.info(f"Comparing probing at lambda={rate}, E_p={probe_cost}, E_s={sample_cost}")

        probing, blind = self._solve_pair(cfg, energy)
        evaluator = Evaluator(
            threaded=False,
            cfg=cfg,
            channel=self.channel,
            energy=energy,
            horizon=self.horizon,
            n_seeds=self.n_seeds,
            base_seed=self.base_seed,
            initial_channel=self.initial_channel,
        )
        if self.markov:
            exact = (float("nan"), float("nan"))
        else:
            exact = tuple(exact_average_cost(r.policy, cfg, self.channel, energy) for r in (probing, blind))
        return ComparisonRow(
            rate,
            probe_cost,
            sample_cost,
            evaluator.evaluate(table_policy(probing.policy)),
            evaluator.evaluate(table_policy(blind.policy)),
            *exact,
        )

    def compare(self, points: Sequence[Tuple[float, int, int]]) -> List[ComparisonRow]:
        return self._thread_map(self.compare_point, points)


def compare_probing(
    points: Sequence[Tuple[float, int, int]],
    cfg: SystemConfig,
    channel: ChannelModel,
    horizon: int = DEFAULT_HORIZON,
    n_seeds: int = DEFAULT_SEEDS,
    base_seed: int = 0,
    threads: int = 1,
    harvest: Optional[HarvestChain] = None,
    initial_channel: int = 0,
) -> List[ComparisonRow]:
    """For each (lambda, E_p, E_s): AoI of the optimal probing policy, of the optimal blind-sampling
    policy, and their paired difference, from the same seeds.

    ``channel`` may be an IidChannel or a MarkovChannel. ``harvest`` gates the Bernoulli arrivals by a
    harvesting chain (Markov channel only).
    """
    comparison = ProbingComparison(
        threaded=threads > 1,
        max_threadpool_size=threads,
        cfg=cfg,
        channel=channel,
        harvest=harvest,
        initial_channel=initial_channel,
        horizon=horizon,
        n_seeds=n_seeds,
        base_seed=base_seed,
    )
    return comparison.compare(points)


def comparison_frame(rows: Sequence[ComparisonRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows])
