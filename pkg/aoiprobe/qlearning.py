"""Two-stage Q-learning by asynchronous stochastic approximation

Two tables are kept: Q(s, b) over states and probe decisions, and Q(v, a) over intermediate states
(after a probe) and sample decisions. Every entry has its own visit counter nu, and is moved by
d(nu) = d0 / (1 + nu)^omega towards the target of its case:

    state,  b=0:  T + alpha min_b Q(next state, b)
    state,  b=1:  min_a Q(E, T, C, a)            with C the state observed by this slot's probe
    inter,  a=0:  T + alpha min_b Q(E-E_p+A, T+, b)
    inter,  a=1:  T(1-p) + alpha p min_b Q(E-E_p-E_s+A, 1, b) + alpha (1-p) min_b Q(E-E_p-E_s+A, T+, b)

With unknown success probabilities, p is replaced by the observed delivery indicator r.
Over a Markov channel the states carry (tau, C_prev, H), a probe restarts tau at 1 and stores the observed C,
and arrivals are 0 in the non-harvesting state.
"""

from collections import deque
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from runtype import dataclass

from .channel import ChannelModel, IidChannel, MarkovChannel
from .config import InvalidConfig, SystemConfig
from .energy import EnergyModel, HarvestState
from .simulator import EnvState, Environment, Policy, SlotOutcome, table_policy
from .solver_iid_single import SinglePolicy
from .solver_markov import MarkovPolicy
from .utils import getLogger
from .value_iteration import SolveResult

logger = getLogger(__name__)

REPORT_EVERY = 1000
WINDOW = 10**4


class MismatchedRecord(ValueError):
    pass


@dataclass
class StepSizeSchedule:
    """d(n) = d0 / (1 + n)^omega, indexed by the visit count of the updated entry"""

    d0: float = 0.5
    omega: float = 0.6

    def __post_init__(self):
        if self.d0 <= 0:
            raise InvalidConfig(f"d0 must be positive (got {self.d0})")
        if not 0.5 < self.omega <= 1.0:
            raise InvalidConfig(f"omega must be in (0.5, 1] (got {self.omega})")

    def __call__(self, visits: int) -> float:
        return self.d0 / (1.0 + visits) ** self.omega

    def satisfies_assumptions(self) -> Dict[str, bool]:
        "The step-size conditions of stochastic approximation, decided from d0 and omega"
        return {
            "bounded": self.d0 > 0,  # d(n) <= d(0) = d0
            "non_increasing": self.omega > 0,
            "divergent_sum": self.omega <= 1.0,
            "square_summable": 2 * self.omega > 1.0,
        }


@dataclass
class ExplorationSchedule:
    """epsilon(t) = max(epsilon_min, epsilon * decay^t)"""

    epsilon: float = 0.1
    epsilon_min: float = 0.01
    decay: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise InvalidConfig(f"epsilon must be in (0, 1] (got {self.epsilon})")
        if not 0.0 < self.epsilon_min <= self.epsilon:
            raise InvalidConfig(f"epsilon_min must be in (0, epsilon] (got {self.epsilon_min})")
        if not 0.0 < self.decay <= 1.0:
            raise InvalidConfig(f"decay must be in (0, 1] (got {self.decay})")

    def value(self, t: int) -> float:
        if self.decay == 1.0:
            return self.epsilon
        return max(self.epsilon_min, self.epsilon * self.decay**t)


@dataclass(frozen=False)
class QTables:
    """State and intermediate Q tables, with visit counts

    i.i.d. channel:  q_state[E, T-1, b],              q_inter[E, T-1, c, a]
    Markov channel:  q_state[E, T-1, tau-1, c_prev, h, b],  q_inter[E, T-1, c, h, a]

    Entries of infeasible actions (E < E_p + E_s) are inf and never updated.
    """

    q_state: np.ndarray
    q_inter: np.ndarray
    n_state: np.ndarray
    n_inter: np.ndarray
    markov: bool = False
    steps: int = 0

    @classmethod
    def create(cls, cfg: SystemConfig, num_channel_states: int, markov: bool = False, q0: float = 0.0) -> "QTables":
        "All live entries start at q0 (a large q0 gives optimistic initialization)"
        if cfg.num_processes != 1:
            raise InvalidConfig("Q-learning is implemented for a single process")
        B, Tm, m = cfg.buffer_capacity, cfg.age_cap, num_channel_states
        if markov:
            state_shape = (B + 1, Tm, Tm, m, 2)
            inter_shape = (B + 1, Tm, m, 2)
        else:
            state_shape = (B + 1, Tm)
            inter_shape = (B + 1, Tm, m)
        q_state = np.full(state_shape + (2,), float(q0))
        q_inter = np.full(inter_shape + (2,), float(q0))
        q_state[: cfg.min_energy, ..., 1] = np.inf
        q_inter[: cfg.min_energy] = np.inf
        return cls(
            q_state,
            q_inter,
            np.zeros(q_state.shape, dtype=np.int64),
            np.zeros(q_inter.shape, dtype=np.int64),
            markov,
        )

    @classmethod
    def from_solution(cls, result: SolveResult, markov: bool = False) -> "QTables":
        "Q tables of a converged value-iteration solution (action values of its last backup)"
        tables = result.tables
        return cls(
            tables.q_state.copy(),
            tables.q_inter.copy(),
            np.zeros(tables.q_state.shape, dtype=np.int64),
            np.zeros(tables.q_inter.shape, dtype=np.int64),
            markov,
        )

    def save(self, path: str):
        np.savez(
            path,
            q_state=self.q_state,
            q_inter=self.q_inter,
            n_state=self.n_state,
            n_inter=self.n_inter,
            markov=self.markov,
            steps=self.steps,
        )

    @classmethod
    def load(cls, path: str) -> "QTables":
        with np.load(path) as data:
            return cls(
                data["q_state"],
                data["q_inter"],
                data["n_state"],
                data["n_inter"],
                bool(data["markov"]),
                int(data["steps"]),
            )

    def greedy_policy(self) -> Union[SinglePolicy, MarkovPolicy]:
        "Greedy tables, with ties going to the energy-conserving action"
        probe = self.q_state[..., 1] < self.q_state[..., 0]
        sample = self.q_inter[..., 1] < self.q_inter[..., 0]
        return MarkovPolicy(probe, sample) if self.markov else SinglePolicy(probe, sample)

    def state_key(self, s: EnvState) -> Tuple[int, ...]:
        if self.markov:
            return (s.energy, s.ages[0] - 1, s.tau - 1, s.c_prev, s.harvest)
        return (s.energy, s.ages[0] - 1)

    def inter_key(self, s: EnvState, channel_pos: int) -> Tuple[int, ...]:
        if self.markov:
            return (s.energy, s.ages[0] - 1, channel_pos, s.harvest)
        return (s.energy, s.ages[0] - 1, channel_pos)


def select_action(q_values: Sequence[float], feasible: Sequence[bool], epsilon: float, rng: np.random.Generator) -> int:
    """epsilon-greedy choice among the feasible actions. Ties go to the lowest action (the energy-conserving one)."""
    actions = [a for a, ok in enumerate(feasible) if ok]
    if not actions:
        raise ValueError("No feasible action")
    if len(actions) == 1:
        return actions[0]
    if epsilon > 0 and rng.random() < epsilon:
        return actions[int(rng.integers(len(actions)))]
    return min(actions, key=lambda a: (q_values[a], a))


@dataclass
class Transition:
    """One update record

    Parameters:
        stage: "state" (probe decision b) or "intermediate" (sample decision a).
        energy, age: The state the decision was taken in.
        action: b or a.
        arrival: Packets that arrived this slot.
        channel: Channel position observed by the probe. Required unless stage="state" and action=0.
        success: Delivery indicator r. Required for a=1 when the success probabilities are unknown.
        tau, c_prev, harvest, next_harvest: Markov bookkeeping.
    """

    stage: str
    energy: int
    age: int
    action: int
    arrival: int
    channel: Optional[int] = None
    success: Optional[int] = None
    tau: int = 1
    c_prev: int = 0
    harvest: int = 0
    next_harvest: int = 0


def transitions_from(outcome: SlotOutcome) -> List[Transition]:
    "The update records of a simulated slot: one for the probe decision, and one more after a probe"
    s = outcome.state
    common = dict(
        energy=s.energy,
        age=s.ages[0],
        arrival=outcome.arrival,
        channel=outcome.channel,
        success=outcome.success,
        tau=s.tau,
        c_prev=s.c_prev,
        harvest=s.harvest,
        next_harvest=outcome.next_harvest,
    )
    records = [Transition("state", action=int(outcome.probed), **common)]
    if outcome.probed:
        records.append(Transition("intermediate", action=int(outcome.process is not None), **common))
    return records


def _check_record(rec: Transition, cfg: SystemConfig, num_channel_states: int):
    if rec.stage not in ("state", "intermediate"):
        raise MismatchedRecord(f"Unknown stage: {rec.stage!r}")
    if rec.action not in (0, 1):
        raise MismatchedRecord(f"Action must be 0 or 1 (got {rec.action})")
    if not 0 <= rec.energy <= cfg.buffer_capacity or not 1 <= rec.age <= cfg.age_cap:
        raise MismatchedRecord(f"State out of range: E={rec.energy}, T={rec.age}")
    needs_probe = rec.stage == "intermediate" or rec.action == 1
    if needs_probe and rec.energy < cfg.min_energy:
        raise MismatchedRecord(
            f"Action {rec.action} at {rec.stage} stage is infeasible with E={rec.energy} < E_p+E_s={cfg.min_energy}"
        )
    if needs_probe and (rec.channel is None or not 0 <= rec.channel < num_channel_states):
        raise MismatchedRecord(f"Record needs the probed channel state (got {rec.channel})")


def _success_weight(rec: Transition, success_probs: Optional[np.ndarray]) -> float:
    if success_probs is not None:
        return float(success_probs[rec.channel])
    if rec.success is None:
        raise MismatchedRecord("Unknown success probabilities: the record must carry the delivery indicator r")
    return float(rec.success)


def _apply(table: np.ndarray, counts: np.ndarray, key: Tuple[int, ...], target: float, step_size) -> float:
    "Moves one entry towards its target. Returns the step size used."
    d = step_size(int(counts[key]))
    table[key] += d * (target - table[key])
    counts[key] += 1
    return d


def q_update_iid(
    Q: QTables,
    rec: Transition,
    cfg: SystemConfig,
    step_size: StepSizeSchedule,
    success_probs: Optional[np.ndarray] = None,
) -> float:
    """Applies the one update matching the record. Pass success_probs to use known p(C), or None to use r.

    Returns the step size used.
    """
    _check_record(rec, cfg, Q.q_inter.shape[2])
    alpha, B = cfg.discount, cfg.buffer_capacity
    E, T = rec.energy, rec.age
    t = T - 1
    t_next = min(T + 1, cfg.age_cap) - 1
    A = rec.arrival

    def best(e: int, t_idx: int) -> float:
        return float(Q.q_state[min(e, B), t_idx].min())

    if rec.stage == "state":
        key = (E, t, rec.action)
        if rec.action == 0:
            target = T + alpha * best(E + A, t_next)
        else:
            target = float(Q.q_inter[E, t, rec.channel].min())
        return _apply(Q.q_state, Q.n_state, key, target, step_size)

    key = (E, t, rec.channel, rec.action)
    if rec.action == 0:
        target = T + alpha * best(E - cfg.probe_cost + A, t_next)
    else:
        p = _success_weight(rec, success_probs)
        e_after = E - cfg.min_energy + A
        target = T * (1 - p) + alpha * p * best(e_after, 0) + alpha * (1 - p) * best(e_after, t_next)
    return _apply(Q.q_inter, Q.n_inter, key, target, step_size)


def q_update_markov(
    Q: QTables,
    rec: Transition,
    cfg: SystemConfig,
    step_size: StepSizeSchedule,
    success_probs: Optional[np.ndarray] = None,
) -> float:
    "As q_update_iid, over the Markov state (E, T, tau, C_prev, H). Nothing arrives in H_2."
    _check_record(rec, cfg, Q.q_inter.shape[2])
    if not 1 <= rec.tau <= rec.age:
        raise MismatchedRecord(f"tau must be in [1, T] (got tau={rec.tau}, T={rec.age})")
    alpha, B, Tm = cfg.discount, cfg.buffer_capacity, cfg.age_cap
    E, T, h, h_next = rec.energy, rec.age, rec.harvest, rec.next_harvest
    t = T - 1
    t_next = min(T + 1, Tm) - 1
    A = 0 if h == HarvestState.NON_HARVESTING else rec.arrival

    def best(e: int, t_idx: int, tau_idx: int, c: int) -> float:
        return float(Q.q_state[min(e, B), t_idx, tau_idx, c, h_next].min())

    if rec.stage == "state":
        key = (E, t, rec.tau - 1, rec.c_prev, h, rec.action)
        if rec.action == 0:
            tau_next = min(rec.tau + 1, Tm) - 1
            target = T + alpha * best(E + A, t_next, tau_next, rec.c_prev)
        else:
            target = float(Q.q_inter[E, t, rec.channel, h].min())
        return _apply(Q.q_state, Q.n_state, key, target, step_size)

    c = rec.channel
    key = (E, t, c, h, rec.action)
    if rec.action == 0:
        target = T + alpha * best(E - cfg.probe_cost + A, t_next, 0, c)
    else:
        p = _success_weight(rec, success_probs)
        e_after = E - cfg.min_energy + A
        target = T * (1 - p) + alpha * p * best(e_after, 0, 0, c) + alpha * (1 - p) * best(e_after, t_next, 0, c)
    return _apply(Q.q_inter, Q.n_inter, key, target, step_size)


class EpsilonGreedyQ(Policy):
    "Behavior policy of a learning run. ``epsilon`` may be changed between slots."

    def __init__(self, Q: QTables, cfg: SystemConfig, epsilon: float = 0.0):
        self.Q = Q
        self.cfg = cfg
        self.epsilon = epsilon

    def decide_probe(self, state, rng):
        feasible = (True, state.energy >= self.cfg.min_energy)
        return bool(select_action(self.Q.q_state[self.Q.state_key(state)], feasible, self.epsilon, rng))

    def decide_sample(self, state, channel_pos, rng):
        feasible = (True, state.energy >= self.cfg.min_energy)
        a = select_action(self.Q.q_inter[self.Q.inter_key(state, channel_pos)], feasible, self.epsilon, rng)
        return 0 if a else None


def greedy_q_policy(Q: QTables) -> Policy:
    "The greedy policy of a Q table, as a simulator policy"
    return table_policy(Q.greedy_policy())


@dataclass
class LearningCurve:
    """Windowed time-averaged AoI of the behavior policy

    Each row is (step, aoi over the trailing window, epsilon, mean step size over the report interval).
    """

    rows: List[Tuple[int, float, float, float]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["step", "aoi", "epsilon", "mean_step"])

    @property
    def final_aoi(self) -> float:
        return self.rows[-1][1] if self.rows else float("nan")


def run_learning(
    env: Environment,
    horizon: int,
    step_size: StepSizeSchedule = StepSizeSchedule(),
    exploration: ExplorationSchedule = ExplorationSchedule(),
    Q: Optional[QTables] = None,
    known_p: bool = True,
    q0: float = 0.0,
    report_every: int = REPORT_EVERY,
    window: int = WINDOW,
) -> Tuple[QTables, LearningCurve]:
    """Learns online for ``horizon`` slots, starting from Q (or a fresh table).

    Each slot updates the probe-decision entry, and after a probe the sample-decision entry too.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1 (got {horizon})")
    cfg = env.cfg
    markov = isinstance(env.channel, MarkovChannel)
    if Q is None:
        Q = QTables.create(cfg, env.channel.num_states, markov=markov, q0=q0)
    elif Q.markov != markov:
        raise InvalidConfig("Q tables were learned for a different channel model")
    update = q_update_markov if markov else q_update_iid
    success_probs = np.asarray(env.channel.success_probs) if known_p else None

    behavior = EpsilonGreedyQ(Q, cfg)
    costs = deque(maxlen=window)
    window_sum = 0.0
    steps_taken = []
    rows = []
    logger.info(f"Learning for {horizon} slots ({'known' if known_p else 'unknown'} success probabilities)")
    for t in range(horizon):
        behavior.epsilon = exploration.value(Q.steps)
        outcome = env.step(behavior)
        for rec in transitions_from(outcome):
            steps_taken.append(update(Q, rec, cfg, step_size, success_probs))
        Q.steps += 1

        if len(costs) == window:
            window_sum -= costs[0]
        costs.append(outcome.cost)
        window_sum += outcome.cost

        if (t + 1) % report_every == 0 or t + 1 == horizon:
            aoi = window_sum / len(costs)
            mean_step = float(np.mean(steps_taken)) if steps_taken else 0.0
            rows.append((t + 1, aoi, behavior.epsilon, mean_step))
            steps_taken = []
            logger.info(
                f"step {t + 1}: windowed AoI {aoi:.4f}, epsilon {behavior.epsilon:.3f}, mean step {mean_step:.4f}"
            )
    return Q, LearningCurve(rows)


@dataclass
class TDStats:
    """Monte-Carlo mean and standard error of (target - Q) at every live entry"""

    state_mean: np.ndarray
    state_sem: np.ndarray
    inter_mean: np.ndarray
    inter_sem: np.ndarray


def sample_td_errors(
    Q: QTables,
    cfg: SystemConfig,
    channel: IidChannel,
    energy: EnergyModel,
    n: int,
    rng: np.random.Generator,
    known_p: bool = True,
) -> TDStats:
    """Draws n transitions from the true i.i.d. model at every live (state, action) entry of Q, and averages
    the update target minus the current entry. At the optimal Q the means vanish up to sampling error.
    """
    if Q.markov:
        raise ValueError("sample_td_errors is implemented for the i.i.d. model")
    alpha, B, Tm = cfg.discount, cfg.buffer_capacity, cfg.age_cap
    Ep, Es = cfg.probe_cost, cfg.sample_cost
    p = channel.success_probs
    support = np.asarray(energy.arrivals.support)
    best = Q.q_state.min(axis=-1)  # [E, T-1]

    def draw_arrivals() -> np.ndarray:
        return rng.choice(support, size=n, p=energy.arrivals.probs)

    state_mean = np.full(Q.q_state.shape, np.nan)
    state_sem = np.full(Q.q_state.shape, np.nan)
    inter_mean = np.full(Q.q_inter.shape, np.nan)
    inter_sem = np.full(Q.q_inter.shape, np.nan)
    inter_best = Q.q_inter.min(axis=-1)

    def record(mean_arr, sem_arr, key, errors):
        mean_arr[key] = errors.mean()
        sem_arr[key] = errors.std(ddof=1) / np.sqrt(n)

    for e in range(B + 1):
        for t in range(Tm):
            T, t_next = t + 1, min(t + 1, Tm - 1)
            A = draw_arrivals()
            errors = T + alpha * best[np.minimum(e + A, B), t_next] - Q.q_state[e, t, 0]
            record(state_mean, state_sem, (e, t, 0), errors)
            if e < cfg.min_energy:
                continue

            C = np.array([channel.draw(rng) for _ in range(n)])
            record(state_mean, state_sem, (e, t, 1), inter_best[e, t, C] - Q.q_state[e, t, 1])

            for c in range(channel.num_states):
                A = draw_arrivals()
                errors = T + alpha * best[np.minimum(e - Ep + A, B), t_next] - Q.q_inter[e, t, c, 0]
                record(inter_mean, inter_sem, (e, t, c, 0), errors)

                A = draw_arrivals()
                e_after = np.minimum(e - Ep - Es + A, B)
                w = np.full(n, p[c]) if known_p else (rng.random(n) < p[c]).astype(float)
                target = T * (1 - w) + alpha * w * best[e_after, 0] + alpha * (1 - w) * best[e_after, t_next]
                record(inter_mean, inter_sem, (e, t, c, 1), target - Q.q_inter[e, t, c, 1])
    return TDStats(state_mean, state_sem, inter_mean, inter_sem)


def learn(
    cfg: SystemConfig,
    channel: ChannelModel,
    energy: EnergyModel,
    horizon: int,
    seed: int = 0,
    initial_channel: int = 0,
    **kw,
) -> Tuple[QTables, LearningCurve]:
    "Runs one learning run in a fresh environment seeded with ``seed``"
    env = Environment(cfg, channel, energy, seed=seed, initial_channel=initial_channel)
    return run_learning(env, horizon, **kw)
