from typing import Optional, Tuple

from .channel import ChannelModel, IidChannel, MarkovChannel
from .config import SystemConfig
from .energy import ArrivalDistribution, EnergyModel, HarvestChain
from .presets import Experiment
from .presets import load_experiment as _load_experiment
from .qlearning import ExplorationSchedule, LearningCurve, QTables, StepSizeSchedule
from .qlearning import learn as _learn
from .simulator import EvalReport, Policy, evaluate_policy, table_policy
from .solver_iid_multi import IidMultiSolver
from .solver_iid_single import IidNoProbeSolver, IidSingleSolver
from .solver_markov import MarkovNoProbeSolver, MarkovSolver
from .value_iteration import DEFAULT_MAX_CELLS, DEFAULT_MAX_ITERS, DEFAULT_TOL, SolveResult

__version__ = "0.1.0"


def solve(
    cfg: SystemConfig,
    channel: ChannelModel,
    energy: EnergyModel,
    *,
    # Solve the blind-sampling model instead (single process)
    probing: bool = True,
    # Store multi-process tables over sorted age vectors only
    compact: bool = False,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> SolveResult:
    """Runs value iteration on the model matching the arguments

    Parameters:
        cfg: System parameters. N > 1 selects the multi-process solver.
        channel: An IidChannel, or a MarkovChannel for the Markov solver.
        energy: Arrival model. A harvesting chain requires a Markov channel.

    Returns:
        SolveResult, with the converged tables, the greedy policy and the error trace.
    """
    kw = dict(tol=tol, max_iters=max_iters, max_cells=max_cells)
    if isinstance(channel, MarkovChannel):
        solver = MarkovSolver if probing else MarkovNoProbeSolver
        return solver(cfg, channel, energy, **kw).value_iteration()
    if cfg.num_processes > 1:
        return IidMultiSolver(cfg, channel, energy, compact=compact, **kw).value_iteration()
    if not probing:
        return IidNoProbeSolver(cfg, channel, energy, **kw).value_iteration()
    return IidSingleSolver(cfg, channel, energy, **kw).value_iteration()


def learn(
    cfg: SystemConfig,
    channel: ChannelModel,
    energy: EnergyModel,
    horizon: int,
    *,
    seed: int = 0,
    epsilon: float = 0.1,
    d0: float = 0.5,
    omega: float = 0.6,
    known_p: bool = True,
) -> Tuple[QTables, LearningCurve]:
    """Learns Q tables online for ``horizon`` slots, in a fresh environment seeded with ``seed``

    See Also:
        :func:`aoiprobe.qlearning.run_learning`
    """
    return _learn(
        cfg,
        channel,
        energy,
        horizon,
        seed=seed,
        step_size=StepSizeSchedule(d0, omega),
        exploration=ExplorationSchedule(epsilon, min(0.01, epsilon)),
        known_p=known_p,
    )


def evaluate(
    policy,
    cfg: SystemConfig,
    channel: ChannelModel,
    energy: EnergyModel,
    horizon: int = 10**5,
    n_seeds: int = 5,
    base_seed: int = 0,
    threads: int = 1,
) -> EvalReport:
    """Simulated time-averaged AoI of a policy

    Parameters:
        policy: A simulator Policy, or the table policy of a SolveResult (``result.policy``).
    """
    if not isinstance(policy, Policy):
        policy = table_policy(policy)
    return evaluate_policy(policy, cfg, channel, energy, horizon, n_seeds, base_seed, threads)


def load_experiment(
    path: Optional[str] = None, run: Optional[str] = None, preset: Optional[str] = None, **overrides
) -> Experiment:
    """Loads a configuration file and/or a preset

    Parameters:
        path: Path of a TOML configuration file.
        run: Name of the [run.*] section to apply.
        preset: Name of a preset to start from.
        overrides: "section__key" values, e.g. ``system__discount=0.9``.
    """
    return _load_experiment(path, run, preset, **overrides)


__all__ = [
    "ArrivalDistribution",
    "EnergyModel",
    "HarvestChain",
    "IidChannel",
    "MarkovChannel",
    "SystemConfig",
    "evaluate",
    "learn",
    "load_experiment",
    "solve",
]
