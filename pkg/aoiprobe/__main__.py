import logging
import os
import sys
import time
from itertools import product
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
import numpy as np
import pandas as pd
import rich
from rich.table import Table
from runtype import dataclass

from . import __version__, solve
from .config import ConfigParseError, InvalidConfig, SystemConfig
from .energy import EnergyModel
from .export import select, write_csv, write_dat, write_metadata
from .presets import PRESETS, Experiment, build_experiment, resolve_sections
from .qlearning import ExplorationSchedule, StepSizeSchedule, greedy_q_policy, learn
from .simulator import (
    DEFAULT_HORIZON,
    DEFAULT_SEEDS,
    AlwaysIdle,
    Environment,
    EvalReport,
    Evaluator,
    Policy,
    ProbeAlways,
    RandomFeasible,
    compare_probing,
    comparison_frame,
    exact_average_cost,
    table_policy,
)
from .solver_iid_multi import extract_thresholds_multi
from .solver_iid_single import extract_no_probe_thresholds, extract_thresholds
from .solver_markov import extract_no_probe_thresholds_markov, extract_thresholds_markov
from .thread_utils import ThreadBase
from .utils import getLogger, parse_number_list
from .value_iteration import (
    DEFAULT_MAX_CELLS,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    ConjectureCheck,
    NoConvergence,
    SolveResult,
    StateSpaceTooLarge,
    StructureViolation,
    check_counts,
    checks_frame,
    rate_order_checks,
)

logger = getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] %(levelname)s - %(message)s"
DATE_FORMAT = "%H:%M:%S"

DEFAULT_OUTPUT_DIR = "aoiprobe-out"
DEFAULT_LEARN_HORIZON = 5 * 10**5
DEFAULT_LEARN_SEEDS = 2

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TOO_LARGE = 4
EXIT_NUMERICAL = 5

# Checked in order, so subclasses must precede their bases
EXIT_CODES = [
    ((InvalidConfig, ConfigParseError), EXIT_CONFIG),
    ((StateSpaceTooLarge,), EXIT_TOO_LARGE),
    ((NoConvergence, StructureViolation), EXIT_NUMERICAL),
    ((OSError,), EXIT_IO),
]


@dataclass
class Invocation:
    """One command invocation

    Parameters:
        command: Name of the command to run.
        out_dir: Base output directory.
        overrides: "section.key" -> value, applied after the preset and the config file.
        conf: Path of a TOML configuration file.
        run_name: Name of the [run.*] section to apply.
        preset: Name of a preset to start from.
        debug: Re-raise errors instead of converting them into exit codes.
    """

    command: str
    out_dir: str
    overrides: Dict[str, Any]
    conf: Optional[str] = None
    run_name: Optional[str] = None
    preset: Optional[str] = None
    debug: bool = False

    @property
    def output_path(self) -> str:
        return os.path.join(self.out_dir, f"{self.preset or 'config'}-{self.command}")


@dataclass
class CommandOutput:
    """What a command produced

    Parameters:
        files: Paths written.
        metadata: Extra entries for metadata.json, e.g. the seeds used or the outcome of the structural checks.
    """

    files: List[str]
    metadata: Dict[str, Any]


def _runner(exp: Experiment) -> ThreadBase:
    threads = int(exp.option("threads", 1))
    return ThreadBase(threaded=threads > 1, max_threadpool_size=threads)


def _tag(rate: Optional[float]) -> str:
    return "" if rate is None else f"_lam{rate:g}"


def _label(rate: Optional[float]) -> str:
    return "default" if rate is None else f"lambda={rate:g}"


def _preset_name(exp: Experiment) -> str:
    return exp.preset or "config"


def _csv(exp: Experiment, frame: pd.DataFrame, out_dir: str, name: str) -> str:
    "Writes a table with a trailing 'preset' column, so files from several runs can be concatenated"
    return write_csv(frame.assign(preset=_preset_name(exp)), os.path.join(out_dir, name))


def _solve(exp: Experiment, cfg: SystemConfig, energy: EnergyModel, probing: bool = True) -> SolveResult:
    return solve(
        cfg,
        exp.channel,
        energy,
        probing=probing,
        compact=bool(exp.option("compact", False)),
        tol=float(exp.option("tol", DEFAULT_TOL)),
        max_iters=int(exp.option("max_iters", DEFAULT_MAX_ITERS)),
        max_cells=int(exp.option("max_cells", DEFAULT_MAX_CELLS)),
    )


def _evaluator(exp: Experiment, energy: EnergyModel, cfg: Optional[SystemConfig] = None, **kw) -> Evaluator:
    return Evaluator(
        threaded=False,
        cfg=cfg or exp.cfg,
        channel=exp.channel,
        energy=energy,
        horizon=int(kw.get("horizon") or exp.option("horizon", DEFAULT_HORIZON)),
        n_seeds=int(kw.get("seeds") or exp.option("seeds", DEFAULT_SEEDS)),
        base_seed=int(exp.option("seed", 0)),
        initial_channel=exp.initial_channel,
    )


def _error_trace_frame(result: SolveResult) -> pd.DataFrame:
    return pd.DataFrame({"iteration": np.arange(1, result.iterations + 1), "error": result.error_trace})


def _require_iid_single(exp: Experiment, command: str, alternative: str):
    if exp.markov:
        raise InvalidConfig(f"'{command}' needs an i.i.d. channel. Use '{alternative}' for a Markov channel.")
    if exp.cfg.num_processes != 1:
        raise InvalidConfig(f"'{command}' models a single process (got N={exp.cfg.num_processes})")


def _failed(checks: Sequence[ConjectureCheck]) -> str:
    return ", ".join(c.name for c in checks if not c.ok) or "-"


def _print_table(title: str, df: pd.DataFrame):
    table = Table(title=title)
    for column in df.columns:
        table.add_column(str(column), justify="right")
    for row in df.itertuples(index=False):
        table.add_row(*(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row))
    rich.print(table)


#
# Commands. Each writes its outputs into out_dir.
#


def cmd_solve(exp: Experiment, out_dir: str) -> CommandOutput:
    _require_iid_single(exp, "solve", "solve-markov")
    probing = bool(exp.option("probing", True))

    def solve_point(rate):
        energy = exp.energy_at(rate)
        result = _solve(exp, exp.cfg, energy, probing)
        tag = _tag(rate)
        files = [_csv(exp, _error_trace_frame(result), out_dir, f"error_trace{tag}.csv")]
        if probing:
            report = extract_thresholds(result, exp.cfg, exp.channel)
            probe = report.probe_threshold_frame()
            files += [
                _csv(exp, probe, out_dir, f"probe_threshold{tag}.csv"),
                _csv(exp, report.state_frame(), out_dir, f"sample_threshold{tag}.csv"),
                write_dat(probe["E"], probe["T_th"], os.path.join(out_dir, f"probe_threshold{tag}.dat"), "E T_th"),
            ]
        else:
            report = extract_no_probe_thresholds(result, exp.cfg)
            probe = report.frame()
            files += [
                _csv(exp, probe, out_dir, f"blind_threshold{tag}.csv"),
                write_dat(probe["E"], probe["T_th"], os.path.join(out_dir, f"blind_threshold{tag}.dat"), "E T_th"),
            ]
        files.append(_csv(exp, report.checks_frame(), out_dir, f"checks{tag}.csv"))
        summary = {"lambda": rate, "iterations": result.iterations}
        summary.update({f"T_th(E={e})": t for e, t in zip(probe["E"], probe["T_th"])})
        summary["failed_checks"] = _failed(report.checks)
        return files, summary, (_label(rate), check_counts(report.checks))

    results = _runner(exp)._thread_map(solve_point, exp.lambdas)
    _print_table("Age thresholds", pd.DataFrame([s for _, s, _ in results]))
    return CommandOutput([f for files, _, _ in results for f in files], {"checks": dict(c for _, _, c in results)})


def cmd_solve_multi(exp: Experiment, out_dir: str) -> CommandOutput:
    if exp.markov:
        raise InvalidConfig("'solve-multi' needs an i.i.d. channel")
    max_cells = int(exp.option("max_cells", DEFAULT_MAX_CELLS))

    def solve_point(rate):
        result = _solve(exp, exp.cfg, exp.energy_at(rate))
        report = extract_thresholds_multi(result, exp.cfg, exp.channel, max_cells)
        tag = _tag(rate)
        files = [
            _csv(exp, _error_trace_frame(result), out_dir, f"error_trace{tag}.csv"),
            _csv(exp, report.probe_threshold_frame(), out_dir, f"probe_threshold{tag}.csv"),
            _csv(exp, report.state_frame(), out_dir, f"sample_threshold{tag}.csv"),
            _csv(exp, report.checks_frame(), out_dir, f"checks{tag}.csv"),
        ]
        summary = {"lambda": rate, "iterations": result.iterations, "failed_checks": _failed(report.checks)}
        return files, summary, (_label(rate), check_counts(report.checks))

    results = _runner(exp)._thread_map(solve_point, exp.lambdas)
    _print_table("Multi-process solutions", pd.DataFrame([s for _, s, _ in results]))
    return CommandOutput([f for files, _, _ in results for f in files], {"checks": dict(c for _, _, c in results)})


def cmd_solve_markov(exp: Experiment, out_dir: str) -> CommandOutput:
    if not exp.markov:
        raise InvalidConfig("'solve-markov' needs a Markov channel ([channel] transition_matrix)")
    probing = bool(exp.option("probing", True))

    def solve_point(rate):
        result = _solve(exp, exp.cfg, exp.energy_at(rate), probing)
        tag = _tag(rate)
        files = [_csv(exp, _error_trace_frame(result), out_dir, f"error_trace{tag}.csv")]
        if probing:
            report = extract_thresholds_markov(result, exp.cfg, exp.channel)
            probe = report.probe_threshold_frame()
            files += [
                _csv(exp, probe, out_dir, f"probe_threshold{tag}.csv"),
                _csv(exp, report.sample_threshold_frame(), out_dir, f"sample_threshold{tag}.csv"),
                _csv(exp, report.post_probe_frame(), out_dir, f"post_probe_threshold{tag}.csv"),
            ]
            for c_prev, h in product(probe["C_prev"].unique(), probe["H"].unique()):
                rows = select(probe, tau=1, C_prev=c_prev, H=h)
                path = os.path.join(out_dir, f"probe_threshold{tag}_C{c_prev}_H{h}.dat")
                files.append(write_dat(rows["E"], rows["T_th"], path, f"E T_th (tau=1, C_prev={c_prev}, H={h})"))
        else:
            report = extract_no_probe_thresholds_markov(result, exp.cfg, exp.channel)
            files.append(_csv(exp, report.frame(), out_dir, f"blind_threshold{tag}.csv"))
        files.append(_csv(exp, report.checks_frame(), out_dir, f"checks{tag}.csv"))
        summary = {"lambda": rate, "iterations": result.iterations, "failed_checks": _failed(report.checks)}
        return files, summary, (_label(rate), check_counts(report.checks))

    results = _runner(exp)._thread_map(solve_point, exp.lambdas)
    _print_table("Markov solutions", pd.DataFrame([s for _, s, _ in results]))
    return CommandOutput([f for files, _, _ in results for f in files], {"checks": dict(c for _, _, c in results)})


def cmd_learn(exp: Experiment, out_dir: str) -> CommandOutput:
    if exp.cfg.num_processes != 1:
        raise InvalidConfig("'learn' models a single process")
    horizon = int(exp.option("horizon", DEFAULT_LEARN_HORIZON))
    n_seeds = int(exp.option("seeds", DEFAULT_LEARN_SEEDS))
    base_seed = int(exp.option("seed", 0))
    epsilon = float(exp.option("epsilon", 0.1))
    step_size = StepSizeSchedule(float(exp.option("d0", 0.5)), float(exp.option("omega", 0.6)))
    exploration = ExplorationSchedule(
        epsilon, float(exp.option("epsilon_min", min(0.01, epsilon))), float(exp.option("epsilon_decay", 1.0))
    )
    energy = exp.energy_at(exp.lambdas[0])
    seeds = [base_seed + i for i in range(n_seeds)]

    def learn_seed(seed):
        Q, curve = learn(
            exp.cfg,
            exp.channel,
            energy,
            horizon,
            seed=seed,
            initial_channel=exp.initial_channel,
            step_size=step_size,
            exploration=exploration,
            known_p=bool(exp.option("known_p", True)),
            q0=float(exp.option("q0", 0.0)),
        )
        frame = curve.to_frame()
        files = [
            _csv(exp, frame, out_dir, f"learning_curve_seed{seed}.csv"),
            write_dat(frame["step"], frame["aoi"], os.path.join(out_dir, f"learning_curve_seed{seed}.dat"), "step aoi"),
        ]
        path = os.path.join(out_dir, f"qtables_seed{seed}.npz")
        Q.save(path)
        return files + [path], Q

    learned = _runner(exp)._thread_map(learn_seed, seeds)

    # Reference lines, evaluated on the same seeds
    evaluator = _evaluator(exp, energy, horizon=horizon, seeds=n_seeds)
    solution = _solve(exp, exp.cfg, energy)
    policies: Dict[str, Policy] = {
        "value_iteration": table_policy(solution.policy),
        "random": RandomFeasible(exp.cfg),
    }
    for seed, (_, Q) in zip(seeds, learned):
        policies[f"q_greedy_seed{seed}"] = greedy_q_policy(Q)
    reports = {name: evaluator.evaluate(policy) for name, policy in policies.items()}
    reference = pd.DataFrame([{"policy": name, "aoi": r.mean, "ci95": r.ci_half_width} for name, r in reports.items()])

    files = [f for paths, _ in learned for f in paths]
    files.append(_csv(exp, reference, out_dir, "reference.csv"))
    for name in ("value_iteration", "random"):
        aoi = reports[name].mean
        files.append(write_dat([0, horizon], [aoi, aoi], os.path.join(out_dir, f"reference_{name}.dat"), "step aoi"))
    _print_table("Time-averaged AoI", reference)
    return CommandOutput(files, {"seeds": seeds, "evaluation_seeds": evaluator.seeds})


def cmd_simulate(exp: Experiment, out_dir: str) -> CommandOutput:
    probing = bool(exp.option("probing", True))
    trace_every = int(exp.option("trace_every", 0))

    def simulate_point(rate):
        energy = exp.energy_at(rate)
        result = _solve(exp, exp.cfg, energy, probing)
        evaluator = _evaluator(exp, energy)
        policies: Dict[str, Policy] = {
            "optimal": table_policy(result.policy),
            "always_idle": AlwaysIdle(),
            "probe_always": ProbeAlways(exp.cfg),
            "random": RandomFeasible(exp.cfg),
        }
        rows = []
        for name, policy in policies.items():
            report: EvalReport = evaluator.evaluate(policy)
            rows.append({"lambda": rate, "policy": name, **report.to_dict()})
        if not exp.markov and exp.cfg.num_processes == 1:
            rows[0]["exact"] = exact_average_cost(result.policy, exp.cfg, exp.channel, energy)

        files = []
        if trace_every:
            env = Environment(
                exp.cfg, exp.channel, energy, seed=evaluator.base_seed, initial_channel=exp.initial_channel
            )
            trace = env.run(policies["optimal"], evaluator.horizon, trace_every).trace
            files.append(_csv(exp, pd.DataFrame(trace), out_dir, f"trace{_tag(rate)}.csv"))
        return files, rows, evaluator.seeds

    results = _runner(exp)._thread_map(simulate_point, exp.lambdas)
    frame = pd.DataFrame([row for _, rows, _ in results for row in rows]).drop(columns=["seeds", "per_seed"])
    _print_table("Time-averaged AoI", frame)
    files = [_csv(exp, frame, out_dir, "evaluation.csv")] + [f for files, _, _ in results for f in files]
    return CommandOutput(files, {"seeds": results[0][2]})


def _rate_order(exp: Experiment, frame: pd.DataFrame, thresholds: List[Any]) -> List[Dict[str, Any]]:
    "Threshold orderings across the swept rates, one block of rows per discount factor"
    if exp.cfg.num_processes != 1:
        return []
    rows = []
    for alpha in frame["alpha"].unique():
        picked = [(r, th) for r, a, th in zip(frame["lambda"], frame["alpha"], thresholds) if a == alpha]
        if len(picked) < 2 or any(r is None or np.isnan(r) for r, _ in picked):
            continue
        rates = [r for r, _ in picked]
        t_axis = 1 if exp.markov else None
        checks = rate_order_checks(
            rates, [t for _, (t, _) in picked], [p for _, (_, p) in picked], exp.cfg.age_cap, t_age_axis=t_axis
        )
        rows += [{"alpha": alpha, **row} for row in checks_frame(checks).to_dict("records")]
    return rows


def cmd_sweep(exp: Experiment, out_dir: str) -> CommandOutput:
    discounts = exp.option("discounts") or [exp.cfg.discount]
    points = list(product(exp.lambdas, discounts))

    def sweep_point(point):
        rate, alpha = point
        cfg = exp.cfg.with_overrides(discount=float(alpha))
        energy = exp.energy_at(rate)
        result = _solve(exp, cfg, energy)
        evaluator = _evaluator(exp, energy, cfg)
        report = evaluator.evaluate(table_policy(result.policy))
        row = {"lambda": rate, "alpha": alpha, "iterations": result.iterations, "aoi": report.mean}
        row["ci95"] = report.ci_half_width
        row["outage"] = report.outage
        thresholds = None
        if exp.markov:
            markov = extract_thresholds_markov(result, cfg, exp.channel)
            thresholds = (markov.probe_threshold, markov.p_threshold)
        elif cfg.num_processes == 1:
            row["exact"] = exact_average_cost(result.policy, cfg, exp.channel, energy)
            single = extract_thresholds(result, cfg, exp.channel)
            thresholds = (single.t_threshold, single.p_threshold)
        return row, thresholds, evaluator.seeds

    results = _runner(exp)._thread_map(sweep_point, points)
    frame = pd.DataFrame([row for row, _, _ in results])
    _print_table("Sweep", frame)
    files = [_csv(exp, frame, out_dir, "sweep.csv")]

    order = _rate_order(exp, frame, [th for _, th, _ in results])
    metadata: Dict[str, Any] = {"seeds": results[0][2]}
    if order:
        order_frame = pd.DataFrame(order)
        files.append(_csv(exp, order_frame, out_dir, "rate_checks.csv"))
        metadata["checks"] = {
            f"alpha={a:g}": {r["check"]: r["violations"] for r in order if r["alpha"] == a}
            for a in order_frame["alpha"].unique()
        }
        _print_table("Threshold orderings across lambda", order_frame.drop(columns=["first_violation"]))
    return CommandOutput(files, metadata)


def cmd_compare_probing(exp: Experiment, out_dir: str) -> CommandOutput:
    if exp.cfg.num_processes != 1:
        raise InvalidConfig(f"'compare-probing' models a single process (got N={exp.cfg.num_processes})")
    if exp.energy.harvest is not None and not exp.markov:
        raise InvalidConfig("'compare-probing' models a harvesting chain only over a Markov channel")
    rates = [r for r in exp.lambdas if r is not None] or [exp.sections["energy"].get("rate")]
    if rates[0] is None:
        raise ConfigParseError("'compare-probing' needs Bernoulli arrivals ([energy] rate or run.lambdas)")
    probe_costs = exp.option("probe_costs") or [exp.cfg.probe_cost]
    sample_costs = exp.option("sample_costs") or [exp.cfg.sample_cost]

    points = []
    for rate, ep, es in product(rates, probe_costs, sample_costs):
        if ep + es > exp.cfg.buffer_capacity:
            logger.warning(f"Skipping E_p={ep}, E_s={es}: does not fit in B={exp.cfg.buffer_capacity}")
            continue
        points.append((float(rate), int(ep), int(es)))

    n_seeds = int(exp.option("seeds", DEFAULT_SEEDS))
    base_seed = int(exp.option("seed", 0))
    rows = compare_probing(
        points,
        exp.cfg,
        exp.channel,
        horizon=int(exp.option("horizon", DEFAULT_HORIZON)),
        n_seeds=n_seeds,
        base_seed=base_seed,
        threads=int(exp.option("threads", 1)),
        harvest=exp.energy.harvest,
        initial_channel=exp.initial_channel,
    )
    frame = comparison_frame(rows)
    columns = ["lambda", "E_p", "E_s", "aoi_probe", "aoi_noprobe", "diff", "ci_diff"]
    _print_table("Probing vs. blind sampling", frame[columns])
    files = [_csv(exp, frame, out_dir, "comparison.csv")]
    return CommandOutput(files, {"seeds": [base_seed + i for i in range(n_seeds)]})


COMMANDS: Dict[str, Callable[[Experiment, str], CommandOutput]] = {
    "solve": cmd_solve,
    "solve-multi": cmd_solve_multi,
    "solve-markov": cmd_solve_markov,
    "learn": cmd_learn,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "compare-probing": cmd_compare_probing,
}


def run(inv: Invocation) -> int:
    """Resolves the invocation, runs its command and writes the outputs. Returns the exit code."""
    try:
        if inv.command not in COMMANDS:
            raise ConfigParseError(f"Unknown command '{inv.command}'. Available: {list(COMMANDS)}")
        sections = resolve_sections(inv.preset, inv.conf, inv.run_name, inv.overrides)
        exp = build_experiment(sections, inv.preset)
        logging.debug(f"Applied run configuration: {exp.sections}")

        out_dir = inv.output_path
        start = time.monotonic()
        output = COMMANDS[inv.command](exp, out_dir)
        params = {
            "preset": inv.preset,
            "conf": inv.conf,
            "run": inv.run_name,
            "overrides": {k: v for k, v in inv.overrides.items() if v is not None},
            **exp.sections,
            **output.metadata,
            "files": sorted(os.path.relpath(f, out_dir) for f in output.files),
        }
        write_metadata(out_dir, inv.command, params, __version__)
        logging.info(f"Wrote {len(output.files) + 1} file(s) to {out_dir} in {time.monotonic() - start:.2f} seconds.")
        return EXIT_OK
    except Exception as e:
        logging.error(e)
        if inv.debug:
            raise
        for types, code in EXIT_CODES:
            if isinstance(e, types):
                return code
        return EXIT_UNEXPECTED


def _parse_lambdas(ctx, param, value):
    if value is None:
        return None
    try:
        return parse_number_list(value)
    except ValueError as e:
        raise click.BadParameter(str(e))


_OPTIONS = [
    click.option(
        "--conf",
        default=None,
        help="Path to a configuration.toml file, to provide the model and a list of possible runs.",
        metavar="PATH",
    ),
    click.option("--run", "run_name", default=None, help="Name of the [run.*] configuration to apply.", metavar="NAME"),
    click.option("--preset", default=None, type=click.Choice(list(PRESETS)), help="Start from a named parameter set."),
    click.option(
        "-o",
        "--out",
        default=DEFAULT_OUTPUT_DIR,
        envvar="AOIPROBE_OUTPUT_DIR",
        show_default=True,
        help="Base output directory. Each run writes into <preset or config>-<command> below it.",
        metavar="DIR",
    ),
    click.option("--alpha", type=float, default=None, help="Discount factor, in (0,1)."),
    click.option("--lam", default=None, callback=_parse_lambdas, help="Arrival rate(s), e.g. 0.2,0.4", metavar="LIST"),
    click.option("--epsilon", type=float, default=None, help="Exploration rate of Q-learning."),
    click.option("--seeds", type=int, default=None, help="Number of independent replicates."),
    click.option("--seed", type=int, default=None, help="First seed. Replicates use seed, seed+1, ..."),
    click.option("--horizon", type=int, default=None, help="Slots per replicate (or learning run)."),
    click.option("--t-max", type=int, default=None, help="Age cap T_max."),
    click.option("-j", "--threads", type=int, default=None, help="Worker threads for sweeps and replicates."),
    click.option("--compact", is_flag=True, default=None, help="Store multi-process tables over sorted ages only."),
    click.option("--no-probe", is_flag=True, default=None, help="Solve the blind-sampling model (no probing)."),
    click.option("-v", "--verbose", is_flag=True, help="Print extra info"),
    click.option("-d", "--debug", is_flag=True, help="Print debug info, and raise errors"),
]


def experiment_options(f):
    for option in reversed(_OPTIONS):
        f = option(f)
    return f


def _dispatch(command: str, conf, run_name, preset, out, verbose, debug, **kw):
    if debug:
        logging.basicConfig(level=logging.DEBUG, format=LOG_FORMAT, datefmt=DATE_FORMAT)
    elif verbose:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, datefmt=DATE_FORMAT)
    else:
        logging.basicConfig(level=logging.WARNING, format=LOG_FORMAT, datefmt=DATE_FORMAT)

    overrides = {
        "system.discount": kw["alpha"],
        "system.age_cap": kw["t_max"],
        "run.lambdas": kw["lam"],
        "run.epsilon": kw["epsilon"],
        "run.seeds": kw["seeds"],
        "run.seed": kw["seed"],
        "run.horizon": kw["horizon"],
        "run.threads": kw["threads"],
        "run.compact": kw["compact"] or None,
        "run.probing": False if kw["no_probe"] else None,
    }
    inv = Invocation(command, out, overrides, conf=conf, run_name=run_name, preset=preset, debug=debug)
    sys.exit(run(inv))


class MyHelpFormatter(click.HelpFormatter):
    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.indent_increment = 6

    def write_usage(self, prog: str, args: str = "", prefix: Optional[str] = None) -> None:
        self.write(f"aoiprobe v{__version__} - optimal channel probing and sampling for age of information.\n\n")
        self.write("Usage:\n")
        self.write(f"  * Preset:       {prog} COMMAND --preset NAME [OPTIONS]\n")
        self.write(f"  * Using config: {prog} COMMAND --conf PATH [--run NAME] [OPTIONS]\n")


click.Context.formatter_class = MyHelpFormatter


@click.group(no_args_is_help=True)
@click.version_option(__version__, message="v%(version)s")
def main():
    pass


@main.command("solve", help="Value iteration for one process over an i.i.d. channel; writes T_th(E) and p_th(E,T).")
@experiment_options
def solve_command(**kw):
    _dispatch("solve", **kw)


@main.command("solve-multi", help="Value iteration for N processes over an i.i.d. channel.")
@experiment_options
def solve_multi_command(**kw):
    _dispatch("solve-multi", **kw)


@main.command("solve-markov", help="Value iteration over a Markov channel with Markov harvesting.")
@experiment_options
def solve_markov_command(**kw):
    _dispatch("solve-markov", **kw)


@main.command("learn", help="Two-stage Q-learning; writes learning curves and reference AoI values.")
@experiment_options
def learn_command(**kw):
    _dispatch("learn", **kw)


@main.command("simulate", help="Simulates the optimal policy and the baselines.")
@experiment_options
def simulate_command(**kw):
    _dispatch("simulate", **kw)


@main.command("sweep", help="Solves and simulates across arrival rates and discount factors.")
@experiment_options
def sweep_command(**kw):
    _dispatch("sweep", **kw)


@main.command("compare-probing", help="Compares the probing and blind-sampling optima across (lambda, E_p, E_s).")
@experiment_options
def compare_probing_command(**kw):
    _dispatch("compare-probing", **kw)


if __name__ == "__main__":
    main()
