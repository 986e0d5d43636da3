"""Named parameter sets of the numerical experiments, and the resolution of config sections into models

A preset has the same shape as a configuration file: ``system``, ``channel`` and ``energy`` sections, plus
the run options of the experiment. Config files and command-line overrides are layered on top of it.
"""

from copy import deepcopy
from typing import Any, Dict, List, Optional, Tuple

from runtype import dataclass

from .channel import ChannelModel, IidChannel, MarkovChannel
from .config import ConfigParseError, InvalidConfig, SystemConfig, apply_config_from_file
from .energy import ArrivalDistribution, EnergyModel, HarvestChain
from .utils import getLogger

logger = getLogger(__name__)

RUN_KEYS = {
    "horizon",
    "seeds",
    "seed",
    "tol",
    "max_iters",
    "epsilon",
    "epsilon_min",
    "epsilon_decay",
    "d0",
    "omega",
    "q0",
    "known_p",
    "lambdas",
    "discounts",
    "probe_costs",
    "sample_costs",
    "threads",
    "trace_every",
    "max_cells",
    "compact",
    "probing",
}

_IID_CHANNEL = {"success_probs": [0.9, 0.7, 0.5, 0.3, 0.1], "occurrence_probs": [0.2] * 5}
_MARKOV_CHANNEL = {"success_probs": [0.9, 0.4], "transition_matrix": [[0.9, 0.1], [0.1, 0.9]], "initial_state": 1}
_MARKOV_ENERGY = {"rate": 0.4, "harvest": {"h12": 0.3, "h21": 0.3}}
_LAMBDAS = [0.2, 0.4, 0.6, 0.8]

PRESETS: Dict[str, Dict[str, Any]] = {
    # Single process, i.i.d. channel: T_th(E) and p_th(E,T) across lambda
    "fig2": {
        "system": {"buffer_capacity": 12, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 30},
        "channel": _IID_CHANNEL,
        "energy": {"rate": 0.4},
        "run": {"lambdas": _LAMBDAS},
    },
    # Three processes over the same channel
    "fig2-multi": {
        "system": {
            "buffer_capacity": 12,
            "probe_cost": 1,
            "sample_cost": 1,
            "num_processes": 3,
            "discount": 0.99,
            "age_cap": 12,
        },
        "channel": _IID_CHANNEL,
        "energy": {"rate": 0.4},
        "run": {"lambdas": _LAMBDAS, "compact": True},
    },
    # Markov channel and harvesting: probe thresholds
    "fig3": {
        "system": {"buffer_capacity": 9, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 30},
        "channel": _MARKOV_CHANNEL,
        "energy": _MARKOV_ENERGY,
        "run": {},
    },
    # Same model as fig3: sampling thresholds in p and in T
    "fig4": {
        "system": {"buffer_capacity": 9, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 30},
        "channel": _MARKOV_CHANNEL,
        "energy": _MARKOV_ENERGY,
        "run": {},
    },
    # Probing against blind sampling over (lambda, E_p, E_s)
    "fig5": {
        "system": {"buffer_capacity": 12, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 30},
        "channel": _IID_CHANNEL,
        "energy": {"rate": 0.4},
        "run": {
            "lambdas": _LAMBDAS,
            "probe_costs": [1, 2],
            "sample_costs": [1, 3, 5],
            "horizon": 10**6,
            "seeds": 10,
        },
    },
    # The same comparison over the Markov channel and harvesting model of fig3
    "fig5-markov": {
        "system": {"buffer_capacity": 9, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 30},
        "channel": _MARKOV_CHANNEL,
        "energy": _MARKOV_ENERGY,
        "run": {
            "lambdas": _LAMBDAS,
            "probe_costs": [1, 2],
            "sample_costs": [1, 3, 5],
            "horizon": 10**6,
            "seeds": 10,
        },
    },
    # Q-learning on a reduced grid
    "fig6": {
        "system": {"buffer_capacity": 5, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 7},
        "channel": _IID_CHANNEL,
        "energy": {"rate": 0.4},
        "run": {"horizon": 5 * 10**5, "seeds": 2},
    },
    "fig6-markov": {
        "system": {"buffer_capacity": 5, "probe_cost": 1, "sample_cost": 1, "discount": 0.99, "age_cap": 7},
        "channel": _MARKOV_CHANNEL,
        "energy": _MARKOV_ENERGY,
        "run": {"horizon": 5 * 10**5, "seeds": 2},
    },
}


def preset_sections(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ConfigParseError(f"Unknown preset '{name}'. Available: {list(PRESETS)}")
    return deepcopy(PRESETS[name])


def _pop_known(d: Dict[str, Any], section: str, allowed: set) -> Dict[str, Any]:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigParseError(f"Unknown key(s) in [{section}]: {sorted(unknown)}")
    return d


def channel_from_dict(d: Dict[str, Any]) -> Tuple[ChannelModel, int]:
    """Builds the channel of a [channel] section. Returns (channel, internal position of the initial state)."""
    _pop_known(d, "channel", {"success_probs", "occurrence_probs", "transition_matrix", "initial_state"})
    if "success_probs" not in d:
        raise ConfigParseError("[channel] needs success_probs")
    has_q, has_matrix = "occurrence_probs" in d, "transition_matrix" in d
    if has_q == has_matrix:
        raise ConfigParseError("[channel] needs exactly one of occurrence_probs (i.i.d.) or transition_matrix (Markov)")
    if has_q:
        if "initial_state" in d:
            raise ConfigParseError("initial_state only applies to a Markov channel")
        return IidChannel.from_lists(d["success_probs"], d["occurrence_probs"]), 0
    channel = MarkovChannel.from_lists(d["success_probs"], d["transition_matrix"])
    initial = int(d.get("initial_state", 1))
    try:
        return channel, channel.position_of(initial)
    except KeyError:
        raise InvalidConfig(f"initial_state {initial} is not a channel state (1..{channel.num_states})")


def energy_from_dict(d: Dict[str, Any], rate: Optional[float] = None) -> EnergyModel:
    """Builds the energy model of an [energy] section. ``rate`` replaces a Bernoulli rate."""
    _pop_known(d, "energy", {"rate", "support", "probs", "harvest"})
    if "support" in d or "probs" in d:
        if "rate" in d:
            raise ConfigParseError("[energy] takes either rate or support+probs, not both")
        if rate is not None:
            raise ConfigParseError("A lambda sweep needs Bernoulli arrivals ([energy] rate)")
        arrivals = ArrivalDistribution.from_lists(d.get("support", []), d.get("probs", []))
    else:
        if rate is None and "rate" not in d:
            raise ConfigParseError("[energy] needs rate, or support and probs")
        arrivals = ArrivalDistribution.bernoulli(float(d["rate"] if rate is None else rate))

    harvest = None
    if "harvest" in d:
        h = _pop_known(dict(d["harvest"]), "energy.harvest", {"h12", "h21"})
        harvest = HarvestChain.create(float(h.get("h12", 0.0)), float(h.get("h21", 0.0)))
    return EnergyModel(arrivals, harvest)


@dataclass
class Experiment:
    """Fully resolved parameters of one command

    Parameters:
        cfg: System parameters.
        channel: Channel model.
        energy: Energy model at the configured rate.
        initial_channel: Internal position of the initial channel state.
        options: Run options (see RUN_KEYS).
        sections: The resolved configuration sections, as echoed into metadata.
        preset: Name of the preset the experiment started from, if any.
    """

    cfg: SystemConfig
    channel: ChannelModel
    energy: EnergyModel
    initial_channel: int
    options: Dict[str, Any]
    sections: Dict[str, Any]
    preset: Optional[str] = None

    @property
    def markov(self) -> bool:
        return isinstance(self.channel, MarkovChannel)

    def option(self, name: str, default=None):
        value = self.options.get(name)
        return default if value is None else value

    def energy_at(self, rate: Optional[float]) -> EnergyModel:
        "The energy model with Bernoulli arrivals at ``rate`` (None keeps the configured arrivals)"
        if rate is None:
            return self.energy
        return energy_from_dict(deepcopy(self.sections["energy"]), rate)

    @property
    def lambdas(self) -> List[Optional[float]]:
        "Arrival rates to sweep, or [None] for the configured arrivals only"
        return list(self.options.get("lambdas") or [None])


def build_experiment(sections: Dict[str, Any], preset: Optional[str] = None) -> Experiment:
    unknown = set(sections) - {"system", "channel", "energy", "run"}
    if unknown:
        raise ConfigParseError(f"Unknown section(s): {sorted(unknown)}")
    options = _pop_known(dict(sections.get("run", {})), "run", RUN_KEYS)
    if not sections.get("system"):
        raise ConfigParseError("Missing [system] section (use --conf or --preset)")
    if not sections.get("channel"):
        raise ConfigParseError("Missing [channel] section (use --conf or --preset)")
    cfg = SystemConfig.from_dict(sections["system"])
    channel, initial = channel_from_dict(dict(sections["channel"]))
    energy = energy_from_dict(dict(sections.get("energy", {})))
    for rate in options.get("lambdas") or []:
        energy_from_dict(dict(sections["energy"]), rate)
    return Experiment(cfg, channel, energy, initial, options, deepcopy(sections), preset)


def resolve_sections(
    preset: Optional[str] = None,
    conf: Optional[str] = None,
    run_name: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Layers the preset, then the config file (with its [run.default] and [run.<name>]), then the overrides.

    Overrides address keys as "section.key" (e.g. "system.discount", "run.seeds"). None values are skipped.
    """
    sections = preset_sections(preset) if preset else {}
    for name in ("system", "channel", "energy", "run"):
        sections.setdefault(name, {})

    if conf:
        kw = apply_config_from_file(conf, run_name, {})
        for name in ("system", "channel", "energy"):
            if kw[name] and name == "channel":
                sections[name] = dict(kw[name])  # A channel is replaced whole
            else:
                sections[name].update(kw[name])
        sections["run"].update(kw["__conf__"])
    elif run_name:
        raise ConfigParseError("--run needs --conf")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, name = key.split(".", 1)
        sections[section][name] = value
    return sections


def load_experiment(
    path: Optional[str] = None, run: Optional[str] = None, preset: Optional[str] = None, **overrides
) -> Experiment:
    """Loads an experiment from a preset and/or a configuration file

    Keyword overrides use "section__key" names, e.g. ``system__discount=0.9`` or ``run__seeds=2``.
    """
    dotted = {k.replace("__", ".", 1): v for k, v in overrides.items()}
    return build_experiment(resolve_sections(preset, path, run, dotted), preset)
