"""System parameters and the TOML configuration layer

Configuration file schema::

    [system]
    buffer_capacity = 12        # B, energy packets
    probe_cost = 1              # E_p
    sample_cost = 1             # E_s
    num_processes = 1           # N
    discount = 0.95             # alpha, in (0, 1)
    age_cap = 50                # T_max

    [channel]
    success_probs = [0.9, 0.7, 0.5, 0.3, 0.1]
    occurrence_probs = [0.2, 0.2, 0.2, 0.2, 0.2]    # i.i.d. channel, or:
    # transition_matrix = [[0.9, 0.1], [0.1, 0.9]]  # Markov channel
    # initial_state = 1

    [energy]
    rate = 0.4                  # Bernoulli(rate) arrivals, or:
    # support = [0, 1, 2]
    # probs = [0.5, 0.3, 0.2]

    [energy.harvest]            # optional two-state harvesting chain
    h12 = 0.3
    h21 = 0.3

    [run.default]               # applied first
    horizon = 100000
    seeds = 10

    [run.long]                  # selected with --run long
    horizon = 1000000

String values (also inside arrays) may reference environment variables as ``${NAME}``; an unset variable is an error.
"""

import os
import re
from dataclasses import asdict
from typing import Any, Dict, Optional

import toml
from runtype import dataclass


class ConfigParseError(Exception):
    pass


class InvalidConfig(ValueError):
    pass


@dataclass
class SystemConfig:
    """Scalar system parameters shared by every solver and the simulator

    Parameters:
        buffer_capacity (int): Energy buffer size B, in energy packets.
        probe_cost (int): Energy E_p spent on one channel probe.
        sample_cost (int): Energy E_s spent on sampling and transmitting one packet.
        num_processes (int): Number N of processes the source can sample.
        discount (float): Discount factor alpha, strictly inside (0, 1).
        age_cap (int): Age truncation T_max. Ages saturate at this value.
    """

    buffer_capacity: int
    probe_cost: int
    sample_cost: int
    num_processes: int = 1
    discount: float = 0.95
    age_cap: int = 50

    @property
    def min_energy(self) -> int:
        "Energy needed to probe and then sample"
        return self.probe_cost + self.sample_cost

    @property
    def energy_levels(self) -> int:
        return self.buffer_capacity + 1

    def next_age(self, age: int) -> int:
        return min(age + 1, self.age_cap)

    def with_overrides(self, **kw) -> "SystemConfig":
        return validate(self.replace(**{k: v for k, v in kw.items() if v is not None}))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SystemConfig":
        d = dict(d)
        try:
            cfg = cls(
                buffer_capacity=int(d.pop("buffer_capacity")),
                probe_cost=int(d.pop("probe_cost")),
                sample_cost=int(d.pop("sample_cost")),
                num_processes=int(d.pop("num_processes", 1)),
                discount=float(d.pop("discount", 0.95)),
                age_cap=int(d.pop("age_cap", 50)),
            )
        except KeyError as e:
            raise ConfigParseError(f"Missing system parameter: {e}")
        if d:
            raise ConfigParseError(f"Unknown system parameter(s): {d}")
        return validate(cfg)

    def to_toml(self) -> str:
        return toml.dumps({"system": self.to_dict()})

    @classmethod
    def from_toml(cls, s: str) -> "SystemConfig":
        return cls.from_dict(toml.loads(s)["system"])


def validate(cfg: SystemConfig) -> SystemConfig:
    """Returns the config unchanged if all invariants hold. Otherwise raises InvalidConfig."""
    if cfg.buffer_capacity < 0:
        raise InvalidConfig(f"B must be nonnegative (got B={cfg.buffer_capacity})")
    if cfg.probe_cost < 0:
        raise InvalidConfig(f"E_p must be nonnegative (got E_p={cfg.probe_cost})")
    if cfg.sample_cost < 1:
        raise InvalidConfig(f"E_s must be positive (got E_s={cfg.sample_cost})")
    if cfg.num_processes < 1:
        raise InvalidConfig(f"N must be positive (got N={cfg.num_processes})")
    if not 0.0 < cfg.discount < 1.0:
        raise InvalidConfig(f"alpha out of range (0,1) (got alpha={cfg.discount})")
    if cfg.age_cap < 2:
        raise InvalidConfig(f"T_max must be >= 2 (got T_max={cfg.age_cap})")
    if cfg.min_energy > cfg.buffer_capacity:
        raise InvalidConfig(
            f"E_p+E_s>B: probing and sampling never fit in the buffer "
            f"(E_p={cfg.probe_cost}, E_s={cfg.sample_cost}, B={cfg.buffer_capacity})"
        )
    return cfg


_SECTIONS = ("system", "channel", "energy", "run")


def _apply_config(config: Dict[str, Any], run_name: Optional[str], kw: Dict[str, Any]) -> Dict[str, Any]:
    config = _expand_env(config, "")

    unknown = set(config) - set(_SECTIONS)
    if unknown:
        raise ConfigParseError(f"Unknown section(s): {sorted(unknown)}")

    runs = config.pop("run", {})

    # Init run_args
    run_args = dict(runs.get("default") or {})
    if run_name:
        if run_name not in runs:
            raise ConfigParseError(f"Cannot find run '{run_name}' in configuration. Available: {list(runs)}")
        run_args.update(runs[run_name])
    else:
        run_name = "default"

    for section in ("system", "channel", "energy"):
        if section in run_args:
            raise ConfigParseError(f"Running 'run.{run_name}': '{section}' must be a top-level section")

    # Update keywords
    new_kw = dict(kw)  # Set defaults
    new_kw.update(run_args)  # Apply config
    new_kw.update({k: v for k, v in kw.items() if v is not None})  # Apply explicit values
    for section in ("system", "channel", "energy"):
        new_kw[section] = config.get(section, {})

    new_kw["__conf__"] = run_args
    new_kw["__run__"] = run_name
    return new_kw


# ${NAME}, with NAME a shell-style variable name. "$${" escapes a literal "${".
_ENV_REF = re.compile(r"\$(\$?)\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _expand_env(value: Any, where: str) -> Any:
    """Returns value with every ${NAME} in its strings replaced by the environment variable NAME.

    Recurses into tables and arrays, so list-valued parameters (e.g. success_probs) may reference variables too.
    An unset variable is a ConfigParseError naming the parameter.
    """
    if isinstance(value, dict):
        return {k: _expand_env(v, f"{where}.{k}" if where else k) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand_env(v, f"{where}[{i}]") for i, v in enumerate(value)]
    if not isinstance(value, str):
        return value

    def substitute(m: re.Match) -> str:
        escaped, name = m.groups()
        if escaped:
            return "${" + name + "}"
        if name not in os.environ:
            raise ConfigParseError(f"'{where}' references ${{{name}}}, which is not set in the environment")
        return os.environ[name]

    return _ENV_REF.sub(substitute, value)


def apply_config_from_file(path: str, run_name: Optional[str], kw: Dict[str, Any]) -> Dict[str, Any]:
    with open(path) as f:
        return _apply_config(toml.load(f), run_name, kw)


def apply_config_from_string(toml_config: str, run_name: Optional[str], kw: Dict[str, Any]) -> Dict[str, Any]:
    return _apply_config(toml.loads(toml_config), run_name, kw)
