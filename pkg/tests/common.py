import logging
import os
from itertools import product

import numpy as np

from aoiprobe.channel import IidChannel, MarkovChannel
from aoiprobe.config import SystemConfig
from aoiprobe.energy import ArrivalDistribution, EnergyModel
from aoiprobe.simulator import evaluate_exact_discounted
from aoiprobe.solver_iid_single import SinglePolicy
from aoiprobe.utils import LOGGER_ROOT

DEFAULT_N_SAMPLES = 2000
N_SAMPLES = int(os.environ.get("N_SAMPLES", DEFAULT_N_SAMPLES))
SLOW_TESTS = bool(os.environ.get("SLOW_TESTS", False))

level = logging.ERROR
if os.environ.get("LOG_LEVEL", False):
    level = getattr(logging, os.environ["LOG_LEVEL"].upper())

logging.basicConfig(level=level)
logging.getLogger(LOGGER_ROOT).setLevel(level)


# Smallest instance with a real probing decision: only E=2 can afford E_p + E_s
TINY_CFG = SystemConfig(buffer_capacity=2, probe_cost=1, sample_cost=1, discount=0.9, age_cap=3)
TINY_CHANNEL = IidChannel.from_lists([0.9, 0.3], [0.6, 0.4])
TINY_ENERGY = EnergyModel(ArrivalDistribution.bernoulli(0.5))


def bernoulli_energy(rate: float) -> EnergyModel:
    return EnergyModel(ArrivalDistribution.bernoulli(rate))


def iid_as_markov(channel: IidChannel) -> MarkovChannel:
    "A Markov channel whose rows all equal the occurrence vector, so its states are drawn i.i.d."
    q = list(channel.occurrence_probs)
    return MarkovChannel.from_lists(list(channel.success_probs), [q] * channel.num_states)


def brute_force_optimum(cfg: SystemConfig, channel: IidChannel, energy: EnergyModel) -> np.ndarray:
    """Elementwise minimum of the exact discounted cost over every deterministic table policy.

    Only the decisions at E >= E_p + E_s vary, so the enumeration stays small on tiny instances.
    """
    B, Tm, m = cfg.buffer_capacity, cfg.age_cap, channel.num_states
    levels = range(cfg.min_energy, B + 1)
    probe_cells = [(e, t) for e in levels for t in range(Tm)]
    sample_cells = [(e, t, j) for e in levels for t in range(Tm) for j in range(m)]

    best = np.full((B + 1, Tm), np.inf)
    for probe_bits in product((False, True), repeat=len(probe_cells)):
        probe = np.zeros((B + 1, Tm), dtype=bool)
        for cell, bit in zip(probe_cells, probe_bits):
            probe[cell] = bit
        for sample_bits in product((False, True), repeat=len(sample_cells)):
            sample = np.zeros((B + 1, Tm, m), dtype=bool)
            for cell, bit in zip(sample_cells, sample_bits):
                sample[cell] = bit
            values = evaluate_exact_discounted(SinglePolicy(probe, sample), cfg, channel, energy)
            best = np.minimum(best, values)
    return best
