"""Energy-packet arrival models"""

from bisect import bisect_right
from enum import IntEnum
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from runtype import dataclass

from .config import InvalidConfig

PROB_TOLERANCE = 1e-12


class HarvestState(IntEnum):
    HARVESTING = 0  # H_1
    NON_HARVESTING = 1  # H_2


@lru_cache(maxsize=None)
def _cdf(probs: Tuple[float, ...]) -> list:
    return list(np.cumsum(probs))


@dataclass
class ArrivalDistribution:
    """Finite-support distribution of the number A of energy packets arriving in a slot

    Parameters:
        support (Tuple[int, ...]): Possible arrival counts.
        probs (Tuple[float, ...]): Their probabilities.
    """

    support: Tuple[int, ...]
    probs: Tuple[float, ...]

    @classmethod
    def from_lists(cls, support: Sequence[int], probs: Sequence[float]) -> "ArrivalDistribution":
        if len(support) != len(probs) or not support:
            raise InvalidConfig("Arrival support and probs must be non-empty and of equal length")
        if any(a < 0 for a in support):
            raise InvalidConfig(f"Arrival counts must be nonnegative: {list(support)}")
        if len(set(support)) != len(support):
            raise InvalidConfig(f"Arrival support has duplicates: {list(support)}")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > PROB_TOLERANCE:
            raise InvalidConfig(f"Arrival probs must be a probability vector: {list(probs)}")
        dist = cls(tuple(int(a) for a in support), tuple(float(p) for p in probs))
        if dist.mean <= 0:
            raise InvalidConfig("Arrival mean must be positive")
        return dist

    @classmethod
    def bernoulli(cls, rate: float) -> "ArrivalDistribution":
        if not 0.0 < rate <= 1.0:
            raise InvalidConfig(f"Bernoulli rate must be in (0,1] (got {rate})")
        if rate == 1.0:
            return cls((1,), (1.0,))
        return cls((0, 1), (1.0 - rate, float(rate)))

    @property
    def mean(self) -> float:
        return float(sum(a * p for a, p in zip(self.support, self.probs)))

    def draw(self, rng: np.random.Generator) -> int:
        i = min(bisect_right(_cdf(self.probs), rng.random()), len(self.support) - 1)
        return self.support[i]


NO_ARRIVALS = ArrivalDistribution((0,), (1.0,))


@dataclass
class HarvestChain:
    """Two-state harvesting chain. H_1 harvests per the arrival distribution; H_2 harvests nothing.

    Parameters:
        h12 (float): Probability of moving from H_1 to H_2.
        h21 (float): Probability of moving from H_2 to H_1.
    """

    h12: float
    h21: float

    @classmethod
    def create(cls, h12: float, h21: float) -> "HarvestChain":
        for name, h in (("h12", h12), ("h21", h21)):
            if not 0.0 <= h <= 1.0:
                raise InvalidConfig(f"{name} must be in [0,1] (got {h})")
        return cls(float(h12), float(h21))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[1.0 - self.h12, self.h12], [self.h21, 1.0 - self.h21]])

    def step(self, h: HarvestState, rng: np.random.Generator) -> HarvestState:
        if h == HarvestState.HARVESTING:
            switch = rng.random() < self.h12
        else:
            switch = rng.random() < self.h21
        return HarvestState(1 - h) if switch else HarvestState(h)


@dataclass
class EnergyModel:
    """Arrival distribution, optionally gated by a harvesting chain"""

    arrivals: ArrivalDistribution
    harvest: Optional[HarvestChain] = None

    @property
    def rate(self) -> float:
        return self.arrivals.mean

    def arrivals_given(self, h: Optional[HarvestState]) -> ArrivalDistribution:
        if h == HarvestState.NON_HARVESTING:
            return NO_ARRIVALS
        return self.arrivals


def draw_arrival(dist: ArrivalDistribution, h_state: Optional[HarvestState], rng: np.random.Generator) -> int:
    "A ~ dist, unless the source is in the non-harvesting state"
    if h_state == HarvestState.NON_HARVESTING:
        return 0
    return dist.draw(rng)


def step_harvest(chain: HarvestChain, h: HarvestState, rng: np.random.Generator) -> HarvestState:
    return chain.step(h, rng)


def buffer_add(energy: int, arrivals: int, capacity: int) -> int:
    return min(energy + arrivals, capacity)
