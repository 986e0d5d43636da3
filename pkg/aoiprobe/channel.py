"""Fading channel models

A channel state is characterised only by its packet success probability p_j. Models keep their
states ordered by descending p_j, so "sample iff p(C) >= p_th" is a prefix of the state list.
The external (1-based) index of each state is kept in ``ChannelState.index`` and used in all I/O.
"""

from bisect import bisect_right
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from runtype import dataclass

from .config import InvalidConfig

PROB_TOLERANCE = 1e-12


@dataclass
class ChannelState:
    index: int
    success_prob: float


def _check_probs(probs: Sequence[float], what: str):
    if any(p < 0 for p in probs):
        raise InvalidConfig(f"{what} has negative entries: {list(probs)}")
    if abs(sum(probs) - 1.0) > PROB_TOLERANCE:
        raise InvalidConfig(f"{what} must sum to 1 (got {sum(probs)!r})")


def _make_states(success_probs: Sequence[float]) -> Tuple[Tuple[ChannelState, ...], list]:
    "Returns the states in descending p order, and the permutation applied"
    if not success_probs:
        raise InvalidConfig("Channel needs at least one state")
    for p in success_probs:
        if not 0.0 <= p <= 1.0:
            raise InvalidConfig(f"Success probability out of [0,1]: {p}")
    order = sorted(range(len(success_probs)), key=lambda j: -success_probs[j])  # stable
    states = tuple(ChannelState(j + 1, float(success_probs[j])) for j in order)
    return states, order


# Derived arrays are cached per (hashable) tuple and handed out read-only


@lru_cache(maxsize=None)
def _frozen_array(values: tuple) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _cdf(probs: Tuple[float, ...]) -> list:
    return list(np.cumsum(probs))


@lru_cache(maxsize=None)
def _matrix_power(matrix: Tuple[Tuple[float, ...], ...], tau: int) -> np.ndarray:
    "Q^tau by repeated squaring. Every intermediate power is memoized."
    if tau == 1:
        return _frozen_array(matrix)
    half = _matrix_power(matrix, tau // 2)
    result = half @ half
    if tau % 2:
        result = result @ _frozen_array(matrix)
    result.setflags(write=False)
    return result


class ChannelModel:
    "Common interface of the channel models"

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def success_probs(self) -> np.ndarray:
        return _frozen_array(tuple(s.success_prob for s in self.states))

    def position_of(self, index: int) -> int:
        "Internal position of the state with the given external index"
        for i, s in enumerate(self.states):
            if s.index == index:
                return i
        raise KeyError(index)

    def draw(self, rng: np.random.Generator, prev: Optional[int] = None) -> int:
        "Draws the internal position of the next channel state"
        raise NotImplementedError()

    def draw_state(self, rng: np.random.Generator, current: Optional[ChannelState] = None) -> ChannelState:
        prev = None if current is None else self.position_of(current.index)
        return self.states[self.draw(rng, prev)]


@dataclass
class IidChannel(ChannelModel):
    """Channel state drawn i.i.d. across slots

    Use :meth:`from_lists` to build one from external (unordered) lists.
    """

    states: Tuple[ChannelState, ...]
    occurrence_probs: Tuple[float, ...]

    @classmethod
    def from_lists(cls, success_probs: Sequence[float], occurrence_probs: Sequence[float]) -> "IidChannel":
        if len(success_probs) != len(occurrence_probs):
            raise InvalidConfig(
                f"Channel has {len(success_probs)} success probabilities "
                f"but {len(occurrence_probs)} occurrence probabilities"
            )
        states, order = _make_states(success_probs)
        q = tuple(float(occurrence_probs[j]) for j in order)
        _check_probs(q, "Channel occurrence vector q")
        return cls(states, q)

    @property
    def weights(self) -> np.ndarray:
        return _frozen_array(self.occurrence_probs)

    def draw(self, rng: np.random.Generator, prev: Optional[int] = None) -> int:
        return min(bisect_right(_cdf(self.occurrence_probs), rng.random()), self.num_states - 1)

    def mean_success_prob(self) -> float:
        return float(self.weights @ self.success_probs)


@dataclass
class MarkovChannel(ChannelModel):
    """Finite-state Markov channel

    ``transition_matrix[i][j]`` is the one-step probability of moving from internal position i to j.
    """

    states: Tuple[ChannelState, ...]
    transition_matrix: Tuple[Tuple[float, ...], ...]

    @classmethod
    def from_lists(
        cls, success_probs: Sequence[float], transition_matrix: Sequence[Sequence[float]]
    ) -> "MarkovChannel":
        m = len(success_probs)
        if len(transition_matrix) != m or any(len(row) != m for row in transition_matrix):
            raise InvalidConfig(f"Transition matrix must be {m}x{m}")
        states, order = _make_states(success_probs)
        matrix = tuple(tuple(float(transition_matrix[i][j]) for j in order) for i in order)
        for i, row in enumerate(matrix):
            _check_probs(row, f"Transition matrix row {states[i].index}")
        return cls(states, matrix)

    @property
    def matrix(self) -> np.ndarray:
        return _frozen_array(self.transition_matrix)

    def draw(self, rng: np.random.Generator, prev: Optional[int] = None) -> int:
        if prev is None:
            raise ValueError("Markov channel needs the current state to draw the next one")
        return min(bisect_right(_cdf(self.transition_matrix[prev]), rng.random()), self.num_states - 1)

    def transition_power(self, tau: int) -> np.ndarray:
        if tau < 1:
            raise ValueError(f"tau must be >= 1 (got {tau})")
        return _matrix_power(self.transition_matrix, tau)

    def tau_step_distribution(self, c_prev: Union[ChannelState, int], tau: int) -> np.ndarray:
        """Distribution of the channel state tau slots after c_prev was observed

        ``c_prev`` is either a ChannelState of this channel, or its internal position (0 = highest p_j).
        The result is indexed by internal position as well: entry j belongs to ``self.states[j]``.
        """
        if isinstance(c_prev, ChannelState):
            c_prev = self.position_of(c_prev.index)
        elif not 0 <= c_prev < self.num_states:
            raise IndexError(f"No channel state at position {c_prev} (the channel has {self.num_states})")
        return self.transition_power(tau)[c_prev]

    def stationary_distribution(self) -> np.ndarray:
        eigvals, eigvecs = np.linalg.eig(self.matrix.T)
        v = np.real(eigvecs[:, np.argmin(np.abs(eigvals - 1.0))])
        return v / v.sum()


def sample_success(state: ChannelState, rng: np.random.Generator) -> int:
    "Returns r=1 with probability p_j"
    return 1 if rng.random() < state.success_prob else 0
