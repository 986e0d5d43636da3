import unittest

import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from parameterized import parameterized

from aoiprobe.config import InvalidConfig
from aoiprobe.energy import (
    ArrivalDistribution,
    EnergyModel,
    HarvestChain,
    HarvestState,
    buffer_add,
    draw_arrival,
    step_harvest,
)

from .common import N_SAMPLES


class TestArrivals(unittest.TestCase):
    def test_bernoulli(self):
        dist = ArrivalDistribution.bernoulli(0.4)
        assert dist.support == (0, 1)
        assert dist.probs == (0.6, 0.4)
        self.assertAlmostEqual(dist.mean, 0.4)
        assert ArrivalDistribution.bernoulli(1.0) == ArrivalDistribution((1,), (1.0,))

    @parameterized.expand([("zero", 0.0), ("negative", -0.2), ("above_one", 1.5)])
    def test_bernoulli_rejects(self, _name, rate):
        self.assertRaises(InvalidConfig, ArrivalDistribution.bernoulli, rate)

    @parameterized.expand(
        [
            ("length_mismatch", [0, 1], [1.0]),
            ("empty", [], []),
            ("negative_count", [-1, 1], [0.5, 0.5]),
            ("duplicates", [1, 1], [0.5, 0.5]),
            ("not_normalized", [0, 1], [0.5, 0.6]),
            ("zero_mean", [0], [1.0]),
        ]
    )
    def test_from_lists_rejects(self, _name, support, probs):
        self.assertRaises(InvalidConfig, ArrivalDistribution.from_lists, support, probs)

    def test_draw_frequencies(self):
        dist = ArrivalDistribution.from_lists([0, 1, 3], [0.5, 0.3, 0.2])
        self.assertAlmostEqual(dist.mean, 0.9)
        rng = np.random.default_rng(5)
        draws = np.array([dist.draw(rng) for _ in range(N_SAMPLES * 10)])
        assert set(draws.tolist()) <= {0, 1, 3}
        self.assertAlmostEqual(draws.mean(), 0.9, delta=0.05)


class TestHarvesting(unittest.TestCase):
    def test_create(self):
        chain = HarvestChain.create(0.3, 0.1)
        assert np.allclose(chain.matrix, [[0.7, 0.3], [0.1, 0.9]])
        self.assertRaises(InvalidConfig, HarvestChain.create, 1.2, 0.1)
        self.assertRaises(InvalidConfig, HarvestChain.create, 0.2, -0.1)

    def test_no_arrivals_in_non_harvesting_state(self):
        energy = EnergyModel(ArrivalDistribution.bernoulli(1.0), HarvestChain.create(0.5, 0.5))
        rng = np.random.default_rng(6)
        assert all(draw_arrival(energy.arrivals, HarvestState.NON_HARVESTING, rng) == 0 for _ in range(50))
        assert all(draw_arrival(energy.arrivals, HarvestState.HARVESTING, rng) == 1 for _ in range(50))
        assert all(draw_arrival(energy.arrivals, None, rng) == 1 for _ in range(50))
        assert energy.arrivals_given(HarvestState.NON_HARVESTING).mean == 0
        assert energy.arrivals_given(HarvestState.HARVESTING) == energy.arrivals
        assert energy.rate == 1.0

    def test_absorbing_chain(self):
        chain = HarvestChain.create(0.0, 0.0)
        rng = np.random.default_rng(7)
        for h in HarvestState:
            assert all(step_harvest(chain, h, rng) == h for _ in range(50))

    def test_switch_frequency(self):
        chain = HarvestChain.create(0.3, 0.1)
        rng = np.random.default_rng(8)
        n = N_SAMPLES * 10
        switched = sum(chain.step(HarvestState.HARVESTING, rng) == HarvestState.NON_HARVESTING for _ in range(n))
        self.assertAlmostEqual(switched / n, 0.3, delta=0.03)
        back = sum(chain.step(HarvestState.NON_HARVESTING, rng) == HarvestState.HARVESTING for _ in range(n))
        self.assertAlmostEqual(back / n, 0.1, delta=0.03)


class TestBuffer(unittest.TestCase):
    @given(st.integers(0, 50), st.integers(0, 10), st.integers(0, 50))
    def test_buffer_add(self, capacity, arrivals, energy):
        energy = min(energy, capacity)
        after = buffer_add(energy, arrivals, capacity)
        assert 0 <= after <= capacity
        assert after == energy + arrivals or after == capacity
        assert after >= energy
