import unittest
from math import comb

import numpy as np
from parameterized import parameterized

from aoiprobe.channel import IidChannel
from aoiprobe.config import SystemConfig
from aoiprobe.solver_iid_multi import (
    AgeGrid,
    IidMultiSolver,
    MultiPolicy,
    assert_value_structure_multi,
    bellman_backup_multi,
    check_value_structure_multi,
    extract_thresholds_multi,
    value_iteration_multi,
)
from aoiprobe.solver_iid_single import bellman_backup, value_iteration
from aoiprobe.value_iteration import SolveResult, StateSpaceTooLarge, StructureViolation

from .common import TINY_CHANNEL, bernoulli_energy

THREE_STATE = IidChannel.from_lists([0.9, 0.5, 0.1], [0.3, 0.4, 0.3])


class TestAgeGrid(unittest.TestCase):
    @parameterized.expand([(4, 1), (4, 2), (3, 3), (5, 2)])
    def test_sizes(self, Tm, N):
        assert AgeGrid(Tm, N).size == Tm**N
        assert AgeGrid(Tm, N, compact=True).size == comb(Tm + N - 1, N)

    def test_single_process_is_plain_age_index(self):
        grid = AgeGrid(5, 1)
        assert grid.ages[:, 0].tolist() == [1, 2, 3, 4, 5]
        assert grid.succ_all.tolist() == [1, 2, 3, 4, 4]
        assert grid.reset[:, 0].tolist() == [0] * 5
        assert grid.locate([3]) == (2, [0])

    def test_successors(self):
        grid = AgeGrid(4, 2)
        k, _ = grid.locate([2, 4])
        assert grid.ages[grid.succ_all[k]].tolist() == [3, 4]
        assert grid.ages[grid.reset[k, 0]].tolist() == [1, 4]
        assert grid.ages[grid.reset[k, 1]].tolist() == [3, 1]

    def test_compact_locate(self):
        grid = AgeGrid(6, 3, compact=True)
        k, order = grid.locate([2, 5, 2])
        assert grid.ages[k].tolist() == [5, 2, 2]
        assert order == [1, 0, 2]  # equal ages keep their relative order
        self.assertRaises(ValueError, grid.locate, [1, 2])

        k, _ = grid.locate([3, 1, 6])
        assert grid.ages[grid.succ_all[k]].tolist() == [6, 4, 2]
        # Columns follow the stored order (6, 3, 1)
        assert grid.ages[grid.reset[k, 0]].tolist() == [4, 2, 1]
        assert grid.ages[grid.reset[k, 2]].tolist() == [6, 4, 1]

    def test_full_index_map(self):
        full, compact = AgeGrid(4, 2), AgeGrid(4, 2, compact=True)
        index = compact.full_index_map()
        assert len(index) == full.size
        for i, ages in enumerate(full.ages):
            assert sorted(compact.ages[index[i]].tolist()) == sorted(ages.tolist())
        assert (full.full_index_map() == np.arange(full.size)).all()


class TestMultiSolver(unittest.TestCase):
    def test_single_process_matches_single_solver(self):
        cfg = SystemConfig(4, 1, 1, discount=0.9, age_cap=6)
        energy = bernoulli_energy(0.5)
        multi = value_iteration_multi(cfg, THREE_STATE, energy, tol=1e-10)
        single = value_iteration(cfg, THREE_STATE, energy, tol=1e-10)
        assert np.abs(multi.tables.J - single.tables.J).max() < 1e-8

    def test_single_process_backup(self):
        cfg = SystemConfig(4, 1, 1, discount=0.9, age_cap=6)
        energy = bernoulli_energy(0.5)
        J = np.arange(5 * 6, dtype=float).reshape(5, 6) / 7
        J_multi, _, _ = bellman_backup_multi(J, cfg, THREE_STATE, energy)
        J_single, _, _ = bellman_backup(J, cfg, THREE_STATE, energy)
        assert np.allclose(J_multi, J_single)

    def test_too_large(self):
        cfg = SystemConfig(4, 1, 1, num_processes=3, discount=0.9, age_cap=30)
        solver = IidMultiSolver(cfg, THREE_STATE, bernoulli_energy(0.5), max_cells=10**4)
        self.assertRaises(StateSpaceTooLarge, solver.value_iteration)


class TestTwoProcesses(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cfg = SystemConfig(4, 1, 1, num_processes=2, discount=0.9, age_cap=6)
        cls.energy = bernoulli_energy(0.5)
        cls.full = value_iteration_multi(cls.cfg, THREE_STATE, cls.energy, tol=1e-10)
        cls.compact = value_iteration_multi(cls.cfg, THREE_STATE, cls.energy, tol=1e-10, compact=True)

    def test_compact_grid_is_exact(self):
        index = self.compact.policy.grid.full_index_map()
        assert np.abs(self.compact.tables.J[:, index] - self.full.tables.J).max() < 1e-8

    def test_value_structure(self):
        for result in (self.full, self.compact):
            checks = check_value_structure_multi(result.tables, self.cfg, result.policy.grid)
            assert all(check.ok for check in checks), [c.summary() for c in checks]
            assert_value_structure_multi(result.tables, self.cfg, result.policy.grid)

    def test_samples_the_oldest_process(self):
        policy = self.full.policy
        for e in range(self.cfg.min_energy, self.cfg.energy_levels):
            for ages in ([2, 5], [5, 2], [4, 4]):
                for c in range(THREE_STATE.num_states):
                    k = policy.choose_process(e, ages, c)
                    if k is not None:
                        assert ages[k] == max(ages)
                        if ages[0] == ages[1]:
                            assert k == 0
        assert policy.choose_process(0, [6, 6], 0) is None
        assert not policy.decide_probe(1, [6, 6])

    def test_compact_policy_maps_back_to_processes(self):
        policy = self.compact.policy
        for c in range(THREE_STATE.num_states):
            for ages in ([1, 6], [6, 1]):
                k = policy.choose_process(self.cfg.buffer_capacity, ages, c)
                if k is not None:
                    assert ages[k] == 6

    def test_extract(self):
        for result in (self.full, self.compact):
            report = extract_thresholds_multi(result, self.cfg, THREE_STATE)
            assert np.isnan(report.p_threshold[: self.cfg.min_energy]).all()
            assert report.t_threshold.shape == (self.cfg.energy_levels, self.cfg.age_cap)
            frame = report.state_frame()
            assert list(frame.columns) == ["E", "T1", "T2", "action", "J", "V", "p_th"]
            assert len(frame) == self.cfg.energy_levels * result.policy.grid.size
            probe = report.probe_threshold_frame()
            assert list(probe.columns) == ["E", "T2", "T_th"]
            assert len(probe) == self.cfg.energy_levels * self.cfg.age_cap

    def test_young_process_sampled(self):
        policy = self.full.policy
        process = policy.process.copy()
        grid = policy.grid
        k, _ = grid.locate([2, 5])
        sample = policy.sample.copy()
        sample[4, k, 0] = True
        process[4, k, 0] = 0  # the process of age 2
        broken = SolveResult(self.full.tables, MultiPolicy(policy.probe, sample, process, grid), [1.0])
        self.assertRaises(StructureViolation, extract_thresholds_multi, broken, self.cfg, THREE_STATE)

    def test_order_checks(self):
        report = extract_thresholds_multi(self.full, self.cfg, THREE_STATE)
        assert [c.name for c in report.checks] == [
            "probing set upward-closed in the largest age",
            "T_th non-increasing in E",
            "p_th non-increasing in E",
            "p_th non-increasing in the largest age",
        ]
        assert report.checks_frame()["violations"].tolist() == [len(c.violations) for c in report.checks]

    def test_reversed_energy_order_is_reported(self):
        policy = self.full.policy
        probe = np.zeros_like(policy.probe)
        probe[2] = True  # probes only when the buffer is nearly empty
        odd = SolveResult(self.full.tables, MultiPolicy(probe, policy.sample, policy.process, policy.grid), [1.0])
        report = extract_thresholds_multi(odd, self.cfg, THREE_STATE)
        by_name = {c.name: c for c in report.checks}
        assert by_name["probing set upward-closed in the largest age"].ok
        violations = by_name["T_th non-increasing in E"].violations
        assert violations and {v[0] for v in violations} == {2}


class TestTinyMulti(unittest.TestCase):
    def test_runs_on_two_states(self):
        cfg = SystemConfig(2, 1, 1, num_processes=2, discount=0.9, age_cap=3)
        result = value_iteration_multi(cfg, TINY_CHANNEL, bernoulli_energy(0.5))
        assert result.tables.J.shape == (3, 9)
        assert np.isfinite(result.tables.J).all()
