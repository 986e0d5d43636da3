import os
import tempfile
import unittest

import numpy as np
from parameterized import parameterized
from scipy import stats

from aoiprobe import solve
from aoiprobe.channel import MarkovChannel
from aoiprobe.config import InvalidConfig, SystemConfig
from aoiprobe.energy import ArrivalDistribution, EnergyModel, HarvestChain
from aoiprobe.presets import load_experiment
from aoiprobe.qlearning import (
    EpsilonGreedyQ,
    ExplorationSchedule,
    MismatchedRecord,
    QTables,
    StepSizeSchedule,
    Transition,
    greedy_q_policy,
    learn,
    q_update_iid,
    q_update_markov,
    run_learning,
    sample_td_errors,
    select_action,
    transitions_from,
)
from aoiprobe.simulator import (
    AlwaysIdle,
    EnvState,
    Environment,
    IidTablePolicy,
    ProbeAlways,
    RandomFeasible,
    evaluate_policy,
    table_policy,
)
from aoiprobe.solver_iid_single import value_iteration

from .common import N_SAMPLES, SLOW_TESTS, TINY_CFG, TINY_CHANNEL, TINY_ENERGY

CFG = SystemConfig(4, 1, 1, discount=0.9, age_cap=6)
STICKY = MarkovChannel.from_lists([0.9, 0.4], [[0.9, 0.1], [0.1, 0.9]])
STEP = StepSizeSchedule()  # d(0) = 0.5


class TestSchedules(unittest.TestCase):
    def test_step_size(self):
        assert STEP(0) == 0.5
        self.assertAlmostEqual(STEP(1), 0.5 / 2**0.6)
        assert all(STEP(n) >= STEP(n + 1) for n in range(100))
        assert all(STEP.satisfies_assumptions().values())
        assert all(StepSizeSchedule(1.0, 1.0).satisfies_assumptions().values())

    @parameterized.expand([("zero_d0", 0.0, 0.6), ("small_omega", 0.5, 0.5), ("large_omega", 0.5, 1.2)])
    def test_step_size_rejects(self, _name, d0, omega):
        self.assertRaises(InvalidConfig, StepSizeSchedule, d0, omega)

    def test_exploration(self):
        assert ExplorationSchedule(0.2).value(10**6) == 0.2
        decaying = ExplorationSchedule(0.1, 0.01, 0.5)
        assert decaying.value(0) == 0.1
        assert decaying.value(10) == 0.01
        self.assertRaises(InvalidConfig, ExplorationSchedule, 0.0)
        self.assertRaises(InvalidConfig, ExplorationSchedule, 0.1, 0.2)
        self.assertRaises(InvalidConfig, ExplorationSchedule, 0.1, 0.01, 0.0)


class TestQTables(unittest.TestCase):
    def test_create(self):
        Q = QTables.create(CFG, 2)
        assert Q.q_state.shape == (5, 6, 2)
        assert Q.q_inter.shape == (5, 6, 2, 2)
        assert np.isinf(Q.q_state[:2, :, 1]).all() and np.isinf(Q.q_inter[:2]).all()
        assert (Q.q_state[2:] == 0).all() and (Q.q_state[:, :, 0] == 0).all()

        Q = QTables.create(CFG, 2, markov=True, q0=50.0)
        assert Q.q_state.shape == (5, 6, 6, 2, 2, 2)
        assert Q.q_inter.shape == (5, 6, 2, 2, 2)
        assert (Q.q_state[..., 0] == 50.0).all()

        self.assertRaises(InvalidConfig, QTables.create, CFG.replace(num_processes=2), 2)

    def test_save_and_load(self):
        Q = QTables.create(CFG, 2, markov=True, q0=3.0)
        Q.q_state[4, 0, 0, 0, 0, 1] = -1.0
        Q.n_state[4, 0, 0, 0, 0, 1] = 7
        Q.steps = 12
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "q.npz")
            Q.save(path)
            loaded = QTables.load(path)
        assert loaded.markov and loaded.steps == 12
        assert np.array_equal(loaded.q_state, Q.q_state)
        assert np.array_equal(loaded.n_state, Q.n_state)
        assert np.array_equal(loaded.q_inter, Q.q_inter)

    def test_from_solution(self):
        result = value_iteration(TINY_CFG, TINY_CHANNEL, TINY_ENERGY)
        policy = QTables.from_solution(result).greedy_policy()
        assert (policy.probe == result.policy.probe).all()
        assert (policy.sample == result.policy.sample).all()
        assert isinstance(greedy_q_policy(QTables.from_solution(result)), IidTablePolicy)


class TestIidUpdates(unittest.TestCase):
    def test_idle_from_zero_table(self):
        Q = QTables.create(CFG, 2)
        d = q_update_iid(Q, Transition("state", energy=0, age=3, action=0, arrival=1), CFG, STEP)
        assert d == 0.5
        assert Q.q_state[0, 2, 0] == 1.5  # 0.5 * (3 + 0.9 * 0)
        assert Q.n_state[0, 2, 0] == 1

        d = q_update_iid(Q, Transition("state", energy=0, age=3, action=0, arrival=1), CFG, STEP)
        self.assertAlmostEqual(d, STEP(1))
        self.assertAlmostEqual(Q.q_state[0, 2, 0], 1.5 + STEP(1) * 1.5)

    def test_probe_moves_towards_best_sample_decision(self):
        Q = QTables.create(CFG, 2)
        Q.q_inter[3, 1, 1] = [4.0, 2.0]
        Q.q_state[3, 1, 1] = 6.0
        q_update_iid(Q, Transition("state", energy=3, age=2, action=1, arrival=0, channel=1), CFG, STEP)
        assert Q.q_state[3, 1, 1] == 4.0

    def test_idle_after_probe(self):
        Q = QTables.create(CFG, 2)
        Q.q_state[np.isfinite(Q.q_state)] = 10.0
        rec = Transition("intermediate", energy=2, age=1, action=0, arrival=1, channel=0)
        q_update_iid(Q, rec, CFG, STEP)
        # T + alpha * min_b Q(E - E_p + A, T+, b) = 1 + 0.9 * 10
        self.assertAlmostEqual(Q.q_inter[2, 0, 0, 0], 0.5 * 10.0)

    def test_sample_with_known_and_unknown_p(self):
        probs = np.array([0.9, 0.3])
        Q = QTables.create(CFG, 2)
        Q.q_state[np.isfinite(Q.q_state)] = 10.0
        Q.q_state[:, 0, 0] = 2.0  # age 1
        rec = Transition("intermediate", energy=3, age=2, action=1, arrival=0, channel=1, success=1)
        q_update_iid(Q, rec, CFG, STEP, success_probs=probs)
        # 2 * 0.7 + 0.9 * 0.3 * 2 + 0.9 * 0.7 * 10 = 8.24
        self.assertAlmostEqual(Q.q_inter[3, 1, 1, 1], 0.5 * 8.24)

        Q = QTables.create(CFG, 2)
        Q.q_state[np.isfinite(Q.q_state)] = 10.0
        Q.q_state[:, 0, 0] = 2.0
        q_update_iid(Q, rec, CFG, STEP)
        # Delivered: 0 + 0.9 * 2
        self.assertAlmostEqual(Q.q_inter[3, 1, 1, 1], 0.5 * 1.8)

    @parameterized.expand(
        [
            ("stage", Transition("probe", energy=3, age=1, action=0, arrival=0)),
            ("action", Transition("state", energy=3, age=1, action=2, arrival=0)),
            ("energy_range", Transition("state", energy=9, age=1, action=0, arrival=0)),
            ("age_range", Transition("state", energy=3, age=0, action=0, arrival=0)),
            ("unaffordable_probe", Transition("state", energy=1, age=1, action=1, arrival=0, channel=0)),
            ("unaffordable_intermediate", Transition("intermediate", energy=1, age=1, action=0, arrival=0, channel=0)),
            ("missing_channel", Transition("intermediate", energy=3, age=1, action=0, arrival=0)),
            ("bad_channel", Transition("state", energy=3, age=1, action=1, arrival=0, channel=5)),
            ("missing_success", Transition("intermediate", energy=3, age=1, action=1, arrival=0, channel=0)),
        ]
    )
    def test_mismatched_records(self, _name, rec):
        Q = QTables.create(CFG, 2)
        before = Q.q_state.copy(), Q.q_inter.copy()
        self.assertRaises(MismatchedRecord, q_update_iid, Q, rec, CFG, STEP)
        assert np.array_equal(before[0], Q.q_state) and np.array_equal(before[1], Q.q_inter)


class TestMarkovUpdates(unittest.TestCase):
    def test_idle_after_probe_from_zero_table(self):
        Q = QTables.create(CFG, 2, markov=True)
        rec = Transition("intermediate", energy=2, age=5, action=0, arrival=0, channel=1, tau=2, c_prev=0)
        assert q_update_markov(Q, rec, CFG, STEP) == 0.5
        assert Q.q_inter[2, 4, 1, 0, 0] == 2.5

    def test_no_arrivals_while_not_harvesting(self):
        Q = QTables.create(CFG, 2, markov=True)
        Q.q_state[1:, ..., 0] = 100.0
        rec = Transition("state", energy=0, age=2, action=0, arrival=1, tau=1, harvest=1, next_harvest=1)
        q_update_markov(Q, rec, CFG, STEP)
        assert Q.q_state[0, 1, 0, 0, 1, 0] == 1.0  # 0.5 * (2 + 0.9 * Q(E=0, ...))

        rec = rec.replace(harvest=0, next_harvest=0)
        q_update_markov(Q, rec, CFG, STEP)
        self.assertAlmostEqual(Q.q_state[0, 1, 0, 0, 0, 0], 0.5 * (2 + 0.9 * 100.0))

    def test_successor_uses_next_harvest_state(self):
        Q = QTables.create(CFG, 2, markov=True)
        Q.q_state[..., 1, 0] = 100.0  # H_2 states
        rec = Transition("state", energy=0, age=2, action=0, arrival=0, tau=1, harvest=0, next_harvest=1)
        q_update_markov(Q, rec, CFG, STEP)
        self.assertAlmostEqual(Q.q_state[0, 1, 0, 0, 0, 0], 0.5 * (2 + 0.9 * 100.0))

    def test_probe_restarts_tau(self):
        Q = QTables.create(CFG, 2, markov=True)
        Q.q_state[:, :, 0, 1] = 20.0  # tau = 1, c_prev = 1
        Q.q_state[:, :, 3, 0] = 40.0  # tau = 4, c_prev = 0
        rec = Transition("intermediate", energy=3, age=4, action=0, arrival=0, channel=1, tau=3, c_prev=0)
        q_update_markov(Q, rec, CFG, STEP)
        self.assertAlmostEqual(Q.q_inter[3, 3, 1, 0, 0], 0.5 * (4 + 0.9 * 20.0))

        rec = Transition("state", energy=3, age=4, action=0, arrival=0, tau=3, c_prev=0)
        q_update_markov(Q, rec, CFG, STEP)
        self.assertAlmostEqual(Q.q_state[3, 3, 2, 0, 0, 0], 0.5 * (4 + 0.9 * 40.0))

    def test_tau_out_of_range(self):
        Q = QTables.create(CFG, 2, markov=True)
        rec = Transition("state", energy=3, age=2, action=0, arrival=0, tau=3)
        self.assertRaises(MismatchedRecord, q_update_markov, Q, rec, CFG, STEP)


class TestActionSelection(unittest.TestCase):
    def test_greedy(self):
        rng = np.random.default_rng(0)
        assert select_action([3.0, 1.0], [True, True], 0.0, rng) == 1
        assert select_action([1.0, 1.0], [True, True], 0.0, rng) == 0  # ties conserve energy
        assert select_action([3.0, 1.0], [True, False], 1.0, rng) == 0
        self.assertRaises(ValueError, select_action, [0.0, 0.0], [False, False], 0.0, rng)

    def test_uniform_exploration(self):
        rng = np.random.default_rng(1)
        picks = [select_action([3.0, 1.0], [True, True], 1.0, rng) for _ in range(N_SAMPLES)]
        self.assertAlmostEqual(np.mean(picks), 0.5, delta=0.05)

    def test_behavior_policy_respects_energy(self):
        Q = QTables.create(TINY_CFG, 2)
        policy = EpsilonGreedyQ(Q, TINY_CFG, epsilon=1.0)
        rng = np.random.default_rng(2)
        assert not any(policy.decide_probe(EnvState(1, [2]), rng) for _ in range(50))
        assert {policy.decide_sample(EnvState(2, [2]), 0, rng) for _ in range(100)} == {0, None}


class TestTransitions(unittest.TestCase):
    def test_records_of_a_slot(self):
        cfg = SystemConfig(2, 1, 1, discount=0.9, age_cap=4)
        env = Environment(cfg, TINY_CHANNEL, TINY_ENERGY, seed=0, initial=EnvState(2, [3]))
        records = transitions_from(env.step(ProbeAlways(cfg)))
        assert [(r.stage, r.action) for r in records] == [("state", 1), ("intermediate", 1)]
        assert records[0].energy == 2 and records[0].age == 3 and records[0].channel is not None

        records = transitions_from(env.step(AlwaysIdle()))
        assert [(r.stage, r.action) for r in records] == [("state", 0)]


class TestLearning(unittest.TestCase):
    def test_run_learning_iid(self):
        env = Environment(TINY_CFG, TINY_CHANNEL, TINY_ENERGY, seed=0)
        Q, curve = run_learning(env, 3000, report_every=1000, window=500)
        assert Q.steps == 3000
        assert Q.n_state.sum() == 3000
        assert np.isinf(Q.q_state[:2, :, 1]).all() and np.isinf(Q.q_inter[:2]).all()
        frame = curve.to_frame()
        assert list(frame.columns) == ["step", "aoi", "epsilon", "mean_step"]
        assert frame["step"].tolist() == [1000, 2000, 3000]
        assert 0.0 <= curve.final_aoi <= TINY_CFG.age_cap
        assert (frame["mean_step"] <= 0.5).all()

    def test_run_learning_markov(self):
        energy = EnergyModel(ArrivalDistribution.bernoulli(0.6), HarvestChain.create(0.2, 0.2))
        Q, curve = learn(CFG, STICKY, energy, 2000, seed=1, known_p=False, q0=5.0)
        assert Q.markov and Q.steps == 2000
        assert len(curve.rows) == 2

    def test_mismatched_tables(self):
        env = Environment(TINY_CFG, TINY_CHANNEL, TINY_ENERGY, seed=0)
        Q = QTables.create(TINY_CFG, 2, markov=True)
        self.assertRaises(InvalidConfig, run_learning, env, 10, Q=Q)
        self.assertRaises(ValueError, run_learning, env, 0)

    def test_optimal_tables_are_a_fixed_point(self):
        result = value_iteration(TINY_CFG, TINY_CHANNEL, TINY_ENERGY, tol=1e-12)
        Q = QTables.from_solution(result)
        rng = np.random.default_rng(3)
        for known_p in (True, False):
            td = sample_td_errors(Q, TINY_CFG, TINY_CHANNEL, TINY_ENERGY, N_SAMPLES, rng, known_p=known_p)
            for mean, sem in ((td.state_mean, td.state_sem), (td.inter_mean, td.inter_sem)):
                live = ~np.isnan(mean)
                assert live.any()
                error, se = np.abs(mean[live]), sem[live]
                # Entries with a deterministic target are exact
                assert (error[se == 0] <= 1e-9).all()
                # Within 3 standard errors, up to the handful of entries chance puts outside
                outside = int((error > 3 * se + 1e-9).sum())
                allowed = stats.binom.ppf(0.999, int(live.sum()), 2 * stats.norm.sf(3))
                assert outside <= allowed, (outside, allowed)

    def test_td_errors_need_iid_tables(self):
        Q = QTables.create(CFG, 2, markov=True)
        rng = np.random.default_rng(0)
        self.assertRaises(ValueError, sample_td_errors, Q, CFG, STICKY, TINY_ENERGY, 10, rng)


@unittest.skipUnless(SLOW_TESTS, "SLOW_TESTS not set")
class TestLearningQuality(unittest.TestCase):
    "Greedy policies of the learned tables, against value iteration and a random policy, on the Q-learning presets"

    seeds = [0, 1]

    def _evaluate(self, exp, policy):
        report = evaluate_policy(
            policy, exp.cfg, exp.channel, exp.energy, horizon=10**5, n_seeds=3, initial_channel=exp.initial_channel
        )
        return report.mean

    def _learned(self, exp, known_p):
        aoi = []
        for seed in self.seeds:
            Q, _ = learn(
                exp.cfg,
                exp.channel,
                exp.energy,
                int(exp.option("horizon")),
                seed=seed,
                initial_channel=exp.initial_channel,
                known_p=known_p,
            )
            aoi.append(self._evaluate(exp, greedy_q_policy(Q)))
        return float(np.mean(aoi))

    @parameterized.expand([("iid", "fig6"), ("markov", "fig6-markov")])
    def test_greedy_policy_approaches_optimum(self, _name, preset):
        exp = load_experiment(preset=preset)
        optimal = self._evaluate(exp, table_policy(solve(exp.cfg, exp.channel, exp.energy).policy))
        random = self._evaluate(exp, RandomFeasible(exp.cfg))
        known = self._learned(exp, known_p=True)
        unknown = self._learned(exp, known_p=False)

        assert known <= 1.05 * optimal, (known, optimal)
        assert optimal < 0.8 * random and known < 0.8 * random, (optimal, known, random)
        assert abs(known - unknown) < 0.05 * optimal, (known, unknown)
