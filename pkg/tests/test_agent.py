"""Tests for the tabular learner: reward, action selection, value backups,
replay, discretisation, and the training loop."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autoguard.agent import (
    DiscreteState,
    QTable,
    ReplayBuffer,
    RewardComponents,
    Transition,
    compute_reward,
    discretize,
    moving_average,
    q_update,
    replay_sample,
    select_action,
    train,
)
from autoguard.catalog import ActionId, AttackKind, StageId
from autoguard.config import (
    AgentConfig,
    AttackPlan,
    BinBounds,
    EpsilonSchedule,
    PipelineConfig,
    RewardCoefficients,
    ScheduledAttack,
)
from autoguard.errors import SamplingError
from autoguard.monitor import ActionHistory, FeatureVector, build_feature_vector
from tests.test_monitor import make_state


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestComputeReward:
    def test_zero_components_zero_reward(self):
        assert compute_reward(
            RewardComponents(0.0, 0, 0.0), RewardCoefficients(1, 1, 1)
        ) == 0.0

    def test_direct_arithmetic(self):
        got = compute_reward(
            RewardComponents(0.1, 1, 0.2), RewardCoefficients(1, 2, 0.5)
        )
        assert got == pytest.approx(2.0, abs=1e-6)

    def test_zero_beta_ignores_mitigation_flag(self):
        coeffs = RewardCoefficients(1.0, 0.0, 1.0)
        with_hit = compute_reward(RewardComponents(0.05, 1, 0.3), coeffs)
        without = compute_reward(RewardComponents(0.05, 0, 0.3), coeffs)
        assert with_hit == without

    def test_mitigation_flag_must_be_binary(self):
        with pytest.raises(ValueError):
            RewardComponents(0.0, 2, 0.0)


class TestSelectAction:
    def test_greedy_argmax(self):
        q = QTable()
        row = q.row_mut("s")
        row[:3] = [1.0, 3.0, 2.0]
        assert select_action(q, "s", 0.0, rng()) == 1

    def test_all_zero_row_ties_to_lowest_ordinal(self):
        q = QTable()
        q.row_mut("s")
        assert select_action(q, "s", 0.0, rng()) == ActionId.NO_OP

    def test_unseen_state_defaults_to_lowest_ordinal(self):
        assert select_action(QTable(), "never-seen", 0.0, rng()) == ActionId.NO_OP

    def test_epsilon_one_is_uniform_within_4_sigma(self):
        q = QTable()
        draws = 80_000
        counts = np.zeros(len(ActionId), dtype=int)
        generator = rng(1234)
        for _ in range(draws):
            counts[int(select_action(q, "s", 1.0, generator))] += 1
        p = 1.0 / len(ActionId)
        sigma = math.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 4 * sigma), counts
        # chi-square goodness of fit, df=7, alpha=0.001 critical value
        chi2 = float(((counts - draws * p) ** 2 / (draws * p)).sum())
        assert chi2 < 24.32

    def test_epsilon_domain_enforced(self):
        with pytest.raises(ValueError):
            select_action(QTable(), "s", 1.5, rng())


class TestQUpdate:
    def test_terminal_from_zeros(self):
        q = QTable()
        t = Transition("s0", 0, 1.0, "s1", True)
        q_update(q, t, 0.5, 0.9)
        assert q.value("s0", 0) == pytest.approx(0.5, abs=1e-6)

    def test_bootstrap_arithmetic(self):
        q = QTable()
        q.row_mut("s1")[3] = 3.0
        t = Transition("s0", 0, 1.0, "s1", False)
        q_update(q, t, 0.1, 0.5)
        assert q.value("s0", 0) == pytest.approx(0.25, abs=1e-6)

    def test_learning_rate_one_terminal_sets_exactly_r(self):
        q = QTable()
        q.row_mut("s0")[2] = -7.5
        q_update(q, Transition("s0", 2, 1.25, "s1", True), 1.0, 0.99)
        assert q.value("s0", 2) == pytest.approx(1.25, abs=1e-12)

    def test_greedy_invariant_under_row_constant_shift(self):
        q = QTable()
        row = q.row_mut("s")
        row[:] = [0.3, 1.1, -0.2, 0.9, 0.0, 0.0, 0.0, 0.0]
        before = q.best_action("s")
        shifted = QTable()
        shifted.row_mut("s")[:] = [v + 123.456 for v in row]
        assert shifted.best_action("s") == before

    def test_values_bounded_by_rmax_over_one_minus_discount(self):
        r_max = 2.0
        discount = 0.9
        bound = r_max / (1 - discount) + 1e-9
        q = QTable(num_actions=4)
        gen = rng(7)
        states = list(range(6))
        for _ in range(20_000):
            s, s_next = gen.integers(0, 6), gen.integers(0, 6)
            t = Transition(int(s), int(gen.integers(0, 4)),
                           float(gen.uniform(-r_max, r_max)), int(s_next),
                           bool(gen.random() < 0.05))
            q_update(q, t, 0.2, discount)
        for s in states:
            assert all(abs(v) <= bound for v in q.row(s))


class TestChainMdpOracle:
    """Deterministic 4-state, 2-action chain: repeated sweeps of the update
    rule must land on the value-iteration fixed point."""

    GAMMA = 0.9
    # state -> action -> (reward, next_state, terminal)
    DYNAMICS = {
        0: {0: (0.1, 0, False), 1: (0.0, 1, False)},
        1: {0: (0.0, 0, False), 1: (0.2, 2, False)},
        2: {0: (0.0, 1, False), 1: (1.0, 3, True)},
    }

    def value_iteration_oracle(self):
        # Independent fixed-point solver over the same dynamics.
        q = {(s, a): 0.0 for s in self.DYNAMICS for a in (0, 1)}
        while True:
            delta = 0.0
            new = dict(q)
            for (s, a), _ in q.items():
                r, nxt, terminal = self.DYNAMICS[s][a]
                target = r if terminal else r + self.GAMMA * max(
                    new[(nxt, 0)], new[(nxt, 1)]
                )
                delta = max(delta, abs(target - q[(s, a)]))
                new[(s, a)] = target
            q = new
            if delta < 1e-12:
                return q

    def test_sweeps_converge_to_value_iteration_fixed_point(self):
        oracle = self.value_iteration_oracle()
        q = QTable(num_actions=2)
        for _ in range(10_000):
            for s in self.DYNAMICS:
                for a in (0, 1):
                    r, nxt, terminal = self.DYNAMICS[s][a]
                    q_update(q, Transition(s, a, r, nxt, terminal), 0.5, self.GAMMA)
        for (s, a), expected in oracle.items():
            assert q.value(s, a) == pytest.approx(expected, abs=1e-3)


class TestReplayBuffer:
    def tr(self, i):
        return Transition(i, 0, float(i), i + 1, False)

    def test_eviction_is_strictly_oldest_first(self):
        buf = ReplayBuffer(capacity=3)
        for i in range(5):
            buf.add(self.tr(i))
        held = {buf[i].s for i in range(len(buf))}
        assert held == {2, 3, 4}

    def test_full_buffer_sample_is_a_permutation(self):
        buf = ReplayBuffer(capacity=4)
        for i in range(4):
            buf.add(self.tr(i))
        sample = replay_sample(buf, 4, rng(3))
        assert sorted(t.s for t in sample) == [0, 1, 2, 3]

    def test_underfull_buffer_raises_sampling_error(self):
        buf = ReplayBuffer(capacity=10)
        buf.add(self.tr(0))
        with pytest.raises(SamplingError):
            replay_sample(buf, 2, rng())

    def test_same_seed_same_sample(self):
        buf = ReplayBuffer(capacity=100)
        for i in range(50):
            buf.add(self.tr(i))
        a = replay_sample(buf, 8, rng(42))
        b = replay_sample(buf, 8, rng(42))
        assert a == b

    def test_sample_has_no_duplicates(self):
        buf = ReplayBuffer(capacity=64)
        for i in range(64):
            buf.add(self.tr(i))
        for seed in range(20):
            sample = replay_sample(buf, 16, rng(seed))
            assert len({t.s for t in sample}) == 16


def fv_with(rho=0.5, cpu=0.3, mem=0.4, drift=0.0, stage=StageId.COMMIT,
            last=ActionId.NO_OP):
    return FeatureVector(
        rho=rho, cpu=cpu, mem=mem, dep_drift=drift, stage=stage,
        hist_acts=((ActionId.NO_OP, False),) * 3 + ((last, True),),
    )


class TestDiscretize:
    BOUNDS = BinBounds(rho_bins=10, cpu_bins=3, mem_bins=3, drift_bins=3, drift_cap=1.5)

    def test_edge_bins(self):
        eps = 1e-9
        low = discretize(fv_with(rho=0.0 + eps), self.BOUNDS)
        high = discretize(fv_with(rho=1.0 - eps), self.BOUNDS)
        assert low.rho_bin == 0
        assert high.rho_bin == 9

    def test_pure_function(self):
        fv = fv_with(rho=0.42, cpu=0.9, drift=0.7, last=ActionId.RESTART_SERVICE)
        assert discretize(fv, self.BOUNDS) == discretize(fv, self.BOUNDS)

    def test_stage_and_last_action_copied(self):
        s = discretize(fv_with(stage=StageId.DEPLOY, last=ActionId.TRIGGER_SCAN),
                       self.BOUNDS)
        assert s.stage == int(StageId.DEPLOY)
        assert s.last_action == int(ActionId.TRIGGER_SCAN)

    @settings(max_examples=300)
    @given(
        rho=st.floats(0.001, 0.999), cpu=st.floats(0, 1), mem=st.floats(0, 1),
        drift=st.floats(0, 50),
        stage=st.sampled_from(list(StageId)),
        last=st.sampled_from(list(ActionId)),
    )
    def test_bins_always_within_bounds(self, rho, cpu, mem, drift, stage, last):
        s = discretize(fv_with(rho, cpu, mem, drift, stage, last), self.BOUNDS)
        assert 0 <= s.rho_bin < 10
        assert 0 <= s.cpu_bin < 3
        assert 0 <= s.mem_bin < 3
        assert 0 <= s.drift_bin < 3


def tiny_env_config(seed=5):
    return PipelineConfig(
        num_services=3,
        episode_length=16,
        rng_seed=seed,
        attack=AttackPlan(mode="explicit", schedule=[
            ScheduledAttack(step=3, kind=AttackKind.CONTAINER_ESCAPE, target=1,
                            duration_cap=8),
        ]),
    )


def tiny_agent_config(episodes=3):
    return AgentConfig(
        episodes=episodes,
        buffer_capacity=256,
        batch_size=8,
        epsilon=EpsilonSchedule(start=0.5, end=0.1, decay_episodes=2),
    )


class TestTrain:
    def test_zero_episodes_returns_untouched_table_and_empty_curve(self):
        result = train(tiny_env_config(), tiny_agent_config(episodes=0))
        assert len(result.qtable) == 0
        assert result.rewards == []

    def test_epsilon_schedule_endpoint(self):
        sched = EpsilonSchedule(start=1.0, end=0.05, decay_episodes=500)
        assert sched.value(0) == 1.0
        assert sched.value(500) == 0.05
        assert sched.value(750) == 0.05
        assert sched.value(250) == pytest.approx(0.525)

    def test_learning_curve_bit_identical_across_runs(self):
        a = train(tiny_env_config(), tiny_agent_config())
        b = train(tiny_env_config(), tiny_agent_config())
        assert a.rewards == b.rewards
        assert a.epsilons == b.epsilons
        assert a.qtable._rows == b.qtable._rows

    def test_qtable_csv_round_trip(self, tmp_path):
        result = train(tiny_env_config(), tiny_agent_config())
        path = tmp_path / "qtable.csv"
        result.qtable.save_csv(str(path))
        loaded = QTable.load_csv(str(path))
        assert loaded._rows == result.qtable._rows


class TestMovingAverage:
    def test_trailing_window(self):
        assert moving_average([1, 2, 3, 4], 2) == [1.0, 1.5, 2.5, 3.5]
