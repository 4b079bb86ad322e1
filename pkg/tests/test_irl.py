"""Reward-learning tests.

The expensive pieces get independent references: empirical counts against
the from-scratch feature enumeration, exact rollout expectations against the
full joint-action tree, and the Monte-Carlo estimator against its exact
limit on a two-cell instance.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teamirl.inference import fixed_belief_augmentation, infer_models
from teamirl.irl import (
    BeliefAlignmentError,
    FeatureCounts,
    IrlConfig,
    empirical_fc,
    estimated_fc,
    exact_fc,
    irl_step,
    train,
    train_team,
)
from teamirl.planner import (
    MentalModel,
    ModelBelief,
    PlannerConfig,
    PlanningContext,
)
from teamirl.profiles import ground_truth, profile_variant, zero_profile
from teamirl.sar_env import AgentSpec, EnvConfig, Role
from oracles import (
    OracleMemo,
    belief_predictor,
    oracle_features,
    oracle_hidden_feature_expectation,
    oracle_q,
    oracle_softmax,
    random_trajectory,
)

PCFG = PlannerConfig(horizon=1, discount=0.9, rationality=2.0)


@pytest.fixture(scope="module")
def env():
    cfg = EnvConfig(
        width=2,
        height=2,
        n_victims=1,
        agents=(AgentSpec("medic", Role.MEDIC, 0), AgentSpec("explorer", Role.EXPLORER, 3)),
    )
    return cfg.build()


@pytest.fixture(scope="module")
def ctx(env):
    return PlanningContext(env)


@pytest.fixture(scope="module")
def pair_env():
    # two cells side by side: the smallest roster-of-two world
    cfg = EnvConfig(
        width=2,
        height=1,
        n_victims=1,
        agents=(AgentSpec("medic", Role.MEDIC, 0), AgentSpec("explorer", Role.EXPLORER, 1)),
    )
    return cfg.build()


def uniform_belief(kinds=("gt", "op")):
    models = tuple(MentalModel(profile_variant(Role.EXPLORER, k), 2.0, 1) for k in kinds)
    return ModelBelief.uniform(models)


def augmented_demos(env, n, length, seed):
    rng = np.random.default_rng(seed)
    trajs = [random_trajectory(env, rng, length) for _ in range(n)]
    aug = fixed_belief_augmentation(
        trajs, "medic", env.roster.names, {"explorer": uniform_belief()}
    )
    return trajs, aug


class TestFeatureCounts:
    def test_mapping_and_length(self):
        fc = FeatureCounts(("a", "b"), (1.0, 2.5))
        assert fc.as_mapping() == {"a": 1.0, "b": 2.5}
        assert len(fc) == 2
        np.testing.assert_array_equal(fc.as_array(), [1.0, 2.5])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="2 values"):
            FeatureCounts(("a",), (1.0, 2.0))

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            FeatureCounts(("a",), (-0.1,))


class TestEmpiricalCounts:
    def test_matches_feature_enumeration(self, env):
        rng = np.random.default_rng(41)
        trajs = [random_trajectory(env, rng, 6) for _ in range(4)]
        for agent in env.roster.names:
            got = empirical_fc(env, trajs, agent)
            total = np.zeros(len(env.feature_names(agent)))
            for traj in trajs:
                for state, joint in traj.steps:
                    total += np.asarray(oracle_features(env, state, joint, agent))
            np.testing.assert_allclose(got.as_array(), total / len(trajs), atol=1e-12)
            assert got.features == env.feature_names(agent)

    def test_empty_rejected(self, env):
        with pytest.raises(ValueError, match="at least one"):
            empirical_fc(env, [], "medic")


class TestIrlStep:
    def test_pinned_example(self):
        out = irl_step(np.array([0.5, 0.5]), np.zeros(2), np.array([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(out, [0.4, 0.6], atol=1e-12)

    def test_accepts_feature_counts(self):
        emp = FeatureCounts(("a", "b"), (1.0, 0.0))
        est = FeatureCounts(("a", "b"), (0.0, 1.0))
        out = irl_step(np.array([0.5, 0.5]), emp, est, 0.1)
        np.testing.assert_allclose(out, [0.6, 0.4])

    def test_zero_result_left_alone(self):
        out = irl_step(np.zeros(2), np.zeros(2), np.zeros(2), 0.3)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_misaligned_shapes_rejected(self):
        with pytest.raises(ValueError, match="misaligned"):
            irl_step(np.zeros(2), np.zeros(3), np.zeros(3), 0.1)

    @given(
        theta=st.lists(st.floats(-2, 2), min_size=2, max_size=6),
        grad=st.lists(st.floats(-5, 5), min_size=2, max_size=6),
        lr=st.floats(1e-4, 1.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_result_on_unit_ball_or_zero(self, theta, grad, lr):
        n = min(len(theta), len(grad))
        est = np.asarray(grad[:n])
        out = irl_step(np.asarray(theta[:n]), np.zeros(n), est, lr)
        norm = np.abs(out).sum()
        assert norm == 0.0 or abs(norm - 1.0) < 1e-9


class TestEstimatedCounts:
    def test_zero_length_is_zero_vector(self, env, ctx):
        trajs, aug = augmented_demos(env, 2, 3, seed=5)
        cfg = IrlConfig(n_rollouts=4, rollout_length=0)
        fc = estimated_fc(ctx, zero_profile(env.feature_names("medic")), aug, "medic", cfg, PCFG, 0)
        assert fc.values == (0.0,) * len(fc)

    def test_same_seed_reproduces(self, env, ctx):
        trajs, aug = augmented_demos(env, 2, 4, seed=6)
        cfg = IrlConfig(n_rollouts=6, rollout_length=4)
        prof = ground_truth(Role.MEDIC)
        a = estimated_fc(ctx, prof, aug, "medic", cfg, PCFG, 42)
        b = estimated_fc(ctx, prof, aug, "medic", cfg, PCFG, 42)
        assert a == b
        c = estimated_fc(ctx, prof, aug, "medic", cfg, PCFG, 43)
        assert a != c

    def test_short_augmented_rejected(self, env, ctx):
        trajs, aug = augmented_demos(env, 2, 3, seed=7)
        cfg = IrlConfig(n_rollouts=2, rollout_length=10)
        with pytest.raises(BeliefAlignmentError, match="rollouts of length 10"):
            estimated_fc(ctx, ground_truth(Role.MEDIC), aug, "medic", cfg, PCFG, 0)

    def test_wrong_observer_rejected(self, env, ctx):
        trajs, _ = augmented_demos(env, 2, 3, seed=8)
        aug = fixed_belief_augmentation(
            trajs, "explorer", env.roster.names,
            {"medic": ModelBelief.point_mass(MentalModel(ground_truth(Role.MEDIC), 2.0, 1))},
        )
        cfg = IrlConfig(n_rollouts=2, rollout_length=3)
        with pytest.raises(BeliefAlignmentError, match="observer"):
            estimated_fc(ctx, ground_truth(Role.MEDIC), aug, "medic", cfg, PCFG, 0)


class TestExactCounts:
    def _setup(self, pair_env, seed=9, length=2):
        rng = np.random.default_rng(seed)
        traj = random_trajectory(pair_env, rng, length)
        belief = uniform_belief()
        aug = fixed_belief_augmentation(
            [traj], "medic", pair_env.roster.names, {"explorer": belief}
        )
        return traj, aug, belief

    def test_matches_tree_enumeration(self, pair_env):
        ctx = PlanningContext(pair_env)
        traj, aug, belief = self._setup(pair_env)
        theta = ground_truth(Role.MEDIC)
        got = exact_fc(ctx, theta, aug, "medic", 2, PCFG)

        pred = belief_predictor(pair_env, {"explorer": belief}, PCFG.discount)
        memo = OracleMemo()

        def policy_fn(state, depth):
            q = oracle_q(
                pair_env, state, "medic", theta.weights, PCFG.horizon,
                PCFG.rationality, PCFG.discount, pred, memo,
            )
            probs = oracle_softmax(list(q.values()), PCFG.rationality)
            return dict(zip(q.keys(), probs))

        ref = oracle_hidden_feature_expectation(
            pair_env, aug[0].steps[0].state, traj.hidden, "medic",
            policy_fn, lambda s, j, depth: pred(s, j), steps=2,
        )
        np.testing.assert_allclose(got.as_array(), ref, atol=1e-9)

    def test_monte_carlo_approaches_exact(self, pair_env):
        ctx = PlanningContext(pair_env)
        traj, aug, belief = self._setup(pair_env)
        theta = ground_truth(Role.MEDIC)
        exact = exact_fc(ctx, theta, aug, "medic", 2, PCFG)
        cfg = IrlConfig(n_rollouts=4096, rollout_length=2)
        est = estimated_fc(ctx, theta, aug, "medic", cfg, PCFG, 1234)
        l1 = np.abs(est.as_array() - exact.as_array()).sum()
        assert l1 <= 0.02 * exact.as_array().sum()


def fake_estimator(values):
    def estimator(profile, seed_seq):
        return FeatureCounts(tuple(profile.catalog), tuple(values))

    return estimator


class TestTrain:
    def test_zero_gradient_converges_at_zero(self, env, ctx):
        trajs, aug = augmented_demos(env, 2, 4, seed=10)
        emp = empirical_fc(env, trajs, "medic")
        cfg = IrlConfig(max_epochs=10, convergence_patience=3)
        prof, trace = train(
            ctx, "medic", trajs, aug, cfg, PCFG, 0, estimator=fake_estimator(emp.values)
        )
        assert trace.converged
        assert trace.epochs_run == 3
        assert prof.as_array().tolist() == [0.0] * len(prof.catalog)
        assert all(rec.gradient_norm == 0.0 for rec in trace.records)

    def test_lr_schedule_and_unit_ball(self, env, ctx):
        trajs, aug = augmented_demos(env, 2, 4, seed=11)
        emp = empirical_fc(env, trajs, "medic")
        # alternate the pushed feature so theta keeps moving every epoch
        calls = itertools.count()

        def wobble(profile, seed_seq):
            values = list(emp.values)
            values[next(calls) % 2] += 2.0
            return FeatureCounts(tuple(profile.catalog), tuple(values))

        cfg = IrlConfig(max_epochs=5, learning_rate=0.05, lr_decay=0.9)
        prof, trace = train(ctx, "medic", trajs, aug, cfg, PCFG, 0, estimator=wobble)
        assert trace.epochs_run == 5 and not trace.converged
        for k, rec in enumerate(trace.records):
            np.testing.assert_allclose(rec.lr, 0.05 * 0.9**k, atol=1e-15)
            np.testing.assert_allclose(np.abs(rec.theta).sum(), 1.0, atol=1e-9)
        np.testing.assert_allclose(prof.as_array(), trace.records[-1].theta, atol=0)

    def test_estimator_sees_normalized_profiles(self, env, ctx):
        trajs, aug = augmented_demos(env, 2, 4, seed=12)
        emp = empirical_fc(env, trajs, "medic")
        seen = []

        def spy(profile, seed_seq):
            seen.append(profile.as_array())
            return FeatureCounts(tuple(profile.catalog), tuple(v + 1.0 for v in emp.values))

        cfg = IrlConfig(max_epochs=4)
        train(ctx, "medic", trajs, aug, cfg, PCFG, 0, estimator=spy)
        assert np.abs(seen[0]).sum() == 0.0  # starts from the no-goal profile
        for theta in seen[1:]:
            np.testing.assert_allclose(np.abs(theta).sum(), 1.0, atol=1e-9)

    def test_mismatched_demo_counts_rejected(self, env, ctx):
        trajs, aug = augmented_demos(env, 3, 4, seed=13)
        with pytest.raises(BeliefAlignmentError, match="3 demonstrations but 2"):
            train(ctx, "medic", trajs, aug[:2], IrlConfig(max_epochs=1), PCFG, 0)

    def test_monte_carlo_smoke(self, env, ctx):
        # end to end with the real estimator, kept tiny
        trajs, aug = augmented_demos(env, 2, 3, seed=14)
        cfg = IrlConfig(max_epochs=2, n_rollouts=2, rollout_length=3)
        prof, trace = train(ctx, "medic", trajs, aug, cfg, PCFG, 99)
        assert trace.epochs_run == 2
        assert prof.name == "learned_medic"
        norm = np.abs(prof.as_array()).sum()
        assert norm == 0.0 or abs(norm - 1.0) < 1e-9


class TestTrainTeam:
    def test_every_agent_trained(self, env, ctx):
        rng = np.random.default_rng(15)
        trajs = [random_trajectory(env, rng, 3) for _ in range(2)]
        priors = {
            "medic": ModelBelief.point_mass(MentalModel(ground_truth(Role.MEDIC), 2.0, 1)),
            "explorer": uniform_belief(),
        }
        cfg = IrlConfig(max_epochs=1, n_rollouts=2, rollout_length=3)
        out = train_team(ctx, trajs, priors, cfg, PCFG, seed=7)
        assert set(out) == {"medic", "explorer"}
        for agent, (prof, trace) in out.items():
            assert prof.catalog == env.feature_names(agent)
            assert trace.agent == agent
