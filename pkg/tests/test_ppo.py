import csv
import math

import numpy as np
import pytest

from helpers import BanditEnv
from semcom_rl import (EnvConfig, Mlp, PpoConfig, SemComEnv, Trajectory,
                       TrainingDiverged, clipped_policy_loss, collect_rollout,
                       compute_gae, exponential_moving_average, joint_entropy,
                       joint_log_prob, minibatch_loss_and_grads, policy_output,
                       sample_action, state_values, total_loss, train,
                       value_loss)
from semcom_rl.ppo import (LOG_STD_MAX, LOG_STD_MIN, MinibatchData,
                           _sample_with_presquash, normalize_advantages,
                           presquash_from_fraction, user_feature_rows)


def linear_policy(num_models, bias=None):
    """Single linear layer with zero weights: output is the bias vector."""
    net = Mlp([3, num_models + 4], np.random.default_rng(0))
    b = np.zeros(num_models + 4) if bias is None else np.asarray(bias, float)
    net.set_params([np.zeros((3, num_models + 4)), b])
    return net


def make_trajectory(rewards, values, dones, bootstrap=0.0, num_users=2):
    t = len(rewards)
    return Trajectory(
        observations=np.zeros((t, 3 * num_users)),
        scm_indices=np.zeros((t, num_users), dtype=np.int64),
        power_presquash=np.zeros((t, num_users)),
        bandwidth_presquash=np.zeros((t, num_users)),
        log_probs=np.zeros(t),
        values=np.asarray(values, dtype=np.float64),
        rewards=np.asarray(rewards, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
        bootstrap_value=bootstrap,
    )


class TestUserFeatureRows:
    def test_interleaves_blocks_per_user(self):
        obs = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        rows = user_feature_rows(obs)
        assert np.array_equal(rows, [[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]])

    def test_batched(self):
        obs = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        rows = user_feature_rows(obs)
        assert rows.shape == (2, 3)
        assert np.array_equal(rows, obs)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            user_feature_rows(np.zeros(4))


class TestPolicyOutput:
    def test_shapes(self, rng):
        policy = Mlp([3, 16, 4 + 4], rng)
        out = policy_output(policy, rng.standard_normal(3 * 5))
        assert out.logits.shape == (5, 4)
        assert out.power_mean.shape == (5,)
        assert out.bandwidth_log_std.shape == (5,)

    def test_log_std_clamped(self):
        bias = np.zeros(2 + 4)
        bias[3] = 10.0    # raw power log-std
        bias[5] = -10.0   # raw bandwidth log-std
        policy = linear_policy(2, bias)
        out = policy_output(policy, np.ones(3))
        assert out.power_log_std[0] == LOG_STD_MAX
        assert out.bandwidth_log_std[0] == LOG_STD_MIN

    def test_non_finite_output_raises(self):
        policy = linear_policy(2)
        policy.params[1][0] = np.inf
        with pytest.raises(FloatingPointError):
            policy_output(policy, np.ones(3))


class TestSampling:
    def test_deterministic_takes_argmax_and_means(self):
        bias = np.array([0.0, 3.0, -1.0, 0.0, 0.0, 2.0, 0.0])  # S = 3
        policy = linear_policy(3, bias)
        action, log_prob, output = sample_action(policy, np.ones(6), None,
                                                 deterministic=True)
        assert np.array_equal(action.scm_index, [1, 1])
        # power mean 0 -> sigmoid(0) = 0.5; bandwidth mean 2 -> sigmoid(2)
        assert action.power_fraction == pytest.approx([0.5, 0.5])
        assert action.bandwidth_fraction == pytest.approx(
            [1.0 / (1.0 + math.exp(-2.0))] * 2)
        assert math.isfinite(log_prob)

    def test_stochastic_needs_rng(self):
        policy = linear_policy(2)
        with pytest.raises(ValueError):
            sample_action(policy, np.ones(3), None)

    def test_fractions_strictly_inside_unit_interval(self, rng):
        policy = Mlp([3, 8, 4 + 4], rng)
        for _ in range(50):
            action, _, _ = sample_action(policy, rng.standard_normal(12), rng)
            assert np.all(action.power_fraction > 0.0)
            assert np.all(action.power_fraction < 1.0)
            assert np.all(action.bandwidth_fraction > 0.0)
            assert np.all(action.bandwidth_fraction < 1.0)

    def test_uniform_logits_sample_uniformly(self, rng):
        policy = linear_policy(4)
        counts = np.zeros(4)
        draws_per_call = 100
        calls = 1000
        obs = np.ones(3 * draws_per_call)
        for _ in range(calls):
            action, _, _ = sample_action(policy, obs, rng)
            counts += np.bincount(action.scm_index, minlength=4)
        freq = counts / (draws_per_call * calls)
        assert freq == pytest.approx(np.full(4, 0.25), abs=0.01)

    def test_single_model_always_index_zero(self, rng):
        policy = linear_policy(1)
        action, _, _ = sample_action(policy, np.ones(9), rng)
        assert np.array_equal(action.scm_index, [0, 0, 0])

    def test_same_rng_draws_identical_actions(self):
        policy = Mlp([3, 8, 4 + 4], np.random.default_rng(3))
        obs = np.random.default_rng(4).standard_normal(6)
        a1, lp1, _ = sample_action(policy, obs, np.random.default_rng(8))
        a2, lp2, _ = sample_action(policy, obs, np.random.default_rng(8))
        assert np.array_equal(a1.scm_index, a2.scm_index)
        assert np.array_equal(a1.power_fraction, a2.power_fraction)
        assert lp1 == lp2


class TestLogProbAndEntropy:
    def test_log_prob_matches_manual_density(self, rng):
        policy = Mlp([3, 16, 3 + 4], rng)
        obs = rng.standard_normal(3 * 2)
        action, log_prob, output, z_p, z_b = _sample_with_presquash(
            policy, obs, rng)

        manual = 0.0
        for u in range(2):
            logits = output.logits[u]
            log_softmax = logits - (logits.max()
                                    + np.log(np.exp(logits - logits.max()).sum()))
            manual += log_softmax[action.scm_index[u]]
            for z, mu, log_std in ((z_p[u], output.power_mean[u],
                                    output.power_log_std[u]),
                                   (z_b[u], output.bandwidth_mean[u],
                                    output.bandwidth_log_std[u])):
                sigma = math.exp(log_std)
                normal = (-0.5 * ((z - mu) / sigma) ** 2
                          - math.log(sigma) - 0.5 * math.log(2 * math.pi))
                f = 1.0 / (1.0 + math.exp(-z))
                manual += normal - math.log(f) - math.log(1.0 - f)
        assert log_prob == pytest.approx(manual, rel=1e-10)

    def test_presquash_inverts_sigmoid(self):
        f = np.array([0.01, 0.4, 0.97])
        z = presquash_from_fraction(f)
        assert 1.0 / (1.0 + np.exp(-z)) == pytest.approx(f, rel=1e-12)

    def test_log_prob_consistent_with_presquash_round_trip(self, rng):
        policy = Mlp([3, 8, 2 + 4], rng)
        obs = rng.standard_normal(3)
        action, log_prob, output, z_p, z_b = _sample_with_presquash(
            policy, obs, rng)
        rt = joint_log_prob(output, action.scm_index,
                            presquash_from_fraction(action.power_fraction),
                            presquash_from_fraction(action.bandwidth_fraction))
        assert rt == pytest.approx(log_prob, rel=1e-9)

    def test_entropy_of_uniform_unit_gaussian_heads(self):
        policy = linear_policy(4)
        output = policy_output(policy, np.ones(9))  # 3 users
        expected = 3 * (math.log(4.0) + 1.0 + math.log(2.0 * math.pi))
        assert joint_entropy(output) == pytest.approx(expected, rel=1e-12)

    def test_entropy_grows_with_log_std(self):
        lo = policy_output(linear_policy(2), np.ones(3))
        hi_bias = np.zeros(6)
        hi_bias[3] = 1.0
        hi = policy_output(linear_policy(2, hi_bias), np.ones(3))
        assert joint_entropy(hi) > joint_entropy(lo)


class TestGae:
    def test_hand_computed_chain(self):
        traj = make_trajectory([1.0, 0.0, 2.0], [0.5, 0.4, 0.3],
                               [False, False, False], bootstrap=0.7)
        adv, ret = compute_gae(traj, gamma=0.9, gae_lambda=0.8)
        assert adv == pytest.approx([1.974272, 1.5476, 2.33], rel=1e-12)
        assert ret == pytest.approx([2.474272, 1.9476, 2.63], rel=1e-12)

    def test_done_resets_accumulator_and_next_value(self):
        traj = make_trajectory([1.0, 0.0, 2.0], [0.5, 0.4, 0.3],
                               [False, True, False], bootstrap=0.7)
        adv, _ = compute_gae(traj, gamma=0.9, gae_lambda=0.8)
        assert adv == pytest.approx([0.572, -0.4, 2.33], rel=1e-12)

    def test_lambda_one_equals_monte_carlo_returns(self, rng):
        lengths = [4, 3, 5]
        gamma = 0.97
        rewards = rng.standard_normal(sum(lengths))
        values = rng.standard_normal(sum(lengths))
        dones = np.zeros(sum(lengths), dtype=bool)
        ends = np.cumsum(lengths) - 1
        dones[ends] = True
        traj = make_trajectory(rewards, values, dones)
        adv, _ = compute_gae(traj, gamma=gamma, gae_lambda=1.0)

        expected = np.empty_like(rewards)
        start = 0
        for length in lengths:
            for t in range(length):
                discounted = sum(gamma ** (k - t) * rewards[start + k]
                                 for k in range(t, length))
                expected[start + t] = discounted - values[start + t]
            start += length
        assert adv == pytest.approx(expected, rel=1e-10, abs=1e-12)

    def test_undiscounted_single_episode_suffix_sums(self):
        traj = make_trajectory([1.0, 2.0, 3.0], [0.0, 0.0, 0.0],
                               [False, False, True])
        adv, ret = compute_gae(traj, gamma=1.0, gae_lambda=1.0)
        assert adv == pytest.approx([6.0, 5.0, 3.0])
        assert ret == pytest.approx([6.0, 5.0, 3.0])


class TestLosses:
    def test_positive_advantage_clips_high_ratio(self):
        loss = clipped_policy_loss(np.array([math.log(1.5)]), np.array([0.0]),
                                   np.array([1.0]), clip_epsilon=0.2)
        assert loss == pytest.approx(-1.2, rel=1e-12)

    def test_negative_advantage_keeps_pessimistic_branch(self):
        loss = clipped_policy_loss(np.array([math.log(0.5)]), np.array([0.0]),
                                   np.array([-1.0]), clip_epsilon=0.2)
        assert loss == pytest.approx(0.8, rel=1e-12)

    def test_equal_policies_give_negative_mean_advantage(self, rng):
        logp = rng.standard_normal(32)
        adv = rng.standard_normal(32)
        loss = clipped_policy_loss(logp, logp, adv, clip_epsilon=0.2)
        assert loss == pytest.approx(-adv.mean(), rel=1e-12)

    def test_value_loss_is_mean_squared_error(self):
        assert value_loss(np.array([1.0, 2.0]),
                          np.array([0.0, 0.0])) == pytest.approx(2.5)

    def test_total_loss_combination(self):
        assert total_loss(-1.2, 4.0, 0.0, value_coef=0.5,
                          entropy_coef=0.0) == pytest.approx(0.8, rel=1e-12)
        assert total_loss(1.0, 2.0, 3.0, value_coef=0.5,
                          entropy_coef=0.01) == pytest.approx(1.97, rel=1e-12)

    def test_normalize_advantages(self, rng):
        adv = rng.standard_normal(64) * 5.0 + 2.0
        norm = normalize_advantages(adv)
        assert norm.mean() == pytest.approx(0.0, abs=1e-12)
        assert norm.std() == pytest.approx(1.0, rel=1e-6)
        assert np.all(normalize_advantages(np.full(8, 3.0)) == 0.0)


def synthetic_batch(policy, rng, batch_size=6, num_users=2, ratio_noise=0.2):
    obs = rng.standard_normal((batch_size, 3 * num_users))
    s = policy.layer_sizes[-1] - 4
    scm = rng.integers(0, s, size=(batch_size, num_users))
    z_p = rng.standard_normal((batch_size, num_users))
    z_b = rng.standard_normal((batch_size, num_users))
    new_logp = np.array([
        joint_log_prob(policy_output(policy, obs[i]), scm[i], z_p[i], z_b[i])
        for i in range(batch_size)])
    return MinibatchData(
        observations=obs,
        scm_indices=scm,
        power_presquash=z_p,
        bandwidth_presquash=z_b,
        old_log_probs=new_logp + ratio_noise * rng.standard_normal(batch_size),
        advantages=rng.standard_normal(batch_size),
        returns=rng.standard_normal(batch_size),
    )


class TestMinibatchGradients:
    def test_loss_report_matches_reference_functions(self, rng):
        policy = Mlp([3, 8, 3 + 4], rng)
        value_net = Mlp([3, 8, 1], rng, output_gain=1.0)
        config = PpoConfig()
        batch = synthetic_batch(policy, rng)
        report, _, _ = minibatch_loss_and_grads(policy, value_net, batch,
                                                config)
        new_logp = np.array([
            joint_log_prob(policy_output(policy, batch.observations[i]),
                           batch.scm_indices[i], batch.power_presquash[i],
                           batch.bandwidth_presquash[i])
            for i in range(len(batch.advantages))])
        expected_pl = clipped_policy_loss(new_logp, batch.old_log_probs,
                                          batch.advantages,
                                          config.clip_epsilon)
        expected_vl = value_loss(
            state_values(value_net, batch.observations), batch.returns)
        assert report.policy_loss == pytest.approx(expected_pl, rel=1e-10)
        assert report.value_loss == pytest.approx(expected_vl, rel=1e-10)
        assert report.total == pytest.approx(
            total_loss(expected_pl, expected_vl, report.entropy,
                       config.value_coef, config.entropy_coef), rel=1e-10)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        policy = Mlp([3, 8, 3 + 4], rng)
        value_net = Mlp([3, 8, 1], rng, output_gain=1.0)
        config = PpoConfig()
        batch = synthetic_batch(policy, rng)

        def loss() -> float:
            report, _, _ = minibatch_loss_and_grads(policy, value_net, batch,
                                                    config)
            return report.total

        _, policy_grads, value_grads = minibatch_loss_and_grads(
            policy, value_net, batch, config)
        h = 1e-6
        for net, grads in ((policy, policy_grads), (value_net, value_grads)):
            for p_idx, param in enumerate(net.params):
                for entry in rng.choice(param.size,
                                        size=min(4, param.size),
                                        replace=False):
                    idx = np.unravel_index(entry, param.shape)
                    original = param[idx]
                    param[idx] = original + h
                    up = loss()
                    param[idx] = original - h
                    down = loss()
                    param[idx] = original
                    fd = (up - down) / (2.0 * h)
                    assert grads[p_idx][idx] == pytest.approx(
                        fd, rel=1e-4, abs=1e-7)

    def test_clip_dead_zone_kills_policy_gradient(self, rng):
        policy = Mlp([3, 8, 3 + 4], rng)
        value_net = Mlp([3, 8, 1], rng, output_gain=1.0)
        config = PpoConfig(entropy_coef=0.0)
        batch = synthetic_batch(policy, rng, ratio_noise=0.0)
        # force every sample deep into the clipped branch: ratio = 2, A > 0
        batch = MinibatchData(
            observations=batch.observations,
            scm_indices=batch.scm_indices,
            power_presquash=batch.power_presquash,
            bandwidth_presquash=batch.bandwidth_presquash,
            old_log_probs=batch.old_log_probs - math.log(2.0),
            advantages=np.ones_like(batch.advantages),
            returns=batch.returns,
        )
        report, policy_grads, value_grads = minibatch_loss_and_grads(
            policy, value_net, batch, config)
        assert report.policy_loss == pytest.approx(-1.2, rel=1e-10)
        assert all(np.all(g == 0.0) for g in policy_grads)
        assert any(np.any(g != 0.0) for g in value_grads)


class TestStateValues:
    def test_mean_pools_per_user_values(self):
        value_net = Mlp([3, 1], np.random.default_rng(0))
        value_net.set_params([np.array([[1.0], [0.0], [0.0]]), np.zeros(1)])
        # per-user value equals the gain feature; pool = mean of gains
        obs = np.array([[0.2, 0.6, 9.0, 9.0, 9.0, 9.0]])
        assert state_values(value_net, obs) == pytest.approx([0.4], rel=1e-12)

    def test_user_count_agnostic(self, rng):
        value_net = Mlp([3, 8, 1], rng, output_gain=1.0)
        row = rng.standard_normal(3)
        single = state_values(value_net, row)
        tiled = state_values(value_net, np.concatenate(
            [np.repeat(row[0], 4), np.repeat(row[1], 4), np.repeat(row[2], 4)]))
        assert tiled == pytest.approx(single, rel=1e-12)


class TestTrajectoryValidation:
    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            make_trajectory([1.0, 2.0], [0.0], [False])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            make_trajectory([], [], [])

    def test_non_finite_log_probs_rejected(self):
        traj_kwargs = dict(
            observations=np.zeros((1, 6)),
            scm_indices=np.zeros((1, 2), dtype=np.int64),
            power_presquash=np.zeros((1, 2)),
            bandwidth_presquash=np.zeros((1, 2)),
            values=np.zeros(1), rewards=np.zeros(1),
            dones=np.array([True]))
        with pytest.raises(ValueError):
            Trajectory(log_probs=np.array([np.nan]), **traj_kwargs)


class TestCollectRollout:
    def test_bandit_episodes_are_single_steps(self, rng):
        env = BanditEnv([0.0, 1.0])
        policy = Mlp([3, 8, 2 + 4], rng)
        value_net = Mlp([3, 8, 1], rng, output_gain=1.0)
        traj, returns = collect_rollout(env, policy, value_net, 10,
                                        np.random.default_rng(1),
                                        np.random.default_rng(2))
        assert len(traj) == 10
        assert np.all(traj.dones)
        assert len(returns) == 10
        assert traj.bootstrap_value == 0.0
        assert set(np.unique(traj.scm_indices)) <= {0, 1}

    def test_episode_boundaries_and_bootstrap(self, small_env_config, rng):
        policy = Mlp([3, 8, 3 + 4], rng)
        value_net = Mlp([3, 8, 1], rng, output_gain=1.0)
        env = SemComEnv(small_env_config)  # episode_length = 4
        traj, returns = collect_rollout(env, policy, value_net, 10,
                                        np.random.default_rng(1),
                                        np.random.default_rng(2))
        assert np.array_equal(np.flatnonzero(traj.dones), [3, 7])
        assert len(returns) == 2
        assert returns[0] == pytest.approx(float(traj.rewards[:4].sum()))
        assert traj.bootstrap_value != 0.0  # truncated mid-episode

        traj8, _ = collect_rollout(env, policy, value_net, 8,
                                   np.random.default_rng(1),
                                   np.random.default_rng(2))
        assert traj8.bootstrap_value == 0.0  # ends exactly at a terminal


class TestTrain:
    def bandit_config(self, **overrides):
        defaults = dict(epochs=2, rollout_steps=16, minibatch_size=8,
                        update_epochs=2, hidden_sizes=(8, 8),
                        learning_rate=1e-2)
        defaults.update(overrides)
        return PpoConfig(**defaults)

    def test_report_shape_and_finiteness(self):
        report = train(lambda arms: BanditEnv(arms), self.bandit_config(),
                       [0.0, 1.0, 0.5], seed=3)
        assert [e.epoch for e in report.epochs] == [0, 1]
        for e in report.epochs:
            assert math.isfinite(e.mean_episode_reward)
            assert math.isfinite(e.policy_loss)
            assert math.isfinite(e.value_loss)
            assert math.isfinite(e.entropy)
        assert report.mean_rewards().shape == (2,)

    def test_same_seed_reproduces_training_exactly(self):
        runs = [train(lambda arms: BanditEnv(arms), self.bandit_config(),
                      [0.0, 1.0], seed=11) for _ in range(2)]
        assert np.array_equal(runs[0].mean_rewards(), runs[1].mean_rewards())
        assert all(np.array_equal(a, b) for a, b in
                   zip(runs[0].policy.params, runs[1].policy.params))

    def test_different_seeds_differ(self):
        a = train(lambda arms: BanditEnv(arms), self.bandit_config(),
                  [0.0, 1.0], seed=1)
        b = train(lambda arms: BanditEnv(arms), self.bandit_config(),
                  [0.0, 1.0], seed=2)
        assert not np.array_equal(a.policy.params[0], b.policy.params[0])

    def test_smoke_on_simulator(self, small_env_config):
        config = PpoConfig(epochs=1, rollout_steps=8, minibatch_size=8,
                           update_epochs=1, hidden_sizes=(8,),
                           learning_rate=1e-3)
        report = train(SemComEnv, config, small_env_config, seed=0)
        assert len(report.epochs) == 1
        assert math.isfinite(report.epochs[0].mean_episode_reward)

    def test_divergence_is_reported_with_epoch(self):
        # nan rewards poison the advantages and must surface as a
        # TrainingDiverged carrying the epoch, not a silent nan report
        with pytest.raises(TrainingDiverged) as exc_info:
            train(lambda arms: BanditEnv(arms), self.bandit_config(),
                  [math.nan, math.nan], seed=0)
        assert exc_info.value.epoch == 0

    def test_progress_callback_sees_every_epoch(self):
        seen = []
        train(lambda arms: BanditEnv(arms), self.bandit_config(),
              [0.0, 1.0], seed=5, progress=seen.append)
        assert [e.epoch for e in seen] == [0, 1]

    def test_convergence_csv_layout(self, tmp_path):
        report = train(lambda arms: BanditEnv(arms), self.bandit_config(),
                       [0.0, 1.0], seed=3)
        path = tmp_path / "training.csv"
        report.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "mean_episode_reward",
                           "std_episode_reward", "policy_loss", "value_loss",
                           "entropy"]
        assert len(rows) == 3
        assert float(rows[1][1]) == pytest.approx(
            report.epochs[0].mean_episode_reward, rel=1e-10)


class TestSmoothing:
    def test_hand_case(self):
        out = exponential_moving_average(np.array([1.0, 0.0, 0.0]), 0.5)
        assert out == pytest.approx([1.0, 0.5, 0.25], rel=1e-12)

    def test_constant_input_is_fixed_point(self):
        out = exponential_moving_average(np.full(5, 2.5), 0.9)
        assert out == pytest.approx(np.full(5, 2.5), rel=1e-12)

    def test_first_output_equals_first_input(self, rng):
        values = rng.standard_normal(10)
        assert exponential_moving_average(values)[0] == pytest.approx(
            values[0], rel=1e-12)


class TestPpoConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(gamma=0.0), dict(gamma=1.5), dict(gae_lambda=0.0),
        dict(clip_epsilon=0.0), dict(update_epochs=0), dict(rollout_steps=0),
        dict(learning_rate=0.0),
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PpoConfig(**kwargs)
