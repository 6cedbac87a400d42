"""PPO over a hybrid per-user action space, with hand-derived gradients.

The policy network is shared across users: it maps each user's 3 features
(gain, remaining power, remaining bandwidth) to S categorical logits plus
mean/log-std pairs for the power and bandwidth fractions.  Sharing makes the
user count a runtime quantity, so a policy trained with 6 users evaluates
unchanged with 12.  The value network is shared the same way and mean-pooled
over users.

Continuous actions are Gaussian draws squashed to (0, 1) by the logistic
function; the log-density carries the exact change-of-variables correction
-log f(1-f) = softplus(z) + softplus(-z).  Updates keep the sampled
pre-squash values, so densities under new parameters are evaluated without
inverting the squash.

Training follows the classic loop: collect a fixed-length rollout, compute
GAE advantages, then several epochs of shuffled minibatch updates on the
clipped surrogate + value + entropy loss, clearing the buffer every epoch.
All gradients are assembled analytically at the network heads and pushed
through `Mlp.backward`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .environment import Action
from .nets import Adam, Mlp

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)
NUM_CONTINUOUS_HEADS = 4  # power mean/log-std, bandwidth mean/log-std


class EnvLike(Protocol):
    """What `train` needs from an environment."""

    num_users: int
    num_models: int

    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, action: Action, rng: np.random.Generator): ...


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    update_epochs: int = 15
    minibatch_size: int = 64
    rollout_steps: int = 2048
    epochs: int = 150
    learning_rate: float = 3e-5
    hidden_sizes: tuple[int, ...] = (128, 128)
    max_grad_norm: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must be in (0, 1], got {self.gae_lambda}")
        if not self.clip_epsilon > 0.0:
            raise ValueError(f"clip_epsilon must be > 0, got {self.clip_epsilon}")
        for name in ("update_epochs", "minibatch_size", "rollout_steps", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass(frozen=True)
class HybridPolicyOutput:
    """Per-user distribution parameters; log-stds are already clamped."""

    logits: np.ndarray             # (M, S)
    power_mean: np.ndarray         # (M,)
    power_log_std: np.ndarray      # (M,)
    bandwidth_mean: np.ndarray     # (M,)
    bandwidth_log_std: np.ndarray  # (M,)


def user_feature_rows(obs_batch: np.ndarray) -> np.ndarray:
    """(B, 3M) observations -> (B*M, 3) per-user feature rows."""
    obs2 = np.atleast_2d(obs_batch)
    b, dim = obs2.shape
    m = dim // 3
    if dim != 3 * m:
        raise ValueError(f"observation length {dim} is not a multiple of 3")
    return obs2.reshape(b, 3, m).transpose(0, 2, 1).reshape(b * m, 3)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def presquash_from_fraction(fraction: np.ndarray) -> np.ndarray:
    """Inverse logistic; valid for fractions strictly inside (0, 1)."""
    f = np.asarray(fraction, dtype=np.float64)
    return np.log(f) - np.log1p(-f)


def policy_output(policy: Mlp, observation: np.ndarray) -> HybridPolicyOutput:
    """Run the shared per-user head on one flat observation."""
    rows = user_feature_rows(observation)
    out = policy(rows)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("policy network produced non-finite outputs")
    s = out.shape[1] - NUM_CONTINUOUS_HEADS
    return HybridPolicyOutput(
        logits=out[:, :s],
        power_mean=out[:, s],
        power_log_std=np.clip(out[:, s + 1], LOG_STD_MIN, LOG_STD_MAX),
        bandwidth_mean=out[:, s + 2],
        bandwidth_log_std=np.clip(out[:, s + 3], LOG_STD_MIN, LOG_STD_MAX),
    )


def joint_log_prob(output: HybridPolicyOutput, scm_index: np.ndarray,
                   power_presquash: np.ndarray,
                   bandwidth_presquash: np.ndarray) -> float:
    """Joint log-density of one action, factorized over users and components.

    The continuous parts are densities of the squashed fractions, evaluated
    at their pre-squash values z: Normal(z) plus the logistic Jacobian term.
    """
    log_p = _log_softmax(output.logits)
    total = float(log_p[np.arange(len(scm_index)), scm_index].sum())
    for z, mu, log_std in (
            (power_presquash, output.power_mean, output.power_log_std),
            (bandwidth_presquash, output.bandwidth_mean, output.bandwidth_log_std)):
        t = (z - mu) / np.exp(log_std)
        gauss = -0.5 * t ** 2 - log_std - 0.5 * LOG_2PI
        total += float((gauss + _softplus(z) + _softplus(-z)).sum())
    return total


def joint_entropy(output: HybridPolicyOutput) -> float:
    """Categorical entropy plus pre-squash Gaussian differential entropy."""
    log_p = _log_softmax(output.logits)
    cat = float(-(np.exp(log_p) * log_p).sum())
    gauss_const = 0.5 * (1.0 + LOG_2PI)
    cont = float((gauss_const + output.power_log_std).sum()
                 + (gauss_const + output.bandwidth_log_std).sum())
    return cat + cont


def sample_action(policy: Mlp, observation: np.ndarray,
                  rng: np.random.Generator | None,
                  deterministic: bool = False
                  ) -> tuple[Action, float, HybridPolicyOutput]:
    """Draw one joint action (or take argmax/mean when deterministic)."""
    action, log_prob, output, _, _ = _sample_with_presquash(
        policy, observation, rng, deterministic)
    return action, log_prob, output


def _sample_with_presquash(policy: Mlp, observation: np.ndarray,
                           rng: np.random.Generator | None,
                           deterministic: bool = False):
    output = policy_output(policy, observation)
    m, s = output.logits.shape
    if deterministic:
        scm = np.argmax(output.logits, axis=1)
        z_p = output.power_mean.copy()
        z_b = output.bandwidth_mean.copy()
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs a random generator")
        probs = np.exp(_log_softmax(output.logits))
        u = rng.random(m)
        scm = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1),
                         s - 1)
        noise = rng.standard_normal((m, 2))
        z_p = output.power_mean + np.exp(output.power_log_std) * noise[:, 0]
        z_b = output.bandwidth_mean + np.exp(output.bandwidth_log_std) * noise[:, 1]
    action = Action(scm_index=scm.astype(np.int64),
                    power_fraction=_sigmoid(z_p),
                    bandwidth_fraction=_sigmoid(z_b))
    return action, joint_log_prob(output, scm, z_p, z_b), output, z_p, z_b


def state_values(value_net: Mlp, obs_batch: np.ndarray) -> np.ndarray:
    """Mean-pooled per-user critic: (B, 3M) -> (B,)."""
    obs2 = np.atleast_2d(obs_batch)
    b = obs2.shape[0]
    rows = user_feature_rows(obs2)
    return value_net(rows).reshape(b, -1).mean(axis=1)


@dataclass(frozen=True)
class Trajectory:
    """One rollout: aligned per-step records plus a terminal bootstrap value."""

    observations: np.ndarray        # (T, 3M)
    scm_indices: np.ndarray         # (T, M)
    power_presquash: np.ndarray     # (T, M)
    bandwidth_presquash: np.ndarray # (T, M)
    log_probs: np.ndarray           # (T,)
    values: np.ndarray              # (T,)
    rewards: np.ndarray             # (T,)
    dones: np.ndarray               # (T,) bool
    bootstrap_value: float = 0.0

    def __post_init__(self) -> None:
        t = len(self.rewards)
        for name in ("observations", "scm_indices", "power_presquash",
                     "bandwidth_presquash", "log_probs", "values", "dones"):
            if len(getattr(self, name)) != t:
                raise ValueError(f"{name} length differs from rewards")
        if t == 0:
            raise ValueError("trajectory is empty")
        if not np.all(np.isfinite(self.log_probs)):
            raise ValueError("non-finite log-probabilities in trajectory")

    def __len__(self) -> int:
        return len(self.rewards)


def compute_gae(traj: Trajectory, gamma: float,
                gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) over TD residuals, reset at done flags.

    The value after the final step is `traj.bootstrap_value` (zero when the
    rollout ends exactly at a terminal).  With gae_lambda = 1 the advantages
    reduce to discounted Monte-Carlo returns minus values.
    """
    t = len(traj)
    advantages = np.empty(t)
    next_value = traj.bootstrap_value
    running = 0.0
    for i in reversed(range(t)):
        not_done = 0.0 if traj.dones[i] else 1.0
        delta = traj.rewards[i] + gamma * next_value * not_done - traj.values[i]
        running = delta + gamma * gae_lambda * not_done * running
        advantages[i] = running
        next_value = traj.values[i]
    return advantages, advantages + traj.values


def clipped_policy_loss(new_logp: np.ndarray, old_logp: np.ndarray,
                        advantages: np.ndarray, clip_epsilon: float) -> float:
    """Mean of -min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    ratio = np.exp(new_logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return float(-np.minimum(ratio * advantages, clipped * advantages).mean())


def value_loss(values: np.ndarray, returns: np.ndarray) -> float:
    return float(np.mean((values - returns) ** 2))


def total_loss(policy_loss: float, value_loss: float, entropy: float,
               value_coef: float, entropy_coef: float) -> float:
    return policy_loss + value_coef * value_loss - entropy_coef * entropy


@dataclass(frozen=True)
class MinibatchData:
    """Frozen slice of a trajectory, advantages already normalized."""

    observations: np.ndarray        # (B, 3M)
    scm_indices: np.ndarray         # (B, M)
    power_presquash: np.ndarray     # (B, M)
    bandwidth_presquash: np.ndarray # (B, M)
    old_log_probs: np.ndarray       # (B,)
    advantages: np.ndarray          # (B,)
    returns: np.ndarray             # (B,)


@dataclass(frozen=True)
class LossReport:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float


def minibatch_loss_and_grads(policy: Mlp, value_net: Mlp, batch: MinibatchData,
                             config: PpoConfig
                             ) -> tuple[LossReport, list[np.ndarray], list[np.ndarray]]:
    """Evaluate the combined loss and its exact parameter gradients.

    All loss derivatives are assembled at the network heads in closed form
    (softmax, Gaussian, clip dead-zone and entropy terms), then pushed
    through backprop.  Gradients where the log-std clamp is active are
    masked to zero, matching the clamp's true (sub)gradient.
    """
    b = batch.observations.shape[0]
    m = batch.scm_indices.shape[1]

    rows = user_feature_rows(batch.observations)
    out_rows, cache = policy.forward(rows)
    s = out_rows.shape[1] - NUM_CONTINUOUS_HEADS
    out = out_rows.reshape(b, m, s + NUM_CONTINUOUS_HEADS)

    logits = out[:, :, :s]
    log_p = _log_softmax(logits)
    probs = np.exp(log_p)
    mu = out[:, :, [s, s + 2]]                        # (B, M, 2)
    raw_log_std = out[:, :, [s + 1, s + 3]]
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    clamp_mask = ((raw_log_std > LOG_STD_MIN)
                  & (raw_log_std < LOG_STD_MAX)).astype(np.float64)
    sigma = np.exp(log_std)
    z = np.stack([batch.power_presquash, batch.bandwidth_presquash], axis=2)
    t_std = (z - mu) / sigma

    user_idx = np.arange(m)
    batch_idx = np.arange(b)[:, None]
    cat_logp = log_p[batch_idx, user_idx, batch.scm_indices]   # (B, M)
    gauss_logp = -0.5 * t_std ** 2 - log_std - 0.5 * LOG_2PI
    squash = _softplus(z) + _softplus(-z)
    new_logp = cat_logp.sum(axis=1) + (gauss_logp + squash).sum(axis=(1, 2))

    ratio = np.exp(new_logp - batch.old_log_probs)
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon,
                      1.0 + config.clip_epsilon) * batch.advantages
    pl = float(-np.minimum(unclipped, clipped).mean())

    cat_entropy = -(probs * log_p).sum(axis=2)         # (B, M)
    gauss_entropy = 0.5 * (1.0 + LOG_2PI) + log_std    # (B, M, 2)
    entropy_per_sample = cat_entropy.sum(axis=1) + gauss_entropy.sum(axis=(1, 2))
    ent = float(entropy_per_sample.mean())

    values = state_values(value_net, batch.observations)
    vl = value_loss(values, batch.returns)
    total = total_loss(pl, vl, ent, config.value_coef, config.entropy_coef)
    if not math.isfinite(total):
        raise FloatingPointError("non-finite loss in minibatch update")

    # dL/d(new_logp): active only where the unclipped branch attains the min.
    use_unclipped = (unclipped <= clipped).astype(np.float64)
    dl_dlogp = -(ratio * batch.advantages * use_unclipped) / b  # (B,)

    head_grad = np.zeros_like(out)
    one_hot = np.zeros_like(probs)
    one_hot[batch_idx, user_idx, batch.scm_indices] = 1.0
    head_grad[:, :, :s] = dl_dlogp[:, None, None] * (one_hot - probs)
    # entropy bonus on logits: dH/dlogit_j = -p_j (log p_j + H)
    dh_dlogits = -probs * (log_p + cat_entropy[:, :, None])
    head_grad[:, :, :s] += (-config.entropy_coef / b) * dh_dlogits

    dlogp_dmu = t_std / sigma
    dlogp_dlogstd = (t_std ** 2 - 1.0) * clamp_mask
    grad_mu = dl_dlogp[:, None, None] * dlogp_dmu
    grad_logstd = (dl_dlogp[:, None, None] * dlogp_dlogstd
                   + (-config.entropy_coef / b) * clamp_mask)
    head_grad[:, :, s] = grad_mu[:, :, 0]
    head_grad[:, :, s + 1] = grad_logstd[:, :, 0]
    head_grad[:, :, s + 2] = grad_mu[:, :, 1]
    head_grad[:, :, s + 3] = grad_logstd[:, :, 1]

    policy_grads = policy.backward(
        cache, head_grad.reshape(b * m, s + NUM_CONTINUOUS_HEADS))

    value_rows = user_feature_rows(batch.observations)
    v_out, v_cache = value_net.forward(value_rows)
    dv = (config.value_coef * 2.0 / b) * (values - batch.returns) / m
    value_grads = value_net.backward(
        v_cache, np.repeat(dv, m).reshape(b * m, 1))

    return LossReport(pl, vl, ent, total), policy_grads, value_grads


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


def collect_rollout(env: EnvLike, policy: Mlp, value_net: Mlp, num_steps: int,
                    env_rng: np.random.Generator,
                    action_rng: np.random.Generator
                    ) -> tuple[Trajectory, list[float]]:
    """Run the policy for a fixed number of steps, restarting episodes as
    they finish.  Returns the trajectory and the completed-episode returns."""
    observations, scms, z_ps, z_bs = [], [], [], []
    log_probs, values, rewards, dones = [], [], [], []
    episode_returns: list[float] = []

    obs = env.reset(env_rng)
    episode_return = 0.0
    done = False
    for _ in range(num_steps):
        action, log_prob, _, z_p, z_b = _sample_with_presquash(
            policy, obs, action_rng)
        value = float(state_values(value_net, obs)[0])
        next_obs, reward, done, _ = env.step(action, env_rng)

        observations.append(obs)
        scms.append(action.scm_index)
        z_ps.append(z_p)
        z_bs.append(z_b)
        log_probs.append(log_prob)
        values.append(value)
        rewards.append(reward)
        dones.append(done)

        episode_return += reward
        if done:
            episode_returns.append(episode_return)
            episode_return = 0.0
            obs = env.reset(env_rng)
        else:
            obs = next_obs

    bootstrap = 0.0 if done else float(state_values(value_net, obs)[0])
    traj = Trajectory(
        observations=np.asarray(observations),
        scm_indices=np.asarray(scms),
        power_presquash=np.asarray(z_ps),
        bandwidth_presquash=np.asarray(z_bs),
        log_probs=np.asarray(log_probs),
        values=np.asarray(values),
        rewards=np.asarray(rewards),
        dones=np.asarray(dones),
        bootstrap_value=bootstrap,
    )
    return traj, episode_returns


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_episode_reward: float
    std_episode_reward: float
    policy_loss: float
    value_loss: float
    entropy: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats]
    policy: Mlp
    value: Mlp

    def mean_rewards(self) -> np.ndarray:
        return np.asarray([e.mean_episode_reward for e in self.epochs])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_episode_reward",
                             "std_episode_reward", "policy_loss",
                             "value_loss", "entropy"])
            for e in self.epochs:
                writer.writerow([e.epoch,
                                 f"{e.mean_episode_reward:.12g}",
                                 f"{e.std_episode_reward:.12g}",
                                 f"{e.policy_loss:.12g}",
                                 f"{e.value_loss:.12g}",
                                 f"{e.entropy:.12g}"])


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; carries the epoch for diagnostics."""

    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


def exponential_moving_average(values: np.ndarray,
                               factor: float = 0.9) -> np.ndarray:
    """Smoothing used for convergence reporting; raw values stay in CSVs."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    running = values[0]
    for i, v in enumerate(values):
        running = factor * running + (1.0 - factor) * v
        out[i] = running
    return out


def train(env_factory: Callable[[object], EnvLike], ppo_config: PpoConfig,
          env_config: object, seed: int,
          progress: Callable[[EpochStats], None] | None = None
          ) -> TrainingReport:
    """Full training loop: collect, estimate advantages, update, clear.

    `env_factory(env_config)` must build a fresh environment.  Everything
    downstream of `seed` is deterministic: separate child generators drive
    environment dynamics, action sampling, minibatch shuffling and parameter
    initialization.
    """
    children = np.random.SeedSequence(seed).spawn(4)
    init_rng, env_rng, action_rng, update_rng = map(np.random.default_rng,
                                                    children)
    env = env_factory(env_config)
    s = env.num_models
    policy = Mlp([3, *ppo_config.hidden_sizes, s + NUM_CONTINUOUS_HEADS],
                 init_rng, output_gain=0.01)
    value_net = Mlp([3, *ppo_config.hidden_sizes, 1], init_rng,
                    output_gain=1.0)
    policy_opt = Adam(learning_rate=ppo_config.learning_rate,
                      max_grad_norm=ppo_config.max_grad_norm)
    value_opt = Adam(learning_rate=ppo_config.learning_rate,
                     max_grad_norm=ppo_config.max_grad_norm)

    stats: list[EpochStats] = []
    for epoch in range(ppo_config.epochs):
        losses: list[LossReport] = []
        try:
            traj, episode_returns = collect_rollout(
                env, policy, value_net, ppo_config.rollout_steps, env_rng,
                action_rng)
            advantages, returns = compute_gae(traj, ppo_config.gamma,
                                              ppo_config.gae_lambda)
            for _ in range(ppo_config.update_epochs):
                perm = update_rng.permutation(len(traj))
                for start in range(0, len(traj), ppo_config.minibatch_size):
                    idx = perm[start:start + ppo_config.minibatch_size]
                    batch = MinibatchData(
                        observations=traj.observations[idx],
                        scm_indices=traj.scm_indices[idx],
                        power_presquash=traj.power_presquash[idx],
                        bandwidth_presquash=traj.bandwidth_presquash[idx],
                        old_log_probs=traj.log_probs[idx],
                        advantages=normalize_advantages(advantages[idx]),
                        returns=returns[idx],
                    )
                    report, policy_grads, value_grads = \
                        minibatch_loss_and_grads(policy, value_net, batch,
                                                 ppo_config)
                    losses.append(report)
                    policy.set_params(policy_opt.update(policy.params,
                                                        policy_grads))
                    value_net.set_params(value_opt.update(value_net.params,
                                                          value_grads))
        except FloatingPointError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc

        if not episode_returns:  # rollout shorter than one episode
            episode_returns = [float(np.sum(traj.rewards))]
        row = EpochStats(
            epoch=epoch,
            mean_episode_reward=float(np.mean(episode_returns)),
            std_episode_reward=float(np.std(episode_returns)),
            policy_loss=float(np.mean([l.policy_loss for l in losses])),
            value_loss=float(np.mean([l.value_loss for l in losses])),
            entropy=float(np.mean([l.entropy for l in losses])),
        )
        stats.append(row)
        if progress is not None:
            progress(row)
    return TrainingReport(epochs=stats, policy=policy, value=value_net)
