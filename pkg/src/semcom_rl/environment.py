"""Episodic multi-user environment for joint SCM selection and resource allocation.

One step: every user picks a compression model (discrete) plus a power and a
bandwidth fraction (continuous).  The decoder turns fractions into feasible
allocations (bandwidths always sum to the system budget; transmit power is
capped per user), the wireless layer yields per-user rates and latencies, and
the reward is the rate-distortion efficiency minus hinge penalties for
exceeding the total power budget or the per-user latency cap:

    reward = sum(r) / (lambda * sum(D) + eps)
             - gamma1 * max(0, total_power - P_max)
             - gamma2 * sum_m max(0, tau_c_m + tau_t_m - tau_max)

Only violations are charged; staying under budget earns nothing.  Channel
gains are resampled i.i.d. every step; the remaining-resource fields decay
with usage and are observation-only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import ScmCatalog
from .channel import ChannelParams, LinkAllocation, sample_channel_gains, transmission_rate, transmission_latency

MILLIWATTS_PER_WATT = 1000.0


@dataclass(frozen=True)
class EnvConfig:
    """System budgets, reward weights and episode shape."""

    catalog: ScmCatalog
    num_users: int = 6
    total_bandwidth: float = 30e6      # Hz
    total_power: float = 3.0           # W
    latency_cap: float = 12.0          # s, per user
    rde_lambda: float = 1e4
    rde_epsilon: float = 1e-5
    gamma1: float = 0.3
    gamma2: float = 0.2
    episode_length: int = 32
    distortion_scale: float = 30.0
    latency_sentinel: float = 100.0    # s, clamp for the zero-rate limit
    channel: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self) -> None:
        positive = ("total_bandwidth", "total_power", "latency_cap", "rde_lambda",
                    "rde_epsilon", "gamma1", "gamma2", "distortion_scale",
                    "latency_sentinel")
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.num_users < 1:
            raise ValueError(f"num_users must be >= 1, got {self.num_users}")
        if self.episode_length < 1:
            raise ValueError(f"episode_length must be >= 1, got {self.episode_length}")
        if self.latency_sentinel <= self.latency_cap:
            raise ValueError("latency_sentinel must exceed latency_cap")

    @property
    def num_models(self) -> int:
        return len(self.catalog)

    @property
    def observation_dim(self) -> int:
        return 3 * self.num_users


@dataclass(frozen=True)
class EnvState:
    """Per-user channel gains and remaining (observation-only) budgets."""

    step_index: int
    channel_gains: np.ndarray        # (M,)
    remaining_power: np.ndarray      # (M,) W
    remaining_bandwidth: np.ndarray  # (M,) Hz


@dataclass(frozen=True)
class Action:
    """One SCM index per user plus raw power/bandwidth fractions in [0, 1]."""

    scm_index: np.ndarray           # (M,) int
    power_fraction: np.ndarray      # (M,) in [0, 1]
    bandwidth_fraction: np.ndarray  # (M,) in [0, 1]

    def validate(self, config: EnvConfig) -> None:
        m, s = config.num_users, config.num_models
        if self.scm_index.shape != (m,):
            raise ValueError(f"scm_index must have shape ({m},)")
        if self.power_fraction.shape != (m,) or self.bandwidth_fraction.shape != (m,):
            raise ValueError(f"fraction arrays must have shape ({m},)")
        if np.any(self.scm_index < 0) or np.any(self.scm_index >= s):
            raise ValueError(f"scm_index entries must lie in [0, {s})")
        for name, arr in (("power_fraction", self.power_fraction),
                          ("bandwidth_fraction", self.bandwidth_fraction)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"{name} entries must be finite and in [0, 1]")


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    rde: float
    per_user_rate: np.ndarray
    per_user_latency: np.ndarray
    per_user_distortion: np.ndarray
    total_power_used: float
    power_violation: float
    latency_violation: float
    next_state: EnvState
    done: bool


class EpisodeFinished(RuntimeError):
    """Raised when step() is called on an already-finished episode."""


def decode_allocation(action: Action, config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Map raw fractions to (tx_power W, bandwidth Hz) per user.

    Bandwidth fractions are softmax-normalized so the shares always sum to
    the full system bandwidth.  Transmit power is `fraction * P_max / M`:
    the per-user cap keeps total transmit power within budget, so only the
    SCM compute draw can push the aggregate over P_max.
    """
    weights = np.exp(action.bandwidth_fraction - np.max(action.bandwidth_fraction))
    bandwidth = config.total_bandwidth * weights / weights.sum()
    tx_power = action.power_fraction * (config.total_power / config.num_users)
    return tx_power, bandwidth


def distortion(profile, config: EnvConfig) -> float:
    """Reconstruction distortion charged for one user of the given model."""
    return config.distortion_scale * profile.distortion_proxy


def rde(rates, distortions, config: EnvConfig) -> float:
    """Rate-distortion efficiency: total rate over weighted total distortion."""
    return float(np.sum(rates)) / (config.rde_lambda * float(np.sum(distortions))
                                   + config.rde_epsilon)


def reset(rng: np.random.Generator, config: EnvConfig) -> EnvState:
    """Fresh episode state: new gains, budgets split equally across users."""
    m = config.num_users
    return EnvState(
        step_index=0,
        channel_gains=sample_channel_gains(rng, config.channel, m),
        remaining_power=np.full(m, config.total_power / m),
        remaining_bandwidth=np.full(m, config.total_bandwidth / m),
    )


def step(state: EnvState, action: Action, rng: np.random.Generator,
         config: EnvConfig) -> StepOutcome:
    """Apply one joint action and advance the episode."""
    if state.step_index >= config.episode_length:
        raise EpisodeFinished(
            f"episode of length {config.episode_length} is already finished")
    action.validate(config)

    tx_power, bandwidth = decode_allocation(action, config)
    m = config.num_users
    rates = np.empty(m)
    latencies = np.empty(m)
    distortions = np.empty(m)
    compute_power = np.empty(m)
    for u in range(m):
        profile = config.catalog[int(action.scm_index[u])]
        link = LinkAllocation(tx_power=float(tx_power[u]),
                              channel_gain=float(state.channel_gains[u]),
                              bandwidth=float(bandwidth[u]))
        rates[u] = transmission_rate(link, config.channel)
        tau_t = transmission_latency(profile.payload_bits, rates[u])
        latencies[u] = min(profile.inference_time_per_image + tau_t,
                           config.latency_sentinel)
        distortions[u] = distortion(profile, config)
        compute_power[u] = profile.compute_power / MILLIWATTS_PER_WATT

    total_power = float(np.sum(compute_power) + np.sum(tx_power))
    power_violation = max(0.0, total_power - config.total_power)
    latency_violation = float(np.sum(np.maximum(0.0, latencies - config.latency_cap)))
    efficiency = rde(rates, distortions, config)
    reward = (efficiency
              - config.gamma1 * power_violation
              - config.gamma2 * latency_violation)

    next_state = EnvState(
        step_index=state.step_index + 1,
        channel_gains=sample_channel_gains(rng, config.channel, m),
        remaining_power=np.maximum(0.0, state.remaining_power - (compute_power + tx_power)),
        remaining_bandwidth=np.maximum(0.0, state.remaining_bandwidth - bandwidth),
    )
    return StepOutcome(
        reward=reward,
        rde=efficiency,
        per_user_rate=rates,
        per_user_latency=latencies,
        per_user_distortion=distortions,
        total_power_used=total_power,
        power_violation=power_violation,
        latency_violation=latency_violation,
        next_state=next_state,
        done=next_state.step_index >= config.episode_length,
    )


def encode_observation(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Flat observation [gains | remaining power | remaining bandwidth].

    Each block is normalized to keep features near unit scale: gains by
    their mean 2*sigma^2, budgets by the system totals.
    """
    gain_scale = 2.0 * config.channel.rayleigh_sigma ** 2
    return np.concatenate([
        state.channel_gains / gain_scale,
        state.remaining_power / config.total_power,
        state.remaining_bandwidth / config.total_bandwidth,
    ])


def per_user_features(observation: np.ndarray, num_users: int) -> np.ndarray:
    """Reshape a flat observation into one (gain, power, bandwidth) row per user."""
    return observation.reshape(3, num_users).T


class SemComEnv:
    """Stateful wrapper around the functional reset/step core.

    A single instance is not thread-safe; run parallel episodes on separate
    instances with independent random generators.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self._state: EnvState | None = None

    @property
    def num_users(self) -> int:
        return self.config.num_users

    @property
    def num_models(self) -> int:
        return self.config.num_models

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = reset(rng, self.config)
        return encode_observation(self._state, self.config)

    def step(self, action: Action, rng: np.random.Generator
             ) -> tuple[np.ndarray, float, bool, StepOutcome]:
        outcome = step(self.state, action, rng, self.config)
        self._state = outcome.next_state
        obs = encode_observation(outcome.next_state, self.config)
        return obs, outcome.reward, outcome.done, outcome


def write_episode_trace(path: str | Path, actions: list[Action],
                        outcomes: list[StepOutcome]) -> None:
    """Dump one episode as CSV, one row per (step, user)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "user", "scm_index", "tx_power_fraction",
                         "bandwidth_fraction", "rate_bps", "latency_s",
                         "distortion", "rde", "power_violation",
                         "latency_violation", "reward"])
        for t, (action, out) in enumerate(zip(actions, outcomes)):
            for u in range(len(action.scm_index)):
                writer.writerow([
                    t, u, int(action.scm_index[u]),
                    f"{action.power_fraction[u]:.12g}",
                    f"{action.bandwidth_fraction[u]:.12g}",
                    f"{out.per_user_rate[u]:.12g}",
                    f"{out.per_user_latency[u]:.12g}",
                    f"{out.per_user_distortion[u]:.12g}",
                    f"{out.rde:.12g}",
                    f"{out.power_violation:.12g}",
                    f"{out.latency_violation:.12g}",
                    f"{out.reward:.12g}",
                ])
