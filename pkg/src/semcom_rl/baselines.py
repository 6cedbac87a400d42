"""Non-learning reference strategies for the comparison harness.

Three comparators: fully random selection/allocation, a fixed model with
equal resource splits, and a myopic per-user rate-distortion-efficiency
maximizer that ignores compute power and latency (and therefore tends to
run into the global constraint penalties).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .channel import LinkAllocation, transmission_rate
from .environment import Action, EnvConfig, EnvState, distortion


class StrategyKind(Enum):
    RANDOM = "random"
    AVERAGE = "average"
    HEURISTIC_RDE = "heuristic_rde"
    LEARNED_POLICY = "learned"


def random_policy(state: EnvState, rng: np.random.Generator,
                  config: EnvConfig) -> Action:
    """Uniform SCM choice and uniform fractions for every user."""
    m = config.num_users
    return Action(
        scm_index=rng.integers(0, config.num_models, size=m),
        power_fraction=rng.random(m),
        bandwidth_fraction=rng.random(m),
    )


def average_policy(state: EnvState, config: EnvConfig,
                   fixed_scm: int = 1) -> Action:
    """One fixed model for everyone, budgets split exactly equally.

    Power fraction 1 decodes to exactly P_max/M per user; equal bandwidth
    fractions decode to exactly B_max/M through the softmax.
    """
    if not 0 <= fixed_scm < config.num_models:
        raise ValueError(
            f"fixed_scm {fixed_scm} outside catalog of {config.num_models}")
    m = config.num_users
    return Action(
        scm_index=np.full(m, fixed_scm, dtype=np.int64),
        power_fraction=np.ones(m),
        bandwidth_fraction=np.full(m, 0.5),
    )


def heuristic_rde_policy(state: EnvState, config: EnvConfig) -> Action:
    """Greedy per-user efficiency: argmax_s rate / (lambda * D_s + eps).

    Resources are split equally, and compute power and latency are ignored
    on purpose; with channel-independent distortions the score reduces to
    the distortion argmin, so the strategy trades penalties for raw
    efficiency.  Ties resolve to the lowest index.
    """
    m = config.num_users
    tx_power = config.total_power / m
    bandwidth = config.total_bandwidth / m
    choice = np.empty(m, dtype=np.int64)
    for u in range(m):
        link = LinkAllocation(tx_power=tx_power,
                              channel_gain=float(state.channel_gains[u]),
                              bandwidth=bandwidth)
        rate = transmission_rate(link, config.channel)
        scores = [rate / (config.rde_lambda * distortion(profile, config)
                          + config.rde_epsilon)
                  for profile in config.catalog.profiles]
        choice[u] = int(np.argmax(scores))
    return Action(
        scm_index=choice,
        power_fraction=np.ones(m),
        bandwidth_fraction=np.full(m, 0.5),
    )
