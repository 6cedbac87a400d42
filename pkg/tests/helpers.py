"""Shared test utilities."""

from __future__ import annotations

from pathlib import Path

import numpy as np

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class BanditEnv:
    """Degenerate one-user, one-step environment.

    The observation is constant and the reward depends only on the chosen
    SCM index, so a competent policy-gradient learner must drive its
    categorical argmax to the best arm.
    """

    def __init__(self, arm_rewards):
        self.arm_rewards = np.asarray(arm_rewards, dtype=np.float64)
        self.num_users = 1
        self.num_models = len(self.arm_rewards)
        self._done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._done = False
        return np.ones(3)

    def step(self, action, rng: np.random.Generator):
        if self._done:
            raise RuntimeError("episode already finished")
        self._done = True
        reward = float(self.arm_rewards[int(action.scm_index[0])])
        return np.ones(3), reward, True, None
