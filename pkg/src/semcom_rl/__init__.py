"""Multi-user semantic-communication resource allocation with PPO.

Simulates users that each pick a semantic compression model and receive
power/bandwidth allocations over a Rayleigh-fading channel, and trains a
proximal-policy-optimization agent (no learning frameworks) to maximize
rate-distortion efficiency under power and latency penalties.
"""

from .baselines import (StrategyKind, average_policy, heuristic_rde_policy,
                        random_policy)
from .catalog import (CatalogError, ScmCatalog, ScmProfile, load_catalog,
                      per_image_inference_time, save_catalog)
from .channel import (ChannelParams, LinkAllocation, sample_channel_gains,
                      transmission_latency, transmission_rate)
from .config import (ConfigError, EvaluationConfig, ExperimentConfig,
                     config_fingerprint, load_experiment_config,
                     validate_experiment_config)
from .environment import (Action, EnvConfig, EnvState, EpisodeFinished,
                          SemComEnv, StepOutcome, decode_allocation,
                          distortion, encode_observation, rde, reset, step)
from .nets import Adam, Mlp, load_checkpoint, save_checkpoint
from .ppo import (HybridPolicyOutput, LossReport, MinibatchData, PpoConfig,
                  Trajectory, TrainingDiverged, TrainingReport,
                  clipped_policy_loss, collect_rollout, compute_gae,
                  exponential_moving_average, joint_entropy, joint_log_prob,
                  minibatch_loss_and_grads, policy_output, sample_action,
                  state_values, total_loss, train, value_loss)

__version__ = "0.1.0"

__all__ = [
    "Action", "Adam", "CatalogError", "ChannelParams", "ConfigError",
    "EnvConfig", "EnvState", "EpisodeFinished", "EvaluationConfig",
    "ExperimentConfig", "HybridPolicyOutput", "LinkAllocation", "LossReport",
    "MinibatchData", "Mlp", "PpoConfig", "ScmCatalog", "ScmProfile",
    "SemComEnv", "StepOutcome", "StrategyKind", "Trajectory",
    "TrainingDiverged", "TrainingReport", "average_policy",
    "clipped_policy_loss", "collect_rollout", "compute_gae",
    "config_fingerprint", "decode_allocation", "distortion",
    "encode_observation", "exponential_moving_average",
    "heuristic_rde_policy", "joint_entropy", "joint_log_prob",
    "load_catalog", "load_checkpoint", "load_experiment_config",
    "minibatch_loss_and_grads", "per_image_inference_time", "policy_output",
    "random_policy", "rde", "reset", "sample_action", "sample_channel_gains",
    "save_catalog", "save_checkpoint", "state_values", "step", "total_loss",
    "train", "transmission_latency", "transmission_rate", "validate_experiment_config",
    "value_loss",
]
