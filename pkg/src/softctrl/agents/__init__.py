"""Learners: behavioural-cloning teacher, replay buffer and the soft actor-critic family."""
from .bc import BcConfig, build_dataset, recovery_action, train_bc
from .replay import Batch, ReplayBuffer
from .sac import CriticPair, SacConfig, SacLearner, lr_at, weights_to_tau_alpha
from .training import ActorAgent, ReferenceAgent, TrainConfig, TrainResult, train_rl

__all__ = [
    "ActorAgent", "Batch", "BcConfig", "CriticPair", "ReferenceAgent", "ReplayBuffer", "SacConfig",
    "SacLearner", "TrainConfig", "TrainResult", "build_dataset", "lr_at", "recovery_action",
    "train_bc", "train_rl", "weights_to_tau_alpha",
]
