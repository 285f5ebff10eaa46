from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    ref_logprob: np.ndarray
    behavior_logprob: np.ndarray
    index: np.ndarray
    ref_mean: np.ndarray = None
    next_ref_mean: np.ndarray = None

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions.

    ``ref_logprob`` is the reference policy's (floored) log-density of the
    executed action and ``behavior_logprob`` the acting policy's, both taken
    once at insertion. ``ref_mean``/``next_ref_mean`` cache the reference
    policy's mean at both observations for critics anchored on it.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int = 2):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.ref_logprob = np.zeros(capacity)
        self.behavior_logprob = np.zeros(capacity)
        self.ref_mean = np.zeros((capacity, action_dim))
        self.next_ref_mean = np.zeros((capacity, action_dim))
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done, ref_logprob, behavior_logprob=0.0,
            ref_mean=0.0, next_ref_mean=0.0) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.ref_logprob[i] = ref_logprob
        self.behavior_logprob[i] = behavior_logprob
        self.ref_mean[i] = ref_mean
        self.next_ref_mean[i] = next_ref_mean
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform batch without replacement from the stored transitions."""
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} stored transitions")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(
            self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx],
            self.done[idx], self.ref_logprob[idx], self.behavior_logprob[idx], idx,
            self.ref_mean[idx], self.next_ref_mean[idx],
        )
