"""Behavioural cloning with state perturbation (the reference policy's trainer)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kinematics as kin
from ..errors import DegenerateTarget
from ..neuralnet import Adam, Mlp, ReferencePolicy
from ..scenario import Scenario, ego_speeds, expert_actions
from ..simulator import SimConfig, build_observation, log_history, scene_arrays


@dataclass(frozen=True)
class BcConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    perturb_prob: float = 0.5
    lateral_std: float = 0.5
    heading_std: float = 0.1
    recovery_horizon: int = 10
    encoder_hidden: tuple = (128, 128)
    head_hidden: tuple = (64, 64)
    max_resample: int = 10


def build_networks(obs_dim: int, sim: SimConfig, bc: BcConfig, rng) -> ReferencePolicy:
    encoder = Mlp(
        [obs_dim, *bc.encoder_hidden], rng, activate_output=True, input_scale=sim.layout.feature_scale()
    )
    head = Mlp([bc.encoder_hidden[-1], *bc.head_hidden, 2], rng, final_scale=0.1)
    return ReferencePolicy(encoder, head)


def recovery_action(s: Scenario, t: int, pose: kin.Pose, speed: float, horizon: int) -> kin.Action:
    """Label steering a displaced ego back toward the logged path.

    The target keeps the expert's next speed but points the heading at the
    logged position ``horizon`` frames ahead, so the inverse dynamics stays
    exact while the steer sign corrects lateral and heading offsets.
    """
    v_next = float(ego_speeds(s)[t + 1])
    look = s.ego_log[min(t + horizon, s.num_frames - 1)]
    gx, gy = look[0] - pose.x, look[1] - pose.y
    if v_next <= 0.0 or math.hypot(gx, gy) < 1.0:
        heading = float(s.ego_log[t + 1, 2])
    else:
        heading = math.atan2(gy, gx)
    target = kin.Pose(pose.x + v_next * math.cos(heading), pose.y + v_next * math.sin(heading), kin.wrap_angle(heading))
    return kin.inverse_action(kin.EgoState(pose, speed), kin.to_local(pose, target))


def perturb_pose(pose: kin.Pose, lateral: float, dheading: float) -> kin.Pose:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return kin.Pose(pose.x - s * lateral, pose.y + c * lateral, kin.wrap_angle(pose.theta + dheading))


def build_dataset(scenarios, sim: SimConfig, bc: BcConfig, rng: np.random.Generator):
    """(observations, actions, perturbed-flags) over every logged frame of every scene.

    Actions are returned divided by the action bounds, i.e. in [-1, 1].
    """
    layout = sim.layout
    bounds = sim.kinematics.action_bounds
    obs_rows, act_rows, flags = [], [], []
    for s in scenarios:
        arrays = scene_arrays(s)
        expert = expert_actions(s)
        speeds = ego_speeds(s)
        for t in range(s.num_frames - 1):
            pose = s.ego_pose(t)
            action = expert[t]
            perturbed = rng.random() < bc.perturb_prob
            if perturbed:
                for _ in range(bc.max_resample):
                    candidate = perturb_pose(
                        s.ego_pose(t), rng.normal(0.0, bc.lateral_std), rng.normal(0.0, bc.heading_std)
                    )
                    try:
                        label = recovery_action(s, t, candidate, float(speeds[t]), bc.recovery_horizon)
                    except DegenerateTarget:
                        continue
                    pose, action = candidate, label.as_array()
                    break
                else:
                    perturbed = False
            history = log_history(s, t, layout.history)
            obs_rows.append(build_observation(arrays, layout, t, pose, float(speeds[t]), history))
            act_rows.append(np.clip(np.asarray(action) / bounds, -1.0, 1.0))
            flags.append(perturbed)
    return np.array(obs_rows), np.array(act_rows), np.array(flags)


def train_bc(scenarios, sim: SimConfig = SimConfig(), bc: BcConfig = BcConfig(), seed: int = 0,
             dataset=None, log=None):
    """Fit the reference policy's mean network by Gaussian NLL with fixed deviation.

    Returns ``(policy, history)`` where ``history`` lists the full-dataset NLL
    after each epoch (entry 0 is before training).
    """
    if not scenarios and dataset is None:
        raise ValueError("train_bc needs at least one scenario")
    seeds = np.random.SeedSequence(seed).spawn(3)
    data_rng, init_rng, order_rng = (np.random.default_rng(s) for s in seeds)
    if dataset is None:
        obs, actions, _ = build_dataset(scenarios, sim, bc, data_rng)
    else:
        obs, actions = dataset[0], dataset[1]
    policy = build_networks(obs.shape[1], sim, bc, init_rng)
    opt = Adam(policy.params, lr=bc.lr)
    history = [dataset_nll(policy, obs, actions)]
    n = len(obs)
    for epoch in range(bc.epochs):
        order = order_rng.permutation(n)
        for lo in range(0, n, bc.batch_size):
            idx = order[lo: lo + bc.batch_size]
            _, grads = policy.nll_and_grads(obs[idx], actions[idx])
            opt.step(grads)
        history.append(dataset_nll(policy, obs, actions))
        if log is not None:
            log(epoch + 1, history[-1])
    return policy, history


def dataset_nll(policy: ReferencePolicy, obs, actions, chunk=4096) -> float:
    total = 0.0
    for lo in range(0, len(obs), chunk):
        mu = policy.mean(obs[lo: lo + chunk])
        var = np.exp(2.0 * policy.log_std)
        diff = actions[lo: lo + chunk] - mu
        nll = np.sum(0.5 * diff * diff / var + policy.log_std + 0.5 * math.log(2 * math.pi), axis=-1)
        total += float(nll.sum())
    return total / len(obs)
