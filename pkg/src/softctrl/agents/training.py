"""Online fine-tuning loop and the agent wrappers used for evaluation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError
from ..evalkit import EvalReport, evaluate
from ..neuralnet import GaussianPolicy, ReferencePolicy, content_hash, save_checkpoint
from ..simulator import DrivingEnv, SimConfig
from .replay import ReplayBuffer
from .sac import SacConfig, SacLearner, lr_at

LOG_COLUMNS = (
    "step", "mean_return", "failures", "collisions_f", "collisions_s", "collisions_r",
    "d2r_events", "discomfort_rate", "lr", "tau_eff",
)


class ActorAgent:
    """Deterministic evaluation of a squashed-Gaussian actor (its mean action).

    Policies act in normalized units; ``bounds`` maps them to steer/accel.
    """

    def __init__(self, actor: GaussianPolicy, bounds):
        self.actor = actor
        self.bounds = np.asarray(bounds, dtype=float)

    def act(self, observations, envs):
        return self.actor.mean_action(observations) * self.bounds


class ReferenceAgent:
    """The behavioural prior's mean action, clipped to [-1, 1] and scaled to the bounds."""

    def __init__(self, policy: ReferencePolicy, bounds):
        self.policy = policy
        self.bounds = np.asarray(bounds, dtype=float)

    def act(self, observations, envs):
        return np.clip(self.policy.mean(observations), -1.0, 1.0) * self.bounds


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 50_000
    eval_interval: int = 1000
    updates_per_step: int = 1
    max_episode_steps: int = 250


@dataclass
class TrainResult:
    learner: SacLearner
    best_actor: GaussianPolicy
    best_step: int
    log: list = field(default_factory=list)

    @property
    def final_actor(self) -> GaussianPolicy:
        return self.learner.actor

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in LOG_COLUMNS])
    return buf.getvalue()


def log_row(step: int, report: EvalReport, lr: float, tau_eff: float) -> dict:
    s = report.summary()
    return {
        "step": step,
        "mean_return": report.mean_return,
        "failures": s["failure"],
        "collisions_f": s["cf_ge_1"],
        "collisions_s": s["cs_ge_1"],
        "collisions_r": s["cr_ge_1"],
        "d2r_events": s["d2r_ge_4m"],
        "discomfort_rate": s["mu_acc"],
        "lr": lr,
        "tau_eff": tau_eff,
    }


def _selection_key(report: EvalReport):
    return (report.failures, report.discomfort_rate)


def train_rl(scenarios: Sequence, reference: ReferencePolicy, sac: SacConfig = SacConfig(),
             train: TrainConfig = TrainConfig(), seed: int = 0, sim: SimConfig = SimConfig(),
             validation: Optional[Sequence] = None, log: Optional[Callable] = None) -> TrainResult:
    """Fine-tune an actor-critic initialised from the reference policy.

    Episodes start at a random frame of a random scenario. One transition is
    stored per environment step, its reference log-density taken at insertion.
    Every ``eval_interval`` steps (and at step 0) the deterministic actor is
    evaluated on ``validation`` (defaults to ``scenarios``); the checkpoint with
    the fewest failures, ties broken by lower discomfort, is kept as best.
    """
    if not scenarios:
        raise ConfigError("train_rl needs at least one scenario")
    if train.eval_interval <= 0:
        raise ConfigError("eval_interval must be positive")
    validation = list(scenarios) if validation is None else list(validation)
    init_ss, env_ss, update_ss, eval_ss = np.random.SeedSequence(seed).spawn(4)
    init_rng = np.random.default_rng(init_ss)
    env_rng = np.random.default_rng(env_ss)
    update_rng = np.random.default_rng(update_ss)
    eval_seed = int(eval_ss.generate_state(1)[0])

    bounds = sim.kinematics.action_bounds
    learner = SacLearner.from_reference(sac, reference, np.ones_like(bounds), init_rng)
    actor = learner.actor
    envs = [DrivingEnv(s, sim) for s in scenarios]
    buffer = ReplayBuffer(sac.buffer_capacity, sim.layout.dim, len(bounds))

    result = TrainResult(learner, actor.copy(), 0)

    def run_eval(step):
        report = evaluate(ActorAgent(actor, bounds), validation, eval_seed, sim)
        lr = lr_at(step, train.total_steps, sac.lr_start, sac.lr_end)
        row = log_row(step, report, lr, learner.entropy_temperature())
        result.log.append(row)
        if log is not None:
            log(row)
        return report

    best_key = _selection_key(run_eval(0))
    env, obs, ep_steps, next_ref_mean = None, None, 0, None
    for step in range(1, train.total_steps + 1):
        if env is None or env.done or ep_steps >= train.max_episode_steps:
            env = envs[int(env_rng.integers(len(envs)))]
            last_start = env.scenario.num_frames - sim.min_horizon
            obs = env.reset(int(env_rng.integers(0, last_start + 1)))
            ep_steps = 0
            next_ref_mean = None
        action, logp = actor.sample_and_logprob(obs[None, :], env_rng)
        actor._aux = None
        action = action[0]
        ref_mean = reference.mean(obs) if next_ref_mean is None else next_ref_mean
        ref_lp = float(reference.log_prob_from_mean(ref_mean, action)[0])
        out = env.step(action * bounds)
        ep_steps += 1
        next_ref_mean = reference.mean(out.observation)
        buffer.add(obs, action, out.reward, out.observation, out.done, ref_lp, float(logp[0]),
                   ref_mean, next_ref_mean)
        obs = out.observation
        if step > sac.learning_starts and len(buffer) >= sac.batch_size:
            lr = lr_at(step - 1, train.total_steps, sac.lr_start, sac.lr_end)
            for _ in range(train.updates_per_step):
                learner.update(buffer.sample(sac.batch_size, update_rng), update_rng, lr)
        if step % train.eval_interval == 0:
            key = _selection_key(run_eval(step))
            if key < best_key:
                best_key = key
                result.best_actor = actor.copy()
                result.best_step = step
    return result


def actor_nets(actor: GaussianPolicy) -> dict:
    return {"encoder": actor.encoder, "head": actor.head}


def save_actor(path, actor: GaussianPolicy, meta: dict) -> None:
    meta = dict(meta)
    meta.setdefault("kind", "actor")
    meta["action_bounds"] = [float(b) for b in actor.a_max]
    save_checkpoint(path, actor_nets(actor), meta)


def load_actor(nets: dict, meta: dict) -> GaussianPolicy:
    return GaussianPolicy(nets["encoder"], nets["head"], np.array(meta["action_bounds"]))


def save_reference(path, policy: ReferencePolicy, meta: dict) -> None:
    meta = dict(meta)
    meta.setdefault("kind", "reference")
    meta["log_std"] = float(policy.log_std[0])
    meta["logprob_floor"] = float(policy.floor)
    save_checkpoint(path, {"encoder": policy.encoder, "head": policy.head}, meta)


def load_reference(nets: dict, meta: dict) -> ReferencePolicy:
    return ReferencePolicy(nets["encoder"], nets["head"], meta.get("log_std", -1.5), meta.get("logprob_floor", -10.0))


def actor_hash(actor: GaussianPolicy) -> str:
    return content_hash(actor_nets(actor))
