"""Soft actor-critic with optional explicit or implicit KL to a reference policy.

Three critic targets share one actor update:

* ``sac``  -- y = r + g(1-d)[min Qbar(s', a') - T log pi(a'|s')]
* ``exkl`` -- as ``sac`` with r - c (log pi(a|s) - log pi0(a|s)) in place of r
* ``imkl`` -- y = r + alpha*tau*log pi0(a|s) + g(1-d)[min Qbar(s', a') - tau log pi(a'|s')]

``T`` is the auto-tuned temperature when ``auto_entropy`` is set and ``tau``
otherwise. With ``alpha = 0`` the ``imkl`` target is the ``sac`` target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..neuralnet import Adam, GaussianPolicy, Mlp, ReferencePolicy, polyak_update
from .replay import Batch

VARIANTS = ("sac", "exkl", "imkl")


@dataclass(frozen=True)
class SacConfig:
    variant: str = "imkl"
    gamma: float = 0.8
    polyak: float = 0.995
    batch_size: int = 256
    lr_start: float = 3e-5
    lr_end: float = 3e-6
    tau: float = 1.2
    alpha: float = 0.4
    w_entropy: Optional[float] = None
    w_kl: Optional[float] = None
    exkl_kl_coef: float = 0.3
    auto_entropy: Optional[bool] = None
    initial_temperature: float = 1.0
    temperature_lr: float = 3e-4
    target_entropy: float = -2.0
    buffer_capacity: int = 100_000
    learning_starts: int = 1000
    anchor_critic: bool = True
    head_hidden: tuple = (64, 64)
    init_log_std: float = -1.5
    freeze_encoders: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if (self.w_entropy is None) != (self.w_kl is None):
            raise ConfigError("w_entropy and w_kl must be given together")
        tau, alpha = self.effective_tau_alpha()
        if self.variant == "imkl" and not (tau > 0 and 0.0 <= alpha <= 1.0):
            raise ConfigError(f"imkl needs tau > 0 and alpha in [0, 1]; got tau={tau}, alpha={alpha}")
        if not 0.0 <= self.polyak <= 1.0 or not 0.0 <= self.gamma < 1.0:
            raise ConfigError("polyak must be in [0, 1] and gamma in [0, 1)")

    def effective_tau_alpha(self):
        """(tau, alpha), converting from entropy/KL weights when those are set."""
        if self.w_entropy is not None:
            tau = self.w_entropy + self.w_kl
            return tau, (self.w_kl / tau if tau > 0 else 0.0)
        return self.tau, self.alpha

    @property
    def anchor_coef(self) -> float:
        """Weight of the analytic log pi0 term inside each Q (imkl only)."""
        if self.variant != "imkl" or not self.anchor_critic:
            return 0.0
        tau, alpha = self.effective_tau_alpha()
        return alpha * tau

    @property
    def uses_auto_entropy(self) -> bool:
        if self.auto_entropy is not None:
            return self.auto_entropy
        return self.variant in ("sac", "exkl")


def weights_to_tau_alpha(w_entropy: float, w_kl: float):
    tau = w_entropy + w_kl
    return tau, w_kl / tau


def lr_at(step: int, total: int, start: float, end: float) -> float:
    """Linear schedule with exact endpoints lr(0) = start and lr(total) = end."""
    if total <= 0:
        return start
    f = min(max(step / total, 0.0), 1.0)
    return start * (1.0 - f) + end * f


class CriticPair:
    """Twin Q heads over one shared observation encoder.

    Actions enter the heads divided by the action bounds. With an ``anchor``
    reference policy and coefficient c, each Q is a learned residual plus
    c * log pi0(a|s), evaluated analytically from the cached reference mean.
    """

    def __init__(self, encoder: Mlp, heads, a_max, anchor: Optional[ReferencePolicy] = None,
                 anchor_coef: float = 0.0):
        self.encoder = encoder
        self.heads = list(heads)
        self.a_max = np.asarray(a_max, dtype=float)
        self.anchor = anchor if anchor_coef != 0.0 else None
        self.anchor_coef = float(anchor_coef) if self.anchor is not None else 0.0
        self._anchor_grad = None

    @property
    def params(self):
        return self.encoder.params + self.heads[0].params + self.heads[1].params

    def nets(self):
        return [self.encoder, *self.heads]

    def anchor_value(self, action, ref_mean):
        if self.anchor is None:
            return 0.0, None
        lp, grad = self.anchor.log_prob_from_mean(ref_mean, action)
        return self.anchor_coef * lp, self.anchor_coef * grad

    def forward(self, obs, action, ref_mean=None):
        feat = self.encoder.forward(obs)
        x = np.concatenate([feat, action / self.a_max], axis=-1)
        q1 = self.heads[0].forward(x)[..., 0]
        q2 = self.heads[1].forward(x)[..., 0]
        self._feat_dim = feat.shape[-1]
        if self.anchor is not None:
            value, self._anchor_grad = self.anchor_value(action, ref_mean)
            q1 = q1 + value
            q2 = q2 + value
        return q1, q2

    def backward(self, dq1, dq2, params=True):
        """Returns ``(param_grads or None, d_action)``."""
        dq1 = np.asarray(dq1)
        dq2 = np.asarray(dq2)
        dx1, g1 = self.heads[0].backward(dq1[..., None])
        dx2, g2 = self.heads[1].backward(dq2[..., None])
        dx = dx1 + dx2
        d_action = dx[..., self._feat_dim:] / self.a_max
        if self.anchor is not None:
            d_action = d_action + (dq1 + dq2)[..., None] * self._anchor_grad
        if not params:
            self.encoder._cache = None
            return None, d_action
        _, ge = self.encoder.backward(dx[..., : self._feat_dim], input_grad=False)
        return ge + g1 + g2, d_action

    def copy(self) -> "CriticPair":
        return CriticPair(self.encoder.copy(), [h.copy() for h in self.heads], self.a_max.copy(),
                          self.anchor, self.anchor_coef)


def actor_from_reference(ref: ReferencePolicy, a_max, init_log_std: float) -> GaussianPolicy:
    """Actor whose pre-squash mean starts at the reference mean over the bounds.

    The reference head's last layer is copied with its columns divided by
    ``a_max`` so that a_max*tanh(mu) ~ mu0 for small actions; the log-std
    columns start at a constant.
    """
    a_max = np.asarray(a_max, dtype=float)
    head = ref.head.copy()
    w_last, b_last = head.params[-2], head.params[-1]
    dim = len(a_max)
    w = np.concatenate([w_last / a_max, np.zeros((w_last.shape[0], dim))], axis=1)
    b = np.concatenate([b_last / a_max, np.full(dim, init_log_std)])
    head.params[-2], head.params[-1] = w, b
    head.widths[-1] = 2 * dim
    return GaussianPolicy(ref.encoder.copy(), head, a_max)


def critic_from_reference(ref: ReferencePolicy, a_max, hidden, rng, anchor_coef: float = 0.0) -> CriticPair:
    feat = ref.encoder.out_dim
    heads = [Mlp([feat + len(a_max), *hidden, 1], rng, final_scale=0.1) for _ in range(2)]
    return CriticPair(ref.encoder.copy(), heads, a_max, ref, anchor_coef)


def temperature_gradient(logp, target_entropy) -> float:
    """d/d(log T) of -log T * mean(log pi + target), i.e. entropy estimate minus target."""
    return float(-np.mean(logp) - target_entropy)


class SacLearner:
    """Actor, twin critics, target critics and (optionally) a learned temperature."""

    def __init__(self, config: SacConfig, actor: GaussianPolicy, critic: CriticPair,
                 reference: Optional[ReferencePolicy] = None):
        self.config = config
        self.actor = actor
        self.critic = critic
        self.target = critic.copy()
        self.reference = reference
        self.log_temperature = np.array([math.log(config.initial_temperature)])
        actor_params = actor.head.params if config.freeze_encoders else actor.params
        critic_params = (
            critic.heads[0].params + critic.heads[1].params if config.freeze_encoders else critic.params
        )
        self._freeze = config.freeze_encoders
        self.actor_opt = Adam(actor_params, lr=config.lr_start)
        self.critic_opt = Adam(critic_params, lr=config.lr_start)
        self.temp_opt = Adam([self.log_temperature], lr=config.temperature_lr)
        self.updates = 0

    @classmethod
    def from_reference(cls, config: SacConfig, reference: ReferencePolicy, a_max, rng):
        actor = actor_from_reference(reference, a_max, config.init_log_std)
        critic = critic_from_reference(reference, a_max, config.head_hidden, rng, config.anchor_coef)
        return cls(config, actor, critic, reference)

    @property
    def tau_alpha(self):
        return self.config.effective_tau_alpha()

    def entropy_temperature(self) -> float:
        if self.config.uses_auto_entropy:
            return float(math.exp(self.log_temperature[0]))
        return float(self.tau_alpha[0])

    def augmented_reward(self, batch: Batch) -> np.ndarray:
        cfg = self.config
        if cfg.variant == "imkl":
            tau, alpha = self.tau_alpha
            return batch.reward + alpha * tau * batch.ref_logprob
        if cfg.variant == "exkl":
            return batch.reward - cfg.exkl_kl_coef * (batch.behavior_logprob - batch.ref_logprob)
        return batch.reward

    def critic_target(self, batch: Batch, eps_next: np.ndarray, details: Optional[dict] = None) -> np.ndarray:
        cfg = self.config
        temp = self.entropy_temperature()
        a_next, logp_next = self.actor.sample(batch.next_obs, eps_next)
        self.actor._aux = None
        q1, q2 = self.target.forward(batch.next_obs, a_next, batch.next_ref_mean)
        soft_value = np.minimum(q1, q2) - temp * logp_next
        r_aug = self.augmented_reward(batch)
        y = r_aug + cfg.gamma * (1.0 - batch.done) * soft_value
        if details is not None:
            details.update(a_next=a_next, logp_next=logp_next, q1=q1, q2=q2, temperature=temp, r_aug=r_aug)
        return y

    def critic_loss_and_grads(self, batch: Batch, y: np.ndarray):
        q1, q2 = self.critic.forward(batch.obs, batch.action, batch.ref_mean)
        n = len(y)
        e1, e2 = q1 - y, q2 - y
        loss = 0.5 * float(np.mean(e1 * e1) + np.mean(e2 * e2))
        grads, _ = self.critic.backward(e1 / n, e2 / n, params=True)
        if self._freeze:
            grads = grads[len(self.critic.encoder.params):]
        return loss, grads

    def actor_loss_and_grads(self, obs: np.ndarray, eps: np.ndarray, temperature: Optional[float] = None,
                             ref_mean=None):
        """Loss mean(T log pi(a~|s) - min Q(s, a~)) with reparameterised a~."""
        temp = self.entropy_temperature() if temperature is None else temperature
        action, logp = self.actor.sample(obs, eps)
        q1, q2 = self.critic.forward(obs, action, ref_mean)
        n = len(obs)
        pick1 = (q1 <= q2).astype(float)
        qmin = np.where(pick1 > 0, q1, q2)
        loss = float(np.mean(temp * logp - qmin))
        _, d_action = self.critic.backward(-pick1 / n, -(1.0 - pick1) / n, params=False)
        grads = self.actor.backward(d_action, np.full(n, temp / n))
        if self._freeze:
            grads = grads[len(self.actor.encoder.params):]
        return loss, grads, logp

    def update(self, batch: Batch, rng: np.random.Generator, lr: float) -> dict:
        """One gradient step: critics, actor, temperature, then target averaging."""
        cfg = self.config
        dim = self.actor.dim
        y = self.critic_target(batch, rng.standard_normal((len(batch), dim)))
        critic_loss, cgrads = self.critic_loss_and_grads(batch, y)
        self.critic_opt.step(cgrads, lr)
        actor_loss, agrads, logp = self.actor_loss_and_grads(
            batch.obs, rng.standard_normal((len(batch), dim)), ref_mean=batch.ref_mean
        )
        self.actor_opt.step(agrads, lr)
        if cfg.uses_auto_entropy:
            # dual descent on log T: T grows while entropy is below target
            self.temp_opt.step([np.array([temperature_gradient(logp, cfg.target_entropy)])])
        self.soft_update()
        self.updates += 1
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "entropy": float(-np.mean(logp))}

    def soft_update(self) -> None:
        for t, o in zip(self.target.nets(), self.critic.nets()):
            polyak_update(t, o, self.config.polyak)

    def with_config(self, **changes) -> SacConfig:
        return replace(self.config, **changes)
