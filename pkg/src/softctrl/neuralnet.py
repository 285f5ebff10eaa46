"""Dense tanh networks with hand-written reverse-mode gradients.

Everything is float64 numpy. Networks are stateful in the usual
forward-then-backward way: ``forward`` caches the activations that the next
``backward`` consumes. Weights are stored ``(fan_in, fan_out)`` so a layer is
``x @ W + b`` on row-batched inputs.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NoForwardPass

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
REF_LOG_STD = -1.5
REF_LOGPROB_FLOOR = -10.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = 1


class Mlp:
    """Fully connected network: tanh on hidden layers, linear (or tanh) output."""

    def __init__(self, widths, rng=None, activate_output=False, input_scale=None, final_scale=1.0):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        self.activate_output = bool(activate_output)
        self.input_scale = None if input_scale is None else np.asarray(input_scale, dtype=float).copy()
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        last = len(self.widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            if i == last:
                limit *= final_scale
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self._cache = None

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"expected input width {self.in_dim}, got {x.shape[-1]}")
        if self.input_scale is not None:
            x = x * self.input_scale
        acts = [x]
        h = x
        for i in range(self.num_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.num_layers - 1 or self.activate_output:
                h = np.tanh(h)
            acts.append(h)
        self._cache = (acts, squeeze)
        return h[0] if squeeze else h

    def __call__(self, x):
        return self.forward(x)

    def backward(self, dy: np.ndarray, input_grad: bool = True):
        """Gradient of a scalar loss w.r.t. the input and every parameter.

        ``dy`` is dLoss/dOutput for the batch of the most recent forward pass.
        Returns ``(dx, grads)`` with ``grads`` aligned to ``self.params``;
        ``dx`` is None when ``input_grad`` is false.
        """
        if self._cache is None:
            raise NoForwardPass("backward called before forward")
        acts, squeeze = self._cache
        self._cache = None
        g = np.asarray(dy, dtype=float)
        if squeeze:
            g = g[None, :]
        grads = [None] * len(self.params)
        for i in reversed(range(self.num_layers)):
            out = acts[i + 1]
            if i < self.num_layers - 1 or self.activate_output:
                g = g * (1.0 - out * out)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i == 0 and not input_grad:
                return None, grads
            g = g @ self.params[2 * i].T
        if self.input_scale is not None:
            g = g * self.input_scale
        return (g[0] if squeeze else g), grads

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.widths = list(self.widths)
        other.activate_output = self.activate_output
        other.input_scale = None if self.input_scale is None else self.input_scale.copy()
        other.params = [p.copy() for p in self.params]
        other._cache = None
        return other

    def load_from(self, other: "Mlp") -> None:
        for mine, theirs in zip(self.params, other.params):
            mine[...] = theirs


def polyak_update(target: Mlp, online: Mlp, rho: float) -> None:
    """target <- rho * target + (1 - rho) * online, in place."""
    for t, o in zip(target.params, online.params):
        t *= rho
        t += (1.0 - rho) * o


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr=None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        step = lr * math.sqrt(c2) / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= step * m / (np.sqrt(v) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


# ---------------------------------------------------------------------------
# squashed diagonal Gaussian


def log1m_tanh2(u):
    """log(1 - tanh(u)^2) without cancellation."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_logpdf(x, mean, log_std):
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - HALF_LOG_2PI


def squashed_sample(mu, log_std, eps, a_max):
    """Reparameterised draw a = a_max * tanh(mu + sigma * eps) and its log-density.

    Returns ``(action, logp, aux)``; ``aux`` feeds ``squashed_backward``.
    """
    std = np.exp(log_std)
    u = mu + std * eps
    t = np.tanh(u)
    action = a_max * t
    logp = np.sum(
        -0.5 * eps * eps - log_std - HALF_LOG_2PI - log1m_tanh2(u) - np.log(a_max), axis=-1
    )
    return action, logp, (std, eps, t, a_max)


def squashed_backward(aux, d_action, d_logp):
    """Chain rule through ``squashed_sample`` with the noise held fixed.

    ``d_action`` has the action's shape, ``d_logp`` one entry per row.
    Returns gradients w.r.t. ``mu`` and ``log_std``.
    """
    std, eps, t, a_max = aux
    d_logp = np.asarray(d_logp)[..., None]
    du = d_action * a_max * (1.0 - t * t) + d_logp * 2.0 * t
    d_mu = du
    d_log_std = du * std * eps - d_logp
    return d_mu, d_log_std


def squashed_log_prob(mu, log_std, action, a_max):
    """Log-density of a given squashed action (inverts the tanh)."""
    t = np.clip(action / a_max, -1.0 + 1e-12, 1.0 - 1e-12)
    u = np.arctanh(t)
    return np.sum(gaussian_logpdf(u, mu, log_std) - log1m_tanh2(u) - np.log(a_max), axis=-1)


class GaussianPolicy:
    """Actor: encoder + head emitting per-dimension mean and raw log-std."""

    def __init__(self, encoder: Mlp, head: Mlp, a_max):
        self.encoder = encoder
        self.head = head
        self.a_max = np.asarray(a_max, dtype=float)
        self.dim = len(self.a_max)
        if head.out_dim != 2 * self.dim:
            raise DimensionMismatch(f"policy head must emit {2 * self.dim} values, got {head.out_dim}")
        self._aux = None

    @property
    def params(self):
        return self.encoder.params + self.head.params

    def distribution(self, obs):
        out = self.head.forward(self.encoder.forward(obs))
        mu = out[..., : self.dim]
        raw = out[..., self.dim:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        self._raw = raw
        return mu, log_std

    def sample(self, obs, eps):
        """Reparameterised sample for fixed standard-normal noise ``eps``."""
        mu, log_std = self.distribution(obs)
        action, logp, aux = squashed_sample(mu, log_std, eps, self.a_max)
        self._aux = (aux, self._raw)
        return action, logp

    def sample_and_logprob(self, obs, rng):
        obs = np.asarray(obs, dtype=float)
        eps = rng.standard_normal(obs.shape[:-1] + (self.dim,))
        return self.sample(obs, eps)

    def backward(self, d_action, d_logp):
        """Parameter gradients of a loss through the most recent ``sample``."""
        if self._aux is None:
            raise NoForwardPass("sample() must precede backward()")
        aux, raw = self._aux
        self._aux = None
        d_mu, d_log_std = squashed_backward(aux, d_action, d_logp)
        d_log_std = d_log_std * ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX))
        d_out = np.concatenate([d_mu, d_log_std], axis=-1)
        d_feat, head_grads = self.head.backward(d_out)
        _, enc_grads = self.encoder.backward(d_feat, input_grad=False)
        return enc_grads + head_grads

    def log_prob(self, obs, action):
        mu, log_std = self.distribution(obs)
        return squashed_log_prob(mu, log_std, action, self.a_max)

    def mean_action(self, obs):
        mu, _ = self.distribution(obs)
        return self.a_max * np.tanh(mu)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.encoder.copy(), self.head.copy(), self.a_max.copy())


class ReferencePolicy:
    """Behavioural prior: Gaussian around a learned mean with fixed deviation."""

    def __init__(self, encoder: Mlp, head: Mlp, log_std=REF_LOG_STD, floor=REF_LOGPROB_FLOOR):
        self.encoder = encoder
        self.head = head
        self.log_std = np.full(head.out_dim, float(log_std))
        self.floor = floor

    @property
    def params(self):
        return self.encoder.params + self.head.params

    def mean(self, obs):
        return self.head.forward(self.encoder.forward(obs))

    def log_prob(self, obs, action, clamp=True):
        if clamp:
            return self.log_prob_from_mean(self.mean(obs), action)[0]
        return np.sum(gaussian_logpdf(np.asarray(action, dtype=float), self.mean(obs), self.log_std), axis=-1)

    def log_prob_from_mean(self, mean, action):
        """Floored log-density at a precomputed mean and its gradient in ``action``.

        The gradient is zero where the floor is active.
        """
        diff = np.asarray(action, dtype=float) - mean
        var = np.exp(2.0 * self.log_std)
        raw = np.sum(gaussian_logpdf(diff, 0.0, self.log_std), axis=-1)
        live = raw > self.floor
        return np.where(live, raw, self.floor), -diff / var * live[..., None]

    def nll_and_grads(self, obs, actions):
        """Mean negative log-likelihood of ``actions`` and its parameter gradients."""
        mu = self.mean(obs)
        var = np.exp(2.0 * self.log_std)
        diff = actions - mu
        nll = np.sum(0.5 * diff * diff / var + self.log_std + HALF_LOG_2PI, axis=-1)
        d_mu = -diff / var / len(actions)
        d_feat, head_grads = self.head.backward(d_mu)
        _, enc_grads = self.encoder.backward(d_feat, input_grad=False)
        return float(nll.mean()), enc_grads + head_grads

    def copy(self) -> "ReferencePolicy":
        return ReferencePolicy(self.encoder.copy(), self.head.copy(), float(self.log_std[0]), self.floor)


# ---------------------------------------------------------------------------
# checkpoints


def _net_arrays(prefix: str, net: Mlp) -> dict:
    out = {
        f"{prefix}/widths": np.array(net.widths, dtype=np.int64),
        f"{prefix}/activate_output": np.array(int(net.activate_output)),
    }
    if net.input_scale is not None:
        out[f"{prefix}/input_scale"] = net.input_scale
    for i, p in enumerate(net.params):
        out[f"{prefix}/p{i}"] = p
    return out


def content_hash(nets: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(nets):
        for p in nets[name].params:
            h.update(name.encode())
            h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


def save_checkpoint(path, nets: dict, meta: dict | None = None) -> None:
    """Write named networks to an ``.npz`` container plus a JSON sidecar."""
    arrays = {"format": np.array(CHECKPOINT_FORMAT), "names": np.array(sorted(nets))}
    for name in sorted(nets):
        arrays.update(_net_arrays(name, nets[name]))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())
    sidecar = dict(meta or {})
    sidecar["content_hash"] = content_hash(nets)
    sidecar["format"] = CHECKPOINT_FORMAT
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Returns ``(nets, meta)``; ``meta`` is empty if the sidecar is missing."""
    with np.load(path, allow_pickle=False) as data:
        if int(data["format"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {int(data['format'])}")
        nets = {}
        for name in data["names"]:
            name = str(name)
            net = Mlp.__new__(Mlp)
            net.widths = [int(w) for w in data[f"{name}/widths"]]
            net.activate_output = bool(int(data[f"{name}/activate_output"]))
            key = f"{name}/input_scale"
            net.input_scale = data[key].copy() if key in data.files else None
            net.params = [data[f"{name}/p{i}"].copy() for i in range(2 * (len(net.widths) - 1))]
            net._cache = None
            nets[name] = net
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return nets, meta
