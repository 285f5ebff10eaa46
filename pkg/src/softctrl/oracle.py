"""Exact tabular checks of the implicit entropy-KL equivalence.

``munchausen_vi`` adds ``alpha*tau*log pi0`` to the reward of soft value
iteration. ``entkl_vi`` runs the explicit iteration with entropy weight
``w_H = (1-alpha)*tau`` and KL weight ``w_KL = alpha*tau`` on the shifted
values ``q' = q - alpha*tau*log pi0``. Started from matching tables the two
produce the same shifted values and the same policies at every iteration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

PI0_FLOOR = 1e-6


@dataclass(frozen=True)
class FiniteMdp:
    P: np.ndarray  # (n, m, n) transition probabilities
    R: np.ndarray  # (n, m) rewards
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise ValueError(f"inconsistent shapes P{P.shape} R{R.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("every P[s, a] must be a probability vector")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def backup(self, v: np.ndarray) -> np.ndarray:
        """R + gamma * P v for a state-value vector ``v``."""
        return self.R + self.gamma * self.P @ v


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float) -> FiniteMdp:
    P = rng.random((n_states, n_actions, n_states)) ** 2 + 1e-3
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(P, R, gamma)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int, concentration: float = 1.0):
    """Strictly positive row-stochastic matrix drawn from a Dirichlet."""
    pi = rng.dirichlet(np.full(n_actions, concentration), size=n_states)
    pi = np.maximum(pi, 1e-9)
    return pi / pi.sum(axis=1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


def entropy(pi: np.ndarray) -> np.ndarray:
    """Row entropies with 0 log 0 = 0."""
    logs = np.log(np.where(pi > 0, pi, 1.0))
    return -np.sum(pi * logs, axis=-1)


def kl(pi: np.ndarray, pi0: np.ndarray) -> np.ndarray:
    logs = np.log(np.where(pi > 0, pi, 1.0))
    return np.sum(pi * (logs - np.log(pi0)), axis=-1)


def floored_log(pi0: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(np.asarray(pi0, dtype=float), PI0_FLOOR))


class Iterates(NamedTuple):
    q: list        # q_0 ... q_K
    policies: list  # pi_1 ... pi_K (pi_{k+1} is greedy w.r.t. q_k)

    @property
    def final(self) -> np.ndarray:
        return self.q[-1]


def _soft_value(q: np.ndarray, log_pi: np.ndarray, tau: float) -> np.ndarray:
    return np.sum(np.exp(log_pi) * (q - tau * log_pi), axis=-1)


def soft_vi(mdp: FiniteMdp, tau: float, iters: int, q0=None) -> np.ndarray:
    """Soft Bellman iteration with pi = softmax(q / tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    q = np.zeros_like(mdp.R) if q0 is None else np.array(q0, dtype=float)
    for _ in range(iters):
        log_pi = log_softmax(q / tau)
        q = mdp.backup(_soft_value(q, log_pi, tau))
    return q


def hard_vi(mdp: FiniteMdp, iters: int, q0=None) -> np.ndarray:
    q = np.zeros_like(mdp.R) if q0 is None else np.array(q0, dtype=float)
    for _ in range(iters):
        q = mdp.backup(q.max(axis=1))
    return q


def munchausen_vi(mdp: FiniteMdp, tau: float, alpha: float, pi0, iters: int, q0=None) -> Iterates:
    """q_{k+1} = r + alpha*tau*ln pi0 + gamma P sum_a' pi_{k+1} (q_k - tau ln pi_{k+1})."""
    if tau <= 0 or not 0.0 <= alpha <= 1.0:
        raise ValueError("need tau > 0 and alpha in [0, 1]")
    bonus = alpha * tau * floored_log(pi0)
    q = np.zeros_like(mdp.R) if q0 is None else np.array(q0, dtype=float)
    qs, pis = [q], []
    for _ in range(iters):
        log_pi = log_softmax(q / tau)
        q = mdp.backup(_soft_value(q, log_pi, tau)) + bonus
        qs.append(q)
        pis.append(np.exp(log_pi))
    return Iterates(qs, pis)


def entkl_vi(mdp: FiniteMdp, w_entropy: float, w_kl: float, pi0, iters: int, q0=None) -> Iterates:
    """Explicit entropy + KL regularised iteration on shifted values.

    pi_{k+1} = softmax((q'_k + w_KL ln pi0) / (w_H + w_KL)) and
    q'_{k+1} = r + gamma P sum_a' pi_{k+1} (q'_k - w_KL ln(pi_{k+1}/pi0) - w_H ln pi_{k+1}).
    The default start is q'_0 = -w_KL ln pi0, the image of q_0 = 0.
    """
    if w_entropy < 0 or w_kl < 0 or w_entropy + w_kl <= 0:
        raise ValueError("need w_H >= 0, w_KL >= 0 and w_H + w_KL > 0")
    log_pi0 = floored_log(pi0)
    total = w_entropy + w_kl
    q = -w_kl * log_pi0 if q0 is None else np.array(q0, dtype=float)
    qs, pis = [q], []
    for _ in range(iters):
        log_pi = log_softmax((q + w_kl * log_pi0) / total)
        pi = np.exp(log_pi)
        v = np.sum(pi * (q - w_kl * (log_pi - log_pi0) - w_entropy * log_pi), axis=-1)
        q = mdp.backup(v)
        qs.append(q)
        pis.append(pi)
    return Iterates(qs, pis)


def improvement_identity_check(q, pi, pi0, tau: float, alpha: float) -> float:
    """Max |lhs - rhs| of sum pi q + tau H(pi) = sum pi q' - alpha tau KL(pi||pi0) + (1-alpha) tau H(pi)."""
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    pi0 = np.maximum(np.asarray(pi0, dtype=float), PI0_FLOOR)
    q_shift = q - alpha * tau * np.log(pi0)
    h = entropy(pi)
    lhs = np.sum(pi * q, axis=-1) + tau * h
    rhs = np.sum(pi * q_shift, axis=-1) - alpha * tau * kl(pi, pi0) + (1.0 - alpha) * tau * h
    return float(np.max(np.abs(lhs - rhs)))


def shift_discrepancy(mdp: FiniteMdp, tau: float, alpha: float, pi0, iters: int):
    """(max q discrepancy, max policy discrepancy) between the two iterations."""
    m = munchausen_vi(mdp, tau, alpha, pi0, iters)
    e = entkl_vi(mdp, (1.0 - alpha) * tau, alpha * tau, pi0, iters)
    shift = alpha * tau * floored_log(pi0)
    dq = max(float(np.max(np.abs((qm - shift) - qe))) for qm, qe in zip(m.q, e.q))
    dp = max(float(np.max(np.abs(pm - pe))) for pm, pe in zip(m.policies, e.policies))
    return dq, dp


def contraction_holds(qs, gamma: float, last: int = 20, slack: float = 1e-12) -> bool:
    """Successive sup-norm steps shrink by at least ``gamma`` over the final iterates."""
    diffs = [float(np.max(np.abs(b - a))) for a, b in zip(qs[:-1], qs[1:])][-(last + 1):]
    return all(d1 <= gamma * d0 + slack for d0, d1 in zip(diffs[:-1], diffs[1:]))


# ---------------------------------------------------------------------------
# suite run by the command line ``verify``


@dataclass
class Check:
    name: str
    discrepancy: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.discrepancy <= self.tolerance)


def _draw_case(rng):
    n = int(rng.integers(1, 11))
    m = int(rng.integers(1, 6))
    gamma = float(rng.uniform(0.5, 0.95))
    tau = float(rng.uniform(0.05, 5.0))
    alpha = float(rng.uniform(0.0, 1.0))
    return random_mdp(rng, n, m, gamma), tau, alpha, random_policy(rng, n, m)


def check_shift_equivalence(seeds: int = 100, iters: int = 100, seed: int = 0):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_q = worst_pi = 0.0
    for _ in range(seeds):
        mdp, tau, alpha, pi0 = _draw_case(rng)
        dq, dp = shift_discrepancy(mdp, tau, alpha, pi0, iters)
        worst_q, worst_pi = max(worst_q, dq), max(worst_pi, dp)
    dt = time.perf_counter() - t0
    return (
        Check("shift equivalence (q)", worst_q, 1e-10, dt),
        Check("shift equivalence (policy)", worst_pi, 1e-12, dt),
    )


def check_improvement_identity(draws: int = 1000, seed: int = 1) -> Check:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        n, m = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        q = rng.normal(0.0, 5.0, size=(n, m))
        worst = max(worst, improvement_identity_check(
            q, random_policy(rng, n, m), random_policy(rng, n, m),
            float(rng.uniform(0.01, 5.0)), float(rng.uniform(0.0, 1.0)),
        ))
    return Check("policy-improvement identity", worst, 1e-12, time.perf_counter() - t0)


def check_alpha_zero(seeds: int = 20, iters: int = 100, seed: int = 2) -> Check:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(seeds):
        mdp, tau, _, pi0 = _draw_case(rng)
        m = munchausen_vi(mdp, tau, 0.0, pi0, iters).final
        worst = max(worst, float(np.max(np.abs(m - soft_vi(mdp, tau, iters)))))
    return Check("alpha = 0 recovers soft VI", worst, 0.0, time.perf_counter() - t0)


def check_hard_limit(seed: int = 3, iters: int = 300) -> Check:
    t0 = time.perf_counter()
    mdp = random_mdp(np.random.default_rng(seed), 5, 3, 0.9)
    gap = float(np.max(np.abs(soft_vi(mdp, 1e-6, iters) - hard_vi(mdp, iters))))
    return Check("tau -> 0 recovers hard VI", gap, 1e-3, time.perf_counter() - t0)


def check_contraction(seeds: int = 20, iters: int = 100, seed: int = 4) -> Check:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(seeds):
        mdp, tau, alpha, pi0 = _draw_case(rng)
        bad += not contraction_holds(munchausen_vi(mdp, tau, alpha, pi0, iters).q, mdp.gamma)
    return Check("sup-norm contraction (final 20 iterations)", float(bad), 0.0, time.perf_counter() - t0)


def run_suite():
    """All tabular checks, in a fixed order."""
    return [
        *check_shift_equivalence(),
        check_improvement_identity(),
        check_alpha_zero(),
        check_hard_limit(),
        check_contraction(),
    ]


def format_table(checks) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'check'.ljust(width)}  {'max discrepancy':>16}  {'tolerance':>10}  result"]
    for c in checks:
        lines.append(
            f"{c.name.ljust(width)}  {c.discrepancy:16.3e}  {c.tolerance:10.1e}  {'PASS' if c.passed else 'FAIL'}"
        )
    return "\n".join(lines)
