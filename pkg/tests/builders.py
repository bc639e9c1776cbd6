"""Random instances and slow reference implementations shared by the tests.

The reference code here works on dense arrays with explicit loops and shares
nothing with the library beyond the MDP containers.
"""
from __future__ import annotations

import itertools

import numpy as np

from simtransfer.mdp import AbstractPolicy, DeterministicMdp, EpisodicMdp


def random_deterministic(rng, S, A, H, reward_range=(0.0, 1.0)):
    table = rng.integers(S, size=(H, S, A))
    lo, hi = reward_range
    rewards = rng.uniform(lo, hi, size=(H, S, A))
    return DeterministicMdp(S, A, H, int(rng.integers(S)), table, rewards, reward_range)


def random_stochastic(rng, S, A, H):
    T = rng.dirichlet(np.ones(S), size=(H, S, A))
    return EpisodicMdp.from_dense(T, rng.random((H, S, A)), int(rng.integers(S)))


def random_policy(rng, m):
    return AbstractPolicy(rng.integers(m.num_actions, size=(m.horizon, m.num_states)))


def loop_policy_value(T, R, init, action):
    """Backward induction with plain Python loops over dense ``T[t, s, a, s']``."""
    H, S = len(T), len(T[0])
    V = [0.0] * S
    for t in reversed(range(H)):
        V = [R[t][s][action[t][s]] + sum(T[t][s][action[t][s]][s2] * V[s2] for s2 in range(S))
             for s in range(S)]
    return V[init]


def loop_perturb(T, R, xi):
    """Dense perturbed model: sums over the substituted action explicitly."""
    H, S, A = R.shape
    T2 = np.zeros_like(T)
    R2 = np.zeros_like(R)
    for t in range(H):
        for s in range(S):
            for a in range(A):
                for b in range(A):
                    T2[t, s, a] += xi[t, s, a, b] * T[t, s, b]
                    R2[t, s, a] += xi[t, s, a, b] * R[t, s, b]
    return T2, R2


def vertex_kernel(action, choice, eta, A):
    """Kernel sending the eta mass at each (t, s) to ``choice[t, s]`` (chosen action only)."""
    H, S = action.shape
    xi = np.broadcast_to(np.eye(A), (H, S, A, A)).copy()
    for t in range(H):
        for s in range(S):
            a = action[t, s]
            xi[t, s, a] = 0.0
            xi[t, s, a, a] += 1 - eta
            xi[t, s, a, choice[t, s]] += eta
    return xi


def all_policies(S, A, H):
    for flat in itertools.product(range(A), repeat=H * S):
        yield np.array(flat).reshape(H, S)


def brute_force_robust_value(m: EpisodicMdp, eta: float) -> float:
    """max over all abstract policies of min over all vertex adversaries."""
    T, R = m.transitions, np.asarray(m.rewards)
    S, A, H = m.num_states, m.num_actions, m.horizon
    best = -np.inf
    for action in all_policies(S, A, H):
        worst = min(brute_force_vertex_value(T, R, m.init_state, action, eta, choice)
                    for choice in all_policies(S, A, H))
        best = max(best, worst)
    return best


def brute_force_vertex_value(T, R, init, action, eta, choice):
    xi = vertex_kernel(action, choice, eta, R.shape[2])
    T2, R2 = loop_perturb(T, R, xi)
    return loop_policy_value(T2.tolist(), R2.tolist(), init, action.tolist())


def monte_carlo_value(m: EpisodicMdp, action, n, rng):
    T = m.transitions
    total = 0.0
    for _ in range(n):
        s = m.init_state
        for t in range(m.horizon):
            a = action[t, s]
            total += m.rewards[t, s, a]
            s = rng.choice(m.num_states, p=T[t, s, a])
    return total / n


def gradient_errors(loss_fn, params, grads, step=1e-5):
    """Largest relative error per parameter array between ``grads`` and
    central differences of ``loss_fn`` (every coordinate is perturbed)."""
    worst = []
    for p, g in zip(params, grads):
        err = 0.0
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * step)
            denom = max(abs(num), abs(gflat[i]), 1e-8)
            err = max(err, abs(num - gflat[i]) / denom)
        worst.append(err)
    return worst


def bayes_posterior_loop(T, t, s, s_next):
    """``T[t, s, a, s'] / sum_b T[t, s, b, s']`` with an explicit sum."""
    A = T.shape[2]
    total = 0.0
    for b in range(A):
        total += T[t, s, b, s_next]
    return np.array([T[t, s, a, s_next] / total for a in range(A)])
