"""Tabular episodic MDPs, trembling-hand perturbations and exact evaluation.

Steps are written ``h = 1..H`` in docstrings and stored 0-based: array index
``t = h - 1``. Value tables have ``H + 1`` rows with the last row fixed at 0.

Transitions are stored as padded support lists rather than dense
``(H, S, A, S)`` tensors: ``next_states[t, s, a, k]`` is a successor and
``probs[t, s, a, k]`` its probability. A dense MDP is the special case where
the support is ``arange(S)``; a deterministic one has a single slot.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np

ROW_TOL = 1e-12
MAX_ENUMERATION = 2**20


class MdpError(ValueError):
    """Raised for malformed MDPs, kernels or incompatible arguments."""


def _compact(next_states: np.ndarray, probs: np.ndarray, num_states: int):
    """Switch to a dense support once the padded support is wider than S."""
    if next_states.shape[-1] < num_states:
        return next_states, probs
    H, S, A, _ = probs.shape
    dense = np.zeros((H, S, A, num_states))
    idx = np.indices(next_states.shape)
    np.add.at(dense, (idx[0], idx[1], idx[2], next_states), probs)
    support = np.broadcast_to(np.arange(num_states), dense.shape).copy()
    return support, np.clip(dense, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class EpisodicMdp:
    """Finite-horizon MDP ``<S, A, s_init, H, T, R>``.

    ``init_dist`` is ``None`` for the usual fixed start; the multi-start
    setting stores a distribution over states there. ``reward_range`` is the
    interval rewards are validated against; it is ``(0, 1)`` unless an
    environment declares something else.
    """

    num_states: int
    num_actions: int
    horizon: int
    init_state: int
    next_states: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    reward_range: tuple = (0.0, 1.0)
    init_dist: Optional[np.ndarray] = None

    def __post_init__(self):
        ns = np.asarray(self.next_states, dtype=np.int64)
        p = np.asarray(self.probs, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        H, S, A = self.horizon, self.num_states, self.num_actions
        if H < 1 or S < 1 or A < 1:
            raise MdpError("horizon, num_states and num_actions must be positive")
        if ns.ndim != 4 or ns.shape[:3] != (H, S, A) or p.shape != ns.shape:
            raise MdpError(f"transition support must have shape ({H}, {S}, {A}, K)")
        if r.shape != (H, S, A):
            raise MdpError(f"rewards must have shape ({H}, {S}, {A}), got {r.shape}")
        if not 0 <= self.init_state < S:
            raise MdpError(f"init_state {self.init_state} outside 0..{S - 1}")
        if ns.size and (ns.min() < 0 or ns.max() >= S):
            raise MdpError("successor index out of range")
        if np.any(p < 0) or np.any(p > 1 + ROW_TOL):
            raise MdpError("transition probabilities must lie in [0, 1]")
        sums = p.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > ROW_TOL:
            bad = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
            raise MdpError(f"transition row (h={bad[0] + 1}, s={bad[1]}, a={bad[2]}) sums to {sums[bad]!r}")
        lo, hi = self.reward_range
        if r.size and (r.min() < lo - 1e-12 or r.max() > hi + 1e-12):
            raise MdpError(f"rewards must lie in [{lo}, {hi}]")
        if self.init_dist is not None:
            mu = np.asarray(self.init_dist, dtype=float)
            if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1) > ROW_TOL:
                raise MdpError("init_dist must be a probability vector over states")
            mu.setflags(write=False)
            object.__setattr__(self, "init_dist", mu)
        for arr in (ns, p, r):
            arr.setflags(write=False)
        object.__setattr__(self, "next_states", ns)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "reward_range", (float(lo), float(hi)))

    @classmethod
    def from_dense(cls, transitions, rewards, init_state, **kwargs) -> "EpisodicMdp":
        T = np.asarray(transitions, dtype=float)
        H, S, A, S2 = T.shape
        if S != S2:
            raise MdpError("dense transitions must be indexed (h, s, a, s')")
        support = np.broadcast_to(np.arange(S), T.shape).copy()
        return cls(S, A, H, int(init_state), support, T, rewards, **kwargs)

    @property
    def transitions(self) -> np.ndarray:
        """Dense ``T[t, s, a, s']``. Materialised on demand; avoid for big MDPs."""
        H, S, A = self.horizon, self.num_states, self.num_actions
        dense = np.zeros((H, S, A, S))
        idx = np.indices(self.next_states.shape)
        np.add.at(dense, (idx[0], idx[1], idx[2], self.next_states), self.probs)
        return dense

    @property
    def start_distribution(self) -> np.ndarray:
        if self.init_dist is not None:
            return np.asarray(self.init_dist)
        mu = np.zeros(self.num_states)
        mu[self.init_state] = 1.0
        return mu

    def expected_next(self, t: int, values: np.ndarray) -> np.ndarray:
        """``sum_s' T_t(s'|s, a) values[s']`` for every (s, a)."""
        return (self.probs[t] * values[self.next_states[t]]).sum(axis=-1)

    def q_values(self, t: int, next_values: np.ndarray) -> np.ndarray:
        return self.rewards[t] + self.expected_next(t, next_values)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs, axis=-1)

    def sample_next(self, t: int, s: int, a: int, rng: np.random.Generator) -> int:
        cp = self._cumulative[t, s, a]
        u = rng.random() * cp[-1]
        k = min(int(cp.searchsorted(u, side="right")), len(cp) - 1)
        return int(self.next_states[t, s, a, k])

    def sample_start(self, rng: np.random.Generator) -> int:
        if self.init_dist is None:
            return self.init_state
        return int(rng.choice(self.num_states, p=self.init_dist))

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    def with_init_state(self, init_state: int) -> "EpisodicMdp":
        return EpisodicMdp(self.num_states, self.num_actions, self.horizon, int(init_state),
                           self.next_states, self.probs, self.rewards, self.reward_range)

    def to_dict(self) -> dict:
        d = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "init_state": self.init_state,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
            "deterministic": self.is_deterministic(),
            "reward_range": list(self.reward_range),
        }
        if self.init_dist is not None:
            d["init_dist"] = np.asarray(self.init_dist).tolist()
        return d


class DeterministicMdp(EpisodicMdp):
    """An abstract simulator: every transition has probability exactly 1.

    Built from a ``next_state[t, s, a]`` table so replaying an action sequence
    costs one lookup per step.
    """

    def __init__(self, num_states, num_actions, horizon, init_state, next_state, rewards,
                 reward_range=(0.0, 1.0), init_dist=None):
        table = np.asarray(next_state, dtype=np.int64)
        if table.shape != (horizon, num_states, num_actions):
            raise MdpError(f"next_state table must have shape ({horizon}, {num_states}, {num_actions})")
        super().__init__(num_states, num_actions, horizon, init_state, table[..., None],
                         np.ones(table.shape + (1,)), rewards, reward_range, init_dist)

    @property
    def next_state(self) -> np.ndarray:
        return self.next_states[..., 0]

    @classmethod
    def from_mdp(cls, m: EpisodicMdp) -> "DeterministicMdp":
        if not m.is_deterministic():
            raise MdpError("MDP has stochastic transitions")
        k = np.argmax(m.probs, axis=-1)
        table = np.take_along_axis(m.next_states, k[..., None], axis=-1)[..., 0]
        return cls(m.num_states, m.num_actions, m.horizon, m.init_state, table, m.rewards,
                   m.reward_range, m.init_dist)

    def with_init_state(self, init_state: int) -> "DeterministicMdp":
        return DeterministicMdp(self.num_states, self.num_actions, self.horizon, int(init_state),
                                self.next_state, self.rewards, self.reward_range)

    def replay(self, actions, start: Optional[int] = None) -> int:
        """State reached after executing ``actions`` from ``start`` (default ``s_init``)."""
        s = self.init_state if start is None else start
        table = self.next_state
        for t, a in enumerate(actions):
            s = int(table[t, s, a])
        return s


@dataclass(frozen=True, eq=False)
class PerturbationKernel:
    """Action-noise kernel ``xi[t, s, a, a']`` keeping ``a`` with prob. >= 1 - eta."""

    xi: np.ndarray
    eta: float

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim != 4 or xi.shape[2] != xi.shape[3]:
            raise MdpError("kernel must be indexed (h, s, a, a')")
        if not 0 <= self.eta < 0.5:
            raise MdpError(f"eta must lie in [0, 0.5), got {self.eta}")
        if np.any(xi < 0) or np.max(np.abs(xi.sum(axis=-1) - 1)) > ROW_TOL:
            raise MdpError("kernel rows must be probability vectors")
        keep = np.diagonal(xi, axis1=2, axis2=3)
        if np.any(keep < 1 - self.eta - ROW_TOL):
            raise MdpError(f"kernel keeps the intended action with probability below 1 - eta = {1 - self.eta}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", float(self.eta))

    @classmethod
    def identity(cls, horizon: int, num_states: int, num_actions: int) -> "PerturbationKernel":
        eye = np.broadcast_to(np.eye(num_actions), (horizon, num_states, num_actions, num_actions))
        return cls(eye.copy(), 0.0)


@dataclass(frozen=True, eq=False)
class AbstractPolicy:
    """State-based policy: ``action[t, s]``."""

    action: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.action, dtype=np.int64)
        if a.ndim != 2:
            raise MdpError("policy table must be indexed (h, s)")
        a.setflags(write=False)
        object.__setattr__(self, "action", a)

    def __call__(self, t: int, s: int) -> int:
        return int(self.action[t, s])

    def check(self, m: EpisodicMdp) -> None:
        if self.action.shape != (m.horizon, m.num_states):
            raise MdpError(f"policy shape {self.action.shape} does not match MDP ({m.horizon}, {m.num_states})")
        if self.action.min() < 0 or self.action.max() >= m.num_actions:
            raise MdpError("policy selects an out-of-range action")


def apply_perturbation(m: EpisodicMdp, k: PerturbationKernel) -> EpisodicMdp:
    """The MDP obtained by replacing each action ``a`` with ``a' ~ xi(.|s, a)``."""
    H, S, A = m.horizon, m.num_states, m.num_actions
    if k.xi.shape != (H, S, A, A):
        raise MdpError(f"kernel shape {k.xi.shape} does not match MDP ({H}, {S}, {A}, {A})")
    K = m.next_states.shape[-1]
    # successors of (s, a) are the successors of every a', weighted by xi(a'|s, a)
    ns = np.broadcast_to(m.next_states[:, :, None, :, :], (H, S, A, A, K)).reshape(H, S, A, A * K)
    p = (k.xi[..., None] * m.probs[:, :, None, :, :]).reshape(H, S, A, A * K)
    ns, p = _compact(ns, p, S)
    rewards = np.einsum("tsab,tsb->tsa", k.xi, m.rewards)
    lo, hi = m.reward_range
    rewards = np.clip(rewards, lo, hi)
    return EpisodicMdp(S, A, H, m.init_state, ns, p, rewards, m.reward_range, m.init_dist)


def sample_random_perturbation(m: EpisodicMdp, eta: float, rng: np.random.Generator,
                               exempt: Optional[Callable[[int, int], bool]] = None) -> PerturbationKernel:
    """``xi(a'|s,a) = eta * p(a') + (1 - eta) * [a' == a]`` with ``p`` drawn per (h, s, a).

    ``p`` is a vector of uniform [0, 1] draws normalised to sum to one.
    ``exempt(h, s)`` (1-based ``h``) marks states whose rows stay the identity.
    """
    if not 0 <= eta < 0.5:
        raise MdpError(f"eta must lie in [0, 0.5), got {eta}")
    H, S, A = m.horizon, m.num_states, m.num_actions
    u = rng.random((H, S, A, A))
    p = u / u.sum(axis=-1, keepdims=True)
    eye = np.eye(A)
    xi = eta * p + (1 - eta) * eye
    xi /= xi.sum(axis=-1, keepdims=True)
    if eta == 0:
        xi = np.broadcast_to(eye, xi.shape).copy()
    if exempt is not None:
        for t in range(H):
            for s in range(S):
                if exempt(t + 1, s):
                    xi[t, s] = eye
    return PerturbationKernel(xi, eta)


def evaluate_policy(m: EpisodicMdp, psi: AbstractPolicy) -> tuple[np.ndarray, float]:
    """Exact backward induction. Returns ``(V, V_1(s_init))`` with ``V[H] = 0``.

    Under a start distribution the scalar is the expectation of ``V_1``.
    """
    psi.check(m)
    H, S = m.horizon, m.num_states
    V = np.zeros((H + 1, S))
    rows = np.arange(S)
    for t in range(H - 1, -1, -1):
        a = psi.action[t]
        V[t] = m.rewards[t, rows, a] + (m.probs[t, rows, a] * V[t + 1][m.next_states[t, rows, a]]).sum(-1)
    return V, float(m.start_distribution @ V[0])


def value_iteration(m: EpisodicMdp) -> tuple[AbstractPolicy, np.ndarray]:
    """Optimal policy and ``V*``; ties go to the lowest action index."""
    H, S = m.horizon, m.num_states
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    for t in range(H - 1, -1, -1):
        Q = m.q_values(t, V[t + 1])
        pi[t] = np.argmax(Q, axis=1)
        V[t] = Q.max(axis=1)
    return AbstractPolicy(pi), V


def worst_case_policy_value(m0: EpisodicMdp, eta: float, psi: AbstractPolicy) -> float:
    """``min`` over the eta-perturbation set of the value of ``psi``.

    The adversary keeps ``1 - eta`` on the chosen action and moves the
    remaining mass onto the action with the lowest continuation value.
    """
    if not 0 <= eta < 0.5:
        raise MdpError(f"eta must lie in [0, 0.5), got {eta}")
    psi.check(m0)
    H, S = m0.horizon, m0.num_states
    V = np.zeros(S)
    rows = np.arange(S)
    for t in range(H - 1, -1, -1):
        Q = m0.q_values(t, V)
        V = (1 - eta) * Q[rows, psi.action[t]] + eta * Q.min(axis=1)
    return float(m0.start_distribution @ V)


def enumerate_vertex_adversary_value(m0: EpisodicMdp, eta: float, psi: AbstractPolicy) -> float:
    """Brute-force worst case over vertex adversaries.

    Each (h, s) independently sends its eta mass to one action ``b`` (``b``
    may equal the chosen action). Every assignment is turned into a kernel,
    applied to ``m0`` and evaluated; the minimum is returned. Feasible only
    for tiny instances.
    """
    if not 0 <= eta < 0.5:
        raise MdpError(f"eta must lie in [0, 0.5), got {eta}")
    psi.check(m0)
    H, S, A = m0.horizon, m0.num_states, m0.num_actions
    count = A ** (H * S)
    if count > MAX_ENUMERATION:
        raise MdpError(f"|A|^(H*|S|) = {A}^{H * S} = {count} vertex adversaries exceeds the "
                       f"enumeration bound {MAX_ENUMERATION}")
    eye = np.eye(A)
    best = np.inf
    for choice in itertools.product(range(A), repeat=H * S):
        xi = np.broadcast_to(eye, (H, S, A, A)).copy()
        for i, b in enumerate(choice):
            t, s = divmod(i, S)
            a = psi.action[t, s]
            xi[t, s, a] = (1 - eta) * eye[a] + eta * eye[b]
        _, v = evaluate_policy(apply_perturbation(m0, PerturbationKernel(xi, eta)), psi)
        best = min(best, v)
    return float(best)


def mdp_from_dict(d: dict) -> EpisodicMdp:
    kwargs = {}
    if "reward_range" in d:
        kwargs["reward_range"] = tuple(d["reward_range"])
    if d.get("init_dist") is not None:
        kwargs["init_dist"] = np.asarray(d["init_dist"], dtype=float)
    H, S, A = int(d["horizon"]), int(d["num_states"]), int(d["num_actions"])
    if "next_state" in d and "transitions" not in d:
        return DeterministicMdp(S, A, H, int(d["init_state"]), d["next_state"], d["rewards"], **kwargs)
    T = np.asarray(d["transitions"], dtype=float)
    if T.shape != (H, S, A, S):
        raise MdpError(f"transitions must have shape ({H}, {S}, {A}, {S}), got {T.shape}")
    m = EpisodicMdp.from_dense(T, d["rewards"], int(d["init_state"]), **kwargs)
    if d.get("deterministic"):
        return DeterministicMdp.from_mdp(m)
    return m


def load_mdp(path) -> EpisodicMdp:
    with open(path) as f:
        return mdp_from_dict(json.load(f))


def save_mdp(m: EpisodicMdp, path, compact: bool = False) -> None:
    """Write the JSON MDP format. ``compact`` stores a deterministic MDP's
    ``next_state`` table in place of the dense transition tensor."""
    d = m.to_dict() if not (compact and isinstance(m, DeterministicMdp)) else {
        "num_states": m.num_states, "num_actions": m.num_actions, "horizon": m.horizon,
        "init_state": m.init_state, "next_state": m.next_state.tolist(),
        "rewards": m.rewards.tolist(), "deterministic": True,
        "reward_range": list(m.reward_range),
    }
    Path(path).write_text(json.dumps(d))
