"""Combination lock: three rows per layer, hidden good actions, misleading rewards.

Latent states are ``(layer, row)`` with ``row`` 0 = good (path to 9.5),
1 = good (path to 10), 2 = dead. Layers are the 0-based step index, so the
latent MDP only indexes ``3 * num_locks`` states. With ``num_locks > 1`` the
locks are disjoint copies with their own good actions and the episode starts
uniformly in row 0 of one of them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.linalg import hadamard

from ..block import BlockMdp, Emission
from ..mdp import DeterministicMdp, PerturbationKernel, apply_perturbation, sample_random_perturbation

EXEMPT_MODES = ("row2", "last-row2", "none")


@dataclass
class CombinationLockSpec:
    horizon: int = 5
    num_actions: int = 10
    eta: float = 0.1
    seed: int = 0
    bernoulli_padding: bool = False
    gaussian_sigma: float = 0.1
    permutation_seed: Optional[int] = None
    exempt: str = "row2"
    num_locks: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.num_actions < 2:
            raise ValueError("the lock needs at least two actions")
        if self.num_locks < 1:
            raise ValueError("num_locks must be at least 1")
        if self.exempt not in EXEMPT_MODES:
            raise ValueError(f"exempt must be one of {EXEMPT_MODES}")

    def to_dict(self) -> dict:
        return {"kind": "combolock", **asdict(self)}


class LockEmission(Emission):
    """One-hot(row) + one-hot(layer) [+ one-hot(lock)], optional Bernoulli
    padding, fixed permutation, Gaussian noise, then a Hadamard rotation."""

    def __init__(self, horizon: int, num_locks: int, perm: np.ndarray, sigma: float, bernoulli: bool):
        self.horizon = horizon
        self.num_locks = num_locks
        self.base_dim = 3 + horizon + 1 + (num_locks if num_locks > 1 else 0)
        self.dim = 2 * self.base_dim if bernoulli else self.base_dim
        self.bernoulli = bernoulli
        self.sigma = sigma
        if perm.shape != (self.dim,):
            raise ValueError("permutation length does not match the encoding")
        self.perm = perm
        self.obs_dim = 2 ** math.ceil(math.log2(self.dim))
        self.hadamard = hadamard(self.obs_dim).astype(float)
        self._mix = self.hadamard[:, :self.dim]

    def encode(self, t: int, s: int) -> np.ndarray:
        lock, row = divmod(s, 3)
        v = np.zeros(self.base_dim)
        v[row] = 1.0
        v[3 + t] = 1.0
        if self.num_locks > 1:
            v[4 + self.horizon + lock] = 1.0
        return v

    def emit(self, t, s, rng):
        v = self.encode(t, s)
        if self.bernoulli:
            v = np.concatenate([v, rng.integers(0, 2, self.base_dim).astype(float)])
        y = v[self.perm] + self.sigma * rng.standard_normal(self.dim)
        return self._mix @ y

    def unmix(self, x) -> np.ndarray:
        y = (self.hadamard.T @ np.asarray(x))[:self.dim] / self.obs_dim
        v = np.empty(self.dim)
        v[self.perm] = y
        return v[:self.base_dim]

    def decode_full(self, x) -> tuple[int, int]:
        """``(layer, state)`` recovered from an observation."""
        v = self.unmix(x)
        row = int(np.argmax(v[:3]))
        t = int(np.argmax(v[3:4 + self.horizon]))
        lock = int(np.argmax(v[4 + self.horizon:])) if self.num_locks > 1 else 0
        return t, 3 * lock + row

    def decode(self, x):
        return self.decode_full(x)[1]


@dataclass
class CombinationLock:
    spec: CombinationLockSpec
    abstract: DeterministicMdp
    target: BlockMdp
    kernel: PerturbationKernel
    good_row0: np.ndarray
    good_row1_stay: np.ndarray
    good_row1_up: np.ndarray

    @property
    def initial_states(self) -> list[int]:
        return [3 * j for j in range(self.spec.num_locks)]


def lock_rewards(horizon: int) -> dict:
    return {"final": (9.5, 10.0, 0.0), "row1_to_row2": 1.0, "row0_stay": -1.0 / horizon}


def build_combination_lock(spec: CombinationLockSpec) -> CombinationLock:
    """Abstract simulator and perturbed rich-observation target."""
    H, A, N = spec.horizon, spec.num_actions, spec.num_locks
    ss = np.random.SeedSequence(spec.seed)
    g_actions, g_perturb, g_perm = (np.random.default_rng(s) for s in ss.spawn(3))
    if spec.permutation_seed is not None:
        g_perm = np.random.default_rng(spec.permutation_seed)

    good0 = np.empty((N, H), dtype=np.int64)
    stay1 = np.empty((N, H), dtype=np.int64)
    up1 = np.empty((N, H), dtype=np.int64)
    for j in range(N):
        for t in range(H):
            good0[j, t] = g_actions.integers(A)
            stay1[j, t], up1[j, t] = g_actions.choice(A, size=2, replace=False)

    S = 3 * N
    table = np.empty((H, S, A), dtype=np.int64)
    rewards = np.zeros((H, S, A))
    final = lock_rewards(H)["final"]
    for j in range(N):
        r0, r1, r2 = 3 * j, 3 * j + 1, 3 * j + 2
        for t in range(H):
            row0 = np.full(A, r1)
            row0[good0[j, t]] = r0
            row1 = np.full(A, r2)
            row1[stay1[j, t]] = r1
            row1[up1[j, t]] = r0
            table[t, r0], table[t, r1], table[t, r2] = row0, row1, r2
            for s in (r0, r1, r2):
                for a in range(A):
                    s2 = table[t, s, a]
                    if t == H - 1:
                        rewards[t, s, a] = final[s2 - 3 * j]
                    elif s == r1 and s2 == r2:
                        rewards[t, s, a] = 1.0
                    elif s == r0 and s2 == r0:
                        rewards[t, s, a] = -1.0 / H
    reward_range = (min(-1.0 / H, 0.0), 10.0)
    init_dist = None
    if N > 1:
        init_dist = np.zeros(S)
        init_dist[::3] = 1.0 / N
    abstract = DeterministicMdp(S, A, H, 0, table, rewards, reward_range, init_dist)

    if spec.exempt == "row2":
        exempt = lambda h, s: s % 3 == 1
    elif spec.exempt == "last-row2":
        exempt = lambda h, s: h == H and s % 3 == 1
    else:
        exempt = None
    kernel = sample_random_perturbation(abstract, spec.eta, g_perturb, exempt)
    latent = apply_perturbation(abstract, kernel)

    base_dim = 4 + H + (N if N > 1 else 0)
    dim = 2 * base_dim if spec.bernoulli_padding else base_dim
    emission = LockEmission(H, N, g_perm.permutation(dim), spec.gaussian_sigma, spec.bernoulli_padding)
    target = BlockMdp(latent, emission, name=f"combolock-H{H}")
    return CombinationLock(spec, abstract, target, kernel, good0, stay1, up1)
