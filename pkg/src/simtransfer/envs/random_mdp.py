"""Small random simulator/target pairs for property tests."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..block import BlockMdp, OneHotEmission
from ..mdp import (DeterministicMdp, EpisodicMdp, PerturbationKernel, apply_perturbation,
                   sample_random_perturbation)

MAX_SIZES = (10, 5, 5)


def build_random_perturbed_pair(sizes, eta: float, rng: np.random.Generator
                                ) -> tuple[DeterministicMdp, EpisodicMdp, PerturbationKernel]:
    """Uniform random next-state table and rewards in [0, 1], plus a random
    kernel at ``eta``. ``sizes`` is ``(num_states, num_actions, horizon)``."""
    S, A, H = (int(v) for v in sizes)
    if not (1 <= S <= MAX_SIZES[0] and 1 <= A <= MAX_SIZES[1] and 1 <= H <= MAX_SIZES[2]):
        raise ValueError(f"sizes {sizes} outside the supported range (S<=10, A<=5, H<=5)")
    table = rng.integers(0, S, size=(H, S, A))
    rewards = rng.random((H, S, A))
    m0 = DeterministicMdp(S, A, H, 0, table, rewards)
    kernel = sample_random_perturbation(m0, eta, rng)
    return m0, apply_perturbation(m0, kernel), kernel


@dataclass
class RandomSpec:
    num_states: int = 4
    num_actions: int = 3
    horizon: int = 3
    eta: float = 0.1
    seed: int = 0

    def to_dict(self) -> dict:
        return {"kind": "random", **asdict(self)}


@dataclass
class RandomEnv:
    spec: RandomSpec
    abstract: DeterministicMdp
    target: BlockMdp
    kernel: PerturbationKernel

    @property
    def initial_states(self) -> list[int]:
        return [self.abstract.init_state]


def build_random_env(spec: RandomSpec) -> RandomEnv:
    """Random pair wrapped as a block MDP with one-hot observations."""
    rng = np.random.default_rng(spec.seed)
    m0, m_star, kernel = build_random_perturbed_pair((spec.num_states, spec.num_actions, spec.horizon),
                                                     spec.eta, rng)
    return RandomEnv(spec, m0, BlockMdp(m_star, OneHotEmission(spec.num_states), "random"), kernel)
