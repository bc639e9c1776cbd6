"""TASID with a stochastic start state.

Initial observations are grouped by an externally supplied clustering
function. For each cluster, :func:`initial_state_test` tries every simulator
start state in turn: ``n_l`` episodes of TASID under the hypothesis, then
``n_t`` evaluation rollouts of the learned policy. After the last hypothesis
the cluster is mapped to the start state with the best average return.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .block import Oracle
from .mdp import DeterministicMdp
from .robust import robust_dp
from .tasid import ReplayPolicy, Tasid


def n_learn_episodes(horizon: int, num_actions: int, n_hypotheses: int, eta: float,
                      epsilon: float, delta: float, class_size: float) -> int:
    """``n_l = 8 H^4 |A|^3 ln(N^2 |F| / delta) / (epsilon (1 - 2 eta)^2)``."""
    n = 8 * horizon**4 * num_actions**3 * math.log(n_hypotheses**2 * class_size / delta)
    return int(math.ceil(n / (epsilon * (1 - 2 * eta) ** 2)))


def n_test_episodes(horizon: int, n_hypotheses: int, epsilon: float, delta: float) -> int:
    """``n_t = H^2 ln(N / delta) / (2 epsilon^2)``."""
    return int(math.ceil(horizon**2 * math.log(n_hypotheses / delta) / (2 * epsilon**2)))


@dataclass
class InitialStateTestState:
    """Per-cluster bookkeeping of the hypothesis sweep."""

    n_hypotheses: int
    n_learn: int
    n_test: int
    learners: list
    hypothesis: int = 0
    cnt: np.ndarray = None
    values: np.ndarray = None
    resolved: Optional[int] = None
    episodes: int = 0

    def __post_init__(self):
        if self.cnt is None:
            self.cnt = np.zeros(self.n_hypotheses, dtype=np.int64)
        if self.values is None:
            self.values = np.zeros(self.n_hypotheses)


def initial_state_test(state: InitialStateTestState, oracle: Oracle, x_first: np.ndarray) -> Optional[int]:
    """Spend the already-started episode on the current hypothesis.

    Learn phase (``cnt < n_l``): one TASID collection episode, or a rollout of
    the finished policy if TASID needs fewer than ``n_l`` episodes. Test phase
    (``n_l <= cnt < n_l + n_t``): roll out the learned policy and update the
    running mean ``v(s)``. When a hypothesis has used ``n_l + n_t`` episodes
    the sweep advances; after the last one the argmax of ``v`` (lowest index
    on ties) is returned. Otherwise returns ``None``.
    """
    if state.resolved is not None:
        raise RuntimeError("cluster already resolved")
    s = state.hypothesis
    learner: Tasid = state.learners[s]
    if state.cnt[s] < state.n_learn and not learner.done:
        learner.collect(oracle, x_first)
    else:
        ret = _rollout(oracle, learner.policy(), x_first)
        if state.cnt[s] >= state.n_learn:
            k = state.cnt[s] - state.n_learn
            state.values[s] += (ret - state.values[s]) / (k + 1)
    state.cnt[s] += 1
    state.episodes += 1
    if state.cnt[s] >= state.n_learn + state.n_test:
        state.hypothesis += 1
        if state.hypothesis == state.n_hypotheses:
            state.resolved = int(np.argmax(state.values))
    return state.resolved


def _rollout(oracle: Oracle, policy: ReplayPolicy, x_first) -> float:
    runner = policy.start()
    x, total = x_first, 0.0
    for _ in range(oracle.horizon):
        x, r = oracle.step(runner.act(x))
        total += r
    return total


@dataclass
class MultiStartResult:
    mapping: list
    policies: list
    episodes_used: int
    resolution_episodes: list
    states: list = field(default_factory=list)


def tasid_multi_start(oracle: Oracle, abstract: DeterministicMdp, initial_states: Sequence[int],
                      clustering: Callable[[np.ndarray], int], eta: float, learner,
                      n_learn: int, n_test: int, rng: np.random.Generator,
                      max_episodes: int) -> MultiStartResult:
    """Route each episode by the cluster of its first observation.

    Unresolved clusters feed :func:`initial_state_test`; resolved clusters run
    the TASID policy learned under the chosen start state. Stops once every
    cluster is resolved or after ``max_episodes`` episodes.
    """
    N = len(initial_states)
    if N < 1:
        raise ValueError("need at least one initial state")
    H = abstract.horizon
    if H > 1 and n_learn < H - 1:
        raise ValueError(f"n_learn = {n_learn} is below the {H - 1} episodes TASID needs")
    n_per_step = max(1, n_learn // (H - 1)) if H > 1 else 1
    variants = [abstract.with_init_state(s) for s in initial_states]
    solutions = [robust_dp(m, eta) for m in variants]
    seeds = rng.spawn(N * N)

    states = []
    for i in range(N):
        tasids = [Tasid(variants[s], eta, learner, n_per_step, seeds[i * N + s], solution=solutions[s])
                  for s in range(N)]
        states.append(InitialStateTestState(N, n_learn, n_test, tasids))
    resolution = [None] * N
    used = 0
    while used < max_episodes and any(st.resolved is None for st in states):
        x = oracle.reset()
        used += 1
        c = int(clustering(x))
        if not 0 <= c < N:
            raise ValueError(f"clustering returned {c}, outside 0..{N - 1}")
        st = states[c]
        if st.resolved is None:
            if initial_state_test(st, oracle, x) is not None:
                resolution[c] = used
        else:
            _rollout(oracle, st.learners[st.resolved].policy(), x)
    mapping = [st.resolved for st in states]
    policies = [None if m is None else st.learners[m].policy() for st, m in zip(states, mapping)]
    return MultiStartResult([None if m is None else int(initial_states[m]) for m in mapping],
                            policies, used, resolution, states)
