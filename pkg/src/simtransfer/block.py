"""Rich-observation block MDPs and the episodic oracle-access protocol.

Learners only see :class:`Oracle` (``reset``, ``step``, ``episodes``). The
latent trace of the current episode is available through ``latent_trace``
only when the oracle was created with ``trace=True``; it exists for tests and
diagnostics.

Emissions receive the 0-based step index along with the latent state, so a
latent state is the pair ``(step, state)`` and the time-indexed tables of
:class:`~simtransfer.mdp.EpisodicMdp` do not need a layered state space.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .mdp import AbstractPolicy, EpisodicMdp


class Emission:
    """Observation model ``q(. | s)`` with a block-structured inverse."""

    obs_dim: int

    def emit(self, t: int, s: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def decode(self, x: np.ndarray) -> int:
        """Perfect decoder: the unique latent state whose support contains ``x``."""
        raise NotImplementedError


class OneHotEmission(Emission):
    """``x = one_hot(s)``. Noise free; handy for exact checks."""

    def __init__(self, num_states: int):
        self.num_states = num_states
        self.obs_dim = num_states

    def emit(self, t, s, rng):
        x = np.zeros(self.num_states)
        x[s] = 1.0
        return x

    def decode(self, x):
        return int(np.argmax(x))


@dataclass
class BlockMdp:
    """Latent MDP ``M*`` plus an emission. ``perfect_decoder`` is test-only."""

    latent: EpisodicMdp
    emission: Emission
    name: str = "block-mdp"

    @property
    def horizon(self) -> int:
        return self.latent.horizon

    @property
    def num_actions(self) -> int:
        return self.latent.num_actions

    @property
    def obs_dim(self) -> int:
        return self.emission.obs_dim

    def perfect_decoder(self, x: np.ndarray) -> int:
        return self.emission.decode(x)

    def oracle(self, rng: np.random.Generator, trace: bool = False) -> "Oracle":
        return Oracle(self, rng, trace=trace)


class Oracle:
    """Episodic access to a block MDP; counts every ``reset`` as one episode."""

    def __init__(self, env: BlockMdp, rng: np.random.Generator, trace: bool = False):
        self._env = env
        self._rng = rng
        self._trace_enabled = trace
        self._states: list[int] = []
        self._t = 0
        self._active = False
        self.episodes = 0
        self.horizon = env.horizon
        self.num_actions = env.num_actions
        self.obs_dim = env.obs_dim

    def reset(self) -> np.ndarray:
        m = self._env.latent
        s = m.sample_start(self._rng)
        self._states = [s]
        self._t = 0
        self._active = True
        self.episodes += 1
        return self._env.emission.emit(0, s, self._rng)

    def step(self, action: int) -> tuple[np.ndarray, float]:
        if not self._active:
            raise RuntimeError("step() called outside an episode; call reset() first")
        m = self._env.latent
        a = int(action)
        if not 0 <= a < m.num_actions:
            raise ValueError(f"action {a} outside 0..{m.num_actions - 1}")
        t, s = self._t, self._states[-1]
        r = float(m.rewards[t, s, a])
        s2 = m.sample_next(t, s, a, self._rng)
        self._states.append(s2)
        self._t += 1
        if self._t == m.horizon:
            self._active = False
        return self._env.emission.emit(self._t, s2, self._rng), r

    @property
    def latent_trace(self) -> list[int]:
        if not self._trace_enabled:
            raise PermissionError("latent trace requested from an oracle created without trace=True")
        return list(self._states)


class PracticablePolicy:
    """Observation-history policy.

    ``start()`` returns a runner whose ``act(x)`` consumes observations one at
    a time; ``act(history)`` replays a full history through a fresh runner, so
    equal histories always give equal actions.
    """

    horizon: int

    def start(self):
        raise NotImplementedError

    def act(self, history: Sequence[np.ndarray]) -> int:
        runner = self.start()
        a = None
        for x in history:
            a = runner.act(x)
        return a


class _MarkovRunner:
    def __init__(self, fn):
        self._fn = fn
        self._t = 0

    def act(self, x):
        a = self._fn(self._t, x)
        self._t += 1
        return a


class DecodedStatePolicy(PracticablePolicy):
    """``psi o decoder``: applies an abstract policy to the decoded last observation."""

    def __init__(self, psi: AbstractPolicy, decoder: Callable[[np.ndarray], int]):
        self.psi = psi
        self.decoder = decoder
        self.horizon = psi.action.shape[0]

    def start(self):
        return _MarkovRunner(lambda t, x: self.psi(t, self.decoder(x)))


class OpenLoopPolicy(PracticablePolicy):
    """Executes a fixed action sequence regardless of observations."""

    def __init__(self, actions: Sequence[int]):
        self.actions = [int(a) for a in actions]
        self.horizon = len(self.actions)

    def start(self):
        return _MarkovRunner(lambda t, x: self.actions[t])


class UniformRandomPolicy(PracticablePolicy):
    def __init__(self, num_actions: int, horizon: int, rng: np.random.Generator):
        self.num_actions = num_actions
        self.horizon = horizon
        self.rng = rng

    def start(self):
        return _MarkovRunner(lambda t, x: int(self.rng.integers(self.num_actions)))


@dataclass
class Episode:
    observations: list
    actions: list
    rewards: list
    latent_states: Optional[list] = None

    @property
    def ret(self) -> float:
        return float(sum(self.rewards))

    def to_record(self, index: int, trace: bool = False) -> dict:
        rec = {"episode_index": index, "return": self.ret, "actions": [int(a) for a in self.actions]}
        if trace and self.latent_states is not None:
            rec["latent_trace"] = [int(s) for s in self.latent_states]
        return rec


def run_episode(oracle: Oracle, policy: PracticablePolicy, trace: bool = False) -> Episode:
    """One full episode of ``policy`` through ``oracle``."""
    if policy.horizon < oracle.horizon:
        raise ValueError(f"policy horizon {policy.horizon} shorter than environment horizon {oracle.horizon}")
    x = oracle.reset()
    runner = policy.start()
    obs, actions, rewards = [x], [], []
    for _ in range(oracle.horizon):
        a = runner.act(x)
        x, r = oracle.step(a)
        obs.append(x)
        actions.append(a)
        rewards.append(r)
    latent = oracle.latent_trace if trace else None
    return Episode(obs, actions, rewards, latent)


def explore_from(oracle: Oracle, x_first: np.ndarray, prefix: PracticablePolicy, t: int,
                 rng: np.random.Generator):
    """Roll in with ``prefix`` for ``t`` steps from an already-reset episode,
    then take a uniformly random action. Returns ``(x_t, a_t, x_{t+1})``.

    The rest of the episode is abandoned; the oracle has already counted it.
    """
    x = x_first
    if t > 0:
        runner = prefix.start()
        for _ in range(t):
            x, _ = oracle.step(runner.act(x))
    a = int(rng.integers(oracle.num_actions))
    x_next, _ = oracle.step(a)
    return x, a, x_next


def run_exploration_step(oracle: Oracle, prefix: PracticablePolicy, h: int, rng: np.random.Generator):
    """Collect one inverse-dynamics triple at 1-based step ``h`` (one episode)."""
    if not 1 <= h <= oracle.horizon:
        raise ValueError(f"step {h} outside 1..{oracle.horizon}")
    return explore_from(oracle, oracle.reset(), prefix, h - 1, rng)


def estimate_policy_value(oracle: Oracle, policy: PracticablePolicy, n_rollouts: int,
                          log: Optional[list] = None) -> tuple[float, float]:
    """Monte Carlo mean return and its standard error."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    returns = np.empty(n_rollouts)
    for i in range(n_rollouts):
        ep = run_episode(oracle, policy)
        returns[i] = ep.ret
        if log is not None:
            log.append(ep)
    se = float(returns.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return float(returns.mean()), se


def write_episode_log(episodes: Sequence[Episode], path, trace: bool = False) -> None:
    with open(path, "w") as f:
        for i, ep in enumerate(episodes):
            f.write(json.dumps(ep.to_record(i, trace)) + "\n")


def read_episode_log(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
