"""TASID: learn shadow-action decoders step by step and replay them through
the abstract simulator to decode latent states.

This module talks to the target only through :class:`~simtransfer.block.Oracle`
(``reset``/``step``/``episodes``). Latent traces are consumed only by the
diagnostic :func:`shadow_hit_rate`, which takes recorded episodes as input.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .block import Episode, Oracle, PracticablePolicy, explore_from
from .inverse_dynamics import InverseDynamicsModel, TransitionDataset, samples_per_step
from .mdp import AbstractPolicy, DeterministicMdp, MdpError
from .robust import RobustSolution, robust_dp

log = logging.getLogger(__name__)


class ShadowActionSet:
    """``A_h(s, s') = {a : T_h(s'|s, a) = 1}`` in the abstract simulator."""

    def __init__(self, abstract: DeterministicMdp):
        self.abstract = abstract

    def actions(self, t: int, s: int, s_next: int) -> np.ndarray:
        return np.flatnonzero(self.abstract.next_state[t, s] == s_next)

    def contains(self, h: int, s: int, s_next: int, a: int) -> bool:
        """Membership test at 1-based step ``h``."""
        return int(self.abstract.next_state[h - 1, s, a]) == s_next


def decode_state(abstract: DeterministicMdp, decoders: Sequence[InverseDynamicsModel],
                 observations: Sequence[np.ndarray], start: Optional[int] = None) -> int:
    """State reached in the simulator by the decoded shadow actions of
    ``x_1..x_{h+1}``; with a single observation this is the start state."""
    s = abstract.init_state if start is None else start
    table = abstract.next_state
    for t in range(len(observations) - 1):
        a = decoders[t].argmax(observations[t], observations[t + 1])
        s = int(table[t, s, a])
    return s


class _ReplayRunner:
    def __init__(self, policy: "ReplayPolicy"):
        self.p = policy
        self.t = 0
        self.s = policy.start_state
        self.prev = None

    def act(self, x):
        p = self.p
        if self.t > 0:
            if self.t - 1 >= len(p.decoders):
                raise IndexError(f"no decoder for step {self.t}; policy is defined for {p.horizon} steps")
            a_shadow = p.decoders[self.t - 1].argmax(self.prev, x)
            self.s = int(p.table[self.t - 1, self.s, a_shadow])
        action = p.rho(self.t, self.s)
        self.prev = x
        self.t += 1
        return action


class ReplayPolicy(PracticablePolicy):
    """``pi_h(x_{1:h}) = rho_h(phi_h(x_{1:h}))`` where ``phi`` replays decoded
    shadow actions from the start state. Defined for ``len(decoders) + 1`` steps."""

    def __init__(self, abstract: DeterministicMdp, rho: AbstractPolicy,
                 decoders: Sequence[InverseDynamicsModel], start_state: Optional[int] = None):
        self.abstract = abstract
        self.table = abstract.next_state
        self.rho = rho
        self.decoders = list(decoders)
        self.start_state = abstract.init_state if start_state is None else start_state
        self.horizon = len(self.decoders) + 1

    def start(self):
        return _ReplayRunner(self)

    def decode(self, observations) -> int:
        return decode_state(self.abstract, self.decoders, observations, self.start_state)


@dataclass
class TasidRun:
    abstract: DeterministicMdp
    solution: RobustSolution
    decoders: list
    policy: ReplayPolicy
    episodes_used: int
    samples_per_step: int
    step_diagnostics: list = field(default_factory=list)


class Tasid:
    """Incremental TASID driver.

    Each :meth:`collect` call consumes one already-started episode and adds
    one triple to the dataset of the current step; when that dataset is full
    the inverse dynamics model is fitted and the next step begins. Step
    ``h + 1`` data can only be gathered once ``pi_{1:h}`` exists.
    """

    def __init__(self, abstract: DeterministicMdp, eta: float, learner, n_per_step: int,
                 rng: np.random.Generator, solution: Optional[RobustSolution] = None):
        if not isinstance(abstract, DeterministicMdp):
            raise MdpError("TASID needs a deterministic abstract simulator")
        if n_per_step < 1:
            raise ValueError("n_per_step must be at least 1")
        self.abstract = abstract
        self.eta = eta
        self.learner = learner
        self.n_per_step = int(n_per_step)
        self.rng = rng
        self.solution = solution if solution is not None else robust_dp(abstract, eta)
        self.decoders: list = []
        self.diagnostics: list = []
        self.episodes_used = 0
        self._triples: list = []

    @property
    def step(self) -> int:
        """0-based step whose dataset is being gathered."""
        return len(self.decoders)

    @property
    def done(self) -> bool:
        return len(self.decoders) >= self.abstract.horizon - 1

    @property
    def episodes_required(self) -> int:
        return (self.abstract.horizon - 1) * self.n_per_step

    def policy(self) -> ReplayPolicy:
        return ReplayPolicy(self.abstract, self.solution.rho, self.decoders)

    def collect(self, oracle: Oracle, x_first: np.ndarray) -> None:
        if self.done:
            raise RuntimeError("all decoders are already learned")
        triple = explore_from(oracle, x_first, self.policy(), self.step, self.rng)
        self.episodes_used += 1
        self._triples.append(triple)
        if len(self._triples) == self.n_per_step:
            self._fit()

    def _fit(self) -> None:
        t = self.step
        data = TransitionDataset.from_triples(self._triples, t, self.abstract.num_actions)
        previous = self.decoders[-1] if self.decoders else None
        try:
            model = self.learner.fit(data, self.rng, previous)
        except Exception as exc:
            raise RuntimeError(f"inverse dynamics fit failed at step {t + 1}: {exc}") from exc
        diag = {"step": t + 1, "samples": len(data)}
        diag.update(getattr(model, "diagnostics", {}) or {})
        self.diagnostics.append(diag)
        log.debug("step %d fitted: %s", t + 1, diag)
        self.decoders.append(model)
        self._triples = []

    def run(self, oracle: Oracle) -> TasidRun:
        while not self.done:
            self.collect(oracle, oracle.reset())
        return self.result()

    def result(self) -> TasidRun:
        return TasidRun(self.abstract, self.solution, list(self.decoders), self.policy(),
                        self.episodes_used, self.n_per_step, list(self.diagnostics))


def tasid(oracle: Oracle, abstract: DeterministicMdp, learner, eta: float, rng: np.random.Generator,
          n_per_step: Optional[int] = None, epsilon: Optional[float] = None,
          delta: Optional[float] = None, class_size: Optional[float] = None) -> TasidRun:
    """Run TASID to completion.

    Either give ``n_per_step`` directly or ``(epsilon, delta, class_size)``
    to use the sample-size formula. Uses ``(H - 1) * n_per_step`` episodes.
    """
    if oracle.horizon != abstract.horizon:
        raise ValueError(f"oracle horizon {oracle.horizon} != simulator horizon {abstract.horizon}")
    if not 0 <= eta < 0.5:
        raise MdpError(f"eta must lie in [0, 0.5), got {eta}")
    if n_per_step is None:
        if None in (epsilon, delta, class_size):
            raise ValueError("give n_per_step or all of epsilon, delta, class_size")
        n_per_step = samples_per_step(abstract.horizon, abstract.num_actions, eta, epsilon, delta, class_size)
        log.info("n_D = %d per step, total %d episodes", n_per_step, (abstract.horizon - 1) * n_per_step)
    return Tasid(abstract, eta, learner, n_per_step, rng).run(oracle)


def shadow_hit_rate(run: TasidRun, episodes: Sequence[Episode]) -> list[float]:
    """Per-step fraction of traced transitions whose decoded action lies in
    the shadow set of the true latent transition."""
    shadow = ShadowActionSet(run.abstract)
    hits = np.zeros(len(run.decoders))
    totals = np.zeros(len(run.decoders))
    for ep in episodes:
        if ep.latent_states is None:
            raise ValueError("shadow hit rate needs traced episodes")
        for t, model in enumerate(run.decoders):
            a = model.argmax(ep.observations[t], ep.observations[t + 1])
            hits[t] += shadow.contains(t + 1, ep.latent_states[t], ep.latent_states[t + 1], a)
            totals[t] += 1
    return [float(h / n) if n else float("nan") for h, n in zip(hits, totals)]
