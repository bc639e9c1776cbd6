"""Robust dynamic programming over the trembling-hand perturbation set."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import AbstractPolicy, EpisodicMdp, MdpError


@dataclass(frozen=True, eq=False)
class RobustSolution:
    """Robust value tables and the greedy robust policy.

    ``v_tilde`` has shape ``(H + 1, S)`` with a zero last row, ``q_tilde``
    has shape ``(H, S, A)``. ``q_tilde`` leaves the current action unperturbed
    and is pessimistic only about later steps.
    """

    v_tilde: np.ndarray
    q_tilde: np.ndarray
    rho: AbstractPolicy
    eta: float

    def value(self, m0: EpisodicMdp) -> float:
        """``V~_1`` at the start state (expected under a start distribution)."""
        return float(m0.start_distribution @ self.v_tilde[0])

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "policy": self.rho.action.tolist(),
            "v_tilde": self.v_tilde.tolist(),
            "q_tilde": self.q_tilde.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobustSolution":
        return cls(np.asarray(d["v_tilde"], float), np.asarray(d["q_tilde"], float),
                   AbstractPolicy(np.asarray(d["policy"])), float(d["eta"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def robust_dp(m0: EpisodicMdp, eta: float) -> RobustSolution:
    """Backward fill of ``Q~`` and ``V~``.

    ``Q~_h(s,a) = R_h(s,a) + E[V~_{h+1}(s')]`` and
    ``V~_h(s) = (1 - eta) max_a Q~_h(s,a) + eta min_a Q~_h(s,a)``.
    The policy is the row-wise argmax of ``Q~`` (lowest index on ties).
    Works for stochastic ``m0`` too; nothing below uses determinism.
    """
    if not 0 <= eta < 0.5:
        raise MdpError(f"eta must lie in [0, 0.5), got {eta}")
    H, S, A = m0.horizon, m0.num_states, m0.num_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for t in range(H - 1, -1, -1):
        Q[t] = m0.q_values(t, V[t + 1])
        V[t] = (1 - eta) * Q[t].max(axis=1) + eta * Q[t].min(axis=1)
    rho = AbstractPolicy(np.argmax(Q, axis=2))
    V.setflags(write=False)
    Q.setflags(write=False)
    return RobustSolution(V, Q, rho, float(eta))


def robust_value_curve(m0: EpisodicMdp, etas) -> list[tuple[float, float]]:
    """``(eta, V~_1(s_init))`` for each eta, sorted by eta (duplicates kept)."""
    return [(float(e), robust_dp(m0, e).value(m0)) for e in sorted(etas)]
