"""Learning to act from noisy observations with TASID.

The target only shows Hadamard-scrambled, noisy vectors. TASID learns one
inverse dynamics classifier per step, decodes the latent state by replaying
predicted actions through the simulator, and then follows the robust plan.
"""
from __future__ import annotations

import sys

import numpy as np

from simtransfer.block import estimate_policy_value, run_episode
from simtransfer.envs.combolock import CombinationLockSpec, build_combination_lock
from simtransfer.inverse_dynamics import NeuralLearner
from simtransfer.mdp import evaluate_policy
from simtransfer.tasid import shadow_hit_rate, tasid

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
lock = build_combination_lock(CombinationLockSpec(horizon=5, num_actions=10, eta=0.1, seed=0))
target = lock.target
n_per_step = budget // (lock.abstract.horizon - 1)

rng = np.random.default_rng(0)
oracle = target.oracle(rng)
run = tasid(oracle, lock.abstract, NeuralLearner(), 0.1, rng, n_per_step=n_per_step)
print(f"spent {oracle.episodes} target episodes ({n_per_step} per learned step)")
for d in run.step_diagnostics:
    print(f"  step {d['step']}: held-out NLL {d['final_nll']:.3f} after {d['epochs']} epochs")

_, v_rho = evaluate_policy(target.latent, run.solution.rho)
value, se = estimate_policy_value(target.oracle(np.random.default_rng(1)), run.policy, 2000)
print(f"learned policy {value:.3f} +/- {se:.3f}; robust plan with true states {v_rho:.3f}; "
      f"ratio {value / v_rho:.3f}")

# Peeking at latent states (allowed here, never inside TASID) shows how often
# the decoded action is one that explains the observed transition.
traced = target.oracle(np.random.default_rng(2), trace=True)
episodes = [run_episode(traced, run.policy, trace=True) for _ in range(500)]
print("shadow-action hit rate per step:", [round(r, 3) for r in shadow_hit_rate(run, episodes)])
