"""Transfer from a deterministic abstract simulator to a rich-observation
target: robust planning, inverse-dynamics state decoding and benchmarks."""
from __future__ import annotations

__version__ = "0.1.0"

from .block import (BlockMdp, Emission, Episode, OneHotEmission, Oracle, PracticablePolicy,
                    estimate_policy_value, run_episode, run_exploration_step)
from .inverse_dynamics import (BayesOptimalLearner, ClassifierConfig, NeuralLearner, TabularLearner,
                               TransitionDataset, argmax_action, bayes_optimal, fit, fit_tabular)
from .mdp import (AbstractPolicy, DeterministicMdp, EpisodicMdp, MdpError, PerturbationKernel,
                  apply_perturbation, enumerate_vertex_adversary_value, evaluate_policy, load_mdp,
                  sample_random_perturbation, save_mdp, value_iteration, worst_case_policy_value)
from .multistart import initial_state_test, tasid_multi_start
from .robust import RobustSolution, robust_dp, robust_value_curve
from .tasid import ShadowActionSet, Tasid, TasidRun, decode_state, shadow_hit_rate, tasid

__all__ = [name for name in dir() if not name.startswith("_")]
