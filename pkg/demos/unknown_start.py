"""Two locks, one unknown start: the initial state test.

Each episode starts in one of two disjoint locks. A clustering of the first
observation says which group an episode belongs to, but not which simulator
start state that group corresponds to. For every group we try each start
state in turn (learn for n_l episodes, evaluate for n_t) and keep the best.
"""
from __future__ import annotations

import numpy as np

from simtransfer.envs.combolock import CombinationLockSpec, build_combination_lock
from simtransfer.harness import perfect_clustering
from simtransfer.inverse_dynamics import TabularLearner
from simtransfer.multistart import tasid_multi_start

lock = build_combination_lock(CombinationLockSpec(horizon=5, num_locks=2, seed=0))
target = lock.target
# swap the cluster labels so the answer is not the identity
clusters = perfect_clustering(lock)
swapped = lambda x: 1 - clusters(x)

rng = np.random.default_rng(0)
# counts keyed on the true state keep the demo fast; swap in NeuralLearner() for the real thing
n_learn, n_test = 1600, 200
res = tasid_multi_start(target.oracle(rng), lock.abstract, lock.initial_states, swapped, 0.1,
                        TabularLearner(target.perfect_decoder), n_learn, n_test, rng, max_episodes=50_000)
for c, st in enumerate(res.states):
    print(f"cluster {c}: mean test return per hypothesis {np.round(st.values, 3)}, "
          f"chose start state {res.mapping[c]} after {st.episodes} episodes")
print(f"all clusters resolved after {res.episodes_used} episodes")
