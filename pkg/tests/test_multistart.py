from __future__ import annotations

import math

import numpy as np
import pytest

from simtransfer.envs.combolock import CombinationLockSpec, build_combination_lock
from simtransfer.harness import perfect_clustering
from simtransfer.inverse_dynamics import TabularLearner
from simtransfer.multistart import (InitialStateTestState, initial_state_test, n_learn_episodes,
                                    n_test_episodes, tasid_multi_start)
from simtransfer.tasid import Tasid


@pytest.fixture(scope="module")
def two_locks():
    return build_combination_lock(CombinationLockSpec(horizon=4, eta=0.1, num_locks=2, seed=3))


def run(lock, n_learn=300, n_test=60, max_episodes=10**6, clustering=None, seed=0):
    env = lock.target
    rng = np.random.default_rng(seed)
    oracle = env.oracle(rng)
    res = tasid_multi_start(oracle, lock.abstract, lock.initial_states, clustering or perfect_clustering(lock),
                            0.1, TabularLearner(env.perfect_decoder), n_learn, n_test, rng, max_episodes)
    return res, oracle


def test_phase_lengths():
    assert n_test_episodes(5, 2, 0.5, 0.1) == math.ceil(25 * math.log(20) / 0.5)
    assert n_learn_episodes(5, 10, 2, 0.1, 0.5, 0.1, 100) == math.ceil(
        8 * 625 * 1000 * math.log(4 * 100 / 0.1) / (0.5 * 0.64))


def test_clusters_resolve_to_their_start_states(two_locks):
    res, oracle = run(two_locks)
    assert res.mapping == two_locks.initial_states
    assert [st.episodes for st in res.states] == [2 * 360, 2 * 360]
    assert res.episodes_used == oracle.episodes
    assert max(res.resolution_episodes) == res.episodes_used


def test_each_hypothesis_gets_its_full_share(two_locks):
    res, _ = run(two_locks)
    for st in res.states:
        assert st.cnt.tolist() == [360, 360]
        assert st.values[st.resolved] == st.values.max()


def test_budget_cutoff_leaves_clusters_open(two_locks):
    res, _ = run(two_locks, max_episodes=100)
    assert res.mapping == [None, None] and res.policies == [None, None]
    assert res.episodes_used == 100


def test_bad_cluster_id_is_reported(two_locks):
    with pytest.raises(ValueError, match="outside"):
        run(two_locks, clustering=lambda x: 5)


def test_learn_phase_shorter_than_horizon_is_rejected(two_locks):
    with pytest.raises(ValueError, match="below"):
        run(two_locks, n_learn=2)


def test_spare_learn_episodes_become_rollouts(two_locks):
    lock = two_locks
    env = lock.target
    rng = np.random.default_rng(1)
    oracle = env.oracle(rng)
    m = lock.abstract
    learners = [Tasid(m.with_init_state(s), 0.1, TabularLearner(env.perfect_decoder), 2, rng)
                for s in lock.initial_states]
    state = InitialStateTestState(2, 10, 3, learners)
    for _ in range(13):
        assert initial_state_test(state, oracle, oracle.reset()) is None
    # TASID needs (H - 1) * 2 = 6 episodes, the other 4 learn-phase episodes are plain rollouts
    assert learners[0].episodes_used == 6 and state.hypothesis == 1
    for _ in range(13):
        out = initial_state_test(state, oracle, oracle.reset())
    assert out == state.resolved is not None and state.episodes == 26
    with pytest.raises(RuntimeError, match="resolved"):
        initial_state_test(state, oracle, oracle.reset())
