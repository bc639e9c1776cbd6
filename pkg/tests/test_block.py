from __future__ import annotations

import numpy as np
import pytest

from simtransfer.block import (BlockMdp, DecodedStatePolicy, OneHotEmission, OpenLoopPolicy,
                               UniformRandomPolicy, estimate_policy_value, read_episode_log,
                               run_episode, run_exploration_step, write_episode_log)
from simtransfer.envs.random_mdp import build_random_perturbed_pair
from simtransfer.mdp import AbstractPolicy, evaluate_policy


@pytest.fixture
def target():
    m0, m_star, _ = build_random_perturbed_pair((4, 3, 4), 0.2, np.random.default_rng(0))
    return m0, BlockMdp(m_star, OneHotEmission(4))


def test_oracle_counts_resets(target):
    _, env = target
    oracle = env.oracle(np.random.default_rng(1))
    for _ in range(3):
        oracle.reset()
        oracle.step(0)
    assert oracle.episodes == 3


def test_step_outside_an_episode_is_an_error(target):
    _, env = target
    oracle = env.oracle(np.random.default_rng(1))
    with pytest.raises(RuntimeError, match="reset"):
        oracle.step(0)
    oracle.reset()
    for _ in range(env.horizon):
        oracle.step(1)
    with pytest.raises(RuntimeError):
        oracle.step(1)


def test_invalid_action_is_rejected(target):
    _, env = target
    oracle = env.oracle(np.random.default_rng(1))
    oracle.reset()
    with pytest.raises(ValueError, match="outside"):
        oracle.step(7)


def test_latent_trace_needs_permission(target):
    _, env = target
    oracle = env.oracle(np.random.default_rng(2))
    oracle.reset()
    with pytest.raises(PermissionError):
        oracle.latent_trace
    traced = env.oracle(np.random.default_rng(2), trace=True)
    ep = run_episode(traced, OpenLoopPolicy([0, 1, 2, 0]), trace=True)
    assert len(ep.latent_states) == env.horizon + 1
    assert [env.perfect_decoder(x) for x in ep.observations] == ep.latent_states


def test_episode_shapes_and_rewards(target):
    m0, env = target
    ep = run_episode(env.oracle(np.random.default_rng(3), trace=True), OpenLoopPolicy([2, 2, 2, 2]), trace=True)
    assert len(ep.observations) == 5 and len(ep.actions) == 4
    expected = [env.latent.rewards[t, s, 2] for t, s in enumerate(ep.latent_states[:-1])]
    assert ep.rewards == pytest.approx(expected)


def test_short_policy_is_rejected(target):
    _, env = target
    with pytest.raises(ValueError, match="shorter"):
        run_episode(env.oracle(np.random.default_rng(0)), OpenLoopPolicy([0, 0]))


def test_decoded_policy_value_matches_exact_evaluation(target):
    m0, env = target
    rng = np.random.default_rng(4)
    psi = AbstractPolicy(rng.integers(3, size=(4, 4)))
    _, exact = evaluate_policy(env.latent, psi)
    value, se = estimate_policy_value(env.oracle(rng), DecodedStatePolicy(psi, env.perfect_decoder), 20000)
    assert abs(value - exact) < 4 * se + 1e-9


def test_exploration_step_uses_one_episode(target):
    m0, env = target
    oracle = env.oracle(np.random.default_rng(5), trace=True)
    x, a, x_next = run_exploration_step(oracle, OpenLoopPolicy([1, 1, 1, 1]), 3, np.random.default_rng(6))
    trace = oracle.latent_trace
    assert oracle.episodes == 1 and len(trace) == 4
    assert env.perfect_decoder(x) == trace[2] and env.perfect_decoder(x_next) == trace[3]
    assert 0 <= a < 3
    with pytest.raises(ValueError):
        run_exploration_step(oracle, OpenLoopPolicy([1] * 4), 0, np.random.default_rng(6))


def test_exploration_action_is_uniform(target):
    _, env = target
    oracle = env.oracle(np.random.default_rng(7))
    rng = np.random.default_rng(8)
    acts = [run_exploration_step(oracle, OpenLoopPolicy([0] * 4), 1, rng)[1] for _ in range(6000)]
    assert np.allclose(np.bincount(acts, minlength=3) / 6000, 1 / 3, atol=0.025)


def test_policy_act_replays_history(target):
    _, env = target
    psi = AbstractPolicy(np.arange(16).reshape(4, 4) % 3)
    pol = DecodedStatePolicy(psi, env.perfect_decoder)
    ep = run_episode(env.oracle(np.random.default_rng(9)), pol)
    for t in range(4):
        assert pol.act(ep.observations[:t + 1]) == ep.actions[t]


def test_random_policy_is_reproducible(target):
    _, env = target
    runs = [run_episode(env.oracle(np.random.default_rng(10)),
                        UniformRandomPolicy(3, 4, np.random.default_rng(11))).actions for _ in range(2)]
    assert runs[0] == runs[1]


def test_episode_log_round_trip(tmp_path, target):
    _, env = target
    oracle = env.oracle(np.random.default_rng(12), trace=True)
    eps = [run_episode(oracle, OpenLoopPolicy([0, 1, 2, 0]), trace=True) for _ in range(3)]
    write_episode_log(eps, tmp_path / "log.jsonl", trace=True)
    recs = read_episode_log(tmp_path / "log.jsonl")
    assert [r["episode_index"] for r in recs] == [0, 1, 2]
    assert recs[1]["return"] == pytest.approx(eps[1].ret)
    assert recs[2]["latent_trace"] == eps[2].latent_states
    write_episode_log(eps, tmp_path / "plain.jsonl")
    assert "latent_trace" not in read_episode_log(tmp_path / "plain.jsonl")[0]
