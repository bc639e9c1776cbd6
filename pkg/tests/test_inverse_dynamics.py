from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import bayes_posterior_loop
from simtransfer.block import OneHotEmission
from simtransfer.envs.random_mdp import build_random_perturbed_pair
from simtransfer.inverse_dynamics import (BayesOptimalLearner, ClassifierConfig, NeuralLearner, NeuralModel,
                                          TabularLearner, TrainingError, TransitionDataset,
                                          UnreachablePairError, bayes_optimal, fit, fit_tabular,
                                          samples_per_step)

seeds = st.integers(0, 2**32 - 1)
onehot = OneHotEmission(6)


def eye(i, n=6):
    return np.eye(n)[i]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.integers(1, 4), st.floats(0.0, 0.45), seeds)
def test_bayes_posterior_matches_loop_oracle(S, A, H, eta, seed):
    _, m_star, _ = build_random_perturbed_pair((S, A, H), eta, np.random.default_rng(seed))
    T = m_star.transitions
    em = OneHotEmission(S)
    for h in range(1, H + 1):
        model = bayes_optimal(m_star, em.decode, h)
        for s in range(S):
            for s2 in range(S):
                if T[h - 1, s, :, s2].sum() == 0:
                    with pytest.raises(UnreachablePairError):
                        model.predict(eye(s, S), eye(s2, S))
                    continue
                p = model.predict(eye(s, S), eye(s2, S))
                assert np.allclose(p, bayes_posterior_loop(T, h - 1, s, s2), atol=1e-12)
                assert p.sum() == pytest.approx(1.0)


def test_batched_prediction_stacks_rows():
    _, m_star, _ = build_random_perturbed_pair((3, 2, 2), 0.2, np.random.default_rng(0))
    model = bayes_optimal(m_star, OneHotEmission(3).decode, 1)
    s = 0
    reach = [s2 for s2 in range(3) if m_star.transitions[0, s, :, s2].sum() > 0][0]
    x = np.stack([eye(s, 3)] * 2)
    xn = np.stack([eye(reach, 3)] * 2)
    out = model.predict(x, xn)
    assert out.shape == (2, 2) and np.allclose(out[0], model.predict(eye(s, 3), eye(reach, 3)))


def test_tabular_fit_matches_counts():
    x = np.stack([eye(0), eye(0), eye(0), eye(1)])
    xn = np.stack([eye(2), eye(2), eye(2), eye(3)])
    data = TransitionDataset(x, [1, 1, 2, 0], xn, 0, 3)
    model = fit_tabular(data, onehot.decode)
    assert model.predict(eye(0), eye(2)) == pytest.approx([0, 2 / 3, 1 / 3])
    assert model.argmax(eye(0), eye(2)) == 1
    assert model.predict(eye(4), eye(5)) == pytest.approx([1 / 3] * 3)
    smoothed = fit_tabular(data, onehot.decode, laplace=1.0)
    assert smoothed.predict(eye(1), eye(3)) == pytest.approx([0.5, 0.25, 0.25])


def test_tabular_argmax_breaks_ties_low():
    data = TransitionDataset(np.stack([eye(0)] * 2), [2, 1], np.stack([eye(1)] * 2), 0, 3)
    assert TabularLearner(onehot.decode).fit(data, None).argmax(eye(0), eye(1)) == 1


def test_dataset_validation():
    with pytest.raises(ValueError, match="label"):
        TransitionDataset(np.zeros((2, 3)), [0, 5], np.zeros((2, 3)), 0, 3)
    with pytest.raises(ValueError, match="matching"):
        TransitionDataset(np.zeros((2, 3)), [0, 1], np.zeros((3, 3)), 0, 3)
    empty = TransitionDataset.from_triples([], 0, 3)
    assert len(empty) == 0
    with pytest.raises(TrainingError, match="empty"):
        fit(empty, ClassifierConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        ClassifierConfig(learning_rate=0)
    with pytest.raises(ValueError):
        ClassifierConfig(validation_fraction=1.0)
    with pytest.raises(ValueError, match="input_shape"):
        ClassifierConfig(conv=((4, 3, 1),))


def separable_dataset(rng, n=600):
    """Next state reveals the action: s' = (s + a) mod 6 with one-hot views."""
    s = rng.integers(6, size=n)
    a = rng.integers(3, size=n)
    x = np.eye(6)[s] + 0.05 * rng.normal(size=(n, 6))
    xn = np.eye(6)[(s + a) % 6] + 0.05 * rng.normal(size=(n, 6))
    return TransitionDataset(x, a, xn, 0, 3)


def test_neural_fit_learns_identifiable_actions():
    rng = np.random.default_rng(0)
    data = separable_dataset(rng)
    model = fit(data, ClassifierConfig(hidden_sizes=(32,), learning_rate=0.01, max_epochs=60), rng)
    test = separable_dataset(np.random.default_rng(1), 200)
    acc = np.mean([model.argmax(x, xn) == a for x, a, xn in zip(test.x, test.actions, test.x_next)])
    assert acc > 0.95
    assert model.diagnostics["best_epoch"] >= 1 and math.isfinite(model.diagnostics["final_nll"])


def test_early_stopping_respects_patience():
    rng = np.random.default_rng(2)
    # labels independent of inputs: validation loss stops improving quickly
    data = TransitionDataset(rng.normal(size=(200, 4)), rng.integers(2, size=200), rng.normal(size=(200, 4)), 0, 2)
    model = fit(data, ClassifierConfig(hidden_sizes=(16,), learning_rate=0.05, max_epochs=200, patience=3), rng)
    assert model.diagnostics["epochs"] == model.diagnostics["best_epoch"] + 3


def test_warm_start_reuses_previous_parameters():
    rng = np.random.default_rng(3)
    data = separable_dataset(rng, 100)
    cfg = ClassifierConfig(hidden_sizes=(8,), max_epochs=1, patience=1, learning_rate=1e-9)
    first = NeuralLearner(cfg).fit(data, rng)
    second = NeuralLearner(cfg).fit(data, rng, previous=first)
    assert all(np.allclose(a, b, atol=1e-6) for a, b in zip(first.params, second.params))
    cold = NeuralLearner(ClassifierConfig(hidden_sizes=(8,), max_epochs=1, patience=1, learning_rate=1e-9,
                                          warm_start=False)).fit(data, rng, previous=first)
    assert not np.allclose(cold.params[0], first.params[0])


def test_neural_model_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    data = separable_dataset(rng, 60)
    model = fit(data, ClassifierConfig(hidden_sizes=(8,), max_epochs=2), rng)
    model.save(tmp_path / "model.json")
    back = NeuralModel.load(tmp_path / "model.json")
    assert np.allclose(back.predict(data.x, data.x_next), model.predict(data.x, data.x_next))


def test_conv_model_accepts_flat_observations():
    rng = np.random.default_rng(5)
    x = rng.random((40, 2 * 5 * 5))
    data = TransitionDataset(x, rng.integers(3, size=40), rng.random((40, 50)), 0, 3)
    cfg = ClassifierConfig(hidden_sizes=(8,), conv=((4, 3, 2),), input_shape=(4, 5, 5), max_epochs=2)
    model = fit(data, cfg, rng)
    p = model.predict(data.x[0], data.x_next[0])
    assert p.shape == (3,) and p.sum() == pytest.approx(1.0)


def test_oracle_learner_ignores_data():
    _, m_star, _ = build_random_perturbed_pair((3, 2, 3), 0.1, np.random.default_rng(6))
    learner = BayesOptimalLearner(m_star, OneHotEmission(3).decode)
    model = learner.fit(TransitionDataset.from_triples([], 2, 2), None)
    assert model.step == 2


def test_sample_size_formula():
    n = samples_per_step(5, 10, 0.1, 0.1, 0.1, 100)
    assert n == math.ceil(8 * 25 * 1000 * math.log(1000) / (0.1 * 0.64))
    assert samples_per_step(5, 10, 0.3, 0.1, 0.1, 100) > n


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.integers(1, 4), st.floats(0.0, 0.45), seeds)
def test_shadow_actions_beat_the_rest_by_the_margin(S, A, H, eta, seed):
    m0, m_star, _ = build_random_perturbed_pair((S, A, H), eta, np.random.default_rng(seed))
    T = m_star.transitions
    for t in range(H):
        model = bayes_optimal(m_star, OneHotEmission(S).decode, t + 1)
        for s in range(S):
            for s2 in np.unique(m0.next_state[t, s]):
                shadow = m0.next_state[t, s] == s2
                if shadow.all():
                    continue
                f = model.posterior(s, int(s2))
                assert f[shadow].min() - f[~shadow].max() >= (1 - 2 * eta) / A - 1e-12
