"""Inverse dynamics models ``f_h(a | x, x')`` and their learners.

Three interchangeable routes produce an :class:`InverseDynamicsModel`:

* :func:`fit` trains a feedforward (optionally convolutional) classifier by
  minimising the average negative log-likelihood;
* :func:`fit_tabular` computes the exact empirical conditional over a
  discretisation ``key(x)``;
* :func:`bayes_optimal` evaluates the exact posterior from the latent MDP and
  the perfect decoder (test/diagnostic use only).

The matching ``*Learner`` classes wrap these behind one ``fit(dataset, rng,
previous)`` call that TASID uses.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import nn
from .mdp import EpisodicMdp


class UnreachablePairError(ValueError):
    """The pair (x, x') has zero probability under every action."""


class TrainingError(RuntimeError):
    pass


@dataclass
class TransitionDataset:
    """Triples ``(x_h, a_h, x_{h+1})`` gathered at one step (0-based ``step``)."""

    x: np.ndarray
    actions: np.ndarray
    x_next: np.ndarray
    step: int
    num_actions: int

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.x_next = np.atleast_2d(np.asarray(self.x_next, dtype=float))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        n = len(self.actions)
        if n and (self.x.shape[0] != n or self.x_next.shape != self.x.shape):
            raise ValueError("x, actions and x_next must have matching lengths and dimensions")
        if n and (self.actions.min() < 0 or self.actions.max() >= self.num_actions):
            raise ValueError("action label out of range")

    @classmethod
    def from_triples(cls, triples, step: int, num_actions: int) -> "TransitionDataset":
        if not triples:
            return cls(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)), step, num_actions)
        xs, acts, xns = zip(*triples)
        return cls(np.stack(xs), np.array(acts), np.stack(xns), step, num_actions)

    def __len__(self):
        return len(self.actions)

    @property
    def obs_dim(self) -> int:
        return self.x.shape[1]

    def inputs(self) -> np.ndarray:
        return np.concatenate([self.x, self.x_next], axis=1)


class InverseDynamicsModel:
    """``predict(x, x')`` returns a probability vector over actions.

    Batched inputs (2-D arrays) give one row per pair.
    """

    num_actions: int
    kind: str = "abstract"
    diagnostics: dict

    def predict(self, x: np.ndarray, x_next: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def argmax(self, x: np.ndarray, x_next: np.ndarray) -> int:
        return argmax_action(self, x, x_next)


def argmax_action(model: InverseDynamicsModel, x, x_next) -> int:
    """Shadow-action decoder: most probable action, lowest index on ties."""
    return int(np.argmax(model.predict(x, x_next)))


# ---------------------------------------------------------------- Bayes optimal

class BayesOptimalModel(InverseDynamicsModel):
    kind = "bayes"

    def __init__(self, latent: EpisodicMdp, decoder: Callable[[np.ndarray], int], step: int):
        self.latent = latent
        self.decoder = decoder
        self.step = step
        self.num_actions = latent.num_actions
        self.diagnostics = {}
        T = latent.transitions[step] if latent.num_states <= 256 else None
        self._dense = T

    def _column(self, s: int, s2: int) -> np.ndarray:
        if self._dense is not None:
            return self._dense[s, :, s2]
        m = self.latent
        return np.where(m.next_states[self.step, s] == s2, m.probs[self.step, s], 0.0).sum(axis=-1)

    def posterior(self, s: int, s2: int) -> np.ndarray:
        col = self._column(s, s2)
        total = col.sum()
        if total <= 0:
            raise UnreachablePairError(f"no action leads from state {s} to {s2} at step {self.step + 1}")
        return col / total

    def predict(self, x, x_next):
        x = np.asarray(x)
        if x.ndim == 2:
            return np.stack([self.predict(a, b) for a, b in zip(x, np.asarray(x_next))])
        return self.posterior(self.decoder(x), self.decoder(x_next))


def bayes_optimal(latent: EpisodicMdp, decoder: Callable[[np.ndarray], int], h: int) -> BayesOptimalModel:
    """Exact posterior ``T*_h(s'|s,a) / sum_a' T*_h(s'|s,a')`` at 1-based step ``h``."""
    return BayesOptimalModel(latent, decoder, h - 1)


# ---------------------------------------------------------------- tabular

class TabularModel(InverseDynamicsModel):
    kind = "tabular"

    def __init__(self, counts: dict, key: Callable[[np.ndarray], int], num_actions: int, laplace: float):
        self.counts = counts
        self.key = key
        self.num_actions = num_actions
        self.laplace = float(laplace)
        self.diagnostics = {"pairs": len(counts)}
        self._cache: dict = {}

    def table(self, k1: int, k2: int) -> np.ndarray:
        c = self.counts.get((k1, k2))
        if c is None:
            c = np.zeros(self.num_actions)
        c = c + self.laplace
        total = c.sum()
        if total <= 0:
            return np.full(self.num_actions, 1.0 / self.num_actions)
        return c / total

    def predict(self, x, x_next):
        x = np.asarray(x)
        if x.ndim == 2:
            return np.stack([self.predict(a, b) for a, b in zip(x, np.asarray(x_next))])
        return self.table(self.key(x), self.key(x_next))

    def argmax(self, x, x_next):
        pair = (self.key(x), self.key(x_next))
        a = self._cache.get(pair)
        if a is None:
            a = self._cache[pair] = int(np.argmax(self.table(*pair)))
        return a


def fit_tabular(dataset: TransitionDataset, key: Callable[[np.ndarray], int], laplace: float = 0.0) -> TabularModel:
    """Empirical conditional ``(count(k, k', a) + laplace) / sum_a (.)``."""
    counts: dict = {}
    A = dataset.num_actions
    for x, a, xn in zip(dataset.x, dataset.actions, dataset.x_next):
        pair = (key(x), key(xn))
        if pair not in counts:
            counts[pair] = np.zeros(A)
        counts[pair][a] += 1
    return TabularModel(counts, key, A, laplace)


# ---------------------------------------------------------------- neural

@dataclass
class ClassifierConfig:
    hidden_sizes: tuple = (56, 56)
    learning_rate: float = 3e-4
    batch_size: int = 32
    gradient_clip_norm: float = 0.25
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.2
    warm_start: bool = True
    conv: tuple = ()
    input_shape: Optional[tuple] = None

    def __post_init__(self):
        self.hidden_sizes = tuple(int(n) for n in self.hidden_sizes)
        self.conv = tuple(c if isinstance(c, nn.ConvSpec) else nn.ConvSpec(*c) for c in self.conv)
        if self.input_shape is not None:
            self.input_shape = tuple(int(n) for n in self.input_shape)
        if min(self.learning_rate, self.batch_size, self.gradient_clip_norm,
               self.max_epochs, self.patience) <= 0 or any(n <= 0 for n in self.hidden_sizes):
            raise ValueError("classifier hyper-parameters must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.conv and self.input_shape is None:
            raise ValueError("a conv stack needs input_shape (C, H, W) for the stacked pair")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [[c.out_channels, c.kernel, c.stride] for c in self.conv]
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


class NeuralModel(InverseDynamicsModel):
    kind = "neural"

    def __init__(self, arch: nn.Architecture, params: list, diagnostics: Optional[dict] = None):
        self.arch = arch
        self.params = params
        self.num_actions = arch.num_classes
        self.diagnostics = diagnostics or {}

    def _inputs(self, x, x_next):
        if self.arch.conv:
            C = self.arch.input_shape[0] // 2
            a = np.asarray(x).reshape(-1, C, *self.arch.input_shape[1:])
            b = np.asarray(x_next).reshape(-1, C, *self.arch.input_shape[1:])
            return np.concatenate([a, b], axis=1).reshape(a.shape[0], -1)
        return np.concatenate([np.atleast_2d(x), np.atleast_2d(x_next)], axis=1)

    def predict(self, x, x_next):
        p = nn.predict_proba(self.arch, self.params, self._inputs(x, x_next))
        return p if np.asarray(x).ndim == 2 else p[0]

    def argmax(self, x, x_next):
        return int(np.argmax(nn.forward(self.arch, self.params, self._inputs(x, x_next))[0]))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "architecture": self.arch.to_dict(),
            "shapes": [list(p.shape) for p in self.params],
            "params": [p.ravel().tolist() for p in self.params],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NeuralModel":
        params = [np.asarray(v, dtype=float).reshape(s) for v, s in zip(d["params"], d["shapes"])]
        return cls(nn.Architecture.from_dict(d["architecture"]), params, d.get("diagnostics"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NeuralModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _split(actions: np.ndarray, fraction: float, rng: np.random.Generator):
    """Seeded train/validation split, stratified by action where a class has
    enough samples to contribute to both sides."""
    val = []
    for a in np.unique(actions):
        idx = np.flatnonzero(actions == a)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(fraction * len(idx)))
        if len(idx) >= 2:
            val.extend(idx[:max(k, 0)].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    if len(val) == 0:
        val = rng.permutation(len(actions))[:max(1, int(round(fraction * len(actions))))]
    mask = np.ones(len(actions), dtype=bool)
    mask[val] = False
    train = np.flatnonzero(mask)
    if len(train) == 0:
        train, val = val, val
    return train, np.sort(val)


def architecture_for(dataset: TransitionDataset, config: ClassifierConfig) -> nn.Architecture:
    return nn.Architecture(2 * dataset.obs_dim, dataset.num_actions, config.hidden_sizes,
                           config.conv, config.input_shape)


def fit(dataset: TransitionDataset, config: ClassifierConfig, rng: np.random.Generator,
        init: Optional[NeuralModel] = None) -> NeuralModel:
    """Maximise the empirical log-likelihood of the observed actions.

    Mini-batch Adam on the mean NLL with global-norm gradient clipping. The
    held-out NLL is checked after every epoch; training stops after
    ``patience`` epochs without improvement (or ``max_epochs``) and the best
    parameters seen are returned.
    """
    if len(dataset) == 0:
        raise TrainingError("cannot fit an inverse dynamics model on an empty dataset")
    arch = architecture_for(dataset, config)
    if init is not None and init.arch == arch:
        params = [p.copy() for p in init.params]
    else:
        params = nn.init_params(arch, rng)
    probe = NeuralModel(arch, params)
    X = probe._inputs(dataset.x, dataset.x_next)
    y = dataset.actions
    if len(dataset) >= 2:
        train, val = _split(y, config.validation_fraction, rng)
    else:
        train = val = np.arange(len(dataset))
    opt = nn.Adam(lr=config.learning_rate)
    best_loss, best_params, best_epoch = math.inf, [p.copy() for p in params], 0
    stale = 0
    history = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = train[rng.permutation(len(train))]
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start:start + config.batch_size]
            loss, grads = nn.nll_and_grad(arch, params, X[batch], y[batch])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(params, nn.clip_by_global_norm(grads, config.gradient_clip_norm))
        logp = nn.log_softmax(nn.forward(arch, params, X[val]))
        val_loss = float(-logp[np.arange(len(val)), y[val]].mean())
        history.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_params, best_epoch = val_loss, [p.copy() for p in params], epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    diagnostics = {"final_nll": best_loss, "best_epoch": best_epoch, "epochs": epoch,
                   "train_size": int(len(train)), "val_size": int(len(val))}
    return NeuralModel(arch, best_params, diagnostics)


# ---------------------------------------------------------------- learners

class NeuralLearner:
    kind = "neural"

    def __init__(self, config: Optional[ClassifierConfig] = None):
        self.config = config or ClassifierConfig()

    def fit(self, dataset, rng, previous=None):
        init = previous if self.config.warm_start and isinstance(previous, NeuralModel) else None
        return fit(dataset, self.config, rng, init=init)


class TabularLearner:
    kind = "tabular"

    def __init__(self, key: Callable[[np.ndarray], int], laplace: float = 0.0):
        self.key = key
        self.laplace = laplace

    def fit(self, dataset, rng, previous=None):
        return fit_tabular(dataset, self.key, self.laplace)


class BayesOptimalLearner:
    """Ignores the data and returns the exact posterior. Needs trace-level
    access to the target (latent MDP and perfect decoder)."""

    kind = "oracle"

    def __init__(self, latent: EpisodicMdp, decoder: Callable[[np.ndarray], int]):
        self.latent = latent
        self.decoder = decoder

    def fit(self, dataset, rng, previous=None):
        return BayesOptimalModel(self.latent, self.decoder, dataset.step)


def samples_per_step(horizon: int, num_actions: int, eta: float, epsilon: float, delta: float,
                     class_size: float) -> int:
    """``n_D = 8 H^2 |A|^3 ln(|F|/delta) / (epsilon (1 - 2 eta)^2)`` for a finite class proxy."""
    n = 8 * horizon**2 * num_actions**3 * math.log(class_size / delta) / (epsilon * (1 - 2 * eta) ** 2)
    return int(math.ceil(n))
