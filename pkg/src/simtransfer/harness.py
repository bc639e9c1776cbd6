"""Experiment runner: seeds, budgets, threshold metrics, sweeps and CSV/JSON output.

Every seed builds its own environment (the environment seed is the run seed)
and owns its random streams, so seeds can run on separate threads and still
assemble into the same report. Episodes spent in the target are read off the
learning oracle's counter; evaluation rollouts use a separate oracle and do
not count toward the budget.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .block import (DecodedStatePolicy, OpenLoopPolicy, PracticablePolicy, UniformRandomPolicy,
                    estimate_policy_value)
from .envs import EnvConfigError, build_environment, spec_from_config
from .inverse_dynamics import BayesOptimalLearner, ClassifierConfig, NeuralLearner, TabularLearner
from .mdp import evaluate_policy, value_iteration
from .multistart import tasid_multi_start
from .robust import robust_dp
from .tasid import Tasid

log = logging.getLogger(__name__)

ALGORITHMS = ("tasid", "tasid-multi-start", "robust-oracle", "open-loop", "random")
LEARNERS = ("neural", "tabular", "oracle")
AXES = ("eta", "height", "budget")
DEFAULT_BUDGETS = (10_000, 50_000, 100_000, 400_000)
UNAVAILABLE_BASELINES = ("ppo", "ppo-rnd", "domain-randomization")
GRID_CONV = ((16, 3, 2), (32, 2, 1))


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Budgets are total target episodes per run unless ``budget_unit`` is
    ``"samples_per_step"``. ``learner`` is ``{"kind": ..., ...}``; the
    tabular learner's ``key`` may be ``"state"`` (perfect decoder), which like
    the ``oracle`` learner needs privileged access and is meant for checks."""

    env: dict
    algorithm: str = "tasid"
    seeds: list = field(default_factory=lambda: [0])
    budgets: list = field(default_factory=lambda: list(DEFAULT_BUDGETS))
    budget_unit: str = "episodes"
    learner: dict = field(default_factory=lambda: {"kind": "neural"})
    eval_rollouts: int = 1000
    threshold: float = 0.95
    n_learn: Optional[int] = None
    n_test: Optional[int] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        self.seeds = [int(s) for s in self.seeds]
        self.budgets = sorted(int(b) for b in self.budgets)
        if not self.budgets or self.budgets[0] <= 0:
            raise ConfigError("budgets must be a nonempty list of positive integers")
        if self.budget_unit not in ("episodes", "samples_per_step"):
            raise ConfigError("budget_unit must be 'episodes' or 'samples_per_step'")
        if self.learner.get("kind") not in LEARNERS:
            raise ConfigError(f"learner kind must be one of {LEARNERS}")
        if self.eval_rollouts < 1:
            raise ConfigError("eval_rollouts must be positive")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.algorithm == "tasid-multi-start" and (self.n_learn is None or self.n_test is None):
            raise ConfigError("tasid-multi-start needs n_learn and n_test")
        try:
            spec_from_config(self.env)
        except EnvConfigError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict) or "env" not in d:
            raise ConfigError("experiment config needs an 'env' object")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown experiment fields: {sorted(extra)}")
        return cls(**copy.deepcopy(d))

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))


@dataclass
class Checkpoint:
    budget: int
    episodes_used: int
    value: float
    se: float
    passed: bool


@dataclass
class SeedResult:
    seed: int
    v_rho: Optional[float] = None
    checkpoints: list = field(default_factory=list)
    episodes_to_threshold: Optional[int] = None
    final_value: Optional[float] = None
    final_se: Optional[float] = None
    error: Optional[str] = None
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["episodes_to_threshold"] = "inf" if self.episodes_to_threshold is None else self.episodes_to_threshold
        return d


def _quartiles(values) -> dict:
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return {"median": None, "q1": None, "q3": None, "mean": None, "se": None}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "mean": float(v.mean()), "se": se}


@dataclass
class RunReport:
    config: dict
    seeds: list
    version: str = __version__

    @property
    def failed(self) -> list:
        return [r.seed for r in self.seeds if r.error is not None]

    def median_episodes_to_threshold(self):
        """Median over seeds with unreached seeds counted as infinite."""
        vals = [math.inf if r.episodes_to_threshold is None else r.episodes_to_threshold
                for r in self.seeds if r.error is None]
        if not vals:
            return None
        med = float(np.median(vals))
        return "inf" if math.isinf(med) else med

    def summary(self) -> dict:
        ok = [r for r in self.seeds if r.error is None]
        return {
            "median_episodes_to_threshold": self.median_episodes_to_threshold(),
            "final_value": _quartiles([r.final_value for r in ok]),
            "v_rho": _quartiles([r.v_rho for r in ok]),
            "seeds_passed": sum(r.episodes_to_threshold is not None for r in ok),
            "seeds_failed": self.failed,
        }

    def to_dict(self, timing: bool = True) -> dict:
        seeds = [r.to_dict() for r in self.seeds]
        d = {"version": self.version, "config": self.config, "seeds": seeds, "summary": self.summary(),
             "unavailable_baselines": list(UNAVAILABLE_BASELINES)}
        if timing:
            d["timing"] = {"wall_clock_s": {str(r.seed): r.wall_clock_s for r in self.seeds}}
        for s in seeds:
            s.pop("wall_clock_s")
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)


# ---------------------------------------------------------------- running one seed

def make_learner(cfg: dict, env):
    kind = cfg.get("kind", "neural")
    if kind == "neural":
        opts = {k: v for k, v in cfg.items() if k != "kind"}
        shape = getattr(env.target.emission, "shape", None)
        if shape is not None and "conv" not in opts:
            # two strided conv layers sized for a 7 x 7 cell grid, stacked pair of views
            opts["conv"] = GRID_CONV
            opts["input_shape"] = (2 * shape[0],) + tuple(shape[1:])
        return NeuralLearner(ClassifierConfig(**opts))
    if kind == "tabular":
        key = cfg.get("key", "state")
        if key == "state":
            fn = env.target.perfect_decoder
        elif key == "motion" and hasattr(env.target.emission, "motion_key"):
            fn = env.target.emission.motion_key
        else:
            raise ConfigError(f"unknown tabular key {key!r}")
        return TabularLearner(fn, float(cfg.get("laplace", 0.0)))
    if kind == "oracle":
        return BayesOptimalLearner(env.target.latent, env.target.perfect_decoder)
    raise ConfigError(f"unknown learner kind {kind!r}")


class ClusterRoutedPolicy(PracticablePolicy):
    """Chooses a per-cluster policy from the first observation."""

    def __init__(self, clustering, policies: Sequence[PracticablePolicy], horizon: int):
        self.clustering = clustering
        self.policies = list(policies)
        self.horizon = horizon

    def start(self):
        return _RoutedRunner(self)


class _RoutedRunner:
    def __init__(self, p: ClusterRoutedPolicy):
        self.p = p
        self.inner = None

    def act(self, x):
        if self.inner is None:
            policy = self.p.policies[self.p.clustering(x)]
            if policy is None:
                raise RuntimeError("cluster was never resolved")
            self.inner = policy.start()
        return self.inner.act(x)


def perfect_clustering(env):
    """Cluster id = index of the decoded start state. Uses the perfect decoder."""
    lookup = {s: i for i, s in enumerate(env.initial_states)}
    decode = env.target.perfect_decoder
    return lambda x: lookup.get(decode(x), 0)


def open_loop_policy(m0) -> OpenLoopPolicy:
    """The optimal action sequence of the simulator, executed blindly."""
    pi, _ = value_iteration(m0)
    s, actions = m0.init_state, []
    for t in range(m0.horizon):
        actions.append(pi(t, s))
        s = int(m0.next_state[t, s, actions[-1]])
    return OpenLoopPolicy(actions)


def _per_step(config: ExperimentConfig, budget: int, horizon: int) -> int:
    if config.budget_unit == "samples_per_step":
        return budget
    return max(1, budget // max(horizon - 1, 1))


def _learn(config: ExperimentConfig, env, eta: float, budget: int, rng: np.random.Generator):
    """Spend up to ``budget`` on learning; returns ``(policy, episodes_used)``."""
    m0, target = env.abstract, env.target
    if config.algorithm == "robust-oracle":
        return DecodedStatePolicy(robust_dp(m0, eta).rho, target.perfect_decoder), 0
    if config.algorithm == "open-loop":
        return open_loop_policy(m0), 0
    if config.algorithm == "random":
        return UniformRandomPolicy(m0.num_actions, m0.horizon, rng), 0
    learner = make_learner(config.learner, env)
    oracle = target.oracle(rng)
    if config.algorithm == "tasid":
        run = Tasid(m0, eta, learner, _per_step(config, budget, m0.horizon), rng).run(oracle)
        return run.policy, oracle.episodes
    clustering = perfect_clustering(env)
    res = tasid_multi_start(oracle, m0, env.initial_states, clustering, eta, learner,
                            config.n_learn, config.n_test, rng, max_episodes=budget)
    return ClusterRoutedPolicy(clustering, res.policies, m0.horizon), oracle.episodes


def run_seed(config: ExperimentConfig, seed: int) -> SeedResult:
    start = time.perf_counter()
    result = SeedResult(seed)
    try:
        env_cfg = dict(config.env, seed=seed)
        env = build_environment(env_cfg)
        eta = float(env.spec.eta)
        rho = robust_dp(env.abstract, eta).rho
        _, result.v_rho = evaluate_policy(env.target.latent, rho)
        learn_ss, eval_ss = np.random.SeedSequence([seed, 1]).spawn(2)
        fixed = config.algorithm in ("robust-oracle", "open-loop", "random")
        budgets = config.budgets[:1] if fixed else config.budgets
        for budget, ss in zip(budgets, learn_ss.spawn(len(budgets))):
            rng = np.random.default_rng(ss)
            policy, used = _learn(config, env, eta, budget, rng)
            eval_rng = np.random.default_rng(eval_ss)
            value, se = estimate_policy_value(env.target.oracle(eval_rng), policy, config.eval_rollouts)
            passed = value >= config.threshold * result.v_rho
            result.checkpoints.append(Checkpoint(budget, used, value, se, bool(passed)))
            if passed and result.episodes_to_threshold is None:
                result.episodes_to_threshold = used
        last = result.checkpoints[-1]
        result.final_value, result.final_se = last.value, last.se
    except Exception as exc:  # one bad seed must not sink the sweep
        log.exception("seed %d failed", seed)
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_clock_s = time.perf_counter() - start
    return result


def run_experiment(config: ExperimentConfig, threads: int = 1) -> RunReport:
    """Every seed under every budget; seeds may run on ``threads`` workers."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda s: run_seed(config, s), config.seeds))
    else:
        results = [run_seed(config, s) for s in config.seeds]
    return RunReport(config.to_dict(), results)


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepTable:
    axis: str
    rows: list

    def to_dict(self) -> dict:
        return {"axis": self.axis, "rows": self.rows}


def _with_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    d = config.to_dict()
    if axis == "eta":
        d["env"]["eta"] = float(value)
    elif axis == "height":
        if d["env"].get("kind") != "gridworld":
            raise ConfigError("the height axis applies to gridworld environments only")
        d["env"]["height"] = int(value)
    elif axis == "budget":
        d["budgets"] = [int(value)]
    else:
        raise ConfigError(f"axis must be one of {AXES}")
    return ExperimentConfig.from_dict(d)


def sweep(config: ExperimentConfig, axis: str, values, threads: int = 1) -> tuple[SweepTable, list]:
    """Independent experiment per axis value, rows sorted by value."""
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}")
    rows, reports = [], []
    for v in sorted(values):
        rep = run_experiment(_with_axis(config, axis, v), threads)
        s = rep.summary()
        rows.append({"value": v, **{k: s["final_value"][k] for k in ("mean", "se", "median", "q1", "q3")},
                     "v_rho_mean": s["v_rho"]["mean"], "seeds_failed": len(s["seeds_failed"])})
        reports.append(rep)
    return SweepTable(axis, rows), reports


CSV_FIELDS = ("value", "median", "q1", "q3", "mean", "se", "v_rho_mean")


def report_rows(report: RunReport) -> list[dict]:
    """One row per budget: quartiles of the checkpoint values across seeds."""
    rows = []
    for i, b in enumerate(report.config["budgets"]):
        vals = [r.checkpoints[i].value for r in report.seeds if r.error is None and i < len(r.checkpoints)]
        if not vals:
            continue
        q = _quartiles(vals)
        rows.append({"value": b, **{k: q[k] for k in ("median", "q1", "q3", "mean", "se")},
                     "v_rho_mean": report.summary()["v_rho"]["mean"]})
    return rows


def emit_plot_data(data, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths."""
    rows = data.rows if isinstance(data, SweepTable) else report_rows(data)
    rows = sorted(rows, key=lambda r: r["value"])
    base = Path(path)
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r.get(k) is None else repr(float(r[k]))) for k in CSV_FIELDS})
        json_path.write_text(json.dumps({"axis": getattr(data, "axis", "budget"), "rows": rows},
                                        indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"could not write plot data to {base}: {exc}") from exc
    return csv_path, json_path


def read_plot_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(f)]
