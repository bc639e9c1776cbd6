"""Benchmark environments and the JSON environment config."""
from __future__ import annotations

import json
from dataclasses import fields

from .combolock import CombinationLock, CombinationLockSpec, build_combination_lock
from .gridworld import Gridworld, GridworldSpec, build_gridworld
from .random_mdp import RandomEnv, RandomSpec, build_random_env, build_random_perturbed_pair

KINDS = {
    "combolock": (CombinationLockSpec, build_combination_lock),
    "gridworld": (GridworldSpec, build_gridworld),
    "random": (RandomSpec, build_random_env),
}


class EnvConfigError(ValueError):
    """Malformed environment config."""


def spec_from_config(cfg: dict):
    """Spec dataclass for a config ``{"kind": ..., <spec fields>}``."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise EnvConfigError("environment config needs a 'kind' field")
    kind = cfg["kind"]
    if kind not in KINDS:
        raise EnvConfigError(f"unknown environment kind {kind!r}; expected one of {sorted(KINDS)}")
    cls = KINDS[kind][0]
    names = {f.name for f in fields(cls)}
    extra = set(cfg) - names - {"kind"}
    if extra:
        raise EnvConfigError(f"unknown {kind} fields: {sorted(extra)}")
    args = {k: v for k, v in cfg.items() if k != "kind"}
    if kind == "gridworld" and isinstance(args.get("layout"), str):
        args["layout"] = tuple(args["layout"].strip("\n").splitlines())
    try:
        return cls(**args)
    except (TypeError, ValueError) as exc:
        raise EnvConfigError(f"invalid {kind} config: {exc}") from exc


def build_environment(cfg):
    """Build from a config dict or an existing spec object."""
    spec = cfg if not isinstance(cfg, dict) else spec_from_config(cfg)
    for cls, builder in KINDS.values():
        if isinstance(spec, cls):
            try:
                return builder(spec)
            except ValueError as exc:
                raise EnvConfigError(str(exc)) from exc
    raise EnvConfigError(f"not an environment spec: {type(spec).__name__}")


def load_env_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


__all__ = [
    "CombinationLock", "CombinationLockSpec", "build_combination_lock",
    "Gridworld", "GridworldSpec", "build_gridworld",
    "RandomEnv", "RandomSpec", "build_random_env", "build_random_perturbed_pair",
    "EnvConfigError", "spec_from_config", "build_environment", "load_env_config",
]
