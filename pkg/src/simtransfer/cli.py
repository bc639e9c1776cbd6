"""Command-line entry point.

Exit status: 0 on success, 2 for bad configuration or input files, 3 when
one or more seeds of an experiment failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .block import DecodedStatePolicy, UniformRandomPolicy, estimate_policy_value, run_episode
from .envs import EnvConfigError, build_environment
from .harness import (AXES, ConfigError, ExperimentConfig, LEARNERS, emit_plot_data, make_learner,
                      open_loop_policy, run_experiment, sweep)
from .mdp import DeterministicMdp, MdpError, evaluate_policy, load_mdp, save_mdp, value_iteration
from .robust import robust_dp
from .tasid import Tasid, shadow_hit_rate

EXIT_OK, EXIT_CONFIG, EXIT_SEED = 0, 2, 3
log = logging.getLogger("simtransfer")


class CliConfigError(Exception):
    pass


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliConfigError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliConfigError(f"{path} is not valid JSON: {exc}") from exc


def _emit(args, name: str, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")
    print(text)


def _env_config(args) -> dict:
    path = getattr(args, "env", None) or args.config
    if path is None:
        raise CliConfigError("an environment config is required (--env or --config)")
    cfg = _load_json(path)
    return cfg.get("env", cfg) if isinstance(cfg, dict) else cfg


# ---------------------------------------------------------------- subcommands

def cmd_solve_robust(args) -> int:
    m = load_mdp(args.mdp)
    if not isinstance(m, DeterministicMdp):
        print("warning: input MDP is stochastic; the robust guarantee assumes a deterministic simulator",
              file=sys.stderr)
    sol = robust_dp(m, args.eta)
    payload = {**sol.to_dict(), "value": sol.value(m)}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True))
    _emit(args, "robust_solution.json", payload)
    return EXIT_OK


def cmd_run_tasid(args) -> int:
    cfg = dict(_env_config(args))
    if args.seed is not None:
        cfg["seed"] = args.seed
    env = build_environment(cfg)
    m0 = env.abstract
    if args.abstract:
        m0 = load_mdp(args.abstract)
        if not isinstance(m0, DeterministicMdp):
            raise CliConfigError("--abstract must be a deterministic MDP")
        if (m0.num_states, m0.num_actions, m0.horizon) != (env.abstract.num_states, env.abstract.num_actions,
                                                           env.abstract.horizon):
            raise CliConfigError("--abstract does not match the environment's dimensions")
    eta = env.spec.eta if args.eta is None else args.eta
    seed = 0 if args.seed is None else args.seed
    learn_ss, eval_ss = np.random.SeedSequence([seed, 1]).spawn(2)
    rng = np.random.default_rng(learn_ss)
    oracle = env.target.oracle(rng)
    run = Tasid(m0, eta, make_learner({"kind": args.learner}, env), args.samples_per_step, rng).run(oracle)
    _, v_rho = evaluate_policy(env.target.latent, run.solution.rho)
    eval_oracle = env.target.oracle(np.random.default_rng(eval_ss), trace=args.trace)
    episodes = [run_episode(eval_oracle, run.policy, trace=args.trace) for _ in range(args.eval_rollouts)]
    returns = np.array([e.ret for e in episodes])
    se = float(returns.std(ddof=1) / np.sqrt(len(returns))) if len(returns) > 1 else 0.0
    report = {
        "episodes_used": oracle.episodes,
        "samples_per_step": run.samples_per_step,
        "steps": run.step_diagnostics,
        "value": float(returns.mean()),
        "se": se,
        "v_rho": v_rho,
        "threshold": 0.95 * v_rho,
        "passed": bool(returns.mean() >= 0.95 * v_rho),
    }
    if args.trace:
        report["shadow_hit_rate"] = shadow_hit_rate(run, episodes)
    _emit(args, "tasid_report.json", report)
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    if args.config is None:
        raise CliConfigError("run-experiment needs --config")
    config = ExperimentConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config.seeds = [args.seed]
    report = run_experiment(config, threads=args.threads)
    _emit(args, "report.json", report.to_json(timing=not args.no_timing))
    if args.out_dir:
        emit_plot_data(report, Path(args.out_dir) / "budget_curve")
    return EXIT_SEED if report.failed else EXIT_OK


def cmd_sweep(args) -> int:
    if args.config is None:
        raise CliConfigError("sweep needs --config")
    config = ExperimentConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config.seeds = [args.seed]
    table, reports = sweep(config, args.axis, args.values, threads=args.threads)
    payload = {"axis": table.axis, "rows": table.rows,
               "reports": [r.to_dict(timing=not args.no_timing) for r in reports]}
    _emit(args, f"sweep_{args.axis}.json", payload)
    if args.out_dir:
        emit_plot_data(table, Path(args.out_dir) / f"sweep_{args.axis}")
    return EXIT_SEED if any(r.failed for r in reports) else EXIT_OK


def cmd_gen_env(args) -> int:
    cfg = dict(_env_config(args))
    if args.seed is not None:
        cfg["seed"] = args.seed
    env = build_environment(cfg)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_mdp(env.abstract, out / "abstract.json")
    save_mdp(env.target.latent, out / "latent.json")
    (out / "env.json").write_text(json.dumps(env.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    summary = {"num_states": env.abstract.num_states, "num_actions": env.abstract.num_actions,
               "horizon": env.abstract.horizon, "obs_dim": env.target.obs_dim,
               "files": ["abstract.json", "latent.json", "env.json"]}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval_policy(args) -> int:
    cfg = dict(_env_config(args))
    if args.seed is not None:
        cfg["seed"] = args.seed
    env = build_environment(cfg)
    m0, target = env.abstract, env.target
    eta = env.spec.eta if args.eta is None else args.eta
    rng = np.random.default_rng(np.random.SeedSequence([0 if args.seed is None else args.seed, 2]))
    exact = None
    if args.policy in ("robust", "optimal"):
        psi = robust_dp(m0, eta).rho if args.policy == "robust" else value_iteration(m0)[0]
        policy = DecodedStatePolicy(psi, target.perfect_decoder)
        _, exact = evaluate_policy(target.latent, psi)
    elif args.policy == "open-loop":
        policy = open_loop_policy(m0)
    else:
        policy = UniformRandomPolicy(m0.num_actions, m0.horizon, rng)
    value, se = estimate_policy_value(target.oracle(rng), policy, args.rollouts)
    _emit(args, "eval.json", {"policy": args.policy, "value": value, "se": se, "exact_value": exact,
                              "rollouts": args.rollouts})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    p = argparse.ArgumentParser(prog="simtransfer", description=__doc__.splitlines()[0])
    # global flags are accepted before or after the subcommand
    for parser, default in ((p, None), (common, argparse.SUPPRESS)):
        parser.add_argument("--seed", type=int, default=default, help="run seed (overrides the config)")
        parser.add_argument("--out-dir", default=default, help="directory for output files")
        parser.add_argument("--trace", action="store_true", default=default or False,
                            help="record latent traces for diagnostics")
        parser.add_argument("--threads", type=int, default=default or 1, help="worker threads across seeds")
        parser.add_argument("--config", default=default, help="JSON config file")
        parser.add_argument("--no-timing", action="store_true", default=default or False,
                            help="omit wall-clock fields from reports")
        parser.add_argument("-v", "--verbose", action="store_true", default=default or False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve-robust", parents=[common], help="robust dynamic programming on an MDP file")
    s.add_argument("--mdp", required=True)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_solve_robust)

    s = sub.add_parser("run-tasid", parents=[common], help="one TASID run with a JSON report")
    s.add_argument("--env", default=None)
    s.add_argument("--abstract", default=None)
    s.add_argument("--eta", type=float, default=None)
    s.add_argument("--samples-per-step", type=int, required=True)
    s.add_argument("--learner", choices=LEARNERS, default="neural")
    s.add_argument("--eval-rollouts", type=int, default=1000)
    s.set_defaults(func=cmd_run_tasid)

    s = sub.add_parser("run-experiment", parents=[common], help="seeds x budgets from --config")
    s.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("sweep", parents=[common], help="run-experiment along one axis")
    s.add_argument("--axis", choices=AXES, required=True)
    s.add_argument("--values", type=float, nargs="*", default=[])
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gen-env", parents=[common], help="write the simulator and realized target MDPs")
    s.add_argument("--env", default=None)
    s.set_defaults(func=cmd_gen_env)

    s = sub.add_parser("eval-policy", parents=[common], help="Monte Carlo value of a baseline policy")
    s.add_argument("--env", default=None)
    s.add_argument("--policy", choices=("robust", "optimal", "open-loop", "random"), default="robust")
    s.add_argument("--eta", type=float, default=None)
    s.add_argument("--rollouts", type=int, default=1000)
    s.set_defaults(func=cmd_eval_policy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep" and args.axis in ("height", "budget"):
        args.values = [int(v) for v in args.values]
    try:
        return args.func(args)
    except (CliConfigError, ConfigError, EnvConfigError, MdpError, KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
