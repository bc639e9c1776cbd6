"""The lava gridworld: a short route along the lava or a long safe detour.

Prints the map with the simulator's greedy route and the robust route, then
the exact value of each in the perturbed target.
"""
from __future__ import annotations

import numpy as np

from simtransfer.envs.gridworld import GridworldSpec, build_gridworld, steps_to_terminal, trace_path
from simtransfer.mdp import evaluate_policy, value_iteration
from simtransfer.robust import robust_dp

world = build_gridworld(GridworldSpec(eta=0.1, seed=0))
m0 = world.abstract
robust = robust_dp(m0, 0.1).rho
greedy, _ = value_iteration(m0)


def draw(path, mark):
    rows = [list(r) for r in world.spec.layout]
    for s in path[1:steps_to_terminal(world.grid, path)]:
        r, c = world.cell_of(s)
        rows[r][c] = mark
    return ["".join(r) for r in rows]


for name, policy, mark in (("greedy", greedy, "g"), ("robust", robust, "r")):
    path = trace_path(m0, policy)
    _, value = evaluate_policy(world.target.latent, policy)
    print(f"{name} route, {steps_to_terminal(world.grid, path)} steps, value in target {value:.3f}")
    print("\n".join(draw(path, mark)), "\n")
print(f"horizon = 3 x robust route length = {m0.horizon}")

x = world.target.emission.emit(0, m0.init_state, np.random.default_rng(0))
print("observation:", world.target.emission.shape, "channels x view rows x view cols,", x.size, "numbers")
