"""Lava gridworld with an egocentric, noisy channel-coded view.

Latent state index ``s = (row * width + col) * 4 + direction`` with
directions 0 = east, 1 = south, 2 = west, 3 = north. Time is carried by the
step index rather than the state. Lava and goal cells are absorbing: the
reward for stepping into them is paid once, after that every action keeps
the agent in place for 0 reward.

Actions: 0 forward, 1 turn left, 2 turn right, 3 turn left then forward,
4 turn right then forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..block import BlockMdp, Emission
from ..mdp import DeterministicMdp, PerturbationKernel, apply_perturbation, sample_random_perturbation
from ..robust import robust_dp

DEFAULT_MAP = (
    "###########",
    "#S.......G#",
    "#.#LLLLL#.#",
    "#.........#",
    "#.........#",
    "#####.#####",
    "###########",
)

EMPTY, WALL, LAVA, GOAL, OUTSIDE = range(5)
_CODES = {".": EMPTY, "S": EMPTY, "#": WALL, "L": LAVA, "G": GOAL}
STEPS = np.array([[0, 1], [1, 0], [0, -1], [-1, 0]])  # (drow, dcol) per direction
VIEW = 7
CHANNELS = 8
NUM_ACTIONS = 5


@dataclass
class GridworldSpec:
    """``height`` of ``None`` keeps the map as drawn; a larger value inserts
    open rows above the bottom wall. On the default map those rows sit behind
    a one-cell doorway below the safe corridor, so the routes are unchanged. ``horizon`` of ``None`` is three times
    the length of the robust path at ``path_eta`` on the map as drawn."""

    layout: tuple = DEFAULT_MAP
    height: Optional[int] = None
    eta: float = 0.1
    seed: int = 0
    horizon: Optional[int] = None
    path_eta: float = 0.1
    start_direction: int = 0
    goal_reward: float = 1.0
    lava_reward: float = -1.0
    step_reward: float = -0.01
    noise_low: float = 50 / 255
    noise_high: float = 150 / 255

    def __post_init__(self):
        self.layout = tuple(self.layout)
        if not 0 <= self.start_direction < 4:
            raise ValueError("start_direction must be in 0..3")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["layout"] = list(self.layout)
        return {"kind": "gridworld", **d}


@dataclass
class GridMap:
    cells: np.ndarray
    start: tuple

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]


def parse_layout(rows, height: Optional[int] = None) -> GridMap:
    """ASCII rows (``#`` wall, ``L`` lava, ``G`` goal, ``S`` start, ``.`` empty)."""
    rows = [r.rstrip("\n") for r in rows]
    if len(rows) < 3 or len({len(r) for r in rows}) != 1:
        raise ValueError("layout must have at least 3 rows of equal length")
    bad = {c for r in rows for c in r} - set(_CODES)
    if bad:
        raise ValueError(f"unknown layout characters {sorted(bad)}")
    starts = [(i, j) for i, r in enumerate(rows) for j, c in enumerate(r) if c == "S"]
    if len(starts) != 1:
        raise ValueError("layout needs exactly one start cell 'S'")
    if not any("G" in r for r in rows):
        raise ValueError("layout has no goal cell 'G'")
    if height is not None:
        if height < len(rows):
            raise ValueError(f"height {height} is smaller than the drawn map ({len(rows)} rows)")
        filler = "#" + "." * (len(rows[0]) - 2) + "#"
        rows = rows[:-1] + [filler] * (height - len(rows)) + rows[-1:]
    cells = np.array([[_CODES[c] for c in r] for r in rows], dtype=np.int64)
    return GridMap(cells, starts[0])


def state_index(gm: GridMap, row: int, col: int, direction: int) -> int:
    return (row * gm.width + col) * 4 + direction


def grid_dynamics(gm: GridMap, spec: GridworldSpec) -> tuple[np.ndarray, np.ndarray]:
    """Time-invariant ``(next_state[s, a], reward[s, a])``."""
    S = gm.height * gm.width * 4
    nxt = np.empty((S, NUM_ACTIONS), dtype=np.int64)
    rew = np.zeros((S, NUM_ACTIONS))
    for r in range(gm.height):
        for c in range(gm.width):
            for d in range(4):
                s = state_index(gm, r, c, d)
                cell = gm.cells[r, c]
                if cell in (LAVA, GOAL, WALL):
                    nxt[s] = s
                    continue
                for a, (turn, move) in enumerate(((0, True), (-1, False), (1, False), (-1, True), (1, True))):
                    d2 = (d + turn) % 4
                    r2, c2 = r, c
                    if move:
                        rr, cc = r + STEPS[d2, 0], c + STEPS[d2, 1]
                        if 0 <= rr < gm.height and 0 <= cc < gm.width and gm.cells[rr, cc] != WALL:
                            r2, c2 = rr, cc
                    nxt[s, a] = state_index(gm, r2, c2, d2)
                    target = gm.cells[r2, c2]
                    rew[s, a] = {GOAL: spec.goal_reward, LAVA: spec.lava_reward}.get(target, spec.step_reward)
    return nxt, rew


def _abstract(gm: GridMap, spec: GridworldSpec, horizon: int) -> DeterministicMdp:
    nxt, rew = grid_dynamics(gm, spec)
    lo = min(spec.lava_reward, spec.step_reward, 0.0)
    hi = max(spec.goal_reward, 0.0)
    s0 = state_index(gm, *gm.start, spec.start_direction)
    return DeterministicMdp(nxt.shape[0], NUM_ACTIONS, horizon, s0,
                            np.broadcast_to(nxt, (horizon,) + nxt.shape),
                            np.broadcast_to(rew, (horizon,) + rew.shape), (lo, hi))


def trace_path(m: DeterministicMdp, policy) -> list[int]:
    """States visited by ``policy`` in the unperturbed simulator (``H + 1`` entries)."""
    s, path = m.init_state, [m.init_state]
    for t in range(m.horizon):
        s = int(m.next_state[t, s, policy(t, s)])
        path.append(s)
    return path


def steps_to_terminal(gm: GridMap, path) -> int:
    """Number of moves until the path first enters a lava or goal cell."""
    for i, s in enumerate(path):
        r, c = divmod(s // 4, gm.width)
        if gm.cells[r, c] in (LAVA, GOAL):
            return i
    raise ValueError("path never reaches the goal or lava")


def robust_path_length(spec: GridworldSpec) -> int:
    gm = parse_layout(spec.layout)
    provisional = 2 * gm.width * gm.height
    m = _abstract(gm, spec, provisional)
    return steps_to_terminal(gm, trace_path(m, robust_dp(m, spec.path_eta).rho))


class GridEmission(Emission):
    """Egocentric ``7 x 7`` view, ``8`` channels per cell, channel-first.

    Channels: empty (uniform noise), wall, lava, goal, outside the map, then
    three constant planes holding the agent's row, column and
    ``4 * t + direction``, each scaled to ``[0, 1]``. The agent sits at the
    bottom centre of the view looking up.
    """

    def __init__(self, gm: GridMap, horizon: int, low: float, high: float):
        self.gm = gm
        self.horizon = horizon
        self.low, self.high = low, high
        self.obs_dim = CHANNELS * VIEW * VIEW
        self.shape = (CHANNELS, VIEW, VIEW)
        ahead = (VIEW - 1) - np.arange(VIEW)[:, None]
        side = np.arange(VIEW)[None, :] - VIEW // 2
        S = gm.height * gm.width * 4
        self.categories = np.empty((S, VIEW, VIEW), dtype=np.int64)
        for s in range(S):
            r, c = divmod(s // 4, gm.width)
            d = s % 4
            fwd, right = STEPS[d], STEPS[(d + 1) % 4]
            rr = r + ahead * fwd[0] + side * right[0]
            cc = c + ahead * fwd[1] + side * right[1]
            inside = (rr >= 0) & (rr < gm.height) & (cc >= 0) & (cc < gm.width)
            cat = np.full((VIEW, VIEW), OUTSIDE)
            cat[inside] = gm.cells[rr[inside], cc[inside]]
            self.categories[s] = cat
        self._time_levels = 4 * (horizon + 1) - 1
        self._row_scale = max(gm.height - 1, 1)
        self._col_scale = max(gm.width - 1, 1)
        cell = VIEW * VIEW
        self._planes = cell * np.arange(5, CHANNELS)
        # noise-free part of every observation, time plane left at zero
        onehot = self.categories[:, None] == np.arange(5)[None, :, None, None]
        base = np.zeros((S, CHANNELS, VIEW, VIEW))
        base[:, :5] = onehot
        rows, cols = np.divmod(np.arange(S) // 4, gm.width)
        base[:, 5] = (rows / self._row_scale)[:, None, None]
        base[:, 6] = (cols / self._col_scale)[:, None, None]
        self._base = base.reshape(S, -1)
        self._empty = [np.flatnonzero(onehot[s, EMPTY].ravel()) for s in range(S)]

    def emit(self, t, s, rng):
        x = self._base[s].copy()
        idx = self._empty[s]
        x[idx] = rng.uniform(self.low, self.high, len(idx))
        x[7 * VIEW * VIEW:] = (4 * t + s % 4) / self._time_levels
        return x

    def _coords(self, x) -> tuple[int, int, int]:
        r, c, v = np.asarray(x)[self._planes]
        return (int(r * self._row_scale + 0.5), int(c * self._col_scale + 0.5),
                int(v * self._time_levels + 0.5))

    def decode_full(self, x) -> tuple[int, int]:
        """``(t, state)`` read off the coordinate planes."""
        r, c, v = self._coords(x)
        t, d = divmod(v, 4)
        return t, state_index(self.gm, r, c, d)

    def decode(self, x):
        return self.decode_full(x)[1]

    def motion_key(self, x) -> int:
        """Heading plus row and column modulo 3, read off the observation.

        Consecutive keys reveal the turn and whether a move happened, which is
        all an inverse dynamics model needs here, while pooling counts over
        every position that shares the pattern.
        """
        r, c, v = self._coords(x)
        return (r % 3) * 12 + (c % 3) * 4 + v % 4


@dataclass
class Gridworld:
    spec: GridworldSpec
    grid: GridMap
    abstract: DeterministicMdp
    target: BlockMdp
    kernel: PerturbationKernel
    path_length: int = 0
    initial_states: list = field(default_factory=list)

    def cell_of(self, s: int) -> tuple[int, int]:
        return divmod(s // 4, self.grid.width)

    def adjacent_to_lava(self, s: int) -> bool:
        r, c = self.cell_of(s)
        for dr, dc in STEPS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < self.grid.height and 0 <= cc < self.grid.width and self.grid.cells[rr, cc] == LAVA:
                return True
        return False


def build_gridworld(spec: GridworldSpec) -> Gridworld:
    """Deterministic grid simulator and its perturbed rich-observation target."""
    length = robust_path_length(spec)
    horizon = spec.horizon if spec.horizon is not None else 3 * length
    gm = parse_layout(spec.layout, spec.height)
    abstract = _abstract(gm, spec, horizon)
    g_perturb = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    kernel = sample_random_perturbation(abstract, spec.eta, g_perturb)
    latent = apply_perturbation(abstract, kernel)
    emission = GridEmission(gm, horizon, spec.noise_low, spec.noise_high)
    target = BlockMdp(latent, emission, name=f"gridworld-{gm.height}x{gm.width}")
    return Gridworld(spec, gm, abstract, target, kernel, length, [abstract.init_state])
