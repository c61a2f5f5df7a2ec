"""Four Rooms gridworld, the GridWalk behavior policy and residual maps."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from services.algae import bellman_residual
from services.divergences import DivergencePair
from services.errors import ConfigurationError, ValidationError
from services.mdp_core import SoftmaxPolicy, TableLike, TabularMdp, horizon_occupancy

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]

GRID_SIZE = 11
WALL_LINE = 5
DOORWAYS = frozenset({(2, 5), (8, 5), (5, 2), (5, 8)})
DEFAULT_START: Cell = (2, 2)
DEFAULT_GOAL: Cell = (0, 6)

# up, down, left, right
ACTIONS: Tuple[Cell, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")
INITIAL_MODES = ("start", "uniform")


def _walls() -> frozenset:
    walls = {(WALL_LINE, c) for c in range(GRID_SIZE)} | {(r, WALL_LINE) for r in range(GRID_SIZE)}
    return frozenset(walls - DOORWAYS)


@dataclass(frozen=True)
class FourRoomsSpec:
    """Layout and dynamics options of the classic 11x11 four-rooms grid.

    Open cells are numbered in row-major order; that number is the MDP state.
    """

    slip: float = 0.0
    goal_reset: bool = True
    initial: str = "start"
    start: Cell = DEFAULT_START
    goal: Cell = DEFAULT_GOAL
    walls: frozenset = field(default_factory=_walls)

    def __post_init__(self):
        if not 0.0 <= self.slip <= 1.0:
            raise ValidationError(f"slip {self.slip} is outside [0, 1]")
        if self.initial not in INITIAL_MODES:
            raise ConfigurationError(f"initial must be one of {INITIAL_MODES}, got '{self.initial}'")
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        for name in ("start", "goal"):
            if not self.is_open(getattr(self, name)):
                raise ValidationError(f"{name} cell {getattr(self, name)} is not an open cell")
        if self.start == self.goal:
            raise ValidationError("start and goal must differ")

    def is_open(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE and cell not in self.walls

    @property
    def open_cells(self) -> List[Cell]:
        return [(r, c) for r in range(GRID_SIZE) for c in range(GRID_SIZE) if self.is_open((r, c))]

    @property
    def index(self) -> Dict[Cell, int]:
        return {cell: i for i, cell in enumerate(self.open_cells)}

    @property
    def num_states(self) -> int:
        return len(self.open_cells)

    def move(self, cell: Cell, action: int) -> Cell:
        """Deterministic move; bumping into a wall or the border stays put."""
        dr, dc = ACTIONS[action]
        target = (cell[0] + dr, cell[1] + dc)
        return target if self.is_open(target) else cell

    def initial_distribution(self) -> np.ndarray:
        mu0 = np.zeros(self.num_states)
        if self.initial == "start":
            mu0[self.index[self.start]] = 1.0
        else:
            mu0[:] = 1.0 / self.num_states
        return mu0

    def to_mdp(self, discount: float) -> TabularMdp:
        """Builds T and r = T(goal | s, a).

        With ``goal_reset`` the goal row restarts from mu0 (goal mass removed),
        so each arrival is rewarded once; otherwise the goal is absorbing and
        keeps paying 1.
        """
        cells = self.open_cells
        index = self.index
        num_states, num_actions = len(cells), len(ACTIONS)
        mu0 = self.initial_distribution()
        goal = index[self.goal]

        moves = np.zeros((num_states, num_actions, num_states))
        for s, cell in enumerate(cells):
            for a in range(num_actions):
                moves[s, a, index[self.move(cell, a)]] = 1.0
        transition = (1.0 - self.slip) * moves + self.slip * moves.mean(axis=1, keepdims=True)

        if self.goal_reset:
            restart = mu0.copy()
            restart[goal] = 0.0
            transition[goal] = restart / restart.sum()
        else:
            transition[goal] = 0.0
            transition[goal, :, goal] = 1.0

        return TabularMdp(
            reward=transition[:, :, goal].copy(),
            transition=transition,
            initial_dist=mu0,
            discount=discount,
            reward_bound=1.0,
        )

    def to_grid(self, per_state: np.ndarray) -> np.ndarray:
        """Lays per-state values on the 11x11 grid; wall cells hold 0."""
        per_state = np.asarray(per_state, dtype=float)
        if per_state.shape != (self.num_states,):
            raise ValidationError(f"expected {self.num_states} per-state values")
        grid = np.zeros((GRID_SIZE, GRID_SIZE))
        for value, (r, c) in zip(per_state, self.open_cells):
            grid[r, c] = value
        return grid


def four_rooms(
    slip: float = 0.0,
    goal_reset: bool = True,
    discount: float = 0.97,
    initial: str = "start",
    start: Cell = DEFAULT_START,
    goal: Cell = DEFAULT_GOAL,
) -> TabularMdp:
    return FourRoomsSpec(slip=slip, goal_reset=goal_reset, initial=initial, start=start, goal=goal).to_mdp(discount)


def gridwalk_behavior(spec: FourRoomsSpec, bias: float = 0.2) -> SoftmaxPolicy:
    """Fixed stochastic policy leaning toward the corner of the goal's room.

    The two directions pointing at that corner get 1/4 + b/2 each, the other
    two 1/4 - b/2, so every action keeps positive probability.
    """
    if not 0.0 <= bias < 0.5:
        raise ValidationError(f"bias must be in [0, 0.5), got {bias}")
    vertical = 0 if spec.goal[0] < GRID_SIZE / 2 else 1
    horizontal = 3 if spec.goal[1] > GRID_SIZE / 2 else 2
    row = np.full(len(ACTIONS), 0.25 - bias / 2)
    row[[vertical, horizontal]] = 0.25 + bias / 2
    return SoftmaxPolicy.from_probs(np.tile(row, (spec.num_states, 1)))


def behavior_baseline(spec: FourRoomsSpec, behavior: SoftmaxPolicy, horizon: int = 10) -> float:
    """Average per-step reward of ``behavior`` over ``horizon`` steps from a uniform start.

    Uses the absorbing-goal dynamics, so time spent at the goal counts as reward.
    """
    scoring = FourRoomsSpec(slip=spec.slip, goal_reset=False, initial="uniform", start=spec.start, goal=spec.goal)
    mdp = scoring.to_mdp(discount=0.0)
    occupancy = horizon_occupancy(mdp, behavior, horizon)
    return float(np.sum(occupancy.weights * mdp.reward))


@dataclass(frozen=True)
class ResidualMap:
    """m(s) = sum_a f*'((B_pi nu - nu)(s, a) / alpha), laid on the grid."""

    step: int
    grid: np.ndarray

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        if grid.shape != (GRID_SIZE, GRID_SIZE):
            raise ValidationError(f"residual map must be {GRID_SIZE}x{GRID_SIZE}")
        if not np.all(np.isfinite(grid)):
            raise ValidationError("residual map entries must be finite")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    def to_dict(self) -> dict:
        return {"step": self.step, "grid": self.grid.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ResidualMap":
        return cls(step=int(data["step"]), grid=data["grid"])


def residual_map(
    mdp: TabularMdp,
    pi: SoftmaxPolicy,
    nu: TableLike,
    alpha: float,
    divergence: DivergencePair,
    spec: FourRoomsSpec,
    step: int = 0,
) -> ResidualMap:
    if alpha == 0:
        raise ConfigurationError("residual maps rescale by 1/alpha; alpha must be nonzero")
    if mdp.num_states != spec.num_states:
        raise ValidationError("the MDP does not match the grid layout")
    ratios = divergence.f_star_prime(bellman_residual(mdp, pi, nu) / alpha)
    return ResidualMap(step=step, grid=spec.to_grid(ratios.sum(axis=1)))
