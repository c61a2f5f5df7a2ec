"""Behavior-agnostic experience: rollouts, the empirical d^D and data sources."""
import csv
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Protocol, Tuple

import numpy as np

from services.errors import ValidationError
from services.mdp_core import Occupancy, SoftmaxPolicy, TabularMdp, visitation

logger = logging.getLogger(__name__)

FORMAT_VERSION = "v1"
_HEADER = re.compile(r"^algae-exp (?P<version>v\d+) S=(?P<S>\d+) A=(?P<A>\d+) seed=(?P<seed>-?\d+)$")


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int


@dataclass(frozen=True, eq=False)
class ExperienceSet:
    """Logged transitions D plus the initial-state sample U."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    initial_states: np.ndarray
    seed: int
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = {
            "states": np.array(self.states, dtype=np.int64),
            "actions": np.array(self.actions, dtype=np.int64),
            "rewards": np.array(self.rewards, dtype=float),
            "next_states": np.array(self.next_states, dtype=np.int64),
            "initial_states": np.array(self.initial_states, dtype=np.int64),
        }
        lengths = {len(arrays[name]) for name in ("states", "actions", "rewards", "next_states")}
        if len(lengths) != 1:
            raise ValidationError("transition columns must have equal length")
        if len(arrays["states"]) == 0:
            raise ValidationError("an experience set needs at least one transition")
        for name, array in arrays.items():
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperienceSet):
            return NotImplemented
        return self.seed == other.seed and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("states", "actions", "rewards", "next_states", "initial_states")
        )

    @property
    def transitions(self) -> Tuple[Transition, ...]:
        return tuple(
            Transition(int(s), int(a), float(r), int(n))
            for s, a, r, n in zip(self.states, self.actions, self.rewards, self.next_states)
        )

    def validate_indices(self, num_states: int, num_actions: int) -> None:
        for name, array, bound in (
            ("state", self.states, num_states),
            ("action", self.actions, num_actions),
            ("next state", self.next_states, num_states),
            ("initial state", self.initial_states, num_states),
        ):
            if len(array) and (array.min() < 0 or array.max() >= bound):
                raise ValidationError(f"{name} index out of range [0, {bound})")


def _sample(cumulative: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cumulative, u, side="right"), len(cumulative) - 1))


def collect(
    mdp: TabularMdp,
    behavior: SoftmaxPolicy,
    num_trajectories: int,
    trajectory_length: int,
    seed: int,
) -> ExperienceSet:
    """Rolls out ``behavior`` from s0 ~ mu0 for fixed-length trajectories.

    Each trajectory draws from its own PCG64 stream spawned from ``seed``,
    so the output is bit-reproducible and independent of collection order.
    """
    if num_trajectories < 1 or trajectory_length < 1:
        raise ValidationError("num_trajectories and trajectory_length must be positive")
    if behavior.logits.shape != (mdp.num_states, mdp.num_actions):
        raise ValidationError("behavior policy does not match the MDP")

    initial_cdf = np.cumsum(mdp.initial_dist)
    action_cdf = np.cumsum(behavior.probs, axis=1)
    next_cdf = np.cumsum(mdp.transition, axis=2)

    size = num_trajectories * trajectory_length
    states = np.empty(size, dtype=np.int64)
    actions = np.empty(size, dtype=np.int64)
    next_states = np.empty(size, dtype=np.int64)
    initial_states = np.empty(num_trajectories, dtype=np.int64)

    streams = np.random.SeedSequence(seed).spawn(num_trajectories)
    k = 0
    for index, stream in enumerate(streams):
        draws = np.random.default_rng(stream).random(2 * trajectory_length + 1)
        s = _sample(initial_cdf, draws[0])
        initial_states[index] = s
        for t in range(trajectory_length):
            a = _sample(action_cdf[s], draws[2 * t + 1])
            s_next = _sample(next_cdf[s, a], draws[2 * t + 2])
            states[k], actions[k], next_states[k] = s, a, s_next
            k += 1
            s = s_next

    data = ExperienceSet(
        states=states,
        actions=actions,
        rewards=mdp.reward[states, actions],
        next_states=next_states,
        initial_states=initial_states,
        seed=seed,
        meta={
            "num_states": mdp.num_states,
            "num_actions": mdp.num_actions,
            "num_trajectories": num_trajectories,
            "trajectory_length": trajectory_length,
        },
    )
    logger.debug(f"Collected {len(data)} transitions ({num_trajectories} x {trajectory_length}, seed={seed})")
    return data


def empirical_distribution(data: ExperienceSet, num_states: int, num_actions: int, smoothing: float = 1e-6) -> Occupancy:
    """d^D(s,a) = (count(s,a) + eps) / (N + eps * S * A)."""
    if smoothing < 0:
        raise ValidationError("smoothing must be >= 0")
    data.validate_indices(num_states, num_actions)
    counts = np.bincount(data.states * num_actions + data.actions, minlength=num_states * num_actions)
    weights = (counts + smoothing) / (len(data) + smoothing * num_states * num_actions)
    return Occupancy(weights.reshape(num_states, num_actions))


def empirical_initial_distribution(data: ExperienceSet, num_states: int) -> np.ndarray:
    """Empirical mu0 from the initial-state sample U."""
    if len(data.initial_states) == 0:
        raise ValidationError("experience set has no initial-state sample")
    if data.initial_states.min() < 0 or data.initial_states.max() >= num_states:
        raise ValidationError(f"initial state index out of range [0, {num_states})")
    counts = np.bincount(data.initial_states, minlength=num_states).astype(float)
    return counts / counts.sum()


def exact_behavior_distribution(mdp: TabularMdp, behavior: SoftmaxPolicy) -> Occupancy:
    """Infinite-data idealisation of d^D: the behavior policy's own visitation."""
    return visitation(mdp, behavior)


def save_experience(data: ExperienceSet, path: str) -> str:
    """Writes the portable text format; floats use repr so the file round-trips exactly."""
    num_states = data.meta.get("num_states")
    num_actions = data.meta.get("num_actions")
    if num_states is None or num_actions is None:
        raise ValidationError("experience meta must record num_states and num_actions")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, mode="w", newline="", encoding="utf-8") as handle:
        handle.write(f"algae-exp {FORMAT_VERSION} S={num_states} A={num_actions} seed={data.seed}\n")
        writer = csv.writer(handle, lineterminator="\n")
        for t in data.transitions:
            writer.writerow([t.s, t.a, repr(t.r), t.s_next])
        handle.write("INITIAL\n")
        for s in data.initial_states:
            handle.write(f"{int(s)}\n")
    logger.info(f"Experience set with {len(data)} transitions written to {path}")
    return path


def load_experience(path: str) -> ExperienceSet:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read experience file {path}: {exc}") from exc
    if not lines:
        raise ValidationError(f"{path} is empty")
    match = _HEADER.match(lines[0])
    if match is None or match.group("version") != FORMAT_VERSION:
        raise ValidationError(f"{path} does not start with an 'algae-exp {FORMAT_VERSION}' header")
    try:
        marker = lines.index("INITIAL")
    except ValueError as exc:
        raise ValidationError(f"{path} has no INITIAL section") from exc

    rows: List[List[str]] = list(csv.reader(lines[1:marker]))
    try:
        states = [int(row[0]) for row in rows]
        actions = [int(row[1]) for row in rows]
        rewards = [float(row[2]) for row in rows]
        next_states = [int(row[3]) for row in rows]
        initial_states = [int(line) for line in lines[marker + 1:] if line.strip()]
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path} has a malformed row: {exc}") from exc

    num_states, num_actions = int(match.group("S")), int(match.group("A"))
    data = ExperienceSet(
        states=states,
        actions=actions,
        rewards=rewards,
        next_states=next_states,
        initial_states=initial_states,
        seed=int(match.group("seed")),
        meta={"num_states": num_states, "num_actions": num_actions},
    )
    data.validate_indices(num_states, num_actions)
    return data


class DataSource(Protocol):
    """Supplies d^D for a training iteration."""

    mode: str

    def distribution(self, policy: SoftmaxPolicy, iteration: int) -> Occupancy:
        ...


@dataclass(frozen=True)
class OfflineSource:
    """A fixed d^D, held for the whole run."""

    d_D: Occupancy
    mode: str = "offline"

    @classmethod
    def from_experience(
        cls, data: ExperienceSet, num_states: int, num_actions: int, smoothing: float = 1e-6
    ) -> "OfflineSource":
        return cls(empirical_distribution(data, num_states, num_actions, smoothing))

    def distribution(self, policy: SoftmaxPolicy, iteration: int) -> Occupancy:
        return self.d_D


@dataclass(frozen=True)
class OnlineSource:
    """Re-collects trajectories with the current policy at every iteration."""

    mdp: TabularMdp
    num_trajectories: int
    trajectory_length: int
    seed: int
    smoothing: float = 1e-6
    mode: str = "online"

    def iteration_seed(self, iteration: int) -> int:
        return int(np.random.SeedSequence([self.seed, iteration]).generate_state(1)[0])

    def distribution(self, policy: SoftmaxPolicy, iteration: int) -> Occupancy:
        data = collect(self.mdp, policy, self.num_trajectories, self.trajectory_length, self.iteration_seed(iteration))
        return empirical_distribution(data, self.mdp.num_states, self.mdp.num_actions, self.smoothing)


def as_source(data, num_states: int, num_actions: int, smoothing: float = 1e-6) -> DataSource:
    """Accepts an Occupancy, a plain (S, A) array, an ExperienceSet or a ready DataSource."""
    if isinstance(data, np.ndarray):
        data = Occupancy(data)
    if isinstance(data, Occupancy):
        if data.weights.shape != (num_states, num_actions):
            raise ValidationError(f"d_D must have shape ({num_states}, {num_actions}), got {data.weights.shape}")
        return OfflineSource(data)
    if isinstance(data, ExperienceSet):
        return OfflineSource.from_experience(data, num_states, num_actions, smoothing)
    if hasattr(data, "distribution"):
        return data
    raise ValidationError(f"cannot use {type(data).__name__} as a data source")
