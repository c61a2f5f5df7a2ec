"""Named experiment presets and the JSON experiment-config loader."""
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional, Tuple

from config import settings
from services.environments import DEFAULT_GOAL, DEFAULT_START
from services.errors import ConfigurationError

logger = logging.getLogger(__name__)

METHODS = ("algae", "ac")
MODES = ("online", "offline")
BEHAVIORS = ("uniform", "gridwalk")


def _cell(name: str, value) -> Tuple[int, int]:
    """Grid cell as a (row, col) tuple; JSON configs hand it over as a list."""
    try:
        row, col = value
        if int(row) != row or int(col) != col:
            raise ValueError(value)
        return int(row), int(col)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a (row, col) pair of integers, got {value!r}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one Four Rooms training run depends on."""

    preset: str
    alpha: float
    gamma: float
    steps: int
    learning_rate: float
    num_trajectories: int
    trajectory_length: int
    behavior: str
    initial: str
    data_initial: str
    method: str = "algae"
    mode: str = "offline"
    divergence: str = "quadratic"
    seed: int = 0
    smoothing: float = settings.DEFAULT_SMOOTHING
    behavior_bias: float = 0.2
    slip: float = 0.0
    goal_reset: bool = True
    start: Tuple[int, int] = DEFAULT_START
    goal: Tuple[int, int] = DEFAULT_GOAL
    residual_maps: bool = False
    dataset_path: Optional[str] = None

    def __post_init__(self):
        # Rule 6: No smart guessing
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got '{self.method}'")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.behavior not in BEHAVIORS:
            raise ConfigurationError(f"behavior must be one of {BEHAVIORS}, got '{self.behavior}'")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must be in [0, 1) for Four Rooms training, got {self.gamma}")
        if self.steps < 0 or self.num_trajectories < 1 or self.trajectory_length < 1:
            raise ConfigurationError("steps must be >= 0 and the trajectory counts positive")
        if self.smoothing < 0:
            raise ConfigurationError("smoothing must be >= 0")
        if self.mode == "online" and self.dataset_path:
            raise ConfigurationError("online runs re-collect their data; dataset_path only applies offline")
        for name in ("start", "goal"):
            object.__setattr__(self, name, _cell(name, getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Applies the non-None overrides; unknown names are rejected."""
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Fills missing keys from the named preset (default fig2)."""
        data = dict(data)
        base = preset(data.pop("preset", "fig2"))
        return base.with_overrides(**data)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read experiment config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must hold a JSON object")
        return cls.from_dict(data)


# One pseudo-count per pair in the empirical d^D; keeps w bounded on pairs the data misses.
PRESET_SMOOTHING = 1.0


# Qualitative run: uniform behavior data from random starts, the agent starts in the top-left room.
FIG1 = ExperimentConfig(
    preset="fig1",
    alpha=0.01,
    gamma=0.97,
    steps=100,
    learning_rate=100.0,
    num_trajectories=500,
    trajectory_length=10,
    behavior="uniform",
    initial="start",
    data_initial="uniform",
    smoothing=PRESET_SMOOTHING,
    residual_maps=True,
)

# Quantitative online-vs-offline comparison.
FIG2 = ExperimentConfig(
    preset="fig2",
    alpha=1e-4,
    gamma=0.99,
    steps=250,
    learning_rate=300.0,
    num_trajectories=100,
    trajectory_length=100,
    behavior="gridwalk",
    initial="uniform",
    data_initial="uniform",
    smoothing=PRESET_SMOOTHING,
)

PRESETS = {"fig1": FIG1, "fig2": FIG2}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset '{name}' (use one of {sorted(PRESETS)})")
    return PRESETS[name]
