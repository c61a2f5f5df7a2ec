import json
import logging
import math
import re
import sys
from typing import List, Optional, Tuple

from config.presets import ExperimentConfig, preset
from services.errors import ConfigurationError

logger = logging.getLogger(__name__)


def parse_real(text: str, name: str) -> float:
    """
    Rule 6: No 'smart' guessing. Only plain finite decimal or scientific
    notation is accepted.
    """
    try:
        value = float(text)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a number, got '{text}'") from exc
    if not math.isfinite(value):
        raise ConfigurationError(f"{name} must be finite, got '{text}'")
    return value


def parse_cell(text: str, name: str) -> Tuple[int, int]:
    """Grid cell written as "row,col" with plain non-negative integers."""
    match = re.fullmatch(r"(\d+),(\d+)", text or "")
    if match is None:
        raise ConfigurationError(f"{name} must look like 'row,col', got '{text}'")
    return int(match.group(1)), int(match.group(2))


def seed_list(count: int, first: int = 0) -> List[int]:
    if count < 1:
        raise ConfigurationError(f"--seeds must be >= 1, got {count}")
    return list(range(first, first + count))


def experiment_config(args) -> ExperimentConfig:
    """Preset or JSON config, then any flags given on the command line."""
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or "fig2")
    overrides = {
        "method": getattr(args, "method", None),
        "mode": getattr(args, "mode", None),
        "divergence": getattr(args, "divergence", None),
        "alpha": getattr(args, "alpha", None),
        "seed": getattr(args, "seed", None),
        "steps": getattr(args, "steps", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "dataset_path": getattr(args, "dataset", None),
        "behavior": getattr(args, "behavior", None),
        "num_trajectories": getattr(args, "num_trajectories", None),
        "trajectory_length": getattr(args, "trajectory_length", None),
        "start": getattr(args, "start", None),
        "goal": getattr(args, "goal", None),
    }
    return cfg.with_overrides(**overrides)


def emit(payload: dict) -> None:
    """One JSON object per line on stdout."""
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def error_line(exc: BaseException, exit_code: int, message: Optional[str] = None) -> str:
    return json.dumps({"error": type(exc).__name__, "exit_code": exit_code, "message": message or str(exc)})
