import logging
from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.stats import spearmanr

from services.errors import ValidationError

# Rule 10: Observability
logger = logging.getLogger(__name__)


def summarize_final_rewards(results: Iterable[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    Groups run results by (method, mode) and reports mean and sample stddev.
    :param results: dicts with 'method', 'mode' and 'final_reward'.
    :return: one row per group, sorted by method then mode.
    """
    groups: Dict[Tuple[str, str], List[float]] = defaultdict(list)
    for result in results:
        groups[(result["method"], result["mode"])].append(float(result["final_reward"]))

    rows = []
    for (method, mode), rewards in sorted(groups.items()):
        values = np.asarray(rewards)
        rows.append({
            "method": method,
            "mode": mode,
            "runs": len(values),
            "mean_final_reward": float(values.mean()),
            "std_final_reward": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        })
    return rows


class RunStats:
    """
    Summaries over the run registry.
    Follows Rule 11 by separating core logic from the persistence layer.
    """

    def __init__(self, repository: Any, limit: int = 1000):
        """
        :param repository: RunRepository instance (Dependency Injection).
        :param limit: most recent runs considered.
        """
        self.repository = repository
        self.limit = limit

    def final_rewards(self, preset: Optional[str] = None) -> List[Dict[str, Any]]:
        return [
            {"method": run.method, "mode": run.mode, "final_reward": run.final_reward}
            for run in self.repository.get_runs(limit=self.limit, preset=preset)
        ]

    def summary(self, preset: Optional[str] = None) -> List[Dict[str, Any]]:
        return summarize_final_rewards(self.final_rewards(preset))

    def offline_gap(self, method: str, preset: Optional[str] = None) -> float:
        """
        Relative drop of the offline mean final reward against online.
        :return: (online - offline) / online; NaN when either mode has no runs.
        """
        means = {row["mode"]: row["mean_final_reward"] for row in self.summary(preset) if row["method"] == method}
        if "online" not in means or "offline" not in means or means["online"] == 0:
            return float("nan")
        return (means["online"] - means["offline"]) / means["online"]


def start_mass_fraction(grid: np.ndarray, start: Tuple[int, int], radius: int = 3) -> float:
    """Share of the map's total mass within Manhattan distance ``radius`` of ``start``."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0):
        raise ValidationError("mass maps must be nonnegative")
    total = grid.sum()
    if total <= 0:
        raise ValidationError("map has no mass")
    rows, cols = np.indices(grid.shape)
    near = np.abs(rows - start[0]) + np.abs(cols - start[1]) <= radius
    return float(grid[near].sum() / total)


def map_visitation_spearman(grid: np.ndarray, visitation_grid: np.ndarray, open_mask: np.ndarray) -> float:
    """Spearman rank correlation over open cells between a residual map and a visitation map."""
    grid = np.asarray(grid, dtype=float)
    visitation_grid = np.asarray(visitation_grid, dtype=float)
    open_mask = np.asarray(open_mask, dtype=bool)
    if grid.shape != visitation_grid.shape or grid.shape != open_mask.shape:
        raise ValidationError("maps and mask must share a shape")
    rho, _ = spearmanr(grid[open_mask], visitation_grid[open_mask])
    return float(rho)
