import logging
import os
from dataclasses import replace
from typing import Callable, Dict, Optional

import numpy as np

from cli.utils import emit, experiment_config, seed_list
from config import settings
from services.algae import AlgaeConfig, ope_estimate
from services.dataset import load_experience, save_experience
from services.divergences import parse_divergence
from services.environments import FourRoomsSpec, gridwalk_behavior
from services.errors import ConfigurationError
from services.experiments import (
    build_dataset,
    compare,
    environment,
    load_policy,
    replay_manifest,
    run_experiment,
    run_training,
)
from services.mdp_core import SoftmaxPolicy, TabularMdp, dual_return
from services.persistence import RunRepository, write_residual_maps
from services.stats import RunStats
from services.verification import format_table, run_suite, summary

logger = logging.getLogger(__name__)

Handler = Callable[..., int]


class CommandRouter:
    """Maps subcommand names to handlers; each handler returns an exit code."""

    def __init__(self):
        self.handlers: Dict[str, Handler] = {}

    def command(self, name: str):
        def register(func: Handler) -> Handler:
            if name in self.handlers:
                raise ConfigurationError(f"command '{name}' registered twice")
            self.handlers[name] = func
            return func
        return register


router = CommandRouter()


@router.command("collect")
def cmd_collect(args) -> int:
    """Generates an experience set with the configured behavior policy."""
    cfg = experiment_config(args)
    data = build_dataset(replace(cfg, mode="offline", dataset_path=None))
    path = save_experience(data, args.output)
    emit({"command": "collect", "path": path, "transitions": len(data), "seed": data.seed})
    return 0


@router.command("train")
def cmd_train(args) -> int:
    repository = RunRepository(args.db or settings.DB_PATH)
    if args.manifest:
        artifacts = replay_manifest(args.manifest, os.path.join(args.runs_dir, "replays"), repository)
    else:
        artifacts = run_experiment(experiment_config(args), args.runs_dir, repository)
    emit({
        "command": "train",
        "run_id": artifacts.run_id,
        "run_dir": artifacts.run_dir,
        "metrics": artifacts.metrics_path,
        "manifest": artifacts.manifest_path,
        "final_reward": artifacts.final_reward,
        "reproduced": artifacts.reproduced,
    })
    return 0


def _target_policy(text: str, spec: Optional[FourRoomsSpec], mdp: TabularMdp) -> SoftmaxPolicy:
    # Rule 6: only the named policies or an explicit file
    if text == "uniform":
        return SoftmaxPolicy.uniform(mdp.num_states, mdp.num_actions)
    if text == "gridwalk":
        if spec is None:
            raise ConfigurationError("the gridwalk policy needs the Four Rooms layout, not --mdp")
        return gridwalk_behavior(spec)
    if os.path.isfile(text):
        return load_policy(text)
    raise ConfigurationError(f"--policy must be 'uniform', 'gridwalk' or a policy JSON file, got '{text}'")


@router.command("evaluate")
def cmd_evaluate(args) -> int:
    """Off-policy evaluation of a target policy from a logged dataset."""
    data = load_experience(args.dataset)
    cfg = experiment_config(args)
    spec = None
    if args.mdp:
        mdp = TabularMdp.from_json(args.mdp)
        if args.gamma is not None:
            mdp = mdp.with_discount(args.gamma)
    else:
        if args.gamma is not None:
            cfg = cfg.with_overrides(gamma=args.gamma)
        spec, mdp = environment(cfg)

    policy = _target_policy(args.policy, spec, mdp)
    algae_cfg = AlgaeConfig(
        alpha=cfg.alpha,
        divergence=parse_divergence(cfg.divergence),
        gamma_one_mode=mdp.discount >= 1.0,
    )
    estimate = ope_estimate(mdp, data, policy, algae_cfg, cfg.smoothing, initial_from_data=args.initial_from_data)
    emit({
        "command": "evaluate",
        "estimate": estimate,
        "true_return": dual_return(mdp, policy),
        "alpha": algae_cfg.alpha,
        "divergence": algae_cfg.divergence.name,
        "transitions": len(data),
    })
    return 0


@router.command("verify")
def cmd_verify(args) -> int:
    results = run_suite(seed_list(args.seeds), args.check or ())
    print(format_table(results))
    counts = summary(results)
    emit({"command": "verify", **counts})
    if counts["failed"]:
        logger.error(f"{counts['failed']} propert{'y' if counts['failed'] == 1 else 'ies'} failed")
        return 2
    return 0


@router.command("residuals")
def cmd_residuals(args) -> int:
    """Trains AlgaeDICE and writes the residual map of every step as JSON lines."""
    cfg = experiment_config(args).with_overrides(method="algae", residual_maps=True)
    _, maps = run_training(cfg)
    path = write_residual_maps(args.output, maps)
    emit({"command": "residuals", "path": path, "maps": len(maps)})
    return 0


@router.command("compare")
def cmd_compare(args) -> int:
    cfg = experiment_config(args)
    repository = RunRepository(args.db or settings.DB_PATH)
    rows = compare(cfg, seed_list(args.seeds, args.first_seed), args.output, args.workers, repository)
    for row in rows:
        print(f"{row['method']:<6} {row['mode']:<8} {row['mean_final_reward']:.5f} +- {row['std_final_reward']:.5f} "
              f"(n={row['runs']})")
    emit({"command": "compare", "path": os.path.join(args.output, "compare.csv"), "rows": len(rows)})
    return 0


@router.command("runs")
def cmd_runs(args) -> int:
    """Lists registered runs and the per-group summary."""
    repository = RunRepository(args.db or settings.DB_PATH)
    runs = repository.get_runs(limit=args.limit, preset=args.preset)
    if not runs:
        print("No runs registered.")
        return 0
    for run in runs:
        print(f"{run.created_at}  {run.run_id:<48} final_reward={run.final_reward:.5f}")
    stats = RunStats(repository, limit=args.limit)
    for row in stats.summary(args.preset):
        print(f"{row['method']:<6} {row['mode']:<8} mean={row['mean_final_reward']:.5f} "
              f"std={row['std_final_reward']:.5f} n={row['runs']}")
    gap = stats.offline_gap("algae", args.preset)
    if not np.isnan(gap):
        print(f"algae offline gap: {100 * gap:.1f}%")
    return 0
