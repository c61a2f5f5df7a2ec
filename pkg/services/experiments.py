"""Four Rooms experiment runner: data, training, artifacts and the multi-seed comparison."""
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy

from config import settings
from config.presets import ExperimentConfig
from services.algae import AlgaeConfig, AlgaeSolution, TrainingResult, train
from services.baselines import train_actor_critic
from services.dataset import ExperienceSet, OfflineSource, OnlineSource, collect, load_experience, save_experience
from services.divergences import parse_divergence
from services.environments import FourRoomsSpec, ResidualMap, gridwalk_behavior, residual_map
from services.errors import ValidationError
from services.mdp_core import SoftmaxPolicy, TabularMdp
from services.persistence import (
    RunRepository,
    content_hash,
    file_hash,
    load_manifest,
    write_compare_csv,
    write_manifest,
    write_metrics_csv,
    write_residual_maps,
)
from services.stats import summarize_final_rewards

# Rule 10: Observability
logger = logging.getLogger(__name__)


@dataclass
class RunArtifacts:
    run_id: str
    run_dir: str
    final_reward: float
    config_hash: str
    metrics_path: str
    manifest_path: str
    policy_path: str
    maps_path: Optional[str] = None
    dataset_path: Optional[str] = None
    reproduced: Optional[bool] = None


def environment(cfg: ExperimentConfig, initial: Optional[str] = None) -> Tuple[FourRoomsSpec, TabularMdp]:
    spec = FourRoomsSpec(
        slip=cfg.slip,
        goal_reset=cfg.goal_reset,
        initial=initial or cfg.initial,
        start=cfg.start,
        goal=cfg.goal,
    )
    return spec, spec.to_mdp(cfg.gamma)


def behavior_policy(cfg: ExperimentConfig, spec: FourRoomsSpec) -> SoftmaxPolicy:
    if cfg.behavior == "gridwalk":
        return gridwalk_behavior(spec, cfg.behavior_bias)
    return SoftmaxPolicy.uniform(spec.num_states, 4)


def build_dataset(cfg: ExperimentConfig) -> ExperienceSet:
    """Loads ``dataset_path`` when set, otherwise collects with the behavior policy."""
    spec, data_mdp = environment(cfg, initial=cfg.data_initial)
    if cfg.dataset_path:
        data = load_experience(cfg.dataset_path)
        data.validate_indices(data_mdp.num_states, data_mdp.num_actions)
        return data
    return collect(data_mdp, behavior_policy(cfg, spec), cfg.num_trajectories, cfg.trajectory_length, cfg.seed)


def build_source(cfg: ExperimentConfig, data: Optional[ExperienceSet]):
    _, data_mdp = environment(cfg, initial=cfg.data_initial)
    if cfg.mode == "online":
        return OnlineSource(data_mdp, cfg.num_trajectories, cfg.trajectory_length, cfg.seed, cfg.smoothing)
    if data is None:
        raise ValidationError("offline runs need an experience set")
    return OfflineSource.from_experience(data, data_mdp.num_states, data_mdp.num_actions, cfg.smoothing)


def run_training(cfg: ExperimentConfig, data: Optional[ExperienceSet] = None) -> Tuple[TrainingResult, List[ResidualMap]]:
    """Trains the configured method; residual maps are recorded for AlgaeDICE when enabled."""
    spec, mdp = environment(cfg)
    if cfg.mode == "offline" and data is None:
        data = build_dataset(cfg)
    source = build_source(cfg, data)

    if cfg.method == "ac":
        result = train_actor_critic(mdp, source, cfg.steps, cfg.learning_rate, smoothing=cfg.smoothing)
        return result, []

    algae_cfg = AlgaeConfig(alpha=cfg.alpha, divergence=parse_divergence(cfg.divergence))
    maps: List[ResidualMap] = []

    def record_map(step: int, policy: SoftmaxPolicy, solution: AlgaeSolution) -> None:
        maps.append(residual_map(mdp, policy, solution.nu, algae_cfg.alpha, algae_cfg.divergence, spec, step))

    result = train(
        mdp,
        source,
        algae_cfg,
        cfg.steps,
        cfg.learning_rate,
        smoothing=cfg.smoothing,
        on_step=record_map if cfg.residual_maps else None,
    )
    return result, maps


def run_id_for(cfg: ExperimentConfig) -> Tuple[str, str]:
    config_hash = content_hash(cfg.canonical_json().encode("utf-8"))
    return f"{cfg.method}-{cfg.mode}-{cfg.preset}-s{cfg.seed}-{config_hash[:8]}", config_hash


def run_experiment(
    cfg: ExperimentConfig,
    runs_dir: str = settings.RUNS_DIR,
    repository: Optional[RunRepository] = None,
) -> RunArtifacts:
    """Runs one configuration and writes metrics, policy, manifest (and maps) to its own directory."""
    run_id, config_hash = run_id_for(cfg)
    run_dir = os.path.join(runs_dir, run_id)
    os.makedirs(run_dir, exist_ok=True)
    logger.info(f"Run {run_id} starting in {run_dir}")

    data = None
    dataset_path = None
    if cfg.mode == "offline":
        data = build_dataset(cfg)
        dataset_path = cfg.dataset_path or save_experience(data, os.path.join(run_dir, "dataset.exp"))

    result, maps = run_training(cfg, data)

    metrics_path = write_metrics_csv(
        os.path.join(run_dir, "metrics.csv"),
        (m.as_row() for m in result.metrics),
        cfg.method,
        cfg.mode,
        cfg.seed,
    )
    policy_path = os.path.join(run_dir, "policy.json")
    with open(policy_path, "w", encoding="utf-8") as handle:
        json.dump({"logits": result.policy.logits.tolist()}, handle)
    maps_path = write_residual_maps(os.path.join(run_dir, "residuals.jsonl"), maps) if maps else None

    manifest = {
        "run_id": run_id,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "method": cfg.method,
        "mode": cfg.mode,
        "inputs": {
            "config": config_hash,
            "dataset": file_hash(dataset_path) if dataset_path else None,
        },
        "outputs": {
            "metrics": os.path.basename(metrics_path),
            "metrics_hash": file_hash(metrics_path),
            "policy": os.path.basename(policy_path),
            "residuals": os.path.basename(maps_path) if maps_path else None,
        },
        "final_reward": result.final_reward,
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__},
    }
    manifest_path = write_manifest(os.path.join(run_dir, "manifest.json"), manifest)

    if repository is not None:
        repository.add_run(run_id, cfg.method, cfg.mode, cfg.preset, cfg.seed, config_hash, result.final_reward, run_dir)
    logger.info(f"Run {run_id} finished: final reward {result.final_reward:.5f}")

    return RunArtifacts(
        run_id=run_id,
        run_dir=run_dir,
        final_reward=result.final_reward,
        config_hash=config_hash,
        metrics_path=metrics_path,
        manifest_path=manifest_path,
        policy_path=policy_path,
        maps_path=maps_path,
        dataset_path=dataset_path,
    )


def replay_manifest(
    path: str,
    runs_dir: str = os.path.join(settings.RUNS_DIR, "replays"),
    repository: Optional[RunRepository] = None,
) -> RunArtifacts:
    """Re-runs a manifest's config and reports whether the metrics file is bit-identical."""
    manifest = load_manifest(path)
    cfg = ExperimentConfig.from_dict(manifest["config"])
    expected_dataset = manifest["inputs"].get("dataset")
    if cfg.dataset_path and expected_dataset and file_hash(cfg.dataset_path) != expected_dataset:
        raise ValidationError(f"dataset {cfg.dataset_path} changed since the manifest was written")

    artifacts = run_experiment(cfg, runs_dir, repository)
    same_data = expected_dataset is None or (
        artifacts.dataset_path is not None and file_hash(artifacts.dataset_path) == expected_dataset
    )
    artifacts.reproduced = same_data and file_hash(artifacts.metrics_path) == manifest["outputs"]["metrics_hash"]
    if not artifacts.reproduced:
        logger.warning(f"Replay of {path} produced different metrics")
    return artifacts


def load_policy(path: str) -> SoftmaxPolicy:
    try:
        with open(path, encoding="utf-8") as handle:
            return SoftmaxPolicy(json.load(handle)["logits"])
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read policy file {path}: {exc}") from exc


def _compare_worker(job: Tuple[Dict, str]) -> Dict:
    config, runs_dir = job
    cfg = ExperimentConfig.from_dict(config)
    artifacts = run_experiment(cfg, runs_dir)
    return {
        "method": cfg.method,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "preset": cfg.preset,
        "final_reward": artifacts.final_reward,
        "run_id": artifacts.run_id,
        "run_dir": artifacts.run_dir,
        "config_hash": artifacts.config_hash,
    }


def compare(
    base: ExperimentConfig,
    seeds: Sequence[int],
    output_dir: str,
    workers: int = 1,
    repository: Optional[RunRepository] = None,
) -> List[Dict]:
    """Runs algae/ac x online/offline for every seed and writes the summary CSV.

    Each run is independent and writes only inside its own directory; the
    registry is updated from the parent process.
    """
    jobs = [
        (
            replace(
                base,
                method=method,
                mode=mode,
                seed=seed,
                residual_maps=False,
                dataset_path=base.dataset_path if mode == "offline" else None,
            ).to_dict(),
            output_dir,
        )
        for method in ("algae", "ac")
        for mode in ("online", "offline")
        for seed in seeds
    ]
    logger.info(f"Comparing {len(jobs)} runs with {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_compare_worker, jobs))
    else:
        results = [_compare_worker(job) for job in jobs]

    if repository is not None:
        for r in results:
            repository.add_run(r["run_id"], r["method"], r["mode"], r["preset"], r["seed"],
                               r["config_hash"], r["final_reward"], r["run_dir"])

    rows = summarize_final_rewards(results)
    write_compare_csv(os.path.join(output_dir, "compare.csv"), rows)
    return rows
