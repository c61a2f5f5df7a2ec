import argparse
import logging
import os
import sys
from typing import List, Optional, Tuple

# Rule 3 & 11: Explicit imports to prevent Circular Dependency
from cli.handlers.commands import router
from cli.utils import error_line, parse_cell, parse_real
from config import settings
from config.presets import BEHAVIORS, METHODS, MODES, PRESETS
from services.errors import ConfigurationError, SolverError, ValidationError

logger = logging.getLogger("algae")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2


def setup_logging() -> None:
    # Rule 10: Observability (Logs + Metrics)
    os.makedirs(os.path.dirname(settings.LOG_FILE) or ".", exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL),
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        handlers=[
            logging.FileHandler(settings.LOG_FILE),
            logging.StreamHandler(sys.stderr),
        ],
    )


class StrictArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigurationError so they share exit code 1."""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def _real(text: str) -> float:
    return parse_real(text, "value")


def _cell(text: str) -> Tuple[int, int]:
    return parse_cell(text, "cell")


def _experiment_arguments(parser: argparse.ArgumentParser, default_preset: str) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), default=default_preset)
    parser.add_argument("--config", help="experiment config JSON; flags override its values")
    parser.add_argument("--divergence", help="'quadratic' or 'polynomial:<p>'")
    parser.add_argument("--alpha", type=_real)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=_real)
    parser.add_argument("--behavior", choices=BEHAVIORS)
    parser.add_argument("--num-trajectories", dest="num_trajectories", type=int)
    parser.add_argument("--trajectory-length", dest="trajectory_length", type=int)
    parser.add_argument("--start", type=_cell, help="agent start cell as row,col")
    parser.add_argument("--goal", type=_cell, help="goal cell as row,col")


def build_parser() -> argparse.ArgumentParser:
    parser = StrictArgumentParser(prog="algae", description="Tabular AlgaeDICE experiments")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=StrictArgumentParser)

    collect = commands.add_parser("collect", help="generate an experience set")
    _experiment_arguments(collect, "fig2")
    collect.add_argument("--output", required=True)

    train = commands.add_parser("train", help="train a policy and write metrics + manifest")
    _experiment_arguments(train, "fig2")
    train.add_argument("--method", choices=METHODS)
    train.add_argument("--mode", choices=MODES)
    train.add_argument("--dataset", help="offline experience file instead of collecting")
    train.add_argument("--manifest", help="replay the run recorded in this manifest")
    train.add_argument("--runs-dir", dest="runs_dir", default=settings.RUNS_DIR)
    train.add_argument("--db", help="run registry path")

    evaluate = commands.add_parser("evaluate", help="off-policy evaluation on a dataset")
    _experiment_arguments(evaluate, "fig2")
    evaluate.add_argument("--dataset", required=True)
    evaluate.add_argument("--policy", default="uniform", help="'uniform', 'gridwalk' or a policy JSON file")
    evaluate.add_argument("--gamma", type=_real)
    evaluate.add_argument("--mdp", help="MDP JSON to evaluate on instead of Four Rooms")
    evaluate.add_argument("--initial-from-data", dest="initial_from_data", action="store_true",
                          help="use the dataset's initial-state sample as mu0")

    verify = commands.add_parser("verify", help="run the numerical property suite")
    verify.add_argument("--seeds", type=int, default=10)
    verify.add_argument("--check", action="append", help="run only this property (repeatable)")

    residuals = commands.add_parser("residuals", help="emit residual maps as JSON lines")
    _experiment_arguments(residuals, "fig1")
    residuals.add_argument("--mode", choices=MODES)
    residuals.add_argument("--output", required=True)

    comparison = commands.add_parser("compare", help="multi-seed online vs offline table")
    _experiment_arguments(comparison, "fig2")
    comparison.add_argument("--seeds", type=int, default=5)
    comparison.add_argument("--first-seed", dest="first_seed", type=int, default=0)
    comparison.add_argument("--workers", type=int, default=1)
    comparison.add_argument("--output", default=os.path.join(settings.RUNS_DIR, "compare"))
    comparison.add_argument("--db", help="run registry path")

    runs = commands.add_parser("runs", help="list registered runs")
    runs.add_argument("--limit", type=int, default=50)
    runs.add_argument("--preset", choices=sorted(PRESETS))
    runs.add_argument("--db", help="run registry path")
    return parser


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(error_line(exc, code) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        logger.info(f"--- algae {args.command} ---")
        return router.handlers[args.command](args)
    except ValidationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return _fail(e, EXIT_VALIDATION)
    except SolverError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return _fail(e, EXIT_SOLVER)
    except KeyboardInterrupt:
        logger.info("Manually stopped by user.")
        return EXIT_SOLVER
    except Exception as e:
        # Rule 12: Handle errors explicitly
        logger.critical(f"System crash detected: {e}", exc_info=True)
        return _fail(e, EXIT_SOLVER)


if __name__ == "__main__":
    sys.exit(main())
