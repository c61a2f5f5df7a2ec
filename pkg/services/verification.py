"""Numerical property suite run by ``verify``: every identity checked on seeded random MDPs."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from services.algae import (
    AlgaeConfig,
    bellman_residual,
    danskin_gradient,
    lagrangian_dual_value,
    lagrangian_objective,
    ope_estimate,
    primal_objective,
    solve_nu,
    undiscounted_solve,
    variational_objective,
)
from services.divergences import (
    CONJUGACY_TOL,
    check_pair,
    density_ratio,
    f_divergence,
    polynomial,
    quadratic,
)
from services.errors import AlgaeError
from services.mdp_core import (
    SoftmaxPolicy,
    TabularMdp,
    bellman,
    dual_return,
    on_policy_policy_gradient,
    primal_return,
    q_values,
    random_mdp,
    random_policy,
    stationary_distribution,
    transpose_bellman,
    visitation,
)

logger = logging.getLogger(__name__)

DISCOUNTS = (0.5, 0.9, 0.99)
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst_error: float
    tolerance: float
    cases: int
    detail: str = ""


@dataclass(frozen=True)
class Instance:
    mdp: TabularMdp
    pi: SoftmaxPolicy
    behavior: SoftmaxPolicy
    rng: np.random.Generator


def random_instance(seed: int, max_states: int = 10, max_actions: int = 4, discount=None) -> Instance:
    """Seeded random MDP with a target and a behavior policy, both with full support."""
    rng = np.random.default_rng(seed)
    num_states = int(rng.integers(2, max_states + 1))
    num_actions = int(rng.integers(2, max_actions + 1))
    gamma = float(rng.choice(DISCOUNTS)) if discount is None else discount
    mdp = random_mdp(rng, num_states, num_actions, gamma)
    pi = random_policy(rng, num_states, num_actions)
    behavior = random_policy(rng, num_states, num_actions)
    return Instance(mdp, pi, behavior, rng)


def _run(name: str, tolerance: float, seeds: Sequence[int], case: Callable[[int], float]) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        try:
            error = float(case(seed))
        except AlgaeError as exc:
            logger.warning(f"{name}: seed {seed} raised {type(exc).__name__}: {exc}")
            return CheckResult(name, False, float("inf"), tolerance, len(seeds), f"seed {seed}: {exc}")
        if not np.isfinite(error):
            return CheckResult(name, False, float("inf"), tolerance, len(seeds), f"seed {seed}: non-finite error")
        worst = max(worst, error)
    return CheckResult(name, worst <= tolerance, worst, tolerance, len(seeds))


def _sup(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def strong_duality(seed: int) -> float:
    inst = random_instance(seed)
    return abs(primal_return(inst.mdp, inst.pi) - dual_return(inst.mdp, inst.pi))


def fixed_points(seed: int) -> float:
    inst = random_instance(seed)
    q = q_values(inst.mdp, inst.pi)
    d_pi = visitation(inst.mdp, inst.pi)
    return max(
        _sup(bellman(inst.mdp, inst.pi, q).values, q.values),
        _sup(transpose_bellman(inst.mdp, inst.pi, d_pi).weights, d_pi.weights),
    )


def saddle_identities(seed: int) -> float:
    """Residual, dual-ratio and value identities at the quadratic optimum.

    Each error is scaled by its tolerance so one threshold of 1 covers all three.
    """
    inst = random_instance(seed)
    d_D = visitation(inst.mdp, inst.behavior)
    d_pi = visitation(inst.mdp, inst.pi)
    worst = 0.0
    for alpha in (0.01, 1.0):
        cfg = AlgaeConfig(alpha=alpha)
        solution = solve_nu(inst.mdp, inst.pi, d_D, cfg)
        residual = _sup(solution.nu.values + alpha * cfg.divergence.f_prime(solution.zeta),
                        bellman(inst.mdp, inst.pi, solution.nu).values)
        ratio = _sup(solution.zeta, density_ratio(d_pi, d_D))
        target = float(np.sum(d_pi.weights * inst.mdp.reward)) - alpha * f_divergence(d_pi, d_D, cfg.divergence)
        value = abs(solution.objective - target)
        worst = max(worst, residual / 1e-7, ratio / 1e-6, value / 1e-7)
    return worst


def gradient_equivalence(seed: int) -> float:
    inst = random_instance(seed)
    cfg = AlgaeConfig(alpha=0.1)
    d_D = visitation(inst.mdp, inst.behavior)
    solution = solve_nu(inst.mdp, inst.pi, d_D, cfg)
    ratio = density_ratio(visitation(inst.mdp, inst.pi), d_D)
    augmented = inst.mdp.reward - cfg.alpha * cfg.divergence.f_prime(ratio)
    expected = on_policy_policy_gradient(inst.mdp, inst.pi, reward_override=augmented)
    return _sup(danskin_gradient(inst.mdp, inst.pi, d_D, solution), expected)


def finite_difference_gradient(seed: int) -> float:
    """Relative error of the Danskin gradient against central differences of the re-solved objective."""
    inst = random_instance(seed, max_states=5, max_actions=3)
    cfg = AlgaeConfig(alpha=0.1)
    d_D = visitation(inst.mdp, inst.behavior)

    def objective(logits: np.ndarray) -> float:
        return solve_nu(inst.mdp, SoftmaxPolicy(logits), d_D, cfg).objective

    analytic = danskin_gradient(inst.mdp, inst.pi, d_D, solve_nu(inst.mdp, inst.pi, d_D, cfg))
    numeric = np.zeros_like(analytic)
    for index in np.ndindex(*analytic.shape):
        bump = np.zeros_like(analytic)
        bump[index] = FD_STEP
        numeric[index] = (objective(inst.pi.logits + bump) - objective(inst.pi.logits - bump)) / (2 * FD_STEP)
    return _sup(analytic, numeric) / max(float(np.max(np.abs(numeric))), 1e-8)


def telescoping(seed: int) -> float:
    inst = random_instance(seed)
    cfg = AlgaeConfig(alpha=float(inst.rng.choice([0.01, 0.1, 1.0])))
    d_D = visitation(inst.mdp, inst.behavior)
    nu = inst.rng.normal(size=inst.mdp.reward.shape)
    x = bellman_residual(inst.mdp, inst.pi, nu) / cfg.alpha
    return abs(variational_objective(inst.mdp, inst.pi, d_D, x, cfg) - primal_objective(inst.mdp, inst.pi, d_D, nu, cfg))


def inner_strong_duality(seed: int) -> float:
    """min over nu of max over zeta against max over zeta of min over nu, plus the Lagrangian at the saddle."""
    inst = random_instance(seed)
    cfg = AlgaeConfig(alpha=0.1)
    d_D = visitation(inst.mdp, inst.behavior)
    solution = solve_nu(inst.mdp, inst.pi, d_D, cfg)
    min_max = primal_objective(inst.mdp, inst.pi, d_D, solution.nu, cfg)
    max_min = lagrangian_dual_value(inst.mdp, inst.pi, d_D, solution.zeta, cfg)
    at_saddle = lagrangian_objective(inst.mdp, inst.pi, d_D, solution.nu, solution.zeta, cfg)
    return max(abs(min_max - max_min), abs(at_saddle - min_max))


def undiscounted_identities(seed: int) -> float:
    inst = random_instance(seed, discount=1.0)
    cfg = AlgaeConfig(alpha=0.1, gamma_one_mode=True)
    d_D = stationary_distribution(inst.mdp, inst.behavior)
    d_pi = stationary_distribution(inst.mdp, inst.pi)
    ratio = density_ratio(d_pi, d_D)
    solution = undiscounted_solve(inst.mdp, inst.pi, d_D, cfg)
    average_reward = float(np.sum(d_pi.weights * inst.mdp.reward))
    expected_lambda = average_reward - cfg.alpha * float(np.sum(d_pi.weights * cfg.divergence.f_prime(ratio)))
    return max(
        _sup(solution.zeta, ratio),
        abs(solution.objective - (average_reward - cfg.alpha * f_divergence(d_pi, d_D, cfg.divergence))),
        abs(solution.lambda_ - expected_lambda),
    )


def ope_accuracy(seed: int) -> float:
    inst = random_instance(seed)
    d_D = visitation(inst.mdp, inst.behavior)
    estimate = ope_estimate(inst.mdp, d_D, inst.pi, AlgaeConfig(alpha=1e-6))
    return abs(estimate - dual_return(inst.mdp, inst.pi)) / 1e-4


def ope_self_evaluation(seed: int) -> float:
    inst = random_instance(seed)
    cfg = AlgaeConfig(alpha=0.1)
    d_D = visitation(inst.mdp, inst.behavior)
    estimate = ope_estimate(inst.mdp, d_D, inst.behavior, cfg)
    expected = float(np.sum(d_D.weights * inst.mdp.reward)) - cfg.alpha * float(cfg.divergence.f(np.asarray(1.0)))
    return abs(estimate - expected) / 1e-6


def divergence_grid(_seed: int) -> float:
    worst = 0.0
    for div in (quadratic(), polynomial(1.5), polynomial(2), polynomial(3), polynomial(4)):
        report = check_pair(div)
        worst = max(worst, report["conjugacy"] / CONJUGACY_TOL, report["inverse"] / CONJUGACY_TOL)
    return worst


# name, case, tolerance (ratios already scaled by their tolerance use 1.0)
CHECKS: Tuple[Tuple[str, Callable[[int], float], float], ...] = (
    ("primal_dual_return", strong_duality, 1e-9),
    ("bellman_fixed_points", fixed_points, 1e-9),
    ("saddle_identities", saddle_identities, 1.0),
    ("gradient_equivalence", gradient_equivalence, 1e-6),
    ("finite_difference_gradient", finite_difference_gradient, 1e-4),
    ("telescoping", telescoping, 1e-9),
    ("inner_strong_duality", inner_strong_duality, 1e-7),
    ("undiscounted_identities", undiscounted_identities, 1e-6),
    ("ope_accuracy", ope_accuracy, 1.0),
    ("ope_self_evaluation", ope_self_evaluation, 1.0),
    ("divergence_grid", divergence_grid, 1.0),
)


def run_suite(seeds: Sequence[int], names: Sequence[str] = ()) -> List[CheckResult]:
    selected = [check for check in CHECKS if not names or check[0] in names]
    results = []
    for name, case, tolerance in selected:
        # The grid check does not depend on the seed.
        case_seeds = seeds[:1] if name == "divergence_grid" else seeds
        result = _run(name, tolerance, case_seeds, case)
        logger.info(f"{name}: {'PASS' if result.passed else 'FAIL'} worst={result.worst_error:.3e}")
        results.append(result)
    return results


def format_table(results: Sequence[CheckResult]) -> str:
    width = max(len(r.name) for r in results) if results else 10
    lines = [f"{'property':<{width}}  status  worst_error  tolerance  cases"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.worst_error:<11.3e}  {r.tolerance:<9.1e}  {r.cases}"
        )
        if r.detail:
            lines.append(f"{'':<{width}}  {r.detail}")
    return "\n".join(lines)


def summary(results: Sequence[CheckResult]) -> Dict[str, int]:
    passed = sum(r.passed for r in results)
    return {"passed": passed, "failed": len(results) - passed}
