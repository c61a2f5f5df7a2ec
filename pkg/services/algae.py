"""Saddle-point solver for the regularized Q-LP Lagrangian.

Primal form: min over nu of (1 - gamma) E_{mu0 pi}[nu] + alpha E_{d^D}[f*((B_pi nu - nu) / alpha)].
Fenchel form: the same objective with f* replaced by its dual representation
in zeta, giving the Lagrangian L(nu, zeta).

All residuals use the exact expected Bellman operator.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from services.dataset import ExperienceSet, as_source, empirical_distribution, empirical_initial_distribution
from services.divergences import DivergencePair, density_ratio, f_divergence, is_quadratic, quadratic
from services.errors import (
    ConditioningError,
    ConfigurationError,
    ConvergenceError,
    SingularSystemError,
    SupportError,
    ValidationError,
)
from services.mdp_core import (
    SOLVE_RESIDUAL_TOL,
    Occupancy,
    SoftmaxPolicy,
    TableLike,
    TabularMdp,
    ValueTable,
    as_array,
    initial_pair_distribution,
    next_state_values,
    policy_transition_matrix,
    q_values,
    residual_scale,
    softmax_logit_gradient,
    solve_checked,
    stationary_distribution,
    visitation,
)

# Rule 10: Observability
logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MIN_STEP = 1e-20
FEASIBILITY_TOL = 1e-8
REFINEMENT_STEPS = 3


@dataclass(frozen=True)
class AlgaeConfig:
    """Regularisation weight alpha (any sign), divergence and inner-solver limits."""

    alpha: float
    divergence: DivergencePair = field(default_factory=quadratic)
    gamma_one_mode: bool = False
    inner_tolerance: float = 1e-8
    inner_max_iters: int = 100_000

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ConfigurationError("alpha must be finite")
        if not self.inner_tolerance > 0:
            raise ConfigurationError("inner_tolerance must be > 0")
        if self.inner_max_iters < 1:
            raise ConfigurationError("inner_max_iters must be >= 1")


@dataclass(frozen=True)
class AlgaeSolution:
    """Saddle point (nu*, zeta*, lambda*) and its objective value.

    ``grad_norm`` is the sup-norm of the inner stationarity residual.
    """

    nu: ValueTable
    zeta: np.ndarray
    lambda_: float
    objective: float
    grad_norm: float = 0.0
    iterations: int = 0
    diagnostics: Dict[str, float] = field(default_factory=dict)


def _require_alpha(cfg: AlgaeConfig, what: str) -> None:
    if cfg.alpha == 0:
        raise ConfigurationError(
            f"{what} divides by alpha; with alpha = 0 use lagrangian_objective / the bilinear Lagrangian"
        )


def _require_discounted(mdp: TabularMdp, what: str) -> None:
    if mdp.discount >= 1.0:
        raise ValidationError(f"{what} needs gamma < 1; use undiscounted_solve for gamma = 1")


def _check_occupancy(mdp: TabularMdp, d_D: TableLike) -> np.ndarray:
    d_D = as_array(d_D)
    if d_D.shape != (mdp.num_states, mdp.num_actions):
        raise ValidationError("d_D does not match the MDP shape")
    if np.any(d_D < 0):
        raise ValidationError("d_D must be nonnegative")
    return d_D


def bellman_residual(mdp: TabularMdp, pi: SoftmaxPolicy, nu: TableLike, discount: Optional[float] = None) -> np.ndarray:
    """(B_pi nu - nu)(s, a); ``discount`` overrides gamma (the gamma = 1 variant)."""
    nu = as_array(nu)
    gamma = mdp.discount if discount is None else discount
    return mdp.reward + gamma * next_state_values(mdp, pi, nu) - nu


def primal_objective(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, nu: TableLike, cfg: AlgaeConfig) -> float:
    _require_alpha(cfg, "primal_objective")
    _require_discounted(mdp, "primal_objective")
    d_D = _check_occupancy(mdp, d_D)
    nu = as_array(nu)
    x = bellman_residual(mdp, pi, nu) / cfg.alpha
    start_term = (1.0 - mdp.discount) * np.sum(initial_pair_distribution(mdp, pi) * nu)
    return float(start_term + cfg.alpha * np.sum(d_D * cfg.divergence.f_star(x)))


def lagrangian_objective(
    mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, nu: TableLike, zeta: TableLike, cfg: AlgaeConfig
) -> float:
    """(1 - gamma) E_{mu0 pi}[nu] + E_{d^D}[zeta (B_pi nu - nu)] - alpha E_{d^D}[f(zeta)]."""
    _require_discounted(mdp, "lagrangian_objective")
    d_D = _check_occupancy(mdp, d_D)
    nu, zeta = as_array(nu), as_array(zeta)
    start_term = (1.0 - mdp.discount) * np.sum(initial_pair_distribution(mdp, pi) * nu)
    coupling = np.sum(d_D * zeta * bellman_residual(mdp, pi, nu))
    return float(start_term + coupling - cfg.alpha * np.sum(d_D * cfg.divergence.f(zeta)))


def variational_objective(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, x: TableLike, cfg: AlgaeConfig) -> float:
    """E_{d^pi}[r - alpha x] + alpha E_{d^D}[f*(x)], the objective before the change of variables."""
    d_D = _check_occupancy(mdp, d_D)
    x = as_array(x)
    d_pi = visitation(mdp, pi).weights
    return float(np.sum(d_pi * (mdp.reward - cfg.alpha * x)) + cfg.alpha * np.sum(d_D * cfg.divergence.f_star(x)))


def flow_violation(mdp: TabularMdp, pi: SoftmaxPolicy, flow: np.ndarray, discount: Optional[float] = None) -> float:
    """||B_pi^T(flow) - flow||_inf for a signed flow d^D * zeta."""
    gamma = mdp.discount if discount is None else discount
    inflow = np.einsum("sa,sap->p", flow, mdp.transition)
    state_mass = gamma * inflow + (1.0 - gamma) * mdp.initial_dist
    return float(np.max(np.abs(state_mass[:, None] * pi.probs - flow)))


def lagrangian_dual_value(
    mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, zeta: TableLike, cfg: AlgaeConfig, tol: float = FEASIBILITY_TOL
) -> float:
    """min over nu of L(nu, zeta): finite only on the flow constraint, where it is
    E_{d^D}[zeta r] - alpha E_{d^D}[f(zeta)]."""
    _require_discounted(mdp, "lagrangian_dual_value")
    d_D = _check_occupancy(mdp, d_D)
    zeta = as_array(zeta)
    violation = flow_violation(mdp, pi, d_D * zeta)
    if violation > tol:
        raise ValidationError(f"zeta violates the flow constraint by {violation:.3e}; the inner minimum is -inf")
    return float(np.sum(d_D * zeta * mdp.reward) - cfg.alpha * np.sum(d_D * cfg.divergence.f(zeta)))


def _diagnostics(mdp: TabularMdp, nu: np.ndarray, ratio: np.ndarray, cfg: AlgaeConfig, discount: float) -> Dict[str, float]:
    """Post-hoc box check |nu| <= (R_max + |alpha| max|f'(w)|) / (1 - gamma)."""
    diagnostics = {"w_max": float(np.max(ratio))}
    if discount < 1.0:
        bound = (mdp.reward_bound + abs(cfg.alpha) * float(np.max(np.abs(cfg.divergence.f_prime(ratio))))) / (1.0 - discount)
        in_range = bool(np.max(np.abs(nu)) <= bound * (1.0 + 1e-9) + 1e-12)
        diagnostics.update({"nu_bound": bound, "nu_in_range": in_range})
        if not in_range:
            logger.warning(f"nu leaves the bounded box: max|nu|={np.max(np.abs(nu)):.4g} > {bound:.4g}")
    return diagnostics


def _inner_gradient(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """d/dnu of the primal objective: (1 - gamma) mu0 pi + (gamma P_pi - I)^T (d^D zeta)."""
    flow = d_D * zeta
    inflow = np.einsum("sa,sap->p", flow, mdp.transition)
    pulled = mdp.discount * inflow[:, None] * pi.probs
    return (1.0 - mdp.discount) * initial_pair_distribution(mdp, pi) + pulled - flow


def _normal_equation_solve(system: np.ndarray, weights: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solves system^T W system x = rhs by Cholesky with a few refinement steps."""
    normal = system.T @ (weights[:, None] * system)
    try:
        factor = linalg.cho_factor(normal)
    except linalg.LinAlgError as exc:
        min_eigenvalue = float(np.linalg.eigvalsh(normal)[0])
        raise ConditioningError(
            f"normal matrix A^T D A is not positive definite (min eigenvalue {min_eigenvalue:.3e})",
            min_eigenvalue=min_eigenvalue,
        ) from exc
    solution = linalg.cho_solve(factor, rhs)
    for _ in range(REFINEMENT_STEPS):
        correction = rhs - system.T @ (weights * (system @ solution))
        solution = solution + linalg.cho_solve(factor, correction)
    residual = float(np.max(np.abs(system.T @ (weights * (system @ solution)) - rhs)))
    bound = SOLVE_RESIDUAL_TOL * residual_scale(normal, solution, rhs)
    if not np.all(np.isfinite(solution)) or residual > bound:
        raise SingularSystemError(f"nu normal equations: residual {residual:.3e} exceeds {bound:.3e}", residual)
    return solution


def solve_nu_quadratic(
    mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, alpha: float, divergence: Optional[DivergencePair] = None
) -> AlgaeSolution:
    """Closed-form minimiser of (1-gamma) b^T nu + (1/2 alpha)(r + A nu)^T D (r + A nu), A = gamma P_pi - I.

    Solves the normal equations A^T D A nu = -alpha (1-gamma) b - A^T D r with
    b = mu0 pi. The on-policy visitation only feeds the support check and diagnostics.
    """
    cfg = AlgaeConfig(alpha=alpha, divergence=divergence or quadratic())
    if not alpha > 0:
        raise ConfigurationError(f"the closed-form solve needs alpha > 0, got {alpha}")
    _require_discounted(mdp, "solve_nu_quadratic")
    d_D = _check_occupancy(mdp, d_D)

    ratio = density_ratio(visitation(mdp, pi).weights, d_D)
    n = mdp.num_pairs
    system = mdp.discount * policy_transition_matrix(mdp, pi) - np.eye(n)
    weights = d_D.ravel()
    if np.min(weights) <= 0:
        normal = system.T @ (weights[:, None] * system)
        min_eigenvalue = float(np.linalg.eigvalsh(normal)[0])
        raise ConditioningError(
            f"normal matrix A^T D A is singular where d_D vanishes (min eigenvalue {min_eigenvalue:.3e})",
            min_eigenvalue=min_eigenvalue,
        )

    start = initial_pair_distribution(mdp, pi).ravel()
    rhs = -alpha * (1.0 - mdp.discount) * start - system.T @ (weights * mdp.reward.ravel())
    nu = _normal_equation_solve(system, weights, rhs).reshape(d_D.shape)
    zeta = bellman_residual(mdp, pi, nu) / alpha
    grad = _inner_gradient(mdp, pi, d_D, zeta)
    return AlgaeSolution(
        nu=ValueTable(nu),
        zeta=zeta,
        lambda_=0.0,
        objective=primal_objective(mdp, pi, d_D, nu, cfg),
        grad_norm=float(np.max(np.abs(grad))),
        diagnostics=_diagnostics(mdp, nu, ratio, cfg, mdp.discount),
    )


def _descend(
    value_and_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    start: np.ndarray,
    tolerance: float,
    max_iters: int,
) -> Tuple[np.ndarray, float, int]:
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    :return: (minimiser, final gradient sup-norm, iterations used).
    """
    x = start
    fx, gx = value_and_grad(x)
    step = 1.0
    for iteration in range(max_iters):
        grad_norm = float(np.max(np.abs(gx)))
        if grad_norm <= tolerance:
            return x, grad_norm, iteration
        squared = float(gx @ gx)
        # Objective differences this small are below floating-point resolution.
        slack = 1e-14 * (1.0 + abs(fx))
        t = step
        while True:
            candidate = x - t * gx
            f_new, g_new = value_and_grad(candidate)
            if np.isfinite(f_new) and f_new <= fx - ARMIJO_C * t * squared + slack:
                break
            t *= 0.5
            if t < MIN_STEP:
                raise ConvergenceError(
                    f"line search stalled after {iteration} iterations (gradient norm {grad_norm:.3e})",
                    grad_norm=grad_norm,
                    iterations=iteration,
                )
        s = candidate - x
        y = g_new - gx
        curvature = float(s @ y)
        step = float(s @ s) / curvature if curvature > 0 else 2.0 * t
        x, fx, gx = candidate, f_new, g_new

    grad_norm = float(np.max(np.abs(gx)))
    if grad_norm <= tolerance:
        return x, grad_norm, max_iters
    raise ConvergenceError(
        f"inner solve did not converge in {max_iters} iterations (gradient norm {grad_norm:.3e})",
        grad_norm=grad_norm,
        iterations=max_iters,
    )


def solve_nu_general(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, cfg: AlgaeConfig) -> AlgaeSolution:
    """Iterative solve of the inner problem for any f and any alpha != 0.

    For alpha > 0 the problem is convex in nu and minimised; for alpha < 0 it is
    concave and maximised by descending on its negation.
    """
    _require_alpha(cfg, "solve_nu_general")
    _require_discounted(mdp, "solve_nu_general")
    d_D = _check_occupancy(mdp, d_D)

    shape = (mdp.num_states, mdp.num_actions)
    n = mdp.num_pairs
    sign = 1.0 if cfg.alpha > 0 else -1.0
    matrix = policy_transition_matrix(mdp, pi)
    start_weights = ((1.0 - mdp.discount) * initial_pair_distribution(mdp, pi)).ravel()
    reward = mdp.reward.ravel()
    weights = d_D.ravel()
    div = cfg.divergence

    def value_and_grad(nu: np.ndarray) -> Tuple[float, np.ndarray]:
        x = (reward + mdp.discount * (matrix @ nu) - nu) / cfg.alpha
        value = start_weights @ nu + cfg.alpha * float(weights @ div.f_star(x))
        flow = weights * div.f_star_prime(x)
        grad = start_weights + mdp.discount * (matrix.T @ flow) - flow
        return sign * value, sign * grad

    start = q_values(mdp, pi).values.ravel()
    nu, grad_norm, iterations = _descend(value_and_grad, start, cfg.inner_tolerance, cfg.inner_max_iters)
    nu = nu.reshape(shape)
    zeta = div.f_star_prime(bellman_residual(mdp, pi, nu) / cfg.alpha)
    logger.debug(f"General inner solve converged in {iterations} iterations (gradient norm {grad_norm:.2e})")

    try:
        ratio = density_ratio(visitation(mdp, pi), d_D)
        diagnostics = _diagnostics(mdp, nu, ratio, cfg, mdp.discount)
    except SupportError:
        diagnostics = {}
    return AlgaeSolution(
        nu=ValueTable(nu),
        zeta=zeta,
        lambda_=0.0,
        objective=primal_objective(mdp, pi, d_D, nu, cfg),
        grad_norm=grad_norm,
        iterations=iterations,
        diagnostics=diagnostics,
    )


def solve_nu(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, cfg: AlgaeConfig) -> AlgaeSolution:
    """Closed form for quadratic f with alpha > 0, the iterative solver otherwise."""
    if is_quadratic(cfg.divergence) and cfg.alpha > 0:
        return solve_nu_quadratic(mdp, pi, d_D, cfg.alpha, cfg.divergence)
    return solve_nu_general(mdp, pi, d_D, cfg)


def danskin_gradient(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, solution: AlgaeSolution) -> np.ndarray:
    """Gradient of the primal objective w.r.t. the logits with nu* held fixed.

    Both terms depend on pi only through E_{a ~ pi(s)}[nu*(s, a)]; the state
    weight is (1 - gamma) mu0(s) + gamma sum_{s,a} d^D(s,a) zeta*(s,a) T(s|s,a).
    """
    d_D = as_array(d_D)
    inflow = np.einsum("sa,sap->p", d_D * solution.zeta, mdp.transition)
    state_weight = (1.0 - mdp.discount) * mdp.initial_dist + mdp.discount * inflow
    return softmax_logit_gradient(pi, state_weight, solution.nu.values)


def policy_gradient(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, cfg: AlgaeConfig) -> np.ndarray:
    solution = solve_nu(mdp, pi, d_D, cfg)
    return danskin_gradient(mdp, pi, d_D, solution)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    dual_return: float
    objective: float
    zeta_error: float
    grad_norm: float

    def as_row(self) -> Dict[str, float]:
        return {
            "step": self.step,
            "dual_return": self.dual_return,
            "objective": self.objective,
            "zeta_error": self.zeta_error,
            "grad_norm": self.grad_norm,
        }


@dataclass(frozen=True)
class TrainingResult:
    policy: SoftmaxPolicy
    metrics: List[StepMetrics]

    @property
    def final_reward(self) -> float:
        return self.metrics[-1].dual_return


def train(
    mdp: TabularMdp,
    data,
    cfg: AlgaeConfig,
    steps: int,
    learning_rate: float,
    initial_policy: Optional[SoftmaxPolicy] = None,
    smoothing: float = 1e-6,
    on_step: Optional[Callable[[int, SoftmaxPolicy, AlgaeSolution], None]] = None,
) -> TrainingResult:
    """Alternates an exact nu-solve with one ascent step on the logits.

    ``data`` is an Occupancy, an ExperienceSet or a DataSource. Metrics are
    recorded for the policy at each step before its update, with a final row
    (step == steps) for the returned policy.
    """
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    _require_alpha(cfg, "train")
    source = as_source(data, mdp.num_states, mdp.num_actions, smoothing)
    policy = initial_policy or SoftmaxPolicy.uniform(mdp.num_states, mdp.num_actions)
    logger.info(f"AlgaeDICE training: {steps} steps, lr={learning_rate}, alpha={cfg.alpha}, mode={source.mode}")

    metrics: List[StepMetrics] = []
    for step in range(steps + 1):
        d_D = source.distribution(policy, step).weights
        solution = solve_nu(mdp, policy, d_D, cfg)
        gradient = danskin_gradient(mdp, policy, d_D, solution)
        d_pi = visitation(mdp, policy).weights
        try:
            zeta_error = float(np.max(np.abs(solution.zeta - density_ratio(d_pi, d_D))))
        except SupportError:
            zeta_error = float("nan")

        record = StepMetrics(
            step=step,
            dual_return=float(np.sum(d_pi * mdp.reward)),
            objective=solution.objective,
            zeta_error=zeta_error,
            grad_norm=float(np.max(np.abs(gradient))),
        )
        metrics.append(record)
        logger.debug(f"step={step} reward={record.dual_return:.5f} objective={record.objective:.5f} "
                     f"inner_grad={solution.grad_norm:.2e}")
        if on_step is not None:
            on_step(step, policy, solution)
        if step < steps:
            policy = policy.step(gradient, learning_rate)

    logger.info(f"AlgaeDICE training finished: final reward {metrics[-1].dual_return:.5f}")
    return TrainingResult(policy=policy, metrics=metrics)


def undiscounted_objective(
    mdp: TabularMdp,
    pi: SoftmaxPolicy,
    d_D: TableLike,
    lambda_: float,
    nu: TableLike,
    zeta: TableLike,
    cfg: AlgaeConfig,
) -> float:
    """lambda + E_{d^D}[zeta (-lambda + B_pi nu - nu)] - alpha E_{d^D}[f(zeta)] with gamma = 1."""
    d_D = _check_occupancy(mdp, d_D)
    zeta = as_array(zeta)
    residual = bellman_residual(mdp, pi, nu, discount=1.0) - lambda_
    return float(lambda_ + np.sum(d_D * zeta * residual) - cfg.alpha * np.sum(d_D * cfg.divergence.f(zeta)))


def undiscounted_solve(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, cfg: AlgaeConfig) -> AlgaeSolution:
    """Average-reward variant: solves for (lambda*, nu*, zeta*) with the gauge E_{d^D}[nu] = 0.

    Stationarity in lambda and nu forces d^D zeta to be the invariant
    distribution of P_pi, so zeta* = w; (lambda*, nu*) then solve the bordered
    system (I - P_pi) nu + lambda 1 = r - alpha f'(zeta*), d_D^T nu = 0.
    """
    if not cfg.gamma_one_mode:
        raise ConfigurationError("undiscounted_solve needs a config with gamma_one_mode=True")
    if not cfg.alpha > 0:
        raise ConfigurationError(f"the undiscounted solve needs alpha > 0, got {cfg.alpha}")
    d_D = _check_occupancy(mdp, d_D)

    d_pi = stationary_distribution(mdp, pi).weights
    zeta = density_ratio(d_pi, d_D)
    augmented = mdp.reward - cfg.alpha * cfg.divergence.f_prime(zeta)

    n = mdp.num_pairs
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = np.eye(n) - policy_transition_matrix(mdp, pi)
    system[:n, n] = 1.0
    system[n, :n] = d_D.ravel()
    rhs = np.append(augmented.ravel(), 0.0)
    solution = solve_checked(system, rhs, "undiscounted saddle solve")
    nu = solution[:n].reshape(d_pi.shape)
    lambda_ = float(solution[n])

    stationarity = np.abs(d_D * zeta - d_pi)
    return AlgaeSolution(
        nu=ValueTable(nu),
        zeta=zeta,
        lambda_=lambda_,
        objective=undiscounted_objective(mdp, pi, d_D, lambda_, nu, zeta, cfg),
        grad_norm=float(np.max(stationarity)),
        diagnostics=_diagnostics(mdp, nu, zeta, cfg, 1.0),
    )


def ope_estimate(
    mdp: TabularMdp,
    data,
    pi: SoftmaxPolicy,
    cfg: AlgaeConfig,
    smoothing: float = 1e-6,
    initial_from_data: bool = False,
) -> float:
    """Saddle value of the regularized Lagrangian, an estimate of E_{d^pi}[r] - alpha D_f.

    ``data`` is an ExperienceSet (d^D estimated with ``smoothing``) or an exact
    Occupancy. With alpha = 0 the bilinear Lagrangian is used directly.
    """
    if isinstance(data, ExperienceSet):
        d_D = empirical_distribution(data, mdp.num_states, mdp.num_actions, smoothing).weights
        if initial_from_data:
            mdp = mdp.with_initial_dist(empirical_initial_distribution(data, mdp.num_states))
    else:
        d_D = _check_occupancy(mdp, as_source(data, mdp.num_states, mdp.num_actions).distribution(pi, 0))

    if cfg.gamma_one_mode:
        return undiscounted_solve(mdp, pi, d_D, cfg).objective
    if cfg.alpha == 0:
        # The inner minimum over nu is finite only where d^D zeta is the flow d^pi.
        zeta = density_ratio(visitation(mdp, pi), d_D)
        return lagrangian_dual_value(mdp, pi, d_D, zeta, cfg)
    return solve_nu(mdp, pi, d_D, cfg).objective


def saddle_value_identity(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, cfg: AlgaeConfig) -> float:
    """E_{d^pi}[r] - alpha D_f(d^pi || d^D), the closed-form saddle value."""
    d_pi = stationary_distribution(mdp, pi) if cfg.gamma_one_mode else visitation(mdp, pi)
    d_D = Occupancy(as_array(d_D))
    return float(np.sum(d_pi.weights * mdp.reward) - cfg.alpha * f_divergence(d_pi, d_D, cfg.divergence))
