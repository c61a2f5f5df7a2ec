"""Exact tabular MDP quantities computed with dense linear algebra.

State-action pairs are flattened to ``s * num_actions + a`` everywhere.
"""
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import softmax

from services.errors import (
    ErgodicityError,
    SingularSystemError,
    SolverError,
    ValidationError,
)

# Rule 10: Observability
logger = logging.getLogger(__name__)

PROBABILITY_TOL = 1e-12
SOLVE_RESIDUAL_TOL = 1e-8
CLAMP_TOL = 1e-12


def _frozen_array(values, name: str, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP <S, A, r, T, mu0> with discount gamma.

    :param reward: table r[s, a].
    :param transition: table T[s, a, s'].
    :param initial_dist: mu0 over states.
    :param discount: gamma in [0, 1].
    :param reward_bound: declared R_max; defaults to max |r|.
    """

    reward: np.ndarray
    transition: np.ndarray
    initial_dist: np.ndarray
    discount: float
    reward_bound: Optional[float] = None

    def __post_init__(self):
        reward = _frozen_array(self.reward, "reward", 2)
        transition = _frozen_array(self.transition, "transition", 3)
        initial = _frozen_array(self.initial_dist, "initial_dist", 1)
        num_states, num_actions = reward.shape

        if num_states < 1 or num_actions < 1:
            raise ValidationError("an MDP needs at least one state and one action")
        if transition.shape != (num_states, num_actions, num_states):
            raise ValidationError(
                f"transition shape {transition.shape} does not match reward shape {reward.shape}"
            )
        if initial.shape != (num_states,):
            raise ValidationError(f"initial_dist must have length {num_states}")
        if not np.all(np.isfinite(reward)):
            raise ValidationError("reward entries must be finite")
        if np.any(transition < 0) or not np.all(np.isfinite(transition)):
            raise ValidationError("transition probabilities must be finite and >= 0")
        row_error = np.max(np.abs(transition.sum(axis=2) - 1.0))
        if row_error > PROBABILITY_TOL:
            raise ValidationError(f"transition rows must sum to 1 (max error {row_error:.3e})")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > PROBABILITY_TOL:
            raise ValidationError("initial_dist must be a probability vector")
        if not 0.0 <= float(self.discount) <= 1.0:
            raise ValidationError(f"discount {self.discount} is outside [0, 1]")

        bound = float(np.max(np.abs(reward))) if self.reward_bound is None else float(self.reward_bound)
        if np.max(np.abs(reward)) > bound:
            raise ValidationError(f"|reward| exceeds the declared bound R_max={bound}")

        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "initial_dist", initial)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "reward_bound", bound)

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    def with_initial_dist(self, initial_dist) -> "TabularMdp":
        return TabularMdp(self.reward, self.transition, initial_dist, self.discount, self.reward_bound)

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(self.reward, self.transition, self.initial_dist, discount, self.reward_bound)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        """Builds an MDP from its JSON document; probabilities are validated here."""
        missing = {"num_states", "num_actions", "discount", "reward", "transition", "initial_dist"} - set(data)
        if missing:
            raise ValidationError(f"MDP document is missing fields: {sorted(missing)}")
        mdp = cls(
            reward=data["reward"],
            transition=data["transition"],
            initial_dist=data["initial_dist"],
            discount=data["discount"],
            reward_bound=data.get("reward_bound"),
        )
        if (mdp.num_states, mdp.num_actions) != (data["num_states"], data["num_actions"]):
            raise ValidationError("declared num_states/num_actions disagree with the tables")
        return mdp

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle)

    @classmethod
    def from_json(cls, path: str) -> "TabularMdp":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Logit table theta[s, a]; pi(a|s) is the row-wise softmax.

    Logits may be ``-inf`` (zero-probability actions) but every row needs at
    least one finite entry.
    """

    logits: np.ndarray
    probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 2:
            raise ValidationError(f"logits must be a 2-d table, got shape {logits.shape}")
        if np.any(np.isnan(logits)) or np.any(logits == np.inf):
            raise ValidationError("logits must not contain NaN or +inf")
        if not np.all(np.any(np.isfinite(logits), axis=1)):
            raise ValidationError("every state needs at least one finite logit")
        logits.setflags(write=False)
        probs = softmax(logits, axis=1)
        probs.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self) -> int:
        return self.logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.logits.shape[1]

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((num_states, num_actions)))

    @classmethod
    def from_probs(cls, probs) -> "SoftmaxPolicy":
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > PROBABILITY_TOL:
            raise ValidationError("policy rows must be probability vectors")
        with np.errstate(divide="ignore"):
            return cls(np.log(probs))

    def step(self, direction, learning_rate: float) -> "SoftmaxPolicy":
        """One ascent step on the logits; -inf logits stay -inf."""
        direction = np.asarray(direction, dtype=float)
        if direction.shape != self.logits.shape:
            raise ValidationError("ascent direction must match the logit table")
        with np.errstate(invalid="ignore"):
            updated = self.logits + learning_rate * direction
        updated[np.isneginf(self.logits)] = -np.inf
        return SoftmaxPolicy(updated)


@dataclass(frozen=True)
class Occupancy:
    """Nonnegative table over state-action pairs (d^pi, d^D, rho)."""

    weights: np.ndarray

    def __post_init__(self):
        weights = _frozen_array(self.weights, "occupancy", 2)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValidationError("occupancy weights must be finite and >= 0")
        object.__setattr__(self, "weights", weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.total - 1.0) <= tol

    def state_marginal(self) -> np.ndarray:
        return self.weights.sum(axis=1)


@dataclass(frozen=True)
class ValueTable:
    """Real table over state-action pairs (nu, Q_pi, x)."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values, "value table", 2)
        if not np.all(np.isfinite(values)):
            raise ValidationError("value table entries must be finite")
        object.__setattr__(self, "values", values)


TableLike = Union[ValueTable, Occupancy, np.ndarray]


def as_array(table: TableLike) -> np.ndarray:
    if isinstance(table, ValueTable):
        return table.values
    if isinstance(table, Occupancy):
        return table.weights
    return np.asarray(table, dtype=float)


def _check_compatible(mdp: TabularMdp, pi: SoftmaxPolicy) -> None:
    if pi.logits.shape != (mdp.num_states, mdp.num_actions):
        raise ValidationError(
            f"policy shape {pi.logits.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})"
        )


def _check_table(mdp: TabularMdp, table: np.ndarray, name: str) -> None:
    if table.shape != (mdp.num_states, mdp.num_actions):
        raise ValidationError(f"{name} must have shape ({mdp.num_states}, {mdp.num_actions})")


def residual_scale(matrix: np.ndarray, solution: np.ndarray, rhs: np.ndarray) -> float:
    """max(1, ||A||_inf ||x||_inf, ||b||_inf)."""
    if not solution.size:
        return 1.0
    return max(
        1.0,
        float(linalg.norm(matrix, np.inf)) * float(np.max(np.abs(solution))),
        float(np.max(np.abs(rhs))),
    )


def solve_checked(matrix: np.ndarray, rhs: np.ndarray, what: str = "linear system") -> np.ndarray:
    """Pivoted LU solve followed by a residual check scaled to the system.

    Accepts x when ||Ax - b||_inf <= 1e-8 * max(1, ||A||_inf ||x||_inf, ||b||_inf).
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            factor = linalg.lu_factor(matrix)
            solution = linalg.lu_solve(factor, rhs)
        except (linalg.LinAlgWarning, linalg.LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"{what}: factorization failed ({exc})") from exc

    if not np.all(np.isfinite(solution)):
        raise SingularSystemError(f"{what}: solution is not finite")
    if not solution.size:
        return solution
    residual = float(np.max(np.abs(matrix @ solution - rhs)))
    bound = SOLVE_RESIDUAL_TOL * residual_scale(matrix, solution, rhs)
    if residual > bound:
        raise SingularSystemError(f"{what}: residual {residual:.3e} exceeds {bound:.3e}", residual)
    return solution


def _clean_distribution(weights: np.ndarray, what: str) -> np.ndarray:
    """Clamps floating-point noise below zero and renormalises."""
    if np.min(weights) < -CLAMP_TOL:
        raise SolverError(f"{what} has a negative entry {np.min(weights):.3e}")
    weights = np.where(weights < 0, 0.0, weights)
    return weights / weights.sum()


def initial_pair_distribution(mdp: TabularMdp, pi: SoftmaxPolicy) -> np.ndarray:
    """mu0(s) * pi(a|s) as an (S, A) table."""
    _check_compatible(mdp, pi)
    return mdp.initial_dist[:, None] * pi.probs


def policy_transition_matrix(mdp: TabularMdp, pi: SoftmaxPolicy) -> np.ndarray:
    """P_pi((s,a),(s',a')) = T(s'|s,a) * pi(a'|s') on flattened pairs."""
    _check_compatible(mdp, pi)
    n = mdp.num_pairs
    return np.einsum("ijk,kl->ijkl", mdp.transition, pi.probs).reshape(n, n)


def next_state_values(mdp: TabularMdp, pi: SoftmaxPolicy, nu: np.ndarray) -> np.ndarray:
    """sum_{s',a'} T(s'|s,a) pi(a'|s') nu(s',a') as an (S, A) table."""
    return mdp.transition @ np.sum(pi.probs * nu, axis=1)


def bellman(mdp: TabularMdp, pi: SoftmaxPolicy, nu: TableLike) -> ValueTable:
    nu = as_array(nu)
    _check_compatible(mdp, pi)
    _check_table(mdp, nu, "nu")
    return ValueTable(mdp.reward + mdp.discount * next_state_values(mdp, pi, nu))


def transpose_bellman(mdp: TabularMdp, pi: SoftmaxPolicy, rho: TableLike) -> Occupancy:
    """gamma * sum_{s,a} pi(a'|s') T(s'|s,a) rho(s,a) + (1 - gamma) mu0(s') pi(a'|s')."""
    rho = as_array(rho)
    _check_compatible(mdp, pi)
    _check_table(mdp, rho, "rho")
    inflow = np.einsum("sa,sap->p", rho, mdp.transition)
    state_mass = mdp.discount * inflow + (1.0 - mdp.discount) * mdp.initial_dist
    return Occupancy(state_mass[:, None] * pi.probs)


def _require_discounted(mdp: TabularMdp, what: str) -> None:
    if mdp.discount >= 1.0:
        raise SingularSystemError(
            f"{what} needs gamma < 1; (I - gamma P_pi) is singular at gamma = 1 "
            "(use stationary_distribution for the undiscounted case)"
        )


def _q_from_reward(mdp: TabularMdp, pi: SoftmaxPolicy, reward: np.ndarray) -> np.ndarray:
    _require_discounted(mdp, "q_values")
    n = mdp.num_pairs
    system = np.eye(n) - mdp.discount * policy_transition_matrix(mdp, pi)
    return solve_checked(system, reward.ravel(), "Q-value solve").reshape(reward.shape)


def q_values(mdp: TabularMdp, pi: SoftmaxPolicy) -> ValueTable:
    """Solves (I - gamma P_pi) Q = r."""
    return ValueTable(_q_from_reward(mdp, pi, mdp.reward))


def visitation(mdp: TabularMdp, pi: SoftmaxPolicy) -> Occupancy:
    """d^pi = (1 - gamma)(I - gamma P_pi^T)^{-1}(mu0 pi)."""
    _require_discounted(mdp, "visitation")
    n = mdp.num_pairs
    system = np.eye(n) - mdp.discount * policy_transition_matrix(mdp, pi).T
    rhs = (1.0 - mdp.discount) * initial_pair_distribution(mdp, pi).ravel()
    weights = solve_checked(system, rhs, "visitation solve")
    return Occupancy(_clean_distribution(weights, "visitation").reshape(mdp.num_states, mdp.num_actions))


def recurrent_class_count(transition_matrix: np.ndarray) -> int:
    """Number of closed strongly connected classes of the support graph."""
    graph = csr_matrix(transition_matrix > 0)
    _, labels = connected_components(graph, directed=True, connection="strong")
    rows, cols = graph.nonzero()
    leaking = np.unique(labels[rows[labels[rows] != labels[cols]]])
    return int(len(np.unique(labels)) - len(leaking))


def check_ergodic(mdp: TabularMdp, pi: SoftmaxPolicy) -> np.ndarray:
    """Returns P_pi after checking that it has a single recurrent class."""
    matrix = policy_transition_matrix(mdp, pi)
    classes = recurrent_class_count(matrix)
    if classes != 1:
        raise ErgodicityError(f"chain induced by the policy has {classes} recurrent classes, expected 1")
    return matrix


def stationary_distribution(mdp: TabularMdp, pi: SoftmaxPolicy) -> Occupancy:
    """Invariant distribution d = P_pi^T d of an ergodic chain."""
    matrix = check_ergodic(mdp, pi)
    n = mdp.num_pairs
    system = np.eye(n) - matrix.T
    # One balance equation is implied by the others; normalisation replaces it.
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    weights = solve_checked(system, rhs, "stationary solve")
    return Occupancy(_clean_distribution(weights, "stationary distribution").reshape(mdp.num_states, mdp.num_actions))


def on_policy_occupancy(mdp: TabularMdp, pi: SoftmaxPolicy) -> Occupancy:
    """d^pi for gamma < 1, the stationary distribution for gamma = 1."""
    if mdp.discount >= 1.0:
        return stationary_distribution(mdp, pi)
    return visitation(mdp, pi)


def primal_return(mdp: TabularMdp, pi: SoftmaxPolicy) -> float:
    q = q_values(mdp, pi).values
    return float((1.0 - mdp.discount) * np.sum(initial_pair_distribution(mdp, pi) * q))


def dual_return(mdp: TabularMdp, pi: SoftmaxPolicy) -> float:
    return float(np.sum(on_policy_occupancy(mdp, pi).weights * mdp.reward))


def on_policy_policy_gradient(
    mdp: TabularMdp, pi: SoftmaxPolicy, reward_override: Optional[TableLike] = None
) -> np.ndarray:
    """Gradient of J_P w.r.t. the logits, E_{d^pi}[Q(s,a) grad log pi(a|s)].

    With ``reward_override`` the Q-table is computed for that reward while d^pi
    stays the true visitation of pi.
    """
    reward = mdp.reward if reward_override is None else as_array(reward_override)
    _check_table(mdp, reward, "reward_override")
    q = _q_from_reward(mdp, pi, reward)
    state_mass = visitation(mdp, pi).state_marginal()
    return softmax_logit_gradient(pi, state_mass, q)


def softmax_logit_gradient(pi: SoftmaxPolicy, state_weight: np.ndarray, values: np.ndarray) -> np.ndarray:
    """d/dtheta of sum_s w(s) sum_a pi(a|s) values(s,a) with values frozen."""
    baseline = np.sum(pi.probs * values, axis=1, keepdims=True)
    return state_weight[:, None] * pi.probs * (values - baseline)


def horizon_occupancy(mdp: TabularMdp, pi: SoftmaxPolicy, horizon: int) -> Occupancy:
    """Average state-action distribution over the first ``horizon`` steps from mu0."""
    if horizon < 1:
        raise ValidationError("horizon must be positive")
    matrix_t = policy_transition_matrix(mdp, pi).T
    current = initial_pair_distribution(mdp, pi).ravel()
    total = np.zeros_like(current)
    for _ in range(horizon):
        total += current
        current = matrix_t @ current
    return Occupancy((total / horizon).reshape(mdp.num_states, mdp.num_actions))


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    discount: float,
    branching: Optional[int] = None,
) -> TabularMdp:
    """Garnet-style instance: each (s, a) reaches ``branching`` random successors.

    With ``branching=None`` every row has full support, so every policy
    induces an ergodic chain.
    """
    branching = num_states if branching is None else branching
    transition = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            successors = rng.choice(num_states, size=branching, replace=False)
            transition[s, a, successors] = rng.dirichlet(np.ones(branching))
    transition /= transition.sum(axis=2, keepdims=True)
    return TabularMdp(
        reward=rng.uniform(0.0, 1.0, size=(num_states, num_actions)),
        transition=transition,
        initial_dist=rng.dirichlet(np.ones(num_states)),
        discount=discount,
    )


def random_policy(rng: np.random.Generator, num_states: int, num_actions: int, scale: float = 1.0) -> SoftmaxPolicy:
    return SoftmaxPolicy(rng.normal(scale=scale, size=(num_states, num_actions)))
