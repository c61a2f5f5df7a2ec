import numpy as np
import pytest

from services import verification
from services.algae import (
    AlgaeConfig,
    danskin_gradient,
    lagrangian_dual_value,
    lagrangian_objective,
    ope_estimate,
    policy_gradient,
    primal_objective,
    saddle_value_identity,
    solve_nu,
    solve_nu_general,
    solve_nu_quadratic,
    train,
)
from services.dataset import collect
from services.divergences import polynomial, quadratic
from services.errors import ConditioningError, ConfigurationError, SupportError, ValidationError
from services.mdp_core import (
    SoftmaxPolicy,
    TabularMdp,
    dual_return,
    initial_pair_distribution,
    policy_transition_matrix,
    q_values,
    random_mdp,
    random_policy,
    visitation,
)

ONE = np.ones((1, 1))


# --- One-state fixed point: r = 1, gamma = 0.5, alpha = 0.1 ---

def test_one_state_closed_form(one_state, one_state_policy):
    solution = solve_nu_quadratic(one_state, one_state_policy, ONE, 0.1)
    assert solution.nu.values[0, 0] == pytest.approx(1.8)
    assert solution.zeta[0, 0] == pytest.approx(1.0)
    assert solution.objective == pytest.approx(0.95)


def test_one_state_objectives(one_state, one_state_policy):
    cfg = AlgaeConfig(alpha=0.1)
    nu = np.array([[1.8]])
    assert primal_objective(one_state, one_state_policy, ONE, nu, cfg) == pytest.approx(0.95)
    assert lagrangian_objective(one_state, one_state_policy, ONE, nu, ONE, cfg) == pytest.approx(0.95)
    assert primal_objective(one_state, one_state_policy, ONE, np.zeros((1, 1)), cfg) == pytest.approx(0.1 * 50.0)


def test_lagrangian_at_zero_zeta_is_the_start_term(small_problem):
    mdp, pi, _, d_D = small_problem
    nu = np.random.default_rng(0).normal(size=(5, 3))
    expected = (1 - mdp.discount) * np.sum(mdp.initial_dist[:, None] * pi.probs * nu)
    value = lagrangian_objective(mdp, pi, d_D, nu, np.zeros((5, 3)), AlgaeConfig(alpha=0.3))
    assert value == pytest.approx(expected)


def test_primal_objective_refuses_zero_alpha(one_state, one_state_policy):
    with pytest.raises(ConfigurationError):
        primal_objective(one_state, one_state_policy, ONE, ONE, AlgaeConfig(alpha=0.0))


def test_general_solver_polynomial_forces_unit_ratio(one_state, one_state_policy):
    solution = solve_nu_general(one_state, one_state_policy, ONE, AlgaeConfig(alpha=0.1, divergence=polynomial(1.5)))
    assert solution.zeta[0, 0] == pytest.approx(1.0, abs=1e-5)


def test_exploratory_alpha_maximises(one_state, one_state_policy):
    solution = solve_nu(one_state, one_state_policy, ONE, AlgaeConfig(alpha=-0.1))
    assert solution.objective == pytest.approx(1.05, abs=1e-8)


# --- Saddle-point identities on random instances ---

def test_saddle_identities_on_random_mdps():
    for seed in range(50):
        assert verification.saddle_identities(seed) <= 1.0, seed


def test_zeta_is_unchanged_by_regularization_strength(small_problem):
    mdp, pi, _, d_D = small_problem
    weak = solve_nu(mdp, pi, d_D, AlgaeConfig(alpha=0.01)).zeta
    strong = solve_nu(mdp, pi, d_D, AlgaeConfig(alpha=1.0)).zeta
    np.testing.assert_allclose(weak, strong, atol=1e-6)
    assert weak.min() >= -1e-8


def test_general_solver_matches_closed_form():
    for seed in range(5):
        inst = verification.random_instance(seed, max_states=4, max_actions=3, discount=0.9)
        d_D = visitation(inst.mdp, inst.behavior)
        cfg = AlgaeConfig(alpha=0.01, inner_tolerance=1e-10)
        closed = solve_nu_quadratic(inst.mdp, inst.pi, d_D, cfg.alpha)
        iterative = solve_nu_general(inst.mdp, inst.pi, d_D, cfg)
        np.testing.assert_allclose(iterative.nu.values, closed.nu.values, atol=1e-5)
        assert iterative.objective == pytest.approx(closed.objective, abs=1e-6)


def test_small_alpha_recovers_q_values():
    rng = np.random.default_rng(4)
    for _ in range(5):
        mdp = random_mdp(rng, 5, 2, 0.9)
        pi, behavior = random_policy(rng, 5, 2), random_policy(rng, 5, 2)
        solution = solve_nu(mdp, pi, visitation(mdp, behavior), AlgaeConfig(alpha=1e-6))
        np.testing.assert_allclose(solution.nu.values, q_values(mdp, pi).values, atol=1e-3)


def test_polynomial_saddle_value_identity(small_problem):
    mdp, pi, _, d_D = small_problem
    cfg = AlgaeConfig(alpha=0.05, divergence=polynomial(3), inner_tolerance=1e-11)
    solution = solve_nu(mdp, pi, d_D, cfg)
    assert solution.objective == pytest.approx(saddle_value_identity(mdp, pi, d_D, cfg), abs=1e-7)
    np.testing.assert_allclose(solution.zeta, visitation(mdp, pi).weights / d_D.weights, atol=1e-5)


def test_saddle_value_shrinks_with_alpha(small_problem):
    mdp, pi, _, d_D = small_problem
    values = [solve_nu(mdp, pi, d_D, AlgaeConfig(alpha=a)).objective for a in (0.01, 0.1, 1.0)]
    assert values[0] >= values[1] >= values[2]


def test_diagnostics_report_bounded_nu(small_problem):
    mdp, pi, _, d_D = small_problem
    diagnostics = solve_nu(mdp, pi, d_D, AlgaeConfig(alpha=0.1)).diagnostics
    assert diagnostics["nu_in_range"]
    assert diagnostics["w_max"] > 0


def test_telescoping_and_inner_duality():
    for seed in range(25):
        assert verification.telescoping(seed) <= 1e-9, seed
        assert verification.inner_strong_duality(seed) <= 1e-7, seed


def test_dual_value_rejects_infeasible_zeta(small_problem):
    mdp, pi, _, d_D = small_problem
    with pytest.raises(ValidationError):
        lagrangian_dual_value(mdp, pi, d_D, np.ones((5, 3)) * 3.0, AlgaeConfig(alpha=0.1))


def test_closed_form_satisfies_the_normal_equations():
    for seed in range(10):
        inst = verification.random_instance(seed, discount=0.95)
        rng = np.random.default_rng(seed)
        d_D = visitation(inst.mdp, inst.behavior).weights
        d_D = d_D * rng.uniform(1e-3, 1.0, size=d_D.shape)
        d_D = d_D / d_D.sum()
        for alpha in (0.01, 1.0):
            nu = solve_nu_quadratic(inst.mdp, inst.pi, d_D, alpha).nu.values.ravel()
            n = inst.mdp.num_pairs
            a = inst.mdp.discount * policy_transition_matrix(inst.mdp, inst.pi) - np.eye(n)
            d = np.diag(d_D.ravel())
            b = initial_pair_distribution(inst.mdp, inst.pi).ravel()
            normal = a.T @ d @ a
            rhs = -alpha * (1.0 - inst.mdp.discount) * b - a.T @ d @ inst.mdp.reward.ravel()
            assert np.max(np.abs(normal @ nu - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(nu)))


def test_closed_form_zeta_recovers_the_ratio_with_thin_data(small_problem):
    mdp, pi, _, _ = small_problem
    d_D = np.full((5, 3), 1e-3)
    d_D[:, 0] = 1.0
    d_D = d_D / d_D.sum()
    solution = solve_nu_quadratic(mdp, pi, d_D, 0.01)
    ratio = visitation(mdp, pi).weights / d_D
    np.testing.assert_allclose(solution.zeta, ratio, rtol=1e-5)


def test_lagrangian_maximum_over_zeta_is_the_primal_objective(one_state, one_state_policy):
    cfg = AlgaeConfig(alpha=0.1)
    zetas = np.arange(-40.0, 40.0, 1e-3)
    for nu in (-3.0, 0.0, 1.8, 4.0):
        values = [lagrangian_objective(one_state, one_state_policy, ONE, [[nu]], [[z]], cfg) for z in zetas[::50]]
        coarse = zetas[::50][int(np.argmax(values))]
        fine = zetas[np.abs(zetas - coarse) <= 0.05]
        best = max(lagrangian_objective(one_state, one_state_policy, ONE, [[nu]], [[z]], cfg) for z in fine)
        expected = primal_objective(one_state, one_state_policy, ONE, [[nu]], cfg)
        assert best == pytest.approx(expected, abs=1e-6)
        assert best <= expected + 1e-12


# --- Coverage and conditioning ---

def test_uncovered_target_mass_is_a_support_error(small_problem):
    mdp, pi, _, d_D = small_problem
    holes = d_D.weights.copy()
    holes[0, 0] = 0.0
    with pytest.raises(SupportError):
        solve_nu_quadratic(mdp, pi, holes, 0.1)


def test_zero_data_weight_is_a_conditioning_error(small_problem):
    mdp = small_problem[0]
    logits = np.zeros((5, 3))
    logits[:, 2] = -np.inf
    pi = SoftmaxPolicy(logits)
    d_D = visitation(mdp, pi).weights.copy()
    d_D[:, 2] = 0.0
    with pytest.raises(ConditioningError) as info:
        solve_nu_quadratic(mdp, pi, d_D, 0.1)
    assert info.value.min_eigenvalue == pytest.approx(0.0, abs=1e-10)


def test_config_validates_inner_limits():
    with pytest.raises(ConfigurationError):
        AlgaeConfig(alpha=0.1, inner_tolerance=0.0)
    with pytest.raises(ConfigurationError):
        AlgaeConfig(alpha=float("nan"))


# --- Policy gradient ---

def test_gradient_matches_augmented_on_policy_gradient():
    for seed in range(25):
        assert verification.gradient_equivalence(seed) <= 1e-6, seed


def test_gradient_matches_finite_differences():
    for seed in range(5):
        assert verification.finite_difference_gradient(seed) <= 1e-4, seed


def test_constant_reward_with_on_policy_data_has_no_gradient():
    rng = np.random.default_rng(9)
    base = random_mdp(rng, 4, 3, 0.9)
    mdp = TabularMdp(np.full((4, 3), 0.5), base.transition, base.initial_dist, base.discount)
    pi = random_policy(rng, 4, 3)
    gradient = policy_gradient(mdp, pi, visitation(mdp, pi), AlgaeConfig(alpha=1e-3))
    assert np.max(np.abs(gradient)) <= 1e-8


def test_danskin_gradient_reuses_a_solution(small_problem):
    mdp, pi, _, d_D = small_problem
    cfg = AlgaeConfig(alpha=0.1)
    solution = solve_nu(mdp, pi, d_D, cfg)
    np.testing.assert_allclose(danskin_gradient(mdp, pi, d_D, solution), policy_gradient(mdp, pi, d_D, cfg))


# --- Training ---

def test_zero_learning_rate_keeps_policy_and_metrics(small_problem):
    mdp, _, _, d_D = small_problem
    result = train(mdp, d_D, AlgaeConfig(alpha=0.1), steps=4, learning_rate=0.0)
    assert len(result.metrics) == 5
    np.testing.assert_array_equal(result.policy.logits, np.zeros((5, 3)))
    assert len({m.dual_return for m in result.metrics}) == 1
    assert len({m.objective for m in result.metrics}) == 1


def test_training_raises_the_regularized_objective(small_problem):
    mdp, _, _, d_D = small_problem
    result = train(mdp, d_D, AlgaeConfig(alpha=0.01), steps=20, learning_rate=0.5)
    assert result.metrics[-1].objective > result.metrics[0].objective
    assert result.metrics[-1].zeta_error <= 1e-6
    assert result.final_reward == pytest.approx(dual_return(mdp, result.policy))


def test_training_accepts_experience_and_reports_steps(small_problem):
    mdp, _, behavior, _ = small_problem
    data = collect(mdp, behavior, 50, 10, seed=0)
    seen = []
    result = train(mdp, data, AlgaeConfig(alpha=0.1), steps=2, learning_rate=1.0,
                   on_step=lambda step, policy, solution: seen.append(step))
    assert seen == [0, 1, 2]
    assert [m.step for m in result.metrics] == [0, 1, 2]


# --- Off-policy evaluation ---

def test_ope_estimates():
    for seed in range(25):
        assert verification.ope_accuracy(seed) <= 1.0, seed
        assert verification.ope_self_evaluation(seed) <= 1.0, seed


def test_ope_one_state(one_state, one_state_policy):
    assert ope_estimate(one_state, ONE, one_state_policy, AlgaeConfig(alpha=0.1)) == pytest.approx(0.95)


def test_ope_with_zero_alpha_uses_the_bilinear_lagrangian(small_problem):
    mdp, pi, _, d_D = small_problem
    estimate = ope_estimate(mdp, d_D, pi, AlgaeConfig(alpha=0.0))
    assert estimate == pytest.approx(dual_return(mdp, pi), abs=1e-9)


def test_ope_from_logged_experience(small_problem):
    mdp, pi, behavior, _ = small_problem
    data = collect(mdp, behavior, 400, 30, seed=2)
    cfg = AlgaeConfig(alpha=1e-3, divergence=quadratic())
    estimate = ope_estimate(mdp, data, pi, cfg, initial_from_data=True)
    assert np.isfinite(estimate)
