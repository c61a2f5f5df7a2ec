# Exact tabular quantities: validation, fixed points and returns (Rule 9)
import numpy as np
import pytest

from services.errors import ErgodicityError, SingularSystemError, ValidationError
from services.mdp_core import (
    Occupancy,
    SoftmaxPolicy,
    TabularMdp,
    bellman,
    dual_return,
    horizon_occupancy,
    initial_pair_distribution,
    on_policy_policy_gradient,
    policy_transition_matrix,
    primal_return,
    q_values,
    random_mdp,
    random_policy,
    recurrent_class_count,
    solve_checked,
    stationary_distribution,
    transpose_bellman,
    visitation,
)


def test_one_state_values(one_state, one_state_policy):
    assert q_values(one_state, one_state_policy).values[0, 0] == pytest.approx(2.0)
    assert visitation(one_state, one_state_policy).weights[0, 0] == pytest.approx(1.0)
    assert primal_return(one_state, one_state_policy) == pytest.approx(1.0)
    assert dual_return(one_state, one_state_policy) == pytest.approx(1.0)


def test_rejects_bad_transition_rows():
    with pytest.raises(ValidationError):
        TabularMdp(reward=[[0.0]], transition=[[[0.9]]], initial_dist=[1.0], discount=0.5)


def test_rejects_discount_outside_unit_interval():
    with pytest.raises(ValidationError):
        TabularMdp(reward=[[0.0]], transition=[[[1.0]]], initial_dist=[1.0], discount=1.5)


def test_rejects_reward_above_declared_bound():
    with pytest.raises(ValidationError):
        TabularMdp(reward=[[2.0]], transition=[[[1.0]]], initial_dist=[1.0], discount=0.5, reward_bound=1.0)


def test_mdp_tables_are_read_only(one_state):
    with pytest.raises(ValueError):
        one_state.reward[0, 0] = 5.0


def test_policy_rows_need_a_finite_logit():
    with pytest.raises(ValidationError):
        SoftmaxPolicy([[0.0, 1.0], [-np.inf, -np.inf]])
    with pytest.raises(ValidationError):
        SoftmaxPolicy([[np.nan, 0.0]])


def test_policy_step_keeps_impossible_actions():
    pi = SoftmaxPolicy([[0.0, -np.inf]])
    stepped = pi.step(np.array([[1.0, 5.0]]), 0.5)
    assert np.isneginf(stepped.logits[0, 1])
    np.testing.assert_allclose(stepped.probs, [[1.0, 0.0]])


def test_from_probs_round_trips_probabilities():
    probs = np.array([[0.2, 0.8], [1.0, 0.0]])
    np.testing.assert_allclose(SoftmaxPolicy.from_probs(probs).probs, probs, atol=1e-12)


def test_q_values_is_bellman_fixed_point(small_problem):
    mdp, pi, _, _ = small_problem
    q = q_values(mdp, pi)
    np.testing.assert_allclose(bellman(mdp, pi, q).values, q.values, atol=1e-10)


def test_visitation_is_transpose_fixed_point(small_problem):
    mdp, pi, _, _ = small_problem
    d_pi = visitation(mdp, pi)
    assert d_pi.is_normalized()
    np.testing.assert_allclose(transpose_bellman(mdp, pi, d_pi).weights, d_pi.weights, atol=1e-12)


def test_primal_and_dual_returns_agree_on_random_mdps():
    rng = np.random.default_rng(0)
    for _ in range(100):
        num_states, num_actions = int(rng.integers(1, 11)), int(rng.integers(1, 5))
        mdp = random_mdp(rng, num_states, num_actions, float(rng.choice([0.5, 0.9, 0.99])))
        pi = random_policy(rng, num_states, num_actions)
        assert abs(primal_return(mdp, pi) - dual_return(mdp, pi)) <= 1e-9


def test_q_values_refuse_undiscounted(absorbing_pair):
    with pytest.raises(SingularSystemError):
        q_values(absorbing_pair, SoftmaxPolicy.uniform(2, 2))


def test_solve_checked_flags_singular_matrix():
    with pytest.raises(SingularSystemError):
        solve_checked(np.zeros((2, 2)), np.ones(2))


def test_stationary_distribution_is_invariant():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 4, 2, 1.0)
    pi = random_policy(rng, 4, 2)
    d = stationary_distribution(mdp, pi)
    np.testing.assert_allclose(transpose_bellman(mdp, pi, d).weights, d.weights, atol=1e-12)
    assert d.is_normalized()


def test_two_recurrent_classes_are_rejected(absorbing_pair):
    with pytest.raises(ErgodicityError):
        stationary_distribution(absorbing_pair, SoftmaxPolicy.uniform(2, 2))


def test_recurrent_class_count_ignores_transient_states():
    # 0 -> 1 <-> 2: one closed class, state 0 transient
    matrix = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    assert recurrent_class_count(matrix) == 1


def test_horizon_occupancy_of_one_step_is_initial_pairs(small_problem):
    mdp, pi, _, _ = small_problem
    np.testing.assert_allclose(horizon_occupancy(mdp, pi, 1).weights, initial_pair_distribution(mdp, pi))
    assert horizon_occupancy(mdp, pi, 7).is_normalized()


def test_on_policy_gradient_matches_finite_differences(small_problem):
    mdp, pi, _, _ = small_problem
    gradient = on_policy_policy_gradient(mdp, pi)
    step = 1e-6
    for index in [(0, 0), (2, 1), (4, 2)]:
        bump = np.zeros_like(pi.logits)
        bump[index] = step
        numeric = (dual_return(mdp, SoftmaxPolicy(pi.logits + bump))
                   - dual_return(mdp, SoftmaxPolicy(pi.logits - bump))) / (2 * step)
        assert gradient[index] == pytest.approx(numeric, abs=1e-7)


def test_mdp_json_round_trip(tmp_path, small_problem):
    mdp = small_problem[0]
    path = tmp_path / "mdp.json"
    mdp.to_json(str(path))
    loaded = TabularMdp.from_json(str(path))
    np.testing.assert_array_equal(loaded.transition, mdp.transition)
    assert loaded.discount == mdp.discount


def test_from_dict_checks_declared_sizes(small_problem):
    document = small_problem[0].to_dict()
    document["num_states"] = 99
    with pytest.raises(ValidationError):
        TabularMdp.from_dict(document)


def test_occupancy_rejects_negative_weights():
    with pytest.raises(ValidationError):
        Occupancy(np.array([[0.5, -0.1]]))


def test_solve_checked_scales_residual_to_large_systems(small_problem):
    mdp, pi, _, _ = small_problem
    system = np.eye(mdp.num_pairs) - mdp.discount * policy_transition_matrix(mdp, pi)
    rhs = 1e8 * np.random.default_rng(11).uniform(-1.0, 1.0, size=mdp.num_pairs)
    solution = solve_checked(system, rhs)
    np.testing.assert_allclose(system @ solution, rhs, rtol=0, atol=1e-8 * 1e9)


def test_policy_transition_matrix_of_one_state(one_state, one_state_policy):
    np.testing.assert_array_equal(policy_transition_matrix(one_state, one_state_policy), [[1.0]])


def test_policy_transition_matrix_of_deterministic_cycle():
    # s0 -> s1 -> s2 -> s0 under both actions; policy always picks action 1
    transition = np.zeros((3, 2, 3))
    for s in range(3):
        transition[s, :, (s + 1) % 3] = 1.0
    mdp = TabularMdp(reward=np.zeros((3, 2)), transition=transition, initial_dist=[1.0, 0.0, 0.0], discount=0.9)
    pi = SoftmaxPolicy.from_probs([[0.0, 1.0]] * 3)
    matrix = policy_transition_matrix(mdp, pi)
    for s in range(3):
        for a in range(2):
            expected = np.zeros(6)
            expected[((s + 1) % 3) * 2 + 1] = 1.0
            np.testing.assert_allclose(matrix[s * 2 + a], expected, atol=1e-15)


def test_policy_transition_matrix_rows_are_distributions():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mdp = random_mdp(rng, 6, 3, 0.9, branching=2)
        matrix = policy_transition_matrix(mdp, random_policy(rng, 6, 3))
        assert np.all(matrix >= 0)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-12)


def test_q_values_match_truncated_neumann_series(small_problem):
    mdp, pi, _, _ = small_problem
    matrix = policy_transition_matrix(mdp, pi)
    term = mdp.reward.ravel().copy()
    total = np.zeros_like(term)
    for _ in range(600):
        total += term
        term = mdp.discount * (matrix @ term)
    np.testing.assert_allclose(q_values(mdp, pi).values.ravel(), total, atol=1e-9)


def test_visitation_matches_truncated_series(small_problem):
    mdp, pi, _, _ = small_problem
    matrix_t = policy_transition_matrix(mdp, pi).T
    term = (1.0 - mdp.discount) * initial_pair_distribution(mdp, pi).ravel()
    total = np.zeros_like(term)
    for _ in range(600):
        total += term
        term = mdp.discount * (matrix_t @ term)
    np.testing.assert_allclose(visitation(mdp, pi).weights.ravel(), total, atol=1e-12)


def test_stationary_distribution_matches_power_iteration():
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng, 5, 2, 1.0)
    pi = random_policy(rng, 5, 2)
    matrix_t = policy_transition_matrix(mdp, pi).T
    d = np.full(mdp.num_pairs, 1.0 / mdp.num_pairs)
    for _ in range(2000):
        d = matrix_t @ d
    np.testing.assert_allclose(stationary_distribution(mdp, pi).weights.ravel(), d, atol=1e-10)


def test_transpose_bellman_matches_explicit_sums(small_problem):
    mdp, pi, behavior, d_D = small_problem
    rho = d_D.weights
    expected = np.zeros((mdp.num_states, mdp.num_actions))
    for s_next in range(mdp.num_states):
        for a_next in range(mdp.num_actions):
            inflow = sum(
                mdp.transition[s, a, s_next] * rho[s, a]
                for s in range(mdp.num_states)
                for a in range(mdp.num_actions)
            )
            expected[s_next, a_next] = pi.probs[s_next, a_next] * (
                mdp.discount * inflow + (1.0 - mdp.discount) * mdp.initial_dist[s_next]
            )
    np.testing.assert_allclose(transpose_bellman(mdp, pi, rho).weights, expected, atol=1e-14)


def test_feasible_upper_bounds_dominate_the_return(small_problem):
    mdp, pi, _, _ = small_problem
    rng = np.random.default_rng(13)
    q = q_values(mdp, pi).values
    start = initial_pair_distribution(mdp, pi)
    for shift in (1e-3, 0.5, 10.0):
        slack = rng.uniform(0.0, (1.0 - mdp.discount) * shift, size=q.shape)
        nu = q + shift + slack
        assert np.all(nu >= bellman(mdp, pi, nu).values - 1e-12)
        bound = (1.0 - mdp.discount) * np.sum(start * nu)
        assert bound >= primal_return(mdp, pi) - 1e-12
