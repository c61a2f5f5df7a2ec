import numpy as np
import pytest

from services.baselines import _surrogate_parts, actor_critic_step, surrogate_gradient, train_actor_critic
from services.dataset import collect
from services.errors import ValidationError
from services.mdp_core import SoftmaxPolicy, TabularMdp, q_values, random_mdp, random_policy, visitation


def test_constant_reward_leaves_policy_unchanged(small_problem):
    base, pi, _, d_D = small_problem
    mdp = TabularMdp(np.full((5, 3), 0.3), base.transition, base.initial_dist, base.discount)
    stepped = actor_critic_step(mdp, pi, d_D, learning_rate=10.0)
    np.testing.assert_allclose(stepped.probs, pi.probs, atol=1e-10)


def test_zero_learning_rate_is_identity(small_problem):
    mdp, pi, _, d_D = small_problem
    np.testing.assert_array_equal(actor_critic_step(mdp, pi, d_D, 0.0).logits, pi.logits)


def test_semi_gradient_matches_finite_differences_with_frozen_q():
    rng = np.random.default_rng(5)
    mdp = random_mdp(rng, 4, 3, 0.5)
    pi = random_policy(rng, 4, 3)
    d_D = visitation(mdp, random_policy(rng, 4, 3)).weights
    q = q_values(mdp, pi).values
    state_mass = d_D.sum(axis=1)

    def frozen(logits):
        probs = SoftmaxPolicy(logits).probs
        return float(np.sum(state_mass * np.sum(probs * q, axis=1)))

    gradient = surrogate_gradient(mdp, pi, d_D)
    step = 1e-6
    for index in np.ndindex(4, 3):
        bump = np.zeros((4, 3))
        bump[index] = step
        numeric = (frozen(pi.logits + bump) - frozen(pi.logits - bump)) / (2 * step)
        assert gradient[index] == pytest.approx(numeric, abs=1e-9)


def test_small_step_ascends_the_surrogate(small_problem):
    mdp, pi, _, d_D = small_problem
    q, state_mass, before = _surrogate_parts(mdp, pi, d_D)
    stepped = actor_critic_step(mdp, pi, d_D, 1e-2)
    after = float(np.sum(state_mass * np.sum(stepped.probs * q, axis=1)))
    assert after > before


def test_training_rows_have_no_dual_error(small_problem):
    mdp, _, behavior, _ = small_problem
    data = collect(mdp, behavior, 40, 10, seed=1)
    result = train_actor_critic(mdp, data, steps=3, learning_rate=0.5)
    assert [m.step for m in result.metrics] == [0, 1, 2, 3]
    assert all(np.isnan(m.zeta_error) for m in result.metrics)
    assert result.final_reward == result.metrics[-1].dual_return


def test_zero_steps_reports_the_initial_policy(small_problem):
    mdp, _, _, d_D = small_problem
    result = train_actor_critic(mdp, d_D, steps=0)
    assert len(result.metrics) == 1
    np.testing.assert_array_equal(result.policy.logits, np.zeros((5, 3)))


def test_negative_steps_are_rejected(small_problem):
    mdp, _, _, d_D = small_problem
    with pytest.raises(ValidationError):
        train_actor_critic(mdp, d_D, steps=-1)
