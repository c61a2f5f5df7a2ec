"""Tabular actor-critic: exact Q_pi, then one semi-gradient step on the logits."""
import logging
from typing import List, Optional

import numpy as np

from services.algae import StepMetrics, TrainingResult
from services.dataset import as_source
from services.errors import ValidationError
from services.mdp_core import (
    SoftmaxPolicy,
    TableLike,
    TabularMdp,
    as_array,
    dual_return,
    q_values,
    softmax_logit_gradient,
)

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATE = 0.1


def _surrogate_parts(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike):
    q = q_values(mdp, pi).values
    state_mass = as_array(d_D).sum(axis=1)
    value = float(np.sum(state_mass * np.sum(pi.probs * q, axis=1)))
    return q, state_mass, value


def surrogate_gradient(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike) -> np.ndarray:
    """Gradient of sum_s d_D(s) sum_a pi(a|s) Q_pi(s,a) with Q_pi held constant."""
    q, state_mass, _ = _surrogate_parts(mdp, pi, d_D)
    return softmax_logit_gradient(pi, state_mass, q)


def actor_critic_step(mdp: TabularMdp, pi: SoftmaxPolicy, d_D: TableLike, learning_rate: float) -> SoftmaxPolicy:
    return pi.step(surrogate_gradient(mdp, pi, d_D), learning_rate)


def train_actor_critic(
    mdp: TabularMdp,
    data,
    steps: int,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    initial_policy: Optional[SoftmaxPolicy] = None,
    smoothing: float = 1e-6,
) -> TrainingResult:
    """Same loop and metrics layout as the AlgaeDICE trainer.

    ``objective`` holds the frozen-Q surrogate; ``zeta_error`` is NaN because
    the method has no dual variable.
    """
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    source = as_source(data, mdp.num_states, mdp.num_actions, smoothing)
    policy = initial_policy or SoftmaxPolicy.uniform(mdp.num_states, mdp.num_actions)
    logger.info(f"Actor-critic training: {steps} steps, lr={learning_rate}, mode={source.mode}")

    metrics: List[StepMetrics] = []
    for step in range(steps + 1):
        d_D = source.distribution(policy, step).weights
        q, state_mass, surrogate = _surrogate_parts(mdp, policy, d_D)
        gradient = softmax_logit_gradient(policy, state_mass, q)
        metrics.append(
            StepMetrics(
                step=step,
                dual_return=dual_return(mdp, policy),
                objective=surrogate,
                zeta_error=float("nan"),
                grad_norm=float(np.max(np.abs(gradient))),
            )
        )
        if step < steps:
            policy = policy.step(gradient, learning_rate)

    logger.info(f"Actor-critic training finished: final reward {metrics[-1].dual_return:.5f}")
    return TrainingResult(policy=policy, metrics=metrics)
