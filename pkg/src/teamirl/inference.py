"""Bayesian inference of teammate mental models from observed behavior.

An observer watches demonstration trajectories and maintains, for every
teammate, a belief over a fixed support of mental models. After each observed
action the belief is updated by Bayes' rule,

    posterior(m) proportional to likelihood(action | m, state) * prior(m),

where the likelihood is the model's depth-zero soft-max policy. Updates run in
log space and renormalize every step, so long trajectories cannot underflow.
Beliefs reset to the configured prior at every trajectory boundary.

The output pairs each demonstration step with the beliefs held *before*
observing that step's actions, which is exactly what a learner conditioning
on time-varying teammate models needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .planner import (
    InvalidBeliefError,
    ModelBelief,
    PlannerConfig,
    PlanningContext,
    model_action_log_prob,
)
from .sar_env import AgentAction, HiddenConfig, JointAction, SearchRescueEnv, WorldState

__all__ = [
    "TrajectoryConsistencyError",
    "BeliefUnderflowError",
    "Trajectory",
    "AugmentedStep",
    "AugmentedTrajectory",
    "validate_trajectory",
    "action_likelihood",
    "action_log_likelihood",
    "belief_update",
    "infer_models",
    "fixed_belief_augmentation",
]


class TrajectoryConsistencyError(ValueError):
    """Raised when recorded states do not follow from the recorded actions."""


class BeliefUnderflowError(ArithmeticError):
    """Raised if every model in the support loses all posterior mass."""


@dataclass(frozen=True)
class Trajectory:
    """A demonstration: per-step (state, joint action) pairs plus the hidden
    victim placement the episode ran under."""

    steps: tuple[tuple[WorldState, JointAction], ...]
    hidden: HiddenConfig
    seed_path: tuple = ()

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True, eq=False)
class AugmentedStep:
    state: WorldState
    joint: JointAction
    beliefs: Mapping[str, ModelBelief]


@dataclass(frozen=True, eq=False)
class AugmentedTrajectory:
    """A demonstration annotated, per step, with the observer's beliefs about
    each teammate prior to seeing that step."""

    steps: tuple[AugmentedStep, ...]
    hidden: HiddenConfig
    observer: str
    seed_path: tuple = ()

    def __len__(self) -> int:
        return len(self.steps)


def validate_trajectory(env: SearchRescueEnv, trajectory: Trajectory) -> None:
    """Check dynamics consistency: each recorded state must equal the step
    function applied to its predecessor. Raises naming the offending step."""
    for j in range(len(trajectory.steps) - 1):
        state, joint = trajectory.steps[j]
        expected = env.step(state, trajectory.hidden, joint)
        actual = trajectory.steps[j + 1][0]
        if expected != actual:
            raise TrajectoryConsistencyError(
                f"step {j}: recorded successor state does not match dynamics "
                f"(expected {expected}, got {actual})"
            )


def action_log_likelihood(
    ctx: PlanningContext,
    state: WorldState,
    observed: AgentAction,
    teammate: str,
    model,
    config: Optional[PlannerConfig] = None,
) -> float:
    return model_action_log_prob(ctx, state, teammate, model, observed, config)


def action_likelihood(
    ctx: PlanningContext,
    state: WorldState,
    observed: AgentAction,
    teammate: str,
    model,
    config: Optional[PlannerConfig] = None,
) -> float:
    """Probability the model's soft-max policy assigns to the observed action.
    Strictly positive for finite rationality."""
    return float(np.exp(action_log_likelihood(ctx, state, observed, teammate, model, config)))


def belief_update(
    ctx: PlanningContext,
    prior: ModelBelief,
    state: WorldState,
    observed: AgentAction,
    teammate: str,
    config: Optional[PlannerConfig] = None,
) -> ModelBelief:
    """One Bayes step over the fixed support, computed in log space."""
    log_post = []
    for model, p in zip(prior.support, prior.probabilities):
        if p == 0.0:
            log_post.append(-np.inf)
            continue
        ll = action_log_likelihood(ctx, state, observed, teammate, model, config)
        log_post.append(np.log(p) + ll)
    log_post = np.asarray(log_post)
    peak = log_post.max()
    if not np.isfinite(peak):
        raise BeliefUnderflowError(
            f"belief over {[m.name for m in prior.support]} lost all mass"
        )
    post = np.exp(log_post - peak)
    post /= post.sum()
    return ModelBelief(prior.support, tuple(float(x) for x in post))


def infer_models(
    ctx: PlanningContext,
    trajectories: Sequence[Trajectory],
    observer: str,
    priors: Mapping[str, ModelBelief],
    config: Optional[PlannerConfig] = None,
) -> list[AugmentedTrajectory]:
    """Annotate demonstrations with the observer's evolving teammate beliefs.

    Beliefs start from the prior at step zero of every trajectory and are
    updated with each teammate's observed action; the beliefs attached to a
    step are those held before observing it. A single-model support skips the
    likelihood computation since its posterior is identically one.
    """
    env = ctx.env
    roster = env.roster
    i_obs = roster.index(observer)
    teammates = [s.name for s in roster if s.name != observer]
    for name in teammates:
        if name not in priors:
            raise InvalidBeliefError(f"no prior supplied for teammate {name!r}")

    out = []
    for t_idx, traj in enumerate(trajectories):
        try:
            validate_trajectory(env, traj)
        except TrajectoryConsistencyError as exc:
            raise TrajectoryConsistencyError(f"trajectory {t_idx}: {exc}") from None
        beliefs = {name: priors[name] for name in teammates}
        steps = []
        for state, joint in traj.steps:
            steps.append(AugmentedStep(state, joint, dict(beliefs)))
            for name in teammates:
                if len(beliefs[name].support) == 1:
                    continue
                observed = joint[roster.index(name)]
                beliefs[name] = belief_update(
                    ctx, beliefs[name], state, observed, name, config
                )
        out.append(
            AugmentedTrajectory(tuple(steps), traj.hidden, observer, traj.seed_path)
        )
    return out


def fixed_belief_augmentation(
    trajectories: Sequence[Trajectory],
    observer: str,
    roster_names: Sequence[str],
    belief_by_teammate: Mapping[str, ModelBelief],
) -> list[AugmentedTrajectory]:
    """Attach the same belief to every step, bypassing inference entirely."""
    teammates = [n for n in roster_names if n != observer]
    beliefs = {n: belief_by_teammate[n] for n in teammates}
    return [
        AugmentedTrajectory(
            tuple(AugmentedStep(s, a, dict(beliefs)) for s, a in traj.steps),
            traj.hidden,
            observer,
            traj.seed_path,
        )
        for traj in trajectories
    ]
