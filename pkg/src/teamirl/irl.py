"""Per-agent maximum-entropy reward learning against modeled teammates.

Each agent learns its own reward weights independently. The target statistic
is the demonstrations' empirical feature counts (mean per-trajectory sums);
the learner's counts are estimated by Monte-Carlo rollouts in which the
learner samples its soft-max best-response policy under the candidate weights
while teammates are sampled from the per-step model beliefs recorded in the
augmented trajectories. The gradient of the likelihood is the difference of
the two counts, weights descend along it with an exponentially decaying
learning rate, and after every update the weights are rescaled to unit L1
norm so their scale stays identified despite the soft-max temperature.

Training stops early once the weight change stays below ``convergence_tol``
in max norm for ``convergence_patience`` consecutive epochs. Because a
decaying learning rate can masquerade as convergence, every epoch also
records the weight change divided by the current learning rate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .inference import AugmentedTrajectory, Trajectory, infer_models
from .planner import (
    ModelBelief,
    PlannerConfig,
    PlanningContext,
    best_response_policy,
    predict_teammate,
    sample_action,
)
from .profiles import RewardProfile
from .sar_env import SearchRescueEnv
from .seeding import as_seed_seq

__all__ = [
    "BeliefAlignmentError",
    "FeatureCounts",
    "IrlConfig",
    "EpochRecord",
    "IrlTrace",
    "empirical_fc",
    "estimated_fc",
    "exact_fc",
    "irl_step",
    "train",
    "train_team",
]


class BeliefAlignmentError(ValueError):
    """Raised when augmented data cannot supply beliefs for every rollout step."""


@dataclass(frozen=True)
class FeatureCounts:
    """Mean per-trajectory feature sums, aligned to one agent's catalog."""

    features: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.features) != len(self.values):
            raise ValueError(
                f"{len(self.values)} values for {len(self.features)} features"
            )
        if any(v < 0.0 for v in self.values):
            raise ValueError(f"feature counts must be non-negative: {self.values}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def as_mapping(self) -> dict[str, float]:
        return dict(zip(self.features, self.values))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class IrlConfig:
    max_epochs: int = 30
    learning_rate: float = 0.05
    lr_decay: float = 0.9
    n_rollouts: int = 16
    rollout_length: int = 25
    convergence_tol: float = 5e-3
    convergence_patience: int = 3

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be at least 1")
        if self.rollout_length < 0:
            raise ValueError("rollout_length must be non-negative")
        if self.convergence_tol <= 0.0:
            raise ValueError("convergence_tol must be positive")
        if self.convergence_patience < 1:
            raise ValueError("convergence_patience must be at least 1")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay**epoch


@dataclass(frozen=True)
class EpochRecord:
    """State of one training epoch, taken after the weight update."""

    epoch: int
    lr: float
    theta: tuple[float, ...]
    phi_est: tuple[float, ...]
    gradient_norm: float
    delta_inf: float
    delta_over_lr: float


@dataclass(frozen=True)
class IrlTrace:
    agent: str
    features: tuple[str, ...]
    records: tuple[EpochRecord, ...]
    converged: bool

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def final_theta(self) -> np.ndarray:
        if not self.records:
            return np.zeros(len(self.features))
        return np.asarray(self.records[-1].theta, dtype=float)


def empirical_fc(
    env: SearchRescueEnv, trajectories: Sequence[Trajectory], agent: str
) -> FeatureCounts:
    """Mean over trajectories of the undiscounted per-trajectory feature sums."""
    if not trajectories:
        raise ValueError("empirical feature counts need at least one trajectory")
    names = env.feature_names(agent)
    total = np.zeros(len(names))
    for traj in trajectories:
        for state, joint in traj.steps:
            total += env.feature_vector(state, joint, agent)
    total /= len(trajectories)
    return FeatureCounts(names, tuple(float(v) for v in total))


def _check_augmented(
    augmented: Sequence[AugmentedTrajectory], agent: str, rollout_length: int
) -> None:
    if not augmented:
        raise BeliefAlignmentError("no augmented trajectories supplied")
    for idx, aug in enumerate(augmented):
        if aug.observer != agent:
            raise BeliefAlignmentError(
                f"augmented trajectory {idx} was built for observer "
                f"{aug.observer!r}, not {agent!r}"
            )
        if len(aug.steps) < max(rollout_length, 1):
            raise BeliefAlignmentError(
                f"augmented trajectory {idx} has {len(aug.steps)} steps, "
                f"rollouts of length {rollout_length} need beliefs for each step"
            )


def estimated_fc(
    ctx: PlanningContext,
    theta: RewardProfile,
    augmented: Sequence[AugmentedTrajectory],
    agent: str,
    config: IrlConfig,
    planner: PlannerConfig,
    seed,
) -> FeatureCounts:
    """Monte-Carlo estimate of the learner's feature counts under ``theta``.

    Rollout r restarts from the initial state and hidden victim placement of
    augmented trajectory r mod len(augmented) and reads that trajectory's
    belief for each step, so teammate behavior varies over time exactly as
    the observer inferred it. All agents consume one uniform variate per
    step, in roster order.
    """
    env = ctx.env
    names = env.roster.names
    feature_names = env.feature_names(agent)
    if config.rollout_length == 0:
        return FeatureCounts(feature_names, (0.0,) * len(feature_names))
    _check_augmented(augmented, agent, config.rollout_length)
    i = env.roster.index(agent)
    total = np.zeros(len(feature_names))
    streams = as_seed_seq(seed).spawn(config.n_rollouts)
    for r in range(config.n_rollouts):
        gen = np.random.default_rng(streams[r])
        aug = augmented[r % len(augmented)]
        state = aug.steps[0].state
        for j in range(config.rollout_length):
            beliefs = aug.steps[j].beliefs
            joint = []
            for a_idx, name in enumerate(names):
                if a_idx == i:
                    pol = best_response_policy(ctx, state, name, theta, planner, beliefs)
                else:
                    pol = predict_teammate(ctx, state, name, beliefs[name], planner)
                joint.append(sample_action(pol, gen))
            joint = tuple(joint)
            total += env.feature_vector(state, joint, agent)
            state = env.step(state, aug.hidden, joint)
    total /= config.n_rollouts
    return FeatureCounts(feature_names, tuple(float(v) for v in total))


def exact_fc(
    ctx: PlanningContext,
    theta: RewardProfile,
    augmented: Sequence[AugmentedTrajectory],
    agent: str,
    rollout_length: int,
    planner: PlannerConfig,
) -> FeatureCounts:
    """Exact expectation of the rollout feature sums.

    Enumerates the joint policy's state distribution step by step instead of
    sampling; the limit of estimated_fc as n_rollouts grows with every
    augmented trajectory weighted equally. Tractable only on small instances.
    """
    env = ctx.env
    names = env.roster.names
    feature_names = env.feature_names(agent)
    if rollout_length == 0:
        return FeatureCounts(feature_names, (0.0,) * len(feature_names))
    _check_augmented(augmented, agent, rollout_length)
    i = env.roster.index(agent)
    total = np.zeros(len(feature_names))
    for aug in augmented:
        dist = {aug.steps[0].state: 1.0}
        for j in range(rollout_length):
            beliefs = aug.steps[j].beliefs
            nxt: dict = {}
            for state, p_state in dist.items():
                policies = []
                for a_idx, name in enumerate(names):
                    if a_idx == i:
                        pol = best_response_policy(
                            ctx, state, name, theta, planner, beliefs
                        )
                    else:
                        pol = predict_teammate(ctx, state, name, beliefs[name], planner)
                    policies.append(list(zip(pol.actions, pol.probabilities)))
                for combo in itertools.product(*policies):
                    w = p_state
                    for _, p in combo:
                        w *= p
                    if w == 0.0:
                        continue
                    joint = tuple(a for a, _ in combo)
                    total += (w / len(augmented)) * env.feature_vector(
                        state, joint, agent
                    )
                    child = env.step(state, aug.hidden, joint)
                    nxt[child] = nxt.get(child, 0.0) + w
            dist = nxt
    return FeatureCounts(feature_names, tuple(float(v) for v in total))


def irl_step(theta, phi_emp, phi_est, lr: float) -> np.ndarray:
    """One gradient step, theta' = theta - lr*(phi_est - phi_emp), rescaled to
    the unit L1 sphere. A result of exactly zero is left at zero."""
    theta = np.asarray(theta, dtype=float)
    emp = phi_emp.as_array() if isinstance(phi_emp, FeatureCounts) else np.asarray(phi_emp, dtype=float)
    est = phi_est.as_array() if isinstance(phi_est, FeatureCounts) else np.asarray(phi_est, dtype=float)
    if theta.shape != emp.shape or emp.shape != est.shape:
        raise ValueError(
            f"misaligned vectors: theta {theta.shape}, "
            f"phi_emp {emp.shape}, phi_est {est.shape}"
        )
    out = theta - lr * (est - emp)
    norm = np.abs(out).sum()
    if norm == 0.0:
        return out
    return out / norm


FcEstimator = Callable[[RewardProfile, np.random.SeedSequence], FeatureCounts]


def train(
    ctx: PlanningContext,
    agent: str,
    trajectories: Sequence[Trajectory],
    augmented: Sequence[AugmentedTrajectory],
    config: IrlConfig,
    planner: PlannerConfig,
    seed,
    *,
    profile_name: Optional[str] = None,
    estimator: Optional[FcEstimator] = None,
) -> tuple[RewardProfile, IrlTrace]:
    """Learn one agent's reward weights from demonstrations.

    Weights start at zero (the no-goal profile, whose soft-max policy is
    uniform) and follow irl_step with lr = learning_rate * lr_decay**epoch.
    Stops early once the max-norm weight change stays below convergence_tol
    for convergence_patience consecutive epochs. ``estimator`` replaces the
    Monte-Carlo feature-count estimate, e.g. with exact_fc on small
    instances; it receives the candidate profile and a per-epoch seed.
    """
    env = ctx.env
    catalog = env.feature_names(agent)
    _check_demo_pairing(trajectories, augmented, agent)
    phi_emp = empirical_fc(env, trajectories, agent)
    if estimator is None:
        def estimator(prof: RewardProfile, ss) -> FeatureCounts:
            return estimated_fc(ctx, prof, augmented, agent, config, planner, ss)

    name = profile_name or f"learned_{agent}"
    theta = np.zeros(len(catalog))
    epoch_seeds = as_seed_seq(seed).spawn(config.max_epochs)
    records = []
    streak = 0
    converged = False
    for epoch in range(config.max_epochs):
        lr = config.lr_at(epoch)
        prof = RewardProfile(name, catalog, tuple(float(v) for v in theta))
        phi_est = estimator(prof, epoch_seeds[epoch])
        gradient = phi_est.as_array() - phi_emp.as_array()
        new_theta = irl_step(theta, phi_emp, phi_est, lr)
        delta_inf = float(np.abs(new_theta - theta).max())
        records.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                theta=tuple(float(v) for v in new_theta),
                phi_est=phi_est.values,
                gradient_norm=float(np.linalg.norm(gradient)),
                delta_inf=delta_inf,
                delta_over_lr=delta_inf / lr,
            )
        )
        theta = new_theta
        streak = streak + 1 if delta_inf < config.convergence_tol else 0
        if streak >= config.convergence_patience:
            converged = True
            break
    learned = RewardProfile(name, catalog, tuple(float(v) for v in theta))
    trace = IrlTrace(agent, catalog, tuple(records), converged)
    return learned, trace


def train_team(
    ctx: PlanningContext,
    trajectories: Sequence[Trajectory],
    priors: Mapping[str, ModelBelief],
    config: IrlConfig,
    planner: PlannerConfig,
    seed,
) -> dict[str, tuple[RewardProfile, IrlTrace]]:
    """Run model inference once per observer, then train every agent.

    ``priors[name]`` is the belief any observer starts with about teammate
    ``name``. Trainings are independent: each agent has its own seed stream
    derived by roster position, so results do not depend on execution order.
    """
    names = ctx.env.roster.names
    root = as_seed_seq(seed)
    agent_seeds = root.spawn(len(names))
    out = {}
    for idx, agent in enumerate(names):
        augmented = infer_models(ctx, trajectories, agent, priors, planner)
        out[agent] = train(
            ctx, agent, trajectories, augmented, config, planner, agent_seeds[idx]
        )
    return out


def _check_demo_pairing(
    trajectories: Sequence[Trajectory],
    augmented: Sequence[AugmentedTrajectory],
    agent: str,
) -> None:
    """The empirical target and the belief source must describe the same demos."""
    if len(trajectories) != len(augmented):
        raise BeliefAlignmentError(
            f"{len(trajectories)} demonstrations but {len(augmented)} augmented "
            "trajectories"
        )
    for idx, (traj, aug) in enumerate(zip(trajectories, augmented)):
        if aug.observer != agent:
            raise BeliefAlignmentError(
                f"augmented trajectory {idx} was built for observer "
                f"{aug.observer!r}, not {agent!r}"
            )
        if len(traj.steps) != len(aug.steps) or traj.hidden != aug.hidden:
            raise BeliefAlignmentError(
                f"augmented trajectory {idx} does not match demonstration {idx}"
            )
        for j, ((s, a), step) in enumerate(zip(traj.steps, aug.steps)):
            if step.state != s or step.joint != a:
                raise BeliefAlignmentError(
                    f"augmented trajectory {idx} diverges from demonstration "
                    f"{idx} at step {j}"
                )
