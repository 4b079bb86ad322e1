"""Multiagent reward learning with teammate modeling, on a search-and-rescue
gridworld: demonstration generation, Bayesian inference of teammate mental
models, per-agent maximum-entropy IRL conditioned on those beliefs, and
behavior-similarity metrics."""

from .inference import (
    AugmentedStep,
    AugmentedTrajectory,
    Trajectory,
    TrajectoryConsistencyError,
    belief_update,
    infer_models,
    validate_trajectory,
)
from .irl import (
    FeatureCounts,
    IrlConfig,
    IrlTrace,
    empirical_fc,
    estimated_fc,
    exact_fc,
    irl_step,
    train,
    train_team,
)
from .metrics import SimilarityReport, fc_diff, jsd, policy_divergence
from .planner import (
    MentalModel,
    ModelBelief,
    PlannerConfig,
    PlanningContext,
    PolicyDistribution,
    best_response_policy,
    model_action_log_prob,
    predict_teammate,
    q_values,
    sample_action,
    softmax,
    softmax_policy,
)
from .profiles import (
    PROFILE_KINDS,
    RewardProfile,
    bundled_profiles,
    ground_truth,
    load_profiles,
    profile_variant,
    save_profiles,
)
from .sar_env import (
    AgentAction,
    AgentSpec,
    EnvConfig,
    GridSpec,
    HiddenConfig,
    Role,
    Roster,
    SearchRescueEnv,
    VictimStatus,
    WorldState,
    init_world,
)
from .seeding import rng, seed_seq
from .workbench import (
    CONDITIONS,
    DemoSettings,
    ExperimentConfig,
    RunManifest,
    StageError,
    generate_demos,
    replay,
    run_condition,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # environment
    "AgentAction",
    "AgentSpec",
    "EnvConfig",
    "GridSpec",
    "HiddenConfig",
    "Role",
    "Roster",
    "SearchRescueEnv",
    "VictimStatus",
    "WorldState",
    "init_world",
    # profiles
    "PROFILE_KINDS",
    "RewardProfile",
    "bundled_profiles",
    "ground_truth",
    "load_profiles",
    "profile_variant",
    "save_profiles",
    # planning
    "MentalModel",
    "ModelBelief",
    "PlannerConfig",
    "PlanningContext",
    "PolicyDistribution",
    "best_response_policy",
    "model_action_log_prob",
    "predict_teammate",
    "q_values",
    "sample_action",
    "softmax",
    "softmax_policy",
    # inference
    "AugmentedStep",
    "AugmentedTrajectory",
    "Trajectory",
    "TrajectoryConsistencyError",
    "belief_update",
    "infer_models",
    "validate_trajectory",
    # reward learning
    "FeatureCounts",
    "IrlConfig",
    "IrlTrace",
    "empirical_fc",
    "estimated_fc",
    "exact_fc",
    "irl_step",
    "train",
    "train_team",
    # metrics
    "SimilarityReport",
    "fc_diff",
    "jsd",
    "policy_divergence",
    # orchestration
    "CONDITIONS",
    "DemoSettings",
    "ExperimentConfig",
    "RunManifest",
    "StageError",
    "generate_demos",
    "replay",
    "run_condition",
    # seeding
    "rng",
    "seed_seq",
]
