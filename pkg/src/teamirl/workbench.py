"""Experiment orchestration: demonstrations, conditions, end-to-end runs.

A run is described by one ExperimentConfig and a master seed. Demonstrations
are generated by soft-max experts acting under their true reward profiles;
in "known" mode each expert plans against the teammate's actual profile,
in "unknown" mode experts maintain and update a belief over a prior support
while acting. The learner-side condition picks which mental models the
observer considers when replaying the demos (a singleton support pins the
belief and skips inference arithmetic entirely).

Every stage derives its randomness from the master seed by named tokens, so
stages compose reproducibly and any single stage can be rerun in isolation.
run_condition writes all artifacts (demo file, augmented files, belief
curves, training traces, learned profiles, similarity reports) plus a
manifest sufficient to reproduce them byte-for-byte; manifest fingerprints
ignore wall-clock timings.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.metadata
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .inference import Trajectory, belief_update, infer_models
from .irl import IrlConfig, empirical_fc, estimated_fc, train
from .metrics import SimilarityReport, policy_divergence
from .planner import (
    MentalModel,
    ModelBelief,
    PlannerConfig,
    PlanningContext,
    best_response_policy,
    sample_action,
)
from .profiles import PROFILE_KINDS, RewardProfile, profile_variant, save_profiles
from .sar_env import (
    STATUS_CHARS,
    AgentAction,
    EnvConfig,
    InvalidConfigError,
    SearchRescueEnv,
    WorldState,
    init_world,
)
from .seeding import rng, seed_seq
from .serialize import (
    SchemaError,
    read_trajectories,
    write_augmented,
    write_belief_curve_csv,
    write_similarity_csv,
    write_trace_csv,
    write_trajectories,
)

__all__ = [
    "CONDITIONS",
    "MANIFEST_SCHEMA",
    "StageError",
    "DemoSettings",
    "ExperimentConfig",
    "RunManifest",
    "true_models",
    "condition_priors",
    "generate_demos",
    "run_condition",
    "replay",
    "render_state",
    "call_then_approach_fraction",
    "mean_joint_evacuations",
]

MANIFEST_SCHEMA = "sar-run/v1"

# Learner-side model supports, keyed by condition name. Pure data: new
# conditions are new entries (or a "custom" support in the config).
CONDITIONS: dict[str, tuple[str, ...]] = {
    "cond1_gt": ("gt",),
    "cond2_op": ("op",),
    "cond3_gt_op_rd": ("gt", "op", "rd"),
    "cond4_rd_tk_sc": ("rd", "tk", "sc"),
}

try:
    _VERSION = importlib.metadata.version("teamirl")
except importlib.metadata.PackageNotFoundError:
    _VERSION = "0+unknown"


class StageError(RuntimeError):
    """A pipeline stage failed; artifacts written so far stay on disk."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class DemoSettings:
    n_trajectories: int = 16
    length: int = 25
    planner: PlannerConfig = PlannerConfig()

    def __post_init__(self) -> None:
        if self.n_trajectories < 0:
            raise ValueError("n_trajectories must be non-negative")
        if self.length < 0:
            raise ValueError("length must be non-negative")

    def as_dict(self) -> dict:
        return {
            "n_trajectories": self.n_trajectories,
            "length": self.length,
            "planner": {
                "horizon": self.planner.horizon,
                "discount": self.planner.discount,
                "rationality": self.planner.rationality,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DemoSettings":
        planner = data.get("planner", {})
        return cls(
            n_trajectories=int(data.get("n_trajectories", 16)),
            length=int(data.get("length", 25)),
            planner=PlannerConfig(
                horizon=int(planner.get("horizon", 2)),
                discount=float(planner.get("discount", 0.9)),
                rationality=float(planner.get("rationality", 1.0)),
            ),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = EnvConfig()
    demo: DemoSettings = DemoSettings()
    condition: str = "cond1_gt"
    custom_support: Optional[tuple[str, ...]] = None
    mode: str = "known"
    unknown_prior: tuple[str, ...] = ("gt", "op", "rd")
    expert_kinds: Optional[Mapping[str, str]] = None
    irl: IrlConfig = IrlConfig()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("known", "unknown"):
            raise InvalidConfigError(f"mode must be known or unknown, got {self.mode!r}")
        if self.condition == "custom":
            if not self.custom_support:
                raise InvalidConfigError("custom condition needs a custom_support list")
        elif self.condition not in CONDITIONS:
            raise InvalidConfigError(
                f"unknown condition {self.condition!r}; choose one of "
                f"{sorted(CONDITIONS)} or 'custom'"
            )
        elif self.custom_support is not None:
            raise InvalidConfigError(
                "custom_support is only allowed with condition='custom'"
            )
        for kind in (self.custom_support or ()) + tuple(self.unknown_prior):
            if kind not in PROFILE_KINDS:
                raise InvalidConfigError(f"unknown profile kind {kind!r}")
        if not self.unknown_prior:
            raise InvalidConfigError("unknown_prior must not be empty")
        for name, kind in (self.expert_kinds or {}).items():
            if kind not in PROFILE_KINDS:
                raise InvalidConfigError(f"unknown profile kind {kind!r} for {name!r}")

    def support_kinds(self) -> tuple[str, ...]:
        if self.condition == "custom":
            return tuple(self.custom_support)
        return CONDITIONS[self.condition]

    def as_dict(self) -> dict:
        return {
            "env": self.env.as_dict(),
            "demo": self.demo.as_dict(),
            "condition": self.condition,
            "custom_support": list(self.custom_support) if self.custom_support else None,
            "mode": self.mode,
            "unknown_prior": list(self.unknown_prior),
            "expert_kinds": dict(self.expert_kinds) if self.expert_kinds else None,
            "irl": dataclasses.asdict(self.irl),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        custom = data.get("custom_support")
        experts = data.get("expert_kinds")
        return cls(
            env=EnvConfig.from_dict(data["env"]) if "env" in data else EnvConfig(),
            demo=DemoSettings.from_dict(data.get("demo", {})),
            condition=data.get("condition", "cond1_gt"),
            custom_support=tuple(custom) if custom else None,
            mode=data.get("mode", "known"),
            unknown_prior=tuple(data.get("unknown_prior", ("gt", "op", "rd"))),
            expert_kinds=dict(experts) if experts else None,
            irl=IrlConfig(**data.get("irl", {})),
            seed=int(data.get("seed", 0)),
        )


# ----------------------------------------------------------------------
# model construction helpers

def true_models(
    env: SearchRescueEnv, config: ExperimentConfig
) -> dict[str, MentalModel]:
    """The actual decision model of every expert: its true profile plus the
    rationality and lookahead demos are generated with."""
    pcfg = config.demo.planner
    kinds = config.expert_kinds or {}
    out = {}
    for spec in env.roster:
        kind = kinds.get(spec.name, "gt")
        profile = profile_variant(spec.role, kind)
        out[spec.name] = MentalModel(profile, pcfg.rationality, pcfg.horizon)
    return out


def _support_for(
    env: SearchRescueEnv, teammate: str, kinds: Sequence[str], pcfg: PlannerConfig
) -> tuple[MentalModel, ...]:
    role = env.roster.spec(teammate).role
    return tuple(
        MentalModel(profile_variant(role, k), pcfg.rationality, pcfg.horizon)
        for k in kinds
    )


def condition_priors(
    env: SearchRescueEnv, config: ExperimentConfig
) -> dict[str, ModelBelief]:
    """Uniform prior over the condition's support, per modeled teammate."""
    kinds = config.support_kinds()
    pcfg = config.demo.planner
    return {
        spec.name: ModelBelief.uniform(_support_for(env, spec.name, kinds, pcfg))
        for spec in env.roster
    }


# ----------------------------------------------------------------------
# demonstration generation

def generate_demos(
    config: ExperimentConfig,
    ctx: Optional[PlanningContext] = None,
    *,
    salt: str = "demo",
) -> list[Trajectory]:
    """Sample expert demonstrations on one shared scenario instance.

    The victim placement is drawn once from the master seed, so every
    trajectory (and any baseline resample with a different ``salt``) runs on
    the same instance. Each step consumes exactly one uniform variate per
    agent, in roster order, in both knowledge modes; a trajectory's variates
    come from its own child stream, so trajectories are independent and the
    set is stable under changing n_trajectories.
    """
    if ctx is None:
        ctx = PlanningContext(config.env.build())
    env = ctx.env
    pcfg = config.demo.planner
    names = env.roster.names
    experts = true_models(env, config)

    state0, hidden = init_world(env, config.env.n_victims, rng(config.seed, "hidden"))
    streams = seed_seq(config.seed, salt).spawn(max(config.demo.n_trajectories, 1))

    if config.mode == "unknown":
        prior = {
            name: ModelBelief.uniform(
                _support_for(env, name, config.unknown_prior, pcfg)
            )
            for name in names
        }
    else:
        prior = {name: ModelBelief.point_mass(experts[name]) for name in names}

    trajectories = []
    for t in range(config.demo.n_trajectories):
        gen = np.random.default_rng(streams[t])
        beliefs = {
            name: {tm: prior[tm] for tm in names if tm != name} for name in names
        }
        state = state0
        steps = []
        for _ in range(config.demo.length):
            joint = []
            for name in names:
                pol = best_response_policy(
                    ctx, state, name, experts[name].profile, pcfg, beliefs[name]
                )
                joint.append(sample_action(pol, gen))
            joint = tuple(joint)
            steps.append((state, joint))
            if config.mode == "unknown":
                for name in names:
                    for tm, belief in beliefs[name].items():
                        if len(belief.support) == 1:
                            continue
                        observed = joint[env.roster.index(tm)]
                        beliefs[name][tm] = belief_update(
                            ctx, belief, state, observed, tm, pcfg
                        )
            state = env.step(state, hidden, joint)
        trajectories.append(Trajectory(tuple(steps), hidden, seed_path=(salt, t)))
    return trajectories


# ----------------------------------------------------------------------
# behavioral predicates for demo inspection

def call_then_approach_fraction(
    env: SearchRescueEnv,
    trajectories: Sequence[Trajectory],
    caller: str = "medic",
    responder: str = "explorer",
    window: int = 2,
) -> float:
    """Fraction of trajectories containing a call the responder reacts to:
    some step where the caller Calls and the responder's distance to the
    caller is strictly smaller ``window`` steps later."""
    ci = env.roster.index(caller)
    ri = env.roster.index(responder)
    hits = 0
    for traj in trajectories:
        found = False
        for j, (state, joint) in enumerate(traj.steps):
            if joint[ci] != AgentAction.CALL or j + window >= len(traj.steps):
                continue
            later = traj.steps[j + window][0]
            d_now = env.grid.manhattan(state.positions[ri], state.positions[ci])
            d_later = env.grid.manhattan(later.positions[ri], later.positions[ci])
            if d_later < d_now:
                found = True
                break
        hits += found
    return hits / len(trajectories) if trajectories else 0.0


def mean_joint_evacuations(
    env: SearchRescueEnv, trajectories: Sequence[Trajectory]
) -> float:
    """Average number of successful evacuations (a cell leaving READY for
    CLEAR) per trajectory, including the effect of the final recorded step."""
    from .sar_env import VictimStatus

    total = 0
    for traj in trajectories:
        for j, (state, joint) in enumerate(traj.steps):
            if j + 1 < len(traj.steps):
                succ = traj.steps[j + 1][0]
            else:
                succ = env.step(state, traj.hidden, joint)
            total += sum(
                1
                for before, after in zip(state.statuses, succ.statuses)
                if before == VictimStatus.READY and after == VictimStatus.CLEAR
            )
    return total / len(trajectories) if trajectories else 0.0


# ----------------------------------------------------------------------
# end-to-end run

@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run and locate its artifacts.
    Artifact paths are relative to the manifest's directory."""

    config: dict
    seeds: dict
    artifacts: dict
    timings: dict
    tool_version: str = _VERSION
    schema: str = MANIFEST_SCHEMA

    def as_dict(self) -> dict:
        return {
            "schema": self.schema,
            "config": self.config,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "timings": self.timings,
            "tool_version": self.tool_version,
        }

    def fingerprint(self) -> str:
        """Content hash over everything except wall-clock timings."""
        data = self.as_dict()
        data.pop("timings")
        return hashlib.sha256(
            json.dumps(data, sort_keys=True).encode("utf-8")
        ).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("schema") != MANIFEST_SCHEMA:
            raise SchemaError(
                f"{path}: manifest schema {data.get('schema')!r} not supported"
            )
        return cls(
            config=data["config"],
            seeds=data["seeds"],
            artifacts=data["artifacts"],
            timings=data["timings"],
            tool_version=data["tool_version"],
            schema=data["schema"],
        )


def run_condition(
    config: ExperimentConfig, out_dir, ctx: Optional[PlanningContext] = None
) -> RunManifest:
    """Demos, belief inference, per-agent reward learning, then metrics.

    Artifacts are written as each stage finishes, so a failure leaves the
    completed stages on disk and raises StageError naming the broken stage.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if ctx is None:
        ctx = PlanningContext(config.env.build())
    env = ctx.env
    pcfg = config.demo.planner
    names = env.roster.names
    timings: dict[str, float] = {}
    artifacts: dict[str, str] = {}
    seeds: dict = {
        "master": config.seed,
        "hidden": [config.seed, "hidden"],
        "demo": [config.seed, "demo"],
        "train": {n: [config.seed, "train", n] for n in names},
        "eval": {n: [config.seed, "eval", n] for n in names},
    }

    def stage(name):
        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, exc_type, exc, tb):
                timings[name] = time.perf_counter() - self.t0
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc
                return False

        return _Timer()

    with stage("demo"):
        demos = generate_demos(config, ctx)
        write_trajectories(out / "demos.jsonl", config.env, demos)
        artifacts["demos"] = "demos.jsonl"

    with stage("infer"):
        priors = condition_priors(env, config)
        augmented = {}
        for observer in names:
            augmented[observer] = infer_models(ctx, demos, observer, priors, pcfg)
            if demos:
                fname = f"augmented_{observer}.jsonl"
                write_augmented(out / fname, config.env, augmented[observer])
                artifacts[f"augmented:{observer}"] = fname
                for tm in names:
                    if tm == observer:
                        continue
                    cname = f"beliefs_{observer}_about_{tm}.csv"
                    write_belief_curve_csv(out / cname, augmented[observer], tm)
                    artifacts[f"beliefs:{observer}:{tm}"] = cname

    with stage("irl"):
        learned: dict[str, RewardProfile] = {}
        traces = {}
        for agent in names:
            prof, trace = train(
                ctx,
                agent,
                demos,
                augmented[agent],
                config.irl,
                pcfg,
                seed_seq(config.seed, "train", agent),
            )
            learned[agent] = prof
            traces[agent] = trace
            tname = f"trace_{agent}.csv"
            write_trace_csv(out / tname, trace)
            artifacts[f"trace:{agent}"] = tname
        save_profiles(out / "learned_profiles.json", list(learned.values()))
        artifacts["profiles"] = "learned_profiles.json"

    with stage("eval"):
        experts = true_models(env, config)
        for agent in names:
            learned_counts = estimated_fc(
                ctx,
                learned[agent],
                augmented[agent],
                agent,
                config.irl,
                pcfg,
                seed_seq(config.seed, "eval", agent),
            )
            demo_counts = empirical_fc(env, demos, agent)
            pi_div = policy_divergence(
                ctx, learned[agent], experts[agent].profile, augmented[agent], agent, pcfg
            )
            report = SimilarityReport.build(agent, learned_counts, demo_counts, pi_div)
            sname = f"similarity_{agent}.csv"
            write_similarity_csv(out / sname, {"learned": report})
            artifacts[f"similarity:{agent}"] = sname

    manifest = RunManifest(
        config=config.as_dict(),
        seeds=seeds,
        artifacts=artifacts,
        timings=timings,
    )
    manifest.save(out / "manifest.json")
    return manifest


# ----------------------------------------------------------------------
# replay rendering

def render_state(
    env: SearchRescueEnv, state: WorldState, markers: Mapping[str, str]
) -> list[str]:
    """Grid rows: one cell per location showing status, agents and beacon."""
    width = env.grid.width
    cellw = 1 + len(markers) + 1
    rows = []
    for r in range(env.grid.height):
        cells = []
        for c in range(width):
            loc = r * width + c
            cell = STATUS_CHARS[state.statuses[loc]]
            for i, name in enumerate(env.roster.names):
                if state.positions[i] == loc:
                    cell += markers[name]
            if state.help_beacon == loc:
                cell += "!"
            cells.append(cell.ljust(cellw))
        rows.append("  " + " ".join(cells).rstrip())
    return rows


def _agent_markers(names: Sequence[str]) -> dict[str, str]:
    letters = [n[0].upper() for n in names]
    if len(set(letters)) < len(letters):
        return {n: str(i) for i, n in enumerate(names)}
    return dict(zip(names, letters))


def replay(path) -> str:
    """Human-readable rendering of a demonstration file."""
    env_config, trajectories = read_trajectories(path)
    env = env_config.build()
    markers = _agent_markers(env.roster.names)
    legend = " ".join(f"{c}={s.name.lower()}" for s, c in STATUS_CHARS.items())
    agents = " ".join(f"{m}={n}" for n, m in markers.items())
    lines = [
        f"grid {env.grid.width}x{env.grid.height}, statuses: {legend}, "
        f"agents: {agents}, !=help beacon",
    ]
    for t, traj in enumerate(trajectories):
        victims = [str(i) for i, v in enumerate(traj.hidden.present) if v]
        lines.append("")
        lines.append(f"trajectory {t}  victims at cells {','.join(victims) or '-'}")
        for j, (state, joint) in enumerate(traj.steps):
            actions = " ".join(
                f"{n}={a.name}" for n, a in zip(env.roster.names, joint)
            )
            lines.append(f"step {j}  time={state.time}  {actions}")
            lines.extend(render_state(env, state, markers))
    return "\n".join(lines) + "\n"
