"""Command-line pipeline driver.

Subcommands mirror the pipeline stages (demo, infer, irl, eval), plus `run`
for the whole chain and `replay` for inspecting demonstration files. Every
stage reads its predecessors' artifacts from the output directory, so the
staged commands compose to exactly what `run` produces in one go.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .inference import infer_models
from .irl import empirical_fc, estimated_fc, train
from .metrics import SimilarityReport, policy_divergence
from .planner import PlanningContext
from .profiles import load_profiles, save_profiles
from .sar_env import InvalidConfigError
from .seeding import seed_seq
from .serialize import (
    read_augmented,
    read_trajectories,
    write_augmented,
    write_belief_curve_csv,
    write_similarity_csv,
    write_trace_csv,
    write_trajectories,
)
from .workbench import (
    ExperimentConfig,
    StageError,
    condition_priors,
    generate_demos,
    replay,
    run_condition,
    true_models,
)

__all__ = ["main", "build_parser"]

OUT_DIR_VAR = "TEAMIRL_OUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teamirl",
        description="Team demonstrations, teammate-model inference, and "
        "per-agent reward learning in a search-and-rescue gridworld.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="JSON experiment config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument(
            "--out",
            type=Path,
            default=None,
            help=f"output directory (default: ${OUT_DIR_VAR} or ./runs)",
        )
        p.add_argument("--condition", help="condition name override")
        p.add_argument("--mode", choices=["known", "unknown"], help="teammate knowledge mode")
        p.add_argument("--epochs", type=int, help="max training epochs override")
        p.add_argument("--rollouts", type=int, help="rollouts per epoch override")

    for name, doc in [
        ("demo", "generate expert demonstrations"),
        ("infer", "annotate demonstrations with teammate-model beliefs"),
        ("irl", "learn per-agent reward weights from annotated demonstrations"),
        ("eval", "measure learned-vs-demonstrated behavior similarity"),
        ("run", "full pipeline: demo, infer, irl, eval"),
    ]:
        add_common(sub.add_parser(name, help=doc))

    rp = sub.add_parser("replay", help="render a demonstration file step by step")
    rp.add_argument("file", type=Path, help="demonstration file (JSONL)")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        config = ExperimentConfig.from_dict(data)
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.condition:
        config = dataclasses.replace(config, condition=args.condition)
    if args.mode:
        config = dataclasses.replace(config, mode=args.mode)
    irl_cfg = config.irl
    if args.epochs is not None:
        irl_cfg = dataclasses.replace(irl_cfg, max_epochs=args.epochs)
    if args.rollouts is not None:
        irl_cfg = dataclasses.replace(irl_cfg, n_rollouts=args.rollouts)
    if irl_cfg is not config.irl:
        config = dataclasses.replace(config, irl=irl_cfg)
    return config


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is not None:
        out = args.out
    else:
        out = Path(os.environ.get(OUT_DIR_VAR, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_demo(config: ExperimentConfig, out: Path) -> None:
    demos = generate_demos(config)
    write_trajectories(out / "demos.jsonl", config.env, demos)
    print(f"wrote {len(demos)} trajectories to {out / 'demos.jsonl'}")


def _cmd_infer(config: ExperimentConfig, out: Path) -> None:
    env_config, demos = read_trajectories(out / "demos.jsonl")
    config = dataclasses.replace(config, env=env_config)
    ctx = PlanningContext(env_config.build())
    priors = condition_priors(ctx.env, config)
    for observer in ctx.env.roster.names:
        augmented = infer_models(ctx, demos, observer, priors, config.demo.planner)
        if not augmented:
            continue
        fname = out / f"augmented_{observer}.jsonl"
        write_augmented(fname, env_config, augmented)
        for tm in ctx.env.roster.names:
            if tm != observer:
                write_belief_curve_csv(
                    out / f"beliefs_{observer}_about_{tm}.csv", augmented, tm
                )
        print(f"wrote {fname}")


def _cmd_irl(config: ExperimentConfig, out: Path) -> None:
    env_config, demos = read_trajectories(out / "demos.jsonl")
    config = dataclasses.replace(config, env=env_config)
    ctx = PlanningContext(env_config.build())
    learned = []
    for agent in ctx.env.roster.names:
        _, _, augmented = read_augmented(out / f"augmented_{agent}.jsonl")
        profile, trace = train(
            ctx,
            agent,
            demos,
            augmented,
            config.irl,
            config.demo.planner,
            seed_seq(config.seed, "train", agent),
        )
        learned.append(profile)
        write_trace_csv(out / f"trace_{agent}.csv", trace)
        status = "converged" if trace.converged else "did not converge"
        print(f"{agent}: {status} after {trace.epochs_run} epochs")
    save_profiles(out / "learned_profiles.json", learned)
    print(f"wrote {out / 'learned_profiles.json'}")


def _cmd_eval(config: ExperimentConfig, out: Path) -> None:
    env_config, demos = read_trajectories(out / "demos.jsonl")
    config = dataclasses.replace(config, env=env_config)
    ctx = PlanningContext(env_config.build())
    profiles = load_profiles(out / "learned_profiles.json")
    experts = true_models(ctx.env, config)
    for agent in ctx.env.roster.names:
        _, _, augmented = read_augmented(out / f"augmented_{agent}.jsonl")
        learned = profiles[f"learned_{agent}"]
        counts = estimated_fc(
            ctx,
            learned,
            augmented,
            agent,
            config.irl,
            config.demo.planner,
            seed_seq(config.seed, "eval", agent),
        )
        demo_counts = empirical_fc(ctx.env, demos, agent)
        pi_div = policy_divergence(
            ctx, learned, experts[agent].profile, augmented, agent, config.demo.planner
        )
        report = SimilarityReport.build(agent, counts, demo_counts, pi_div)
        write_similarity_csv(out / f"similarity_{agent}.csv", {"learned": report})
        print(f"{agent}: fc_diff={report.fc_diff:.4f} pi_div={report.pi_div:.4f}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            sys.stdout.write(replay(args.file))
            return 0
        config = _load_config(args)
        out = _out_dir(args)
        if args.command == "run":
            manifest = run_condition(config, out)
            print(f"run complete, manifest fingerprint {manifest.fingerprint()}")
        elif args.command == "demo":
            _cmd_demo(config, out)
        elif args.command == "infer":
            _cmd_infer(config, out)
        elif args.command == "irl":
            _cmd_irl(config, out)
        elif args.command == "eval":
            _cmd_eval(config, out)
        return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, InvalidConfigError) as exc:
        print(f"error: stage {args.command!r} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
