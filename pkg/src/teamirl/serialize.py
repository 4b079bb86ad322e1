"""File formats for demonstrations, beliefs, training traces and reports.

Everything chartable is CSV; everything structural is line-delimited JSON
with an explicit schema-version header record, so artifacts stay diffable
and stream-processable. Numeric fields round-trip exactly (JSON floats are
written via repr). Readers fail loudly: unknown schema versions raise
SchemaError, malformed lines raise RecordError naming the line number.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .inference import AugmentedStep, AugmentedTrajectory, Trajectory
from .irl import IrlTrace
from .metrics import SimilarityReport
from .planner import MentalModel, ModelBelief
from .profiles import RewardProfile
from .sar_env import (
    CHAR_STATUS,
    STATUS_CHARS,
    AgentAction,
    EnvConfig,
    HiddenConfig,
    WorldState,
)

__all__ = [
    "SchemaError",
    "RecordError",
    "TRAJECTORY_SCHEMA",
    "AUGMENTED_SCHEMA",
    "write_trajectories",
    "read_trajectories",
    "write_augmented",
    "read_augmented",
    "belief_curve_rows",
    "write_belief_curve_csv",
    "write_trace_csv",
    "write_similarity_csv",
]

TRAJECTORY_SCHEMA = "sar-trajectories/v1"
AUGMENTED_SCHEMA = "sar-augmented/v1"


class SchemaError(ValueError):
    """File schema version missing or unsupported."""


class RecordError(ValueError):
    """A line of an artifact file could not be parsed; names the line."""


# ----------------------------------------------------------------------
# JSON encoding of domain values

def _state_to_json(state: WorldState) -> dict:
    return {
        "pos": list(state.positions),
        "status": "".join(STATUS_CHARS[s] for s in state.statuses),
        "beacon": state.help_beacon,
        "t": state.time,
    }


def _state_from_json(data: Mapping) -> WorldState:
    return WorldState(
        positions=tuple(int(p) for p in data["pos"]),
        statuses=tuple(CHAR_STATUS[c] for c in data["status"]),
        help_beacon=None if data["beacon"] is None else int(data["beacon"]),
        time=int(data["t"]),
    )


def _joint_to_json(joint) -> list[str]:
    return [a.name for a in joint]


def _joint_from_json(names: Sequence[str]) -> tuple[AgentAction, ...]:
    return tuple(AgentAction[n] for n in names)


def _model_to_json(model: MentalModel) -> dict:
    return {
        "name": model.profile.name,
        "catalog": list(model.profile.catalog),
        "weights": list(model.profile.weights),
        "rationality": model.rationality,
        "horizon": model.horizon,
    }


def _model_from_json(data: Mapping) -> MentalModel:
    profile = RewardProfile(
        data["name"], tuple(data["catalog"]), tuple(float(w) for w in data["weights"])
    )
    return MentalModel(profile, float(data["rationality"]), int(data["horizon"]))


def _seed_path_from_json(parts: Iterable) -> tuple:
    return tuple(p if isinstance(p, str) else int(p) for p in parts)


# ----------------------------------------------------------------------
# line-oriented reading

def _read_records(path: Path, expected_schema: str) -> list[dict]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            if not isinstance(rec, dict):
                raise RecordError(f"{path}: line {lineno}: expected an object")
            rec["_line"] = lineno
            records.append(rec)
    if not records:
        raise SchemaError(f"{path}: empty file, expected a schema header")
    schema = records[0].get("schema")
    if schema != expected_schema:
        raise SchemaError(
            f"{path}: schema {schema!r} not supported, expected {expected_schema!r}"
        )
    return records


def _field(rec: Mapping, key: str, path: Path):
    try:
        return rec[key]
    except KeyError:
        raise RecordError(
            f"{path}: line {rec['_line']}: missing field {key!r}"
        ) from None


# ----------------------------------------------------------------------
# demonstration files

def write_trajectories(
    path, env_config: EnvConfig, trajectories: Sequence[Trajectory]
) -> None:
    """One header record, then per trajectory a metadata record followed by
    one record per step."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": TRAJECTORY_SCHEMA, "env": env_config.as_dict()}) + "\n")
        for t, traj in enumerate(trajectories):
            fh.write(
                json.dumps(
                    {
                        "trajectory": t,
                        "hidden": [int(v) for v in traj.hidden.present],
                        "seed_path": list(traj.seed_path),
                    }
                )
                + "\n"
            )
            for j, (state, joint) in enumerate(traj.steps):
                fh.write(
                    json.dumps(
                        {
                            "trajectory": t,
                            "step": j,
                            "state": _state_to_json(state),
                            "joint": _joint_to_json(joint),
                        }
                    )
                    + "\n"
                )


def read_trajectories(path) -> tuple[EnvConfig, list[Trajectory]]:
    path = Path(path)
    records = _read_records(path, TRAJECTORY_SCHEMA)
    env_config = EnvConfig.from_dict(_field(records[0], "env", path))
    metas: dict[int, dict] = {}
    steps: dict[int, list] = {}
    for rec in records[1:]:
        t = int(_field(rec, "trajectory", path))
        if "step" in rec:
            state = _state_from_json(_field(rec, "state", path))
            joint = _joint_from_json(_field(rec, "joint", path))
            steps.setdefault(t, []).append((int(rec["step"]), state, joint))
        else:
            metas[t] = rec
    out = []
    for t in sorted(metas):
        meta = metas[t]
        ordered = sorted(steps.get(t, []), key=lambda x: x[0])
        out.append(
            Trajectory(
                steps=tuple((s, j) for _, s, j in ordered),
                hidden=HiddenConfig(tuple(bool(v) for v in _field(meta, "hidden", path))),
                seed_path=_seed_path_from_json(_field(meta, "seed_path", path)),
            )
        )
    return env_config, out


# ----------------------------------------------------------------------
# augmented (belief-annotated) files

def write_augmented(
    path, env_config: EnvConfig, augmented: Sequence[AugmentedTrajectory]
) -> None:
    """Belief supports are declared once in the header; step records carry
    the model names alongside each probability vector."""
    path = Path(path)
    if not augmented:
        raise ValueError("nothing to write: no augmented trajectories")
    observer = augmented[0].observer
    support_decl: dict[str, list] = {}
    if augmented[0].steps:
        for tm, belief in augmented[0].steps[0].beliefs.items():
            support_decl[tm] = [_model_to_json(m) for m in belief.support]
    with path.open("w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {
                    "schema": AUGMENTED_SCHEMA,
                    "env": env_config.as_dict(),
                    "observer": observer,
                    "support": support_decl,
                }
            )
            + "\n"
        )
        for t, aug in enumerate(augmented):
            if aug.observer != observer:
                raise ValueError(
                    f"trajectory {t} observed by {aug.observer!r}, header says {observer!r}"
                )
            fh.write(
                json.dumps(
                    {
                        "trajectory": t,
                        "hidden": [int(v) for v in aug.hidden.present],
                        "seed_path": list(aug.seed_path),
                    }
                )
                + "\n"
            )
            for j, step in enumerate(aug.steps):
                beliefs = {
                    tm: {
                        "models": [m.name for m in belief.support],
                        "p": list(belief.probabilities),
                    }
                    for tm, belief in step.beliefs.items()
                }
                fh.write(
                    json.dumps(
                        {
                            "trajectory": t,
                            "step": j,
                            "state": _state_to_json(step.state),
                            "joint": _joint_to_json(step.joint),
                            "beliefs": beliefs,
                        }
                    )
                    + "\n"
                )


def read_augmented(path) -> tuple[EnvConfig, str, list[AugmentedTrajectory]]:
    path = Path(path)
    records = _read_records(path, AUGMENTED_SCHEMA)
    header = records[0]
    env_config = EnvConfig.from_dict(_field(header, "env", path))
    observer = _field(header, "observer", path)
    support = {
        tm: {d["name"]: _model_from_json(d) for d in decl}
        for tm, decl in _field(header, "support", path).items()
    }
    metas: dict[int, dict] = {}
    steps: dict[int, list] = {}
    for rec in records[1:]:
        t = int(_field(rec, "trajectory", path))
        if "step" in rec:
            state = _state_from_json(_field(rec, "state", path))
            joint = _joint_from_json(_field(rec, "joint", path))
            beliefs = {}
            for tm, b in _field(rec, "beliefs", path).items():
                try:
                    models = tuple(support[tm][name] for name in b["models"])
                except KeyError as exc:
                    raise RecordError(
                        f"{path}: line {rec['_line']}: belief references "
                        f"undeclared model or teammate {exc}"
                    ) from None
                beliefs[tm] = ModelBelief(models, tuple(float(p) for p in b["p"]))
            steps.setdefault(t, []).append(
                (int(rec["step"]), AugmentedStep(state, joint, beliefs))
            )
        else:
            metas[t] = rec
    out = []
    for t in sorted(metas):
        meta = metas[t]
        ordered = sorted(steps.get(t, []), key=lambda x: x[0])
        out.append(
            AugmentedTrajectory(
                steps=tuple(s for _, s in ordered),
                hidden=HiddenConfig(tuple(bool(v) for v in _field(meta, "hidden", path))),
                observer=observer,
                seed_path=_seed_path_from_json(_field(meta, "seed_path", path)),
            )
        )
    return env_config, observer, out


# ----------------------------------------------------------------------
# CSV artifacts

def belief_curve_rows(
    augmented: Sequence[AugmentedTrajectory], teammate: str
) -> list[tuple[int, str, float, float]]:
    """(timestep, model, mean probability, std) aggregated over trajectories.

    The standard deviation is the population one (ddof 0), matching how the
    curves summarize a fixed set of demonstrations rather than a sample.
    """
    if not augmented:
        raise ValueError("no augmented trajectories")
    horizon = max(len(aug.steps) for aug in augmented)
    model_names: Optional[list[str]] = None
    rows = []
    for j in range(horizon):
        per_model: dict[str, list[float]] = {}
        for aug in augmented:
            if j >= len(aug.steps):
                continue
            belief = aug.steps[j].beliefs[teammate]
            if model_names is None:
                model_names = [m.name for m in belief.support]
            for m, p in zip(belief.support, belief.probabilities):
                per_model.setdefault(m.name, []).append(p)
        for name in model_names or []:
            vals = np.asarray(per_model[name])
            rows.append((j, name, float(vals.mean()), float(vals.std())))
    return rows


def write_belief_curve_csv(path, augmented: Sequence[AugmentedTrajectory], teammate: str) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep", "model", "mean", "std"])
        for row in belief_curve_rows(augmented, teammate):
            writer.writerow(row)


def write_trace_csv(path, trace: IrlTrace) -> None:
    """Long-format learning curve: one row per epoch and feature, plus the
    convergence diagnostics repeated per row."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "feature", "weight", "gradient_norm", "lr", "delta_inf", "delta_over_lr"]
        )
        for rec in trace.records:
            for name, w in zip(trace.features, rec.theta):
                writer.writerow(
                    [rec.epoch, name, w, rec.gradient_norm, rec.lr, rec.delta_inf, rec.delta_over_lr]
                )


def write_similarity_csv(path, reports: Mapping[str, SimilarityReport]) -> None:
    """Feature rows then metric rows, one column per named report. All
    reports must share one feature catalog (i.e. describe the same role);
    the demonstration counts get a single leading column when every report
    was measured against the same demos, otherwise one per report."""
    if not reports:
        raise ValueError("no reports to write")
    catalogs = {r.learned_counts.features for r in reports.values()}
    if len(catalogs) != 1:
        raise ValueError("reports mix feature catalogs; write one file per role")
    features = next(iter(catalogs))
    names = list(reports)
    demos = [reports[n].demo_counts for n in names]
    shared_demo = all(d == demos[0] for d in demos)

    columns: list[tuple[str, dict]] = []
    if shared_demo:
        columns.append(("demo", {f: v for f, v in zip(features, demos[0].values)}))
    for n in names:
        rep = reports[n]
        cells = dict(zip(features, rep.learned_counts.values))
        cells["fc_diff"] = rep.fc_diff
        if rep.pi_div is not None:
            cells["pi_div"] = rep.pi_div
        columns.append((n, cells))
        if not shared_demo:
            columns.append((f"{n}_demo", dict(zip(features, rep.demo_counts.values))))

    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + [label for label, _ in columns])
        for f in features:
            writer.writerow([f] + [cells.get(f, "") for _, cells in columns])
        for metric in ("fc_diff", "pi_div"):
            writer.writerow([metric] + [cells.get(metric, "") for _, cells in columns])
