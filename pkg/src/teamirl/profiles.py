"""Named reward-weight profiles over the role feature catalogs.

The ground-truth weights encode the intended team behavior. Derived variants
stress different hypotheses about a teammate: opposite (negated weights),
random (all zero, uniform behavior), task-only and social-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

from .sar_env import (
    CatalogMismatchError,
    ROLE_CATALOG,
    Role,
    SOCIAL_FEATURES,
    TASK_FEATURES,
)

__all__ = [
    "RewardProfile",
    "PROFILE_KINDS",
    "GROUND_TRUTH_WEIGHTS",
    "ground_truth",
    "profile_variant",
    "baseline_profiles",
    "zero_profile",
    "save_profiles",
    "load_profiles",
    "bundled_profiles",
]

PROFILE_SCHEMA = "sar-profiles/v1"

PROFILE_KINDS = ("gt", "op", "rd", "tk", "sc")

GROUND_TRUTH_WEIGHTS: dict[Role, dict[str, float]] = {
    Role.MEDIC: {
        "dist2vic": 0.06,
        "search": 0.06,
        "triage": 0.19,
        "evacuate": 0.63,
        "wait": 0.03,
        "call": 0.03,
    },
    Role.EXPLORER: {
        "dist2help": 0.25,
        "search": 0.25,
        "evacuate": 0.50,
    },
}


@dataclass(frozen=True)
class RewardProfile:
    """Immutable weight vector aligned with a feature catalog."""

    name: str
    catalog: tuple[str, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.catalog) != len(self.weights):
            raise CatalogMismatchError(
                f"profile {self.name!r}: {len(self.weights)} weights for "
                f"{len(self.catalog)} features"
            )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def weight(self, feature: str) -> float:
        try:
            return self.weights[self.catalog.index(feature)]
        except ValueError:
            raise CatalogMismatchError(
                f"profile {self.name!r} has no feature {feature!r}"
            ) from None

    def l1_norm(self) -> float:
        return float(np.abs(self.as_array()).sum())

    def with_weights(self, weights: Iterable[float], name: str | None = None) -> "RewardProfile":
        return replace(self, weights=tuple(float(w) for w in weights), name=name or self.name)


def ground_truth(role: Role) -> RewardProfile:
    catalog = ROLE_CATALOG[role]
    table = GROUND_TRUTH_WEIGHTS[role]
    return RewardProfile(f"gt_{role.value}", catalog, tuple(table[f] for f in catalog))


def profile_variant(role: Role, kind: str) -> RewardProfile:
    """One of the baseline profiles: gt, op (negated), rd (zero),
    tk (task features only) or sc (social features only)."""
    gt = ground_truth(role)
    name = f"{kind}_{role.value}"
    if kind == "gt":
        return gt
    if kind == "op":
        return RewardProfile(name, gt.catalog, tuple(-w for w in gt.weights))
    if kind == "rd":
        return RewardProfile(name, gt.catalog, (0.0,) * len(gt.catalog))
    if kind == "tk":
        keep = set(TASK_FEATURES[role])
    elif kind == "sc":
        keep = set(SOCIAL_FEATURES[role])
    else:
        raise ValueError(f"unknown profile kind {kind!r}, expected one of {PROFILE_KINDS}")
    weights = tuple(w if f in keep else 0.0 for f, w in zip(gt.catalog, gt.weights))
    return RewardProfile(name, gt.catalog, weights)


def baseline_profiles(role: Role, kinds: Iterable[str]) -> tuple[RewardProfile, ...]:
    return tuple(profile_variant(role, k) for k in kinds)


def zero_profile(catalog: tuple[str, ...], name: str = "zero") -> RewardProfile:
    return RewardProfile(name, catalog, (0.0,) * len(catalog))


# ----------------------------------------------------------------------
# file interface


def _profile_record(profile: RewardProfile) -> dict:
    return {
        "name": profile.name,
        "catalog": list(profile.catalog),
        "weights": list(profile.weights),
    }


def save_profiles(path, profiles: Iterable[RewardProfile]) -> None:
    payload = {
        "schema": PROFILE_SCHEMA,
        "profiles": [_profile_record(p) for p in profiles],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_profiles(payload: Mapping) -> dict[str, RewardProfile]:
    if payload.get("schema") != PROFILE_SCHEMA:
        raise ValueError(
            f"unsupported profile schema {payload.get('schema')!r}, expected {PROFILE_SCHEMA!r}"
        )
    out: dict[str, RewardProfile] = {}
    for rec in payload["profiles"]:
        profile = RewardProfile(
            rec["name"], tuple(rec["catalog"]), tuple(float(w) for w in rec["weights"])
        )
        out[profile.name] = profile
    return out


def load_profiles(path) -> dict[str, RewardProfile]:
    with open(path, encoding="utf-8") as fh:
        return _parse_profiles(json.load(fh))


def bundled_profiles() -> dict[str, RewardProfile]:
    """Profiles shipped with the package: all kinds for both roles."""
    text = resources.files("teamirl.data").joinpath("profiles.json").read_text("utf-8")
    return _parse_profiles(json.loads(text))
