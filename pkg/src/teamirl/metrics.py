"""Behavior-similarity metrics between learned and demonstrated policies.

Two complementary views: feature-count difference (how closely the learner's
rollout statistics match the demonstrations) and mean Jensen-Shannon
divergence of the per-step action distributions over the demonstration's
visited states (how closely the policies themselves agree, state by state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .inference import AugmentedTrajectory
from .irl import FeatureCounts
from .planner import PlannerConfig, PlanningContext, PolicyDistribution, best_response_policy
from .profiles import RewardProfile

__all__ = [
    "SimilarityReport",
    "fc_diff",
    "jsd",
    "policy_divergence",
]


def fc_diff(a: FeatureCounts, b: FeatureCounts) -> float:
    """L1 distance between two feature-count vectors over the same catalog."""
    if a.features != b.features:
        raise ValueError(f"catalog mismatch: {a.features} vs {b.features}")
    return float(np.abs(a.as_array() - b.as_array()).sum())


def _kl_bits(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def jsd(p: PolicyDistribution, q: PolicyDistribution) -> float:
    """Base-2 Jensen-Shannon divergence between two action distributions.

    Symmetric bitwise (the mixture and the two divergence terms are computed
    identically either way round) and bounded in [0, 1], hitting 1 exactly on
    disjoint point masses.
    """
    if p.actions != q.actions:
        raise ValueError(
            f"support mismatch: {[a.name for a in p.actions]} vs "
            f"{[a.name for a in q.actions]}"
        )
    pa = np.asarray(p.probabilities, dtype=float)
    qa = np.asarray(q.probabilities, dtype=float)
    m = 0.5 * (pa + qa)
    v = 0.5 * (_kl_bits(pa, m) + _kl_bits(qa, m))
    return min(max(v, 0.0), 1.0)


def policy_divergence(
    ctx: PlanningContext,
    theta_a: RewardProfile,
    theta_b: RewardProfile,
    augmented: Sequence[AugmentedTrajectory],
    agent: str,
    config: PlannerConfig,
) -> float:
    """Mean JSD between the two profiles' best-response policies at every
    visited state of every trajectory, with teammate behavior predicted from
    the beliefs stored at each step.

    The per-step divergences are summed with math.fsum, so the result does
    not depend on trajectory or step order.
    """
    if not augmented:
        raise ValueError("policy divergence needs at least one trajectory")
    values = []
    for aug in augmented:
        for step in aug.steps:
            pol_a = best_response_policy(ctx, step.state, agent, theta_a, config, step.beliefs)
            pol_b = best_response_policy(ctx, step.state, agent, theta_b, config, step.beliefs)
            values.append(jsd(pol_a, pol_b))
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class SimilarityReport:
    """Side-by-side feature counts plus the two similarity metrics for one
    agent. ``belief_source`` records which beliefs conditioned the learned
    policy when pi_div was measured."""

    agent: str
    learned_counts: FeatureCounts
    demo_counts: FeatureCounts
    fc_diff: float
    pi_div: Optional[float] = None
    belief_source: str = "augmented"

    def __post_init__(self) -> None:
        recomputed = fc_diff(self.learned_counts, self.demo_counts)
        if abs(recomputed - self.fc_diff) > 1e-9:
            raise ValueError(
                f"fc_diff {self.fc_diff} does not match the count table "
                f"({recomputed})"
            )
        if self.pi_div is not None and not 0.0 <= self.pi_div <= 1.0:
            raise ValueError(f"pi_div must lie in [0, 1], got {self.pi_div}")

    @classmethod
    def build(
        cls,
        agent: str,
        learned_counts: FeatureCounts,
        demo_counts: FeatureCounts,
        pi_div: Optional[float] = None,
        belief_source: str = "augmented",
    ) -> "SimilarityReport":
        return cls(
            agent,
            learned_counts,
            demo_counts,
            fc_diff(learned_counts, demo_counts),
            pi_div,
            belief_source,
        )

    def rows(self) -> list[tuple[str, float, float]]:
        """(feature, learned, demo) triples for tabular output."""
        demo = self.demo_counts.as_mapping()
        return [
            (name, learned, demo[name])
            for name, learned in zip(self.learned_counts.features, self.learned_counts.values)
        ]
