"""Finite-horizon soft-max planning with one level of teammate modeling.

An agent plans its own action by expecting teammates to act according to a
mixture of mental models (a belief). Each mental model is itself evaluated by
planning at recursion depth zero, where everyone else is treated as uniformly
random over their legal actions. Within a planning call the belief is held
fixed; callers refresh it between environment steps.

The action value at horizon h is

    Q_h(s, a) = E[ r(s, joint) + gamma * V_{h-1}(s') ]

with the expectation over predicted teammate actions and over a uniform
victim-presence belief for any cell the joint action would reveal. The state
value is the soft-max-weighted expectation of the agent's own next-step
policy, V_h(s) = sum_a pi(a|s) Q_h(s, a) with pi proportional to
exp(rationality * Q_h). Horizon zero is the expected immediate reward.

A PlanningContext memoizes the state graph (legal actions, feature rows,
transition outcomes) and all depth-zero model policies, so repeated planning
over the same scenario is cheap. States differing only in elapsed time share
cache entries. Two properties keep deep teammate-modeled planning tractable:
teammate predictions influence a horizon-zero value only through the joint
evacuation correction, so leaf states skip model evaluation almost always;
and those leaf values are then independent of the belief, so they are shared
across planning calls that differ only in beliefs (as successive steps of a
training rollout do).
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .profiles import RewardProfile
from .sar_env import (
    AgentAction,
    CatalogMismatchError,
    IllegalActionError,
    SearchRescueEnv,
    WorldState,
)

__all__ = [
    "InvalidBeliefError",
    "PlannerConfig",
    "MentalModel",
    "ModelBelief",
    "PolicyDistribution",
    "PlanningContext",
    "q_values",
    "softmax_policy",
    "best_response_policy",
    "predict_teammate",
    "model_action_log_prob",
    "sample_action",
    "softmax",
    "DEFAULT_HORIZON",
    "DEFAULT_DISCOUNT",
    "DEFAULT_RATIONALITY",
]

DEFAULT_HORIZON = 2
DEFAULT_DISCOUNT = 0.9
DEFAULT_RATIONALITY = 1.0


class InvalidBeliefError(ValueError):
    """Raised for empty, unnormalized or otherwise malformed beliefs."""


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = DEFAULT_HORIZON
    discount: float = DEFAULT_DISCOUNT
    rationality: float = DEFAULT_RATIONALITY

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.rationality < 0.0:
            raise ValueError(f"rationality must be non-negative, got {self.rationality}")


@dataclass(frozen=True)
class MentalModel:
    """Hypothesis about how an agent behaves: a reward profile plus the
    soft-max rationality and lookahead it is assumed to plan with."""

    profile: RewardProfile
    rationality: float = DEFAULT_RATIONALITY
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self) -> None:
        if self.rationality < 0.0:
            raise ValueError("rationality must be non-negative")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")

    @property
    def name(self) -> str:
        return self.profile.name


@dataclass(frozen=True)
class ModelBelief:
    """Probability distribution over mental models; support never changes."""

    support: tuple[MentalModel, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise InvalidBeliefError("belief support must not be empty")
        if len(self.support) != len(self.probabilities):
            raise InvalidBeliefError(
                f"{len(self.probabilities)} probabilities for {len(self.support)} models"
            )
        if any(p < 0.0 for p in self.probabilities):
            raise InvalidBeliefError(f"negative belief mass: {self.probabilities}")
        total = sum(self.probabilities)
        if abs(total - 1.0) > 1e-9:
            raise InvalidBeliefError(f"belief mass sums to {total!r}, expected 1")

    @classmethod
    def point_mass(cls, model: MentalModel) -> "ModelBelief":
        return cls((model,), (1.0,))

    @classmethod
    def uniform(cls, models: Sequence[MentalModel]) -> "ModelBelief":
        n = len(models)
        if n == 0:
            raise InvalidBeliefError("belief support must not be empty")
        return cls(tuple(models), (1.0 / n,) * n)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    def prob_of(self, model_name: str) -> float:
        for m, p in zip(self.support, self.probabilities):
            if m.name == model_name:
                return p
        raise KeyError(model_name)

    def as_mapping(self) -> dict[str, float]:
        return {m.name: p for m, p in zip(self.support, self.probabilities)}


@dataclass(frozen=True, eq=False)
class PolicyDistribution:
    """Distribution over exactly the legal actions of one agent in one state."""

    actions: tuple[AgentAction, ...]
    probabilities: np.ndarray

    def prob_of(self, action: AgentAction) -> float:
        try:
            return float(self.probabilities[self.actions.index(action)])
        except ValueError:
            raise KeyError(f"action {action.name} not in policy support") from None

    def as_mapping(self) -> dict[AgentAction, float]:
        return {a: float(p) for a, p in zip(self.actions, self.probabilities)}


def softmax(values: np.ndarray, rationality: float) -> np.ndarray:
    """Numerically stable soft-max, invariant to shifting the inputs."""
    logits = rationality * np.asarray(values, dtype=float)
    logits = logits - logits.max()
    out = np.exp(logits)
    out /= out.sum()
    return out


def _log_softmax(values: np.ndarray, rationality: float) -> np.ndarray:
    logits = rationality * np.asarray(values, dtype=float)
    logits = logits - logits.max()
    return logits - np.log(np.exp(logits).sum())


def sample_action(policy: PolicyDistribution, rng: np.random.Generator) -> AgentAction:
    """Draw one action; consumes exactly one uniform variate."""
    cum = np.cumsum(policy.probabilities)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return policy.actions[min(idx, len(policy.actions) - 1)]


class _Node:
    """Cached per-state planning data, keyed without the time field."""

    __slots__ = ("state", "key", "legal", "feats", "evac_ind", "evac_idx", "evac_any", "coloc", "trans")

    def __init__(self, env: SearchRescueEnv, state: WorldState, key, legal_at, n_agents):
        self.state = state
        self.key = key
        pos = state.positions
        self.legal = tuple(legal_at[(i, pos[i])] for i in range(n_agents))
        self.feats: list[Optional[np.ndarray]] = [None] * n_agents
        self.evac_ind: list[Optional[np.ndarray]] = [None] * n_agents
        self.evac_idx: list[Optional[int]] = [None] * n_agents
        self.evac_any: list[bool] = [False] * n_agents
        self.coloc = tuple(
            tuple(j for j in range(n_agents) if j != i and pos[j] == pos[i])
            for i in range(n_agents)
        )
        self.trans: dict = {}


def _state_key(state: WorldState):
    return (state.positions, state.statuses, state.help_beacon)


# Safety valves: caches that grow with the visited state universe are wiped
# when they exceed these sizes (a rare, self-healing event), not LRU-tracked,
# to keep the hot paths free of bookkeeping. A training epoch on the default
# team expands a few hundred thousand nodes, so the node ceiling must sit
# well above that or every epoch re-pays the full expansion cost.
_NODE_LIMIT = 1_000_000
_MODEL_POLICY_LIMIT = 1 << 19
_MODEL_VALUE_LIMIT = 1 << 21
_MIXTURE_LIMIT = 1 << 18


class PlanningContext:
    """Shared memoization for one environment instance.

    Cached values are pure functions of the state and the planning inputs, so
    sharing a context across stages, conditions and training epochs is safe
    and bit-stable. Memory grows with the visited state universe; call
    clear_caches between unrelated workloads to release it.
    """

    def __init__(
        self,
        env: SearchRescueEnv,
        plan_cache_size: int = 256,
        node_limit: int = _NODE_LIMIT,
    ):
        self.env = env
        self._n_agents = len(env.roster)
        self._legal_at = {
            (i, pos): env.legal_actions_at(spec.role, pos)
            for i, spec in enumerate(env.roster)
            for pos in range(env.grid.n)
        }
        self._nodes: dict = {}
        self._model_policies: dict = {}
        self._model_values: dict = {}
        self._mixtures: dict = {}
        self._plan_memos: "OrderedDict[tuple, dict]" = OrderedDict()
        self._h0_memos: "OrderedDict[tuple, dict]" = OrderedDict()
        self._plan_cache_size = plan_cache_size
        self._node_limit = node_limit

    def clear_caches(self) -> None:
        self._nodes.clear()
        self._model_policies.clear()
        self._model_values.clear()
        self._mixtures.clear()
        self._plan_memos.clear()
        self._h0_memos.clear()

    def _maybe_flush(self) -> None:
        # Long workloads can visit more distinct states than memory allows;
        # wiping everything at a call boundary is always safe and re-warms
        # from the states the workload actually revisits.
        if len(self._nodes) > self._node_limit:
            self.clear_caches()

    # ------------------------------------------------------------------

    def _node(self, state: WorldState) -> _Node:
        key = _state_key(state)
        node = self._nodes.get(key)
        if node is None:
            canonical = (
                state
                if state.time == 0
                else WorldState(state.positions, state.statuses, state.help_beacon, 0)
            )
            node = _Node(self.env, canonical, key, self._legal_at, self._n_agents)
            self._nodes[key] = node
        return node

    def _feats(self, node: _Node, i: int) -> np.ndarray:
        F = node.feats[i]
        if F is None:
            env = self.env
            name = env.roster.names[i]
            F = env.feature_matrix(node.state, name, node.legal[i])
            node.feats[i] = F
            catalog = env.feature_names(name)
            if "evacuate" in catalog:
                idx = catalog.index("evacuate")
                node.evac_idx[i] = idx
                node.evac_ind[i] = F[:, idx].copy()
                node.evac_any[i] = bool(node.evac_ind[i].any())
            else:
                node.evac_idx[i] = None
                node.evac_ind[i] = np.zeros(len(node.legal[i]))
                node.evac_any[i] = False
        return F

    def _trans(self, node: _Node, joint) -> tuple:
        out = node.trans.get(joint)
        if out is None:
            # joints are assembled from the node's own legal sets
            outcomes = self.env.step_outcomes(node.state, joint, check=False)
            entries = []
            for p, child in outcomes:
                child_node = self._node(child)
                entries.append((p, child_node.key))
            out = tuple(entries)
            node.trans[joint] = out
        return out

    # ------------------------------------------------------------------
    # immediate rewards

    def _h0_needs_beliefs(self, node: _Node, i: int, theta: np.ndarray) -> bool:
        """Whether the expected immediate reward depends on teammate behavior:
        only through the joint evacuation correction, which requires a live
        evacuate weight, an own evacuate opportunity and co-located others."""
        self._feats(node, i)
        idx = node.evac_idx[i]
        return (
            idx is not None
            and theta[idx] != 0.0
            and node.evac_any[i]
            and bool(node.coloc[i])
        )

    def _q0(self, node: _Node, i: int, theta: np.ndarray, beliefs, config) -> np.ndarray:
        """Expected immediate reward per own legal action. Teammate action
        distributions are computed only for co-located teammates and only
        when the evacuation correction is live."""
        F = self._feats(node, i)
        q = F @ theta
        idx = node.evac_idx[i]
        if idx is None or theta[idx] == 0.0 or not node.evac_any[i]:
            return q
        env = self.env
        name = env.roster.names[i]
        evac_probs: dict[int, float] = {}
        for j in node.coloc[i]:
            try:
                aj = node.legal[j].index(AgentAction.EVACUATE)
            except ValueError:
                continue
            if beliefs is None:
                evac_probs[j] = 1.0 / len(node.legal[j])
            else:
                belief = beliefs.get(env.roster.names[j])
                if belief is None:
                    raise InvalidBeliefError(
                        f"no belief supplied for teammate {env.roster.names[j]!r}"
                    )
                evac_probs[j] = float(self._mixture(node, j, belief, config)[aj])
        p_success = env.evac_success_probability(node.state, name, evac_probs)
        return q + theta[idx] * (p_success - 1.0) * node.evac_ind[i]

    def _expected_reward(
        self, node: _Node, i: int, theta: np.ndarray, tm_dists: list
    ) -> np.ndarray:
        """Like _q0, but reusing already-computed teammate distributions."""
        F = self._feats(node, i)
        r = F @ theta
        evac_idx = node.evac_idx[i]
        if evac_idx is not None and theta[evac_idx] != 0.0 and node.evac_any[i]:
            evac_probs: dict[int, float] = {}
            for j, probs in tm_dists:
                try:
                    aj = node.legal[j].index(AgentAction.EVACUATE)
                except ValueError:
                    continue
                evac_probs[j] = float(probs[aj])
            name = self.env.roster.names[i]
            p_success = self.env.evac_success_probability(node.state, name, evac_probs)
            r = r + theta[evac_idx] * (p_success - 1.0) * node.evac_ind[i]
        return r

    # ------------------------------------------------------------------
    # teammate prediction

    def _tm_dists(self, node: _Node, i: int, beliefs, config) -> list:
        """Per-teammate action distributions at this node: belief mixtures at
        depth one, uniform at depth zero (beliefs is None)."""
        out = []
        names = self.env.roster.names
        for j in range(len(names)):
            if j == i:
                continue
            if beliefs is None:
                k = len(node.legal[j])
                out.append((j, np.full(k, 1.0 / k)))
            else:
                belief = beliefs.get(names[j])
                if belief is None:
                    raise InvalidBeliefError(f"no belief supplied for teammate {names[j]!r}")
                out.append((j, self._mixture(node, j, belief, config)))
        return out

    def _mixture(self, node: _Node, j: int, belief: ModelBelief, config) -> np.ndarray:
        discount = config.discount if config is not None else DEFAULT_DISCOUNT
        mkey = (node.key, j, belief.support, belief.probabilities, discount)
        mix = self._mixtures.get(mkey)
        if mix is None:
            mix = np.zeros(len(node.legal[j]))
            for model, p in zip(belief.support, belief.probabilities):
                if p > 0.0:
                    probs, _ = self._model_policy(node, j, model, discount)
                    mix = mix + p * probs
            mix = mix / mix.sum()
            if len(self._mixtures) > _MIXTURE_LIMIT:
                self._mixtures.clear()
            self._mixtures[mkey] = mix
        return mix

    def _model_policy(self, node: _Node, j: int, model: MentalModel, discount: float):
        """Depth-zero soft-max policy of a mental model; cached permanently."""
        pkey = (node.key, j, model, discount)
        hit = self._model_policies.get(pkey)
        if hit is None:
            name = self.env.roster.names[j]
            catalog = self.env.feature_names(name)
            if tuple(model.profile.catalog) != catalog:
                raise CatalogMismatchError(
                    f"model {model.name!r} catalog does not match agent {name!r}"
                )
            theta = model.profile.as_array()
            token = (j, model, discount)
            q = self._q_array(
                node, j, theta, model.horizon, model.rationality, discount,
                None, None, self._model_values, token, None,
            )
            logp = _log_softmax(q, model.rationality)
            probs = np.exp(logp)
            probs = probs / probs.sum()
            hit = (probs, logp)
            if len(self._model_policies) > _MODEL_POLICY_LIMIT:
                self._model_policies.clear()
            self._model_policies[pkey] = hit
        return hit

    # ------------------------------------------------------------------
    # core recursion

    def _q_array(
        self,
        node: _Node,
        i: int,
        theta: np.ndarray,
        h: int,
        rationality: float,
        discount: float,
        beliefs,
        config: Optional[PlannerConfig],
        memo: dict,
        token,
        h0_memo: Optional[dict],
    ) -> np.ndarray:
        if h == 0:
            return self._q0(node, i, theta, beliefs, config)
        tm_dists = self._tm_dists(node, i, beliefs, config)
        q = self._expected_reward(node, i, theta, tm_dists).copy()
        legal_i = node.legal[i]
        n_agents = len(self.env.roster)
        for ai, a in enumerate(legal_i):
            acc = 0.0
            if len(tm_dists) == 1:
                j, probs = tm_dists[0]
                for tj, p_t in enumerate(probs):
                    if p_t == 0.0:
                        continue
                    joint = [None] * n_agents
                    joint[i] = a
                    joint[j] = node.legal[j][tj]
                    for p_o, child_key in self._trans(node, tuple(joint)):
                        acc += p_t * p_o * self._soft_value(
                            child_key, i, theta, h - 1, rationality, discount,
                            beliefs, config, memo, token, h0_memo,
                        )
            elif not tm_dists:
                for p_o, child_key in self._trans(node, (a,)):
                    acc += p_o * self._soft_value(
                        child_key, i, theta, h - 1, rationality, discount,
                        beliefs, config, memo, token, h0_memo,
                    )
            else:
                choices = [
                    [(node.legal[j][tj], p) for tj, p in enumerate(probs) if p > 0.0]
                    for j, probs in tm_dists
                ]
                others = [j for j, _ in tm_dists]
                for combo in itertools.product(*choices):
                    p_t = 1.0
                    joint = [None] * n_agents
                    joint[i] = a
                    for (act, p), j in zip(combo, others):
                        p_t *= p
                        joint[j] = act
                    for p_o, child_key in self._trans(node, tuple(joint)):
                        acc += p_t * p_o * self._soft_value(
                            child_key, i, theta, h - 1, rationality, discount,
                            beliefs, config, memo, token, h0_memo,
                        )
            q[ai] += discount * acc
        return q

    def _soft_value(
        self, key, i, theta, h, rationality, discount, beliefs, config, memo, token, h0_memo
    ) -> float:
        if h == 0 and h0_memo is not None:
            # Leaf values are belief-independent for almost every state, so
            # planning calls that share theta share them via h0_memo. States
            # where the evacuation correction makes the leaf belief-dependent
            # never enter h0_memo and fall through to the per-call memo.
            v = h0_memo.get(key)
            if v is not None:
                return v
            node = self._nodes[key]
            if not self._h0_needs_beliefs(node, i, theta):
                q = self._q0(node, i, theta, None, None)
                pi = softmax(q, rationality)
                v = float(pi @ q)
                h0_memo[key] = v
                return v
        else:
            node = self._nodes[key]
        vkey = (key, h, token) if token is not None else (key, h)
        v = memo.get(vkey)
        if v is None:
            if h == 0:
                q = self._q0(node, i, theta, beliefs, config)
            else:
                q = self._q_array(
                    node, i, theta, h, rationality, discount, beliefs, config,
                    memo, token, h0_memo,
                )
            pi = softmax(q, rationality)
            v = float(pi @ q)
            if memo is self._model_values and len(memo) > _MODEL_VALUE_LIMIT:
                memo.clear()
            memo[vkey] = v
        return v

    # ------------------------------------------------------------------
    # per-call memo handles

    def _plan_memo(self, token) -> dict:
        memo = self._plan_memos.get(token)
        if memo is None:
            memo = {}
            self._plan_memos[token] = memo
            if len(self._plan_memos) > self._plan_cache_size:
                self._plan_memos.popitem(last=False)
        else:
            self._plan_memos.move_to_end(token)
        return memo

    def _h0_memo(self, i: int, theta: np.ndarray, rationality: float) -> dict:
        token = (i, theta.tobytes(), rationality)
        memo = self._h0_memos.get(token)
        if memo is None:
            memo = {}
            self._h0_memos[token] = memo
            if len(self._h0_memos) > 16:
                self._h0_memos.popitem(last=False)
        else:
            self._h0_memos.move_to_end(token)
        return memo


def _beliefs_token(beliefs) -> tuple:
    if beliefs is None:
        return ()
    return tuple(
        (name, b.support, b.probabilities) for name, b in sorted(beliefs.items())
    )


def _check_profile(ctx: PlanningContext, agent: str, profile: RewardProfile) -> None:
    catalog = ctx.env.feature_names(agent)
    if tuple(profile.catalog) != catalog:
        raise CatalogMismatchError(
            f"profile {profile.name!r} has catalog {profile.catalog}, "
            f"agent {agent!r} expects {catalog}"
        )


def q_values(
    ctx: PlanningContext,
    state: WorldState,
    agent: str,
    profile: RewardProfile,
    config: PlannerConfig,
    beliefs: Optional[Mapping[str, ModelBelief]] = None,
) -> dict[AgentAction, float]:
    """Action values for one agent planning against modeled teammates.

    ``beliefs`` maps each teammate name to a ModelBelief; None treats all
    teammates as uniformly random (the depth-zero convention).
    """
    _check_profile(ctx, agent, profile)
    ctx._maybe_flush()
    node = ctx._node(state)
    i = ctx.env.roster.index(agent)
    theta = profile.as_array()
    token = (i, profile.weights, config, _beliefs_token(beliefs))
    memo = ctx._plan_memo(token)
    h0_memo = ctx._h0_memo(i, theta, config.rationality)
    q = ctx._q_array(
        node, i, theta, config.horizon, config.rationality, config.discount,
        beliefs, config, memo, None, h0_memo,
    )
    return {a: float(v) for a, v in zip(node.legal[i], q)}


def best_response_policy(
    ctx: PlanningContext,
    state: WorldState,
    agent: str,
    profile: RewardProfile,
    config: PlannerConfig,
    beliefs: Optional[Mapping[str, ModelBelief]] = None,
) -> PolicyDistribution:
    """Soft-max policy over the agent's q_values against its teammate beliefs."""
    qd = q_values(ctx, state, agent, profile, config, beliefs)
    actions = tuple(qd)
    probs = softmax(np.fromiter(qd.values(), dtype=float), config.rationality)
    return PolicyDistribution(actions, probs)


def softmax_policy(
    ctx: PlanningContext,
    state: WorldState,
    agent: str,
    model: MentalModel | RewardProfile,
    config: Optional[PlannerConfig] = None,
) -> PolicyDistribution:
    """Depth-zero policy of a mental model: the modeled agent plans with its
    own rationality and horizon, treating every teammate as uniformly random.

    A bare RewardProfile is promoted to a MentalModel using ``config``.
    """
    if isinstance(model, RewardProfile):
        if config is None:
            raise ValueError("a PlannerConfig is required when passing a bare profile")
        model = MentalModel(model, config.rationality, config.horizon)
    discount = config.discount if config is not None else DEFAULT_DISCOUNT
    ctx._maybe_flush()
    node = ctx._node(state)
    j = ctx.env.roster.index(agent)
    probs, _ = ctx._model_policy(node, j, model, discount)
    return PolicyDistribution(node.legal[j], probs.copy())


def model_action_log_prob(
    ctx: PlanningContext,
    state: WorldState,
    agent: str,
    model: MentalModel,
    action: AgentAction,
    config: Optional[PlannerConfig] = None,
) -> float:
    """Log probability the model assigns to an action; never -inf because the
    log-soft-max is evaluated directly from finite action values."""
    discount = config.discount if config is not None else DEFAULT_DISCOUNT
    ctx._maybe_flush()
    node = ctx._node(state)
    j = ctx.env.roster.index(agent)
    _, logp = ctx._model_policy(node, j, model, discount)
    try:
        idx = node.legal[j].index(action)
    except ValueError:
        raise IllegalActionError(
            f"action {action.name} is illegal for agent {agent!r} here"
        ) from None
    return float(logp[idx])


def predict_teammate(
    ctx: PlanningContext,
    state: WorldState,
    teammate: str,
    belief: ModelBelief,
    config: PlannerConfig,
) -> PolicyDistribution:
    """Belief-weighted mixture of the support models' depth-zero policies."""
    ctx._maybe_flush()
    node = ctx._node(state)
    j = ctx.env.roster.index(teammate)
    mix = ctx._mixture(node, j, belief, config)
    return PolicyDistribution(node.legal[j], mix.copy())
