"""Search-and-rescue gridworld: team state, deterministic victim dynamics, reward features.

A small rectangular grid hides victims in some of its cells. Two cooperating
roles act simultaneously each step:

* the medic can move, wait, search, triage, evacuate and call for help;
* the explorer can move, search and evacuate, but cannot wait, triage or call.

Each cell carries a victim status that advances monotonically:

    UNKNOWN -> FOUND -> READY -> CLEAR      (victim present)
    UNKNOWN -> EMPTY                        (no victim)

Searching an UNKNOWN cell, or entering one, reveals it as FOUND or EMPTY
according to the hidden victim placement. Triage turns FOUND into READY.
Evacuation clears a READY cell only when enough agents stand on it and
evacuate at the same time (two for the standard team, see ``evac_quorum``).
CLEAR and EMPTY are absorbing. Calling plants a help beacon at the caller's
cell; the beacon persists until all agents are co-located or the beacon cell
resolves to CLEAR or EMPTY.

Per-agent reward features are role specific and every entry lies in [0, 1].
Distance features are closeness values 1 - d/d_max with Manhattan distance d
and grid diameter d_max. The evacuate feature scores successful joint
evacuations only; a lone evacuate on a READY cell moves nothing and earns
nothing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "InvalidConfigError",
    "UnknownAgentError",
    "IllegalActionError",
    "CatalogMismatchError",
    "VictimStatus",
    "AgentAction",
    "Role",
    "GridSpec",
    "AgentSpec",
    "Roster",
    "HiddenConfig",
    "WorldState",
    "JointAction",
    "SearchRescueEnv",
    "EnvConfig",
    "init_world",
    "MEDIC_CATALOG",
    "EXPLORER_CATALOG",
    "ROLE_CATALOG",
    "ROLE_ACTIONS",
    "TASK_FEATURES",
    "SOCIAL_FEATURES",
    "STATUS_CHARS",
]


class InvalidConfigError(ValueError):
    """Raised for structurally impossible scenario configurations."""


class UnknownAgentError(KeyError):
    """Raised when an agent name is not on the roster."""


class IllegalActionError(ValueError):
    """Raised when a joint action contains an illegal component."""


class CatalogMismatchError(ValueError):
    """Raised when reward weights do not align with an agent's feature catalog."""


class VictimStatus(enum.IntEnum):
    UNKNOWN = 0
    FOUND = 1
    READY = 2
    CLEAR = 3
    EMPTY = 4


STATUS_CHARS = {
    VictimStatus.UNKNOWN: "U",
    VictimStatus.FOUND: "F",
    VictimStatus.READY: "R",
    VictimStatus.CLEAR: "C",
    VictimStatus.EMPTY: "E",
}
CHAR_STATUS = {c: s for s, c in STATUS_CHARS.items()}


class AgentAction(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    WAIT = 4
    SEARCH = 5
    TRIAGE = 6
    EVACUATE = 7
    CALL = 8


MOVEMENT_ACTIONS = (
    AgentAction.UP,
    AgentAction.DOWN,
    AgentAction.LEFT,
    AgentAction.RIGHT,
)
_MOVE_SET = frozenset(MOVEMENT_ACTIONS)


class Role(str, enum.Enum):
    MEDIC = "medic"
    EXPLORER = "explorer"


ROLE_ACTIONS: dict[Role, tuple[AgentAction, ...]] = {
    Role.MEDIC: tuple(AgentAction),
    Role.EXPLORER: (
        AgentAction.UP,
        AgentAction.DOWN,
        AgentAction.LEFT,
        AgentAction.RIGHT,
        AgentAction.SEARCH,
        AgentAction.EVACUATE,
    ),
}

MEDIC_CATALOG = ("dist2vic", "search", "triage", "evacuate", "wait", "call")
EXPLORER_CATALOG = ("dist2help", "search", "evacuate")
ROLE_CATALOG: dict[Role, tuple[str, ...]] = {
    Role.MEDIC: MEDIC_CATALOG,
    Role.EXPLORER: EXPLORER_CATALOG,
}

# Task features drive the mission itself; social features coordinate with the
# teammate. The split matters for the task-only and social-only reward variants.
TASK_FEATURES: dict[Role, tuple[str, ...]] = {
    Role.MEDIC: ("dist2vic", "triage", "evacuate"),
    Role.EXPLORER: ("search",),
}
SOCIAL_FEATURES: dict[Role, tuple[str, ...]] = {
    Role.MEDIC: ("search", "wait", "call"),
    Role.EXPLORER: ("dist2help", "evacuate"),
}


@dataclass(frozen=True, slots=True)
class GridSpec:
    """Rectangular grid; locations are row-major indices."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidConfigError(f"grid {self.width}x{self.height} has empty side")
        if self.width * self.height < 2:
            raise InvalidConfigError("grid needs at least 2 locations")

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def max_distance(self) -> int:
        return self.width + self.height - 2

    def coords(self, loc: int) -> tuple[int, int]:
        return divmod(loc, self.width)

    def manhattan(self, a: int, b: int) -> int:
        ra, ca = divmod(a, self.width)
        rb, cb = divmod(b, self.width)
        return abs(ra - rb) + abs(ca - cb)

    def move(self, loc: int, action: AgentAction) -> Optional[int]:
        """Destination of a movement action, or None when it leaves the grid."""
        row, col = divmod(loc, self.width)
        if action == AgentAction.UP:
            row -= 1
        elif action == AgentAction.DOWN:
            row += 1
        elif action == AgentAction.LEFT:
            col -= 1
        elif action == AgentAction.RIGHT:
            col += 1
        else:
            return loc
        if 0 <= row < self.height and 0 <= col < self.width:
            return row * self.width + col
        return None


@dataclass(frozen=True, slots=True)
class AgentSpec:
    name: str
    role: Role
    start: int


@dataclass(frozen=True, slots=True)
class Roster:
    """Ordered team membership; order fixes joint-action layout."""

    agents: tuple[AgentSpec, ...]

    def __post_init__(self) -> None:
        if not self.agents:
            raise InvalidConfigError("roster must contain at least one agent")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise InvalidConfigError(f"duplicate agent names in roster: {names}")

    def __len__(self) -> int:
        return len(self.agents)

    def __iter__(self):
        return iter(self.agents)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.agents)

    def index(self, name: str) -> int:
        for i, a in enumerate(self.agents):
            if a.name == name:
                return i
        raise UnknownAgentError(name)

    def spec(self, name: str) -> AgentSpec:
        return self.agents[self.index(name)]


@dataclass(frozen=True, slots=True)
class HiddenConfig:
    """Immutable ground-truth victim placement, one flag per location."""

    present: tuple[bool, ...]

    @property
    def n_victims(self) -> int:
        return sum(self.present)


@dataclass(frozen=True, slots=True)
class WorldState:
    positions: tuple[int, ...]
    statuses: tuple[VictimStatus, ...]
    help_beacon: Optional[int]
    time: int


JointAction = tuple[AgentAction, ...]


def _tail_probability(probs: Sequence[float], k: int) -> float:
    """P(at least k of the independent events fire)."""
    if k <= 0:
        return 1.0
    if k > len(probs):
        return 0.0
    # dist[j] = P(exactly j fired so far)
    dist = [1.0] + [0.0] * len(probs)
    for p in probs:
        for j in range(len(dist) - 1, 0, -1):
            dist[j] = dist[j] * (1.0 - p) + dist[j - 1] * p
        dist[0] *= 1.0 - p
    return float(sum(dist[k:]))


@dataclass(frozen=True)
class SearchRescueEnv:
    """Binds a grid and a roster; all methods are pure."""

    grid: GridSpec
    roster: Roster

    def __post_init__(self) -> None:
        for a in self.roster:
            if not 0 <= a.start < self.grid.n:
                raise InvalidConfigError(
                    f"agent {a.name!r} starts at {a.start}, outside grid of size {self.grid.n}"
                )
        # movement destinations per (cell, action), precomputed: the planner
        # expands transitions for hundreds of thousands of states per epoch
        object.__setattr__(
            self,
            "_move_to",
            tuple(
                tuple(self.grid.move(pos, a) for a in AgentAction)
                for pos in range(self.grid.n)
            ),
        )

    @property
    def evac_quorum(self) -> int:
        """Agents that must evacuate a READY cell together to clear it."""
        return min(2, len(self.roster))

    def initial_state(self) -> WorldState:
        return WorldState(
            positions=tuple(a.start for a in self.roster),
            statuses=(VictimStatus.UNKNOWN,) * self.grid.n,
            help_beacon=None,
            time=0,
        )

    # ------------------------------------------------------------------
    # dynamics

    def legal_actions_at(self, role: Role, pos: int) -> tuple[AgentAction, ...]:
        """Role action set minus movements that would leave the grid.
        Legality depends only on the role and the cell, never on statuses."""
        return tuple(
            a
            for a in ROLE_ACTIONS[role]
            if a not in _MOVE_SET or self.grid.move(pos, a) is not None
        )

    def legal_actions(self, state: WorldState, agent: str) -> tuple[AgentAction, ...]:
        i = self.roster.index(agent)
        return self.legal_actions_at(self.roster.agents[i].role, state.positions[i])

    def _check_joint(self, state: WorldState, joint: JointAction) -> None:
        if len(joint) != len(self.roster):
            raise IllegalActionError(
                f"joint action has {len(joint)} entries for a roster of {len(self.roster)}"
            )
        for spec, action in zip(self.roster, joint):
            if action not in self.legal_actions(state, spec.name):
                raise IllegalActionError(
                    f"action {action.name} is illegal for agent {spec.name!r} at "
                    f"location {state.positions[self.roster.index(spec.name)]}"
                )

    def _revealed(self, state: WorldState, joint: JointAction) -> list[int]:
        """Cells whose status this step resolves from UNKNOWN: searched cells
        plus movement destinations."""
        out = set()
        statuses = state.statuses
        move_to = self._move_to
        for i, action in enumerate(joint):
            pos = state.positions[i]
            if action == AgentAction.SEARCH and statuses[pos] == VictimStatus.UNKNOWN:
                out.add(pos)
            elif action in _MOVE_SET:
                dst = move_to[pos][action]
                if dst is not None and statuses[dst] == VictimStatus.UNKNOWN:
                    out.add(dst)
        return sorted(out)

    def _resolve(
        self, state: WorldState, joint: JointAction, presence: Mapping[int, bool]
    ) -> WorldState:
        # All effects are evaluated against the pre-step state; the touched
        # status partitions (UNKNOWN / FOUND / READY) are disjoint, so the
        # application order below cannot conflict.
        old_pos = state.positions
        old_statuses = state.statuses
        move_to = self._move_to
        positions = list(old_pos)
        statuses = list(old_statuses)
        evacuators: Optional[dict[int, int]] = None
        beacon = state.help_beacon

        for i, action in enumerate(joint):
            pos = old_pos[i]
            if action in _MOVE_SET:
                dst = move_to[pos][action]
                assert dst is not None
                positions[i] = dst
            elif action == AgentAction.TRIAGE:
                if old_statuses[pos] == VictimStatus.FOUND:
                    statuses[pos] = VictimStatus.READY
            elif action == AgentAction.EVACUATE:
                if old_statuses[pos] == VictimStatus.READY:
                    if evacuators is None:
                        evacuators = {}
                    evacuators[pos] = evacuators.get(pos, 0) + 1
            elif action == AgentAction.CALL:
                beacon = pos

        for loc, has_victim in presence.items():
            statuses[loc] = VictimStatus.FOUND if has_victim else VictimStatus.EMPTY

        if evacuators is not None:
            for loc, count in evacuators.items():
                if count >= self.evac_quorum:
                    statuses[loc] = VictimStatus.CLEAR
        if beacon is not None:
            co_located = len(set(positions)) == 1
            if co_located or statuses[beacon] in (VictimStatus.CLEAR, VictimStatus.EMPTY):
                beacon = None

        return WorldState(
            positions=tuple(positions),
            statuses=tuple(statuses),
            help_beacon=beacon,
            time=state.time + 1,
        )

    def step(self, state: WorldState, hidden: HiddenConfig, joint: JointAction) -> WorldState:
        """Advance one step under the true victim placement."""
        if len(hidden.present) != self.grid.n:
            raise InvalidConfigError(
                f"hidden config covers {len(hidden.present)} cells, grid has {self.grid.n}"
            )
        self._check_joint(state, joint)
        presence = {loc: hidden.present[loc] for loc in self._revealed(state, joint)}
        return self._resolve(state, joint, presence)

    def step_outcomes(
        self, state: WorldState, joint: JointAction, *, check: bool = True
    ) -> tuple[tuple[float, WorldState], ...]:
        """All successor states under a uniform victim-presence belief.

        Each cell revealed this step independently holds a victim with
        probability one half; the returned probabilities sum to one. Callers
        that construct joints from legal_actions may pass check=False to skip
        the legality validation.
        """
        if check:
            self._check_joint(state, joint)
        revealed = self._revealed(state, joint)
        if not revealed:
            return ((1.0, self._resolve(state, joint, {})),)
        p = 0.5 ** len(revealed)
        outcomes = []
        for mask in range(1 << len(revealed)):
            presence = {loc: bool(mask >> b & 1) for b, loc in enumerate(revealed)}
            outcomes.append((p, self._resolve(state, joint, presence)))
        return tuple(outcomes)

    # ------------------------------------------------------------------
    # features and reward

    def feature_names(self, agent: str) -> tuple[str, ...]:
        return ROLE_CATALOG[self.roster.spec(agent).role]

    def co_located(self, state: WorldState, agent: str) -> tuple[int, ...]:
        """Roster indices of the other agents sharing this agent's cell."""
        i = self.roster.index(agent)
        pos = state.positions[i]
        return tuple(j for j, p in enumerate(state.positions) if j != i and p == pos)

    def feature_matrix(
        self, state: WorldState, agent: str, actions: Sequence[AgentAction]
    ) -> np.ndarray:
        """Stacked ``own_features`` rows, one per action. Distance terms are
        shared across rows, so this is the cheap way to feature a whole
        action set."""
        i = self.roster.index(agent)
        role = self.roster.agents[i].role
        pos = state.positions[i]
        statuses = state.statuses
        here = statuses[pos]
        d_max = self.grid.max_distance
        unknown_here = here == VictimStatus.UNKNOWN
        ready_here = here == VictimStatus.READY

        if role == Role.MEDIC:
            F = np.zeros((len(actions), 6))
            found = [l for l, s in enumerate(statuses) if s == VictimStatus.FOUND]
            if found:
                d = min(self.grid.manhattan(pos, l) for l in found)
                F[:, 0] = 1.0 - d / d_max
            found_here = here == VictimStatus.FOUND
            for r, action in enumerate(actions):
                if action == AgentAction.SEARCH:
                    F[r, 1] = 1.0 if unknown_here else 0.0
                elif action == AgentAction.TRIAGE:
                    F[r, 2] = 1.0 if found_here else 0.0
                elif action == AgentAction.EVACUATE:
                    F[r, 3] = 1.0 if ready_here else 0.0
                elif action == AgentAction.WAIT:
                    F[r, 4] = 1.0
                elif action == AgentAction.CALL:
                    F[r, 5] = 1.0 if ready_here else 0.0
            return F

        F = np.zeros((len(actions), 3))
        if state.help_beacon is not None:
            d = self.grid.manhattan(pos, state.help_beacon)
            F[:, 0] = 1.0 - d / d_max
        for r, action in enumerate(actions):
            if action == AgentAction.SEARCH:
                F[r, 1] = 1.0 if unknown_here else 0.0
            elif action == AgentAction.EVACUATE:
                F[r, 2] = 1.0 if ready_here else 0.0
        return F

    def own_features(self, state: WorldState, agent: str, action: AgentAction) -> np.ndarray:
        """Feature vector ignoring teammates: the evacuate entry is the bare
        own-action indicator (EVACUATE on a READY cell) without the joint
        success condition. ``feature_vector`` applies that condition."""
        return self.feature_matrix(state, agent, (action,))[0]

    def evac_success_probability(
        self, state: WorldState, agent: str, teammate_evac_probs: Mapping[int, float]
    ) -> float:
        """Chance that enough co-located teammates evacuate to meet the quorum,
        given each teammate's independent evacuation probability (keyed by
        roster index). The agent's own evacuate action is taken as given."""
        needed = self.evac_quorum - 1
        probs = [teammate_evac_probs.get(j, 0.0) for j in self.co_located(state, agent)]
        return _tail_probability(probs, needed)

    def feature_vector(self, state: WorldState, joint: JointAction, agent: str) -> np.ndarray:
        """Per-agent features of a joint action taken in a state."""
        i = self.roster.index(agent)
        fv = self.own_features(state, agent, joint[i])
        evac_idx = ROLE_CATALOG[self.roster.agents[i].role].index("evacuate")
        if fv[evac_idx]:
            pos = state.positions[i]
            count = sum(
                1
                for j, a in enumerate(joint)
                if a == AgentAction.EVACUATE and state.positions[j] == pos
            )
            if count < self.evac_quorum:
                fv[evac_idx] = 0.0
        return fv

    def reward(self, state: WorldState, joint: JointAction, agent: str, profile) -> float:
        """Linear reward: profile weights dotted with the feature vector."""
        catalog = self.feature_names(agent)
        if tuple(profile.catalog) != catalog:
            raise CatalogMismatchError(
                f"profile {profile.name!r} has catalog {profile.catalog}, "
                f"agent {agent!r} expects {catalog}"
            )
        fv = self.feature_vector(state, joint, agent)
        return float(np.dot(np.asarray(profile.weights), fv))


def init_world(
    env: SearchRescueEnv, n_victims: int, seed: int | np.random.Generator
) -> tuple[WorldState, HiddenConfig]:
    """Fresh episode start: victims placed uniformly without replacement,
    all statuses UNKNOWN, agents on their start cells, no beacon, time zero."""
    n = env.grid.n
    if not 0 <= n_victims <= n:
        raise InvalidConfigError(f"cannot place {n_victims} victims on {n} cells")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = set(int(l) for l in rng.choice(n, size=n_victims, replace=False))
    hidden = HiddenConfig(tuple(l in chosen for l in range(n)))
    return env.initial_state(), hidden


@dataclass(frozen=True)
class EnvConfig:
    """Declarative scenario description; round-trips losslessly through dicts."""

    width: int = 3
    height: int = 3
    n_victims: int = 3
    agents: tuple[AgentSpec, ...] = (
        AgentSpec("medic", Role.MEDIC, 0),
        AgentSpec("explorer", Role.EXPLORER, 8),
    )

    def build(self) -> SearchRescueEnv:
        env = SearchRescueEnv(GridSpec(self.width, self.height), Roster(self.agents))
        if not 0 <= self.n_victims <= env.grid.n:
            raise InvalidConfigError(
                f"cannot place {self.n_victims} victims on {env.grid.n} cells"
            )
        return env

    def as_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "n_victims": self.n_victims,
            "agents": [
                {"name": a.name, "role": a.role.value, "start": a.start} for a in self.agents
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EnvConfig":
        try:
            agents = tuple(
                AgentSpec(a["name"], Role(a["role"]), int(a["start"])) for a in data["agents"]
            )
            return cls(
                width=int(data["width"]),
                height=int(data["height"]),
                n_victims=int(data["n_victims"]),
                agents=agents,
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfigError(f"malformed environment config: {exc}") from exc
