import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_features
from teamirl.sar_env import (
    AgentAction,
    AgentSpec,
    EnvConfig,
    GridSpec,
    HiddenConfig,
    IllegalActionError,
    InvalidConfigError,
    Role,
    Roster,
    SearchRescueEnv,
    VictimStatus,
    WorldState,
    init_world,
)

U, F, R, C, E = (
    VictimStatus.UNKNOWN,
    VictimStatus.FOUND,
    VictimStatus.READY,
    VictimStatus.CLEAR,
    VictimStatus.EMPTY,
)
A = AgentAction


@pytest.fixture(scope="module")
def env():
    return EnvConfig().build()


@pytest.fixture(scope="module")
def env2():
    return EnvConfig(
        width=2,
        height=2,
        n_victims=1,
        agents=(AgentSpec("medic", Role.MEDIC, 0), AgentSpec("explorer", Role.EXPLORER, 3)),
    ).build()


def ws(positions, statuses, beacon=None, time=0):
    return WorldState(tuple(positions), tuple(statuses), beacon, time)


class TestGrid:
    def test_row_major_moves(self):
        g = GridSpec(3, 3)
        assert g.move(4, A.UP) == 1
        assert g.move(4, A.DOWN) == 7
        assert g.move(4, A.LEFT) == 3
        assert g.move(4, A.RIGHT) == 5

    def test_edges_blocked(self):
        g = GridSpec(3, 3)
        assert g.move(0, A.UP) is None
        assert g.move(0, A.LEFT) is None
        assert g.move(8, A.DOWN) is None
        assert g.move(2, A.RIGHT) is None

    def test_non_movement_stays(self):
        g = GridSpec(3, 3)
        assert g.move(4, A.SEARCH) == 4

    def test_manhattan(self):
        g = GridSpec(3, 3)
        assert g.manhattan(0, 8) == 4
        assert g.manhattan(2, 6) == 4
        assert g.manhattan(4, 4) == 0
        assert g.max_distance == 4

    def test_degenerate_grid_rejected(self):
        with pytest.raises(InvalidConfigError):
            GridSpec(1, 1)
        with pytest.raises(InvalidConfigError):
            GridSpec(0, 3)


class TestLegalActions:
    def test_medic_has_all_nine_in_center(self, env):
        legal = env.legal_actions(ws([4, 8], [U] * 9), "medic")
        assert set(legal) == set(AgentAction)

    def test_explorer_lacks_wait_triage_call(self, env):
        legal = env.legal_actions(ws([0, 4], [U] * 9), "explorer")
        assert set(legal) == {A.UP, A.DOWN, A.LEFT, A.RIGHT, A.SEARCH, A.EVACUATE}

    def test_corner_blocks_two_moves(self, env):
        legal = env.legal_actions(ws([0, 8], [U] * 9), "medic")
        assert A.UP not in legal and A.LEFT not in legal
        assert A.DOWN in legal and A.RIGHT in legal

    def test_legality_ignores_statuses(self, env):
        # SEARCH/TRIAGE/EVACUATE/CALL stay legal even when they do nothing
        for statuses in ([U] * 9, [E] * 9, [C] * 9):
            legal = env.legal_actions(ws([4, 8], statuses), "medic")
            assert {A.SEARCH, A.TRIAGE, A.EVACUATE, A.CALL} <= set(legal)

    def test_position_only_contract(self, env):
        for pos in range(9):
            by_pos = env.legal_actions_at(Role.EXPLORER, pos)
            assert by_pos == env.legal_actions(ws([0, pos], [R] * 9), "explorer")


class TestReveal:
    def test_search_reveals_current_cell(self, env):
        s = ws([4, 8], [U] * 9)
        hidden = HiddenConfig(tuple(l == 4 for l in range(9)))
        after = env.step(s, hidden, (A.SEARCH, A.EVACUATE))
        assert after.statuses[4] == F

    def test_search_reveals_empty(self, env):
        s = ws([4, 8], [U] * 9)
        after = env.step(s, HiddenConfig((False,) * 9), (A.SEARCH, A.EVACUATE))
        assert after.statuses[4] == E

    def test_moving_in_reveals_destination(self, env):
        s = ws([4, 8], [U] * 9)
        hidden = HiddenConfig(tuple(l == 5 for l in range(9)))
        after = env.step(s, hidden, (A.RIGHT, A.EVACUATE))
        assert after.positions[0] == 5
        assert after.statuses[5] == F
        # cells nobody touched stay unknown
        assert after.statuses[4] == U

    def test_search_on_known_cell_is_noop(self, env):
        s = ws([4, 8], [F] + [U] * 8)
        s = ws([0, 8], [F] + [U] * 8)
        after = env.step(s, HiddenConfig((True,) + (False,) * 8), (A.SEARCH, A.EVACUATE))
        assert after.statuses[0] == F

    def test_explorer_wait_illegal(self, env):
        s = ws([4, 8], [U] * 9)
        with pytest.raises(IllegalActionError):
            env.step(s, HiddenConfig((False,) * 9), (A.WAIT, A.WAIT))

    def test_off_grid_move_illegal(self, env):
        s = ws([0, 8], [U] * 9)
        with pytest.raises(IllegalActionError):
            env.step(s, HiddenConfig((False,) * 9), (A.UP, A.UP))


class TestTriageEvacuate:
    def test_triage_readies_found_victim(self, env):
        s = ws([4, 8], [U] * 4 + [F] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.TRIAGE, A.EVACUATE))
        assert after.statuses[4] == R

    def test_triage_elsewhere_is_noop(self, env):
        s = ws([3, 8], [U] * 4 + [F] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.TRIAGE, A.EVACUATE))
        assert after.statuses[4] == F

    def test_joint_evacuation_clears(self, env):
        s = ws([4, 4], [U] * 4 + [R] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.EVACUATE, A.EVACUATE))
        assert after.statuses[4] == C

    def test_solo_evacuation_fails_with_two_agents(self, env):
        s = ws([4, 8], [U] * 4 + [R] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.EVACUATE, A.SEARCH))
        assert after.statuses[4] == R

    def test_colocated_but_not_evacuating_fails(self, env):
        s = ws([4, 4], [U] * 4 + [R] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.EVACUATE, A.SEARCH))
        assert after.statuses[4] == R

    def test_quorum_is_one_for_solo_roster(self):
        solo = SearchRescueEnv(
            GridSpec(2, 2), Roster((AgentSpec("medic", Role.MEDIC, 0),))
        )
        assert solo.evac_quorum == 1
        s = ws([0], [R, U, U, U])
        after = solo.step(s, HiddenConfig((False,) * 4), (A.EVACUATE,))
        assert after.statuses[0] == C

    def test_evacuate_without_ready_victim_is_noop(self, env):
        s = ws([4, 4], [U] * 4 + [F] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.EVACUATE, A.EVACUATE))
        assert after.statuses[4] == F


class TestBeacon:
    def test_call_plants_beacon_at_caller(self, env):
        s = ws([4, 8], [U] * 4 + [R] + [U] * 4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.CALL, A.EVACUATE))
        assert after.help_beacon == 4

    def test_beacon_persists_until_gathered(self, env):
        s = ws([4, 8], [U] * 4 + [R] + [U] * 4, beacon=4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.WAIT, A.UP))
        assert after.help_beacon == 4

    def test_beacon_clears_when_all_colocated(self, env):
        s = ws([4, 5], [U] * 4 + [R] + [U] * 4, beacon=4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.WAIT, A.LEFT))
        assert after.positions == (4, 4)
        assert after.help_beacon is None

    def test_beacon_clears_when_cell_resolved(self, env):
        s = ws([4, 4], [U] * 4 + [R] + [U] * 4, beacon=4)
        after = env.step(s, HiddenConfig((False,) * 9), (A.EVACUATE, A.EVACUATE))
        assert after.statuses[4] == C
        assert after.help_beacon is None

    def test_latest_caller_wins(self, env):
        # both agents are medics here so both can CALL
        both = SearchRescueEnv(
            GridSpec(3, 3),
            Roster((AgentSpec("m1", Role.MEDIC, 2), AgentSpec("m2", Role.MEDIC, 6))),
        )
        s = ws([2, 6], [U] * 9)
        after = both.step(s, HiddenConfig((False,) * 9), (A.CALL, A.CALL))
        assert after.help_beacon == 6


class TestStepOutcomes:
    def test_no_reveal_single_outcome(self, env):
        s = ws([4, 8], [E] * 9)
        outcomes = env.step_outcomes(s, (A.WAIT, A.SEARCH))
        assert len(outcomes) == 1
        assert outcomes[0][0] == 1.0

    def test_single_reveal_splits_half(self, env):
        s = ws([4, 8], [U] * 9)
        outcomes = env.step_outcomes(s, (A.SEARCH, A.SEARCH))
        # both agents reveal their own cells: 2 cells, 4 outcomes
        assert len(outcomes) == 4
        np.testing.assert_allclose([p for p, _ in outcomes], 0.25)
        found = {tuple(o.statuses[i] for i in (4, 8)) for _, o in outcomes}
        assert found == {(E, E), (E, F), (F, E), (F, F)}

    def test_same_cell_reveal_counted_once(self, env):
        s = ws([4, 4], [U] * 9)
        outcomes = env.step_outcomes(s, (A.SEARCH, A.SEARCH))
        assert len(outcomes) == 2

    def test_probabilities_sum_to_one(self, env):
        s = ws([4, 8], [U] * 9)
        outcomes = env.step_outcomes(s, (A.RIGHT, A.UP))
        assert sum(p for p, _ in outcomes) == pytest.approx(1.0)

    def test_time_always_increments(self, env):
        s = ws([4, 8], [U] * 9, time=6)
        for _, child in env.step_outcomes(s, (A.WAIT, A.UP)):
            assert child.time == 7

    def test_matches_step_under_consistent_hidden(self, env):
        s = ws([4, 8], [U] * 9)
        hidden = HiddenConfig(tuple(l in (4, 8) for l in range(9)))
        stepped = env.step(s, hidden, (A.SEARCH, A.SEARCH))
        matching = [o for _, o in env.step_outcomes(s, (A.SEARCH, A.SEARCH)) if o == stepped]
        assert len(matching) == 1


def test_dynamics_ignore_time(env):
    """Same configuration at different clock readings evolves identically
    (apart from the clock itself). Oracle memoization relies on this."""
    base = ws([4, 8], [U, F, R, U, U, E, U, U, U], beacon=1, time=0)
    shifted = dataclasses.replace(base, time=13)
    hidden = HiddenConfig(tuple(l % 2 == 0 for l in range(9)))
    for joint in [(A.SEARCH, A.UP), (A.TRIAGE, A.SEARCH), (A.CALL, A.EVACUATE)]:
        a = env.step(base, hidden, joint)
        b = env.step(shifted, hidden, joint)
        assert dataclasses.replace(a, time=0) == dataclasses.replace(b, time=0)
        assert b.time == 14


class TestFeatures:
    def test_dist2vic_adjacent_on_3x3(self, env):
        s = ws([3, 8], [F] + [U] * 8)
        fv = env.own_features(s, "medic", A.WAIT)
        assert fv[0] == pytest.approx(0.75)  # distance 1 of max 4

    def test_dist2vic_on_victim_cell(self, env):
        s = ws([0, 8], [F] + [U] * 8)
        assert env.own_features(s, "medic", A.WAIT)[0] == 1.0

    def test_dist2vic_zero_without_found(self, env):
        s = ws([0, 8], [R, E, C] + [U] * 6)
        assert env.own_features(s, "medic", A.WAIT)[0] == 0.0

    def test_dist2help_tracks_beacon(self, env):
        s = ws([0, 8], [U] * 9, beacon=0)
        fv = env.own_features(s, "explorer", A.SEARCH)
        assert fv[0] == pytest.approx(0.0)  # distance 4 of max 4
        s2 = ws([0, 2], [U] * 9, beacon=0)
        assert env.own_features(s2, "explorer", A.SEARCH)[0] == pytest.approx(0.5)

    def test_indicators_gate_on_cell_status(self, env):
        s = ws([4, 8], [U] * 4 + [F] + [U] * 4)
        # FOUND here: triage fires, search and evacuate do not
        assert env.own_features(s, "medic", A.TRIAGE)[2] == 1.0
        assert env.own_features(s, "medic", A.SEARCH)[1] == 0.0
        assert env.own_features(s, "medic", A.EVACUATE)[3] == 0.0

    def test_call_requires_ready(self, env):
        ready = ws([4, 8], [U] * 4 + [R] + [U] * 4)
        unknown = ws([4, 8], [U] * 9)
        assert env.own_features(ready, "medic", A.CALL)[5] == 1.0
        assert env.own_features(unknown, "medic", A.CALL)[5] == 0.0

    def test_feature_matrix_rows_match_own_features(self, env):
        s = ws([4, 8], [F, U, R, U, R, E, U, U, U], beacon=2)
        for agent in ("medic", "explorer"):
            legal = env.legal_actions(s, agent)
            F_mat = env.feature_matrix(s, agent, legal)
            for row, action in zip(F_mat, legal):
                np.testing.assert_array_equal(row, env.own_features(s, agent, action))

    def test_feature_vector_requires_quorum(self, env):
        s = ws([4, 4], [U] * 4 + [R] + [U] * 4)
        joint_both = (A.EVACUATE, A.EVACUATE)
        joint_solo = (A.EVACUATE, A.SEARCH)
        assert env.feature_vector(s, joint_both, "medic")[3] == 1.0
        assert env.feature_vector(s, joint_solo, "medic")[3] == 0.0
        assert env.feature_vector(s, joint_both, "explorer")[2] == 1.0

    def test_feature_vector_needs_colocation(self, env):
        s = ws([4, 5], [U] * 4 + [R] + [U] * 4)
        assert env.feature_vector(s, (A.EVACUATE, A.EVACUATE), "medic")[3] == 0.0

    def test_feature_vector_agrees_with_reference(self, env):
        states = [
            ws([4, 4], [U] * 4 + [R] + [U] * 4, beacon=4),
            ws([0, 8], [F, U, R, E, C, U, U, U, U]),
            ws([2, 2], [U] * 2 + [R] + [U] * 6, beacon=7),
        ]
        for s in states:
            for jm in (A.EVACUATE, A.WAIT, A.CALL, A.TRIAGE):
                for je in (A.EVACUATE, A.SEARCH):
                    joint = (jm, je)
                    for agent in ("medic", "explorer"):
                        np.testing.assert_allclose(
                            env.feature_vector(s, joint, agent),
                            oracle_features(env, s, joint, agent),
                        )


class TestEvacSuccessProbability:
    def test_no_teammates_no_chance(self, env):
        s = ws([4, 8], [U] * 4 + [R] + [U] * 4)
        assert env.evac_success_probability(s, "medic", {}) == 0.0

    def test_single_teammate_passthrough(self, env):
        s = ws([4, 4], [U] * 4 + [R] + [U] * 4)
        assert env.evac_success_probability(s, "medic", {1: 0.3}) == pytest.approx(0.3)

    def test_solo_roster_always_succeeds(self):
        solo = SearchRescueEnv(GridSpec(2, 2), Roster((AgentSpec("m", Role.MEDIC, 0),)))
        s = ws([0], [R, U, U, U])
        assert solo.evac_success_probability(s, "m", {}) == 1.0

    def test_matches_enumeration(self):
        triple = SearchRescueEnv(
            GridSpec(2, 2),
            Roster(
                (
                    AgentSpec("a", Role.MEDIC, 0),
                    AgentSpec("b", Role.MEDIC, 0),
                    AgentSpec("c", Role.MEDIC, 0),
                )
            ),
        )
        s = ws([0, 0, 0], [R, U, U, U])
        p_b, p_c = 0.4, 0.7
        # need at least one of the two teammates (quorum 2 with own action given)
        expected = 1.0 - (1 - p_b) * (1 - p_c)
        got = triple.evac_success_probability(s, "a", {1: p_b, 2: p_c})
        assert got == pytest.approx(expected)


class TestInitWorld:
    def test_victim_count_and_time(self, env):
        state, hidden = init_world(env, 3, np.random.default_rng(0))
        assert hidden.n_victims == 3
        assert state.time == 0
        assert state.help_beacon is None
        assert all(s == U for s in state.statuses)
        assert state.positions == (0, 8)

    def test_deterministic_per_seed(self, env):
        _, h1 = init_world(env, 3, np.random.default_rng(42))
        _, h2 = init_world(env, 3, np.random.default_rng(42))
        assert h1 == h2

    def test_too_many_victims(self, env):
        with pytest.raises(InvalidConfigError):
            init_world(env, 10, np.random.default_rng(0))


class TestEnvConfig:
    def test_default_round_trip(self):
        cfg = EnvConfig()
        assert EnvConfig.from_dict(cfg.as_dict()) == cfg

    def test_build_checks_victims(self):
        with pytest.raises(InvalidConfigError):
            EnvConfig(width=2, height=1, n_victims=5).build()

    def test_malformed_dict(self):
        with pytest.raises(InvalidConfigError):
            EnvConfig.from_dict({"width": 3})

    def test_duplicate_names_rejected(self):
        with pytest.raises(InvalidConfigError):
            Roster((AgentSpec("x", Role.MEDIC, 0), AgentSpec("x", Role.EXPLORER, 1)))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_status_transitions_monotone(env2, data):
    """Victim handling only moves forward: UNKNOWN resolves once, FOUND can
    only become READY, READY only CLEAR, and CLEAR/EMPTY are absorbing."""
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    state, hidden = init_world(env2, 1, rng)
    order = {U: 0, F: 1, R: 2, C: 3, E: 1}
    for _ in range(6):
        joint = tuple(
            env2.legal_actions(state, a)[
                data.draw(st.integers(0, len(env2.legal_actions(state, a)) - 1))
            ]
            for a in env2.roster.names
        )
        after = env2.step(state, hidden, joint)
        for before_s, after_s in zip(state.statuses, after.statuses):
            if before_s == after_s:
                continue
            assert (before_s, after_s) in {(U, F), (U, E), (F, R), (R, C)}
        assert after.time == state.time + 1
        state = after
