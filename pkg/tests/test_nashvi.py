"""Value-table learning: stage games, Nash updates, self-play, convergence."""

import numpy as np
import pytest
from scipy.stats import chisquare

from eqlearn.matrix_games import RestrictedStageGame
from eqlearn.microdip import make_board
from eqlearn.nashvi import (
    ExploreSchedule,
    SolverParams,
    TrainTarget,
    ValueTable,
    nash_value_update,
    pretrain_episode,
    selfplay_episode,
    stage_game,
    tabular_convergence_run,
)
from eqlearn.proposal import ProposalModel
from eqlearn.stogame import (
    IteratedMatchingPennies,
    RandomMatrixGame,
    State,
    StochasticGame,
    backward_induction_minimax,
    enumerate_reachable_2p,
)


# ---------------------------------------------------------------------------
# ValueTable
# ---------------------------------------------------------------------------


def test_defaults_by_score_style():
    zero_sum = ValueTable.for_game(IteratedMatchingPennies(rounds=2))
    root = IteratedMatchingPennies(rounds=2).initial_state()
    assert np.allclose(zero_sum.value(root), [0.0, 0.0])

    duel = make_board("duel9")
    sos = ValueTable.for_game(duel)
    assert np.allclose(sos.value(duel.initial_state()), [0.5, 0.5])

    tri = make_board("tri12")
    assert np.allclose(ValueTable.for_game(tri).value(tri.initial_state()), 1 / 3)


def test_terminal_states_read_exact_reward():
    game = IteratedMatchingPennies(rounds=1)
    vt = ValueTable.for_game(game)
    terminal, reward = game.transition(game.initial_state(), (0, 0))
    assert terminal.terminal
    assert np.allclose(vt.value(terminal), reward)
    with pytest.raises(ValueError):
        vt.update(terminal, [0.0, 0.0], 0.5)


def test_update_blend_and_visits():
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    vt.update(root, [1.0, -1.0], 0.5)
    assert np.allclose(vt.value(root), [0.5, -0.5])  # blended from the 0 default
    vt.update(root, [1.0, -1.0], 1.0)
    assert np.allclose(vt.value(root), [1.0, -1.0])  # alpha=1 overwrites
    assert vt.visit_count(root) == 2
    with pytest.raises(ValueError):
        vt.update(root, [0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        vt.update(root, [0.0, 0.0], 1.5)


def test_snapshot_is_isolated():
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    vt.update(root, [0.25, -0.25], 1.0)
    snap = vt.snapshot()
    vt.update(root, [0.9, -0.9], 1.0)
    assert np.allclose(snap.value(root), [0.25, -0.25])
    assert snap.visit_count(root) == 1


def test_value_table_serialization_roundtrip():
    game = make_board("duel9")
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    vt.update(root, [0.7, 0.3], 1.0)
    nxt, _ = game.transition(root, (game.legal_actions(root, 0)[0],
                                    game.legal_actions(root, 1)[0]))
    if not nxt.terminal:
        vt.update(nxt, [0.4, 0.6], 1.0)
    blob = vt.to_bytes()
    fresh = ValueTable.for_game(game)
    fresh.load_bytes(blob)
    assert fresh.table.keys() == vt.table.keys()
    for k in vt.table:
        assert np.allclose(fresh.table[k], vt.table[k])
    assert fresh.visits == vt.visits

    with pytest.raises(ValueError):
        ValueTable(3, np.zeros(3)).load_bytes(blob)  # player-count mismatch
    with pytest.raises(ValueError):
        fresh.load_bytes(blob[: len(blob) - 3])


def test_top_visited_ranking():
    game = IteratedMatchingPennies(rounds=3)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    mid, _ = game.transition(root, (0, 0))
    for _ in range(3):
        vt.update(root, [0.1, -0.1], 0.5)
    vt.update(mid, [0.2, -0.2], 0.5)
    top = vt.top_visited(2)
    assert top[0][0] == root.key and top[0][1] == 3
    assert top[1][0] == mid.key and top[1][1] == 1


# ---------------------------------------------------------------------------
# ExploreSchedule
# ---------------------------------------------------------------------------


def test_schedule_defaults():
    two = ExploreSchedule.for_players(2)
    assert [two.epsilon(t) for t in range(4)] == [0.8, 0.5, 0.1, 0.1]
    multi = ExploreSchedule.for_players(3)
    assert [multi.epsilon(t) for t in range(4)] == [0.3, 0.3, 0.2, 0.2]
    assert ExploreSchedule.flat(0.0).epsilon(0) == 0.0
    with pytest.raises(ValueError):
        ExploreSchedule(base=1.2)
    with pytest.raises(ValueError):
        ExploreSchedule(overrides=(-0.1,))


# ---------------------------------------------------------------------------
# stage_game
# ---------------------------------------------------------------------------


def test_stage_terminal_children_pay_exact_rewards():
    game = IteratedMatchingPennies(rounds=1)
    vt = ValueTable.for_game(game)
    stage = stage_game(game.initial_state(), [[0, 1], [0, 1]], vt, game)
    match = stage.payoff((0, 0))
    differ = stage.payoff((0, 1))
    assert np.allclose(match, [1.0, -1.0])
    assert np.allclose(differ, [-1.0, 1.0])


def test_zero_discount_drops_future_values():
    game = IteratedMatchingPennies(rounds=2, discount=0.0)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    mid, _ = game.transition(root, (0, 0))
    vt.update(mid, [123.0, -123.0], 1.0)  # junk that gamma=0 must erase
    stage = stage_game(root, [[0, 1], [0, 1]], vt, game)
    for joint in np.ndindex(2, 2):
        assert np.allclose(stage.payoff(joint), [0.0, 0.0])


def test_duel9_stage_matches_bruteforce():
    game = make_board("duel9")
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    acts = [game.legal_actions(root, p) for p in range(2)]
    rng = np.random.default_rng(0)
    for a0 in acts[0]:
        for a1 in acts[1]:
            nxt, _ = game.transition(root, (a0, a1))
            if not nxt.terminal and nxt.key not in vt.table:
                x = rng.uniform(0.0, 1.0)
                vt.update(nxt, [x, 1.0 - x], 1.0)
    stage = stage_game(root, acts, vt, game)
    tensors = stage.payoff_tensors()
    for i, a0 in enumerate(acts[0]):
        for j, a1 in enumerate(acts[1]):
            nxt, r = game.transition(root, (a0, a1))
            follow = np.zeros(2) if nxt.terminal else vt.value(nxt)
            expected = r + game.discount * follow
            assert np.allclose([tensors[0][i, j], tensors[1][i, j]], expected)


def test_stage_memoizes_successor_evaluations():
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    counter = {"n": 0}
    original = vt.value

    def counting_value(state):
        counter["n"] += 1
        return original(state)

    vt.value = counting_value
    stage = stage_game(game.initial_state(), [[0, 1], [0, 1]], vt, game)
    stage.payoff_tensors()
    # 4 joints but only 2 distinct successors (round won / round lost).
    assert counter["n"] == 2


def test_stage_rejects_terminal():
    game = IteratedMatchingPennies(rounds=1)
    vt = ValueTable.for_game(game)
    terminal, _ = game.transition(game.initial_state(), (0, 1))
    with pytest.raises(ValueError):
        stage_game(terminal, [[0], [0]], vt, game)


# ---------------------------------------------------------------------------
# nash_value_update
# ---------------------------------------------------------------------------


def test_alpha_one_writes_target_exactly():
    game = IteratedMatchingPennies(rounds=1)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    stage = stage_game(root, [[0, 1], [0, 1]], vt, game)
    uniform = [np.array([0.5, 0.5]), np.array([0.5, 0.5])]
    tgt = nash_value_update(vt, root, uniform, stage, 1.0)
    assert np.allclose(tgt.values, [0.0, 0.0])  # symmetric game
    assert np.allclose(vt.value(root), tgt.values)
    assert isinstance(tgt, TrainTarget) and tgt.state_key == root.key


def test_pure_sigma_targets_single_payoff():
    game = IteratedMatchingPennies(rounds=1)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    stage = stage_game(root, [[0, 1], [0, 1]], vt, game)
    pure = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    tgt = nash_value_update(vt, root, pure, stage, 1.0)
    assert np.allclose(tgt.values, stage.payoff((0, 1)))


def test_non_finite_target_raises():
    stage = RestrictedStageGame([[0], [0]], lambda j: [np.inf, -np.inf])
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    with pytest.raises(ValueError, match="finite"):
        nash_value_update(vt, game.initial_state(), [np.ones(1), np.ones(1)], stage, 1.0)


def test_geometric_contraction_trace():
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    stage = RestrictedStageGame([[0], [0]], lambda j: [0.8, -0.8])
    ones = [np.ones(1), np.ones(1)]
    gaps = []
    for _ in range(3):
        nash_value_update(vt, root, ones, stage, 0.5)
        gaps.append(abs(vt.value(root)[0] - 0.8))
    assert np.allclose(gaps, [0.4, 0.2, 0.1])  # halves every step


def test_zero_sum_estimates_stay_balanced():
    game = RandomMatrixGame(num_states=4, num_actions=3, horizon=3, seed=7)
    vt = tabular_convergence_run(game, budget=4, solver=SolverParams(256),
                                 rng=np.random.default_rng(7))
    assert len(vt.table) > 0
    for v in vt.table.values():
        assert abs(v.sum()) <= 1e-9


# ---------------------------------------------------------------------------
# selfplay_episode
# ---------------------------------------------------------------------------


def full_sets(game):
    return lambda state, rng: [game.legal_actions(state, p)
                               for p in range(game.num_players)]


def test_full_exploration_plays_uniformly():
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    schedule = ExploreSchedule.flat(1.0)
    rng = np.random.default_rng(0)
    counts = np.zeros(2)
    for _ in range(2_500):
        traj, _ = selfplay_episode(
            game, vt, None, schedule, SolverParams(1), rng,
            candidate_fn=full_sets(game),
        )
        for joint in traj.joints:
            counts[joint[0]] += 1
            counts[joint[1]] += 1
    assert counts.sum() == 10_000
    assert chisquare(counts).pvalue > 0.001


def test_no_exploration_single_candidates_deterministic():
    game = IteratedMatchingPennies(rounds=2)
    runs = []
    for seed in (0, 123):
        vt = ValueTable.for_game(game)
        traj, _ = selfplay_episode(
            game, vt, None, ExploreSchedule.flat(0.0), SolverParams(4),
            np.random.default_rng(seed),
            candidate_fn=lambda state, rng: [[0], [1]],
        )
        runs.append(traj.joints)
    assert runs[0] == runs[1] == [(0, 1), (0, 1)]


def test_targets_cover_visited_states():
    game = make_board("duel9")
    vt = ValueTable.for_game(game)
    model = ProposalModel(game)
    traj, targets = selfplay_episode(
        game, vt, model, ExploreSchedule.for_players(2), SolverParams(64),
        np.random.default_rng(3), n_samples=40, n_keep=10,
    )
    visited = {s.key for s in traj.states[:-1]}
    assert len(targets) == len(traj.joints)
    assert {t.state_key for t in targets} <= visited
    for t in targets:
        assert np.all(t.values >= -1e-9) and np.all(t.values <= 1 + 1e-9)
        for sigma in t.policies:
            assert abs(sigma.sum() - 1.0) < 1e-9
    assert traj.final_state.terminal


def test_visit_alpha_callable_and_apply_flag():
    game = IteratedMatchingPennies(rounds=2)
    vt = ValueTable.for_game(game)
    root = game.initial_state()
    seen = []
    selfplay_episode(
        game, vt, None, ExploreSchedule.flat(0.5), SolverParams(8),
        np.random.default_rng(1), candidate_fn=full_sets(game),
        alpha=lambda visits: seen.append(visits) or 1.0 / (1 + visits),
    )
    assert vt.visit_count(root) == 1 and seen[0] == 0

    frozen = ValueTable.for_game(game)
    _, targets = selfplay_episode(
        game, frozen, None, ExploreSchedule.flat(0.5), SolverParams(8),
        np.random.default_rng(1), candidate_fn=full_sets(game),
        apply_updates=False,
    )
    assert len(frozen.table) == 0 and len(targets) >= 1


# ---------------------------------------------------------------------------
# pretrain_episode
# ---------------------------------------------------------------------------


class AlwaysWins(StochasticGame):
    """Two turns, two dummy actions; player 0 always ends up with the pot."""

    name = "always_wins"

    def __init__(self, discount=0.5):
        self.discount = discount
        self.max_turns = 2

    def _make(self, turn):
        import struct as _s

        return State(key=_s.pack(">b", turn), turn=turn, terminal=turn >= 2)

    def initial_state(self):
        return self._make(0)

    def legal_actions(self, state, player):
        self._check_not_terminal(state)
        return [0, 1]

    def transition(self, state, joint):
        nxt = self._make(state.turn + 1)
        return nxt, (self.terminal_reward(nxt) if nxt.terminal else np.zeros(2))

    def terminal_reward(self, state):
        return np.array([1.0, 0.0])


def test_pretrain_targets_are_discounted_outcomes():
    game = AlwaysWins(discount=0.5)
    vt = ValueTable.for_game(game)
    _, targets = pretrain_episode(game, vt, 4, SolverParams(8),
                                  np.random.default_rng(0))
    assert len(targets) == 2
    assert np.allclose(targets[0].values, [0.5, 0.0])  # one turn of discount
    assert np.allclose(targets[1].values, [1.0, 0.0])

    game1 = AlwaysWins(discount=1.0)
    vt1 = ValueTable.for_game(game1)
    _, t1 = pretrain_episode(game1, vt1, 4, SolverParams(8),
                             np.random.default_rng(0))
    assert all(np.allclose(t.values, [1.0, 0.0]) for t in t1)


def test_pretrain_regresses_realized_outcome():
    game = IteratedMatchingPennies(rounds=1)
    vt = ValueTable.for_game(game)
    rng = np.random.default_rng(5)
    traj, targets = pretrain_episode(game, vt, 3, SolverParams(16), rng,
                                     alpha=1.0)
    assert np.allclose(targets[0].values, traj.rewards[-1])
    assert np.allclose(vt.value(game.initial_state()), traj.rewards[-1])
    for t in targets:
        for actions, sigma in zip(t.action_sets, t.policies):
            assert len(actions) == len(sigma)
            assert set(actions) <= {0, 1}


# ---------------------------------------------------------------------------
# tabular_convergence_run
# ---------------------------------------------------------------------------


def test_depth_one_single_sweep_matches_stage_value():
    game = IteratedMatchingPennies(rounds=1)
    vt = tabular_convergence_run(game, budget=1, solver=SolverParams(512),
                                 rng=np.random.default_rng(0))
    root = game.initial_state()
    assert vt.visit_count(root) == 1  # alpha started at c/(c+0) = 1
    assert abs(vt.value(root)[0]) <= 0.05


def test_two_round_pennies_root_near_zero():
    game = IteratedMatchingPennies(rounds=2)
    vt = tabular_convergence_run(game, budget=6, solver=SolverParams(512),
                                 rng=np.random.default_rng(0))
    assert abs(vt.value(game.initial_state())[0]) <= 0.05


def test_selfplay_mode_converges_on_depth_one():
    game = IteratedMatchingPennies(rounds=1)
    vt = tabular_convergence_run(game, mode="selfplay", budget=400,
                                 solver=SolverParams(128), epsilon=0.3,
                                 rng=np.random.default_rng(0))
    assert abs(vt.value(game.initial_state())[0]) <= 0.05


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        tabular_convergence_run(IteratedMatchingPennies(rounds=1), mode="warp")


def test_matches_minimax_on_random_games():
    for seed in range(5):
        game = RandomMatrixGame(num_states=5, num_actions=3, horizon=3, seed=seed)
        enum = enumerate_reachable_2p(game)
        oracle = backward_induction_minimax(game, enum=enum)
        vt = tabular_convergence_run(game, budget=8, solver=SolverParams(1024),
                                     rng=np.random.default_rng(seed), enum=enum)
        worst = max(
            abs(vt.value(enum.states[i])[p] - oracle.values[i][p])
            for i in range(enum.num_states)
            for p in range(2)
        )
        assert worst <= 0.05, f"seed {seed}: L-infinity {worst:.3f}"
