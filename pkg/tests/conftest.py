"""Session-wide fixtures: the duel9 board enumerated and solved exactly.

Enumeration, backward induction, the 500-game reference match, and the two
exploiter runs are the expensive computations several test modules lean on;
computing each once per session keeps the suite honest without repaying
that cost per module.
"""

import numpy as np
import pytest

from eqlearn.evaluation import (
    Agent,
    exploiter_train,
    measure_exploitability,
    play_match,
)
from eqlearn.nashvi import SolverParams, ValueTable, tabular_convergence_run
from eqlearn.stogame import (
    backward_induction_minimax,
    best_response_vs_policy,
    enumerate_reachable_2p,
    make_game,
)


def _full_legal(game, state, player, rng):
    return game.legal_actions(state, player)


@pytest.fixture(scope="session")
def duel9():
    return make_game("duel9")


@pytest.fixture(scope="session")
def duel9_enum(duel9):
    return enumerate_reachable_2p(duel9)


@pytest.fixture(scope="session")
def duel9_minimax(duel9, duel9_enum):
    return backward_induction_minimax(duel9, enum=duel9_enum)


@pytest.fixture(scope="session")
def duel9_minimax_table(duel9, duel9_enum, duel9_minimax):
    table = ValueTable.for_game(duel9)
    for i, s in enumerate(duel9_enum.states):
        table.update(s, duel9_minimax.values[i], 1.0)
    return table


@pytest.fixture(scope="session")
def duel9_trained(duel9, duel9_enum):
    """One full sweep of stage-solving value iteration (near-exact table)."""
    return tabular_convergence_run(
        duel9, mode="sweep", budget=1, solver=SolverParams(192),
        rng=np.random.default_rng(0), enum=duel9_enum,
    )


@pytest.fixture(scope="session")
def match500(duel9, duel9_trained):
    """500 duel9 self-play games between identical agents, with deltas."""
    alpha = Agent("alpha", duel9_trained, candidate_fn=_full_legal,
                  solver=SolverParams(64))
    beta = Agent("beta", duel9_trained, candidate_fn=_full_legal,
                 solver=SolverParams(64))
    return play_match(duel9, [alpha, beta], 500, np.random.default_rng(5))


@pytest.fixture(scope="session")
def exploiter_vs_ne(duel9, duel9_enum, duel9_minimax, duel9_minimax_table):
    """Exploiter trained against the exact-equilibrium victim, then measured.

    Returns (report, ne_root_value); the report lists the victim first and
    the exploiter second, with the exploiter playing seat 0.
    """
    def ne_policy(game, state, seat, rng):
        i = duel9_enum.index[state.key]
        return duel9_enum.actions[i][seat], duel9_minimax.policies[i][seat]

    victim = Agent("equilibrium", duel9_minimax_table, policy_fn=ne_policy)
    exploiter = exploiter_train(
        duel9, victim, 0, episodes=60, rng=np.random.default_rng(2),
        solver=SolverParams(192), alpha=lambda v: 1.0 / (1.0 + v),
    )
    rep = measure_exploitability(
        duel9, victim, exploiter, 0, 200, np.random.default_rng(3)
    )
    return rep, duel9_minimax.root_value[0]


@pytest.fixture(scope="session")
def exploiter_vs_biased(duel9, duel9_enum, duel9_minimax, duel9_minimax_table):
    """Exploiter trained against a victim with a skewed opening mixture.

    Returns (report, ne_root_value, oracle_br_value) with the oracle value
    confirming the bias is genuinely punishable; the report lists the victim
    first and the exploiter second, with the exploiter playing seat 0.
    """
    root = duel9.initial_state()
    i0 = duel9_enum.index[root.key]
    acts1 = duel9_enum.actions[i0][1]
    weak = acts1.index((("H", 7), ("H", 8)))
    strong = acts1.index((("M", 7, 4), ("M", 8, 5)))
    mix = np.zeros(len(acts1))
    mix[weak], mix[strong] = 0.9, 0.1

    def biased_policy(game, state, seat, rng):
        i = duel9_enum.index[state.key]
        if i == i0 and seat == 1:
            return acts1, mix
        return duel9_enum.actions[i][seat], duel9_minimax.policies[i][seat]

    def opening_sigma(state, actions):
        i = duel9_enum.index[state.key]
        return mix if i == i0 else duel9_minimax.policies[i][1]

    br = best_response_vs_policy(duel9_enum, 0, opening_sigma)[i0]

    victim = Agent("biased", duel9_minimax_table, policy_fn=biased_policy)
    exploiter = exploiter_train(
        duel9, victim, 0, episodes=250, rng=np.random.default_rng(4),
        solver=SolverParams(192), alpha=lambda v: 1.0 / (1.0 + v),
    )
    rep = measure_exploitability(
        duel9, victim, exploiter, 0, 250, np.random.default_rng(5)
    )
    return rep, duel9_minimax.root_value[0], br
