"""Finite simultaneous-move stochastic games.

All players act at once; the transition is a deterministic function of the
joint action.  Rewards are a function of the *next* state only: terminal
states carry the final payoff vector, every other state carries zero.  This
convention keeps value bootstrapping simple -- the stage payoff for a joint
action is ``r(f(s,a)) + discount * V(f(s,a))`` with ``V`` equal to zero at
terminal states.

Besides the abstract environment this module provides three small synthetic
games used throughout the tests, a reachability enumerator for two-player
games, and a backward-induction oracle that solves every reachable stage game
exactly (turn counters strictly increase, so induction over turns is valid).
"""

from __future__ import annotations

import abc
import struct
from dataclasses import dataclass, field

import numpy as np

from .matrix_games import RestrictedStageGame, exact_ne_2p0s


@dataclass(frozen=True)
class State:
    """Base state: a canonical byte key, a turn counter, a terminal flag.

    Environment-specific subclasses add payload fields; ``key`` must encode
    the payload and the turn so distinct reachable states never collide.
    """

    key: bytes
    turn: int
    terminal: bool


class StochasticGame(abc.ABC):
    """Environment interface: deterministic, simultaneous-move, finite horizon."""

    name: str = "game"
    num_players: int = 2
    discount: float = 1.0
    max_turns: int = 1
    score_style: str = "zero_sum"  # or "sos": per-player share of a unit pot

    @abc.abstractmethod
    def initial_state(self) -> State: ...

    @abc.abstractmethod
    def legal_actions(self, state: State, player: int) -> list: ...

    @abc.abstractmethod
    def transition(self, state: State, joint) -> tuple[State, np.ndarray]: ...

    def terminal_reward(self, state: State) -> np.ndarray:
        """Exact final payoff vector, recomputed from a terminal state."""
        raise NotImplementedError

    def action_count(self, state: State, player: int) -> int:
        return len(self.legal_actions(state, player))

    def sample_uniform_action(self, state: State, player: int, rng: np.random.Generator):
        """Uniform draw over legal actions; override when enumeration is large."""
        actions = self.legal_actions(state, player)
        return actions[int(rng.integers(len(actions)))]

    def _check_not_terminal(self, state: State) -> None:
        if state.terminal:
            raise ValueError("terminal states have no legal actions")


@dataclass
class Trajectory:
    """One played game: visited states, joint actions, per-step rewards."""

    states: list
    joints: list
    rewards: list

    @property
    def final_state(self) -> State:
        return self.states[-1]

    def returns(self, discount: float) -> np.ndarray:
        total = np.zeros_like(self.rewards[0]) if self.rewards else np.zeros(2)
        scale = 1.0
        for r in self.rewards:
            total = total + scale * r
            scale *= discount
        return total


# ---------------------------------------------------------------------------
# Synthetic games
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ScoreState(State):
    score: int = 0


class IteratedMatchingPennies(StochasticGame):
    """Repeated pennies; the terminal reward is the sign of the round-win gap."""

    name = "iterated_pennies"

    def __init__(self, rounds: int = 2, discount: float = 1.0):
        self.num_players = 2
        self.discount = discount
        self.max_turns = rounds

    def _make(self, turn: int, score: int) -> _ScoreState:
        return _ScoreState(
            key=struct.pack(">bi", turn, score),
            turn=turn,
            terminal=turn >= self.max_turns,
            score=score,
        )

    def initial_state(self) -> _ScoreState:
        return self._make(0, 0)

    def legal_actions(self, state, player):
        self._check_not_terminal(state)
        return [0, 1]

    def transition(self, state, joint):
        score = state.score + (1 if joint[0] == joint[1] else -1)
        nxt = self._make(state.turn + 1, score)
        if nxt.terminal:
            return nxt, self.terminal_reward(nxt)
        return nxt, np.zeros(2)

    def terminal_reward(self, state):
        reward = float(np.sign(state.score))
        return np.array([reward, -reward])


@dataclass(frozen=True)
class _ChainState(State):
    pos: int = 1


class ChainConflict(StochasticGame):
    """A token on a 3-cell line; it moves only when both players push the
    same way.  The left end pays (2, -2), the right end (-1, 1)."""

    name = "chain_conflict"

    def __init__(self, max_turns: int = 4):
        self.num_players = 2
        self.discount = 1.0
        self.max_turns = max_turns

    def _make(self, turn: int, pos: int) -> _ChainState:
        terminal = pos in (0, 2) or turn >= self.max_turns
        return _ChainState(
            key=struct.pack(">bb", turn, pos), turn=turn, terminal=terminal, pos=pos
        )

    def initial_state(self) -> _ChainState:
        return self._make(0, 1)

    def legal_actions(self, state, player):
        self._check_not_terminal(state)
        return [-1, +1]

    def transition(self, state, joint):
        step = joint[0] if joint[0] == joint[1] else 0
        nxt = self._make(state.turn + 1, state.pos + step)
        return nxt, self.terminal_reward(nxt) if nxt.terminal else np.zeros(2)

    def terminal_reward(self, state):
        if state.pos == 0:
            return np.array([2.0, -2.0])
        if state.pos == 2:
            return np.array([-1.0, 1.0])
        return np.zeros(2)


@dataclass(frozen=True)
class _GridState(State):
    pos: int = 0


class RandomMatrixGame(StochasticGame):
    """Seeded random stochastic game: a fixed transition table over ``num_states``
    positions and a random zero-sum payoff attached to the position reached at
    the horizon."""

    name = "random_matrix"

    def __init__(
        self,
        num_states: int = 5,
        num_actions: int = 3,
        horizon: int = 3,
        seed: int = 0,
        discount: float = 1.0,
    ):
        self.num_players = 2
        self.discount = discount
        self.max_turns = horizon
        self.num_actions = num_actions
        rng = np.random.default_rng(seed)
        self._table = rng.integers(
            0, num_states, size=(num_states, num_actions, num_actions)
        )
        self._payout = rng.uniform(-1.0, 1.0, size=num_states)

    def _make(self, turn: int, pos: int) -> _GridState:
        return _GridState(
            key=struct.pack(">bh", turn, pos),
            turn=turn,
            terminal=turn >= self.max_turns,
            pos=pos,
        )

    def initial_state(self) -> _GridState:
        return self._make(0, 0)

    def legal_actions(self, state, player):
        self._check_not_terminal(state)
        return list(range(self.num_actions))

    def transition(self, state, joint):
        pos = int(self._table[state.pos, joint[0], joint[1]])
        nxt = self._make(state.turn + 1, pos)
        return nxt, self.terminal_reward(nxt) if nxt.terminal else np.zeros(2)

    def terminal_reward(self, state):
        x = float(self._payout[state.pos])
        return np.array([x, -x])


@dataclass(frozen=True)
class _PayoffState(State):
    pay: float = 0.0


class OneShotMatrixGame(StochasticGame):
    """A single simultaneous move paying out a fixed zero-sum matrix.

    Wraps a matrix as a one-turn environment so stage-level tooling (stage
    games, best-response search, candidate growth) can be exercised against
    closed-form matrix solutions.
    """

    name = "one_shot_matrix"

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("payoff matrix must be 2-D")
        self.matrix = m
        self.max_turns = 1

    def initial_state(self) -> State:
        return State(key=b"\x00", turn=0, terminal=False)

    def legal_actions(self, state, player):
        self._check_not_terminal(state)
        return list(range(self.matrix.shape[player]))

    def transition(self, state, joint):
        x = float(self.matrix[joint])
        nxt = _PayoffState(
            key=b"\x01" + struct.pack(">d", x), turn=1, terminal=True, pay=x
        )
        return nxt, self.terminal_reward(nxt)

    def terminal_reward(self, state):
        return np.array([state.pay, -state.pay])


# ---------------------------------------------------------------------------
# Exhaustive enumeration and the backward-induction oracle (two players)
# ---------------------------------------------------------------------------


@dataclass
class EnumeratedGame:
    """Every reachable non-terminal state of a two-player game, with dense
    successor and reward tables (successor index -1 marks a terminal child;
    its reward entry already carries the final payoff)."""

    game: StochasticGame
    states: list
    index: dict
    actions: list
    successors: list
    rewards: list

    @property
    def num_states(self) -> int:
        return len(self.states)

    def stage_payoffs(self, i: int, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-player payoff matrices for state i given per-state value rows."""
        succ = self.successors[i]
        mask = succ >= 0
        gamma = self.game.discount
        out = []
        for p in range(2):
            m = self.rewards[i][..., p].copy()
            if mask.any():
                m[mask] += gamma * values[succ[mask], p]
            out.append(m)
        return out[0], out[1]


def enumerate_reachable_2p(
    game: StochasticGame,
    max_states: int = 10_000,
    max_joint_actions: int = 4096,
) -> EnumeratedGame:
    if game.num_players != 2:
        raise ValueError("enumeration implemented for 2 players only")
    root = game.initial_state()
    states, index = [], {}
    actions, successors, rewards = [], [], []
    frontier = []

    def register(s: State) -> int:
        j = len(states)
        if j >= max_states:
            raise ValueError(f"reachable state count exceeds cap {max_states}")
        index[s.key] = j
        states.append(s)
        actions.append(None)
        successors.append(None)
        rewards.append(None)
        frontier.append(j)
        return j

    if not root.terminal:
        register(root)
    while frontier:
        i = frontier.pop()
        s = states[i]
        acts = (game.legal_actions(s, 0), game.legal_actions(s, 1))
        n0, n1 = len(acts[0]), len(acts[1])
        if n0 * n1 > max_joint_actions:
            raise ValueError(
                f"joint action count {n0 * n1} exceeds cap {max_joint_actions}"
            )
        succ = np.full((n0, n1), -1, dtype=np.int64)
        rew = np.zeros((n0, n1, 2))
        for a0 in range(n0):
            for a1 in range(n1):
                nxt, r = game.transition(s, (acts[0][a0], acts[1][a1]))
                rew[a0, a1] = r
                if not nxt.terminal:
                    j = index.get(nxt.key)
                    if j is None:
                        j = register(nxt)
                    succ[a0, a1] = j
        actions[i] = acts
        successors[i] = succ
        rewards[i] = rew
    return EnumeratedGame(game, states, index, actions, successors, rewards)


@dataclass
class MinimaxSolution:
    enum: EnumeratedGame
    values: np.ndarray
    policies: list
    root_value: np.ndarray

    def value_of(self, key: bytes) -> np.ndarray:
        return self.values[self.enum.index[key]]

    def policy_of(self, key: bytes) -> tuple[np.ndarray, np.ndarray]:
        return self.policies[self.enum.index[key]]


def backward_induction_minimax(
    game: StochasticGame,
    max_states: int = 10_000,
    max_joint_actions: int = 4096,
    enum: EnumeratedGame | None = None,
) -> MinimaxSolution:
    """Exact per-state minimax values by induction over the turn counter.

    Each stage game (payoff = reward plus discounted child value) is solved
    with the exact constant-sum oracle.  Deterministic: rerunning yields
    bit-identical tables.
    """
    if enum is None:
        enum = enumerate_reachable_2p(game, max_states, max_joint_actions)
    n = enum.num_states
    values = np.zeros((n, 2))
    policies: list = [None] * n
    order = sorted(range(n), key=lambda i: enum.states[i].turn, reverse=True)
    for i in order:
        p0, p1 = enum.stage_payoffs(i, values)
        res = exact_ne_2p0s(
            RestrictedStageGame.from_tensors([p0, p1]), max_actions=None
        )
        values[i] = res.values
        policies[i] = (res.strategies[0], res.strategies[1])
    root = game.initial_state()
    root_value = (
        values[enum.index[root.key]] if not root.terminal else np.zeros(2)
    )
    return MinimaxSolution(enum, values, policies, root_value)


def best_response_vs_policy(
    enum: EnumeratedGame,
    player: int,
    policy_fn,
) -> np.ndarray:
    """Per-state best-response values for ``player`` against a fixed opponent.

    ``policy_fn(state, actions) -> np.ndarray`` returns the opponent's mixed
    strategy over *their* legal action list at that state.  This is the exact
    exploitability oracle: it plays the full legal action space against the
    frozen policy, bottom-up over turns.
    """
    opp = 1 - player
    n = enum.num_states
    best = np.zeros(n)
    order = sorted(range(n), key=lambda i: enum.states[i].turn, reverse=True)
    for i in order:
        succ = enum.successors[i]
        mask = succ >= 0
        payoff = enum.rewards[i][..., player].copy()
        if mask.any():
            payoff[mask] += enum.game.discount * best[succ[mask]]
        sigma = np.asarray(policy_fn(enum.states[i], enum.actions[i][opp]), dtype=float)
        if sigma.shape != (payoff.shape[opp],):
            raise ValueError("opponent policy length mismatch")
        vals = payoff @ sigma if player == 0 else sigma @ payoff
        best[i] = float(np.max(vals))
    return best


# ---------------------------------------------------------------------------
# Game registry
# ---------------------------------------------------------------------------

_REGISTRY: dict = {}


def register_game(name: str, builder) -> None:
    _REGISTRY[name] = builder


def _load_board_games() -> None:
    # Standard board maps register when their module imports.
    from . import microdip  # noqa: F401


def make_game(name: str, params: dict | None = None) -> StochasticGame:
    _load_board_games()
    if name not in _REGISTRY:
        raise KeyError(f"unknown game {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](dict(params or {}))


def registered_games() -> list[str]:
    _load_board_games()
    return sorted(_REGISTRY)


register_game("iterated_pennies", lambda p: IteratedMatchingPennies(**p))
register_game("chain_conflict", lambda p: ChainConflict(**p))
register_game("random_matrix", lambda p: RandomMatrixGame(**p))
