"""Tabular Nash value iteration.

The value table maps state keys to per-player expected-score estimates.  One
training step builds the restricted stage game at a state (rewards plus
discounted table lookups of the successors), solves it with regret matching,
and blends the equilibrium's expected payoff into the table.  Self-play
episodes chain these steps along trajectories with ε-greedy candidate
exploration; the convergence runner sweeps every reachable state instead so
the fixed point can be checked against exact backward induction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .matrix_games import (
    EXACT_JOINT_CAP,
    MC_VALUE_SAMPLES,
    RestrictedStageGame,
    exact_ne_2p0s,
    expected_values,
    sample_index,
    solve_restricted,
    validate_strategy,
)
from .proposal import CandidateSet
from .stogame import State, StochasticGame, Trajectory, enumerate_reachable_2p


@dataclass(frozen=True)
class SolverParams:
    """Stage-game solver budget.

    ``exact=True`` swaps regret matching for the closed-form two-player
    constant-sum oracle (any action count); used by oracles and invariant
    tests, not by training runs.
    """

    iterations: int = 1024
    optimism: bool = True
    linear: bool = True
    exact: bool = False

    def solve(self, stage: RestrictedStageGame, rng: np.random.Generator):
        if self.exact:
            return exact_ne_2p0s(stage, max_actions=None)
        return solve_restricted(
            stage, self.iterations, rng, optimism=self.optimism, linear=self.linear
        )


@dataclass(frozen=True)
class ExploreSchedule:
    """ε per turn: explicit values for the first turns, then a flat base."""

    base: float = 0.1
    overrides: tuple = (0.8, 0.5)

    def __post_init__(self):
        for e in (self.base, *self.overrides):
            if not 0.0 <= e <= 1.0:
                raise ValueError("exploration rates must lie in [0, 1]")

    def epsilon(self, turn: int) -> float:
        if 0 <= turn < len(self.overrides):
            return self.overrides[turn]
        return self.base

    @classmethod
    def for_players(cls, num_players: int) -> "ExploreSchedule":
        if num_players == 2:
            return cls(base=0.1, overrides=(0.8, 0.5))
        return cls(base=0.2, overrides=(0.3, 0.3))

    @classmethod
    def flat(cls, epsilon: float) -> "ExploreSchedule":
        return cls(base=epsilon, overrides=())


class ValueTable:
    """State-key → per-player value estimates, with visit counts.

    Unseen states read as a per-game default (zero for zero-sum games, an
    even score split for shared-pie scoring); terminal states always read as
    their exact final reward and are never written.
    """

    def __init__(self, num_players: int, default, terminal_fn=None):
        self.num_players = num_players
        self.default = np.asarray(default, dtype=float)
        if self.default.shape != (num_players,):
            raise ValueError("default must have one entry per player")
        self.terminal_fn = terminal_fn
        self.table: dict = {}
        self.visits: dict = {}

    @classmethod
    def for_game(cls, game: StochasticGame) -> "ValueTable":
        n = game.num_players
        if getattr(game, "score_style", "zero_sum") == "sos":
            default = np.full(n, 1.0 / n)
        else:
            default = np.zeros(n)
        return cls(n, default, terminal_fn=game.terminal_reward)

    def value(self, state: State) -> np.ndarray:
        if state.terminal and self.terminal_fn is not None:
            return np.asarray(self.terminal_fn(state), dtype=float)
        got = self.table.get(state.key)
        return self.default.copy() if got is None else got.copy()

    def visit_count(self, state: State) -> int:
        return self.visits.get(state.key, 0)

    def update(self, state: State, target, alpha: float) -> np.ndarray:
        if state.terminal:
            raise ValueError("terminal values are exact and never updated")
        return self.update_key(state.key, target, alpha)

    def update_key(self, key: bytes, target, alpha: float) -> np.ndarray:
        """Blend a target into a row by state key.  Callers that only hold
        keys (replayed training targets) are trusted to pass non-terminal
        states — targets are only ever built at non-terminal stages."""
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        old = self.table.get(key)
        if old is None:
            old = self.default
        new = (1.0 - alpha) * old + alpha * np.asarray(target, dtype=float)
        self.table[key] = new
        self.visits[key] = self.visits.get(key, 0) + 1
        return new.copy()

    def snapshot(self) -> "ValueTable":
        copy = ValueTable(self.num_players, self.default, self.terminal_fn)
        copy.table = {k: v.copy() for k, v in self.table.items()}
        copy.visits = dict(self.visits)
        return copy

    def top_visited(self, k: int = 10) -> list:
        ranked = sorted(self.visits.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(key, n, self.table[key].copy()) for key, n in ranked[:k]]

    def __len__(self) -> int:
        return len(self.table)

    # -- serialization (payload only; the checkpoint file adds framing) ------

    def to_bytes(self) -> bytes:
        rows = [struct.pack(">BI", self.num_players, len(self.table))]
        for key in sorted(self.table):
            rows.append(struct.pack(">H", len(key)))
            rows.append(key)
            rows.append(struct.pack(">I", self.visits.get(key, 0)))
            rows.append(struct.pack(f">{self.num_players}d", *self.table[key]))
        return b"".join(rows)

    def load_bytes(self, data: bytes) -> None:
        self.table.clear()
        self.visits.clear()
        try:
            players, n_rows = struct.unpack_from(">BI", data, 0)
            if players != self.num_players:
                raise ValueError("value table player count mismatch")
            at = 5
            for _ in range(n_rows):
                (key_len,) = struct.unpack_from(">H", data, at)
                at += 2
                key = bytes(data[at : at + key_len])
                at += key_len
                (visits,) = struct.unpack_from(">I", data, at)
                at += 4
                vals = struct.unpack_from(f">{players}d", data, at)
                at += 8 * players
                self.table[key] = np.array(vals)
                self.visits[key] = visits
            if at != len(data):
                raise ValueError("trailing bytes in value table")
        except struct.error as e:
            raise ValueError("truncated value table") from e


@dataclass
class TrainTarget:
    """One state's learning targets: values plus per-player mixtures."""

    state_key: bytes
    values: np.ndarray
    action_sets: list
    policies: list
    generation: int = 0


def _action_lists(candidates) -> list:
    return [cs.actions if isinstance(cs, CandidateSet) else list(cs) for cs in candidates]


def stage_game(
    state: State,
    candidates,
    values: ValueTable,
    game: StochasticGame,
) -> RestrictedStageGame:
    """Restricted one-step game: payoff(a) = r(f(s,a)) + γ·V(f(s,a)).

    Successor value lookups are memoized per call, so each distinct child is
    evaluated once no matter how many joint actions reach it.
    """
    if state.terminal:
        raise ValueError("cannot build a stage game at a terminal state")
    lists = _action_lists(candidates)
    gamma = game.discount
    memo: dict = {}

    def payoff(joint_idx):
        joint = tuple(lists[i][j] for i, j in enumerate(joint_idx))
        nxt, r = game.transition(state, joint)
        v = memo.get(nxt.key)
        if v is None:
            v = np.zeros(game.num_players) if nxt.terminal else values.value(nxt)
            memo[nxt.key] = v
        return r + gamma * v

    return RestrictedStageGame(list(range(len(l)) for l in lists), payoff)


def nash_value_update(
    values: ValueTable,
    state: State,
    sigma: list,
    stage: RestrictedStageGame,
    alpha: float,
    *,
    rng: np.random.Generator | None = None,
    action_sets: list | None = None,
    generation: int = 0,
    apply: bool = True,
    exact_cap: int = EXACT_JOINT_CAP,
    mc_samples: int = MC_VALUE_SAMPLES,
) -> TrainTarget:
    """Blend the equilibrium's expected stage payoff into the table.

    The expectation is exact (tensor contraction) when the joint action count
    fits ``exact_cap``; otherwise it is estimated from ``mc_samples`` draws of
    the product profile.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    sigma = [validate_strategy(s) for s in sigma]
    target, _ = expected_values(stage, sigma, rng, exact_cap=exact_cap, mc_samples=mc_samples)
    if not np.all(np.isfinite(target)):
        raise ValueError("value target is not finite")
    if apply:
        values.update(state, target, alpha)
    sets = action_sets if action_sets is not None else stage.actions
    return TrainTarget(state.key, target, sets, sigma, generation)


def _mixed_or_explore(css, sigmas, epsilon, rng):
    joint = []
    for cs, sig in zip(css, sigmas):
        actions = cs.actions if isinstance(cs, CandidateSet) else cs
        if rng.random() < epsilon:
            joint.append(actions[int(rng.integers(len(actions)))])
        else:
            joint.append(actions[sample_index(rng, sig)])
    return tuple(joint)


def selfplay_episode(
    game: StochasticGame,
    values: ValueTable,
    proposal,
    schedule: ExploreSchedule,
    solver: SolverParams,
    rng: np.random.Generator,
    *,
    alpha=0.1,
    candidate_fn=None,
    n_samples: int = 250,
    n_keep: int = 50,
    per_unit_cap: int | None = None,
    apply_updates: bool = True,
    generation: int = 0,
) -> tuple[Trajectory, list]:
    """One ε-Nash self-play episode.

    At every state: build per-player candidate sets (``candidate_fn`` lets the
    runner substitute double-oracle-expanded sets), solve the restricted stage
    game, record a TrainTarget, then each player independently follows its
    mixture with probability 1−ε(turn) and a uniform candidate otherwise.
    ``alpha`` may be a float or a function of the state's prior visit count.
    """
    state = game.initial_state()
    states, joints, rewards, targets = [state], [], [], []
    while not state.terminal:
        if candidate_fn is not None:
            css = candidate_fn(state, rng)
        else:
            css = [
                proposal.candidates(
                    state, p, rng, n_samples=n_samples, n_keep=n_keep,
                    per_unit_cap=per_unit_cap,
                )
                for p in range(game.num_players)
            ]
        stage = stage_game(state, css, values, game)
        res = solver.solve(stage, rng)
        a = alpha(values.visit_count(state)) if callable(alpha) else alpha
        targets.append(
            nash_value_update(
                values, state, res.strategies, stage, a,
                rng=rng, action_sets=_action_lists(css),
                generation=generation, apply=apply_updates,
            )
        )
        joint = _mixed_or_explore(css, res.strategies, schedule.epsilon(state.turn), rng)
        state, r = game.transition(state, joint)
        states.append(state)
        joints.append(joint)
        rewards.append(r)
    return Trajectory(states, joints, rewards), targets


def pretrain_episode(
    game: StochasticGame,
    values: ValueTable,
    n_candidates: int,
    solver: SolverParams,
    rng: np.random.Generator,
    *,
    alpha=0.1,
    apply_updates: bool = True,
    generation: int = 0,
) -> tuple[Trajectory, list]:
    """Outcome-regression episode used before self-play training.

    Candidates are uniform draws from the legal actions (the proposal model
    is not consulted); equilibria are solved as usual and kept as policy
    targets, but every visited state's value target is replaced by the
    realized final reward, discounted back through the turns that remained.
    """
    state = game.initial_state()
    states, joints, rewards, targets = [state], [], [], []
    stages: list = []
    while not state.terminal:
        css = []
        for p in range(game.num_players):
            draws = [
                game.sample_uniform_action(state, p, rng) for _ in range(n_candidates)
            ]
            unique = list(dict.fromkeys(draws))
            css.append(unique)
        stage = stage_game(state, css, values, game)
        res = solver.solve(stage, rng)
        stages.append((state, css, res.strategies))
        joint = tuple(
            css[p][sample_index(rng, res.strategies[p])]
            for p in range(game.num_players)
        )
        state, r = game.transition(state, joint)
        states.append(state)
        joints.append(joint)
        rewards.append(r)

    final = rewards[-1] if rewards else np.zeros(game.num_players)
    horizon = len(rewards)
    for t, (s, css, sigmas) in enumerate(stages):
        target = (game.discount ** (horizon - 1 - t)) * np.asarray(final, dtype=float)
        if not np.all(np.isfinite(target)):
            raise ValueError("value target is not finite")
        if apply_updates:
            a = alpha(values.visit_count(s)) if callable(alpha) else alpha
            values.update(s, target, a)
        targets.append(TrainTarget(s.key, target, css, sigmas, generation))
    return Trajectory(states, joints, rewards), targets


def tabular_convergence_run(
    game: StochasticGame,
    *,
    mode: str = "sweep",
    budget: int = 8,
    solver: SolverParams = SolverParams(),
    c: float = 1.0,
    epsilon: float = 0.2,
    rng: np.random.Generator | None = None,
    enum=None,
    max_states: int = 10_000,
    max_joint_actions: int = 4096,
    values: ValueTable | None = None,
) -> ValueTable:
    """Run value iteration with full candidate sets and a decaying step size.

    Sweep mode visits every reachable state in descending turn order each
    pass; self-play mode runs ε-exploring episodes.  Both use the per-state
    step size α = c/(c+visits), so estimates are running averages of the
    stage solutions and the table converges toward the minimax values.
    Pass ``values`` to continue training an existing table (checkpointing).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if values is None:
        values = ValueTable.for_game(game)
    if mode == "selfplay":
        schedule = ExploreSchedule.flat(epsilon)
        alpha_fn = lambda visits: c / (c + visits)  # noqa: E731
        full_sets = lambda state, _rng: [  # noqa: E731
            game.legal_actions(state, p) for p in range(game.num_players)
        ]
        for _ in range(budget):
            selfplay_episode(
                game, values, None, schedule, solver, rng,
                alpha=alpha_fn, candidate_fn=full_sets,
            )
        return values
    if mode != "sweep":
        raise ValueError(f"unknown mode {mode!r}")

    if enum is None:
        enum = enumerate_reachable_2p(game, max_states, max_joint_actions)
    n = enum.num_states
    dense = np.array([values.value(s) for s in enum.states])
    order = sorted(range(n), key=lambda i: enum.states[i].turn, reverse=True)
    for _ in range(budget):
        for i in order:
            state = enum.states[i]
            p0, p1 = enum.stage_payoffs(i, dense)
            stage = RestrictedStageGame.from_tensors([p0, p1])
            res = solver.solve(stage, rng)
            a = c / (c + values.visit_count(state))
            nash_value_update(values, state, res.strategies, stage, a, rng=rng)
            dense[i] = values.value(state)
    return values
