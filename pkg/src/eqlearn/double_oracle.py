"""Equilibrium-restricted best-response search over candidate action sets.

Starting from per-player candidate sets, repeatedly: solve the restricted
stage game, then for one player at a time generate a pool of alternative
actions and test whether any of them beats the player's current equilibrium
value against the (truncated) opponent mixture.  A profitable action joins
the player's candidate set and the equilibrium is recomputed immediately;
the search stops when a full pass adds nothing or the iteration budget runs
out.

Two pool generators are provided: uniform sampling over the full action
space, and local modification — re-randomizing the orders of the units near
one sampled map location within an already-good action, so coordinated
combinations (matching move plus support) appear at realistic rates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .matrix_games import EquilibriumResult, RestrictedStageGame, sample_index
from .nashvi import SolverParams, ValueTable
from .proposal import CandidateSet
from .stogame import State, StochasticGame

OPP_JOINT_CAP = 10_000
OPP_MC_SAMPLES = 1_000
FULL_BR_CAP = 100_000


@dataclass(frozen=True)
class DoConfig:
    """Search budget and generator selection."""

    pool_size: int = 1000
    top_k: int = 8
    epsilon: float = 0.04
    iterations: int = 6
    generator: str = "local_modification"  # uniform | local_modification | full
    n_base: int = 4
    recompute_pool: bool = False

    def __post_init__(self):
        if self.pool_size < 1 or self.top_k < 1 or self.iterations < 1 or self.n_base < 1:
            raise ValueError("pool_size, top_k, iterations, n_base must be >= 1")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")
        if self.generator not in ("uniform", "local_modification", "full"):
            raise ValueError(f"unknown generator {self.generator!r}")

    @classmethod
    def training(cls, **overrides) -> "DoConfig":
        base = dict(pool_size=1000, top_k=8, epsilon=0.04, iterations=6,
                    recompute_pool=False)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def inference(cls, **overrides) -> "DoConfig":
        base = dict(pool_size=10_000, top_k=20, epsilon=0.01, iterations=16,
                    recompute_pool=True)
        base.update(overrides)
        return cls(**base)


@dataclass
class DoStep:
    """One player visit: the gain found and the action added (if any).

    ``value_after`` is the player's recomputed equilibrium value right after
    its addition (opponent sets unchanged at that point); None when nothing
    was added.
    """

    iteration: int
    player: int
    baseline: float
    best_value: float
    added: object
    pool_size: int
    sigmas: list
    value_after: float | None = None

    @property
    def gain(self) -> float:
        return self.best_value - self.baseline


@dataclass
class DoOutcome:
    candidates: list
    result: EquilibriumResult
    log: list
    iterations_run: int


class StagePayoffEvaluator:
    """Payoff oracle r(f(s,a)) + γ·V(f(s,a)) for one state, memoized on both
    the joint action and the successor, so candidate-set growth and pool
    evaluation share transition work."""

    def __init__(self, game: StochasticGame, state: State, values: ValueTable):
        if state.terminal:
            raise ValueError("cannot evaluate payoffs at a terminal state")
        self.game = game
        self.state = state
        self.values = values
        self._joint_memo: dict = {}
        self._value_memo: dict = {}

    def payoff(self, joint: tuple) -> np.ndarray:
        got = self._joint_memo.get(joint)
        if got is None:
            nxt, r = self.game.transition(self.state, joint)
            v = self._value_memo.get(nxt.key)
            if v is None:
                v = (
                    np.zeros(self.game.num_players)
                    if nxt.terminal
                    else self.values.value(nxt)
                )
                self._value_memo[nxt.key] = v
            got = r + self.game.discount * v
            self._joint_memo[joint] = got
        return got


def truncate_mixture(actions, sigma, k: int):
    """Keep the k most probable actions (ties by index) and renormalize."""
    sigma = np.asarray(sigma, dtype=float)
    order = sorted(range(len(actions)), key=lambda i: (-sigma[i], i))[:k]
    kept = [actions[i] for i in order]
    probs = sigma[order]
    total = probs.sum()
    if total <= 0.0:
        probs = np.full(len(kept), 1.0 / len(kept))
    else:
        probs = probs / total
    return kept, probs


def response_value(
    evaluator: StagePayoffEvaluator,
    player: int,
    action,
    opponent_mixtures: dict,
    rng: np.random.Generator | None = None,
    *,
    joint_cap: int = OPP_JOINT_CAP,
    mc_samples: int = OPP_MC_SAMPLES,
) -> float:
    """Expected payoff of ``action`` against independent opponent mixtures.

    ``opponent_mixtures`` maps every other seat to (actions, probabilities).
    Exact product expectation up to ``joint_cap`` opponent combinations,
    Monte Carlo beyond.
    """
    n = evaluator.game.num_players
    seats = [p for p in range(n) if p != player]
    combos = 1
    for p in seats:
        combos *= len(opponent_mixtures[p][0])

    def assemble(opp_choice):
        joint = [None] * n
        joint[player] = action
        for p, a in zip(seats, opp_choice):
            joint[p] = a
        return tuple(joint)

    if combos <= joint_cap:
        total = 0.0
        for opp_choice in itertools.product(*(opponent_mixtures[p][0] for p in seats)):
            w = 1.0
            for p, a in zip(seats, opp_choice):
                acts, probs = opponent_mixtures[p]
                w *= probs[acts.index(a)]
            if w == 0.0:
                continue
            total += w * evaluator.payoff(assemble(opp_choice))[player]
        return float(total)

    if rng is None:
        rng = np.random.default_rng(0)
    total = 0.0
    for _ in range(mc_samples):
        opp_choice = [
            opponent_mixtures[p][0][sample_index(rng, opponent_mixtures[p][1])]
            for p in seats
        ]
        total += evaluator.payoff(assemble(opp_choice))[player]
    return float(total / mc_samples)


# ---------------------------------------------------------------------------
# Pool generators
# ---------------------------------------------------------------------------


def generate_pool_uniform(
    game: StochasticGame,
    state: State,
    player: int,
    n_pool: int,
    rng: np.random.Generator,
) -> list:
    """n_pool uniform draws over the player's action space, deduplicated."""
    draws = [game.sample_uniform_action(state, player, rng) for _ in range(n_pool)]
    return list(dict.fromkeys(draws))


def generate_pool_local(
    game: StochasticGame,
    state: State,
    player: int,
    base_actions,
    sigma,
    n_pool: int,
    n_base: int,
    rng: np.random.Generator,
    *,
    beta: float = 0.5,
    max_attempt_factor: int = 10,
) -> list:
    """Coordinated re-randomization around sampled map locations.

    Each attempt takes one of the ``n_base`` most probable base actions,
    samples a location, and rewrites the orders of the player's units
    adjacent to it: first a uniform hold-or-move draft per unit, then each
    rewritten unit switches (probability ``beta``) to supporting one of the
    moves just drafted inside the same neighborhood.  Orders of units away
    from the location are kept from the base action, so good global
    structure survives while local combinations get explored jointly.
    """
    graph = getattr(game, "graph", None)
    if graph is None:
        raise ValueError("local modification needs a board game with a map graph")
    sigma = np.asarray(sigma, dtype=float)
    if len(base_actions) == 0:
        raise ValueError("local modification needs a non-empty base set")
    ranked = sorted(
        range(len(base_actions)), key=lambda i: (-sigma[i], base_actions[i])
    )
    bases = [base_actions[i] for i in ranked[: min(n_base, len(base_actions))]]
    own = state.units[player]
    adjacency = {u: sorted(graph.neighbors(u)) for u in range(graph.num_nodes)}

    pool: dict = {}
    attempts = 0
    limit = max_attempt_factor * n_pool
    while len(pool) < n_pool and attempts < limit:
        attempts += 1
        base = bases[int(rng.integers(len(bases)))]
        loc = int(rng.integers(graph.num_nodes))
        clique = set(adjacency[loc])
        draft = {order[1]: order for order in base}
        rewrite = [u for u in own if u in clique]
        for u in rewrite:
            menu = [("H", u)] + [("M", u, d) for d in adjacency[u]]
            draft[u] = menu[int(rng.integers(len(menu)))]
        snapshot = dict(draft)
        for u in rewrite:
            if rng.random() >= beta:
                continue
            options = [
                ("SM", u, s, snapshot[s][2])
                for s in rewrite
                if s != u
                and snapshot[s][0] == "M"
                and snapshot[s][2] in graph.neighbors(u)
            ]
            if options:
                draft[u] = options[int(rng.integers(len(options)))]
        pool[tuple(draft[u] for u in own)] = None
    return list(pool)


def _generate_pool(game, state, player, css, sigmas, cfg, rng):
    if cfg.generator == "uniform":
        return generate_pool_uniform(game, state, player, cfg.pool_size, rng)
    if cfg.generator == "full":
        return list(game.legal_actions(state, player))
    return generate_pool_local(
        game, state, player, css[player], sigmas[player],
        cfg.pool_size, cfg.n_base, rng,
    )


# ---------------------------------------------------------------------------
# Exhaustive best response (oracle for gap measurements)
# ---------------------------------------------------------------------------


def exact_best_response_full(
    game: StochasticGame,
    state: State,
    player: int,
    opponent_mixtures: dict,
    values: ValueTable,
    *,
    cap: int = FULL_BR_CAP,
    evaluator: StagePayoffEvaluator | None = None,
) -> tuple:
    """Best action over the player's entire legal space vs fixed mixtures.

    Ties break toward the canonically first action (legal_actions order).
    """
    count = game.action_count(state, player)
    if count > cap:
        raise ValueError(f"action space {count} exceeds the {cap} cap")
    if evaluator is None:
        evaluator = StagePayoffEvaluator(game, state, values)
    best_action, best_value = None, -np.inf
    for action in game.legal_actions(state, player):
        v = response_value(evaluator, player, action, opponent_mixtures)
        if v > best_value:
            best_action, best_value = action, v
    return best_action, float(best_value)


# ---------------------------------------------------------------------------
# The search loop
# ---------------------------------------------------------------------------


def _as_action_list(cs):
    return list(cs.actions) if isinstance(cs, CandidateSet) else list(cs)


def find_equilibrium_with_do(
    state: State,
    initial,
    values: ValueTable,
    game: StochasticGame,
    cfg: DoConfig,
    solver: SolverParams,
    rng: np.random.Generator,
) -> DoOutcome:
    """Grow candidate sets one profitable best response at a time.

    One player is examined per step; its pool actions are scored against the
    other players' current mixtures truncated to their ``top_k`` most likely
    candidates (renormalized).  An action beating the player's equilibrium
    value by more than ``epsilon`` is appended and the restricted equilibrium
    recomputed before the next player is examined.
    """
    css = [_as_action_list(cs) for cs in initial]
    if any(len(c) == 0 for c in css):
        raise ValueError("initial candidate sets must be non-empty")
    n = game.num_players
    evaluator = StagePayoffEvaluator(game, state, values)

    def solve():
        stage = RestrictedStageGame(
            [list(range(len(c))) for c in css],
            lambda idx: evaluator.payoff(tuple(css[p][i] for p, i in enumerate(idx))),
        )
        return solver.solve(stage, rng)

    res = solve()
    log: list = []
    pools: dict = {}
    iterations_run = 0
    for iteration in range(cfg.iterations):
        iterations_run = iteration + 1
        modified = False
        for player in range(n):
            if cfg.recompute_pool or player not in pools:
                pools[player] = _generate_pool(
                    game, state, player, css, res.strategies, cfg, rng
                )
            pool = pools[player]
            mixtures = {
                p: truncate_mixture(css[p], res.strategies[p], cfg.top_k)
                for p in range(n)
                if p != player
            }
            best_action, best_value = None, -np.inf
            for action in sorted(pool):
                v = response_value(evaluator, player, action, mixtures, rng)
                if v > best_value:
                    best_action, best_value = action, v
            baseline = float(res.values[player])
            added = None
            if (
                best_action is not None
                and best_value - baseline > cfg.epsilon
                and best_action not in css[player]
            ):
                added = best_action
                css[player].append(best_action)
                modified = True
            step = DoStep(
                iteration, player, baseline, float(best_value), added,
                len(pool), [s.copy() for s in res.strategies],
            )
            log.append(step)
            if added is not None:
                res = solve()
                step.value_after = float(res.values[player])
        if not modified:
            break

    final = []
    for p in range(n):
        if isinstance(initial[p], CandidateSet):
            base_liks = np.asarray(initial[p].likelihoods, dtype=float)
        else:
            base_liks = np.full(len(initial[p]), 1.0 / len(initial[p]))
        extra = len(css[p]) - len(base_liks)
        final.append(
            CandidateSet(css[p], np.concatenate([base_liks, np.zeros(extra)]))
        )
    return DoOutcome(final, res, log, iterations_run)
