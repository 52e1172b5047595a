"""Stage-game solvers for simultaneous-move games.

The workhorse is sampled regret matching: every iteration each player samples a
joint action profile from the current regret-matching policies, then updates
its regrets against the sampled opponents using its full payoff row

    instant(a_i) = v_i(a_i, a*_{-i}) - sum_{a'} sigma_i(a') v_i(a', a*_{-i})

Two standard accelerations are on by default:

* linear weighting -- iteration t's update carries weight t, implemented by
  discounting both accumulators by t/(t+1) before each update, which is
  equivalent and keeps the numbers bounded;
* optimism -- the most recent instant regret is counted a second time when
  forming the sampling policy (the stored accumulator is left untouched).

The time-averaged policy (normalised ``cum_policy``) is the equilibrium
estimate.  For two-player zero-sum games there is also an exact oracle,
``exact_ne_2p0s``, built on linear programming with an indifference-system
refinement so the returned strategies are accurate to machine precision on
small games.  The oracle deliberately shares no code with the regret-matching
path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

STRATEGY_TOL = 1e-9
ZERO_SUM_TOL = 1e-9

# Above this many joint actions, expectations switch from exact enumeration to
# Monte Carlo sampling.
EXACT_JOINT_CAP = 10**6
MC_VALUE_SAMPLES = 10_000


def uniform_strategy(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def validate_strategy(probs: np.ndarray, tol: float = STRATEGY_TOL) -> np.ndarray:
    """Check simplex membership; returns the array unchanged."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("strategy must be a non-empty 1-D array")
    if np.min(probs) < -tol:
        raise ValueError(f"strategy has negative entry {np.min(probs)}")
    if abs(float(np.sum(probs)) - 1.0) > tol:
        raise ValueError(f"strategy sums to {float(np.sum(probs))}, not 1")
    return probs


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector."""
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, probs.size - 1)


class RestrictedStageGame:
    """A finite simultaneous-move game over explicit per-player action lists.

    ``payoff_fn`` maps a tuple of per-player action indices to a sequence of
    per-player payoffs.  Payoffs are cached lazily; ``payoff_tensors`` builds
    the full joint tensor once (only sensible when ``joint_count`` is small).
    """

    def __init__(self, actions, payoff_fn, zero_sum: bool = False):
        actions = [list(a) for a in actions]
        if not actions or any(len(a) == 0 for a in actions):
            raise ValueError("every player needs at least one action")
        self.actions = actions
        self.payoff_fn = payoff_fn
        self.zero_sum = zero_sum
        self._tensors: list[np.ndarray] | None = None

    @property
    def num_players(self) -> int:
        return len(self.actions)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.actions)

    @property
    def joint_count(self) -> int:
        out = 1
        for a in self.actions:
            out *= len(a)
        return out

    def payoff(self, joint: tuple[int, ...]) -> np.ndarray:
        if self._tensors is not None:
            return np.array([t[joint] for t in self._tensors])
        return np.asarray(self.payoff_fn(joint), dtype=float)

    def payoff_tensors(self) -> list[np.ndarray]:
        """Materialise per-player payoff tensors indexed by the joint profile."""
        if self._tensors is None:
            counts = self.action_counts
            tensors = [np.empty(counts) for _ in range(self.num_players)]
            for joint in np.ndindex(*counts):
                vals = self.payoff_fn(joint)
                for i in range(self.num_players):
                    tensors[i][joint] = vals[i]
            self._tensors = tensors
        return self._tensors

    @classmethod
    def from_tensors(cls, tensors, zero_sum: bool = False) -> "RestrictedStageGame":
        tensors = [np.asarray(t, dtype=float) for t in tensors]
        shape = tensors[0].shape
        if len(shape) != len(tensors) or any(t.shape != shape for t in tensors):
            raise ValueError("tensors must all have shape (n_1, ..., n_N)")
        game = cls(
            actions=[list(range(n)) for n in shape],
            payoff_fn=lambda joint: [t[joint] for t in tensors],
            zero_sum=zero_sum,
        )
        game._tensors = tensors
        return game

    @classmethod
    def from_matrix(cls, matrix) -> "RestrictedStageGame":
        """Two-player zero-sum game from the row player's payoff matrix."""
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("payoff matrix must be 2-D")
        return cls.from_tensors([m, -m], zero_sum=True)

    def validate_zero_sum(self, tol: float = ZERO_SUM_TOL) -> None:
        total = np.zeros(self.action_counts)
        for t in self.payoff_tensors():
            total = total + t
        worst = float(np.max(np.abs(total)))
        if worst > tol:
            raise ValueError(f"game flagged zero-sum but payoffs sum to {worst:.3g}")


@dataclass
class RegretState:
    """Per-player regret-matching accumulators."""

    cum_regret: np.ndarray
    cum_policy: np.ndarray
    last_instant: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, n: int) -> "RegretState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def policy(self, optimism: bool = True) -> np.ndarray:
        effective = self.cum_regret + self.last_instant if optimism else self.cum_regret
        positive = np.maximum(effective, 0.0)
        total = float(positive.sum())
        if total > 0.0:
            return positive / total
        return uniform_strategy(self.cum_regret.size)

    def average_policy(self) -> np.ndarray:
        total = float(self.cum_policy.sum())
        if total > 0.0:
            return self.cum_policy / total
        return uniform_strategy(self.cum_policy.size)


@dataclass
class EquilibriumResult:
    strategies: list[np.ndarray]
    values: np.ndarray
    iterations_run: int
    value_samples: int | None = None


def regret_matching_policy(state: RegretState, optimism: bool = True) -> np.ndarray:
    """Positive-part-normalised policy; uniform when nothing is positive."""
    return state.policy(optimism)


def _own_payoff_row(game, tensors, player, joint):
    """Payoffs for every own action against the fixed sampled opponents."""
    if tensors is not None:
        index = tuple(joint[:player]) + (slice(None),) + tuple(joint[player + 1 :])
        return tensors[player][index]
    n = game.action_counts[player]
    row = np.empty(n)
    probe = list(joint)
    for k in range(n):
        probe[player] = k
        row[k] = game.payoff(tuple(probe))[player]
    return row


def sampled_rm_step(
    game: RestrictedStageGame,
    states: list[RegretState],
    rng: np.random.Generator,
    *,
    optimism: bool = True,
    linear: bool = True,
    tensors: list[np.ndarray] | None = None,
) -> tuple[int, ...]:
    """One sampled update for every player; returns the sampled joint profile."""
    policies = [st.policy(optimism) for st in states]
    joint = tuple(sample_index(rng, p) for p in policies)
    for i, st in enumerate(states):
        row = _own_payoff_row(game, tensors, i, joint)
        instant = row - float(policies[i] @ row)
        if linear and st.iteration > 0:
            d = st.iteration / (st.iteration + 1)
            st.cum_regret *= d
            st.cum_policy *= d
        st.cum_regret += instant
        st.cum_policy += policies[i]
        st.last_instant = instant
        st.iteration += 1
    return joint


def expected_values(
    game: RestrictedStageGame,
    strategies: list[np.ndarray],
    rng: np.random.Generator | None = None,
    *,
    exact_cap: int = EXACT_JOINT_CAP,
    mc_samples: int = MC_VALUE_SAMPLES,
) -> tuple[np.ndarray, int | None]:
    """Per-player expected payoffs under a product strategy profile.

    Exact tensor contraction when the joint space fits under ``exact_cap``,
    otherwise a Monte Carlo estimate (sample count is returned alongside).
    """
    n = game.num_players
    if game.joint_count <= exact_cap:
        tensors = game.payoff_tensors()
        values = np.empty(n)
        for i in range(n):
            t = tensors[i]
            for sigma in reversed(strategies):
                t = t @ sigma
            values[i] = float(t)
        return values, None
    if rng is None:
        rng = np.random.default_rng(0)
    totals = np.zeros(n)
    counts = game.action_counts
    draws = [rng.choice(counts[i], size=mc_samples, p=strategies[i]) for i in range(n)]
    for s in range(mc_samples):
        totals += game.payoff(tuple(int(draws[i][s]) for i in range(n)))
    return totals / mc_samples, mc_samples


def solve_restricted(
    game: RestrictedStageGame,
    iterations: int,
    rng: np.random.Generator,
    *,
    optimism: bool = True,
    linear: bool = True,
    exact_cap: int = EXACT_JOINT_CAP,
    mc_samples: int = MC_VALUE_SAMPLES,
) -> EquilibriumResult:
    """Run sampled regret matching and return time-averaged strategies."""
    if iterations < 1:
        raise ValueError("need at least one iteration")
    states = [RegretState.zeros(n) for n in game.action_counts]
    tensors = game.payoff_tensors() if game.joint_count <= exact_cap else None
    for _ in range(iterations):
        sampled_rm_step(
            game, states, rng, optimism=optimism, linear=linear, tensors=tensors
        )
    strategies = [st.average_policy() for st in states]
    values, samples = expected_values(
        game, strategies, rng, exact_cap=exact_cap, mc_samples=mc_samples
    )
    return EquilibriumResult(strategies, values, iterations, samples)


def solve_one_sided(
    game: RestrictedStageGame,
    player: int,
    fixed_strategies: list[np.ndarray],
    iterations: int,
    rng: np.random.Generator,
    *,
    optimism: bool = True,
    linear: bool = True,
) -> EquilibriumResult:
    """Regret matching for one player against frozen opponent strategies.

    Only ``player`` accumulates regrets; all other seats sample from their
    entry in ``fixed_strategies`` each iteration.  The averaged policy
    converges on a best-response mixture against the frozen profile.
    """
    n = game.num_players
    counts = game.action_counts
    st = RegretState.zeros(counts[player])
    tensors = game.payoff_tensors() if game.joint_count <= EXACT_JOINT_CAP else None
    for _ in range(iterations):
        sigma = st.policy(optimism)
        joint = tuple(
            sample_index(rng, sigma if i == player else fixed_strategies[i])
            for i in range(n)
        )
        row = _own_payoff_row(game, tensors, player, joint)
        instant = row - float(sigma @ row)
        if linear and st.iteration > 0:
            d = st.iteration / (st.iteration + 1)
            st.cum_regret *= d
            st.cum_policy *= d
        st.cum_regret += instant
        st.cum_policy += sigma
        st.last_instant = instant
        st.iteration += 1
    strategies = [
        st.average_policy() if i == player else np.asarray(fixed_strategies[i], dtype=float)
        for i in range(n)
    ]
    values, samples = expected_values(game, strategies, rng)
    return EquilibriumResult(strategies, values, iterations, samples)


# ---------------------------------------------------------------------------
# Exact two-player constant-sum oracle
# ---------------------------------------------------------------------------

ORACLE_ACTION_CAP = 12


def _minimax_lp(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Maximin strategy and value for the row player of a zero-sum matrix."""
    rows, cols = m.shape
    # Variables: x_1..x_rows, v.  Maximise v subject to M^T x >= v.
    c = np.zeros(rows + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-m.T, np.ones((cols, 1))])
    b_ub = np.zeros(cols)
    a_eq = np.zeros((1, rows + 1))
    a_eq[0, :rows] = 1.0
    bounds = [(0.0, 1.0)] * rows + [(None, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"minimax LP failed: {res.message}")
    x = np.maximum(res.x[:rows], 0.0)
    x /= x.sum()
    return x, float(res.x[-1])


def _refine_supports(m, x, y, v):
    """Re-solve the indifference equations on the LP supports.

    The LP identifies the supports; solving the indifference linear systems on
    them recovers the strategies to machine precision.  Returns ``None`` when
    the refined solution fails the equilibrium check (degenerate supports).
    """
    sup_r = np.flatnonzero(x > 1e-9)
    sup_c = np.flatnonzero(y > 1e-9)
    if sup_r.size == 0 or sup_c.size == 0:
        return None
    # Row strategy: payoffs equal across the column support, masses sum to 1.
    a = np.zeros((sup_c.size + 1, sup_r.size + 1))
    a[: sup_c.size, : sup_r.size] = m[np.ix_(sup_r, sup_c)].T
    a[: sup_c.size, -1] = -1.0
    a[-1, : sup_r.size] = 1.0
    b = np.zeros(sup_c.size + 1)
    b[-1] = 1.0
    sol_r, *_ = np.linalg.lstsq(a, b, rcond=None)
    a2 = np.zeros((sup_r.size + 1, sup_c.size + 1))
    a2[: sup_r.size, : sup_c.size] = m[np.ix_(sup_r, sup_c)]
    a2[: sup_r.size, -1] = -1.0
    a2[-1, : sup_c.size] = 1.0
    b2 = np.zeros(sup_r.size + 1)
    b2[-1] = 1.0
    sol_c, *_ = np.linalg.lstsq(a2, b2, rcond=None)

    rx = np.zeros_like(x)
    rx[sup_r] = sol_r[:-1]
    ry = np.zeros_like(y)
    ry[sup_c] = sol_c[:-1]
    rv = float(sol_r[-1])
    if np.min(rx) < -1e-10 or np.min(ry) < -1e-10:
        return None
    rx = np.maximum(rx, 0.0)
    rx /= rx.sum()
    ry = np.maximum(ry, 0.0)
    ry /= ry.sum()
    if abs(rv - float(sol_c[-1])) > 1e-8:
        return None
    # Full equilibrium conditions.
    if np.min(m.T @ rx) < rv - 1e-10 or np.max(m @ ry) > rv + 1e-10:
        return None
    return rx, ry, rv


def exact_ne_2p0s(
    game: RestrictedStageGame,
    max_actions: int | None = ORACLE_ACTION_CAP,
) -> EquilibriumResult:
    """Exact equilibrium of a two-player constant-sum game.

    Zero-sum is the common case; any constant payoff sum is accepted since the
    shift does not change the equilibrium.  ``max_actions`` (default 12 per
    side) guards against accidental large inputs; pass ``None`` to lift it
    when the caller knows the game is manageable.
    """
    if game.num_players != 2:
        raise ValueError(f"oracle handles exactly 2 players, got {game.num_players}")
    n0, n1 = game.action_counts
    if max_actions is not None and max(n0, n1) > max_actions:
        raise ValueError(f"oracle size exceeded: {n0}x{n1} actions, cap {max_actions}")
    p0, p1 = game.payoff_tensors()[:2]
    total = p0 + p1
    const = float(total.flat[0])
    if float(np.max(np.abs(total - const))) > ZERO_SUM_TOL:
        raise ValueError("oracle requires a constant-sum game")
    m = p0 - const / 2.0

    x, v_row = _minimax_lp(m)
    y, v_col_neg = _minimax_lp(-m.T)
    v = (v_row - v_col_neg) / 2.0
    refined = _refine_supports(m, x, y, v)
    if refined is not None:
        x, y, v = refined
    values = np.array([v + const / 2.0, const - (v + const / 2.0)])
    return EquilibriumResult([x, y], values, iterations_run=0)


def best_response_value(
    game: RestrictedStageGame,
    player: int,
    strategies: list[np.ndarray],
    *,
    eval_cap: int = 10**7,
) -> tuple[int, float]:
    """Best pure action and its value against fixed opponent strategies.

    Exact expectation over the opponents' support product; ties break toward
    the lowest action index.  ``strategies[player]`` is ignored.
    """
    n = game.num_players
    own = game.action_counts[player]
    supports = []
    for j in range(n):
        if j == player:
            continue
        sigma = validate_strategy(strategies[j])
        supports.append((j, np.flatnonzero(sigma > 0.0), sigma))
    combos = 1
    for _, sup, _ in supports:
        combos *= sup.size
    if own * combos > eval_cap:
        raise ValueError(f"best-response evaluation too large: {own * combos}")
    vals = np.zeros(own)
    joint = [0] * n
    for combo in itertools.product(*[sup for _, sup, _ in supports]):
        w = 1.0
        for (j, _, sigma), a in zip(supports, combo):
            joint[j] = int(a)
            w *= float(sigma[a])
        if w == 0.0:
            continue
        for k in range(own):
            joint[player] = k
            vals[k] += w * float(game.payoff(tuple(joint))[player])
    best = int(np.argmax(vals))
    return best, float(vals[best])
