"""Agent evaluation: head-to-head matches, rollout value estimation,
best-response exploiter training, and variance-reduced scoring.

An :class:`Agent` bundles frozen value/proposal snapshots with search
settings.  Matches let every seat compute its own equilibrium independently
and sample only its own mixture; scores are reported raw and with the
own-randomization luck term subtracted out.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .double_oracle import (
    OPP_JOINT_CAP,
    OPP_MC_SAMPLES,
    DoConfig,
    StagePayoffEvaluator,
    _generate_pool,
    find_equilibrium_with_do,
    response_value,
)
from .matrix_games import sample_index, solve_one_sided, validate_strategy
from .nashvi import (
    ExploreSchedule,
    SolverParams,
    ValueTable,
    _action_lists,
    nash_value_update,
    stage_game,
)
from .proposal import CandidateSet, ProposalModel, tuple_key
from .stogame import State, StochasticGame

ROLLOUT_TEMPERATURE = 0.75
ROLLOUT_TOP_P = 0.95
VICTIM_POLICY_SAMPLES = 3


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


def _uniform_set(actions) -> CandidateSet:
    acts = list(actions)
    return CandidateSet(acts, np.full(len(acts), 1.0 / len(acts)))


@dataclass(frozen=True)
class Agent:
    """A frozen playing configuration: tables plus search settings.

    The value table and proposal model are snapshotted at construction, so
    later training never changes how this agent plays.  ``candidate_fn(game,
    state, player, rng) -> actions`` overrides candidate generation;
    ``policy_fn(game, state, seat, rng) -> (actions, probs)`` bypasses the
    equilibrium computation entirely (scripted opponents and oracles).
    """

    label: str
    values: ValueTable
    proposal: ProposalModel | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    do_config: DoConfig | None = None
    rollout_depth: int = 0
    rollout_samples: int = 16
    n_samples: int = 250
    n_keep: int = 50
    per_unit_cap: int | None = None
    candidate_fn: object = None
    policy_fn: object = None

    def __post_init__(self):
        object.__setattr__(self, "values", self.values.snapshot())
        if self.proposal is not None:
            object.__setattr__(self, "proposal", self.proposal.snapshot())
        if self.rollout_depth < 0:
            raise ValueError("rollout depth must be >= 0")

    # -- candidate generation -------------------------------------------------

    def candidates_at(
        self, game: StochasticGame, state: State, player: int, rng
    ) -> CandidateSet:
        if self.candidate_fn is not None:
            return _uniform_set(self.candidate_fn(game, state, player, rng))
        if self.proposal is not None:
            return self.proposal.candidates(
                state, player, rng,
                n_samples=self.n_samples, n_keep=self.n_keep,
                per_unit_cap=self.per_unit_cap,
            )
        return _uniform_set(game.legal_actions(state, player))

    def value_view(self, game: StochasticGame, rng):
        """State-value lookup used inside stage games; rollout-augmented
        when this agent is configured with a rollout depth."""
        if self.rollout_depth == 0:
            return self.values
        return _RolloutView(self, game, rng)

    # -- play ------------------------------------------------------------------

    def compute_equilibrium(self, game: StochasticGame, state: State, rng):
        """(candidate sets, equilibrium result) for the full joint stage."""
        css = [
            self.candidates_at(game, state, p, rng)
            for p in range(game.num_players)
        ]
        view = self.value_view(game, rng)
        if self.do_config is not None:
            out = find_equilibrium_with_do(
                state, css, view, game, self.do_config, self.solver, rng
            )
            return out.candidates, out.result
        stage = stage_game(state, css, view, game)
        return css, self.solver.solve(stage, rng)

    def seat_policy(self, game: StochasticGame, state: State, seat: int, rng):
        """(actions, probs) this agent commits to at ``seat``."""
        if self.policy_fn is not None:
            actions, probs = self.policy_fn(game, state, seat, rng)
            return list(actions), validate_strategy(probs)
        css, res = self.compute_equilibrium(game, state, rng)
        return _action_lists(css)[seat], res.strategies[seat]

    def q_values(
        self, game: StochasticGame, state: State, seat: int,
        own_actions, observed_others: dict, rng,
    ) -> np.ndarray:
        """Own-candidate action values given the realized opponent joint,
        from this agent's own value model: Q = r + gamma * V(successor)."""
        view = self.value_view(game, rng)
        gamma = game.discount
        out = np.empty(len(own_actions))
        for k, a in enumerate(own_actions):
            joint = tuple(
                a if p == seat else observed_others[p]
                for p in range(game.num_players)
            )
            nxt, r = game.transition(state, joint)
            v = 0.0 if nxt.terminal else view.value(nxt)[seat]
            out[k] = r[seat] + gamma * v
        return out


class _RolloutView:
    """Adapter exposing rollout-averaged values through ``.value(state)``."""

    def __init__(self, agent: Agent, game: StochasticGame, rng):
        self.agent = agent
        self.game = game
        self.rng = rng
        self.num_players = game.num_players

    def value(self, state: State) -> np.ndarray:
        a = self.agent
        return rollout_value(
            self.game, state, a.values, a.proposal,
            depth=a.rollout_depth, rng=self.rng, samples=a.rollout_samples,
        )


# ---------------------------------------------------------------------------
# Rollout value estimation
# ---------------------------------------------------------------------------


def rollout_value(
    game: StochasticGame,
    state: State,
    values: ValueTable,
    proposal: ProposalModel | None,
    *,
    depth: int,
    rng: np.random.Generator,
    samples: int = 1,
    temperature: float = ROLLOUT_TEMPERATURE,
    top_p: float = ROLLOUT_TOP_P,
) -> np.ndarray:
    """Monte Carlo state value: play ``depth`` turns with every player
    sampling from the proposal model (uniform over legal actions when no
    model is given), then bootstrap from the value table at the reached
    state.  Rewards along the way accumulate with the game's discount.
    Depth 0 is exactly a table lookup (exact reward at terminal states).
    """
    if depth < 0:
        raise ValueError("rollout depth must be >= 0")
    if samples < 1:
        raise ValueError("rollout needs at least one sample")
    if depth == 0 or state.terminal:
        return values.value(state)
    gamma = game.discount
    total = np.zeros(game.num_players)
    for _ in range(samples):
        s = state
        disc = 1.0
        acc = np.zeros(game.num_players)
        for _step in range(depth):
            if s.terminal:
                break
            if proposal is not None:
                joint = tuple(
                    proposal.sample_action(
                        s, p, rng, temperature=temperature, top_p=top_p
                    )
                    for p in range(game.num_players)
                )
            else:
                joint = tuple(
                    game.sample_uniform_action(s, p, rng)
                    for p in range(game.num_players)
                )
            s, r = game.transition(s, joint)
            acc = acc + disc * r
            disc *= gamma
        if not s.terminal:
            acc = acc + disc * values.value(s)
        total += acc
    return total / samples


# ---------------------------------------------------------------------------
# Variance-reduced scoring
# ---------------------------------------------------------------------------


@dataclass
class TurnRecord:
    """One decision as committed at play time: the mixture over own
    candidates, the realized pick, and (once known) the other seats' realized
    actions with the own-candidate action values they induce."""

    turn: int
    sigma: np.ndarray
    q_values: np.ndarray
    realized: int
    observed: tuple = ()


@dataclass
class DeltaRecord:
    """Per-turn luck term: realized-action value minus the mixture's
    expected value, conditioned on the observed opponent actions."""

    turn: int
    delta: float
    sigma: np.ndarray
    observed: tuple = ()


def variance_reduced_score(records, final_reward: float):
    """Adjusted score ``R - sum(delta_t)`` plus the per-turn delta records.

    Each delta measures how lucky the realized own-action draw was relative
    to the committed mixture, given the opponents' observed actions; its
    expectation under the mixture is zero, so subtracting it is unbiased.
    """
    deltas = []
    adjusted = float(final_reward)
    for rec in records:
        sigma = validate_strategy(rec.sigma)
        q = np.asarray(rec.q_values, dtype=float)
        if q.ndim != 1 or q.shape != sigma.shape:
            raise ValueError(
                "q-values and mixture cover different candidate sets"
            )
        if not np.all(np.isfinite(q)):
            raise ValueError("q-values must be finite")
        if not 0 <= rec.realized < len(q):
            raise ValueError("realized action index outside the candidate set")
        d = float(q[rec.realized] - sigma @ q)
        deltas.append(DeltaRecord(rec.turn, d, sigma, rec.observed))
        adjusted -= d
    return adjusted, deltas


# ---------------------------------------------------------------------------
# Match reports
# ---------------------------------------------------------------------------


@dataclass
class MatchReport:
    """Per-game raw and variance-adjusted scores, agent-indexed."""

    labels: list
    raw: np.ndarray        # (games, agents)
    adjusted: np.ndarray   # (games, agents)
    seats: list            # seats[g][seat] = agent index seated there
    seeds: list
    deltas: list           # deltas[g][agent] = list[DeltaRecord]

    @property
    def games(self) -> int:
        return self.raw.shape[0]

    @property
    def se_defined(self) -> bool:
        return self.games >= 2

    def mean(self) -> np.ndarray:
        return self.raw.mean(axis=0)

    def standard_error(self) -> np.ndarray:
        if not self.se_defined:
            return np.full(self.raw.shape[1], np.nan)
        return self.raw.std(axis=0, ddof=1) / np.sqrt(self.games)

    def adjusted_mean(self) -> np.ndarray:
        return self.adjusted.mean(axis=0)

    def adjusted_standard_error(self) -> np.ndarray:
        if not self.se_defined:
            return np.full(self.adjusted.shape[1], np.nan)
        return self.adjusted.std(axis=0, ddof=1) / np.sqrt(self.games)

    def merged_with(self, other: "MatchReport") -> "MatchReport":
        """Associative merge of two reports over the same agent list."""
        if self.labels != other.labels:
            raise ValueError("reports cover different agents")
        return MatchReport(
            self.labels,
            np.vstack([self.raw, other.raw]),
            np.vstack([self.adjusted, other.adjusted]),
            self.seats + other.seats,
            self.seeds + other.seeds,
            self.deltas + other.deltas,
        )

    def summary(self) -> dict:
        se = self.standard_error()
        ase = self.adjusted_standard_error()
        return {
            "labels": list(self.labels),
            "games": self.games,
            "raw_mean": [float(x) for x in self.mean()],
            "raw_se": [None if np.isnan(x) else float(x) for x in se],
            "adjusted_mean": [float(x) for x in self.adjusted_mean()],
            "adjusted_se": [None if np.isnan(x) else float(x) for x in ase],
            "se_defined": self.se_defined,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["game", "seed", "seats"]
            head += [f"raw_{lbl}" for lbl in self.labels]
            head += [f"adjusted_{lbl}" for lbl in self.labels]
            w.writerow(head)
            for g in range(self.games):
                row = [g, self.seeds[g], "|".join(map(str, self.seats[g]))]
                row += [f"{x:.6f}" for x in self.raw[g]]
                row += [f"{x:.6f}" for x in self.adjusted[g]]
                w.writerow(row)


# ---------------------------------------------------------------------------
# Head-to-head matches
# ---------------------------------------------------------------------------


def _seat_cycle(num_players: int):
    return list(itertools.permutations(range(num_players)))


def _play_one_game(game, agents, seat_rngs, collect_deltas):
    """One game; returns per-seat return vector and per-seat TurnRecords."""
    num = game.num_players
    state = game.initial_state()
    records = [[] for _ in range(num)]
    total = np.zeros(num)
    disc = 1.0
    while not state.terminal:
        acts, sigs, picks = [], [], []
        for s in range(num):
            a, p = agents[s].seat_policy(game, state, s, seat_rngs[s])
            k = sample_index(seat_rngs[s], p)
            acts.append(a)
            sigs.append(p)
            picks.append(k)
        joint = tuple(acts[s][picks[s]] for s in range(num))
        if collect_deltas:
            for s in range(num):
                observed = {j: joint[j] for j in range(num) if j != s}
                q = agents[s].q_values(
                    game, state, s, acts[s], observed, seat_rngs[s]
                )
                records[s].append(
                    TurnRecord(
                        state.turn, sigs[s], q, picks[s],
                        tuple(joint[j] for j in range(num) if j != s),
                    )
                )
        state, r = game.transition(state, joint)
        total = total + disc * r
        disc *= game.discount
    return total, records


def play_match(
    game: StochasticGame,
    agents: list,
    n_games: int,
    rng: np.random.Generator,
    *,
    collect_deltas: bool = True,
) -> MatchReport:
    """Round-robin seated match between one agent per player slot.

    Every game gets its own seed derived from ``rng``; seat assignments
    cycle through all permutations so each agent sits everywhere equally
    often.  Each seat computes its own equilibrium at every state and
    samples only its own mixture.
    """
    if n_games < 1:
        raise ValueError("a match needs at least one game")
    num = game.num_players
    if len(agents) != num:
        raise ValueError(f"need exactly {num} agents for {game.name}")
    perms = _seat_cycle(num)
    raw = np.zeros((n_games, num))
    adjusted = np.zeros((n_games, num))
    seats, seeds, all_deltas = [], [], []
    for g in range(n_games):
        seed = int(rng.integers(2**63))
        perm = perms[g % len(perms)]  # perm[seat] = agent index
        kids = np.random.SeedSequence(seed).spawn(num)
        seat_rngs = [np.random.default_rng(k) for k in kids]
        by_seat = [agents[perm[s]] for s in range(num)]
        total, records = _play_one_game(game, by_seat, seat_rngs, collect_deltas)
        game_deltas = [[] for _ in range(num)]
        for s in range(num):
            agent_idx = perm[s]
            raw[g, agent_idx] = total[s]
            adj, drecs = variance_reduced_score(records[s], total[s])
            adjusted[g, agent_idx] = adj
            game_deltas[agent_idx] = drecs
        seats.append(tuple(perm))
        seeds.append(seed)
        all_deltas.append(game_deltas)
    labels = [a.label for a in agents]
    return MatchReport(labels, raw, adjusted, seats, seeds, all_deltas)


# ---------------------------------------------------------------------------
# Exploiter training (one-sided regret matching)
# ---------------------------------------------------------------------------


def estimate_policy(
    agent: Agent,
    game: StochasticGame,
    state: State,
    seat: int,
    rng: np.random.Generator,
    samples: int = VICTIM_POLICY_SAMPLES,
):
    """Average of independent policy computations, merged over the union of
    their supports.  Averaging tames both sampling noise and equilibrium
    selection flicker in the estimated mixture."""
    if samples < 1:
        raise ValueError("need at least one policy sample")
    weights: dict = {}
    keys: dict = {}
    for _ in range(samples):
        actions, probs = agent.seat_policy(game, state, seat, rng)
        for a, p in zip(actions, probs):
            k = tuple_key(a)
            keys[k] = a
            weights[k] = weights.get(k, 0.0) + float(p) / samples
    order = sorted(weights)
    acts = [keys[k] for k in order]
    probs = np.array([weights[k] for k in order])
    return acts, probs / probs.sum()


def _augment_against(
    game, state, seat, actions, sigma, opp_mixtures, view, cfg, rng
):
    """One-sided candidate discovery: generate a pool and keep the best pool
    action when it beats every current candidate against the frozen opponent
    mixtures by more than the double-oracle threshold."""
    evaluator = StagePayoffEvaluator(game, state, view)

    def score(a):
        return response_value(
            evaluator, seat, a, opp_mixtures, rng,
            joint_cap=OPP_JOINT_CAP, mc_samples=OPP_MC_SAMPLES,
        )

    current = max(score(a) for a in actions)
    css = [None] * game.num_players
    sigmas = [None] * game.num_players
    css[seat] = list(actions)
    sigmas[seat] = np.asarray(sigma, dtype=float)
    pool = _generate_pool(game, state, seat, css, sigmas, cfg, rng)
    have = {tuple_key(a) for a in actions}
    best_a, best_v = None, current
    for a in sorted(pool):
        if tuple_key(a) in have:
            continue
        v = score(a)
        if v > best_v:
            best_a, best_v = a, v
    if best_a is not None and best_v - current > cfg.epsilon:
        return list(actions) + [best_a]
    return list(actions)


def exploiter_train(
    game: StochasticGame,
    victim: Agent,
    seat: int,
    *,
    episodes: int,
    rng: np.random.Generator,
    solver: SolverParams | None = None,
    alpha=0.1,
    epsilon: float = 0.2,
    do_config: DoConfig | None = None,
    n_samples: int = 250,
    n_keep: int = 50,
    per_unit_cap: int | None = None,
    label: str = "exploiter",
) -> Agent:
    """Train a best-response agent against a frozen victim.

    The self-play loop is the usual value-iteration episode with one change:
    at every state the victim's mixture is computed by invoking the victim
    agent, and the stage is solved with one-sided regret matching — only the
    exploiter seat accumulates regrets while the other seats sample the
    victim's frozen mixture.  The tables therefore learn best-response
    values and policies rather than equilibrium ones.  ``alpha`` may be a
    float or a function of the state's visit count.
    """
    if episodes < 1:
        raise ValueError("need at least one training episode")
    if not 0 <= seat < game.num_players:
        raise ValueError("exploiter seat outside the player range")
    solver = solver or SolverParams()
    values = ValueTable.for_game(game)
    proposal = ProposalModel(game)
    schedule = ExploreSchedule.flat(epsilon)
    for _ in range(episodes):
        state = game.initial_state()
        while not state.terminal:
            victim_policies = {
                j: victim.seat_policy(game, state, j, rng)
                for j in range(game.num_players)
                if j != seat
            }
            own = proposal.candidates(
                state, seat, rng,
                n_samples=n_samples, n_keep=n_keep, per_unit_cap=per_unit_cap,
            )
            own_actions = list(own.actions)
            own_sigma = own.likelihoods
            if do_config is not None:
                opp_mixtures = {
                    j: (list(acts), np.asarray(p, dtype=float))
                    for j, (acts, p) in victim_policies.items()
                }
                own_actions = _augment_against(
                    game, state, seat, own_actions, own_sigma,
                    opp_mixtures, values, do_config, rng,
                )
            lists = [
                own_actions if p == seat else list(victim_policies[p][0])
                for p in range(game.num_players)
            ]
            fixed = [
                np.full(len(own_actions), 1.0 / len(own_actions))
                if p == seat
                else np.asarray(victim_policies[p][1], dtype=float)
                for p in range(game.num_players)
            ]
            stage = stage_game(state, lists, values, game)
            res = solve_one_sided(
                stage, seat, fixed, solver.iterations, rng,
                optimism=solver.optimism, linear=solver.linear,
            )
            a = alpha(values.visit_count(state)) if callable(alpha) else alpha
            nash_value_update(
                values, state, res.strategies, stage, a, rng=rng,
                action_sets=lists,
            )
            proposal.update_toward(state, seat, own_actions, res.strategies[seat])
            joint = []
            for p in range(game.num_players):
                if p == seat:
                    if rng.random() < schedule.epsilon(state.turn):
                        k = int(rng.integers(len(own_actions)))
                    else:
                        k = sample_index(rng, res.strategies[seat])
                    joint.append(own_actions[k])
                else:
                    acts, probs = victim_policies[p]
                    joint.append(acts[sample_index(rng, probs)])
            state, _ = game.transition(state, tuple(joint))
    return Agent(
        label, values, proposal, solver=solver, do_config=do_config,
        n_samples=n_samples, n_keep=n_keep, per_unit_cap=per_unit_cap,
    )


# ---------------------------------------------------------------------------
# Exploitability measurement
# ---------------------------------------------------------------------------


def measure_exploitability(
    game: StochasticGame,
    victim: Agent,
    exploiter: Agent,
    exploiter_seat: int,
    n_games: int,
    rng: np.random.Generator,
    *,
    policy_samples: int = VICTIM_POLICY_SAMPLES,
) -> MatchReport:
    """Head-to-head exploitation match.

    At each decision the exploiter's model of the victim is the average of
    ``policy_samples`` independent equilibrium computations; the victim
    itself acts from one further independent computation, so the exploiter
    can only target the average policy, never the acting seed.  Returns a
    report with the victim first and the exploiter second in agent order.
    """
    if n_games < 1:
        raise ValueError("a match needs at least one game")
    num = game.num_players
    if not 0 <= exploiter_seat < num:
        raise ValueError("exploiter seat outside the player range")
    raw = np.zeros((n_games, 2))
    adjusted = np.zeros((n_games, 2))
    seats, seeds, all_deltas = [], [], []
    for g in range(n_games):
        seed = int(rng.integers(2**63))
        kids = np.random.SeedSequence(seed).spawn(3)
        model_rng = np.random.default_rng(kids[0])
        act_rng = np.random.default_rng(kids[1])
        exp_rng = np.random.default_rng(kids[2])
        state = game.initial_state()
        exp_records, vic_records = [], []
        total = np.zeros(num)
        disc = 1.0
        while not state.terminal:
            estimates = {
                j: estimate_policy(
                    victim, game, state, j, model_rng, policy_samples
                )
                for j in range(num)
                if j != exploiter_seat
            }
            if exploiter.policy_fn is not None:
                e_acts, e_sigma = exploiter.seat_policy(
                    game, state, exploiter_seat, exp_rng
                )
            else:
                own = exploiter.candidates_at(
                    game, state, exploiter_seat, exp_rng
                )
                e_acts = list(own.actions)
                view = exploiter.value_view(game, exp_rng)
                if exploiter.do_config is not None:
                    e_acts = _augment_against(
                        game, state, exploiter_seat, e_acts,
                        own.likelihoods, estimates, view,
                        exploiter.do_config, exp_rng,
                    )
                lists = [
                    e_acts if p == exploiter_seat else list(estimates[p][0])
                    for p in range(num)
                ]
                fixed = [
                    np.full(len(e_acts), 1.0 / len(e_acts))
                    if p == exploiter_seat
                    else estimates[p][1]
                    for p in range(num)
                ]
                stage = stage_game(state, lists, view, game)
                res = solve_one_sided(
                    stage, exploiter_seat, fixed,
                    exploiter.solver.iterations, exp_rng,
                    optimism=exploiter.solver.optimism,
                    linear=exploiter.solver.linear,
                )
                e_sigma = res.strategies[exploiter_seat]
            # The victim acts from its own fresh computation.
            v_policies = {
                j: victim.seat_policy(game, state, j, act_rng)
                for j in range(num)
                if j != exploiter_seat
            }
            picks = {}
            e_pick = sample_index(exp_rng, e_sigma)
            picks[exploiter_seat] = (e_acts, e_sigma, e_pick)
            for j, (acts, probs) in v_policies.items():
                picks[j] = (acts, probs, sample_index(act_rng, probs))
            joint = tuple(
                picks[p][0][picks[p][2]] for p in range(num)
            )
            observed_exp = {
                j: joint[j] for j in range(num) if j != exploiter_seat
            }
            exp_records.append(
                TurnRecord(
                    state.turn, e_sigma,
                    exploiter.q_values(
                        game, state, exploiter_seat, e_acts,
                        observed_exp, exp_rng,
                    ),
                    e_pick,
                    tuple(joint[j] for j in range(num) if j != exploiter_seat),
                )
            )
            for j, (acts, probs, k) in picks.items():
                if j == exploiter_seat:
                    continue
                observed = {i: joint[i] for i in range(num) if i != j}
                vic_records.append(
                    TurnRecord(
                        state.turn, probs,
                        victim.q_values(game, state, j, acts, observed, act_rng),
                        k,
                        tuple(joint[i] for i in range(num) if i != j),
                    )
                )
            state, r = game.transition(state, joint)
            total = total + disc * r
            disc *= game.discount
        vic_score = float(
            sum(total[j] for j in range(num) if j != exploiter_seat)
        )
        raw[g] = (vic_score, total[exploiter_seat])
        adj_v, d_v = variance_reduced_score(vic_records, vic_score)
        adj_e, d_e = variance_reduced_score(
            exp_records, total[exploiter_seat]
        )
        adjusted[g] = (adj_v, adj_e)
        seats.append((exploiter_seat,))
        seeds.append(seed)
        all_deltas.append([d_v, d_e])
    return MatchReport(
        [victim.label, exploiter.label], raw, adjusted, seats, seeds, all_deltas
    )


# ---------------------------------------------------------------------------
# Exact exploitability of a table-induced policy
# ---------------------------------------------------------------------------


def table_policy_exploitability(
    game: StochasticGame,
    values: ValueTable,
    solver: SolverParams,
    rng: np.random.Generator,
    *,
    enum=None,
) -> float:
    """Exact exploitability of the full-candidate policy induced by a value
    table: at every reachable state solve the stage game the table implies,
    freeze that mixture everywhere, then best-respond exactly with each
    player.  Non-negative by construction; zero exactly at equilibrium.
    """
    from .matrix_games import RestrictedStageGame
    from .stogame import best_response_vs_policy, enumerate_reachable_2p

    if enum is None:
        enum = enumerate_reachable_2p(game)
    n = enum.num_states
    dense = np.array([values.value(s) for s in enum.states])
    sigmas = [None] * n
    for i in range(n):
        p0, p1 = enum.stage_payoffs(i, dense)
        res = solver.solve(RestrictedStageGame.from_tensors([p0, p1]), rng)
        sigmas[i] = (res.strategies[0], res.strategies[1])

    def frozen(player):
        def policy(state, actions):
            return sigmas[enum.index[state.key]][player]
        return policy

    root = game.initial_state()
    i0 = enum.index[root.key]
    br0 = best_response_vs_policy(enum, 0, frozen(1))[i0]
    br1 = best_response_vs_policy(enum, 1, frozen(0))[i0]
    pot = 1.0 if game.score_style == "sos" else 0.0
    return float(br0 + br1 - pot)
