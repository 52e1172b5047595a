"""Miniature Diplomacy-style board game.

Units sit on the nodes of an undirected graph.  Each movement turn every
player gives one order per unit: hold, move to an adjacent node, support an
adjacent unit's hold, or support a move into an adjacent node.  Adjudication
is simultaneous and support-count based; dislodged units are removed
outright (no retreats, builds, convoys, or coasts).  Supply centers change
hands on even turns when occupied, a strict majority of centers wins, and
games that reach the turn cap are scored by sum-of-squares over center
counts.

Order encoding (plain tuples so they hash, compare, and serialize cheaply):

    ("H",  unit)             hold
    ("M",  unit, dest)       move, dest adjacent to unit
    ("SH", unit, target)     support an adjacent friendly unit's hold
    ("SM", unit, src, dest)  support the friendly move src -> dest,
                             dest adjacent to the supporter

Python's tuple ordering on these ("H" < "M" < "SH" < "SM", then node ids)
is the canonical order used everywhere for deterministic enumeration and
tie-breaking.  A PlayerAction is a tuple of orders sorted by unit node.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

from .stogame import State, StochasticGame, register_game

HOLD = "H"
MOVE = "M"
SUPPORT_HOLD = "SH"
SUPPORT_MOVE = "SM"


# ---------------------------------------------------------------------------
# Map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapGraph:
    """Undirected board graph with supply centers and per-player home centers."""

    name: str
    num_nodes: int
    edges: frozenset
    supply_centers: tuple
    homes: tuple  # per player: tuple of supply-center nodes

    _adj: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        adj = [set() for _ in range(self.num_nodes)]
        for a, b in self.edges:
            if not (0 <= a < self.num_nodes and 0 <= b < self.num_nodes) or a == b:
                raise ValueError(f"bad edge ({a},{b})")
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(s)) for s in adj))
        self._validate()

    def _validate(self) -> None:
        if not self.supply_centers:
            raise ValueError("a map needs at least one supply center")
        sc = set(self.supply_centers)
        if not sc <= set(range(self.num_nodes)):
            raise ValueError("supply center outside the node range")
        claimed: set = set()
        for h in self.homes:
            hs = set(h)
            if not hs <= sc:
                raise ValueError("home centers must be supply centers")
            if claimed & hs:
                raise ValueError("home centers overlap across players")
            claimed |= hs
        # connectivity
        if self.num_nodes > 0:
            seen = {0}
            stack = [0]
            while stack:
                for m in self._adj[stack.pop()]:
                    if m not in seen:
                        seen.add(m)
                        stack.append(m)
            if len(seen) != self.num_nodes:
                raise ValueError("map graph must be connected")

    def neighbors(self, node: int) -> tuple:
        return self._adj[node]

    def is_adjacent(self, a: int, b: int) -> bool:
        return b in self._adj[a]

    @staticmethod
    def grid(rows: int, cols: int, name: str = "grid", **kw) -> "MapGraph":
        edges = set()
        for r in range(rows):
            for c in range(cols):
                n = r * cols + c
                if c + 1 < cols:
                    edges.add((n, n + 1))
                if r + 1 < rows:
                    edges.add((n, n + cols))
        return MapGraph(name=name, num_nodes=rows * cols, edges=frozenset(edges), **kw)

    @staticmethod
    def complete_minus(n: int, removed, name: str = "dense", **kw) -> "MapGraph":
        gone = {tuple(sorted(e)) for e in removed}
        edges = {
            (a, b)
            for a in range(n)
            for b in range(a + 1, n)
            if (a, b) not in gone
        }
        return MapGraph(name=name, num_nodes=n, edges=frozenset(edges), **kw)


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoardState(State):
    units: tuple = ()  # per player: sorted tuple of occupied nodes
    owners: tuple = ()  # aligned with MapGraph.supply_centers; -1 = neutral


def _board_key(units, owners, turn: int) -> bytes:
    parts = [struct.pack(">h", turn)]
    for nodes in units:
        parts.append(struct.pack(">B", len(nodes)))
        parts.append(bytes(nodes))
    parts.append(b"|")
    parts.append(bytes(o + 1 for o in owners))
    return b"".join(parts)


# ---------------------------------------------------------------------------
# Order legality and enumeration
# ---------------------------------------------------------------------------


def unit_orders(graph: MapGraph, own_units, unit: int) -> list:
    """All valid orders for one unit, in canonical (sorted tuple) order.

    Supports may only name friendly units: the supported source for a move
    support and the target of a hold support must be own units.
    """
    own = set(own_units)
    orders = [(HOLD, unit)]
    for d in graph.neighbors(unit):
        orders.append((MOVE, unit, d))
    for t in graph.neighbors(unit):
        if t in own:
            orders.append((SUPPORT_HOLD, unit, t))
    nbr_self = set(graph.neighbors(unit))
    for s in own_units:
        if s == unit:
            continue
        for d in graph.neighbors(s):
            if d in nbr_self:
                orders.append((SUPPORT_MOVE, unit, s, d))
    return sorted(orders)


class OrderError(ValueError):
    """An order is structurally invalid; the message names the unit's node."""


def _validate_action(graph: MapGraph, units, player: int, action) -> None:
    own = set(units[player])
    seen = set()
    for o in action:
        u = o[1]
        if u not in own:
            raise OrderError(f"unit at node {u}: not a unit of player {player}")
        if u in seen:
            raise OrderError(f"unit at node {u}: multiple orders")
        seen.add(u)
        kind = o[0]
        if kind == HOLD:
            continue
        if kind == MOVE:
            if not graph.is_adjacent(u, o[2]):
                raise OrderError(f"unit at node {u}: move target {o[2]} not adjacent")
        elif kind == SUPPORT_HOLD:
            t = o[2]
            if not graph.is_adjacent(u, t):
                raise OrderError(f"unit at node {u}: support target {t} not adjacent")
            if t not in own:
                raise OrderError(f"unit at node {u}: may only support own units")
        elif kind == SUPPORT_MOVE:
            s, d = o[2], o[3]
            if not graph.is_adjacent(u, d):
                raise OrderError(
                    f"unit at node {u}: support destination {d} not adjacent"
                )
            if not graph.is_adjacent(s, d):
                raise OrderError(f"unit at node {u}: supported move {s}->{d} illegal")
            if s not in own:
                raise OrderError(f"unit at node {u}: may only support own units")
        else:
            raise OrderError(f"unit at node {u}: unknown order kind {kind!r}")
    if seen != own:
        missing = sorted(own - seen)[0]
        raise OrderError(f"unit at node {missing}: no order given")


def resolve(graph: MapGraph, units, joint) -> tuple[dict, set]:
    """Adjudicate one movement turn.

    ``units``: per-player tuples of occupied nodes; ``joint``: per-player
    actions (tuples of orders).  Returns ``(destination, dislodged)`` where
    ``destination`` maps each surviving unit's old node to its new node and
    ``dislodged`` is the set of removed units' old nodes.

    Rules, in resolution order:
      * a support is cut when any unit moves into the supporter's node from
        anywhere except the support's target destination (dislodgement does
        not retroactively cut);
      * attack strength = 1 + uncut matching move supports; a unit that
        stays put defends at 1 + uncut hold supports, a unit whose move
        failed defends at 1;
      * a move succeeds only if strictly stronger than every competing move
        into the node and the defense of a non-vacating occupant; equal
        strength means everyone bounces;
      * head-to-head swaps compare move strengths, loser dislodged only on
        a strict loss;
      * nothing may dislodge a unit of its own power;
      * unresolved dependency cycles (ring rotations) all succeed.
    """
    owner: dict = {}
    order_of: dict = {}
    for p, nodes in enumerate(units):
        for u in nodes:
            owner[u] = p
    for p, action in enumerate(joint):
        _validate_action(graph, units, p, action)
        for o in action:
            order_of[o[1]] = o

    moves = {u: o for u, o in order_of.items() if o[0] == MOVE}
    movers_into: dict = {}
    for u, o in moves.items():
        movers_into.setdefault(o[2], []).append(u)

    def is_cut(supporter: int, exempt: int) -> bool:
        return any(src != exempt for src in movers_into.get(supporter, ()))

    attack_bonus: dict = {}
    hold_bonus: dict = {}
    for u, o in order_of.items():
        if o[0] == SUPPORT_MOVE:
            s, d = o[2], o[3]
            mover = order_of.get(s)
            matches = (
                mover is not None
                and mover[0] == MOVE
                and mover[2] == d
                and owner[s] == owner[u]
            )
            if matches and not is_cut(u, d):
                attack_bonus[(s, d)] = attack_bonus.get((s, d), 0) + 1
        elif o[0] == SUPPORT_HOLD:
            t = o[2]
            target = order_of.get(t)
            matches = (
                target is not None and target[0] != MOVE and owner[t] == owner[u]
            )
            if matches and not is_cut(u, t):
                hold_bonus[t] = hold_bonus.get(t, 0) + 1

    strength = {u: 1 + attack_bonus.get((u, o[2]), 0) for u, o in moves.items()}

    def hold_strength(u: int) -> int:
        return 1 + hold_bonus.get(u, 0)

    # Static resolution; ``depends`` marks moves whose fate follows the
    # destination occupant's own move (vacating chains).
    status: dict = {}
    depends: dict = {}
    for u, o in moves.items():
        d = o[2]
        mine = strength[u]
        if any(strength[v] >= mine for v in movers_into[d] if v != u):
            status[u] = False
            continue
        occupant = d if d in owner else None
        if occupant is None:
            status[u] = True
            continue
        opposing = moves.get(occupant)
        if opposing is not None and opposing[2] == u:
            # head-to-head swap: compare move strengths
            if strength[occupant] >= mine or owner[occupant] == owner[u]:
                status[u] = False
            else:
                status[u] = True
        elif opposing is None:
            if mine > hold_strength(occupant) and owner[occupant] != owner[u]:
                status[u] = True
            else:
                status[u] = False
        else:
            # occupant is trying to leave; a strong foreign attacker wins
            # whether or not it vacates (bounced units defend at 1)
            if mine > 1 and owner[occupant] != owner[u]:
                status[u] = True
            else:
                depends[u] = occupant

    changed = True
    while changed:
        changed = False
        for u, pred in list(depends.items()):
            res = status.get(pred)
            if res is None and pred in depends:
                continue
            status[u] = bool(res)
            del depends[u]
            changed = True
    for u in depends:  # leftover cycles rotate successfully
        status[u] = True

    destination: dict = {}
    dislodged: set = set()
    entered = {o[2] for u, o in moves.items() if status[u]}
    for u in owner:
        o = order_of[u]
        if o[0] == MOVE and status[u]:
            destination[u] = o[2]
        elif u in entered:
            dislodged.add(u)
        else:
            destination[u] = u
    if len(set(destination.values())) != len(destination):
        raise AssertionError("adjudication produced a node collision")
    return destination, dislodged


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def sos_from_counts(counts, total_centers: int) -> np.ndarray:
    """Sum-of-squares scores; a strict-majority holder takes everything."""
    counts = np.asarray(counts, dtype=float)
    if counts.min() < 0:
        raise ValueError("negative supply-center count")
    winners = counts > total_centers / 2.0
    if winners.any():
        return winners.astype(float)
    denom = float((counts**2).sum())
    if denom == 0.0:
        return np.full(len(counts), 1.0 / len(counts))
    return counts**2 / denom


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


class MicroDipGame(StochasticGame):
    """Board game environment over a MapGraph.

    Rewards are zero until a terminal state, which pays the sum-of-squares
    score vector (entries sum to one, so the game is constant-sum).
    """

    score_style = "sos"

    def __init__(
        self,
        graph: MapGraph,
        start_units,
        max_turns: int = 6,
        name: str | None = None,
    ):
        self.graph = graph
        self.num_players = len(start_units)
        self.discount = 1.0
        self.max_turns = max_turns
        self.name = name or graph.name
        self.start_units = tuple(tuple(sorted(u)) for u in start_units)
        owners = []
        for sc in graph.supply_centers:
            owner = -1
            for p, home in enumerate(graph.homes):
                if sc in home:
                    owner = p
            owners.append(owner)
        self.start_owners = tuple(owners)
        self._order_memo: dict = {}
        occupied = [u for nodes in self.start_units for u in nodes]
        if len(set(occupied)) != len(occupied):
            raise ValueError("two starting units share a node")

    # -- states ------------------------------------------------------------

    def _make_state(self, units, owners, turn: int, terminal: bool) -> BoardState:
        return BoardState(
            key=_board_key(units, owners, turn),
            turn=turn,
            terminal=terminal,
            units=units,
            owners=owners,
        )

    def initial_state(self) -> BoardState:
        return self._make_state(self.start_units, self.start_owners, 0, False)

    def board_state(self, units, owners=None, turn: int = 0) -> BoardState:
        """Construct an arbitrary (non-terminal) mid-game position."""
        units = tuple(tuple(sorted(nodes)) for nodes in units)
        if len(units) != self.num_players:
            raise ValueError("units must list one tuple per player")
        occupied = [u for nodes in units for u in nodes]
        if len(set(occupied)) != len(occupied):
            raise ValueError("two units share a node")
        for u in occupied:
            if not 0 <= u < self.graph.num_nodes:
                raise ValueError(f"node {u} is off the map")
        owners = self.start_owners if owners is None else tuple(owners)
        if len(owners) != len(self.graph.supply_centers):
            raise ValueError("owners must align with the supply centers")
        if not 0 <= turn < self.max_turns:
            raise ValueError("turn must precede the horizon")
        return self._make_state(units, owners, turn, False)

    # -- actions -----------------------------------------------------------

    def _unit_orders(self, own_units, unit: int) -> list:
        key = (own_units, unit)
        got = self._order_memo.get(key)
        if got is None:
            got = unit_orders(self.graph, own_units, unit)
            self._order_memo[key] = got
        return got

    def per_unit_orders(self, state: BoardState, player: int) -> list:
        own = state.units[player]
        return [self._unit_orders(own, u) for u in own]

    def action_count(self, state: BoardState, player: int) -> int:
        n = 1
        for opts in self.per_unit_orders(state, player):
            n *= len(opts)
        return n

    def enumerate_actions(self, state: BoardState, player: int, cap: int | None = None):
        """Lexicographic cross product of per-unit orders, truncated at cap."""
        per_unit = self.per_unit_orders(state, player)
        it = itertools.product(*per_unit)
        if cap is not None:
            it = itertools.islice(it, cap)
        return [tuple(combo) for combo in it]

    def legal_actions(self, state: BoardState, player: int) -> list:
        self._check_not_terminal(state)
        return self.enumerate_actions(state, player)

    def sample_uniform_action(self, state, player, rng):
        # Per-unit uniform order choice IS uniform over the cross product.
        per_unit = self.per_unit_orders(state, player)
        return tuple(opts[int(rng.integers(len(opts)))] for opts in per_unit)

    # -- dynamics ----------------------------------------------------------

    def transition(self, state: BoardState, joint):
        destination, _ = resolve(self.graph, state.units, joint)
        new_units = []
        for nodes in state.units:
            new_units.append(
                tuple(sorted(destination[u] for u in nodes if u in destination))
            )
        new_units = tuple(new_units)
        turn = state.turn + 1
        owners = state.owners
        if turn % 2 == 0:
            occupant = {}
            for p, nodes in enumerate(new_units):
                for u in nodes:
                    occupant[u] = p
            owners = tuple(
                occupant.get(sc, owners[i])
                for i, sc in enumerate(self.graph.supply_centers)
            )
        counts = self._center_counts(owners)
        majority = counts.max() > len(self.graph.supply_centers) / 2.0
        terminal = turn >= self.max_turns or (turn % 2 == 0 and majority)
        nxt = self._make_state(new_units, owners, turn, terminal)
        if terminal:
            return nxt, sos_from_counts(counts, len(self.graph.supply_centers))
        return nxt, np.zeros(self.num_players)

    def _center_counts(self, owners) -> np.ndarray:
        counts = np.zeros(self.num_players)
        for o in owners:
            if o >= 0:
                counts[o] += 1
        return counts

    def sos_score(self, state: BoardState) -> np.ndarray:
        if not state.terminal:
            raise ValueError("scores are defined at terminal states only")
        return sos_from_counts(
            self._center_counts(state.owners), len(self.graph.supply_centers)
        )

    def terminal_reward(self, state: BoardState) -> np.ndarray:
        return self.sos_score(state)


# ---------------------------------------------------------------------------
# Standard maps and JSON maps
# ---------------------------------------------------------------------------


def duel9_board() -> MicroDipGame:
    graph = MapGraph.grid(
        3, 3, name="duel9", supply_centers=(0, 4, 8), homes=((0,), (8,))
    )
    return MicroDipGame(graph, start_units=((0, 1), (7, 8)), max_turns=6)


_ARENA16_MISSING = frozenset(
    {(0, 1), (0, 4), (0, 5), (1, 2), (1, 5), (2, 4), (2, 5), (3, 6), (4, 6), (5, 6)}
)


def arena16_board() -> MicroDipGame:
    """Dense 16-node arena: three units a side, huge per-turn action space.

    The graph is complete minus a handful of edges around the two front
    lines, which keeps rear centers out of direct reach and makes massed
    (move + double support) plays decisive.
    """
    graph = MapGraph.complete_minus(
        16,
        _ARENA16_MISSING,
        name="arena16",
        supply_centers=(1, 3, 5, 6),
        homes=((1, 6), (3, 5)),
    )
    return MicroDipGame(graph, start_units=((0, 1, 2), (3, 4, 5)), max_turns=6)


def tri12_board() -> MicroDipGame:
    """Three-player ring with cross chords; six centers, majority four."""
    edges = {(i, (i + 1) % 12) for i in range(12)} | {(i, i + 6) for i in range(6)}
    graph = MapGraph(
        name="tri12",
        num_nodes=12,
        edges=frozenset(tuple(sorted(e)) for e in edges),
        supply_centers=(0, 2, 4, 6, 8, 10),
        homes=((0,), (4,), (8,)),
    )
    return MicroDipGame(graph, start_units=((0, 1), (4, 5), (8, 9)), max_turns=6)


def board_from_json(doc: dict) -> MicroDipGame:
    """Build a game from {nodes, edges, scs, homes, units[, max_turns, name]}."""
    try:
        num_nodes = int(doc["nodes"])
        edges = frozenset(tuple(sorted((int(a), int(b)))) for a, b in doc["edges"])
        graph = MapGraph(
            name=str(doc.get("name", "custom")),
            num_nodes=num_nodes,
            edges=edges,
            supply_centers=tuple(int(s) for s in doc["scs"]),
            homes=tuple(tuple(int(h) for h in hs) for hs in doc["homes"]),
        )
        units = tuple(tuple(int(u) for u in us) for us in doc["units"])
    except KeyError as e:
        raise ValueError(f"custom map is missing field {e.args[0]!r}") from None
    return MicroDipGame(graph, units, max_turns=int(doc.get("max_turns", 6)))


def standard_boards() -> dict:
    return {
        "duel9": duel9_board,
        "arena16": arena16_board,
        "tri12": tri12_board,
    }


def make_board(name: str) -> MicroDipGame:
    boards = standard_boards()
    if name not in boards:
        raise KeyError(f"unknown map {name!r}; known: {sorted(boards)}")
    return boards[name]()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_text(game: MicroDipGame, state: BoardState) -> str:
    graph = game.graph
    occupant = {}
    for p, nodes in enumerate(state.units):
        for u in nodes:
            occupant[u] = p
    sc_owner = dict(zip(graph.supply_centers, state.owners))
    lines = [f"{game.name}  turn {state.turn}" + ("  [terminal]" if state.terminal else "")]
    for n in range(graph.num_nodes):
        tags = []
        if n in sc_owner:
            o = sc_owner[n]
            tags.append("SC(neutral)" if o < 0 else f"SC(P{o})")
        if n in occupant:
            tags.append(f"unit P{occupant[n]}")
        tag = "  ".join(tags)
        nbrs = ",".join(str(m) for m in graph.neighbors(n))
        lines.append(f"  {n:>3} -> [{nbrs}]" + (f"   {tag}" if tag else ""))
    return "\n".join(lines)


def render_dot(game: MicroDipGame, state: BoardState) -> str:
    graph = game.graph
    occupant = {}
    for p, nodes in enumerate(state.units):
        for u in nodes:
            occupant[u] = p
    sc = set(graph.supply_centers)
    palette = ["lightblue", "lightsalmon", "palegreen", "khaki"]
    out = ["graph board {", "  node [style=filled, fillcolor=white];"]
    for n in range(graph.num_nodes):
        attrs = []
        if n in sc:
            attrs.append("shape=doublecircle")
        if n in occupant:
            attrs.append(f"fillcolor={palette[occupant[n] % len(palette)]}")
            attrs.append(f'label="{n}\\nP{occupant[n]}"')
        if attrs:
            out.append(f"  {n} [{', '.join(attrs)}];")
    for a, b in sorted(graph.edges):
        out.append(f"  {a} -- {b};")
    out.append("}")
    return "\n".join(out)


register_game("duel9", lambda p: duel9_board())
register_game("arena16", lambda p: arena16_board())
register_game("tri12", lambda p: tri12_board())
register_game("custom_board", lambda p: board_from_json(p))
