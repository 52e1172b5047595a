"""Tabular action-proposal model.

Stores, per (state, player), a table of non-negative action weights whose
normalization is the proposal distribution.  Unseen states fall back to the
uniform distribution over legal actions.  The model is the exact
cross-entropy minimizer of the equilibrium mixtures it is trained toward:
``update_toward`` accumulates weighted frequencies, so the normalized table
converges to the average of the supplied targets.

Also home to the action byte-codec and the versioned binary table format
used by checkpoints.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .matrix_games import sample_index

FORMAT_MAGIC = b"EQPM"
FORMAT_VERSION = 1

_KIND_CODE = {"H": 0, "M": 1, "SH": 2, "SM": 3}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_KIND_ARITY = {"H": 1, "M": 2, "SH": 2, "SM": 3}


def encode_action(action) -> bytes:
    """Stable byte encoding for an action: either a small int (synthetic
    games) or a tuple of board orders."""
    if isinstance(action, (int, np.integer)):
        return b"i" + struct.pack(">i", int(action))
    parts = [b"o", struct.pack(">B", len(action))]
    for order in action:
        kind = order[0]
        parts.append(struct.pack(">B", _KIND_CODE[kind]))
        nodes = order[1:]
        if len(nodes) != _KIND_ARITY[kind]:
            raise ValueError(f"malformed order {order!r}")
        parts.append(bytes(nodes))
    return b"".join(parts)


def decode_action(blob: bytes):
    if blob[:1] == b"i":
        return struct.unpack(">i", blob[1:5])[0]
    if blob[:1] != b"o":
        raise ValueError("unknown action encoding")
    n = blob[1]
    orders = []
    at = 2
    for _ in range(n):
        kind = _CODE_KIND[blob[at]]
        arity = _KIND_ARITY[kind]
        nodes = tuple(blob[at + 1 : at + 1 + arity])
        orders.append((kind,) + nodes)
        at += 1 + arity
    return tuple(orders)


@dataclass
class CandidateSet:
    """Ranked candidate actions with their proposal likelihoods."""

    actions: list
    likelihoods: np.ndarray

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ValueError("a candidate set cannot be empty")
        if len(set(map(tuple_key, self.actions))) != len(self.actions):
            raise ValueError("candidate actions must be distinct")

    def __len__(self) -> int:
        return len(self.actions)


def tuple_key(action):
    return action if isinstance(action, tuple) else (action,)


class ProposalModel:
    """Per-state action-weight table with a uniform-over-legal fallback."""

    def __init__(self, game, smoothing: float = 0.0):
        self.game = game
        self.smoothing = float(smoothing)
        self.table: dict = {}

    def snapshot(self) -> "ProposalModel":
        """Independent deep copy (frozen view for evaluation/workers)."""
        twin = ProposalModel(self.game, self.smoothing)
        twin.table = {k: dict(v) for k, v in self.table.items()}
        return twin

    # -- lookups -------------------------------------------------------------

    def entry(self, state, player: int) -> dict | None:
        return self.table.get((state.key, player))

    def distribution(self, state, player: int):
        """(actions, probs) over the stored table, canonical action order.
        None when the state is unseen (fallback applies)."""
        entry = self.entry(state, player)
        if entry is None:
            return None
        actions = sorted(entry)
        w = np.array([entry[a] for a in actions], dtype=float)
        total = w.sum()
        if total <= 0.0:
            w = np.ones(len(w))
            total = w.sum()
        return actions, w / total

    def likelihoods(self, state, player: int, actions) -> np.ndarray:
        """Normalized model probability of each given action."""
        entry = self.entry(state, player)
        if entry is None:
            return np.full(len(actions), 1.0 / self.game.action_count(state, player))
        total = sum(entry.values()) + self.smoothing * sum(
            1 for a in actions if a not in entry
        )
        if total <= 0.0:
            return np.full(len(actions), 1.0 / max(len(entry), 1))
        return np.array(
            [entry.get(a, self.smoothing) / total for a in actions], dtype=float
        )

    # -- sampling ------------------------------------------------------------

    def sample_action(
        self,
        state,
        player: int,
        rng: np.random.Generator,
        temperature: float = 0.75,
        top_p: float = 0.95,
    ):
        """Temperature then nucleus truncation over the stored distribution.

        Unseen states sample uniformly over legal actions directly (every
        action equally likely, so temperature and truncation are no-ops).
        """
        if temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if not 0.0 < top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if state.terminal:
            raise ValueError("terminal states have no legal actions")
        dist = self.distribution(state, player)
        if dist is None:
            return self.game.sample_uniform_action(state, player, rng)
        actions, probs = dist
        if temperature != 1.0:
            with np.errstate(divide="ignore"):
                logits = np.log(probs) / temperature
            logits -= logits.max()
            probs = np.exp(logits)
            probs /= probs.sum()
        order = sorted(range(len(actions)), key=lambda i: (-probs[i], actions[i]))
        cum = 0.0
        keep = []
        for i in order:
            keep.append(i)
            cum += probs[i]
            if cum >= top_p - 1e-12:
                break
        kept_probs = probs[keep] / probs[keep].sum()
        return actions[keep[sample_index(rng, kept_probs)]]

    def candidates(
        self,
        state,
        player: int,
        rng: np.random.Generator,
        n_samples: int = 250,
        n_keep: int = 50,
        per_unit_cap: int | None = None,
    ) -> CandidateSet:
        """Sample, deduplicate, rank by likelihood, keep the top slice."""
        if n_keep < 1 or n_samples < n_keep:
            raise ValueError("need n_samples >= n_keep >= 1")
        seen = self.entry(state, player)
        draws = []
        for _ in range(n_samples):
            if seen is None:
                draws.append(self.game.sample_uniform_action(state, player, rng))
            else:
                draws.append(
                    self.sample_action(state, player, rng, temperature=1.0, top_p=1.0)
                )
        unique = list(dict.fromkeys(draws))
        liks = self.likelihoods(state, player, unique)
        ranked = sorted(range(len(unique)), key=lambda i: (-liks[i], unique[i]))
        chosen, chosen_lik = [], []
        per_unit: dict = {}
        for i in ranked:
            if len(chosen) >= n_keep:
                break
            action = unique[i]
            if per_unit_cap is not None and isinstance(action, tuple):
                budgeted = True
                for o in action:
                    used = per_unit.setdefault(o[1], set())
                    if o not in used and len(used) >= per_unit_cap and chosen:
                        budgeted = False
                        break
                if not budgeted:
                    continue
                for o in action:
                    per_unit[o[1]].add(o)
            chosen.append(action)
            chosen_lik.append(liks[i])
        return CandidateSet(chosen, np.array(chosen_lik, dtype=float))

    def fallback_support(self, state, player: int, rng: np.random.Generator,
                         cap: int = 4096) -> list:
        """Materialize the fallback's support: the full legal-action list when
        it fits the cap, otherwise a uniform reservoir sample of ``cap``."""
        count = self.game.action_count(state, player)
        if count <= cap:
            return self.game.legal_actions(state, player)
        reservoir = []
        for i, action in enumerate(self._lazy_actions(state, player)):
            if i < cap:
                reservoir.append(action)
            else:
                j = int(rng.integers(i + 1))
                if j < cap:
                    reservoir[j] = action
        return reservoir

    def _lazy_actions(self, state, player: int):
        import itertools

        per_unit = self.game.per_unit_orders(state, player)
        return itertools.product(*per_unit)

    # -- training ------------------------------------------------------------

    def update_toward(self, state, player: int, actions, probs, weight: float = 1.0):
        """Accumulate `weight * sigma(a)` onto each action's table weight."""
        self.update_toward_key(state.key, player, actions, probs, weight)

    def update_toward_key(self, key: bytes, player: int, actions, probs, weight: float = 1.0):
        """Same as update_toward for callers that only hold the state key
        (replayed training targets)."""
        if weight <= 0.0:
            raise ValueError("update weight must be positive")
        probs = np.asarray(probs, dtype=float)
        if len(probs) != len(actions) or len(probs) == 0:
            raise ValueError("sigma length mismatch")
        if probs.min() < -1e-12 or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("sigma is not a probability distribution")
        entry = self.table.setdefault((key, player), {})
        for a, p in zip(actions, probs):
            entry[a] = entry.get(a, 0.0) + weight * float(p)

    def top_actions(self, state, player: int, k: int = 10) -> list:
        dist = self.distribution(state, player)
        if dist is None:
            return []
        actions, probs = dist
        order = sorted(range(len(actions)), key=lambda i: (-probs[i], actions[i]))
        return [(actions[i], float(probs[i])) for i in order[:k]]

    # -- serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        rows = []
        for (key, player), entry in sorted(
            self.table.items(), key=lambda kv: (kv[0][0], kv[0][1])
        ):
            acts = sorted((encode_action(a), w) for a, w in entry.items())
            body = [struct.pack(">H", len(key)), key, struct.pack(">BI", player, len(acts))]
            for blob, w in acts:
                body.append(struct.pack(">H", len(blob)))
                body.append(blob)
                body.append(struct.pack(">d", w))
            rows.append(b"".join(body))
        return struct.pack(">I", len(rows)) + b"".join(rows)

    def load_bytes(self, data: bytes) -> None:
        self.table.clear()
        view = memoryview(data)
        try:
            (n_rows,) = struct.unpack_from(">I", view, 0)
            at = 4
            for _ in range(n_rows):
                (key_len,) = struct.unpack_from(">H", view, at)
                at += 2
                key = bytes(view[at : at + key_len])
                at += key_len
                player, n_actions = struct.unpack_from(">BI", view, at)
                at += 5
                entry = {}
                for _ in range(n_actions):
                    (blob_len,) = struct.unpack_from(">H", view, at)
                    at += 2
                    action = decode_action(bytes(view[at : at + blob_len]))
                    at += blob_len
                    (w,) = struct.unpack_from(">d", view, at)
                    at += 8
                    entry[action] = w
                self.table[(key, player)] = entry
            if at != len(data):
                raise ValueError("trailing bytes in proposal table")
        except struct.error as e:
            raise ValueError("truncated proposal table") from e


def save_model(model: ProposalModel, path: str, game_name: str) -> None:
    name = game_name.encode()
    payload = (
        struct.pack(">HB", FORMAT_VERSION, len(name)) + name + model.to_bytes()
    )
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC + payload + struct.pack(">I", zlib.crc32(payload)))


def load_model(path: str, game, expected_game: str) -> ProposalModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FORMAT_MAGIC:
        raise ValueError("not a proposal model file")
    payload, crc = data[4:-4], data[-4:]
    if len(data) < 12 or struct.unpack(">I", crc)[0] != zlib.crc32(payload):
        raise ValueError("proposal model file is corrupt or truncated")
    version, name_len = struct.unpack_from(">HB", payload, 0)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported proposal model version {version}")
    name = payload[3 : 3 + name_len].decode()
    if name != expected_game:
        raise ValueError(f"model was trained on {name!r}, not {expected_game!r}")
    model = ProposalModel(game)
    model.load_bytes(payload[3 + name_len :])
    return model
