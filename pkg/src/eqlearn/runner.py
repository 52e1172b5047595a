"""Training orchestration: run configuration, the replay buffer, lagged
model snapshots, the producer/consumer self-play loop, metrics streams, and
checkpoint files.

Concurrency model: many producer workers, one consumer trainer, one metrics
sink (the trainer thread).  Workers only ever read published snapshots; the
trainer is the sole writer of the live tables.  With a single worker the
loop runs sequentially — produce one episode, then train as far as the
throttle allows — so equal seeds give bit-identical checkpoints.

Randomness derives from the master seed via fixed spawn keys:
``(0,)`` pretraining, ``(1, worker, episode)`` per self-play episode,
``(2,)`` the trainer's batch sampling, ``(3,)`` exploitability probes.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .double_oracle import DoConfig, find_equilibrium_with_do
from .nashvi import (
    ExploreSchedule,
    SolverParams,
    ValueTable,
    pretrain_episode,
    selfplay_episode,
)
from .proposal import ProposalModel
from .stogame import StochasticGame, make_game

logger = logging.getLogger("eqlearn.runner")

CHECKPOINT_MAGIC = b"EQCK"
CHECKPOINT_VERSION = 1

METRICS_HEADER = [
    "episodes",
    "buffer_size",
    "mean_episode_length",
    "mean_root_value",
    "do_added_rate",
    "exploitability_probe",
    "throttle_active",
    "trained_batches",
    "snapshot_version",
]


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs, JSON-round-trippable.

    The defaults mirror the reference hyperparameters at desk scale:
    256 regret-matching iterations, 250 candidate draws with 50 kept,
    buffer capacity 100k, batch 256.
    """

    game: str = "duel9"
    game_params: dict = field(default_factory=dict)
    iterations: int = 256
    optimism: bool = True
    linear: bool = True
    n_samples: int = 250
    n_keep: int = 50
    per_unit_cap: int | None = None
    explore_base: float | None = None
    explore_overrides: tuple | None = None
    use_do: bool = False
    do_pool: int = 1000
    do_topk: int = 8
    do_eps: float = 0.04
    do_iters: int = 6
    do_generator: str = "local_modification"
    do_nbase: int = 4
    alpha: float | str = 0.1  # a fixed step in (0, 1], or "harmonic" for 1/(1+visits)
    gamma: float = 1.0
    buffer_capacity: int = 100_000
    batch_size: int = 256
    max_train_ratio: float = 6.0
    snapshot_interval: int = 8
    checkpoint_interval: int = 0
    metrics_interval: int = 10
    probe_interval: int = 0
    workers: int = 1
    pretrain_episodes: int = 32
    selfplay_episodes: int = 128
    seed: int = 0
    proposal_mode: str = "normal"

    def __post_init__(self):
        positive = {
            "iterations": self.iterations,
            "n_samples": self.n_samples,
            "n_keep": self.n_keep,
            "buffer_capacity": self.buffer_capacity,
            "batch_size": self.batch_size,
            "snapshot_interval": self.snapshot_interval,
            "metrics_interval": self.metrics_interval,
            "workers": self.workers,
            "do_pool": self.do_pool,
            "do_topk": self.do_topk,
            "do_iters": self.do_iters,
            "do_nbase": self.do_nbase,
        }
        for name, v in positive.items():
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        for name, v in (
            ("pretrain_episodes", self.pretrain_episodes),
            ("selfplay_episodes", self.selfplay_episodes),
            ("checkpoint_interval", self.checkpoint_interval),
            ("probe_interval", self.probe_interval),
        ):
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.max_train_ratio <= 0:
            raise ValueError("max_train_ratio must be > 0")
        if isinstance(self.alpha, str):
            if self.alpha != "harmonic":
                raise ValueError("alpha must be a float in (0, 1] or 'harmonic'")
        elif not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.proposal_mode not in ("normal", "npu"):
            raise ValueError("proposal_mode must be 'normal' or 'npu'")
        if self.per_unit_cap is not None and self.per_unit_cap < 1:
            raise ValueError("per_unit_cap must be >= 1 when set")
        if self.do_generator not in ("uniform", "local_modification", "full"):
            raise ValueError(f"unknown generator {self.do_generator!r}")
        if self.explore_base is not None and not 0.0 <= self.explore_base <= 1.0:
            raise ValueError("explore_base must lie in [0, 1]")
        if self.explore_overrides is not None:
            object.__setattr__(
                self,
                "explore_overrides",
                tuple(float(e) for e in self.explore_overrides),
            )

    # -- derived pieces -------------------------------------------------------

    def solver_params(self) -> SolverParams:
        return SolverParams(self.iterations, self.optimism, self.linear)

    def do_config(self) -> DoConfig | None:
        if not self.use_do:
            return None
        return DoConfig(
            pool_size=self.do_pool,
            top_k=self.do_topk,
            epsilon=self.do_eps,
            iterations=self.do_iters,
            generator=self.do_generator,
            n_base=self.do_nbase,
        )

    def schedule(self, num_players: int) -> ExploreSchedule:
        if self.explore_base is None:
            return ExploreSchedule.for_players(num_players)
        overrides = (
            self.explore_overrides if self.explore_overrides is not None else ()
        )
        return ExploreSchedule(self.explore_base, tuple(overrides))

    # -- JSON -------------------------------------------------------------------

    def to_json_dict(self) -> dict:
        d = asdict(self)
        if d["explore_overrides"] is not None:
            d["explore_overrides"] = list(d["explore_overrides"])
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("explore_overrides") is not None:
            doc["explore_overrides"] = tuple(doc["explore_overrides"])
        return cls(**doc)


# ---------------------------------------------------------------------------
# Replay buffer (ring; multi-producer / single-consumer safe)
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Bounded FIFO of training targets with uniform batch sampling.

    Eviction is oldest-first; ``pop`` drains in FIFO order; ``sample``
    draws uniformly with replacement.  All operations are O(1) and
    lock-protected.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._buf = [None] * capacity
        self._head = 0
        self._size = 0
        self._lock = threading.Lock()
        self.pushed = 0
        self.popped = 0
        self.evicted = 0

    def __len__(self) -> int:
        with self._lock:
            return self._size

    def push(self, item) -> None:
        with self._lock:
            if self._size == self.capacity:
                self._buf[self._head] = None
                self._head = (self._head + 1) % self.capacity
                self._size -= 1
                self.evicted += 1
            tail = (self._head + self._size) % self.capacity
            self._buf[tail] = item
            self._size += 1
            self.pushed += 1

    def pop(self):
        with self._lock:
            if self._size == 0:
                raise IndexError("pop from an empty replay buffer")
            item = self._buf[self._head]
            self._buf[self._head] = None
            self._head = (self._head + 1) % self.capacity
            self._size -= 1
            self.popped += 1
            return item

    def sample(self, k: int, rng: np.random.Generator) -> list:
        with self._lock:
            if self._size == 0:
                raise IndexError("sample from an empty replay buffer")
            idx = rng.integers(0, self._size, size=k)
            return [
                self._buf[(self._head + int(i)) % self.capacity] for i in idx
            ]

    def items_fifo(self) -> list:
        with self._lock:
            return [
                self._buf[(self._head + i) % self.capacity]
                for i in range(self._size)
            ]


# ---------------------------------------------------------------------------
# Snapshots and write-owner guards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    """Immutable lagged model pair workers play from."""

    version: int
    values: ValueTable
    proposal: ProposalModel


class _OwnedWrites:
    """Debug-mode delegate that rejects writes from any thread except the
    owner (the trainer).  Reads pass through untouched."""

    _WRITE_METHODS: tuple = ()

    def __init__(self, inner, owner_ident: int):
        self._inner = inner
        self._owner = owner_ident

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if name in self._WRITE_METHODS:
            def guarded(*args, **kw):
                if threading.get_ident() != self._owner:
                    raise RuntimeError(
                        "live tables may only be written by the trainer thread"
                    )
                return attr(*args, **kw)
            return guarded
        return attr

    def __len__(self):
        return len(self._inner)


class GuardedValueTable(_OwnedWrites):
    _WRITE_METHODS = ("update", "update_key", "load_bytes")


class GuardedProposal(_OwnedWrites):
    _WRITE_METHODS = ("update_toward", "update_toward_key", "load_bytes")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class MetricsWriter:
    """Append-only CSV plus JSON-lines mirror.  IO failures are logged,
    never fatal."""

    def __init__(self, out_dir: Path):
        self.csv_path = out_dir / "metrics.csv"
        self.jsonl_path = out_dir / "metrics.jsonl"
        self.rows = 0
        try:
            self._csv = open(self.csv_path, "w")
            self._csv.write(",".join(METRICS_HEADER) + "\n")
            self._jsonl = open(self.jsonl_path, "w")
        except OSError as e:  # pragma: no cover - disk trouble
            logger.warning("metrics stream unavailable: %s", e)
            self._csv = self._jsonl = None

    def row(self, record: dict) -> None:
        self.rows += 1
        cells = []
        for name in METRICS_HEADER:
            v = record.get(name)
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(f"{v:.6f}")
            else:
                cells.append(str(v))
        try:
            if self._csv:
                self._csv.write(",".join(cells) + "\n")
                self._csv.flush()
            if self._jsonl:
                self._jsonl.write(
                    json.dumps({k: record.get(k) for k in METRICS_HEADER}) + "\n"
                )
                self._jsonl.flush()
        except OSError as e:  # pragma: no cover
            logger.warning("metrics write failed: %s", e)

    def close(self) -> None:
        for fh in (self._csv, self._jsonl):
            if fh:
                try:
                    fh.close()
                except OSError:  # pragma: no cover
                    pass


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path, config: RunConfig, values: ValueTable, proposal: ProposalModel
) -> None:
    """Atomic versioned container: config JSON + both tables + CRC32."""
    name = config.game.encode()
    cfg = json.dumps(config.to_json_dict(), sort_keys=True).encode()
    vals = values.to_bytes()
    prop = proposal.to_bytes()
    body = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack(">B", CHECKPOINT_VERSION),
            struct.pack(">H", len(name)),
            name,
            struct.pack(">I", len(cfg)),
            cfg,
            struct.pack(">I", len(vals)),
            vals,
            struct.pack(">I", len(prop)),
            prop,
        ]
    )
    blob = body + struct.pack(">I", zlib.crc32(body))
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path, expected_game: str | None = None):
    """-> (config, game, values, proposal); every failure is a ValueError."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 9 or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    body, tail = blob[:-4], blob[-4:]
    if struct.pack(">I", zlib.crc32(body)) != tail:
        raise ValueError("checkpoint is corrupt or truncated")
    try:
        at = 4
        (version,) = struct.unpack_from(">B", body, at)
        at += 1
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (name_len,) = struct.unpack_from(">H", body, at)
        at += 2
        name = body[at : at + name_len].decode()
        at += name_len
        if expected_game is not None and name != expected_game:
            raise ValueError(
                f"checkpoint is for game {name!r}, not {expected_game!r}"
            )
        (cfg_len,) = struct.unpack_from(">I", body, at)
        at += 4
        config = RunConfig.from_json(json.loads(body[at : at + cfg_len]))
        at += cfg_len
        (val_len,) = struct.unpack_from(">I", body, at)
        at += 4
        val_bytes = body[at : at + val_len]
        at += val_len
        (prop_len,) = struct.unpack_from(">I", body, at)
        at += 4
        prop_bytes = body[at : at + prop_len]
        at += prop_len
        if at != len(body):
            raise ValueError("trailing bytes in checkpoint")
    except struct.error as e:
        raise ValueError("checkpoint is corrupt or truncated") from e
    game = make_game(config.game, config.game_params)
    game.discount = config.gamma
    values = ValueTable.for_game(game)
    values.load_bytes(val_bytes)
    proposal = ProposalModel(game)
    proposal.load_bytes(prop_bytes)
    return config, game, values, proposal


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    game: StochasticGame
    values: ValueTable
    proposal: ProposalModel
    episodes: int
    produced_targets: int
    consumed_targets: int
    batches: int
    throttle_events: int
    snapshots: list
    checkpoint_path: str
    metrics_csv: str
    metrics_jsonl: str
    summary_path: str


class _Stats:
    """Shared counters, lock-protected for the threaded mode."""

    def __init__(self):
        self.lock = threading.Lock()
        self.episodes = 0
        self.produced = 0
        self.ep_len_sum = 0
        self.ep_len_window = 0
        self.episodes_window = 0
        self.do_added_window = 0
        self.throttled_window = False
        self.throttle_events = 0

    def record_episode(self, length: int, targets: int, do_added: int):
        with self.lock:
            self.episodes += 1
            self.produced += targets
            self.ep_len_sum += length
            self.ep_len_window += length
            self.episodes_window += 1
            self.do_added_window += do_added


def _episode_seed(seed: int, worker: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(1, worker, episode))
    )


def train(
    cfg: RunConfig,
    out_dir,
    *,
    debug: bool = False,
    episode_fn=None,
    do_trace: bool = False,
) -> RunResult:
    """Run pretraining then the producer/consumer self-play loop.

    ``episode_fn(game, snapshot, cfg, rng) -> (trajectory, targets)``
    replaces the built-in episode producer (test hook).  ``debug`` wraps
    the live tables in write-owner guards so any write from a worker
    thread raises instead of corrupting state.  ``do_trace`` streams every
    double-oracle step to ``<out_dir>/do_trace.jsonl``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    game = make_game(cfg.game, cfg.game_params)
    game.discount = cfg.gamma
    solver = cfg.solver_params()
    schedule = cfg.schedule(game.num_players)
    do_cfg = cfg.do_config()

    raw_values = ValueTable.for_game(game)
    raw_proposal = ProposalModel(game)
    owner = threading.get_ident()
    values = GuardedValueTable(raw_values, owner) if debug else raw_values
    proposal = GuardedProposal(raw_proposal, owner) if debug else raw_proposal

    metrics = MetricsWriter(out)
    checkpoint_path = out / "checkpoint.bin"
    summary_path = out / "summary.json"
    started = time.time()

    def write_checkpoint():
        save_checkpoint(checkpoint_path, cfg, raw_values, raw_proposal)

    harmonic = cfg.alpha == "harmonic"
    alpha = (lambda v: 1.0 / (1.0 + v)) if harmonic else cfg.alpha

    # ---- phase 1: pretraining --------------------------------------------------
    pre_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    for _ in range(cfg.pretrain_episodes):
        _, targets = pretrain_episode(
            game, values, cfg.n_keep, solver, pre_rng, alpha=alpha
        )
        for t in targets:
            for p in range(game.num_players):
                proposal.update_toward_key(
                    t.state_key, p, t.action_sets[p], t.policies[p]
                )
    frozen_proposal = raw_proposal.snapshot()

    # ---- snapshots ---------------------------------------------------------------
    published: list = []
    latest: list = [None]

    def publish():
        worker_prop = (
            frozen_proposal
            if cfg.proposal_mode == "npu"
            else raw_proposal.snapshot()
        )
        snap = Snapshot(len(published), raw_values.snapshot(), worker_prop)
        published.append(snap)
        latest[0] = snap

    publish()

    # ---- producers -----------------------------------------------------------
    buffer = ReplayBuffer(cfg.buffer_capacity)
    stats = _Stats()
    stop = threading.Event()
    failures: list = []
    trace_lock = threading.Lock()
    trace_fh = open(out / "do_trace.jsonl", "w") if do_trace else None

    def trace_steps(state, log):
        lines = [
            json.dumps(
                {
                    "turn": state.turn,
                    "iteration": s.iteration,
                    "player": s.player,
                    "baseline": s.baseline,
                    "best_value": s.best_value,
                    "added": None if s.added is None else str(s.added),
                    "pool_size": s.pool_size,
                    "value_after": s.value_after,
                }
            )
            for s in log
        ]
        with trace_lock:
            trace_fh.write("".join(line + "\n" for line in lines))
            trace_fh.flush()

    def default_episode(snap: Snapshot, rng: np.random.Generator):
        do_added = 0
        candidate_fn = None
        if do_cfg is not None:
            def candidate_fn(state, ep_rng):
                nonlocal do_added
                css = [
                    snap.proposal.candidates(
                        state, p, ep_rng,
                        n_samples=cfg.n_samples, n_keep=cfg.n_keep,
                        per_unit_cap=cfg.per_unit_cap,
                    )
                    for p in range(game.num_players)
                ]
                outcome = find_equilibrium_with_do(
                    state, css, snap.values, game, do_cfg, solver, ep_rng
                )
                do_added += sum(
                    len(c.actions) - len(b.actions)
                    for c, b in zip(outcome.candidates, css)
                )
                if trace_fh is not None:
                    trace_steps(state, outcome.log)
                return outcome.candidates
        traj, targets = selfplay_episode(
            game, snap.values, snap.proposal, schedule, solver, rng,
            candidate_fn=candidate_fn,
            n_samples=cfg.n_samples, n_keep=cfg.n_keep,
            per_unit_cap=cfg.per_unit_cap, apply_updates=False,
        )
        return traj, targets, do_added

    def produce(worker: int, episode: int):
        rng = _episode_seed(cfg.seed, worker, episode)
        snap = latest[0]
        if episode_fn is not None:
            traj, targets = episode_fn(game, snap, cfg, rng)
            do_added = 0
        else:
            traj, targets, do_added = default_episode(snap, rng)
        for t in targets:
            buffer.push(t)
        stats.record_episode(len(traj.rewards), len(targets), do_added)

    # ---- the trainer ------------------------------------------------------------
    trainer_rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(2,))
    )
    probe_rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(3,))
    )
    consumed = 0
    batches = 0
    probe_enum: list = [None]
    root = game.initial_state()

    def train_step() -> str:
        nonlocal consumed, batches
        with stats.lock:
            produced = stats.produced
        if consumed + cfg.batch_size > cfg.max_train_ratio * produced:
            with stats.lock:
                stats.throttled_window = True
                stats.throttle_events += 1
            return "throttled"
        if len(buffer) < cfg.batch_size:
            return "starved"
        batch = buffer.sample(cfg.batch_size, trainer_rng)
        for t in batch:
            step = (
                1.0 / (1.0 + raw_values.visits.get(t.state_key, 0))
                if harmonic
                else cfg.alpha
            )
            values.update_key(t.state_key, t.values, step)
            for p in range(game.num_players):
                proposal.update_toward_key(
                    t.state_key, p, t.action_sets[p], t.policies[p]
                )
        consumed += cfg.batch_size
        batches += 1
        if batches % cfg.snapshot_interval == 0:
            publish()
        return "trained"

    def exploit_probe() -> float | None:
        if game.num_players != 2:
            return None
        from .evaluation import table_policy_exploitability
        from .stogame import enumerate_reachable_2p

        if probe_enum[0] is None:
            probe_enum[0] = enumerate_reachable_2p(game)
        return table_policy_exploitability(
            game, raw_values, solver, probe_rng, enum=probe_enum[0]
        )

    def metrics_row():
        with stats.lock:
            eps = stats.episodes
            win_eps = stats.episodes_window
            win_len = stats.ep_len_window
            win_do = stats.do_added_window
            throttled = stats.throttled_window
            stats.episodes_window = 0
            stats.ep_len_window = 0
            stats.do_added_window = 0
            stats.throttled_window = False
        probe = None
        if cfg.probe_interval and metrics.rows % cfg.probe_interval == 0:
            probe = exploit_probe()
        metrics.row(
            {
                "episodes": eps,
                "buffer_size": len(buffer),
                "mean_episode_length": (win_len / win_eps) if win_eps else 0.0,
                "mean_root_value": float(raw_values.value(root)[0]),
                "do_added_rate": (win_do / win_eps) if win_eps else 0.0,
                "exploitability_probe": probe,
                "throttle_active": int(throttled),
                "trained_batches": batches,
                "snapshot_version": latest[0].version,
            }
        )

    def finish() -> RunResult:
        write_checkpoint()
        metrics_row()
        metrics.close()
        if trace_fh is not None:
            trace_fh.close()
        summary = {
            "config": cfg.to_json_dict(),
            "episodes": stats.episodes,
            "produced_targets": stats.produced,
            "consumed_targets": consumed,
            "batches": batches,
            "snapshots_published": len(published),
            "buffer": {
                "size": len(buffer),
                "pushed": buffer.pushed,
                "popped": buffer.popped,
                "evicted": buffer.evicted,
            },
            "throttle_events": stats.throttle_events,
            "wall_seconds": time.time() - started,
            "final_root_value": [float(x) for x in raw_values.value(root)],
        }
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        return RunResult(
            cfg, game, raw_values, raw_proposal,
            stats.episodes, stats.produced, consumed, batches,
            stats.throttle_events, published,
            str(checkpoint_path), str(metrics.csv_path),
            str(metrics.jsonl_path), str(summary_path),
        )

    def abort(exc: BaseException):
        stop.set()
        try:
            write_checkpoint()  # partial checkpoint for post-mortems
            metrics.close()
            if trace_fh is not None:
                trace_fh.close()
        finally:
            raise RuntimeError(f"training run aborted: {exc!r}") from exc

    next_metrics_at = cfg.metrics_interval
    next_checkpoint_at = cfg.checkpoint_interval or None

    if cfg.workers == 1:
        # Sequential deterministic interleaving.
        try:
            for ep in range(cfg.selfplay_episodes):
                produce(0, ep)
                while train_step() == "trained":
                    pass
                if stats.episodes >= next_metrics_at:
                    metrics_row()
                    next_metrics_at += cfg.metrics_interval
                if next_checkpoint_at and stats.episodes >= next_checkpoint_at:
                    write_checkpoint()
                    next_checkpoint_at += cfg.checkpoint_interval
        except Exception as e:
            abort(e)
        return finish()

    # Threaded mode: workers produce, this thread trains.
    claim_lock = threading.Lock()
    next_episode = [0]

    def claim() -> int | None:
        with claim_lock:
            if next_episode[0] >= cfg.selfplay_episodes:
                return None
            ep = next_episode[0]
            next_episode[0] += 1
            return ep

    def worker_loop(worker: int):
        try:
            while not stop.is_set():
                ep = claim()
                if ep is None:
                    return
                produce(worker, ep)
        except BaseException as e:
            failures.append((worker, e))
            stop.set()

    threads = [
        threading.Thread(target=worker_loop, args=(w,), daemon=True)
        for w in range(cfg.workers)
    ]
    for t in threads:
        t.start()
    try:
        while True:
            if failures:
                break
            status = train_step()
            with stats.lock:
                eps = stats.episodes
            if eps >= next_metrics_at:
                metrics_row()
                next_metrics_at += cfg.metrics_interval
            if next_checkpoint_at and eps >= next_checkpoint_at:
                write_checkpoint()
                next_checkpoint_at += cfg.checkpoint_interval
            workers_done = all(not t.is_alive() for t in threads)
            if status != "trained":
                if workers_done:
                    break
                time.sleep(0.001)
    finally:
        stop.set()
        for t in threads:
            t.join()
    if failures:
        abort(failures[0][1])
    return finish()
