"""Command-line entry point.

Subcommands: train, evaluate, exploit, headtohead, solve-matrix,
inspect-proposal, dump-values, render.  Success prints machine-readable
JSON to stdout and exits 0; failures print one JSON error object to
stderr and exit nonzero (2 for usage problems, 1 for everything else).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .double_oracle import DoConfig
from .evaluation import (
    Agent,
    exploiter_train,
    measure_exploitability,
    play_match,
)
from .matrix_games import RestrictedStageGame, solve_restricted
from .nashvi import SolverParams
from .runner import RunConfig, load_checkpoint, train
from .stogame import make_game, registered_games


def _fail(kind: str, message: str, code: int = 1) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


class _Parser(argparse.ArgumentParser):
    """argparse that keeps the error contract: JSON on stderr, exit 2."""

    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _alpha(value: str):
    return value if value == "harmonic" else float(value)


def _float_list(value: str) -> list[float]:
    return [float(x) for x in value.split(",") if x.strip()]


_GEN_ALIASES = {"uniform": "uniform", "local": "local_modification", "full": "full"}


def _add_globals(sub):
    sub.add_argument("--config", help="JSON config file (flags override it)")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--out-dir", default="out")


def _add_do_flags(sub):
    sub.add_argument("--do", action="store_true", help="enable double-oracle candidate expansion")
    sub.add_argument("--do-pool", type=int, default=None)
    sub.add_argument("--do-topk", type=int, default=None)
    sub.add_argument("--do-eps", type=float, default=None)
    sub.add_argument("--do-iters", type=int, default=None)
    sub.add_argument("--do-gen", choices=sorted(_GEN_ALIASES), default=None)
    sub.add_argument("--do-nd", type=int, default=None)


def _add_agent_flags(sub):
    sub.add_argument("--iters", type=int, default=None, help="RM iterations per stage solve")
    sub.add_argument("--optimism", type=_onoff, default=None)
    sub.add_argument("--linear", type=_onoff, default=None)
    sub.add_argument("--n-samples", type=int, default=None)
    sub.add_argument("--n-keep", type=int, default=None)
    sub.add_argument("--per-unit-cap", type=int, default=None)
    sub.add_argument("--rollout-depth", type=int, default=0)
    sub.add_argument("--rollout-samples", type=int, default=16)


def build_parser() -> _Parser:
    p = _Parser(prog="eqlearn", description=__doc__)
    sp = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sp.add_parser("train", help="run the self-play training loop")
    _add_globals(t)
    t.add_argument("--game", default=None, choices=None)
    t.add_argument("--game-params", default=None, help="JSON parameter block for the game")
    _add_do_flags(t)
    t.add_argument("--do-trace", action="store_true",
                   help="stream double-oracle steps to <out-dir>/do_trace.jsonl")
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--optimism", type=_onoff, default=None)
    t.add_argument("--linear", type=_onoff, default=None)
    t.add_argument("--n-samples", type=int, default=None)
    t.add_argument("--n-keep", type=int, default=None)
    t.add_argument("--per-unit-cap", type=int, default=None)
    t.add_argument("--explore-base", type=float, default=None)
    t.add_argument("--explore-overrides", type=_float_list, default=None,
                   help="comma-separated per-turn exploration rates")
    t.add_argument("--alpha", type=_alpha, default=None,
                   help="value step size in (0,1], or 'harmonic'")
    t.add_argument("--gamma", type=float, default=None)
    t.add_argument("--buffer", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--ratio", type=float, default=None, help="max trained/produced target ratio")
    t.add_argument("--snapshot-interval", type=int, default=None)
    t.add_argument("--checkpoint-interval", type=int, default=None)
    t.add_argument("--metrics-interval", type=int, default=None)
    t.add_argument("--probe-interval", type=int, default=None)
    t.add_argument("--pretrain", type=int, default=None)
    t.add_argument("--episodes", type=int, default=None)
    t.add_argument("--mode", choices=["normal", "npu"], default=None)
    t.add_argument("--debug", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sp.add_parser("evaluate", help="self-play match of one checkpointed agent")
    _add_globals(e)
    e.add_argument("checkpoint")
    e.add_argument("--games", type=int, default=100)
    _add_agent_flags(e)
    _add_do_flags(e)
    e.set_defaults(func=cmd_evaluate)

    h = sp.add_parser("headtohead", help="match between checkpointed agents, one per seat")
    _add_globals(h)
    h.add_argument("checkpoints", nargs="+")
    h.add_argument("--games", type=int, default=100)
    _add_agent_flags(h)
    _add_do_flags(h)
    h.set_defaults(func=cmd_headtohead)

    x = sp.add_parser("exploit", help="train an exploiter against a checkpointed victim and measure it")
    _add_globals(x)
    x.add_argument("victim")
    x.add_argument("--seat", type=int, default=0, help="seat the exploiter occupies")
    x.add_argument("--train-episodes", type=int, default=200)
    x.add_argument("--games", type=int, default=200)
    x.add_argument("--alpha", type=float, default=0.1)
    x.add_argument("--epsilon", type=float, default=0.2)
    _add_agent_flags(x)
    _add_do_flags(x)
    x.set_defaults(func=cmd_exploit)

    m = sp.add_parser("solve-matrix", help="solve a one-shot matrix game from JSON")
    m.add_argument("input", help="JSON file {'players': N, 'payoffs': nested}, or - for stdin")
    m.add_argument("--iters", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--optimism", type=_onoff, default=True)
    m.add_argument("--linear", type=_onoff, default=True)
    m.set_defaults(func=cmd_solve_matrix)

    ip = sp.add_parser("inspect-proposal", help="top-k proposal actions at a state")
    ip.add_argument("checkpoint")
    ip.add_argument("--state", default=None, help="hex state key (default: the initial state)")
    ip.add_argument("--player", type=int, default=None, help="restrict to one seat")
    ip.add_argument("--top", type=int, default=10)
    ip.set_defaults(func=cmd_inspect_proposal)

    dv = sp.add_parser("dump-values", help="top-visited value-table rows")
    dv.add_argument("checkpoint")
    dv.add_argument("--top", type=int, default=10)
    dv.set_defaults(func=cmd_dump_values)

    r = sp.add_parser("render", help="text diagram of a board game (plus optional DOT file)")
    r.add_argument("--game", default="duel9")
    r.add_argument("--game-params", default=None)
    r.add_argument("--dot", default=None, help="write a DOT graph to this path")
    r.set_defaults(func=cmd_render)

    return p


# ---------------------------------------------------------------------------
# Shared assembly helpers
# ---------------------------------------------------------------------------

_TRAIN_FLAG_TO_FIELD = {
    "game": "game",
    "seed": "seed",
    "workers": "workers",
    "iters": "iterations",
    "optimism": "optimism",
    "linear": "linear",
    "n_samples": "n_samples",
    "n_keep": "n_keep",
    "per_unit_cap": "per_unit_cap",
    "explore_base": "explore_base",
    "explore_overrides": "explore_overrides",
    "alpha": "alpha",
    "gamma": "gamma",
    "buffer": "buffer_capacity",
    "batch": "batch_size",
    "ratio": "max_train_ratio",
    "snapshot_interval": "snapshot_interval",
    "checkpoint_interval": "checkpoint_interval",
    "metrics_interval": "metrics_interval",
    "probe_interval": "probe_interval",
    "pretrain": "pretrain_episodes",
    "episodes": "selfplay_episodes",
    "mode": "proposal_mode",
    "do_pool": "do_pool",
    "do_topk": "do_topk",
    "do_eps": "do_eps",
    "do_iters": "do_iters",
    "do_nd": "do_nbase",
}


def _train_config(args) -> RunConfig:
    doc: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
    for flag, field in _TRAIN_FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            doc[field] = v
    if args.game_params is not None:
        doc["game_params"] = json.loads(args.game_params)
    if args.do:
        doc["use_do"] = True
    if args.do_gen is not None:
        doc["do_generator"] = _GEN_ALIASES[args.do_gen]
        doc.setdefault("use_do", True)
    return RunConfig.from_json(doc)


def _do_config_from_flags(args) -> DoConfig | None:
    """Inference-preset DoConfig for one-shot commands, when --do is set."""
    flags = {
        "pool_size": args.do_pool,
        "top_k": args.do_topk,
        "epsilon": args.do_eps,
        "iterations": args.do_iters,
        "n_base": args.do_nd,
    }
    overrides = {k: v for k, v in flags.items() if v is not None}
    if args.do_gen is not None:
        overrides["generator"] = _GEN_ALIASES[args.do_gen]
    if not args.do and not overrides:
        return None
    return DoConfig.inference(**overrides)


def _agent_from_checkpoint(path: str, args, label: str | None = None):
    cfg, game, values, proposal = load_checkpoint(path)
    solver = SolverParams(
        args.iters if args.iters is not None else cfg.iterations,
        args.optimism if args.optimism is not None else cfg.optimism,
        args.linear if args.linear is not None else cfg.linear,
    )
    agent = Agent(
        label or Path(path).stem,
        values,
        proposal=proposal,
        solver=solver,
        do_config=_do_config_from_flags(args),
        rollout_depth=args.rollout_depth,
        rollout_samples=args.rollout_samples,
        n_samples=args.n_samples if args.n_samples is not None else cfg.n_samples,
        n_keep=args.n_keep if args.n_keep is not None else cfg.n_keep,
        per_unit_cap=(
            args.per_unit_cap if args.per_unit_cap is not None else cfg.per_unit_cap
        ),
    )
    return agent, game, cfg


def _report_out(report, args, stem: str) -> dict:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    report.write_csv(csv_path)
    summary = report.summary()
    summary["csv"] = str(csv_path)
    print(json.dumps(summary, indent=2))
    return summary


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _train_config(args)
    result = train(
        cfg, args.out_dir, debug=args.debug, do_trace=args.do_trace
    )
    print(Path(result.summary_path).read_text())
    return 0


def cmd_evaluate(args) -> int:
    agent, game, _ = _agent_from_checkpoint(args.checkpoint, args)
    agents = [
        Agent(
            f"{agent.label}[{seat}]", agent.values, proposal=agent.proposal,
            solver=agent.solver, do_config=agent.do_config,
            rollout_depth=agent.rollout_depth, rollout_samples=agent.rollout_samples,
            n_samples=agent.n_samples, n_keep=agent.n_keep,
            per_unit_cap=agent.per_unit_cap,
        )
        for seat in range(game.num_players)
    ]
    rng = np.random.default_rng(args.seed or 0)
    report = play_match(game, agents, args.games, rng)
    _report_out(report, args, "evaluate")
    return 0


def cmd_headtohead(args) -> int:
    agents = []
    game = None
    first_game_name = None
    for path in args.checkpoints:
        agent, g, ck_cfg = _agent_from_checkpoint(path, args)
        if game is None:
            game, first_game_name = g, ck_cfg.game
        elif ck_cfg.game != first_game_name:
            raise ValueError(
                f"checkpoints disagree on the game: "
                f"{first_game_name!r} vs {ck_cfg.game!r}"
            )
        agents.append(agent)
    if len(agents) != game.num_players:
        raise ValueError(
            f"{game.num_players}-player game needs {game.num_players} "
            f"checkpoints, got {len(agents)}"
        )
    rng = np.random.default_rng(args.seed or 0)
    report = play_match(game, agents, args.games, rng)
    _report_out(report, args, "headtohead")
    return 0


def cmd_exploit(args) -> int:
    victim, game, cfg = _agent_from_checkpoint(args.victim, args, label="victim")
    solver = SolverParams(
        args.iters if args.iters is not None else cfg.iterations,
        args.optimism if args.optimism is not None else cfg.optimism,
        args.linear if args.linear is not None else cfg.linear,
    )
    rng = np.random.default_rng(args.seed or 0)
    exploiter = exploiter_train(
        game, victim, args.seat,
        episodes=args.train_episodes, rng=rng, solver=solver,
        alpha=args.alpha, epsilon=args.epsilon,
        do_config=_do_config_from_flags(args),
        n_samples=victim.n_samples, n_keep=victim.n_keep,
        per_unit_cap=victim.per_unit_cap,
    )
    report = measure_exploitability(
        game, victim, exploiter, args.seat, args.games, rng
    )
    _report_out(report, args, "exploit")
    return 0


def cmd_solve_matrix(args) -> int:
    raw = sys.stdin.read() if args.input == "-" else Path(args.input).read_text()
    doc = json.loads(raw)
    try:
        players = int(doc["players"])
        payoffs = doc["payoffs"]
    except (KeyError, TypeError):
        raise ValueError("input must be a JSON object {'players': N, 'payoffs': nested}")
    if players < 2:
        raise ValueError("need at least two players")

    def depth(x):
        d = 0
        while isinstance(x, (list, tuple)):
            d += 1
            x = x[0]
        return d

    if players == 2 and depth(payoffs) == 2:
        game = RestrictedStageGame.from_matrix(payoffs)
    else:
        if len(payoffs) != players or depth(payoffs[0]) != players:
            raise ValueError(
                "payoffs must be the row player's matrix (2p zero-sum) or "
                "one payoff tensor per player"
            )
        game = RestrictedStageGame.from_tensors(payoffs)
    rng = np.random.default_rng(args.seed)
    res = solve_restricted(
        game, args.iters, rng, optimism=args.optimism, linear=args.linear
    )
    print(
        json.dumps(
            {
                "strategies": [[float(p) for p in s] for s in res.strategies],
                "values": [float(v) for v in res.values],
                "iterations_run": res.iterations_run,
                "value_samples": res.value_samples,
            },
            indent=2,
        )
    )
    return 0


def cmd_inspect_proposal(args) -> int:
    cfg, game, _, proposal = load_checkpoint(args.checkpoint)
    key = bytes.fromhex(args.state) if args.state else game.initial_state().key
    players = [args.player] if args.player is not None else range(game.num_players)
    rows = []
    for p in players:
        entry = proposal.table.get((key, p))
        if entry is None:
            rows.append({"player": int(p), "actions": []})
            continue
        total = sum(entry.values())
        ranked = sorted(entry.items(), key=lambda kv: -kv[1])[: args.top]
        rows.append(
            {
                "player": int(p),
                "actions": [
                    {
                        "action": str(a),
                        "weight": float(w),
                        "prob": float(w / total),
                    }
                    for a, w in ranked
                ],
            }
        )
    print(json.dumps({"game": cfg.game, "state": key.hex(), "players": rows}, indent=2))
    return 0


def cmd_dump_values(args) -> int:
    cfg, _, values, _ = load_checkpoint(args.checkpoint)
    rows = [
        {"state": key.hex(), "visits": int(n), "values": [float(v) for v in row]}
        for key, n, row in values.top_visited(args.top)
    ]
    print(json.dumps({"game": cfg.game, "states": rows}, indent=2))
    return 0


def cmd_render(args) -> int:
    from .microdip import MicroDipGame, render_dot, render_text

    params = json.loads(args.game_params) if args.game_params else {}
    game = make_game(args.game, params)
    if not isinstance(game, MicroDipGame):
        raise ValueError(
            f"render supports board games only; known: {registered_games()}"
        )
    state = game.initial_state()
    print(render_text(game, state))
    if args.dot:
        Path(args.dot).write_text(render_dot(game, state))
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_help()
            return 0
        return args.func(args)
    except _UsageError as e:
        return _fail("usage", str(e), code=2)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        return _fail(type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
