"""Command-line surface: argument plumbing, JSON outputs, error contract."""

import csv
import io
import json

import numpy as np
import pytest

from eqlearn.cli import main

RING6 = {
    "name": "ring6",
    "nodes": 6,
    "edges": [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [0, 5]],
    "scs": [0, 2, 3, 5],
    "homes": [[0], [3]],
    "units": [[0], [3]],
    "max_turns": 4,
}

TINY_TRAIN = {
    "game": "iterated_pennies",
    "game_params": {"rounds": 2},
    "iterations": 32,
    "n_samples": 8,
    "n_keep": 4,
    "buffer_capacity": 400,
    "batch_size": 8,
    "snapshot_interval": 2,
    "metrics_interval": 3,
    "pretrain_episodes": 2,
    "selfplay_episodes": 6,
}


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ck")
    cfg_path = out / "cfg.json"
    cfg_path.write_text(json.dumps(TINY_TRAIN))
    rc = main(
        ["train", "--config", str(cfg_path), "--seed", "4", "--out-dir", str(out)]
    )
    assert rc == 0
    return out / "checkpoint.bin"


def run_cli(capsys, argv):
    rc = main(argv)
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


class TestSolveMatrix:
    def test_rps_near_uniform(self, capsys, tmp_path):
        path = tmp_path / "rps.json"
        path.write_text(
            json.dumps({"players": 2, "payoffs": [[0, -1, 1], [1, 0, -1], [-1, 1, 0]]})
        )
        rc, out, _ = run_cli(
            capsys, ["solve-matrix", str(path), "--iters", "20000", "--seed", "1"]
        )
        assert rc == 0
        doc = json.loads(out)
        for sigma in doc["strategies"]:
            assert max(abs(p - 1 / 3) for p in sigma) < 0.05
        assert abs(doc["values"][0] + doc["values"][1]) < 1e-9
        assert doc["iterations_run"] == 20000

    def test_stdin_and_tensor_form(self, capsys, monkeypatch):
        doc = {
            "players": 2,
            "payoffs": [[[2, 0], [0, 1]], [[1, 0], [0, 2]]],  # coordination
        }
        monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps(doc)))
        rc, out, _ = run_cli(capsys, ["solve-matrix", "-", "--iters", "2000"])
        assert rc == 0
        parsed = json.loads(out)
        assert len(parsed["strategies"]) == 2
        assert len(parsed["values"]) == 2

    def test_three_player_tensors(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        tensors = [rng.uniform(-1, 1, size=(2, 2, 2)).tolist() for _ in range(3)]
        path = tmp_path / "g3.json"
        path.write_text(json.dumps({"players": 3, "payoffs": tensors}))
        rc, out, _ = run_cli(capsys, ["solve-matrix", str(path), "--iters", "500"])
        assert rc == 0
        assert len(json.loads(out)["strategies"]) == 3

    def test_bad_payload_is_json_error(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"payoffs": [[0]]}))
        rc, _, err = run_cli(capsys, ["solve-matrix", str(path)])
        assert rc == 1
        msg = json.loads(err)
        assert msg["error"] == "ValueError"
        assert "players" in msg["message"]

    def test_malformed_json(self, capsys, tmp_path):
        path = tmp_path / "nope.json"
        path.write_text("{oops")
        rc, _, err = run_cli(capsys, ["solve-matrix", str(path)])
        assert rc == 1
        assert json.loads(err)["error"] == "JSONDecodeError"

    def test_missing_argument_is_usage_error(self, capsys):
        rc, _, err = run_cli(capsys, ["solve-matrix"])
        assert rc == 2
        assert json.loads(err)["error"] == "usage"


class TestTrain:
    def test_config_plus_flag_overrides(self, capsys, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TINY_TRAIN))
        rc, out, _ = run_cli(
            capsys,
            [
                "train", "--config", str(cfg_path), "--seed", "9",
                "--out-dir", str(tmp_path / "run"), "--episodes", "4",
                "--alpha", "harmonic",
            ],
        )
        assert rc == 0
        summary = json.loads(out)
        assert summary["episodes"] == 4  # the flag beat the config file
        assert summary["config"]["alpha"] == "harmonic"
        assert summary["config"]["seed"] == 9
        assert (tmp_path / "run" / "checkpoint.bin").exists()
        assert (tmp_path / "run" / "metrics.csv").exists()

    def test_do_trace_stream(self, capsys, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TINY_TRAIN))
        rc, _, _ = run_cli(
            capsys,
            [
                "train", "--config", str(cfg_path), "--out-dir", str(tmp_path / "r"),
                "--do", "--do-pool", "12", "--do-iters", "2", "--do-gen", "uniform",
                "--do-trace", "--episodes", "4",
            ],
        )
        assert rc == 0
        lines = (tmp_path / "r" / "do_trace.jsonl").read_text().splitlines()
        assert lines
        rec = json.loads(lines[0])
        assert {"turn", "player", "baseline", "best_value", "added", "pool_size"} <= set(rec)

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"batch_sizes": 7}))
        rc, _, err = run_cli(
            capsys, ["train", "--config", str(cfg_path), "--out-dir", str(tmp_path)]
        )
        assert rc == 1
        assert "unknown config fields" in json.loads(err)["message"]

    def test_unknown_game(self, capsys, tmp_path):
        rc, _, err = run_cli(
            capsys, ["train", "--game", "atlantis", "--out-dir", str(tmp_path)]
        )
        assert rc == 1
        assert "atlantis" in json.loads(err)["message"]

    def test_custom_board_params_inline(self, capsys, tmp_path):
        rc, out, _ = run_cli(
            capsys,
            [
                "train", "--game", "custom_board", "--game-params", json.dumps(RING6),
                "--iters", "24", "--n-samples", "8", "--n-keep", "4",
                "--buffer", "300", "--batch", "8", "--pretrain", "2",
                "--episodes", "3", "--out-dir", str(tmp_path / "rb"),
            ],
        )
        assert rc == 0
        assert json.loads(out)["config"]["game"] == "custom_board"


class TestMatchCommands:
    def test_evaluate(self, capsys, tiny_checkpoint, tmp_path):
        rc, out, _ = run_cli(
            capsys,
            [
                "evaluate", str(tiny_checkpoint), "--games", "6",
                "--seed", "2", "--out-dir", str(tmp_path),
            ],
        )
        assert rc == 0
        summary = json.loads(out)
        assert summary["games"] == 6
        rows = list(csv.DictReader(open(summary["csv"])))
        assert len(rows) == 6
        assert summary["labels"][0].endswith("[0]")

    def test_headtohead(self, capsys, tiny_checkpoint, tmp_path):
        rc, out, _ = run_cli(
            capsys,
            [
                "headtohead", str(tiny_checkpoint), str(tiny_checkpoint),
                "--games", "4", "--out-dir", str(tmp_path),
            ],
        )
        assert rc == 0
        assert json.loads(out)["games"] == 4

    def test_headtohead_seat_count_mismatch(self, capsys, tiny_checkpoint, tmp_path):
        rc, _, err = run_cli(
            capsys,
            ["headtohead", str(tiny_checkpoint), "--out-dir", str(tmp_path)],
        )
        assert rc == 1
        assert "2-player game needs 2" in json.loads(err)["message"]

    def test_headtohead_game_mismatch(self, capsys, tiny_checkpoint, tmp_path):
        other_dir = tmp_path / "other"
        rc = main(
            [
                "train", "--game", "custom_board", "--game-params", json.dumps(RING6),
                "--iters", "24", "--n-samples", "8", "--n-keep", "4",
                "--buffer", "300", "--batch", "8", "--pretrain", "1",
                "--episodes", "2", "--out-dir", str(other_dir),
            ]
        )
        assert rc == 0
        rc, _, err = run_cli(
            capsys,
            [
                "headtohead", str(tiny_checkpoint), str(other_dir / "checkpoint.bin"),
                "--out-dir", str(tmp_path),
            ],
        )
        assert rc == 1
        assert "disagree" in json.loads(err)["message"]

    def test_exploit(self, capsys, tiny_checkpoint, tmp_path):
        rc, out, _ = run_cli(
            capsys,
            [
                "exploit", str(tiny_checkpoint), "--train-episodes", "8",
                "--games", "6", "--seed", "1", "--out-dir", str(tmp_path),
            ],
        )
        assert rc == 0
        summary = json.loads(out)
        assert summary["labels"] == ["victim", "exploiter"]
        assert summary["games"] == 6


class TestInspection:
    def test_inspect_proposal(self, capsys, tiny_checkpoint):
        rc, out, _ = run_cli(
            capsys, ["inspect-proposal", str(tiny_checkpoint), "--top", "2"]
        )
        assert rc == 0
        doc = json.loads(out)
        assert doc["game"] == "iterated_pennies"
        assert len(doc["players"]) == 2
        for row in doc["players"]:
            assert len(row["actions"]) <= 2
            weights = [a["weight"] for a in row["actions"]]
            assert weights == sorted(weights, reverse=True)
            assert all(0 <= a["prob"] <= 1 for a in row["actions"])

    def test_inspect_single_player_and_state(self, capsys, tiny_checkpoint):
        rc, out, _ = run_cli(
            capsys, ["inspect-proposal", str(tiny_checkpoint), "--player", "1"]
        )
        assert rc == 0
        doc = json.loads(out)
        assert [r["player"] for r in doc["players"]] == [1]
        # asking for the root by explicit hex matches the default
        rc2, out2, _ = run_cli(
            capsys,
            [
                "inspect-proposal", str(tiny_checkpoint),
                "--state", doc["state"], "--player", "1",
            ],
        )
        assert rc2 == 0
        assert json.loads(out2) == doc

    def test_unseen_state_yields_empty_rows(self, capsys, tiny_checkpoint):
        rc, out, _ = run_cli(
            capsys, ["inspect-proposal", str(tiny_checkpoint), "--state", "ff00"]
        )
        assert rc == 0
        assert all(r["actions"] == [] for r in json.loads(out)["players"])

    def test_dump_values(self, capsys, tiny_checkpoint):
        rc, out, _ = run_cli(capsys, ["dump-values", str(tiny_checkpoint), "--top", "3"])
        assert rc == 0
        doc = json.loads(out)
        assert 1 <= len(doc["states"]) <= 3
        visits = [r["visits"] for r in doc["states"]]
        assert visits == sorted(visits, reverse=True)
        assert all(len(r["values"]) == 2 for r in doc["states"])

    def test_not_a_checkpoint(self, capsys, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"garbage")
        rc, _, err = run_cli(capsys, ["dump-values", str(path)])
        assert rc == 1
        assert "not a checkpoint file" in json.loads(err)["message"]


class TestRender:
    def test_text_and_dot(self, capsys, tmp_path):
        dot = tmp_path / "board.dot"
        rc, out, _ = run_cli(capsys, ["render", "--game", "duel9", "--dot", str(dot)])
        assert rc == 0
        assert "SC(" in out and "unit P0" in out
        assert dot.read_text().startswith("graph")

    def test_custom_board(self, capsys):
        rc, out, _ = run_cli(
            capsys, ["render", "--game", "custom_board", "--game-params", json.dumps(RING6)]
        )
        assert rc == 0
        assert "ring6" in out

    def test_non_board_game_rejected(self, capsys):
        rc, _, err = run_cli(capsys, ["render", "--game", "iterated_pennies"])
        assert rc == 1
        assert "board games" in json.loads(err)["message"]


def test_no_command_prints_help(capsys):
    rc, out, _ = run_cli(capsys, [])
    assert rc == 0
    assert "usage" in out.lower()
