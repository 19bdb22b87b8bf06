import json

import pytest

from anonshm.cli import EXIT_ERROR, EXIT_OK, EXIT_UNDECIDED, EXIT_VIOLATED, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def cfg(tmp_path):
    def make(**d):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(d))
        return str(p)
    return make


def test_simulate_snapshot(capsys, cfg, tmp_path):
    path = cfg(nProcessors=3, nRegisters=3, algorithm="snapshot", inputs=[1, 2, 3])
    tr = tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "simulate", path, "--seed", "7", "--trace", str(tr))
    s = json.loads(out)
    assert code == EXIT_OK and s["terminated"]
    assert all(o is not None for o in s["outputs"])
    assert {v["check"]: v["verdict"] for v in s["verdicts"]}["containment"] == "HOLDS"
    # bit-identical on rerun
    code2, out2, _ = run(capsys, "simulate", path, "--seed", "7")
    assert out2 == out
    code, out, _ = run(capsys, "check", str(tr))
    assert code == EXIT_OK and json.loads(out)["finalDigest"] == s["finalDigest"]


def test_simulate_writescan_notes_non_termination(capsys, cfg):
    path = cfg(nProcessors=2, nRegisters=2, algorithm="writescan", inputs=[1, 2])
    code, out, _ = run(capsys, "simulate", path, "--max-steps", "50")
    s = json.loads(out)
    assert code == EXIT_OK and s["steps"] == 50 and "by design" in s["note"]


def test_missing_config_leaves_no_trace(capsys, tmp_path):
    tr = tmp_path / "t.jsonl"
    code, out, err = run(capsys, "simulate", str(tmp_path / "nope.json"), "--trace", str(tr))
    assert code == EXIT_ERROR and out == "" and "cannot read" in err
    assert not tr.exists()


def test_invalid_config(capsys, cfg):
    path = cfg(nProcessors=1, algorithm="snapshot", inputs=[1])
    code, _, err = run(capsys, "simulate", path)
    assert code == EXIT_ERROR and "N > 1" in err


def test_replay_fig2(capsys, tmp_path):
    dot = tmp_path / "g.dot"
    code, out, _ = run(capsys, "replay", "--builtin", "fig2", "--dot", str(dot))
    s = json.loads(out)
    assert code == EXIT_OK and s["rowsMatched"] == "13/13"
    assert s["cycle"] == {"start": 20, "length": 36, "rowStart": 4, "rowEnd": 13}
    assert "->" in dot.read_text()


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_replay_covering(capsys, n):
    code, out, _ = run(capsys, "replay", "--builtin", f"covering:{n}")
    assert code == EXIT_OK and json.loads(out)["verdicts"][0]["verdict"] == "HOLDS"


def test_replay_bad_builtin(capsys):
    assert run(capsys, "replay", "--builtin", "fig9")[0] == EXIT_ERROR


def test_replay_script_divergence(capsys, tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({
        "config": {"nProcessors": 2, "nRegisters": 2, "algorithm": "writescan", "inputs": [1, 2]},
        "script": [{"actor": 1, "writeTarget": 1}, {"actor": 1}, {"actor": 1},
                   {"actor": 1, "writeTarget": 1}],
    }))
    code, out, _ = run(capsys, "replay", str(p))
    s = json.loads(out)
    assert code == EXIT_ERROR and s["divergence"]["step"] == 3


def test_replay_script_with_config(capsys, tmp_path, cfg):
    path = cfg(nProcessors=2, nRegisters=2, algorithm="snapshot", inputs=[1, 2])
    p = tmp_path / "s.json"
    p.write_text(json.dumps([{"actor": 1}] * 5))
    code, out, _ = run(capsys, "replay", str(p), "--config", path)
    assert code == EXIT_OK and json.loads(out)["steps"] == 5
    assert run(capsys, "replay", str(p))[0] == EXIT_ERROR  # bare script needs --config


def test_explore_exit_codes(capsys, cfg):
    path = cfg(nProcessors=2, nRegisters=2, algorithm="snapshot", inputs=[1, 2])
    code, out, _ = run(capsys, "explore", path)
    assert code == EXIT_OK and json.loads(out)["exhaustive"]
    code, out, _ = run(capsys, "explore", path, "--max-states", "100")
    assert code == EXIT_UNDECIDED and "NON-EXHAUSTIVE" in json.loads(out)["note"]
    path = cfg(nProcessors=2, nRegisters=2, algorithm="writescan", inputs=[1, 2])
    code, out, _ = run(capsys, "explore", path)
    assert code == EXIT_VIOLATED


def test_explore_consensus_requires_cap(capsys, cfg):
    path = cfg(nProcessors=2, nRegisters=2, algorithm="consensus", inputs=["a", "b"])
    assert run(capsys, "explore", path)[0] == EXIT_ERROR
    code, out, _ = run(capsys, "explore", path, "--ts-cap", "2", "--solo-samples", "10")
    assert code == EXIT_OK


def test_explore_dot_and_pretty(capsys, cfg, tmp_path):
    path = cfg(nProcessors=2, nRegisters=2, algorithm="snapshot", inputs=[1, 1])
    dot = tmp_path / "s.dot"
    code, out, _ = run(capsys, "explore", path, "--dot", str(dot), "--pretty")
    assert code == EXIT_OK and "wait-free" in out and "HOLDS" in out
    assert dot.read_text().startswith("digraph")


def test_explore_output_is_reproducible(capsys, cfg):
    path = cfg(nProcessors=2, nRegisters=2, algorithm="renaming", inputs=[2, 1])
    a = run(capsys, "explore", path)[1]
    b = run(capsys, "explore", path)[1]
    assert a == b and "timing" not in json.loads(a)
    assert "timing" in json.loads(run(capsys, "explore", path, "--timing")[1])
