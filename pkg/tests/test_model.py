import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonshm.model import (
    READ,
    WRITE,
    Action,
    Config,
    ModelError,
    Payload,
    check_permutation,
    digest,
    identity_perms,
    make_system,
    random_perms,
    resolve,
    trace_from_jsonl,
)
from anonshm.schedule import run_random


@pytest.mark.parametrize("kw, msg", [
    (dict(n_processors=1, n_registers=1, algorithm="snapshot", inputs=(1,)), "N > 1"),
    (dict(n_processors=2, n_registers=0, algorithm="writescan", inputs=(1, 2)), "M > 0"),
    (dict(n_processors=2, n_registers=3, algorithm="snapshot", inputs=(1, 2)), "exactly N"),
    (dict(n_processors=2, n_registers=2, algorithm="snapshot", inputs=(1,)), "expected 2 inputs"),
    (dict(n_processors=2, n_registers=2, algorithm="paxos", inputs=(1, 2)), "unknown algorithm"),
    (dict(n_processors=2, n_registers=2, algorithm="snapshot", inputs=(1, 0)), "positive"),
    (dict(n_processors=2, n_registers=2, algorithm="snapshot", inputs=(1, 2),
          perms=((1, 1), (1, 2))), "permutation"),
])
def test_config_rejects(kw, msg):
    with pytest.raises(ModelError, match=msg):
        Config(**kw)


def test_writescan_may_use_fewer_registers():
    cfg = Config(4, 2, "writescan", (1, 2, 3, 4))
    assert cfg.resolved_perms() == identity_perms(4, 2)


def test_config_json_roundtrip():
    cfg = Config(3, 3, "snapshot", (1, 1, 2), perms=((2, 3, 1), (1, 2, 3), (3, 1, 2)))
    again = Config.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg


def test_config_missing_field():
    with pytest.raises(ModelError, match="inputs"):
        Config.from_json({"nProcessors": 2, "algorithm": "snapshot"})


def test_random_perms_are_seeded_permutations():
    a = random_perms(4, 4, 11)
    assert a == random_perms(4, 4, 11)
    for p in a:
        assert check_permutation(p, 4) == p
    assert resolve((3, 1, 2), 1) == 3


def test_write_lands_on_permuted_register():
    cfg = Config(2, 2, "snapshot", (1, 2), perms=((2, 1), (1, 2)))
    sys_ = make_system(cfg)
    s0 = sys_.initial_state()
    s1 = sys_.apply_step(s0, Action(1, WRITE, 1, Payload(frozenset({1}), 0)))
    assert s1.registers[1].view == {1} and s1.registers[0].view == set()
    assert s1.writers == (0, 1)


def test_apply_rejects_wrong_kind_and_repeat_write(snap2):
    s0 = snap2.initial_state()
    with pytest.raises(ModelError, match="poised to write"):
        snap2.apply_step(s0, Action(1, READ, 1))
    s = s0
    s = snap2.apply_step(s, snap2.enabled(s, 1)[0])
    for _ in range(2):
        s = snap2.apply_step(s, Action(1, READ, 0))
    assert [a.local for a in snap2.enabled(s, 1)] == [2]  # local 1 used this round


def test_trace_jsonl_roundtrip(snap3):
    tr = run_random(snap3.config, seed=3, max_steps=500)
    text = tr.to_jsonl()
    again = trace_from_jsonl(text)
    assert again.to_jsonl() == text
    assert again.verify()


def test_trace_divergence_detected(snap3):
    tr = run_random(snap3.config, seed=3, max_steps=40)
    lines = tr.to_jsonl().splitlines()
    rec = json.loads(lines[5])
    rec["digest"] = "0" * 16
    lines[5] = json.dumps(rec)
    with pytest.raises(ModelError, match="diverges"):
        trace_from_jsonl("\n".join(lines))


def test_digest_ignores_nothing_observable(snap2):
    s = snap2.initial_state()
    assert digest(s) == digest(snap2.initial_state())
    s1 = snap2.apply_step(s, snap2.enabled(s, 1)[0])
    assert digest(s1) != digest(s)


@settings(max_examples=30, deadline=None)
@given(
    alg=st.sampled_from(["writescan", "snapshot", "renaming", "consensus"]),
    n=st.integers(2, 4),
    seed=st.integers(0, 1 << 20),
    steps=st.integers(0, 300),
)
def test_property_trace_roundtrip(alg, n, seed, steps):
    inputs = tuple("ab"[i % 2] for i in range(n)) if alg == "consensus" else tuple(range(1, n + 1))
    cfg = Config(n, n, alg, inputs, perms=random_perms(n, n, seed))
    tr = run_random(cfg, seed, steps)
    text = tr.to_jsonl()
    again = trace_from_jsonl(text)
    assert again.to_jsonl() == text
    assert digest(again.final) == digest(tr.final)
