import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonshm.explore import HOLDS, VIOLATED
from anonshm.invariants import (
    check_level_soundness,
    check_self_inclusion,
    check_value_validity,
    check_view_monotonicity,
    check_wiring_stability,
    check_write_fairness,
    reads_from,
    trace_invariants,
)
from anonshm.model import READ, WRITE, Config, random_perms
from anonshm.schedule import fig2_script, replay_script, run_random


def _all_hold(trace):
    return {v.check: v.verdict for v in trace_invariants(trace)}


@pytest.mark.parametrize("alg,inputs", [
    ("snapshot", (1, 2, 3)),
    ("snapshot", (1, 1, 2)),
    ("renaming", (1, 2, 2)),
    ("writescan", (1, 2, 3)),
    ("consensus", ("a", "b", "a")),
])
def test_random_runs_satisfy_invariants(alg, inputs):
    for seed in range(5):
        cfg = Config(3, 3, alg, inputs, perms=random_perms(3, 3, seed))
        tr = run_random(cfg, seed, 400)
        got = _all_hold(tr)
        assert set(got.values()) == {HOLDS}, got


def test_fig2_satisfies_invariants():
    fig = fig2_script()
    tr = replay_script(fig.config, fig.script)
    assert set(_all_hold(tr).values()) == {HOLDS}


def test_reads_from_initial_and_writer():
    tr = run_random(Config(2, 2, "snapshot", (1, 2)), 0, 50)
    rf = reads_from(tr)
    assert rf and all(w in (0, 1, 2) for _, _, w in rf)
    first = next(s for s in tr.steps if s.action.kind == READ)
    wrote_before = {s.physical for s in tr.steps[: first.t - 1] if s.action.kind == WRITE}
    t, _, w = rf[0]
    assert t == first.t
    assert (w != 0) == (first.physical in wrote_before)


def _snap_trace(seed=1, steps=120):
    return run_random(Config(3, 3, "snapshot", (1, 2, 3), perms=random_perms(3, 3, seed)), seed, steps)


def test_wiring_change_detected():
    tr = _snap_trace()
    i = next(i for i, s in enumerate(tr.steps) if s.action.kind == READ and i > 20)
    s = tr.steps[i]
    tr.steps[i] = s._replace(physical=s.physical % 3 + 1)
    assert check_wiring_stability(tr).verdict == VIOLATED


def test_view_shrink_detected():
    tr = _snap_trace()
    t = len(tr.states) - 1
    st_ = tr.states[t]
    loc = st_.procs[0]
    assert len(loc.view) > 1
    shrunk = loc._replace(view=frozenset([1]))
    tr.states[t] = dataclasses.replace(st_, procs=(shrunk,) + st_.procs[1:])
    assert check_view_monotonicity(tr).verdict == VIOLATED


def test_foreign_value_detected():
    tr = _snap_trace()
    st_ = tr.states[1]
    reg = st_.registers[0]
    bad = reg._replace(view=reg.view | {9})
    tr.states[1] = dataclasses.replace(st_, registers=(bad,) + st_.registers[1:])
    v = check_value_validity(tr)
    assert v.verdict == VIOLATED and v.witness["ids"] == {9}


def test_repeated_write_detected():
    tr = _snap_trace()
    writes = [i for i, s in enumerate(tr.steps) if s.action.kind == WRITE and s.action.actor == 1]
    a, b = writes[0], writes[1]
    tr.steps[b] = tr.steps[b]._replace(physical=tr.steps[a].physical)
    assert check_write_fairness(tr).verdict == VIOLATED


def test_level_tamper_detected():
    tr = _snap_trace()
    t = len(tr.states) - 1
    st_ = tr.states[t]
    p = tr.steps[-1].action.actor - 1
    loc = st_.procs[p]
    procs = list(st_.procs)
    procs[p] = loc._replace(level=loc.level + 5)
    tr.states[t] = dataclasses.replace(st_, procs=tuple(procs))
    assert check_level_soundness(tr).verdict == VIOLATED


def test_level_rule_not_applicable_elsewhere():
    tr = run_random(Config(3, 3, "writescan", (1, 2, 3)), 0, 30)
    v = check_level_soundness(tr)
    assert v.verdict == HOLDS and v.detail == "not applicable"


def test_self_inclusion_holds_on_finished_run():
    tr = run_random(Config(3, 3, "snapshot", (1, 2, 3)), 3, 100_000)
    assert all(o is not None for o in tr.final.outputs)
    assert check_self_inclusion(tr).verdict == HOLDS


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(2, 4),
    seed=st.integers(0, 10_000),
    alg=st.sampled_from(["snapshot", "renaming", "writescan"]),
    data=st.data(),
)
def test_property_random_runs(n, seed, alg, data):
    inputs = tuple(data.draw(st.lists(st.integers(1, n), min_size=n, max_size=n)))
    cfg = Config(n, n, alg, inputs, perms=random_perms(n, n, seed))
    tr = run_random(cfg, seed, 300)
    assert set(_all_hold(tr).values()) == {HOLDS}
