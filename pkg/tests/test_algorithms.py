import pytest

from anonshm.algorithms import (
    ConsensusLocal,
    SnapshotMachine,
    consensus_on_snapshot,
    longlived_invoke,
    rename_from_snapshot,
)
from anonshm.model import OUTPUT, Config, ModelError, make_system
from anonshm.schedule import run_random


@pytest.mark.parametrize("snap, g, name", [
    ({1}, 1, 1),
    ({1, 2}, 1, 2), ({1, 2}, 2, 3),
    ({1, 2, 3}, 1, 4), ({1, 2, 3}, 2, 5), ({1, 2, 3}, 3, 6),
    ({4, 9}, 9, 3),
])
def test_rename_reserved_ranges(snap, g, name):
    assert rename_from_snapshot(frozenset(snap), g) == name


def test_rename_requires_membership():
    with pytest.raises(ModelError):
        rename_from_snapshot(frozenset({1, 2}), 3)


def solo(system, p=1, limit=10_000):
    s = system.initial_state()
    for _ in range(limit):
        a = system.default_action(s, p)
        if a is None:
            return s
        s = system.apply_step(s, a)
    raise AssertionError("no termination")


def test_solo_snapshot_outputs_own_input():
    sys_ = make_system(Config(3, 3, "snapshot", (5, 6, 7)))
    s = solo(sys_, 2)
    assert s.outputs == (None, frozenset({6}), None)


def test_solo_snapshot_step_count():
    # the new level is one above the lowest level read, so each level needs
    # every register rewritten: N*M write-scans of 1 + M steps, then output
    n = 3
    sys_ = make_system(Config(n, n, "snapshot", (1, 2, 3)))
    s = sys_.initial_state()
    steps = 0
    while sys_.default_action(s, 1) is not None:
        s = sys_.apply_step(s, sys_.default_action(s, 1))
        steps += 1
    # first scan reads empty registers (not equal), then N clean ones; +1 output
    assert steps == n * n * (1 + n) + 1


def test_level_resets_on_unequal_scan():
    m = SnapshotMachine(2)
    loc = m.initial(1)._replace(level=1)
    loc = m.on_write(loc, 1)
    from anonshm.model import Payload

    loc = m.on_read(loc, Payload(frozenset({1}), 1))
    loc = m.on_read(loc, Payload(frozenset({1, 2}), 0))
    assert loc.level == 0 and loc.view == {1, 2} and loc.scan_pos == 0


def test_longlived_keeps_round_bookkeeping():
    m = SnapshotMachine(2)
    loc = m.initial(1)._replace(level=2, remaining=frozenset({2}))
    nxt = longlived_invoke(loc, 3, 2)
    assert nxt.remaining == {2} and nxt.level == 0 and nxt.view == {1, 3}
    with pytest.raises(ModelError):
        longlived_invoke(loc._replace(level=1), 3, 2)


def cons_loc(m):
    return ConsensusLocal("a", 0, m.snap.initial(("a", 0))._replace(level=2))


@pytest.mark.parametrize("snap, decided, pref, ts", [
    ({("a", 3), ("b", 1)}, "a", None, None),
    ({("a", 2), ("b", 1)}, None, "a", 3),
    ({("a", 0)}, None, "a", 1),
    ({("a", 2)}, "a", None, None),
    ({("a", 1), ("b", 1)}, None, "a", 2),  # tie: smallest value leads
    ({("b", 4), ("a", 2), ("b", 1)}, "b", None, None),
])
def test_consensus_rule(snap, decided, pref, ts):
    from anonshm.algorithms import ConsensusMachine

    m = ConsensusMachine(2)
    out = consensus_on_snapshot(cons_loc(m), frozenset(snap), 2)
    assert out.decided == decided
    if decided is None:
        assert (out.pref, out.ts) == (pref, ts)
        assert (pref, ts) in out.inner.view


def test_vacuous_lead_decides_alone():
    from anonshm.algorithms import ConsensusMachine

    m = ConsensusMachine(2, vacuous_lead=True)
    assert consensus_on_snapshot(cons_loc(m), frozenset({("a", 0)}), 2, vacuous_lead=True).decided == "a"


def test_solo_consensus_decides_own_value():
    sys_ = make_system(Config(2, 2, "consensus", ("x", "y")))
    s = solo(sys_, 2)
    assert s.outputs == (None, "y")


@pytest.mark.parametrize("seed", range(5))
def test_renaming_random_runs_valid(seed):
    cfg = Config(4, 4, "renaming", (1, 2, 2, 3), perm_seed=seed)
    tr = run_random(cfg, seed, 20_000)
    names = tr.final.outputs
    assert None not in names
    by_group = {}
    for g, nm in zip(cfg.inputs, names):
        by_group.setdefault(nm, set()).add(g)
        assert 1 <= nm <= 6
    assert all(len(gs) == 1 for gs in by_group.values())


def test_writescan_never_terminates():
    sys_ = make_system(Config(2, 2, "writescan", (1, 2)))
    s = sys_.initial_state()
    for _ in range(200):
        a = sys_.default_action(s, 1)
        assert a is not None and a.kind != OUTPUT
        s = sys_.apply_step(s, a)
