import numpy as np
import pytest

from anonshm import fast
from anonshm.checkers import durably_stored
from anonshm.explore import check_wait_free, explore
from anonshm.model import OUTPUT, Config, make_system
from anonshm.verify import ts_frontier

SMALL = [
    Config(2, 2, "snapshot", (1, 2)),
    Config(2, 2, "snapshot", (1, 2), perms=((2, 1), (1, 2))),
    Config(2, 2, "snapshot", (1, 1)),
    Config(2, 2, "renaming", (2, 1), perms=((2, 1), (1, 2))),
    Config(2, 2, "writescan", (1, 2)),
    Config(3, 2, "writescan", (1, 2, 3), perms=((1, 2), (2, 1), (1, 2))),
]


def signatures(g):
    mach = g.system.machine
    return {
        tuple(o if o is not None else (mach.output(loc) if mach.next_kind(loc) == OUTPUT else None)
              for o, loc in zip(s.outputs, s.procs))
        for s in g.states
    }


@pytest.mark.parametrize("cfg", SMALL, ids=lambda c: f"{c.algorithm}-{c.inputs}-{c.perms}")
def test_unreduced_engine_matches_reference(cfg):
    sys_ = make_system(cfg)
    g = explore(sys_)
    t = fast.compile_tables(sys_, minimize=False)
    r = fast.dfs(sys_, tables=t, stop_on_cycle=False, merge_stale=False, merge_levels=False)
    assert r.n_states == g.n_states
    assert r.n_edges == g.n_edges
    assert r.terminal_outputs() == g.outputs()
    assert r.has_cycle == (check_wait_free(g).verdict == "VIOLATED")
    assert r.output_signatures() == signatures(g)


@pytest.mark.parametrize("cfg", SMALL, ids=lambda c: f"{c.algorithm}-{c.inputs}-{c.perms}")
def test_reductions_preserve_observables(cfg):
    sys_ = make_system(cfg)
    full = fast.dfs(sys_, tables=fast.compile_tables(sys_, minimize=False), merge_stale=False, merge_levels=False,
                    stop_on_cycle=False)
    red = fast.dfs(sys_, stop_on_cycle=False)
    assert red.n_states <= full.n_states
    assert red.terminal_outputs() == full.terminal_outputs()
    assert red.has_cycle == full.has_cycle
    assert red.output_signatures() == full.output_signatures()
    assert red.durable_violations == full.durable_violations == 0


def test_durable_check_agrees_with_reference():
    sys_ = make_system(Config(2, 2, "snapshot", (1, 2), perms=((2, 1), (1, 2))))
    g = explore(sys_)
    mach = sys_.machine
    for literal in (False, True):
        bad = sum(
            1 for s in g.states for loc in s.procs
            if mach.next_kind(loc) == OUTPUT
            and not durably_stored(s, mach.view(loc), mach, sys_.perms, literal=literal))
        r = fast.dfs(sys_, tables=fast.compile_tables(sys_, minimize=False), merge_stale=False, merge_levels=False,
                     literal_durable=literal)
        assert r.durable_violations == bad
    assert bad > 0  # the literal reading flags mid-scan readers


def test_lasso_trace_replays():
    sys_ = make_system(Config(3, 3, "writescan", (1, 2, 3), perms=((2, 3, 1), (1, 2, 3), (1, 2, 3))))
    r = fast.dfs(sys_)
    assert r.has_cycle
    tr = r.lasso_trace()
    assert tr.verify() and tr.cycle_start is not None


def test_pack_unpack_roundtrip():
    sys_ = make_system(Config(2, 2, "snapshot", (1, 2)))
    t = fast.compile_tables(sys_, minimize=False)
    r = fast.dfs(sys_, tables=t, merge_stale=False, merge_levels=False)
    for s in r.sample_states(50, seed=1):
        assert t.unpack(t.pack(s)) == s
    assert len(r.sample_states(50, seed=1)) == 50


def test_symmetry_quotient():
    for cfg in (Config(3, 2, "writescan", (1, 1, 2)), Config(2, 2, "snapshot", (1, 1))):
        sys_ = make_system(cfg)
        a = fast.dfs(sys_, stop_on_cycle=False)
        b = fast.dfs(sys_, symmetry=True, stop_on_cycle=False)
        assert b.n_states < a.n_states
        assert a.has_cycle == b.has_cycle
        assert a.terminal_outputs() == b.terminal_outputs()


def test_consensus_frontier_matches_reference():
    cfg = Config(2, 2, "consensus", ("a", "b"))
    sys_ = make_system(cfg)
    cap = 1
    f = ts_frontier(cap)
    g = explore(sys_, frontier=lambda s: any(f(x) for x in s.procs))
    r = fast.dfs(sys_, tables=fast.compile_tables(sys_, f, minimize=False), merge_stale=False, merge_levels=False,
                 stop_on_cycle=False)
    assert r.n_states == g.n_states
    assert r.n_frontier == len(g.frontier)
    assert r.output_signatures() == signatures(g)


def test_state_budget_truncates():
    sys_ = make_system(Config(2, 2, "snapshot", (1, 2)))
    r = fast.dfs(sys_, max_states=100)
    assert r.truncated and r.n_states == 100


def test_goal_search_with_forbidden_union():
    sys_ = make_system(Config(2, 2, "snapshot", (1, 2)))
    full = frozenset({1, 2})
    r = fast.dfs(sys_, check_durable=False, forbid_union=full, goal_view=full, stop_on_cycle=False)
    if r.status == 2:
        tr = r.replay(r.path)
        assert all(s.memory_union() != full for s in tr.states)
    else:
        assert r.status == 0 and not r.truncated


def test_mask_roundtrip():
    t = fast.compile_tables(make_system(Config(3, 3, "snapshot", (4, 5, 6))))
    v = frozenset({4, 6})
    assert t.unmask(t.mask(v)) == v
    assert isinstance(t.kind, np.ndarray)


@pytest.mark.parametrize("kb", [30, 36])  # remainders must fit in 26 bits at bb=10
def test_table_fills_past_ninety_percent_and_keeps_every_key(kb):
    bb = 10
    tab = np.zeros((1 << bb) * fast.BUCKET, dtype=np.uint32)
    inv = fast._inverses(kb)
    rng = np.random.default_rng(kb)
    keys = np.unique(rng.integers(0, 1 << kb, size=tab.shape[0], dtype=np.int64))
    placed = []
    for key in keys[: int(0.9 * tab.shape[0])]:
        pos = fast._lookup(tab, bb, kb, key)
        if pos == -1:
            slot, _, _ = fast._displace(tab, bb, kb, inv, key)
            assert slot >= 0
            pos = -2 - slot
        if pos < 0:
            q = -2 - pos
            tab[q] = fast._entry(key, kb, bb, q)
        placed.append(int(key))
    for key in placed:
        pos = fast._lookup(tab, bb, kb, key)
        assert pos >= 0 and fast._decode(tab, pos, bb, kb, inv) == key
