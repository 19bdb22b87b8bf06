import pytest

from anonshm.explore import (
    HOLDS,
    INDETERMINATE,
    VIOLATED,
    BudgetExceeded,
    check_wait_free,
    explore,
    find_cycle,
)
from anonshm.model import Config, digest, make_system


def test_snapshot_n2_wait_free_and_outputs(snap2):
    g = explore(snap2)
    assert g.exhaustive
    assert check_wait_free(g).verdict == HOLDS
    outs = g.outputs()
    F = frozenset
    assert outs == {(F({1}), F({1, 2})), (F({1, 2}), F({2})), (F({1, 2}), F({1, 2}))}


def test_writescan_cycle_is_a_replayable_lasso():
    sys_ = make_system(Config(2, 2, "writescan", (1, 2)))
    g = explore(sys_)
    v = check_wait_free(g)
    assert v.verdict == VIOLATED
    tr = v.lasso.trace
    assert tr.verify()
    assert digest(tr.states[tr.cycle_start]) == digest(tr.final)


def test_budget_marks_truncated(snap2):
    g = explore(snap2, max_states=50)
    assert g.truncated and check_wait_free(g).verdict == INDETERMINATE
    with pytest.raises(BudgetExceeded):
        explore(snap2, max_states=50, raise_on_budget=True)


def test_depth_bound(snap2):
    g = explore(snap2, max_depth=5)
    assert g.truncated and find_cycle(g) is None


def test_symmetry_quotient_shrinks_and_keeps_outputs():
    ws = make_system(Config(3, 2, "writescan", (1, 1, 2)))
    full, quot = explore(ws), explore(ws, symmetry=True)
    assert quot.n_states < full.n_states
    assert (find_cycle(full) is None) == (find_cycle(quot) is None)
    sn = make_system(Config(2, 2, "snapshot", (1, 1)))
    full, quot = explore(sn), explore(sn, symmetry=True)
    assert quot.n_states < full.n_states
    assert full.outputs() == quot.outputs()
