import pytest

from anonshm.golden import FIG2_ROWS
from anonshm.model import Config, ModelError, digest, make_system
from anonshm.schedule import (
    Lasso,
    ScriptEntry,
    ScriptError,
    build_covering_demo,
    covering_holds,
    dump_script,
    fig2_rows,
    fig2_script,
    find_lasso,
    load_script,
    replay_script,
    run_random,
)


def test_fig2_rows_match_golden():
    fig = fig2_script()
    tr = replay_script(fig.config, fig.script)
    rows = fig2_rows(tr, fig)
    assert [(r[0], r[1]) for r in rows] == [tuple(g) for g in FIG2_ROWS]


def test_fig2_loop_closes_after_36_steps():
    fig = fig2_script()
    tr = replay_script(fig.config, fig.script)
    assert tr.cycle_start == fig.row_ends[3] == 20
    assert len(tr.steps) - tr.cycle_start == 36
    assert digest(tr.states[20]) == digest(tr.final)


def test_fig2_lasso_views():
    fig = fig2_script()
    tr = replay_script(fig.config, fig.script)
    lasso = Lasso.from_trace(tr)
    assert lasso.well_formed() and not lasso.flagged
    assert lasso.stable_views() == {1: {1}, 2: {1, 2}, 3: {1, 3}}


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_covering_erases_victim(n):
    demo = build_covering_demo(n)
    tr = replay_script(demo.config, demo.script)
    assert any(s.action.actor == n and s.action.kind == "write" for s in tr.steps)
    assert covering_holds(tr, n)
    assert demo.config.n_registers == n - 1


def test_covering_needs_two():
    with pytest.raises(ModelError):
        build_covering_demo(1)


def test_script_roundtrip_and_errors():
    script = [ScriptEntry(1, 2), ScriptEntry(2)]
    assert load_script(dump_script(script)) == script
    with pytest.raises(ModelError, match="JSON"):
        load_script("[")
    with pytest.raises(ScriptError, match="entry 0"):
        load_script('[{"who": 1}]')


def test_corrupted_script_reports_first_bad_step():
    cfg = Config(2, 2, "writescan", (1, 2))
    bad = [ScriptEntry(1, 1), ScriptEntry(1), ScriptEntry(1), ScriptEntry(1, 1)]
    with pytest.raises(ScriptError) as e:
        replay_script(cfg, bad)
    assert e.value.index == 3
    with pytest.raises(ScriptError, match="no processor 3"):
        replay_script(cfg, [ScriptEntry(3)])


def test_stop_at_cycle():
    cfg = Config(2, 1, "writescan", (1, 2))
    script = [ScriptEntry(1)] * 20
    tr = replay_script(cfg, script, stop_at_cycle=True)
    assert tr.cycle_start is not None and len(tr.steps) < 20
    assert digest(tr.states[tr.cycle_start]) == digest(tr.final)


def test_run_random_deterministic():
    cfg = Config(4, 4, "snapshot", (1, 2, 3, 4), perm_seed=5)
    a = run_random(cfg, 9, 5000)
    b = run_random(cfg, 9, 5000)
    assert a.to_jsonl() == b.to_jsonl()
    assert run_random(cfg, 10, 5000).to_jsonl() != a.to_jsonl()


@pytest.mark.parametrize("seed", range(10))
def test_random_lassos_well_formed(seed):
    cfg = Config(3, 3, "writescan", (1, 2, 3), perm_seed=seed)
    lasso = find_lasso(cfg, seed)
    assert lasso.well_formed()
    assert lasso.cycle_length > 0


def test_lasso_requires_cycle():
    cfg = Config(2, 2, "writescan", (1, 2))
    with pytest.raises(ModelError):
        Lasso.from_trace(run_random(cfg, 0, 5))
