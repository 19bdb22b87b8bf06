"""Exploration-backed verification of a whole configuration.

``explore_config`` picks an engine, explores, and turns the reachable
outputs into task verdicts.  The compiled engine is used whenever it can
represent the machine and no depth bound or graph export is requested.
"""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from . import checkers as ck
from .explore import HOLDS, INDETERMINATE, VIOLATED, StateGraph, check_wait_free, explore, shortest_path, path_trace
from .model import OUTPUT, Action, Config, ModelError, System, SystemState, Trace, canon, make_system

ENGINES = ("auto", "compiled", "python")


@dataclass
class ExploreReport:
    config: Config
    engine: str
    stats: dict
    verdicts: list = field(default_factory=list)
    witness: Optional[dict] = None
    witness_searched: bool = False
    witness_exhaustive: bool = False
    seconds: float = 0.0
    graph: Optional[StateGraph] = None  # python engine only
    result: Any = None  # compiled engine only

    @property
    def exhaustive(self) -> bool:
        return bool(self.stats.get("exhaustive"))

    @property
    def ok(self) -> bool:
        return all(v.verdict == HOLDS for v in self.verdicts)

    def verdict(self, name: str) -> Optional[ck.Verdict]:
        return next((v for v in self.verdicts if v.check == name), None)

    def to_json(self, timing: bool = False) -> dict:
        d = {
            "command": "explore",
            "config": self.config.to_json(),
            "engine": self.engine,
            "exhaustive": self.exhaustive,
            "stats": self.stats,
            "verdicts": [v.to_json() for v in self.verdicts],
            "ok": self.ok,
        }
        if not self.exhaustive:
            d["note"] = "NON-EXHAUSTIVE: budget or depth bound cut exploration short"
        if self.witness_searched:
            d["atomicityWitness"] = self.witness
            d["witnessSearchExhaustive"] = self.witness_exhaustive
        if timing:
            d["timing"] = {"seconds": round(self.seconds, 3)}
        return d


def _weaken(v: ck.Verdict, exhaustive: bool) -> ck.Verdict:
    # a universal claim checked on part of the space proves nothing
    if v.verdict == HOLDS and not exhaustive:
        return ck.Verdict(v.check, INDETERMINATE, v.witness, "partial exploration")
    return v


def _first_failure(name: str, verdicts, count: int) -> ck.Verdict:
    for v in verdicts:
        if not v:
            return v
    return ck.Verdict(name, HOLDS, detail=f"{count} output assignments")


def task_verdicts(config: Config, terminals: set, signatures: Optional[set]) -> list:
    """Task checks over terminal output tuples and reachable partial ones."""
    inputs = config.inputs
    alg = config.algorithm
    out = []
    if alg in ("snapshot", "renaming"):
        groups = {p: inputs[p - 1] for p in range(1, config.n_processors + 1)}
        full = [ck.OutputAssignment({p: o for p, o in enumerate(row, 1) if o is not None}, groups)
                for row in sorted(terminals, key=canon_repr)]
        if alg == "snapshot":
            pred = ck.check_snapshot_task
            if len(set(inputs)) == len(inputs):
                out.append(_first_failure("containment", (
                    _rename(ck.check_snapshot_task(a.pairs()), "containment") for a in full), len(full)))
            else:
                # members of one group may legitimately return incomparable sets
                out.append(_first_failure("self-inclusion", (
                    _rename(ck.check_snapshot_task([pair]), "self-inclusion")
                    for a in full for pair in a.pairs()), len(full)))
        else:
            m = len(set(inputs))
            pred = lambda s, m=m: ck.check_renaming_task(s, m)  # noqa: E731
            rows = [a.pairs() for a in full]
            if signatures is not None:
                rows += [[(inputs[p], o) for p, o in enumerate(row) if o is not None]
                         for row in sorted(signatures, key=canon_repr)]
            out.append(_first_failure("renaming-collision", (
                ck.check_cross_group_names(r) for r in rows), len(rows)))
        out.append(_first_failure("group-solvability", (
            ck.check_group_solvability(pred, a) for a in full), len(full)))
        if any(None in row for row in terminals):
            out.append(ck.Verdict("all-output", VIOLATED, detail="a terminal state lacks an output"))
    elif alg == "consensus":
        rows = [list(r) for r in terminals]
        if signatures is not None:
            rows += [list(r) for r in signatures]
        vs = (ck.check_consensus_task([(p, o) for p, o in enumerate(r, 1) if o is not None], inputs)
              for r in sorted(rows, key=canon_repr))
        out.append(_first_failure("consensus", vs, len(rows)))
    return out


def canon_repr(row) -> str:
    return repr(canon(row))


def _rename(v: ck.Verdict, name: str) -> ck.Verdict:
    return ck.Verdict(name, v.verdict, v.witness, v.detail)


def ts_frontier(cap: int):
    """Local-state predicate: timestamp above ``cap`` (left unexpanded)."""
    return lambda loc: getattr(loc, "ts", 0) > cap


# -- solo runs ----------------------------------------------------------------


def solo_decides(system: System, state: SystemState, p: int, bound: int = 10) -> Optional[int]:
    """Run ``p`` alone from ``state``; invocations used before it outputs.

    ``None`` when it has not output within ``bound`` snapshot invocations
    (the one in progress counts).
    """
    mach = system.machine
    loc = state.procs[p - 1]
    if mach.next_kind(loc) is None:
        return 0
    used = 1
    ts = getattr(loc, "ts", None)
    limit = bound * 4 * (system.n + 1) * (system.m + 1) * (system.n + 2)
    for _ in range(limit):
        a = system.default_action(state, p)
        if a is None:
            return used
        if a.kind == OUTPUT:
            state = system.apply_step(state, a)
            return used
        state = system.apply_step(state, a)
        now = getattr(state.procs[p - 1], "ts", None)
        if now != ts:
            ts = now
            used += 1
            if used > bound:
                return None
    return None


def check_obstruction_free(system: System, states: list, bound: int = 10) -> ck.Verdict:
    tried = 0
    worst = 0
    for i, s in enumerate(states):
        for p in range(1, system.n + 1):
            if system.terminated(s, p):
                continue
            tried += 1
            k = solo_decides(system, s, p, bound)
            if k is None:
                return ck.Verdict("obstruction-free", VIOLATED, {"sample": i, "processor": p},
                                  f"no decision within {bound} invocations")
            worst = max(worst, k)
    return ck.Verdict("obstruction-free", HOLDS, detail=f"{tried} solo runs, at most {worst} invocations")


# -- engines ------------------------------------------------------------------


def _compiled(system: System, config: Config, *, ts_cap, symmetry, max_states, witness,
              durable, solo_samples, solo_bound, seed, max_table_bytes, time_limit=None) -> ExploreReport:
    from . import fast

    frontier = ts_frontier(ts_cap) if ts_cap is not None else None
    tables = fast.compile_tables(system, frontier)
    waitfree = config.algorithm != "consensus"
    res = fast.dfs(system, tables=tables, symmetry=symmetry, max_states=max_states,
                   check_durable=durable and config.algorithm in ("snapshot", "renaming"),
                   stop_on_cycle=waitfree, max_table_bytes=max_table_bytes, time_limit=time_limit)
    rep = ExploreReport(config, "compiled", res.summary(), result=res)
    if res.timed_out:
        rep.stats["timedOut"] = True
    exh = res.exhaustive and not (waitfree and res.has_cycle)
    rep.stats["exhaustive"] = exh
    if waitfree:
        if res.has_cycle:
            lasso = res.lasso_trace()
            from .schedule import Lasso

            w = Lasso.from_trace(lasso)
            rep.verdicts.append(ck.Verdict("wait-free", VIOLATED, w.to_json(),
                                           f"cycle of {w.cycle_length} steps after {w.cycle_start}"))
        else:
            rep.verdicts.append(ck.Verdict("wait-free", INDETERMINATE if res.truncated else HOLDS))
    terms = res.terminal_outputs()
    sigs = res.output_signatures()
    if config.algorithm != "writescan":
        for v in task_verdicts(config, terms, sigs):
            rep.verdicts.append(_weaken(v, exh))
    if durable and config.algorithm in ("snapshot", "renaming"):
        if res.durable_violations:
            key, p = res.durable_first
            st = tables.unpack(key)
            rep.verdicts.append(ck.Verdict(
                "durably-stored", VIOLATED,
                {"processor": p, "state": canon(st.registers)},
                f"{res.durable_violations} of {res.durable_checked} output instants"))
        else:
            rep.verdicts.append(_weaken(ck.Verdict(
                "durably-stored", HOLDS, detail=f"{res.durable_checked} output instants"), exh))
    if config.algorithm == "consensus" and solo_samples:
        states = res.sample_states(solo_samples, seed)
        rep.verdicts.append(check_obstruction_free(system, states, solo_bound))
    if witness and config.algorithm == "snapshot":
        # the witness search builds its own tables; drop ours first
        res.table = None
        rep.witness, rep.witness_exhaustive = find_atomicity_witness(
            system, terms if exh else None, max_states=max_states, time_limit=time_limit)
        rep.witness_searched = True
    return rep


def _python(system: System, config: Config, *, depth, ts_cap, symmetry, max_states, witness,
            durable, solo_samples, solo_bound, seed) -> ExploreReport:
    frontier = None
    if ts_cap is not None:
        f = ts_frontier(ts_cap)
        frontier = lambda s: any(f(loc) for loc in s.procs)  # noqa: E731
    g = explore(system, max_states=max_states, max_depth=depth, frontier=frontier, symmetry=symmetry)
    rep = ExploreReport(config, "python", g.summary(), graph=g)
    mach = system.machine
    if config.algorithm != "consensus":
        wf = check_wait_free(g)
        w = wf.lasso
        rep.verdicts.append(ck.Verdict(
            "wait-free", wf.verdict, w.to_json() if w else None,
            f"cycle of {w.cycle_length} steps after {w.cycle_start}" if w else ""))
    exh = g.exhaustive
    terms = {s.outputs for s in (g.states[i] for i in g.terminals)}
    sigs = set()
    for s in g.states:
        sigs.add(tuple(
            o if o is not None else (mach.output(loc) if mach.next_kind(loc) == OUTPUT else None)
            for o, loc in zip(s.outputs, s.procs)))
    if config.algorithm != "writescan":
        for v in task_verdicts(config, terms, sigs):
            rep.verdicts.append(_weaken(v, exh))
    if durable and config.algorithm in ("snapshot", "renaming"):
        checked = bad = 0
        first = None
        for s in g.states:
            for p, loc in enumerate(s.procs, 1):
                if mach.next_kind(loc) != OUTPUT:
                    continue
                checked += 1
                if not ck.durably_stored(s, mach.view(loc), mach, system.perms):
                    bad += 1
                    first = first or {"processor": p, "state": canon(s.registers)}
        if bad:
            rep.verdicts.append(ck.Verdict("durably-stored", VIOLATED, first,
                                           f"{bad} of {checked} output instants"))
        else:
            rep.verdicts.append(_weaken(ck.Verdict(
                "durably-stored", HOLDS, detail=f"{checked} output instants"), exh))
    if config.algorithm == "consensus" and solo_samples:
        rng = random.Random(seed)
        idx = sorted(rng.sample(range(g.n_states), min(solo_samples, g.n_states)))
        rep.verdicts.append(check_obstruction_free(system, [g.states[i] for i in idx], solo_bound))
    if witness and config.algorithm == "snapshot":
        rep.witness = graph_atomicity_witness(g, terms)
        rep.witness_searched = True
        rep.witness_exhaustive = exh
    return rep


def explore_config(
    config: Config,
    *,
    depth: Optional[int] = None,
    ts_cap: Optional[int] = None,
    symmetry: bool = False,
    max_states: Optional[int] = None,
    engine: str = "auto",
    witness: bool = False,
    durable: bool = True,
    solo_samples: int = 200,
    solo_bound: int = 10,
    seed: int = 0,
    max_table_bytes: Optional[int] = None,
    time_limit: Optional[float] = None,
) -> ExploreReport:
    """Explore ``config`` and check wait-freedom plus its task.

    Consensus needs ``ts_cap`` or ``depth`` (its state space is infinite).
    Universal verdicts on a partial exploration are INDETERMINATE; found
    violations stand regardless.  ``time_limit`` bounds the compiled search
    (in seconds); the python engine ignores it.
    """
    if engine not in ENGINES:
        raise ModelError(f"unknown engine {engine!r}")
    if config.algorithm == "consensus" and ts_cap is None and depth is None:
        raise ModelError("consensus exploration needs --ts-cap or --depth")
    t0 = time.perf_counter()
    system = make_system(config)
    kw = dict(ts_cap=ts_cap, symmetry=symmetry, max_states=max_states, witness=witness,
              durable=durable, solo_samples=solo_samples, solo_bound=solo_bound, seed=seed)
    rep = None
    if engine != "python" and depth is None:
        from . import fast

        try:
            rep = _compiled(system, config, max_table_bytes=max_table_bytes or fast.DEFAULT_MAX_TABLE_BYTES,
                            time_limit=time_limit, **kw)
        except fast.AlphabetTooLarge:
            if engine == "compiled":
                raise
    elif engine == "compiled":
        raise ModelError("the compiled engine has no depth bound")
    if rep is None:
        rep = _python(system, config, depth=depth, **kw)
    rep.seconds = time.perf_counter() - t0
    return rep


# -- non-atomicity witness ----------------------------------------------------


def _finish_witness(trace: Trace, actor: Optional[int] = None) -> Optional[dict]:
    """Append the pending output step and check the trace."""
    system = trace.system
    state = trace.final
    for p in range(1, system.n + 1):
        if actor is not None and p != actor:
            continue
        a = system.default_action(state, p)
        if a is None or a.kind != OUTPUT:
            continue
        t2 = Trace(system, trace.initial, list(trace.steps), list(trace.states))
        t2.record(a, system.apply_step(state, a))
        v = ck.check_atomicity(t2)
        if not v:
            return {"output": sorted(a.value), "actor": p, "t": len(t2.steps),
                    "steps": [[s.action.actor, s.action.kind, s.action.local] for s in t2.steps],
                    "trace": t2}
    return None


def _witness_candidates(system: System, terminals: Optional[set]) -> list:
    full = frozenset(system.config.inputs)
    if terminals is None:
        vals = sorted(full)
        pool = {frozenset(c) for k in range(1, len(vals)) for c in itertools.combinations(vals, k)}
    else:
        pool = {o for row in terminals for o in row if o is not None}
    # the register read last holds the whole input set, so it is never a witness
    pool.discard(full)
    return sorted(pool, key=lambda v: (len(v), sorted(v)))


def find_atomicity_witness(system: System, terminals: Optional[set], max_states: Optional[int] = None,
                           time_limit: Optional[float] = None) -> tuple:
    """Compiled search: an output view ``I`` reached while memory never held ``I``.

    For each candidate output view, explore only states whose memory union
    differs from it, stopping where some processor is poised to output it.
    Candidates are the observed terminal outputs, or every proper subset of
    the inputs when ``terminals`` is None. ``time_limit`` bounds the whole
    search. Returns ``(witness or None, every candidate searched exhaustively)``.
    """
    from . import fast

    tables = fast.compile_tables(system)
    stop = time.perf_counter() + time_limit if time_limit else None
    complete = True
    for view in _witness_candidates(system, terminals):
        left = None
        if stop is not None:
            left = stop - time.perf_counter()
            if left <= 0:
                return None, False
        res = fast.dfs(system, tables=tables, check_durable=False, forbid_union=view,
                       goal_view=view, stop_on_cycle=False, max_states=max_states, time_limit=left)
        if res.status != 2:
            complete = complete and not res.truncated
            res = None
            continue
        trace = res.replay(res.path)
        w = _finish_witness(trace)
        if w is not None:
            return _public(w), True
    return None, complete


def graph_atomicity_witness(g: StateGraph, terminals: set) -> Optional[dict]:
    mach = g.system.machine
    views = sorted({o for row in terminals for o in row if o is not None},
                   key=lambda v: (len(v), sorted(v)))
    adj = g.successors()
    for view in views:
        allowed = [s.memory_union() != view for s in g.states]
        targets = {i for i, s in enumerate(g.states) if allowed[i] and any(
            mach.next_kind(loc) == OUTPUT and mach.view(loc) == view for loc in s.procs)}
        if not targets:
            continue
        sub = [[e for e in es if allowed[g.dst[e]]] for es in adj]
        try:
            path = shortest_path(g, targets, sub)
        except ValueError:
            continue
        w = _finish_witness(path_trace(g, path))
        if w is not None:
            return _public(w)
    return None


def _public(w: dict) -> dict:
    out = dict(w)
    out["traceLength"] = len(out.pop("trace").steps)
    return out


def witness_trace(w: dict, system: System) -> Trace:
    """Rebuild a witness trace from its recorded steps."""
    trace = Trace(system, system.initial_state())
    state = trace.initial
    for actor, kind, local in w["steps"]:
        a = Action(actor, kind, local)
        if kind == "write":
            a = a._replace(value=system.machine.payload(state.procs[actor - 1]))
        elif kind == OUTPUT:
            a = a._replace(value=system.machine.output(state.procs[actor - 1]))
        state = system.apply_step(state, a)
        trace.record(a, state)
    return trace
