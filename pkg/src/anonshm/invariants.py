"""Execution invariants checked on recorded traces.

These re-derive what the machines should have done from the trace alone
(register contents before each step, actions taken) instead of trusting the
machines' own bookkeeping.
"""

from __future__ import annotations

from .checkers import Verdict
from .explore import HOLDS, VIOLATED
from .model import OUTPUT, READ, WRITE, Trace


def _ids(view, algorithm: str):
    # consensus views hold (value, timestamp) pairs
    return {x[0] for x in view} if algorithm == "consensus" else set(view)


def reads_from(trace: Trace) -> list:
    """``(t, reader, writer)`` for every read; writer 0 is the initial value."""
    out = []
    for s in trace.steps:
        if s.action.kind == READ:
            out.append((s.t, s.action.actor, trace.states[s.t - 1].writers[s.physical - 1]))
    return out


def check_wiring_stability(trace: Trace) -> Verdict:
    seen: dict = {}
    for s in trace.steps:
        if s.action.kind == OUTPUT:
            continue
        k = (s.action.actor, s.action.local)
        if seen.setdefault(k, s.physical) != s.physical:
            return Verdict("wiring-stability", VIOLATED, {"t": s.t, "actor": k[0], "local": k[1]})
    return Verdict("wiring-stability", HOLDS)


def check_view_monotonicity(trace: Trace) -> Verdict:
    mach = trace.system.machine
    prev = [mach.view(loc) for loc in trace.initial.procs]
    for t, st in enumerate(trace.states[1:], 1):
        cur = [mach.view(loc) for loc in st.procs]
        for p, (a, b) in enumerate(zip(prev, cur), 1):
            if not a <= b:
                return Verdict("view-monotonicity", VIOLATED, {"t": t, "actor": p})
        prev = cur
    return Verdict("view-monotonicity", HOLDS)


def check_value_validity(trace: Trace) -> Verdict:
    """Every id held anywhere is the input of a processor that has stepped,
    or the holder's own input."""
    cfg = trace.system.config
    alg = cfg.algorithm
    mach = trace.system.machine
    inputs = cfg.inputs
    stepped: set = set()
    for t, st in enumerate(trace.states):
        if t:
            stepped.add(inputs[trace.steps[t - 1].action.actor - 1])
        for i, reg in enumerate(st.registers, 1):
            bad = _ids(reg.view, alg) - stepped
            if bad:
                return Verdict("value-validity", VIOLATED, {"t": t, "register": i, "ids": bad})
        for p, loc in enumerate(st.procs, 1):
            bad = _ids(mach.view(loc), alg) - stepped - {inputs[p - 1]}
            if bad:
                return Verdict("value-validity", VIOLATED, {"t": t, "actor": p, "ids": bad})
    return Verdict("value-validity", HOLDS)


def check_write_fairness(trace: Trace) -> Verdict:
    """Between two writes by ``p`` to one register, ``p`` writes every other one."""
    m = trace.system.m
    since: dict = {}  # actor -> {register: registers written since}
    for s in trace.steps:
        if s.action.kind != WRITE:
            continue
        p, r = s.action.actor, s.physical
        book = since.setdefault(p, {})
        if r in book and len(book[r]) < m - 1:
            return Verdict("write-fairness", VIOLATED, {"t": s.t, "actor": p, "register": r})
        for other in book.values():
            other.add(r)
        book[r] = set()
    return Verdict("write-fairness", HOLDS)


def check_level_soundness(trace: Trace) -> Verdict:
    """Snapshot levels: each scan's outcome re-derived from the values read.

    A scan that read exactly the scanner's view everywhere sets its level to
    one above the lowest level read (at most ``N``); any other scan resets it
    to 0.  Levels stay within ``0..N``.
    """
    cfg = trace.system.config
    if cfg.algorithm not in ("snapshot", "renaming") or cfg.level_rule != "equal":
        return Verdict("level-soundness", HOLDS, detail="not applicable")
    n, m = cfg.n_processors, cfg.n_registers
    reads: dict = {}
    for s in trace.steps:
        p = s.action.actor
        before = trace.states[s.t - 1].procs[p - 1]
        after = trace.states[s.t].procs[p - 1]
        if not 0 <= after.level <= n:
            return Verdict("level-soundness", VIOLATED, {"t": s.t, "actor": p, "level": after.level})
        if s.action.kind == WRITE:
            reads[p] = []
        elif s.action.kind == READ:
            reads.setdefault(p, []).append(trace.states[s.t - 1].registers[s.physical - 1])
            if len(reads[p]) == m:
                seen = reads.pop(p)
                clean = all(x.view == before.view for x in seen)
                want = min(min(x.level for x in seen) + 1, n) if clean else 0
                if after.level != want:
                    return Verdict("level-soundness", VIOLATED,
                                   {"t": s.t, "actor": p, "level": after.level, "expected": want})
    return Verdict("level-soundness", HOLDS)


def check_self_inclusion(trace: Trace) -> Verdict:
    inputs = trace.system.config.inputs
    for s in trace.steps:
        if s.action.kind == OUTPUT and inputs[s.action.actor - 1] not in s.action.value:
            return Verdict("self-inclusion", VIOLATED, {"t": s.t, "actor": s.action.actor})
    return Verdict("self-inclusion", HOLDS)


def trace_invariants(trace: Trace) -> list:
    out = [
        check_wiring_stability(trace),
        check_view_monotonicity(trace),
        check_value_validity(trace),
        check_write_fairness(trace),
        check_level_soundness(trace),
        Verdict("replay-determinism", HOLDS if trace.verify() else VIOLATED),
    ]
    if trace.system.config.algorithm == "snapshot":
        out.append(check_self_inclusion(trace))
    return out
