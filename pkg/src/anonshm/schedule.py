"""Schedulers: seeded random runs, scripted replays, and lasso sampling."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .model import (
    WRITE,
    Action,
    Config,
    ModelError,
    System,
    Trace,
    digest,
    make_system,
)


@dataclass(frozen=True)
class ScriptEntry:
    actor: int
    write_target: Optional[int] = None


class ScriptError(ModelError):
    def __init__(self, index: int, message: str):
        super().__init__(f"script entry {index}: {message}")
        self.index = index


def load_script(text: str) -> list:
    """Parse a JSON array of ``{"actor": p, "writeTarget": i?}``."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"script is not valid JSON: {e}") from None
    if not isinstance(raw, list):
        raise ModelError("script must be a JSON array")
    out = []
    for k, item in enumerate(raw):
        if not isinstance(item, dict) or not isinstance(item.get("actor"), int):
            raise ScriptError(k, f"malformed entry {item!r}")
        wt = item.get("writeTarget")
        if wt is not None and not isinstance(wt, int):
            raise ScriptError(k, f"malformed writeTarget {wt!r}")
        out.append(ScriptEntry(item["actor"], wt))
    return out


def dump_script(script: Sequence[ScriptEntry]) -> str:
    items = []
    for e in script:
        d = {"actor": e.actor}
        if e.write_target is not None:
            d["writeTarget"] = e.write_target
        items.append(d)
    return json.dumps(items)


def run_random(
    config: Config,
    seed: int,
    max_steps: int,
    system: Optional[System] = None,
) -> Trace:
    """Uniformly pick a non-terminated processor each step; default write picks.

    Stops after ``max_steps`` steps or once every processor has terminated.
    """
    system = system or make_system(config)
    rng = random.Random(seed)
    trace = Trace(system, system.initial_state())
    state = trace.initial
    for _ in range(max_steps):
        live = system.live_actors(state)
        if not live:
            break
        p = live[rng.randrange(len(live))]
        action = system.default_action(state, p)
        state = system.apply_step(state, action)
        trace.record(action, state)
    return trace


def _scripted_action(system: System, state, entry: ScriptEntry, k: int) -> Action:
    if not 1 <= entry.actor <= system.n:
        raise ScriptError(k, f"no processor {entry.actor}")
    acts = system.enabled(state, entry.actor)
    if not acts:
        raise ScriptError(k, f"processor {entry.actor} has terminated")
    if entry.write_target is None:
        return acts[0]
    if acts[0].kind != WRITE:
        raise ScriptError(k, f"processor {entry.actor} is poised to {acts[0].kind}, not write")
    for a in acts:
        if a.local == entry.write_target:
            return a
    raise ScriptError(
        k, f"processor {entry.actor} already wrote local register {entry.write_target} this round"
    )


def replay_script(config: Config, script: Sequence[ScriptEntry], stop_at_cycle: bool = False) -> Trace:
    """Apply exactly the scripted steps.

    With ``stop_at_cycle`` the replay stops at the first recurring state.
    Either way, when the last state occurred before, ``cycle_start`` is set
    to its first occurrence, making the trace a lasso.
    """
    system = make_system(config)
    trace = Trace(system, system.initial_state())
    seen = {digest(trace.initial): 0}
    state = trace.initial
    for k, entry in enumerate(script):
        action = _scripted_action(system, state, entry, k)
        state = system.apply_step(state, action)
        trace.record(action, state)
        d = trace.steps[-1].digest
        if d in seen and stop_at_cycle:
            break
        seen.setdefault(d, len(trace.steps))
    first = seen.get(digest(trace.final))
    if first is not None and first < len(trace.steps):
        trace.cycle_start = first
    return trace


@dataclass
class Fig2:
    """The pathological write-scan execution: config, script, row boundaries."""

    config: Config
    script: list
    row_ends: list  # trace time at the end of each table row


def fig2_script() -> Fig2:
    """Three write-scan processors with inputs 1, 2, 3 over three registers.

    ``p1`` is wired so its round-robin lands on physical registers 2, 3, 1;
    ``p2`` and ``p3`` use the identity.  Row 1 is two write-scans of ``p1``;
    every later row is one write-scan of the named processor.
    """
    config = Config(
        n_processors=3,
        n_registers=3,
        algorithm="writescan",
        inputs=(1, 2, 3),
        perms=((2, 3, 1), (1, 2, 3), (1, 2, 3)),
    )
    m = 3
    rows = [(1, [1, 2])] + [(p, None) for p in (2, 3, 1)] * 4
    script: list = []
    row_ends: list = []
    next_target = {1: 1, 2: 1, 3: 1}
    for actor, targets in rows:
        for tgt in targets or [next_target[actor]]:
            script.append(ScriptEntry(actor, tgt))
            script.extend(ScriptEntry(actor) for _ in range(m))
            next_target[actor] = tgt % m + 1
        row_ends.append(len(script))
    return Fig2(config, script, row_ends)


def fig2_rows(trace: Trace, fig: Fig2) -> list:
    """Post-state of each row as ``(registers, views)`` lists of sorted lists."""
    rows = []
    for t in fig.row_ends:
        s = trace.states[t]
        regs = [sorted(r.view) for r in s.registers]
        views = [sorted(loc.view) for loc in s.procs]
        rows.append((regs, views))
    return rows


@dataclass
class Covering:
    config: Config
    script: list
    victim: int  # the processor whose writes get erased


def build_covering_demo(n: int, burst_rounds: int = 2) -> Covering:
    """``N`` write-scan processors over ``N - 1`` registers.

    Processors ``1..N-1`` (the covering set) are wired so their first write
    lands on distinct registers; they start poised at it.  Processor ``N``
    then runs solo for ``burst_rounds`` full rounds, after which each covering
    processor performs its pending write, erasing everything ``N`` wrote.
    """
    if n < 2:
        raise ModelError("the covering argument needs N >= 2")
    m = n - 1
    perms = []
    for q in range(1, n):
        perms.append(tuple((q - 1 + i) % m + 1 for i in range(m)))
    perms.append(tuple(range(1, m + 1)))
    config = Config(
        n_processors=n,
        n_registers=m,
        algorithm="writescan",
        inputs=tuple(range(1, n + 1)),
        perms=tuple(perms),
    )
    script = [ScriptEntry(n) for _ in range(burst_rounds * m * (m + 1))]
    script += [ScriptEntry(q, 1) for q in range(1, n)]
    return Covering(config, script, n)


def covering_holds(trace: Trace, victim_input) -> bool:
    """No register of the final state mentions the victim's input."""
    return all(victim_input not in r.view for r in trace.final.registers)


@dataclass
class Lasso:
    """A finite prefix followed by a cycle that repeats forever."""

    trace: Trace
    live: frozenset = field(default_factory=frozenset)
    gst: Optional[int] = None  # None when a dead processor's write is never overwritten

    @classmethod
    def from_trace(cls, trace: Trace) -> "Lasso":
        if trace.cycle_start is None:
            raise ModelError("trace has no cycle")
        cs = trace.cycle_start
        live = frozenset(s.action.actor for s in trace.steps[cs:])
        if not live:
            raise ModelError("empty cycle")
        lasso = cls(trace, live)
        lasso.gst = lasso._resolve_gst()
        return lasso

    @property
    def cycle_start(self) -> int:
        return self.trace.cycle_start

    @property
    def cycle_length(self) -> int:
        return len(self.trace.steps) - self.trace.cycle_start

    def cycle_states(self) -> list:
        return self.trace.states[self.cycle_start:]

    def _resolve_gst(self) -> Optional[int]:
        # Views are constant in the cycle; advance until every register was
        # last written by a live processor (dead writers must be overwritten).
        for t in range(self.cycle_start, len(self.trace.states)):
            writers = self.trace.states[t].writers
            if all(w in self.live for w in writers):
                return t
        return None

    @property
    def flagged(self) -> bool:
        return self.gst is None

    def stable_views(self) -> dict:
        """Live processor -> its (constant) view within the cycle."""
        mach = self.trace.system.machine
        s = self.trace.states[self.cycle_start]
        return {p: mach.view(s.procs[p - 1]) for p in sorted(self.live)}

    def views_constant(self) -> bool:
        mach = self.trace.system.machine
        first = self.stable_views()
        return all(
            mach.view(s.procs[p - 1]) == v for s in self.cycle_states() for p, v in first.items()
        )

    def well_formed(self) -> bool:
        return (
            digest(self.trace.states[self.cycle_start]) == digest(self.trace.final)
            and bool(self.live)
            and self.views_constant()
        )

    def to_json(self) -> dict:
        return {
            "cycleStart": self.cycle_start,
            "cycleLength": self.cycle_length,
            "live": sorted(self.live),
            "steps": [
                {"t": s.t, "actor": s.action.actor, "kind": s.action.kind, "local": s.action.local}
                for s in self.trace.steps
            ],
        }


def find_lasso(config: Config, seed: int, max_steps: int = 200_000,
               system: Optional[System] = None) -> Lasso:
    """Run a seeded random periodic schedule until some state recurs.

    A random prefix is followed by a random pattern of actors repeated
    verbatim; actors absent from the pattern stop after the prefix.  The
    first recurring state closes the lasso.
    """
    system = system or make_system(config)
    rng = random.Random(seed)
    n = system.n
    live_count = rng.randint(1, n)
    live = sorted(rng.sample(range(1, n + 1), live_count))
    prefix = [rng.randint(1, n) for _ in range(rng.randint(0, 12 * n))]
    pattern = [rng.choice(live) for _ in range(rng.randint(1, 3 * n))]
    for p in live:
        if p not in pattern:
            pattern.append(p)
    trace = Trace(system, system.initial_state())
    seen = {digest(trace.initial): 0}
    state = trace.initial
    k = 0
    while len(trace.steps) < max_steps:
        if k < len(prefix):
            p = prefix[k]
        else:
            p = pattern[(k - len(prefix)) % len(pattern)]
        k += 1
        action = system.default_action(state, p)
        if action is None:
            continue
        state = system.apply_step(state, action)
        trace.record(action, state)
        d = trace.steps[-1].digest
        if d in seen:
            trace.cycle_start = seen[d]
            return Lasso.from_trace(trace)
        seen[d] = len(trace.steps)
    raise ModelError(f"no recurrence within {max_steps} steps")


def find_lassos(config: Config, samples: int, seed: int = 0) -> list:
    system = make_system(config)
    return [find_lasso(config, seed * 1_000_003 + i, system=system) for i in range(samples)]
