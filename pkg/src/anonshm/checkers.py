"""Task predicates, group solvability, stable-view graphs, durable storage,
and the non-atomicity witness."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .explore import HOLDS, INDETERMINATE, VIOLATED
from .model import ModelError, SystemState, Trace, canon


@dataclass
class Verdict:
    check: str
    verdict: str
    witness: Any = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.verdict == HOLDS

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def to_json(self) -> dict:
        d = {"check": self.check, "verdict": self.verdict}
        if self.witness is not None:
            d["witness"] = canon(self.witness)
        if self.detail:
            d["detail"] = self.detail
        return d


def _entries(outputs) -> list:
    """``(id, output)`` pairs from a sample dict or an iterable of pairs.

    A full assignment is passed as pairs ``(input of p, output of p)`` so that
    several processors may share an id.
    """
    if isinstance(outputs, Mapping):
        return list(outputs.items())
    return list(outputs)


# -- task predicates -----------------------------------------------------------


def check_snapshot_task(outputs) -> Verdict:
    """Self-inclusion and pairwise containment."""
    es = _entries(outputs)
    for gid, out in es:
        if gid not in out:
            return Verdict("snapshot", VIOLATED, {"id": gid, "output": out}, "self-inclusion")
    for (a, oa), (b, ob) in itertools.combinations(es, 2):
        if not (oa <= ob or ob <= oa):
            return Verdict("snapshot", VIOLATED, {"pair": [[a, oa], [b, ob]]}, "incomparable outputs")
    return Verdict("snapshot", HOLDS)


def check_consensus_task(outputs, inputs: Iterable) -> Verdict:
    """Agreement on one value, which must be a participating input."""
    vals = {out for _, out in _entries(outputs)}
    if len(vals) > 1:
        return Verdict("consensus", VIOLATED, {"decisions": sorted(vals, key=repr)}, "agreement")
    if vals and not vals <= set(inputs):
        return Verdict("consensus", VIOLATED, {"decisions": sorted(vals, key=repr)}, "validity")
    return Verdict("consensus", HOLDS)


def renaming_bound(groups: int) -> int:
    return groups * (groups + 1) // 2


def check_renaming_task(outputs, participating: int) -> Verdict:
    """Distinct names, each within ``1..M(M+1)/2`` for ``M`` participating groups."""
    bound = renaming_bound(participating)
    seen: dict = {}
    for gid, name in _entries(outputs):
        if not 1 <= name <= bound:
            return Verdict("renaming", VIOLATED, {"id": gid, "name": name, "bound": bound}, "range")
        if name in seen:
            return Verdict("renaming", VIOLATED, {"ids": [seen[name], gid], "name": name}, "duplicate name")
        seen[name] = gid
    return Verdict("renaming", HOLDS)


def check_cross_group_names(pairs) -> Verdict:
    """No name shared by processors of different groups (same group may share)."""
    owner: dict = {}
    for gid, name in _entries(pairs):
        if name is None:
            continue
        if owner.setdefault(name, gid) != gid:
            return Verdict("renaming-collision", VIOLATED,
                           {"name": name, "groups": sorted([owner[name], gid])}, "cross-group collision")
    return Verdict("renaming-collision", HOLDS)


# -- group solvability -----------------------------------------------------------


@dataclass(frozen=True)
class OutputAssignment:
    """Partial map processor -> output, plus each processor's group id."""

    outputs: Mapping[int, Any]
    groups: Mapping[int, int]

    def __post_init__(self) -> None:
        missing = set(self.outputs) - set(self.groups)
        if missing:
            raise ModelError(f"processors without a group: {sorted(missing)}")

    @classmethod
    def from_state(cls, state: SystemState, inputs: Sequence) -> "OutputAssignment":
        outs = {p: o for p, o in enumerate(state.outputs, 1) if o is not None}
        return cls(outs, {p: inputs[p - 1] for p in range(1, len(inputs) + 1)})

    def pairs(self) -> list:
        return [(self.groups[p], o) for p, o in sorted(self.outputs.items())]

    def by_group(self, participants: Optional[Iterable[int]] = None) -> dict:
        procs = sorted(self.outputs) if participants is None else sorted(participants)
        out: dict = {}
        for p in procs:
            out.setdefault(self.groups[p], [])
            if p in self.outputs:
                out[self.groups[p]].append(self.outputs[p])
        return out


def output_samples(assignment: OutputAssignment, participants: Optional[Iterable[int]] = None):
    """Every map group id -> output of one of its members (product over groups)."""
    groups = assignment.by_group(participants)
    for gid, outs in groups.items():
        if not outs:
            raise ModelError(f"participating group {gid} has no outputs")
    ids = sorted(groups)
    for combo in itertools.product(*(groups[g] for g in ids)):
        yield dict(zip(ids, combo))


def check_group_solvability(
    predicate: Callable[[dict], Verdict],
    assignment: OutputAssignment,
    participants: Optional[Iterable[int]] = None,
) -> Verdict:
    """Apply ``predicate`` to every output sample; report the first failure."""
    n = 0
    for sample in output_samples(assignment, participants):
        n += 1
        v = predicate(sample)
        if not v:
            return Verdict("group-solvability", VIOLATED, {"sample": sample, "task": v.to_json()},
                           f"sample {n} fails")
    return Verdict("group-solvability", HOLDS, detail=f"{n} samples")


# -- stable views --------------------------------------------------------------


@dataclass
class StableViewGraph:
    vertices: list = field(default_factory=list)  # frozensets
    edges: list = field(default_factory=list)  # (smaller, larger)

    @classmethod
    def of(cls, views: Iterable[frozenset]) -> "StableViewGraph":
        vs = sorted(set(views), key=lambda v: (len(v), sorted(v, key=repr)))
        es = [(a, b) for a in vs for b in vs if a < b]
        return cls(vs, es)

    def sources(self) -> list:
        targets = {b for _, b in self.edges}
        return [v for v in self.vertices if v not in targets]

    def to_json(self) -> dict:
        return {"vertices": canon(self.vertices), "edges": canon([list(e) for e in self.edges]),
                "sources": canon(self.sources())}

    def to_dot(self) -> str:
        def name(v):
            return '"{' + ",".join(str(x) for x in sorted(v, key=repr)) + '}"'

        lines = ["digraph stable_views {"]
        lines += [f"  {name(v)};" for v in self.vertices]
        lines += [f"  {name(a)} -> {name(b)};" for a, b in self.edges]
        lines.append("}")
        return "\n".join(lines) + "\n"


def stable_view_graph(lasso) -> StableViewGraph:
    """Distinct views of live processors within the lasso's cycle."""
    if lasso.flagged:
        raise ModelError(
            "lasso has no stabilization point: a stopped processor's write is never overwritten"
        )
    if not lasso.views_constant():
        raise ModelError("views change inside the cycle")
    return StableViewGraph.of(lasso.stable_views().values())


def check_single_source(graph: StableViewGraph) -> Verdict:
    if not graph.vertices:
        raise ModelError("empty stable-view graph")
    src = graph.sources()
    if len(src) == 1:
        return Verdict("single-source", HOLDS, {"source": src[0]})
    return Verdict("single-source", VIOLATED, {"sources": src}, f"{len(src)} sources")


# -- durable storage -------------------------------------------------------------


def durably_stored(
    state: SystemState,
    w: frozenset,
    machine,
    perms: Sequence[Sequence[int]],
    q: Optional[Iterable[int]] = None,
    literal: bool = False,
) -> bool:
    """``|R_W| > |Q \\ Q_W|`` at ``state`` (``Q`` defaults to all processors).

    ``R_W``: registers whose view contains ``W``.  ``Q_W``: members of ``Q``
    whose view contains ``W``, or that are scanning and have not read any
    register of ``R_W`` in this scan.  Because reads are separate steps, a
    processor may be part-way through a scan; by default its view here is
    the pending one (its view joined with what it has read so far this
    scan), which is what it will write next.  ``literal`` uses the committed
    view instead.
    """
    w = frozenset(w)
    if not w:
        raise ModelError("W must be nonempty")
    n = len(state.procs)
    members = range(1, n + 1) if q is None else q
    r_w = {i for i, r in enumerate(state.registers, 1) if w <= r.view}
    outside = 0
    for p in members:
        loc = state.procs[p - 1]
        view = machine.view(loc) if literal else machine.pending_view(loc)
        if w <= view:
            continue
        pos = _scan_pos(loc)
        if pos and not any(perms[p - 1][t] in r_w for t in range(pos - 1)):
            continue
        outside += 1
    return len(r_w) > outside


def _scan_pos(loc) -> int:
    pos = getattr(loc, "scan_pos", None)
    if pos is None:
        pos = loc.inner.scan_pos
    return pos


def durable_at_outputs(trace: Trace, literal: bool = False) -> Verdict:
    """``durably_stored`` with ``W`` the output view at every output instant."""
    mach = trace.system.machine
    for s in trace.steps:
        if s.action.kind != "output":
            continue
        state = trace.states[s.t - 1]
        w = mach.view(state.procs[s.action.actor - 1])
        if not durably_stored(state, w, mach, trace.system.perms, literal=literal):
            return Verdict("durably-stored", VIOLATED, {"t": s.t, "actor": s.action.actor, "view": w})
    return Verdict("durably-stored", HOLDS)


# -- non-atomicity ---------------------------------------------------------------


def atomicity_witness(trace: Trace) -> Optional[dict]:
    """An output never equal to the memory contents at any time up to it.

    Memory contents are read as the union of all register views.
    """
    unions = [s.memory_union() for s in trace.states]
    for s in trace.steps:
        if s.action.kind != "output":
            continue
        out = s.action.value
        view = out if isinstance(out, frozenset) else trace.system.machine.view(
            trace.states[s.t - 1].procs[s.action.actor - 1])
        if not any(u == view for u in unions[: s.t + 1]):
            return {"t": s.t, "actor": s.action.actor, "output": view}
    return None


def check_atomicity(trace: Trace) -> Verdict:
    w = atomicity_witness(trace)
    if w is None:
        return Verdict("atomic-snapshot", HOLDS, detail="memory-union interpretation")
    return Verdict("atomic-snapshot", VIOLATED, w, "memory-union interpretation")


__all__ = [
    "HOLDS", "VIOLATED", "INDETERMINATE", "Verdict", "OutputAssignment", "StableViewGraph",
    "check_snapshot_task", "check_consensus_task", "check_renaming_task", "renaming_bound",
    "check_cross_group_names",
    "output_samples", "check_group_solvability", "stable_view_graph", "check_single_source",
    "durably_stored", "durable_at_outputs", "atomicity_witness", "check_atomicity",
]
