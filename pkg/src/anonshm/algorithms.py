"""Step machines for the write-scan loop, snapshot, renaming and consensus.

All processors of a system share one machine object (they run the same
program); per-processor data lives in immutable local-state tuples.  A
machine answers:

* ``next_kind(local)`` -- ``"write"``, ``"read"``, ``"output"`` or ``None``
  once terminated;
* ``write_targets(local)`` -- local indices not yet written this round, in
  ascending order (the scheduler picks one, default the first);
* ``read_target(local)`` -- the local index the scan reads next;
* ``on_write`` / ``on_read`` / ``on_output`` -- successor local state.

Scans read local indices ``1..M`` in ascending order.  The end-of-scan local
update is folded into the last read of the scan.
"""

from __future__ import annotations

from typing import Any, NamedTuple, Optional

from .model import OUTPUT, READ, WRITE, Config, ModelError, Payload

EMPTY: frozenset = frozenset()


class _Rounds:
    """Round-fair write bookkeeping shared by every machine."""

    def __init__(self, m: int):
        self.m = m
        self.full = frozenset(range(1, m + 1))
        self._sorted: dict = {}

    def targets(self, remaining: frozenset) -> tuple:
        t = self._sorted.get(remaining)
        if t is None:
            t = self._sorted[remaining] = tuple(sorted(remaining))
        return t

    def after_write(self, remaining: frozenset, i: int) -> frozenset:
        if i not in remaining:
            raise ModelError(f"local register {i} already written this round")
        rest = remaining - {i}
        return rest if rest else self.full


class WriteScanLocal(NamedTuple):
    inp: Any
    view: frozenset
    remaining: frozenset
    scan_pos: int  # 0 in the write phase, else the next local index to read


class WriteScanMachine:
    """Write the view to one register, scan all registers, forever."""

    name = "writescan"

    def __init__(self, m: int):
        if m < 1:
            raise ModelError("write-scan needs M >= 1")
        self.m = m
        self.rounds = _Rounds(m)

    def default_payload(self) -> Payload:
        return Payload(EMPTY, None)

    def initial(self, inp: Any) -> WriteScanLocal:
        return WriteScanLocal(inp, frozenset((inp,)), self.rounds.full, 0)

    def next_kind(self, loc: WriteScanLocal) -> str:
        return WRITE if loc.scan_pos == 0 else READ

    def write_targets(self, loc: WriteScanLocal) -> tuple:
        return self.rounds.targets(loc.remaining)

    def payload(self, loc: WriteScanLocal) -> Payload:
        return Payload(loc.view, None)

    def on_write(self, loc: WriteScanLocal, i: int) -> WriteScanLocal:
        return WriteScanLocal(loc.inp, loc.view, self.rounds.after_write(loc.remaining, i), 1)

    def read_target(self, loc: WriteScanLocal) -> int:
        return loc.scan_pos

    def on_read(self, loc: WriteScanLocal, payload: Payload) -> WriteScanLocal:
        nxt = loc.scan_pos + 1 if loc.scan_pos < self.m else 0
        view = loc.view | payload.view
        return WriteScanLocal(loc.inp, view, loc.remaining, nxt)

    def output(self, loc: WriteScanLocal) -> None:
        raise ModelError("the write-scan loop never outputs")

    def on_output(self, loc: WriteScanLocal) -> WriteScanLocal:
        raise ModelError("the write-scan loop never outputs")

    def view(self, loc: WriteScanLocal) -> frozenset:
        return loc.view

    def pending_view(self, loc: WriteScanLocal) -> frozenset:
        return loc.view


class SnapshotLocal(NamedTuple):
    inp: Any
    view: frozenset
    level: int
    remaining: frozenset
    scan_pos: int  # 0 in the write phase
    scan_min: int  # running minimum level; reset to N when irrelevant
    scan_equal: bool  # every view read so far this scan matched our view
    scan_union: frozenset  # own view joined with every view read this scan
    done: bool = False


class SnapshotMachine:
    """Wait-free snapshot: climb one level per clean scan, output at level N.

    A scan is clean when every register read holds exactly our view
    (``level_rule="equal"``); ``"contain"`` accepts any superset instead and
    exists only for experiments.
    """

    name = "snapshot"

    def __init__(self, n: int, m: Optional[int] = None, level_rule: str = "equal"):
        if n < 2:
            raise ModelError("snapshot needs N > 1")
        self.n = n
        self.m = n if m is None else m
        self.contain = level_rule == "contain"
        self.rounds = _Rounds(self.m)

    def default_payload(self) -> Payload:
        return Payload(EMPTY, 0)

    def initial(self, inp: Any) -> SnapshotLocal:
        view = frozenset((inp,))
        return SnapshotLocal(inp, view, 0, self.rounds.full, 0, self.n, True, view)

    def next_kind(self, loc: SnapshotLocal) -> Optional[str]:
        if loc.done:
            return None
        if loc.scan_pos:
            return READ
        return OUTPUT if loc.level >= self.n else WRITE

    def write_targets(self, loc: SnapshotLocal) -> tuple:
        return self.rounds.targets(loc.remaining)

    def payload(self, loc: SnapshotLocal) -> Payload:
        return Payload(loc.view, loc.level)

    def on_write(self, loc: SnapshotLocal, i: int) -> SnapshotLocal:
        return loc._replace(remaining=self.rounds.after_write(loc.remaining, i), scan_pos=1)

    def read_target(self, loc: SnapshotLocal) -> int:
        return loc.scan_pos

    def on_read(self, loc: SnapshotLocal, payload: Payload) -> SnapshotLocal:
        v = payload.view
        if loc.scan_equal:
            equal = v >= loc.view if self.contain else v == loc.view
        else:
            equal = False
        smin = min(loc.scan_min, payload.level) if equal else self.n
        union = loc.scan_union | v
        if loc.scan_pos < self.m:
            return SnapshotLocal(
                loc.inp, loc.view, loc.level, loc.remaining, loc.scan_pos + 1, smin, equal, union
            )
        level = min(smin + 1, self.n) if equal else 0
        return SnapshotLocal(loc.inp, union, level, loc.remaining, 0, self.n, True, union)

    def output(self, loc: SnapshotLocal) -> frozenset:
        return loc.view

    def on_output(self, loc: SnapshotLocal) -> SnapshotLocal:
        return loc._replace(done=True)

    def view(self, loc: SnapshotLocal) -> frozenset:
        return loc.view

    def pending_view(self, loc: SnapshotLocal) -> frozenset:
        """The view the processor will hold when its current scan ends."""
        return loc.scan_union

    def invoke(self, loc: SnapshotLocal, new_input: Any) -> SnapshotLocal:
        return longlived_invoke(loc, new_input, self.n)


def longlived_invoke(loc: SnapshotLocal, new_input: Any, n: int) -> SnapshotLocal:
    """Start a new long-lived snapshot invocation.

    Only the level drops (to 0) and the view gains ``new_input``; the round
    bookkeeping carries over so writes stay round-fair across invocations.
    """
    if loc.level < n or loc.scan_pos:
        raise ModelError("previous snapshot invocation has not completed")
    view = loc.view | {new_input}
    return SnapshotLocal(new_input, view, 0, loc.remaining, 0, n, True, view, False)


def rename_from_snapshot(snap: frozenset, group: int) -> int:
    """Name ``(z-1)z/2 + r`` for rank ``r`` of ``group`` in a size-``z`` snapshot."""
    if group not in snap:
        raise ModelError(f"group {group} is not in snapshot {sorted(snap)}")
    z = len(snap)
    r = sorted(snap).index(group) + 1
    return (z - 1) * z // 2 + r


class RenamingMachine(SnapshotMachine):
    """Snapshot, then output a name derived from the processor's rank in it."""

    name = "renaming"

    def output(self, loc: SnapshotLocal) -> int:
        return rename_from_snapshot(loc.view, loc.inp)


class ConsensusLocal(NamedTuple):
    pref: Any
    ts: int
    inner: SnapshotLocal  # long-lived snapshot over (value, timestamp) pairs
    decided: Any = None
    done: bool = False


def consensus_on_snapshot(
    loc: ConsensusLocal, snap: frozenset, n: int, vacuous_lead: bool = False
) -> ConsensusLocal:
    """Decide, or adopt the leading value and re-invoke with a higher timestamp.

    A value is decided when its highest timestamp exceeds every other value's
    by at least 2.  Values missing from the snapshot count as timestamp 0,
    so a solo processor must climb to timestamp 2 before deciding; with
    ``vacuous_lead`` a value alone in the snapshot is decided at once.
    """
    if loc.decided is not None:
        raise ModelError("already decided")
    if not snap:
        raise ModelError("empty snapshot")
    best: dict = {}
    for v, t in snap:
        if t > best.get(v, -1):
            best[v] = t
    top = max(best.values())
    leaders = sorted(v for v, t in best.items() if t == top)
    lead = leaders[0]
    others = [t for v, t in best.items() if v != lead]
    if others:
        runner_up = max(others)
    else:
        runner_up = None if vacuous_lead else 0
    if len(leaders) == 1 and (runner_up is None or top >= runner_up + 2):
        return loc._replace(decided=lead)
    ts = top + 1
    return ConsensusLocal(lead, ts, longlived_invoke(loc.inner, (lead, ts), n), None, False)


class ConsensusMachine:
    """Obstruction-free consensus over the long-lived snapshot."""

    name = "consensus"

    def __init__(self, n: int, level_rule: str = "equal", vacuous_lead: bool = False):
        self.n = n
        self.m = n
        self.snap = SnapshotMachine(n, n, level_rule)
        self.vacuous_lead = vacuous_lead

    def default_payload(self) -> Payload:
        return self.snap.default_payload()

    def initial(self, inp: Any) -> ConsensusLocal:
        return ConsensusLocal(inp, 0, self.snap.initial((inp, 0)))

    def next_kind(self, loc: ConsensusLocal) -> Optional[str]:
        if loc.done:
            return None
        if loc.decided is not None:
            return OUTPUT
        return self.snap.next_kind(loc.inner)

    def write_targets(self, loc: ConsensusLocal) -> tuple:
        return self.snap.write_targets(loc.inner)

    def payload(self, loc: ConsensusLocal) -> Payload:
        return self.snap.payload(loc.inner)

    def on_write(self, loc: ConsensusLocal, i: int) -> ConsensusLocal:
        return loc._replace(inner=self.snap.on_write(loc.inner, i))

    def read_target(self, loc: ConsensusLocal) -> int:
        return loc.inner.scan_pos

    def on_read(self, loc: ConsensusLocal, payload: Payload) -> ConsensusLocal:
        inner = self.snap.on_read(loc.inner, payload)
        loc = loc._replace(inner=inner)
        if inner.scan_pos == 0 and inner.level >= self.n:
            loc = consensus_on_snapshot(loc, inner.view, self.n, self.vacuous_lead)
        return loc

    def output(self, loc: ConsensusLocal) -> Any:
        return loc.decided

    def on_output(self, loc: ConsensusLocal) -> ConsensusLocal:
        return loc._replace(done=True)

    def view(self, loc: ConsensusLocal) -> frozenset:
        return loc.inner.view

    def pending_view(self, loc: ConsensusLocal) -> frozenset:
        return loc.inner.scan_union


def make_machine(config: Config):
    n, m = config.n_processors, config.n_registers
    if config.algorithm == "writescan":
        return WriteScanMachine(m)
    if config.algorithm == "snapshot":
        return SnapshotMachine(n, m, config.level_rule)
    if config.algorithm == "renaming":
        return RenamingMachine(n, m, config.level_rule)
    return ConsensusMachine(n, config.level_rule, config.vacuous_lead)
