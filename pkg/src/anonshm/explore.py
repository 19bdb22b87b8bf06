"""Exhaustive state-space exploration and the wait-freedom (bad cycle) check."""

from __future__ import annotations

import time
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .model import OUTPUT, READ, WRITE, Action, System, SystemState, Trace

KIND_CODE = {WRITE: 0, READ: 1, OUTPUT: 2}
CODE_KIND = {v: k for k, v in KIND_CODE.items()}

HOLDS = "HOLDS"
VIOLATED = "VIOLATED"
INDETERMINATE = "INDETERMINATE"


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class StateGraph:
    """Reachable states (by index) and labelled edges in parallel arrays.

    Node 0 is the initial state.  ``truncated`` is set when a state or depth
    budget cut exploration short; ``frontier`` holds states deliberately left
    unexpanded (e.g. timestamp cap reached).
    """

    system: System
    states: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    src: array = field(default_factory=lambda: array("l"))
    dst: array = field(default_factory=lambda: array("l"))
    actor: array = field(default_factory=lambda: array("b"))
    kind: array = field(default_factory=lambda: array("b"))
    local: array = field(default_factory=lambda: array("b"))
    terminals: list = field(default_factory=list)
    frontier: list = field(default_factory=list)
    truncated: bool = False
    track_writers: bool = False
    symmetric: bool = False
    seconds: float = 0.0

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def exhaustive(self) -> bool:
        return not self.truncated

    def edge_action(self, e: int) -> Action:
        """Rebuild the full action of edge ``e`` from its source state."""
        k = CODE_KIND[self.kind[e]]
        a = self.actor[e]
        loc = self.states[self.src[e]].procs[a - 1]
        mach = self.system.machine
        if k == WRITE:
            return Action(a, WRITE, self.local[e], mach.payload(loc))
        if k == READ:
            return Action(a, READ, self.local[e])
        return Action(a, OUTPUT, 0, mach.output(loc))

    def successors(self) -> list:
        """Adjacency lists of edge ids, built on demand."""
        adj: list = [[] for _ in range(self.n_states)]
        for e, s in enumerate(self.src):
            adj[s].append(e)
        return adj

    def outputs(self) -> set:
        """Distinct output tuples over terminal states."""
        return {self.states[i].outputs for i in self.terminals}

    def summary(self) -> dict:
        return {
            "states": self.n_states,
            "edges": self.n_edges,
            "terminals": len(self.terminals),
            "frontier": len(self.frontier),
            "exhaustive": self.exhaustive,
        }

    def to_json(self) -> dict:
        from .model import canon, digest

        nodes = [{"id": i, "digest": digest(s), "outputs": canon(s.outputs)}
                 for i, s in enumerate(self.states)]
        edges = [
            {"src": self.src[e], "dst": self.dst[e], "actor": self.actor[e],
             "kind": CODE_KIND[self.kind[e]], "local": self.local[e]}
            for e in range(self.n_edges)
        ]
        return {"nodes": nodes, "edges": edges, "summary": self.summary()}

    def to_dot(self) -> str:
        lines = ["digraph states {"]
        for i in range(self.n_states):
            shape = "doublecircle" if i in set(self.terminals) else "circle"
            lines.append(f"  n{i} [shape={shape}];")
        for e in range(self.n_edges):
            lbl = f"p{self.actor[e]} {CODE_KIND[self.kind[e]]} {self.local[e]}"
            lines.append(f'  n{self.src[e]} -> n{self.dst[e]} [label="{lbl}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def symmetric_key(system: System, state: SystemState, writers: bool) -> tuple:
    """Quotient processors that share both input and wiring."""
    classes = _classes(system)
    procs = list(state.procs)
    for members in classes:
        locs = sorted((procs[i] for i in members), key=repr)
        for i, loc in zip(members, locs):
            procs[i] = loc
    if writers:
        return (state.registers, tuple(procs), state.writers)
    return (state.registers, tuple(procs))


_CLASS_CACHE: dict = {}


def _classes(system: System) -> list:
    key = id(system)
    cached = _CLASS_CACHE.get(key)
    if cached is not None and cached[0] is system:
        return cached[1]
    groups: dict = {}
    for i, (inp, perm) in enumerate(zip(system.config.inputs, system.perms)):
        groups.setdefault((inp, perm), []).append(i)
    classes = [g for g in groups.values() if len(g) > 1]
    _CLASS_CACHE[key] = (system, classes)
    return classes


def explore(
    system: System,
    *,
    max_states: Optional[int] = None,
    max_depth: Optional[int] = None,
    frontier: Optional[Callable[[SystemState], bool]] = None,
    symmetry: bool = False,
    track_writers: bool = False,
    raise_on_budget: bool = False,
) -> StateGraph:
    """Depth-first exploration branching over actors and write-target picks.

    States are deduplicated by :meth:`SystemState.key` (last-writer metadata
    is left out unless ``track_writers``; machines never observe it).
    """
    t0 = time.perf_counter()
    g = StateGraph(system, track_writers=track_writers, symmetric=symmetry)
    n = system.n
    mach = system.machine
    perms = system.perms
    next_kind = mach.next_kind

    def key_of(s: SystemState) -> tuple:
        if symmetry:
            return symmetric_key(system, s, track_writers)
        return s.key(track_writers)

    root = system.initial_state()
    g.states.append(root)
    g.index[key_of(root)] = 0
    depth = array("l", [0])
    stack = [0]
    states, index = g.states, g.index
    src, dst, eact, ekind, eloc = g.src, g.dst, g.actor, g.kind, g.local
    apply = system.apply_step

    while stack:
        i = stack.pop()
        s = states[i]
        if frontier is not None and i and frontier(s):
            g.frontier.append(i)
            continue
        d = depth[i]
        if max_depth is not None and d >= max_depth:
            g.truncated = True
            continue
        any_enabled = False
        for p in range(1, n + 1):
            loc = s.procs[p - 1]
            k = next_kind(loc)
            if k is None:
                continue
            any_enabled = True
            if k == WRITE:
                payload = mach.payload(loc)
                acts = [Action(p, WRITE, t, payload) for t in mach.write_targets(loc)]
            elif k == READ:
                acts = [Action(p, READ, mach.read_target(loc))]
            else:
                acts = [Action(p, OUTPUT, 0, mach.output(loc))]
            for a in acts:
                t = apply(s, a)
                kt = key_of(t)
                j = index.get(kt)
                if j is None:
                    if max_states is not None and len(states) >= max_states:
                        g.truncated = True
                        if raise_on_budget:
                            raise BudgetExceeded(f"more than {max_states} states")
                        continue
                    j = len(states)
                    states.append(t)
                    index[kt] = j
                    depth.append(d + 1)
                    stack.append(j)
                src.append(i)
                dst.append(j)
                eact.append(p)
                ekind.append(KIND_CODE[a.kind])
                eloc.append(a.local)
        if not any_enabled:
            g.terminals.append(i)
    del perms
    g.seconds = time.perf_counter() - t0
    return g


@dataclass
class WaitFreeVerdict:
    verdict: str
    lasso: Optional[object] = None  # schedule.Lasso
    cycle_nodes: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = {"check": "wait-free", "verdict": self.verdict}
        if self.lasso is not None:
            d["witness"] = self.lasso.to_json()
        return d


def find_cycle(g: StateGraph) -> Optional[list]:
    """Edge ids of some cycle in ``g``, or ``None`` if it is acyclic.

    Kahn's algorithm strips everything not downstream of a cycle; walking
    predecessors inside the remainder must then repeat a node.
    """
    n = g.n_states
    indeg = array("l", [0]) * n
    for j in g.dst:
        indeg[j] += 1
    adj = g.successors()
    queue = deque(i for i in range(n) if indeg[i] == 0)
    removed = 0
    while queue:
        i = queue.popleft()
        removed += 1
        for e in adj[i]:
            j = g.dst[e]
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    if removed == n:
        return None
    left = [indeg[i] > 0 for i in range(n)]
    pred_edge: dict = {}
    for e in range(g.n_edges):
        s, d = g.src[e], g.dst[e]
        if left[s] and left[d] and d not in pred_edge:
            pred_edge[d] = e
    node = next(i for i in range(n) if left[i])
    seen: dict = {}
    walk: list = []
    while node not in seen:
        seen[node] = len(walk)
        e = pred_edge[node]
        walk.append(e)
        node = g.src[e]
    # walk holds edges in reverse; the cycle closes at ``node``
    cyc = walk[seen[node]:]
    cyc.reverse()
    return cyc


def shortest_path(g: StateGraph, targets: set, adj: Optional[list] = None) -> list:
    """Edge ids of a breadth-first shortest path from the root into ``targets``."""
    if 0 in targets:
        return []
    adj = adj if adj is not None else g.successors()
    parent: dict = {0: None}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for e in adj[i]:
            j = g.dst[e]
            if j in parent:
                continue
            parent[j] = e
            if j in targets:
                path = []
                while parent[j] is not None:
                    e = parent[j]
                    path.append(e)
                    j = g.src[e]
                path.reverse()
                return path
            queue.append(j)
    raise ValueError("targets unreachable from the root")


def path_trace(g: StateGraph, edges: list) -> Trace:
    """Replay a path of edges from the root as a concrete trace."""
    system = g.system
    trace = Trace(system, system.initial_state())
    state = trace.initial
    for e in edges:
        a = g.edge_action(e)
        # symmetric graphs may store a permuted representative
        if g.symmetric:
            a = _match_action(system, state, a, g.states[g.src[e]])
        state = system.apply_step(state, a)
        trace.record(a, state)
    return trace


def _match_action(system: System, state: SystemState, a: Action, rep: SystemState) -> Action:
    want = rep.procs[a.actor - 1]
    for p in range(1, system.n + 1):
        if state.procs[p - 1] == want and system.perms[p - 1] == system.perms[a.actor - 1]:
            return a._replace(actor=p)
    return a


def check_wait_free(g: StateGraph) -> WaitFreeVerdict:
    """VIOLATED iff a reachable cycle exists.

    Every edge is a step of a processor that has not terminated, and
    termination is permanent, so the actor of any cycle edge stays
    non-terminated throughout: the cycle repeated forever is an infinite
    run in which it never outputs.  A cycle found in a truncated graph is a
    genuine witness; a truncated graph without one is indeterminate.
    """
    from .schedule import Lasso

    cyc = find_cycle(g)
    if cyc is None:
        return WaitFreeVerdict(INDETERMINATE if g.truncated else HOLDS)
    nodes = [g.src[e] for e in cyc]
    prefix = shortest_path(g, set(nodes))
    entry = g.dst[prefix[-1]] if prefix else 0
    k = nodes.index(entry)
    cyc = cyc[k:] + cyc[:k]
    nodes = nodes[k:] + nodes[:k]
    trace = path_trace(g, prefix + cyc)
    trace.cycle_start = len(prefix)
    return WaitFreeVerdict(VIOLATED, Lasso.from_trace(trace), nodes)
