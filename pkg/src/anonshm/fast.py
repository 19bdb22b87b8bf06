"""Compiled exploration engine.

A machine's local states and register payloads form a small finite alphabet
even when the global state space is large.  :func:`compile_tables` closes the
alphabet under every transition and tabulates the machine; a global state is
then a 61-bit integer (register ids, then local-state ids) and exploration runs
in numba over those integers, with a hash table holding nothing but keys.

Every witness this engine reports is replayed through the reference
:class:`~anonshm.model.System` before being returned, so the tables are checked
against the machines on each use.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit, objmode

from .model import OUTPUT, READ, WRITE, ModelError, System, SystemState, Trace, dumps

K_WRITE, K_READ, K_OUTPUT, K_DONE, K_FRONTIER = 0, 1, 2, 3, 4
_KIND = {WRITE: K_WRITE, READ: K_READ, OUTPUT: K_OUTPUT, None: K_DONE}


class AlphabetTooLarge(ModelError):
    pass


def canon_key(value) -> str:
    return dumps(value)


@dataclass
class Tables:
    system: System
    locals: list
    regs: list
    kind: np.ndarray
    wnext: np.ndarray  # [L, M] local after writing local index t+1, -1 if not allowed
    wpay: np.ndarray  # [L] register id written
    rpos: np.ndarray  # [L] 0-based local index read next
    rnext: np.ndarray  # [L, R]
    onext: np.ndarray
    init: np.ndarray  # [N] initial local ids
    perm: np.ndarray  # [N, M] 0-based physical register
    lview: np.ndarray  # view bitmask per local
    rview: np.ndarray  # view bitmask per register
    lscan: np.ndarray  # scan position per local (0 outside a scan)
    lpend: np.ndarray  # pending-view bitmask per local
    lout: np.ndarray  # output id per local (-1 if none yet)
    outputs: list  # output id -> value
    stale_ok: bool  # stale payloads verified to read like the initial one
    lvl0: np.ndarray  # register id with the level zeroed, where verified
    elements: list  # bit position -> view element
    rb: int
    lb: int
    lindex: dict = field(default_factory=dict)
    rindex: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    def pack(self, state: SystemState) -> int:
        key = 0
        for i, r in enumerate(state.registers):
            key |= self.rindex[r] << (i * self.rb)
        base = self.m * self.rb
        for j, loc in enumerate(state.procs):
            key |= self.lindex[loc] << (base + j * self.lb)
        return key

    def unpack(self, key: int) -> SystemState:
        m, n, rb, lb = self.m, self.n, self.rb, self.lb
        regs = tuple(self.regs[(key >> (i * rb)) & ((1 << rb) - 1)] for i in range(m))
        base = m * rb
        procs = tuple(self.locals[(key >> (base + j * lb)) & ((1 << lb) - 1)] for j in range(n))
        mach = self.system.machine
        outputs = tuple(
            mach.output(loc) if self.kind[self.lindex[loc]] == K_DONE else None for loc in procs
        )
        return SystemState(regs, (0,) * m, procs, outputs)

    def mask(self, view) -> int:
        pos = {e: i for i, e in enumerate(self.elements)}
        out = 0
        for e in view:
            out |= 1 << pos[e]
        return out

    def unmask(self, bits: int) -> frozenset:
        return frozenset(e for i, e in enumerate(self.elements) if bits >> i & 1)


def compile_tables(
    system: System,
    frontier: Optional[Callable] = None,
    max_alphabet: int = 1 << 15,
    minimize: bool = True,
) -> Tables:
    """Tabulate the machine over the closure of its reachable alphabet.

    ``frontier(local)`` marks local states that are kept but never expanded.
    With ``minimize`` local states are merged up to bisimulation (see
    :func:`_bisimulation_classes`); ``locals`` then holds one representative
    per class and ``lindex`` maps every local state to its class.
    """
    mach = system.machine
    n, m = system.n, system.m
    locals_: list = []
    lindex: dict = {}
    regs: list = []
    rindex: dict = {}

    def lid(loc) -> int:
        i = lindex.get(loc)
        if i is None:
            i = lindex[loc] = len(locals_)
            locals_.append(loc)
            if len(locals_) > max_alphabet:
                raise AlphabetTooLarge(f"more than {max_alphabet} local states")
        return i

    def rid(reg) -> int:
        i = rindex.get(reg)
        if i is None:
            i = rindex[reg] = len(regs)
            regs.append(reg)
        return i

    rid(mach.default_payload())
    init = [lid(mach.initial(x)) for x in system.config.inputs]
    kinds: dict = {}
    wnext: dict = {}
    wpay: dict = {}
    onext: dict = {}
    rnext: dict = {}
    readers: list = []
    done_local = 0
    while True:
        progressed = False
        while done_local < len(locals_):
            i = done_local
            loc = locals_[i]
            done_local += 1
            progressed = True
            if frontier is not None and frontier(loc):
                kinds[i] = K_FRONTIER
                continue
            k = _KIND[mach.next_kind(loc)]
            kinds[i] = k
            if k == K_WRITE:
                wpay[i] = rid(mach.payload(loc))
                for t in mach.write_targets(loc):
                    wnext[i, t - 1] = lid(mach.on_write(loc, t))
            elif k == K_READ:
                readers.append(i)
            elif k == K_OUTPUT:
                onext[i] = lid(mach.on_output(loc))
        for i in readers:
            loc = locals_[i]
            for r in range(len(regs)):
                if (i, r) not in rnext:
                    rnext[i, r] = lid(mach.on_read(loc, regs[r]))
                    progressed = True
        if not progressed and done_local == len(locals_):
            break

    L, R = len(locals_), len(regs)
    elements = sorted({e for loc in locals_ for e in mach.view(loc)} | {e for r in regs for e in r.view})
    if len(elements) > 62:
        raise AlphabetTooLarge("too many distinct view elements")
    pos = {e: i for i, e in enumerate(elements)}

    def bits(view) -> int:
        b = 0
        for e in view:
            b |= 1 << pos[e]
        return b

    kind = np.array([kinds[i] for i in range(L)], dtype=np.int8)
    wn = np.full((L, m), -1, dtype=np.int64)
    for (i, t), j in wnext.items():
        wn[i, t] = j
    wp = np.full(L, -1, dtype=np.int64)
    for i, r in wpay.items():
        wp[i] = r
    rn = np.full((L, R), -1, dtype=np.int64)
    for (i, r), j in rnext.items():
        rn[i, r] = j
    on = np.full(L, -1, dtype=np.int64)
    for i, j in onext.items():
        on[i] = j
    rpos = np.zeros(L, dtype=np.int64)
    lscan = np.zeros(L, dtype=np.int64)
    for i in readers:
        rpos[i] = mach.read_target(locals_[i]) - 1
    for i, loc in enumerate(locals_):
        lscan[i] = getattr(loc, "scan_pos", 0) or getattr(getattr(loc, "inner", None), "scan_pos", 0)
    perm = np.array([[x - 1 for x in p] for p in system.perms], dtype=np.int64)
    lview = np.array([bits(mach.view(loc)) for loc in locals_], dtype=np.int64)
    lpend = np.array([bits(mach.pending_view(loc)) for loc in locals_], dtype=np.int64)
    init = np.array(init, dtype=np.int64)

    if minimize:
        outs = [repr(mach.output(loc)) if kind[i] in (K_OUTPUT, K_DONE) else "" for i, loc in enumerate(locals_)]
        labels = list(zip(kind.tolist(), lview.tolist(), lpend.tolist(), lscan.tolist(),
                          rpos.tolist(), wp.tolist(), outs))
        cls = _bisimulation_classes(labels, wn, rn, on)
        C = int(cls.max()) + 1
        rep = np.full(C, -1, dtype=np.int64)
        for i in range(L - 1, -1, -1):
            rep[cls[i]] = i

        def remap(a):
            return np.where(a >= 0, cls[np.maximum(a, 0)], -1)

        kind, wn, wp, rn, on = kind[rep], remap(wn[rep]), wp[rep], remap(rn[rep]), remap(on[rep])
        rpos, lscan, lview, lpend = rpos[rep], lscan[rep], lview[rep], lpend[rep]
        init = cls[init]
        lindex = {loc: int(cls[i]) for loc, i in lindex.items()}
        locals_ = [locals_[i] for i in rep]
        L = C

    outputs: list = []
    out_ids: dict = {}
    lout = np.full(L, -1, dtype=np.int64)
    for i, loc in enumerate(locals_):
        if kind[i] in (K_OUTPUT, K_DONE):
            o = mach.output(loc)
            key = canon_key(o)
            if key not in out_ids:
                out_ids[key] = len(outputs)
                outputs.append(o)
            lout[i] = out_ids[key]
    rview = np.array([bits(r.view) for r in regs], dtype=np.int64)
    stale_ok, lvl0 = _register_merges(regs, rindex, kind, rn, lview, rview)
    rb = max(1, (R - 1).bit_length())
    lb = max(1, (L - 1).bit_length())
    if m * rb + n * lb > 61:
        raise AlphabetTooLarge(f"state needs {m * rb + n * lb} bits")
    return Tables(
        system=system,
        locals=locals_,
        regs=regs,
        kind=kind,
        wnext=wn,
        wpay=wp,
        rpos=rpos,
        rnext=rn,
        onext=on,
        init=init,
        perm=perm,
        lview=lview,
        rview=rview,
        lscan=lscan,
        lpend=lpend,
        lout=lout,
        outputs=outputs,
        stale_ok=stale_ok,
        lvl0=lvl0,
        elements=elements,
        rb=rb,
        lb=lb,
        lindex=lindex,
        rindex=rindex,
    )


def _register_merges(regs, rindex, kind, rnext, lview, rview) -> tuple:
    """Check, on the tables, which register payloads readers cannot tell apart.

    Returns ``(stale_ok, lvl0)``.  ``stale_ok``: every reader whose view
    strictly contains a payload's view reacts to it exactly as to the initial
    payload (id 0, empty view).  ``lvl0[r]``: the id of ``r`` with level 0, if
    every reader whose view differs from ``r``'s reacts to both alike (else
    ``r`` itself).
    """
    readers = np.nonzero(kind == K_READ)[0]
    R = len(regs)
    stale_ok = rview[0] == 0
    lvl0 = np.arange(R, dtype=np.int64)
    for r in range(R):
        v = rview[r]
        sub = readers[((lview[readers] & v) == v) & (lview[readers] != v)]
        if stale_ok and len(sub) and np.any(rnext[sub, r] != rnext[sub, 0]):
            stale_ok = False
        reg = regs[r]
        if getattr(reg, "level", None) in (None, 0):
            continue
        cand = rindex.get(reg._replace(level=0))
        if cand is None:
            continue
        other = readers[lview[readers] != v]
        if not np.any(rnext[other, r] != rnext[other, cand]):
            lvl0[r] = cand
    return bool(stale_ok), lvl0


def _bisimulation_classes(labels: list, wnext: np.ndarray, rnext: np.ndarray,
                          onext: np.ndarray) -> np.ndarray:
    """Coarsest partition of local states respecting labels and transitions.

    Two local states share a class when they carry the same observable label
    (action kind, view, pending view, scan position, payload, output) and,
    for every write choice, register value read or output step, move to
    states of the same class.  Replacing each local state by its class keeps
    the global transition system bisimilar, so every check over these labels
    and the registers is unaffected, while dead bookkeeping (e.g. the level
    carried through a scan) stops multiplying states.
    """
    ids: dict = {}
    cls = np.array([ids.setdefault(lab, len(ids)) for lab in labels], dtype=np.int64)
    while True:
        def succ(a):
            return np.where(a >= 0, cls[np.maximum(a, 0)], -1)

        sig = np.concatenate([cls[:, None], succ(wnext), succ(rnext), succ(onext)[:, None]], axis=1)
        _, new = np.unique(sig, axis=0, return_inverse=True)
        new = new.reshape(-1)
        if new.max() == cls.max():
            return new.astype(np.int64)
        cls = new


# -- numba kernels -----------------------------------------------------------
#
# State table: 2**bb buckets of 8 uint32 entries.  A key of kb bits is mapped
# through one of two bijections of the kb-bit space; the top bb bits of the
# image pick the bucket and only the remaining kb - bb bits are stored, next
# to a bit naming the bijection and two DFS colour bits.  A key whose two
# buckets are full spills into one of the PROBE - 1 buckets after its second
# one, and the entry records how far it moved:
#
#   bit 31 occupied | bit 30 bijection | bits 28-29 colour | bits 26-27 spill
#   | bits 0-25 remainder

_C1A, _C1B = 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9
_C2A, _C2B = 0x94D049BB133111EB, 0xD6E8FEB86659FD93
MAX_REM_BITS = 26
BUCKET = 8
PROBE = 4


@njit(cache=True, inline="always")
def _mix(x, kb, which):
    mask = (np.uint64(1) << np.uint64(kb)) - np.uint64(1)
    s = np.uint64((kb + 1) // 2)
    y = np.uint64(x)
    if which == 0:
        y = (y * np.uint64(_C1A)) & mask
        y ^= y >> s
        y = (y * np.uint64(_C1B)) & mask
    else:
        y = (y * np.uint64(_C2A)) & mask
        y ^= y >> s
        y = (y * np.uint64(_C2B)) & mask
    y ^= y >> s
    return y


@njit(cache=True, inline="always")
def _unmix(y, kb, which, inv_a, inv_b):
    mask = (np.uint64(1) << np.uint64(kb)) - np.uint64(1)
    s = np.uint64((kb + 1) // 2)
    y = np.uint64(y)
    y ^= y >> s
    y = (y * np.uint64(inv_b)) & mask
    y ^= y >> s
    y = (y * np.uint64(inv_a)) & mask
    return np.int64(y)


@njit(cache=True)
def _lookup(tab, bb, kb, key):
    """Flat index of ``key``'s entry if present; else ``-2 - index`` of a free
    entry to use; ``-1`` when both candidate buckets are full.

    Keys are placed at the first free entry along a fixed probe sequence
    (first bucket, second bucket, then the spill buckets after it) and
    entries are never removed, so a lookup stops at the first free entry:
    most lookups touch a single bucket.
    """
    rb = kb - bb
    rmask = (np.uint64(1) << np.uint64(rb)) - np.uint64(1)
    nbm = (np.int64(1) << bb) - 1
    for probe in range(PROBE + 1):
        which = 0 if probe == 0 else 1
        spill = 0 if probe == 0 else probe - 1
        if probe <= 1:
            f = _mix(key, kb, which)
            home = np.int64(f >> np.uint64(rb))
        b = (home + spill) & nbm
        want = (np.uint32(0x80000000) | np.uint32(which << 30) | np.uint32(spill << 26)
                | np.uint32(f & rmask))
        base = b * BUCKET
        for k in range(BUCKET):
            e = tab[base + k]
            if e == 0:
                return -2 - (base + k)
            if (e & np.uint32(0xCFFFFFFF)) == want:
                return base + k
    return -1


@njit(cache=True, inline="always")
def _probe_bucket(key, kb, bb, probe):
    rb = kb - bb
    f = _mix(key, kb, 0 if probe == 0 else 1)
    spill = 0 if probe == 0 else probe - 1
    return (np.int64(f >> np.uint64(rb)) + spill) & ((np.int64(1) << bb) - 1)


@njit(cache=True)
def _displace(tab, bb, kb, inv, key):
    """Make room for ``key`` when every bucket on its probe sequence is full.

    One occupant of those buckets moves to a free entry further along its
    own probe sequence and ``key`` takes its place.  No bucket ever loses an
    entry, so first-fit lookups stay valid.  Returns ``(slot, moved_from,
    moved_to)``, or ``(-1, -1, -1)`` when no occupant can move.
    """
    for probe in range(PROBE + 1):
        base = _probe_bucket(key, kb, bb, probe) * BUCKET
        for k in range(BUCKET):
            pos = base + k
            e = tab[pos]
            at = 0 if (e >> np.uint32(30)) & np.uint32(1) == 0 else 1 + np.int64((e >> np.uint32(26)) & np.uint32(3))
            x = _decode(tab, pos, bb, kb, inv)
            for later in range(at + 1, PROBE + 1):
                xb = _probe_bucket(x, kb, bb, later) * BUCKET
                for kk in range(BUCKET):
                    if tab[xb + kk] == 0:
                        tab[xb + kk] = _entry(x, kb, bb, xb + kk) | (e & np.uint32(0x30000000))
                        tab[pos] = 0
                        return pos, pos, xb + kk
    return -1, -1, -1


@njit(cache=True, inline="always")
def _entry(key, kb, bb, tab_index):
    # encode key for insertion at tab_index (bucket decides which bijection)
    rb = kb - bb
    rmask = (np.uint64(1) << np.uint64(rb)) - np.uint64(1)
    nbm = (np.int64(1) << bb) - 1
    b = tab_index // BUCKET
    f0 = _mix(key, kb, 0)
    if np.int64(f0 >> np.uint64(rb)) == b:
        return np.uint32(0x80000000) | np.uint32(f0 & rmask)
    f1 = _mix(key, kb, 1)
    spill = (b - np.int64(f1 >> np.uint64(rb))) & nbm
    return np.uint32(0xC0000000) | np.uint32(spill << 26) | np.uint32(f1 & rmask)


@njit(cache=True)
def _decode(tab, pos, bb, kb, inv):
    e = tab[pos]
    which = np.int64((e >> np.uint32(30)) & np.uint32(1))
    spill = np.int64((e >> np.uint32(26)) & np.uint32(3))
    rb = kb - bb
    home = (pos // BUCKET - spill) & ((np.int64(1) << bb) - 1)
    f = (np.uint64(home) << np.uint64(rb)) | np.uint64(e & np.uint32(0x03FFFFFF))
    return _unmix(f, kb, which, inv[which, 0], inv[which, 1])


@njit(cache=True)
def _set_colour(tab, pos, colour):
    tab[pos] = (tab[pos] & np.uint32(0xCFFFFFFF)) | np.uint32(colour << 28)


@njit(cache=True)
def _regrow(tab, bb, kb, inv):
    """Copy into a table with twice the buckets; returns (table, ok)."""
    nbb = bb + 1
    new = np.zeros((np.int64(1) << nbb) * BUCKET, dtype=np.uint32)
    for pos in range(tab.shape[0]):
        e = tab[pos]
        if e == 0:
            continue
        key = _decode(tab, pos, bb, kb, inv)
        colour = np.int64((e >> np.uint32(28)) & np.uint32(3))
        r = _lookup(new, nbb, kb, key)
        if r == -1:
            r, _, _ = _displace(new, nbb, kb, inv, key)
            if r < 0:
                return new, False
            r = -2 - r
        q = -2 - r
        new[q] = _entry(key, kb, nbb, q) | np.uint32(colour << 28)
    return new, True


@njit(cache=True)
def _dfs(root, kind, wnext, wpay, rpos, rnext, onext, perm, n, m, rb, lb, active, classes,
         stale_id, lvl0, lview, lcheck, rview, lscan, kb, bb0, bb_max, inv, max_states, check_durable,
         forbid_union, goal_view, stop_on_cycle, lout, n_out, sigseen, deadline):
    """Depth-first exploration over packed states.

    Table entries carry the DFS colour (grey while on the stack, black once
    finished), so a grey hit is a back edge closing a cycle and the stack
    itself is the path to it.

    Successors whose memory union equals ``forbid_union`` are pruned (when
    non-negative).  Exploration stops at a state where a processor is poised
    to output view ``goal_view`` (when non-negative), and at the first cycle
    when ``stop_on_cycle``.  With both set, successors where no unfinished
    processor's pending view lies within ``goal_view`` are pruned too: views
    only grow, so the goal is unreachable from them.

    ``sigseen`` (when non-empty) marks every reachable combination of
    per-processor output ids ``lout`` (-1: no output yet), base ``n_out + 1``.
    """
    rmask = (np.int64(1) << rb) - 1
    lmask = (np.int64(1) << lb) - 1
    base = m * rb
    width = n * m + n

    bb = bb0
    tab = np.zeros((np.int64(1) << bb) * BUCKET, dtype=np.uint32)
    depth_cap = 1024
    fkey = np.empty(depth_cap, dtype=np.int64)
    fsucc = np.empty((depth_cap, width), dtype=np.int64)
    fn = np.zeros(depth_cap, dtype=np.int64)
    fpos = np.zeros(depth_cap, dtype=np.int64)
    fslot = np.zeros(depth_cap, dtype=np.int64)  # table index of each frame's entry
    terminals = np.empty(1024, dtype=np.int64)
    nterm = 0
    edges = 0
    nfront = 0
    truncated = False
    max_depth = 0
    dur_checked = 0
    dur_bad = 0
    dur_key = np.int64(-1)
    dur_proc = -1
    status = 0
    cycle_at = -1
    cycle_path = np.empty(0, dtype=np.int64)

    r0 = _lookup(tab, bb, kb, root)
    q0 = -2 - r0
    tab[q0] = _entry(root, kb, bb, q0) | np.uint32(1 << 28)
    count = 1
    sp = 0
    pending = root  # key to push, or -1
    pending_slot = q0
    timed_out = False
    ticks = 0
    while True:
        ticks += 1
        if deadline > 0.0 and ticks & 0x3FFFF == 0:
            with objmode(now="float64"):
                now = time.perf_counter()
            if now > deadline:
                timed_out = True
                truncated = True
                break
        if pending >= 0:
            key = pending
            pending = -1
            if sp == depth_cap:
                depth_cap *= 2
                k2 = np.empty(depth_cap, dtype=np.int64)
                k2[:sp] = fkey[:sp]
                fkey = k2
                s2 = np.empty((depth_cap, width), dtype=np.int64)
                s2[:sp] = fsucc[:sp]
                fsucc = s2
                n2 = np.zeros(depth_cap, dtype=np.int64)
                n2[:sp] = fn[:sp]
                fn = n2
                p2 = np.zeros(depth_cap, dtype=np.int64)
                p2[:sp] = fpos[:sp]
                fpos = p2
                q2 = np.zeros(depth_cap, dtype=np.int64)
                q2[:sp] = fslot[:sp]
                fslot = q2
            fkey[sp] = key
            fpos[sp] = 0
            fslot[sp] = pending_slot
            c = _successors(key, fsucc[sp], kind, wnext, wpay, rpos, rnext, onext, perm, n, m,
                            rb, lb, active, classes, lview, rview, stale_id, lvl0)
            sp += 1
            if sp > max_depth:
                max_depth = sp
            if c < 0:
                nfront += 1
                c = 0
            elif c == 0:
                if nterm == terminals.shape[0]:
                    t2 = np.empty(nterm * 2, dtype=np.int64)
                    t2[:nterm] = terminals
                    terminals = t2
                terminals[nterm] = key
                nterm += 1
            fn[sp - 1] = c
            edges += c
            if sigseen.shape[0] > 0:
                code = 0
                for p in range(n - 1, -1, -1):
                    code = code * (n_out + 1) + lout[(key >> (base + p * lb)) & lmask] + 1
                sigseen[code] = 1
            hit = False
            for p in range(n):
                l = (key >> (base + p * lb)) & lmask
                if kind[l] != 2:
                    continue
                if goal_view >= 0 and lview[l] == goal_view:
                    hit = True
                if check_durable:
                    dur_checked += 1
                    if not _durable(key, lview[l], kind, lcheck, rview, lscan, perm, n, m, rb, lb):
                        dur_bad += 1
                        if dur_proc < 0:
                            dur_key = key
                            dur_proc = p
            if hit:
                status = 2
                break
            continue
        if sp == 0:
            break
        top = sp - 1
        if fpos[top] < fn[top]:
            child = fsucc[top, fpos[top]]
            fpos[top] += 1
            if forbid_union >= 0:
                u = np.int64(0)
                for r in range(m):
                    u |= rview[(child >> (r * rb)) & rmask]
                if u == forbid_union:
                    continue
                if goal_view >= 0:
                    alive = False
                    for p in range(n):
                        l = (child >> (base + p * lb)) & lmask
                        if kind[l] != 3 and lcheck[l] & ~goal_view == 0:
                            alive = True
                            break
                    if not alive:
                        continue
            pos = _lookup(tab, bb, kb, child)
            if pos >= 0:
                colour = (tab[pos] >> np.uint32(28)) & np.uint32(3)
                if colour == 1:
                    if cycle_at < 0:
                        for a in range(sp):
                            if fkey[a] == child:
                                cycle_at = a
                                break
                        cycle_path = fkey[:sp].copy()
                    if stop_on_cycle:
                        status = 1
                        break
                continue
            if count >= max_states:
                truncated = True
                continue
            while pos == -1 or (count + 1) * 20 > (np.int64(1) << bb) * BUCKET * 19:
                if bb >= bb_max:
                    break
                tab2, ok = _regrow(tab, bb, kb, inv)
                if not ok:
                    break
                tab = tab2
                bb += 1
                pos = _lookup(tab, bb, kb, child)
                for a in range(sp):
                    fslot[a] = _lookup(tab, bb, kb, fkey[a])
            if pos == -1:
                slot, moved_from, moved_to = _displace(tab, bb, kb, inv, child)
                if slot < 0:
                    truncated = True
                    continue
                for a in range(sp):
                    if fslot[a] == moved_from:
                        fslot[a] = moved_to
                pos = -2 - slot
            q = -2 - pos
            tab[q] = _entry(child, kb, bb, q) | np.uint32(1 << 28)
            count += 1
            pending = child
            pending_slot = q
        else:
            _set_colour(tab, fslot[top], 2)
            sp -= 1
    if status == 1 or status == 2:
        path = fkey[:sp].copy()
    else:
        path = cycle_path
        if cycle_at >= 0:
            status = 1
    return (status, path, cycle_at, count, edges, nfront, truncated, max_depth,
            terminals[:nterm].copy(), dur_checked, dur_bad, dur_key, dur_proc, tab, bb, timed_out)


@njit(cache=True)
def _sample(tab, bb, kb, inv, out_n, seed):
    """Up to ``out_n`` distinct stored keys picked pseudo-randomly."""
    np.random.seed(seed)
    size = tab.shape[0]
    out = np.empty(out_n, dtype=np.int64)
    k = 0
    tries = 0
    while k < out_n and tries < 50 * size:
        tries += 1
        pos = np.random.randint(0, size)
        if tab[pos] == 0:
            continue
        key = _decode(tab, pos, bb, kb, inv)
        dup = False
        for a in range(k):
            if out[a] == key:
                dup = True
                break
        if not dup:
            out[k] = key
            k += 1
    return out[:k]


def _inverses(kb: int) -> np.ndarray:
    mod = 1 << kb
    return np.array(
        [[pow(_C1A % mod, -1, mod), pow(_C1B % mod, -1, mod)],
         [pow(_C2A % mod, -1, mod), pow(_C2B % mod, -1, mod)]], dtype=np.uint64
    )

@njit(cache=True)
def _canon(key, n, m, rb, lb, classes, kind, lview, rview, stale_id, lvl0):
    """Canonical representative of a packed state.

    Registers first: a payload whose view is a strict subset of the view of
    every processor that has not terminated can no longer influence anyone
    and becomes ``stale_id`` (when non-negative); a level no such processor
    can ever consult becomes 0 via ``lvl0``.  Then the local ids of
    interchangeable processors are sorted.
    """
    rmask = (np.int64(1) << rb) - 1
    lmask = (np.int64(1) << lb) - 1
    base = m * rb
    for i in range(m):
        r = (key >> (i * rb)) & rmask
        v = rview[r]
        stale = stale_id >= 0
        dead_level = True
        for q in range(n):
            l = (key >> (base + q * lb)) & lmask
            if kind[l] == 3:
                continue
            lv = lview[l]
            if not ((v & lv) == v and v != lv):
                stale = False
            if (lv & v) == lv:
                dead_level = False
        if stale:
            nr = stale_id
        elif dead_level:
            nr = lvl0[r]
        else:
            continue
        if nr != r:
            key = (key & ~(rmask << (i * rb))) | (nr << (i * rb))
    if classes.shape[0] == 0:
        return key
    for c in range(classes.shape[0]):
        row = classes[c]
        k = 0
        while k < row.shape[0] and row[k] >= 0:
            k += 1
        vals = np.empty(k, dtype=np.int64)
        for a in range(k):
            vals[a] = (key >> (base + row[a] * lb)) & lmask
        vals.sort()
        for a in range(k):
            off = base + row[a] * lb
            key = (key & ~(lmask << off)) | (vals[a] << off)
    return key


@njit(cache=True)
def _successors(key, out, kind, wnext, wpay, rpos, rnext, onext, perm, n, m, rb, lb,
                active, classes, lview, rview, stale_id, lvl0):
    """Fill ``out`` with successor keys.  Returns the count, or -1 at a frontier."""
    rmask = (np.int64(1) << rb) - 1
    lmask = (np.int64(1) << lb) - 1
    base = m * rb
    cnt = 0
    for p in range(n):
        if not active[p]:
            continue
        loff = base + p * lb
        l = (key >> loff) & lmask
        if kind[l] == 4:
            return -1
    for p in range(n):
        if not active[p]:
            continue
        loff = base + p * lb
        l = (key >> loff) & lmask
        k = kind[l]
        cleared = key & ~(lmask << loff)
        if k == 0:
            pay = wpay[l]
            for t in range(m):
                nl = wnext[l, t]
                if nl < 0:
                    continue
                roff = perm[p, t] * rb
                nk = (cleared & ~(rmask << roff)) | (pay << roff) | (nl << loff)
                out[cnt] = _canon(nk, n, m, rb, lb, classes, kind, lview, rview, stale_id, lvl0)
                cnt += 1
        elif k == 1:
            phys = perm[p, rpos[l]]
            r = (key >> (phys * rb)) & rmask
            nl = rnext[l, r]
            out[cnt] = _canon(cleared | (nl << loff), n, m, rb, lb, classes, kind, lview, rview,
                                  stale_id, lvl0)
            cnt += 1
        elif k == 2:
            out[cnt] = _canon(cleared | (onext[l] << loff), n, m, rb, lb, classes, kind, lview,
                                  rview, stale_id, lvl0)
            cnt += 1
    return cnt


@njit(cache=True)
def _durable(key, w, kind, lview, rview, lscan, perm, n, m, rb, lb):
    """``|R_W| > |Q \\ Q_W|`` with ``Q`` all processors, for view bitmask ``w``.

    ``lview`` is either the committed or the pending view per local state.
    """
    rmask = (np.int64(1) << rb) - 1
    lmask = (np.int64(1) << lb) - 1
    base = m * rb
    in_rw = np.zeros(m, dtype=np.bool_)
    n_rw = 0
    for i in range(m):
        rv = rview[(key >> (i * rb)) & rmask]
        if rv & w == w:
            in_rw[i] = True
            n_rw += 1
    outside = 0
    for q in range(n):
        l = (key >> (base + q * lb)) & lmask
        if lview[l] & w == w:
            continue
        sp = lscan[l]
        if sp > 0:
            clean = True
            for t in range(sp - 1):
                if in_rw[perm[q, t]]:
                    clean = False
                    break
            if clean:
                continue
        outside += 1
    return n_rw > outside



ST_DONE, ST_CYCLE, ST_GOAL = 0, 1, 2


# -- Python side ---------------------------------------------------------------


@dataclass
class DfsResult:
    """Outcome of one compiled depth-first run.

    ``path`` is the DFS stack (as packed keys, root first) at a goal hit or
    at the first cycle found; for a cycle ``path[cycle_at:]`` repeats.
    """

    tables: Tables
    status: int
    path: np.ndarray
    cycle_at: int
    n_states: int
    n_edges: int
    n_frontier: int
    truncated: bool
    max_depth: int
    terminals: np.ndarray
    durable_checked: int
    durable_violations: int
    durable_first: Optional[tuple]  # (key, processor)
    table: np.ndarray
    bb: int
    kb: int
    stale_id: int
    active: np.ndarray
    classes: np.ndarray
    seconds: float = 0.0
    signatures: Optional[np.ndarray] = None
    lvl0: Optional[np.ndarray] = None  # level merges in effect for this run
    timed_out: bool = False

    @property
    def system(self) -> System:
        return self.tables.system

    @property
    def exhaustive(self) -> bool:
        return not self.truncated

    def output_signatures(self) -> Optional[set]:
        """Every reachable tuple of per-processor outputs (``None``: not yet).

        A processor poised to output counts as having its output.  Returns
        ``None`` when the output alphabet was too large to track.
        """
        if self.signatures is None or not len(self.signatures):
            return None
        t = self.tables
        base = len(t.outputs) + 1
        out = set()
        for code in np.nonzero(self.signatures)[0]:
            code = int(code)
            row = []
            for _ in range(t.n):
                d = code % base
                code //= base
                row.append(None if d == 0 else t.outputs[d - 1])
            out.add(tuple(row))
        return out

    @property
    def has_cycle(self) -> bool:
        return self.cycle_at >= 0

    def summary(self) -> dict:
        return {
            "states": self.n_states,
            "edges": self.n_edges,
            "terminals": int(len(self.terminals)),
            "frontier": self.n_frontier,
            "exhaustive": self.exhaustive,
            "maxDepth": self.max_depth,
        }

    def terminal_outputs(self) -> set:
        """Distinct output tuples over terminal states."""
        t = self.tables
        if not len(self.terminals):
            return set()
        base = t.m * t.rb
        lmask = (1 << t.lb) - 1
        locs = np.stack([(self.terminals >> (base + j * t.lb)) & lmask for j in range(t.n)], axis=1)
        mach = t.system.machine
        return {
            tuple(mach.output(t.locals[x]) if t.kind[x] == K_DONE else None for x in row)
            for row in np.unique(locs, axis=0)
        }

    def sample_states(self, k: int, seed: int = 0) -> list:
        """Up to ``k`` distinct explored states, picked pseudo-randomly."""
        keys = _sample(self.table, self.bb, self.kb, _inverses(self.kb), k, seed)
        return [self.tables.unpack(int(x)) for x in keys]

    def canon(self, key: int) -> int:
        t = self.tables
        return int(_canon(np.int64(key), t.n, t.m, t.rb, t.lb, self.classes, t.kind, t.lview,
                          t.rview, self.stale_id, t.lvl0 if self.lvl0 is None else self.lvl0))

    def replay(self, keys) -> Trace:
        """Re-derive a key path with the reference model.

        Raises if some compiled step cannot be reproduced.
        """
        system = self.system
        t = self.tables
        keys = [int(x) for x in keys]
        trace = Trace(system, system.initial_state())
        state = trace.initial
        if self.canon(t.pack(state)) != keys[0]:
            raise ModelError("compiled root differs from the model's initial state")
        for nxt in keys[1:]:
            step = self._step_to(state, nxt)
            if step is None:
                raise ModelError("compiled successor not reproduced by the model")
            a, state = step
            trace.record(a, state)
        return trace

    def _step_to(self, state: SystemState, nxt: int):
        system = self.system
        for p in range(1, system.n + 1):
            if not self.active[p - 1]:
                continue
            for a in system.enabled(state, p):
                s2 = system.apply_step(state, a)
                if self.canon(self.tables.pack(s2)) == nxt:
                    return a, s2
        return None

    def lasso_trace(self) -> Trace:
        """The cycle found, as a trace whose ``cycle_start`` marks the loop.

        Under a symmetry quotient the replayed loop may close on a permuted
        state; it is then unrolled until the concrete state recurs.
        """
        if not self.has_cycle:
            raise ModelError("no cycle")
        keys = [int(x) for x in self.path]
        trace = self.replay(keys)
        from .model import digest

        target = digest(trace.states[self.cycle_at])
        state = trace.final
        loop = keys[self.cycle_at:]
        for _ in range(self.system.n * 4 + 1):
            for k, nxt in enumerate(loop):
                a, state = self._step_to(state, nxt)
                trace.record(a, state)
                if k == 0 and digest(state) == target:
                    trace.cycle_start = self.cycle_at
                    return trace
        raise ModelError("symmetric cycle did not close")

    def durable_at(self, state: SystemState, view, literal: bool = False) -> bool:
        t = self.tables
        lv = t.lview if literal else t.lpend
        return bool(_durable(np.int64(t.pack(state)), t.mask(view), t.kind, lv, t.rview,
                             t.lscan, t.perm, t.n, t.m, t.rb, t.lb))


def symmetry_classes(system: System) -> np.ndarray:
    groups: dict = {}
    for i, (inp, perm) in enumerate(zip(system.config.inputs, system.perms)):
        groups.setdefault((inp, perm), []).append(i)
    rows = [g for g in groups.values() if len(g) > 1]
    if not rows:
        return np.zeros((0, 1), dtype=np.int64)
    width = max(len(r) for r in rows)
    arr = np.full((len(rows), width), -1, dtype=np.int64)
    for i, r in enumerate(rows):
        arr[i, :len(r)] = r
    return arr


DEFAULT_MAX_TABLE_BYTES = 2 << 30


def dfs(
    system: System,
    *,
    tables: Optional[Tables] = None,
    frontier_local: Optional[Callable] = None,
    max_states: Optional[int] = None,
    max_table_bytes: int = DEFAULT_MAX_TABLE_BYTES,
    preallocate: bool = False,
    symmetry: bool = False,
    participants=None,
    check_durable: bool = True,
    literal_durable: bool = False,
    forbid_union=None,
    goal_view=None,
    stop_on_cycle: bool = True,
    merge_stale: bool = True,
    merge_levels: bool = True,
    time_limit: Optional[float] = None,
) -> DfsResult:
    """Run the compiled depth-first explorer on ``system``.

    The state table (4 bytes per state) doubles as needed up to
    ``max_table_bytes``, or starts at that size with ``preallocate``; a run
    that outgrows it (or ``max_states``) is marked truncated.

    Stale register payloads are merged (``merge_stale``) only when the memory
    union is not being watched, since merging changes it.  ``merge_levels``
    zeroes register levels no live processor can consult any more.
    ``time_limit`` (seconds) stops the search early; the result is then
    truncated with ``timed_out`` set.
    """
    t0 = time.perf_counter()
    t = tables or compile_tables(system, frontier_local)
    active = np.array(
        [participants is None or p in participants for p in range(1, system.n + 1)], dtype=np.bool_
    )
    classes = symmetry_classes(system) if symmetry else np.zeros((0, 1), dtype=np.int64)
    nsig = (len(t.outputs) + 1) ** t.n
    sigseen = np.zeros(nsig if nsig <= 1 << 24 else 0, dtype=np.uint8)
    stale_id = 0 if merge_stale and t.stale_ok and forbid_union is None else -1
    lvl0 = t.lvl0 if merge_levels else np.arange(len(t.regs), dtype=np.int64)
    root = int(_canon(np.int64(t.pack(system.initial_state())), t.n, t.m, t.rb, t.lb, classes,
                      t.kind, t.lview, t.rview, stale_id, lvl0))
    bb_max = max(1, (max_table_bytes // (4 * BUCKET)).bit_length() - 1)
    # keys are hashed as kb-bit values; keep at least one remainder bit
    kb = max(t.m * t.rb + t.n * t.lb, bb_max + 1)
    bb_min = max(1, kb - MAX_REM_BITS)
    if bb_min > bb_max:
        raise AlphabetTooLarge(f"{kb}-bit states need a table above {max_table_bytes} bytes")
    bb0 = bb_max if preallocate else min(bb_max, max(bb_min, 10))
    res = _dfs(
        np.int64(root), t.kind, t.wnext, t.wpay, t.rpos, t.rnext, t.onext, t.perm, t.n, t.m,
        t.rb, t.lb, active, classes, stale_id, lvl0, t.lview,
        t.lview if literal_durable else t.lpend,
        t.rview, t.lscan, kb, bb0, bb_max, _inverses(kb),
        np.int64(max_states if max_states is not None else 1 << 62), check_durable,
        np.int64(-1 if forbid_union is None else t.mask(forbid_union)),
        np.int64(-1 if goal_view is None else t.mask(goal_view)),
        stop_on_cycle, t.lout, len(t.outputs), sigseen,
        float(t0 + time_limit) if time_limit else 0.0,
    )
    (status, path, cycle_at, count, edges, nfront, truncated, max_depth, terminals,
     dchk, dbad, dkey, dproc, table, bb, timed_out) = res
    out = DfsResult(
        t, int(status), path, int(cycle_at), int(count), int(edges), int(nfront), bool(truncated),
        int(max_depth), terminals, int(dchk), int(dbad),
        (int(dkey), int(dproc) + 1) if dproc >= 0 else None, table, int(bb), kb, stale_id, active,
        classes,
    )
    out.signatures = sigseen
    out.lvl0 = lvl0
    out.timed_out = bool(timed_out)
    out.seconds = time.perf_counter() - t0
    return out
