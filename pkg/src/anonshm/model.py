"""Fully-anonymous shared memory: registers, wiring permutations, atomic steps.

A system is ``N`` processors running the same machine over ``M`` registers.
Processor ``p`` addresses registers through a private permutation: its local
index ``i`` denotes physical register ``perm[p][i - 1]``.  Indices, processor
numbers and register numbers are all 1-based, as in the model.

States are immutable; :meth:`System.apply_step` returns a successor.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional, Sequence

ALGORITHMS = ("writescan", "snapshot", "renaming", "consensus")

WRITE = "write"
READ = "read"
OUTPUT = "output"


class ModelError(ValueError):
    """Raised for malformed configurations and illegal steps."""


class Payload(NamedTuple):
    """Register contents.  ``level`` is ``None`` for the write-scan loop."""

    view: frozenset
    level: Optional[int] = None


class Action(NamedTuple):
    actor: int
    kind: str
    local: int = 0  # local register index for reads and writes, else 0
    value: Any = None  # written payload, or the output value


def check_permutation(perm: Sequence[int], m: int) -> tuple[int, ...]:
    perm = tuple(int(x) for x in perm)
    if len(perm) != m or sorted(perm) != list(range(1, m + 1)):
        raise ModelError(f"not a permutation of 1..{m}: {list(perm)}")
    return perm


def resolve(perm: Sequence[int], local: int) -> int:
    """Physical register reached through local index ``local``."""
    if not 1 <= local <= len(perm):
        raise ModelError(f"local index {local} out of range 1..{len(perm)}")
    return perm[local - 1]


def random_perms(n: int, m: int, seed: int) -> tuple[tuple[int, ...], ...]:
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        p = list(range(1, m + 1))
        rng.shuffle(p)
        out.append(tuple(p))
    return tuple(out)


def identity_perms(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(range(1, m + 1)) for _ in range(n))


def normalize_perms(perms: Sequence[Sequence[int]]) -> tuple[tuple[int, ...], ...]:
    """Relabel physical registers so processor 1 is wired by the identity.

    All registers start equal, so a global relabeling is unobservable.
    """
    first = perms[0]
    relabel = {phys: i + 1 for i, phys in enumerate(first)}
    return tuple(tuple(relabel[x] for x in p) for p in perms)


@dataclass(frozen=True)
class Config:
    n_processors: int
    n_registers: int
    algorithm: str
    inputs: tuple
    perms: Optional[tuple] = None
    perm_seed: Optional[int] = None
    schedule: Optional[dict] = None
    level_rule: str = "equal"
    vacuous_lead: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.perms is not None:
            object.__setattr__(self, "perms", tuple(tuple(p) for p in self.perms))
        self.validate()

    def validate(self) -> None:
        n, m = self.n_processors, self.n_registers
        if n <= 1:
            raise ModelError(f"need N > 1 processors, got {n}")
        if m <= 0:
            raise ModelError(f"need M > 0 registers, got {m}")
        if self.algorithm not in ALGORITHMS:
            raise ModelError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm != "writescan" and m != n:
            raise ModelError(f"{self.algorithm} uses exactly N registers (N={n}, M={m})")
        if len(self.inputs) != n:
            raise ModelError(f"expected {n} inputs, got {len(self.inputs)}")
        if self.algorithm != "consensus":
            for x in self.inputs:
                if not isinstance(x, int) or isinstance(x, bool) or x < 1:
                    raise ModelError(f"group ids are positive integers, got {x!r}")
        if self.perms is not None:
            if len(self.perms) != n:
                raise ModelError(f"expected {n} permutations, got {len(self.perms)}")
            for p in self.perms:
                check_permutation(p, m)
        if self.level_rule not in ("equal", "contain"):
            raise ModelError(f"unknown level rule {self.level_rule!r}")

    def resolved_perms(self) -> tuple[tuple[int, ...], ...]:
        if self.perms is not None:
            return self.perms
        if self.perm_seed is not None:
            return random_perms(self.n_processors, self.n_registers, self.perm_seed)
        return identity_perms(self.n_processors, self.n_registers)

    def to_json(self) -> dict:
        d = {
            "nProcessors": self.n_processors,
            "nRegisters": self.n_registers,
            "algorithm": self.algorithm,
            "inputs": list(self.inputs),
            "perms": [list(p) for p in self.resolved_perms()],
        }
        if self.perm_seed is not None:
            d["permSeed"] = self.perm_seed
        if self.schedule is not None:
            d["schedule"] = self.schedule
        if self.level_rule != "equal":
            d["levelRule"] = self.level_rule
        if self.vacuous_lead:
            d["vacuousLead"] = True
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Config":
        try:
            return cls(
                n_processors=d["nProcessors"],
                n_registers=d.get("nRegisters", d["nProcessors"]),
                algorithm=d["algorithm"],
                inputs=tuple(d["inputs"]),
                perms=d.get("perms"),
                perm_seed=d.get("permSeed"),
                schedule=d.get("schedule"),
                level_rule=d.get("levelRule", "equal"),
                vacuous_lead=d.get("vacuousLead", False),
            )
        except KeyError as e:
            raise ModelError(f"config is missing field {e.args[0]!r}") from None


@dataclass(frozen=True, slots=True)
class SystemState:
    """One global state.

    ``writers[r]`` is the processor that last wrote physical register ``r + 1``
    (0 if never written).  It is simulator bookkeeping that machines never see.
    """

    registers: tuple
    writers: tuple
    procs: tuple
    outputs: tuple

    def key(self, writers: bool = False) -> tuple:
        """Hashable identity used for deduplication.

        Outputs are a function of the local states, so they are left out.
        """
        if writers:
            return (self.registers, self.procs, self.writers)
        return (self.registers, self.procs)

    def memory_union(self) -> frozenset:
        u: frozenset = frozenset()
        for reg in self.registers:
            u = u | reg.view
        return u


def canon(obj: Any) -> Any:
    """JSON-ready canonical form: sets become ascending lists."""
    if isinstance(obj, (frozenset, set)):
        return [canon(x) for x in sorted(obj)]
    if isinstance(obj, tuple) and hasattr(obj, "_fields"):
        return {k: canon(v) for k, v in zip(obj._fields, obj)}
    if isinstance(obj, (tuple, list)):
        return [canon(x) for x in obj]
    if isinstance(obj, dict):
        return {k: canon(v) for k, v in obj.items()}
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(canon(obj), separators=(",", ":"))


def state_json(state: SystemState) -> dict:
    return {
        "registers": canon(state.registers),
        "writers": list(state.writers),
        "procs": canon(state.procs),
        "outputs": canon(state.outputs),
    }


def digest(state: SystemState) -> str:
    blob = json.dumps(state_json(state), separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class System:
    """A configuration bound to its machine and wiring."""

    config: Config
    machine: Any
    perms: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.config.n_processors

    @property
    def m(self) -> int:
        return self.config.n_registers

    def initial_state(self) -> SystemState:
        n, m = self.n, self.m
        procs = tuple(self.machine.initial(x) for x in self.config.inputs)
        return SystemState(
            registers=(self.machine.default_payload(),) * m,
            writers=(0,) * m,
            procs=procs,
            outputs=(None,) * n,
        )

    def physical(self, actor: int, local: int) -> int:
        return resolve(self.perms[actor - 1], local)

    def enabled(self, state: SystemState, actor: int) -> list[Action]:
        """Every action ``actor`` may take next (several only for write picks)."""
        mach = self.machine
        loc = state.procs[actor - 1]
        kind = mach.next_kind(loc)
        if kind == WRITE:
            payload = mach.payload(loc)
            return [Action(actor, WRITE, i, payload) for i in mach.write_targets(loc)]
        if kind == READ:
            return [Action(actor, READ, mach.read_target(loc))]
        if kind == OUTPUT:
            return [Action(actor, OUTPUT, 0, mach.output(loc))]
        return []

    def default_action(self, state: SystemState, actor: int) -> Optional[Action]:
        acts = self.enabled(state, actor)
        return acts[0] if acts else None

    def live_actors(self, state: SystemState) -> list[int]:
        mach = self.machine
        return [p for p in range(1, self.n + 1) if mach.next_kind(state.procs[p - 1]) is not None]

    def apply_step(self, state: SystemState, action: Action) -> SystemState:
        """Atomically execute ``action``; raises :class:`ModelError` if disabled."""
        mach = self.machine
        p = action.actor
        if not 1 <= p <= self.n:
            raise ModelError(f"no processor {p}")
        loc = state.procs[p - 1]
        kind = mach.next_kind(loc)
        if kind is None:
            raise ModelError(f"processor {p} has terminated")
        if kind != action.kind:
            raise ModelError(f"processor {p} is poised to {kind}, not {action.kind}")
        procs = list(state.procs)
        if kind == WRITE:
            if action.local not in mach.write_targets(loc):
                raise ModelError(
                    f"processor {p} already wrote local register {action.local} this round"
                )
            payload = mach.payload(loc)
            if action.value is not None and action.value != payload:
                raise ModelError(f"processor {p} cannot write {action.value!r}")
            r = resolve(self.perms[p - 1], action.local)
            regs = list(state.registers)
            regs[r - 1] = payload
            writers = list(state.writers)
            writers[r - 1] = p
            procs[p - 1] = mach.on_write(loc, action.local)
            return SystemState(tuple(regs), tuple(writers), tuple(procs), state.outputs)
        if kind == READ:
            want = mach.read_target(loc)
            if action.local not in (0, want):
                raise ModelError(f"processor {p} reads local register {want}, not {action.local}")
            r = resolve(self.perms[p - 1], want)
            procs[p - 1] = mach.on_read(loc, state.registers[r - 1])
            return SystemState(state.registers, state.writers, tuple(procs), state.outputs)
        out = mach.output(loc)
        procs[p - 1] = mach.on_output(loc)
        outputs = list(state.outputs)
        outputs[p - 1] = out
        return SystemState(state.registers, state.writers, tuple(procs), tuple(outputs))

    def terminated(self, state: SystemState, actor: int) -> bool:
        return self.machine.next_kind(state.procs[actor - 1]) is None

    def participated(self, state: SystemState, actor: int) -> bool:
        return state.procs[actor - 1] != self.machine.initial(self.config.inputs[actor - 1])


def make_system(config: Config, symmetry: bool = False) -> System:
    from .algorithms import make_machine

    perms = config.resolved_perms()
    if symmetry:
        perms = normalize_perms(perms)
    return System(config=config, machine=make_machine(config), perms=perms)


def init_system(config: Config) -> tuple[System, SystemState]:
    system = make_system(config)
    return system, system.initial_state()


class TraceStep(NamedTuple):
    t: int
    action: Action
    physical: int
    digest: str


@dataclass
class Trace:
    """A recorded execution.  ``cycle_start`` marks a lasso: the state at that
    time equals the final state."""

    system: System
    initial: SystemState
    steps: list = field(default_factory=list)
    states: list = field(default_factory=list)  # states[t] is the state after t steps
    cycle_start: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.states:
            self.states.append(self.initial)

    @property
    def final(self) -> SystemState:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.steps)

    def record(self, action: Action, state: SystemState) -> None:
        phys = self.system.physical(action.actor, action.local) if action.local else 0
        self.steps.append(TraceStep(len(self.steps) + 1, action, phys, digest(state)))
        self.states.append(state)

    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    def verify(self) -> bool:
        """Replay from the initial state and compare every digest."""
        state = self.initial
        for step in self.steps:
            state = self.system.apply_step(state, step.action)
            if digest(state) != step.digest:
                return False
        if self.cycle_start is not None:
            return digest(self.states[self.cycle_start]) == digest(self.final)
        return True

    def to_jsonl(self) -> str:
        head = {
            "config": self.system.config.to_json(),
            "initial": state_json(self.initial),
            "digest": digest(self.initial),
        }
        if self.cycle_start is not None:
            head["cycleStart"] = self.cycle_start
        lines = [json.dumps(head, separators=(",", ":"))]
        for s in self.steps:
            act = {"kind": s.action.kind}
            if s.action.kind != OUTPUT:
                act["local"] = s.action.local
                act["physical"] = s.physical
            if s.action.kind == WRITE:
                act["payload"] = canon(s.action.value)
            if s.action.kind == OUTPUT:
                act["output"] = canon(s.action.value)
            line = {"t": s.t, "actor": s.action.actor, "action": act, "digest": s.digest}
            lines.append(json.dumps(line, separators=(",", ":")))
        return "\n".join(lines) + "\n"


def _freeze(x: Any) -> Any:
    if isinstance(x, list):
        return tuple(_freeze(v) for v in x)
    return x


def trace_from_jsonl(text: str) -> Trace:
    """Rebuild a trace from its JSON Lines form by replaying the actions."""
    lines = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not lines:
        raise ModelError("empty trace file")
    config = Config.from_json(lines[0]["config"])
    system = make_system(config)
    trace = Trace(system, system.initial_state())
    if "cycleStart" in lines[0]:
        trace.cycle_start = lines[0]["cycleStart"]
    state = trace.initial
    for line in lines[1:]:
        a = line["action"]
        action = Action(line["actor"], a["kind"], a.get("local", 0))
        if action.kind == WRITE:
            action = action._replace(value=system.machine.payload(state.procs[action.actor - 1]))
        elif action.kind == OUTPUT:
            action = action._replace(value=system.machine.output(state.procs[action.actor - 1]))
        state = system.apply_step(state, action)
        trace.record(action, state)
        if trace.steps[-1].digest != line["digest"]:
            raise ModelError(f"trace diverges at t={line['t']}")
    return trace
