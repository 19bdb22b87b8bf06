"""Command-line entry point: simulate, replay, explore, check.

Every command prints a JSON summary on stdout (a table with ``--pretty``).
Exit status: 0 when every check holds, 1 on a violation, 2 on an error
(bad config, unreadable file, diverging script), 3 when a check could not
be decided (partial exploration).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import checkers as ck
from .explore import HOLDS, INDETERMINATE, VIOLATED
from .golden import FIG2_LOOP, FIG2_ROWS
from .invariants import trace_invariants
from .model import Config, ModelError, Trace, canon, digest, dumps, trace_from_jsonl
from .schedule import (
    Lasso,
    ScriptError,
    build_covering_demo,
    covering_holds,
    fig2_rows,
    fig2_script,
    load_script,
    replay_script,
    run_random,
)

EXIT_OK, EXIT_VIOLATED, EXIT_ERROR, EXIT_UNDECIDED = 0, 1, 2, 3


class CliError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror or e}") from None


def load_config(path: str) -> Config:
    text = _read(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return Config.from_json(raw)


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e.strerror or e}") from None


def exit_code(verdicts) -> int:
    kinds = {v["verdict"] for v in verdicts}
    if VIOLATED in kinds:
        return EXIT_VIOLATED
    if INDETERMINATE in kinds:
        return EXIT_UNDECIDED
    return EXIT_OK


# -- checks applied to a single trace ---------------------------------------------


def trace_verdicts(trace: Trace) -> list:
    """Every checker that applies to one recorded execution."""
    cfg = trace.system.config
    out = trace_invariants(trace)
    outputs = {p: o for p, o in enumerate(trace.final.outputs, 1) if o is not None}
    groups = {p: cfg.inputs[p - 1] for p in range(1, cfg.n_processors + 1)}
    a = ck.OutputAssignment(outputs, groups)
    if cfg.algorithm == "snapshot":
        if len(set(cfg.inputs)) == len(cfg.inputs):
            v = ck.check_snapshot_task(a.pairs())
            out.append(ck.Verdict("containment", v.verdict, v.witness, v.detail))
        if outputs:
            out.append(ck.check_group_solvability(ck.check_snapshot_task, a))
    elif cfg.algorithm == "renaming":
        out.append(ck.check_cross_group_names(a.pairs()))
        if outputs:
            m = len(set(cfg.inputs))
            out.append(ck.check_group_solvability(lambda s: ck.check_renaming_task(s, m), a))
    elif cfg.algorithm == "consensus":
        out.append(ck.check_consensus_task(a.pairs(), cfg.inputs))
    if cfg.algorithm in ("snapshot", "renaming"):
        out.append(ck.durable_at_outputs(trace))
    if trace.cycle_start is not None and cfg.algorithm == "writescan":
        lasso = Lasso.from_trace(trace)
        if lasso.flagged:
            out.append(ck.Verdict("single-source", INDETERMINATE, detail="lasso never stabilizes"))
        else:
            out.append(ck.check_single_source(ck.stable_view_graph(lasso)))
    return [v.to_json() for v in out]


def _run_summary(command: str, trace: Trace, verdicts: list, **extra) -> dict:
    cfg = trace.system.config
    live = trace.system.live_actors(trace.final)
    d = {
        "command": command,
        "config": cfg.to_json(),
        **extra,
        "steps": len(trace.steps),
        "terminated": not live,
        "outputs": canon(list(trace.final.outputs)),
        "finalDigest": digest(trace.final),
        "verdicts": verdicts,
    }
    if cfg.algorithm == "writescan":
        d["note"] = "write-scan never terminates by design; the run stops at --max-steps"
    elif live:
        d["note"] = f"processors {live} had not terminated when the step budget ran out"
    d["ok"] = exit_code(verdicts) == EXIT_OK
    return d


# -- commands -----------------------------------------------------------------------


def cmd_simulate(args) -> tuple:
    cfg = load_config(args.config)
    trace = run_random(cfg, args.seed, args.max_steps)
    verdicts = trace_verdicts(trace)
    if args.trace:
        _write(args.trace, trace.to_jsonl())
    summary = _run_summary("simulate", trace, verdicts, seed=args.seed, maxSteps=args.max_steps)
    return summary, exit_code(verdicts)


def replay_fig2(dot: Optional[str] = None) -> dict:
    fig = fig2_script()
    trace = replay_script(fig.config, fig.script)
    got = fig2_rows(trace, fig)
    rows = []
    first_bad = None
    for i, (want, have) in enumerate(zip(FIG2_ROWS, got), 1):
        same = dumps(list(want)) == dumps([have[0], have[1]])
        rows.append({"row": i, "match": same})
        if not same and first_bad is None:
            first_bad = {"row": i, "expected": list(want), "got": [have[0], have[1]]}
    matched = sum(r["match"] for r in rows)
    a, b = (fig.row_ends[k - 1] for k in FIG2_LOOP)
    loop = digest(trace.states[a]) == digest(trace.states[b])
    verdicts = [
        ck.Verdict("golden-rows", HOLDS if matched == len(FIG2_ROWS) else VIOLATED, first_bad,
                   f"{matched}/{len(FIG2_ROWS)} rows match").to_json(),
        ck.Verdict("lasso", HOLDS if loop else VIOLATED,
                   {"rows": list(FIG2_LOOP), "t": [a, b]},
                   f"state after row {FIG2_LOOP[1]} equals state after row {FIG2_LOOP[0]}").to_json(),
    ]
    cyc = Trace(trace.system, trace.initial, trace.steps[:b], trace.states[: b + 1])
    cyc.cycle_start = a
    lasso = Lasso.from_trace(cyc)
    graph = ck.stable_view_graph(lasso)
    verdicts.append(ck.check_single_source(graph).to_json())
    if dot:
        _write(dot, graph.to_dot())
    return {
        "command": "replay",
        "builtin": "fig2",
        "config": fig.config.to_json(),
        "steps": b,
        "rowsMatched": f"{matched}/{len(FIG2_ROWS)}",
        "rows": rows,
        "cycle": {"start": a, "length": b - a, "rowStart": FIG2_LOOP[0], "rowEnd": FIG2_LOOP[1]},
        "stableViewGraph": graph.to_json(),
        "verdicts": verdicts,
    }


def replay_covering(n: int) -> dict:
    demo = build_covering_demo(n)
    trace = replay_script(demo.config, demo.script)
    victim_input = demo.config.inputs[demo.victim - 1]
    wrote = any(s.action.actor == demo.victim and s.action.kind == "write" for s in trace.steps)
    holds = wrote and covering_holds(trace, victim_input)
    v = ck.Verdict("covering", HOLDS if holds else VIOLATED,
                   {"registers": canon([r.view for r in trace.final.registers])},
                   f"no register holds input {victim_input} of p{demo.victim} after its writes")
    return {
        "command": "replay",
        "builtin": f"covering:{n}",
        "config": demo.config.to_json(),
        "steps": len(trace.steps),
        "verdicts": [v.to_json()],
    }


def _load_script_file(path: str, config_path: Optional[str]) -> tuple:
    text = _read(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON: {e}") from None
    if isinstance(raw, dict) and "script" in raw:
        if "config" not in raw and not config_path:
            raise CliError(f"{path}: no config given")
        cfg = load_config(config_path) if config_path else Config.from_json(raw["config"])
        return cfg, load_script(json.dumps(raw["script"]))
    if not config_path:
        raise CliError("a bare script needs --config")
    return load_config(config_path), load_script(text)


def cmd_replay(args) -> tuple:
    if args.builtin:
        if args.builtin == "fig2":
            summary = replay_fig2(args.dot)
        elif args.builtin.startswith("covering:"):
            try:
                n = int(args.builtin.split(":", 1)[1])
            except ValueError:
                raise CliError(f"bad builtin {args.builtin!r}") from None
            summary = replay_covering(n)
        else:
            raise CliError(f"unknown builtin {args.builtin!r} (fig2 or covering:N)")
    else:
        if not args.script:
            raise CliError("give a script path or --builtin")
        cfg, script = _load_script_file(args.script, args.config)
        try:
            trace = replay_script(cfg, script)
        except ScriptError as e:
            summary = {"command": "replay", "script": args.script, "config": cfg.to_json(),
                       "divergence": {"step": e.index, "reason": str(e)},
                       "verdicts": [{"check": "script", "verdict": VIOLATED, "detail": str(e)}],
                       "ok": False}
            return summary, EXIT_ERROR
        verdicts = trace_verdicts(trace)
        if args.trace:
            _write(args.trace, trace.to_jsonl())
        summary = _run_summary("replay", trace, verdicts, script=args.script)
        if trace.cycle_start is not None:
            summary["cycleStart"] = trace.cycle_start
    code = exit_code(summary["verdicts"])
    summary["ok"] = code == EXIT_OK
    return summary, code


def cmd_explore(args) -> tuple:
    from .verify import explore_config

    cfg = load_config(args.config)
    if cfg.algorithm == "consensus" and args.ts_cap is None and args.depth is None:
        raise CliError("consensus has an infinite state space: give --ts-cap or --depth")
    engine = "python" if args.dot else args.engine
    rep = explore_config(
        cfg, depth=args.depth, ts_cap=args.ts_cap, symmetry=args.symmetry,
        max_states=args.max_states, engine=engine, witness=args.witness,
        solo_samples=args.solo_samples, solo_bound=args.solo_bound, seed=args.seed,
        time_limit=args.time_limit,
    )
    if args.dot:
        _write(args.dot, rep.graph.to_dot())
    summary = rep.to_json(timing=args.timing)
    return summary, exit_code(summary["verdicts"])


def cmd_check(args) -> tuple:
    trace = trace_from_jsonl(_read(args.trace))
    verdicts = trace_verdicts(trace)
    atom = ck.check_atomicity(trace).to_json() if trace.system.config.algorithm == "snapshot" else None
    summary = _run_summary("check", trace, verdicts, tracePath=args.trace)
    if atom is not None:
        summary["atomicSnapshot"] = atom  # informational: the algorithm is not atomic
    return summary, exit_code(verdicts)


# -- output -------------------------------------------------------------------------


def render_pretty(summary: dict) -> str:
    lines = []
    skip = {"verdicts", "config", "rows", "stableViewGraph"}
    cfg = summary.get("config")
    if cfg:
        lines.append(f"{'config':<12}{cfg['algorithm']} N={cfg['nProcessors']} M={cfg['nRegisters']}"
                     f" inputs={cfg['inputs']} perms={cfg['perms']}")
    kw = max([len(k) for k in summary if k not in skip] + [10]) + 2
    for k, v in summary.items():
        if k in skip:
            continue
        if isinstance(v, (dict, list)):
            v = json.dumps(v, separators=(",", ":"))
            if len(v) > 100:
                v = v[:97] + "..."
        lines.append(f"{k:<{kw}}{v}")
    vs = summary.get("verdicts", [])
    if vs:
        width = max(len(v["check"]) for v in vs)
        lines.append("")
        for v in vs:
            lines.append(f"  {v['check']:<{width}}  {v['verdict']:<13}  {v.get('detail', '')}".rstrip())
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anonshm", description=__doc__.splitlines()[0])
    ap.add_argument("--pretty", action="store_true", help="human-readable table instead of JSON")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pretty", action="store_true", default=argparse.SUPPRESS,
                        help="human-readable table instead of JSON")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common], help="one seeded random run")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=int, default=10_000)
    sp.add_argument("--trace", help="write the trace as JSON Lines")
    sp.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("replay", parents=[common], help="replay a builtin or scripted schedule")
    rp.add_argument("script", nargs="?")
    rp.add_argument("--builtin", help="fig2 or covering:N")
    rp.add_argument("--config", help="config for a bare script")
    rp.add_argument("--trace", help="write the trace as JSON Lines")
    rp.add_argument("--dot", help="write the stable-view graph (fig2) as DOT")
    rp.set_defaults(func=cmd_replay)

    ep = sub.add_parser("explore", parents=[common], help="exhaustive exploration and checks")
    ep.add_argument("config")
    ep.add_argument("--depth", type=int, help="depth bound (python engine)")
    ep.add_argument("--ts-cap", type=int, help="leave states with a timestamp above this unexpanded")
    ep.add_argument("--symmetry", action="store_true",
                    help="quotient processors sharing input and wiring")
    ep.add_argument("--max-states", type=int)
    ep.add_argument("--time-limit", type=float, help="stop the compiled search after this many seconds")
    ep.add_argument("--engine", choices=("auto", "compiled", "python"), default="auto")
    ep.add_argument("--witness", action="store_true", help="search for a non-atomic snapshot output")
    ep.add_argument("--solo-samples", type=int, default=200, help="consensus: sampled states")
    ep.add_argument("--solo-bound", type=int, default=10, help="consensus: invocations per solo run")
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--timing", action="store_true", help="include wall-clock time (not reproducible)")
    ep.add_argument("--dot", help="write the state graph as DOT (python engine)")
    ep.set_defaults(func=cmd_explore)

    cp = sub.add_parser("check", parents=[common], help="re-verify a recorded trace and run its checkers")
    cp.add_argument("trace")
    cp.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary, code = args.func(args)
    except (CliError, ModelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.pretty:
        sys.stdout.write(render_pretty(summary))
    else:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
