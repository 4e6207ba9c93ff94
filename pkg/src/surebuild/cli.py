"""Command-line front end for the build engine.

All reports are machine-readable files; a short human summary goes to stderr.
Exit codes: 0 success (valid build / theorem pass), 2 invalid build or
counterexample, 1 error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import __version__
from .descfile import (
    apply_proposal,
    dumps_description,
    load_configuration,
    save_state,
)
from .errors import BuildError, DescriptionError, LimitExceeded
from .executor import (
    durations_from_trace,
    run_interleaved,
    run_parallel,
    run_sequential,
    trace_lines,
    trace_skeletons,
)
from .graph import check_validity, list_schedule
from .granularity import dumps_proposal, loads_proposal, suggest_partitions, usage_stats
from .inference import (
    dumps_db,
    edges_from_text,
    edges_to_text,
    infer_until_valid,
    loads_db,
    make_snapshot,
    prune_inferred,
    run_incremental,
)
from .oracle import theorem_check
from .report import write_report
from .corpus import gen_description, gen_state_json
from .txn import abort_log_lines, predicted_sets, random_policy, run_locking, run_mvto


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    config = load_configuration(Path(args.description), Path(args.state))
    if getattr(args, "edges", None):
        edges_path = Path(args.edges)
        if edges_path.exists():
            inferred = edges_from_text(edges_path.read_text(encoding="utf-8"), str(edges_path))
            config = config.with_edges([(e.src, e.dst) for e in inferred])
    return config


def _write_build_outputs(out: Path, trace, report=None) -> None:
    save_state(trace.final_state, out / "state.json")
    (out / "trace.txt").write_text(trace_lines(trace), encoding="utf-8")
    (out / "steps.txt").write_text("".join(f"{t}\n" for t in trace.steps), encoding="utf-8")
    if report is not None:
        (out / "report.json").write_text(
            json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def cmd_build(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    policy = random_policy(random.Random(args.seed)) if args.seed is not None else None

    if args.mode == "serial":
        trace = run_sequential(config)
        report = check_validity(config.graph, trace.per_task)
    elif args.mode == "parallel":
        trace, report = run_parallel(config, args.workers)
    elif args.mode == "interleaved":
        if not args.choice:
            raise DescriptionError("--choice FILE is required for interleaved mode")
        choice = [
            line.strip()
            for line in Path(args.choice).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        trace = run_interleaved(config, choice)
        report = check_validity(config.graph, trace.per_task)
    elif args.mode in ("locking", "mvto"):
        seq = run_sequential(config)
        report = check_validity(config.graph, seq.per_task)
        if args.mode == "locking":
            predicted = predicted_sets(seq) if args.predicted == "auto" else {}
            outcome = run_locking(config, predicted, policy=policy)
        else:
            outcome = run_mvto(config, policy=policy)
        save_state(outcome.final_state, out / "state.json")
        (out / "abort_log.txt").write_text(abort_log_lines(outcome), encoding="utf-8")
        (out / "report.json").write_text(
            json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        matches = outcome.final_state.digest() == seq.final_state.digest()
        _say(
            f"{args.mode}: verdict {report.verdict}, {len(outcome.abort_log)} abort(s), "
            f"{outcome.total_restarts} restart(s), sequential match: {matches}"
        )
        return 0 if report.valid else 2
    else:  # pragma: no cover
        raise DescriptionError(f"unknown mode {args.mode!r}")

    db = make_snapshot(config, trace.final_state)
    (out / "db.json").write_text(dumps_db(db), encoding="utf-8")
    _write_build_outputs(out, trace, report)
    _say(f"{args.mode}: verdict {report.verdict}, {len(trace.events)} event(s), outputs in {out}")
    if not report.valid:
        for (a, b), resources in sorted(report.violations.items()):
            _say(f"  conflict between {a} and {b} on {', '.join(sorted(resources))}")
        return 2
    return 0


def cmd_incremental(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    db = loads_db(Path(args.db).read_text(encoding="utf-8"), args.db)
    prior = trace_skeletons(Path(args.trace).read_text(encoding="utf-8"), config.graph.tasks)
    current = config.initial
    result = run_incremental(config, db, prior, current)
    save_state(result.final_state, out / "state.json")
    (out / "db.json").write_text(dumps_db(result.db), encoding="utf-8")
    (out / "trace.txt").write_text(trace_lines(result.trace), encoding="utf-8")
    (out / "incremental.json").write_text(
        json.dumps(
            {
                "changed_resources": sorted(result.d_writes),
                "changed_tasks": sorted(result.changed_tasks),
                "executed": list(result.executed),
                "skipped": list(result.skipped),
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    _say(
        f"incremental: executed {list(result.executed)}, skipped {list(result.skipped)}, "
        f"outputs in {out}"
    )
    return 0


def cmd_infer(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    augmented, iterations, added = infer_until_valid(config)
    existing = ()
    edges_path = Path(args.edges) if args.edges else out / "edges.json"
    if edges_path.exists():
        existing = edges_from_text(edges_path.read_text(encoding="utf-8"), str(edges_path))
    merged = {(e.src, e.dst): e for e in existing}
    for e in added:
        merged[(e.src, e.dst)] = e
    edges_path.parent.mkdir(parents=True, exist_ok=True)
    edges_path.write_text(edges_to_text(merged.values()), encoding="utf-8")
    if added:
        for e in added:
            _say(f"inferred {e.src} -> {e.dst} (conflict on {', '.join(sorted(e.conflict))})")
    else:
        _say("no changes")
    _say(f"{iterations} iteration(s); edges written to {edges_path}")
    return 0


def cmd_prune(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    before = config.graph.inferred_edges()
    rebuilt, added = prune_inferred(config)
    after = rebuilt.graph.inferred_edges()
    edges_path = Path(args.edges) if args.edges else out / "edges.json"
    kept = [e for e in added]
    edges_path.parent.mkdir(parents=True, exist_ok=True)
    edges_path.write_text(edges_to_text(kept), encoding="utf-8")
    dropped = sorted(before - after)
    readded = sorted(after)
    _say(f"pruned {len(before)} inferred edge(s); {len(readded)} reproduced")
    for e in dropped:
        _say(f"  dropped {e[0]} -> {e[1]}")
    _say(f"edges written to {edges_path}")
    return 0


def cmd_verify(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    limits = {}
    if args.limits:
        try:
            t, e, i = (int(x) for x in args.limits.split(","))
        except ValueError as exc:
            raise DescriptionError("--limits wants three integers: tasks,events,interleavings") from exc
        limits = {"max_tasks": t, "max_events_per_task": e, "max_interleavings": i}
    result = theorem_check(config, **limits)
    enum = result.enumeration
    (out / "verify.json").write_text(
        json.dumps(
            {
                "passed": result.passed,
                "reason": result.reason,
                "builds": enum.build_count if enum else None,
                "verdicts": sorted(enum.verdicts) if enum else None,
                "distinct_final_states": len(enum.all_digests) if enum else None,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    if result.passed:
        _say(f"pass: {result.reason} ({enum.build_count} build(s) enumerated)")
        return 0
    a, b = result.counterexample
    (out / "counterexample_a.txt").write_text("".join(f"{t}\n" for t in a), encoding="utf-8")
    (out / "counterexample_b.txt").write_text("".join(f"{t}\n" for t in b), encoding="utf-8")
    _say(f"counterexample: {result.reason}; interleavings written to {out}")
    return 2


def cmd_report(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    trace = run_sequential(config)
    report = check_validity(config.graph, trace.per_task)
    durations = durations_from_trace(trace)
    schedule = list_schedule(config.graph, args.workers, durations)
    serial_time = float(sum(durations.values()))
    paths = write_report(config, out, args.workers, durations, schedule, serial_time, report)
    _say(
        f"report: verdict {report.verdict}, makespan {schedule.makespan:g} "
        f"vs serial {serial_time:g} on {args.workers} workers"
    )
    for key, path in sorted(paths.items()):
        _say(f"  {key}: {path}")
    return 0


def cmd_suggest(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    trace = run_sequential(config)
    stats = usage_stats([trace])
    proposal = suggest_partitions(stats, config.graph.tasks)
    path = out / "proposal.json"
    path.write_text(dumps_proposal(proposal), encoding="utf-8")
    _say(
        f"suggest: {len(proposal.contractions)} contraction group(s), "
        f"{len(set(proposal.task_partition.values()))} task partition(s); written to {path}"
    )
    return 0


def cmd_apply(args) -> int:
    config = _load(args)
    proposal = loads_proposal(Path(args.proposal).read_text(encoding="utf-8"), args.proposal)
    merged = apply_proposal(config, proposal)
    out_path = Path(args.out_desc)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(dumps_description(merged), encoding="utf-8")
    _say(f"applied proposal; new description written to {out_path}")
    return 0


def cmd_demo(args) -> int:
    target = Path(args.dir)
    target.mkdir(parents=True, exist_ok=True)
    desc = gen_description(with_edge=args.with_edge)
    (target / "build.json").write_text(json.dumps(desc, indent=2) + "\n", encoding="utf-8")
    (target / "state.json").write_text(json.dumps(gen_state_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _say(f"demo description and state written to {target}")
    return 0


def _add_io_args(p, state: bool = True, edges: bool = True, out: bool = True):
    p.add_argument("description", help="build description file (JSON)")
    if state:
        p.add_argument("--state", required=True, help="initial shared state file (JSON)")
    if edges:
        p.add_argument("--edges", help="inferred-edges sidecar to load (and update)")
    if out:
        p.add_argument("--out", default="out", help="output directory (default: ./out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surebuild",
        description="Reliable incremental, parallel builds over a simulated shared state.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="run a build in one of the executor modes")
    _add_io_args(p)
    p.add_argument("--mode", default="serial", choices=["serial", "parallel", "locking", "mvto", "interleaved"])
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--choice", help="interleaving file (one task per line) for interleaved mode")
    p.add_argument("--seed", type=int, help="seed a random step policy for locking/mvto")
    p.add_argument("--predicted", default="auto", choices=["auto", "none"], help="predicted locks source for locking mode")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("incremental", help="diff against a snapshot and rebuild only the frontier")
    _add_io_args(p)
    p.add_argument("--db", required=True, help="digest db from the prior build")
    p.add_argument("--trace", required=True, help="trace file from the prior build")
    p.set_defaults(func=cmd_incremental)

    p = sub.add_parser("infer", help="add inferred edges until the build is valid")
    _add_io_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("prune", help="erase inferred edges and re-infer from scratch")
    _add_io_args(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("verify", help="exhaustively check verdict uniformity and state uniqueness")
    _add_io_args(p)
    p.add_argument("--limits", help="enumeration limits: tasks,events,interleavings")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="write schedule TSVs and figures")
    _add_io_args(p)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("suggest", help="propose resource and task coarsening")
    _add_io_args(p)
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("apply", help="apply a coarsening proposal to a description")
    _add_io_args(p, out=False)
    p.add_argument("--proposal", required=True)
    p.add_argument("--out-desc", required=True, help="path for the rewritten description")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("demo", help="write the canonical example description and state")
    p.add_argument("--dir", default="demo")
    p.add_argument("--with-edge", action="store_true", help="include the declared gen -> gcc edge")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LimitExceeded as exc:
        _say(f"limit exceeded: {exc}")
        return 1
    except BuildError as exc:
        _say(f"error: {exc}")
        return 1
    except OSError as exc:
        _say(f"error: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
