"""Command-line entry point: run, compare, validate, plot-data."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .kinematics import ModelError
from .scenario import ScenarioError, load_scenario
from .sim import run
from .trace import TraceError, compare, read_trace, write_plot_data, write_trace


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    enabled = None if args.safety is None else args.safety == "on"
    trace, summary = run(sc, safety_enabled=enabled, seed=args.seed)
    if args.out:
        write_trace(trace, args.out)
    report = {"scenario": sc.name, "mode": trace.meta["mode"], "seed": trace.meta["seed"],
              "cycles": len(trace), **summary.to_dict()}
    print(json.dumps(report, indent=2))
    return 0


def cmd_compare(args) -> int:
    report = compare(read_trace(args.safe), read_trace(args.unsafe))
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=1) + "\n")
    brief = {k: v for k, v in report.items() if k != "series"}
    print(json.dumps(brief, indent=2))
    return 0


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(json.dumps({"valid": True, "scenario": sc.name, "areas": sorted(sc.areas),
                      "objects": sc.objects, "events": len(sc.events), "cycles": sc.n_cycles}))
    return 0


def cmd_plot_data(args) -> int:
    write_plot_data(read_trace(args.trace), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safecollab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write a trace")
    r.add_argument("--scenario", required=True)
    r.add_argument("--safety", choices=("on", "off"), default=None,
                   help="override the scenario's safety_enabled flag")
    r.add_argument("--out", help="trace file (events go to <out>.events.jsonl)")
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare a safe and an unsafe trace")
    c.add_argument("--safe", required=True)
    c.add_argument("--unsafe", required=True)
    c.add_argument("--report")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="check a scenario document")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("plot-data", help="export speed-vs-limit columns as CSV")
    d.add_argument("--trace", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        return _fail("scenario", exc.reason, field=exc.field)
    except (TraceError, ModelError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
