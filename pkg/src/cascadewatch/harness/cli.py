"""Command line entry point: ``cascadewatch run|sweep|probe|report``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..domain import label_name
from ..errors import CascadeWatchError, ConfigError
from ..fusion import Event, RunMetrics, events_from_csv
from .runner import SweepSpec, emit_report, rows_to_csv, run_extra, run_scenario, run_sweep
from .scenario import load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("cascadewatch")


def _parse_values(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {text!r}") from None


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    run = run_scenario(scenario, keep_transcript=False)
    paths = emit_report(run.metrics, run.events, args.out, args.format, run_extra(run, scenario))
    m = run.metrics
    print(f"frames={m.frames_total} exits I/II/III={m.exits_by_stage[1]}/{m.exits_by_stage[2]}/"
          f"{m.exits_by_stage[3]} mean_latency={m.mean_latency:.4f}s speedup={m.speedup_ratio:.1f}x "
          f"events={len(run.events)} alerts={sum(n.alert for n in run.severities)}")
    print(f"transcript sha256 {run.transcript_hash}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    spec = SweepSpec(args.param, _parse_values(args.values))
    text = rows_to_csv(run_sweep(scenario, spec))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_probe(args) -> int:
    """Run up to ``--tick`` with an operator alarm on ``--alarm`` and dump the
    health reports plus every alarm-driven verdict as JSON lines."""
    scenario = load_scenario(args.scenario)
    if args.alarm not in {c.id for c in scenario.cameras}:
        raise ConfigError(f"unknown camera {args.alarm!r}")
    if not 0 <= args.tick < scenario.duration_ticks:
        raise ConfigError(f"--tick must be in [0, {scenario.duration_ticks})")
    run = run_scenario(scenario, extra_alarms=[(args.alarm, args.tick)], until_tick=args.tick)
    for h in run.health:
        print(json.dumps({"type": "health", "camera": h.camera_id, "entropy": h.entropy,
                          "entropy_ok": h.entropy_ok, "stream_live": h.stream_live,
                          "config_ok": h.config_ok, "probed_at": h.probed_at}))
    for r, origin in zip(run.results, run.origins):
        if origin == "alarm" and r.camera_id == args.alarm:
            print(json.dumps({"type": "verdict", "camera": r.camera_id, "tick": r.stream_time,
                              "label": label_name(r.final_label), "stage": r.exit_stage.name,
                              "confidence": r.confidence}))
    return EXIT_OK


def cmd_report(args) -> int:
    rundir = Path(args.rundir)
    try:
        summary = json.loads((rundir / "summary.json").read_text())
        if (rundir / "events.csv").exists():
            events = events_from_csv((rundir / "events.csv").read_text())
        else:
            events = [Event.from_dict(d) for d in json.loads((rundir / "events.json").read_text())]
    except FileNotFoundError as exc:
        raise ConfigError(f"not a run directory: {exc.filename}") from exc
    m = RunMetrics.from_dict(summary["metrics"])
    print(f"scenario {summary.get('scenario', '?')} seed {summary.get('seed', '?')}")
    print(f"frames {m.frames_total}  mean latency {m.mean_latency:.4f}s  "
          f"speedup {m.speedup_ratio:.1f}x vs {m.baseline_latency}s")
    for s, p in m.exit_fractions.items():
        print(f"  stage {s.name:<3} {m.exits_by_stage[s]:>8}  {100 * p:6.2f}%")
    print(f"{len(events)} events")
    for e in events:
        secs = e.duration_ticks / 30
        print(f"  {label_name(e.label):<22} {e.camera_id:<6} ticks {e.start_frame}-{e.end_frame} "
              f"({secs:.1f}s) conf {e.mean_confidence:.3f} {e.source}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascadewatch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write a report")
    p.add_argument("--scenario", required=True, help="JSON file or builtin:<name>")
    p.add_argument("--out", default="run-out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="re-run a scenario over threshold values")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", required=True, choices=("tau1", "tau2", "tau_c"))
    p.add_argument("--values", required=True, help="comma-separated, ascending")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="inject an operator alarm and show the escalation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--alarm", required=True, metavar="CAMERA")
    p.add_argument("--tick", required=True, type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--in", dest="rundir", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CascadeWatchError, OSError, ArithmeticError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
