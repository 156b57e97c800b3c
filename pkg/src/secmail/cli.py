"""Command-line entry point: ``secmail run | analyze | report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import netfile
from .analysis import (AbstractionIncomplete, CorruptLog, build_marking_graph, check_liveness,
                       generate_report)
from .enet import validate_net
from .nets import abstraction_for
from .scenario import (ScenarioError, load_net, load_scenario, read_traces, run_scenario,
                       write_outputs)
from .services import AuditRecord

log = logging.getLogger("secmail")

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _seed_override() -> int | None:
    raw = os.environ.get("SECMAIL_SEED")
    if raw is None or raw == "":
        return None
    return int(raw)


def cmd_run(scenario: str, out: str, interleave: bool = False, max_steps: int | None = None) -> int:
    try:
        sc = load_scenario(scenario, seed=_seed_override())
    except (ScenarioError, ValueError) as exc:
        log.error("cannot load scenario: %s", exc)
        return EXIT_INVALID
    result = run_scenario(sc, interleave=interleave, max_steps=max_steps)
    write_outputs(result, out)
    for s in result.sessions:
        log.info("session %d %s/%s: %s after %d firings", s.index + 1, s.net, s.user,
                 s.outcome, len(s.trace))
    return EXIT_OK if result.ok else EXIT_FAIL


def cmd_analyze(net_spec: str, out: str) -> int:
    try:
        net = load_net(net_spec)
    except (OSError, ValueError, KeyError) as exc:
        log.error("cannot load net: %s", exc)
        return EXIT_INVALID
    report = validate_net(net)
    if not report.ok:
        for v in report.violations:
            log.error("invalid net: %s", v)
        return EXIT_INVALID
    try:
        graph = build_marking_graph(net, abstraction_for(net))
    except (AbstractionIncomplete, ValueError) as exc:
        log.error("cannot analyze net: %s", exc)
        return EXIT_INVALID
    liveness = check_liveness(graph)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"net": net.name, "counts": report.counts, "liveness": liveness.to_doc(),
           "graph": graph.to_doc()}
    out_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    out_path.with_suffix(".dot").write_text(graph.to_dot(), encoding="utf-8")
    print(f"{net.name}: {liveness.summary()}")
    return EXIT_OK if liveness.ok else EXIT_FAIL


def cmd_report(audit: str, traces: str, out: str) -> int:
    path = Path(audit)
    lines = path.read_text(encoding="utf-8").splitlines() if path.exists() else []
    try:
        records = [AuditRecord.from_line(line) for line in lines if line.strip()]
        events = [e.attributes for trace in read_traces(traces).values() for e in trace]
        report = generate_report(records, events)
    except (CorruptLog, ValueError, KeyError) as exc:
        log.error("corrupt log: %s", exc)
        return EXIT_INVALID
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_text(), encoding="utf-8")
    for a in report.anomalies:
        log.warning("anomaly: %s", a)
    return EXIT_OK if not report.anomalies else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secmail",
                                     description="E-net secure e-mail simulator and analyzer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--interleave", action="store_true",
                     help="round-robin one firing per session")
    run.add_argument("--max-steps", type=int, default=None)

    analyze = sub.add_parser("analyze", help="marking graph and liveness of a net")
    analyze.add_argument("--net", required=True, help="ens, enr or a net file")
    analyze.add_argument("--out", required=True, help="JSON report path (a .dot is written beside it)")

    report = sub.add_parser("report", help="report over a run's audit log and traces")
    report.add_argument("--audit", required=True)
    report.add_argument("--traces", required=True)
    report.add_argument("--out", required=True)

    dump = sub.add_parser("dump-net", help="write a built-in net in the text format")
    dump.add_argument("--net", required=True)
    dump.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "run":
        if args.max_steps is not None and args.max_steps < 0:
            log.error("--max-steps must be >= 0")
            return EXIT_INVALID
        return cmd_run(args.scenario, args.out, args.interleave, args.max_steps)
    if args.command == "analyze":
        return cmd_analyze(args.net, args.out)
    if args.command == "report":
        return cmd_report(args.audit, args.traces, args.out)
    if args.command == "dump-net":
        netfile.dump(load_net(args.net), args.out)
        return EXIT_OK
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
