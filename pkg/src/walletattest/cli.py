"""Command-line entry point.

Subcommands:
    run           execute a scenario (or a matrix of scenarios) under a seed
    check-policy  parse and type-check a policy file, printing diagnostics
    vectors       regenerate the golden wire-vector corpus
    report        render reconciliation / LOA summaries from a trace file

All randomness comes from the --seed flag; environment variables are
deliberately ignored so runs stay reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import wire
from .errors import PolicyError, WalletAttestError
from .messages import ResultDelivery, TraceEvent
from .policy import parse_policy
from .scenario import load_scenario, run_scenario
from .vectors import write_vectors

EXIT_OK = 0
EXIT_FAILED = 1  # assertions failed or diagnostics found
EXIT_USAGE = 2  # unreadable input, malformed scenario, bad arguments


def _summary(detail: bytes) -> str:
    try:
        value = wire.decode(detail)
    except WalletAttestError:
        try:
            text = detail.decode("utf-8")
            if text.isprintable():
                return text
        except UnicodeDecodeError:
            pass
        return detail.hex()[:48]
    name = type(value).__name__
    context = getattr(value, "context", None)
    return f"{name}({context})" if context else name


def render_human(events) -> str:
    lines = []
    for ev in events:
        lines.append(f"{ev.tick:>6}  {ev.actor:<12} {ev.kind:<22} {_summary(ev.detail)}")
    return "\n".join(lines) + "\n"


def _run_one(path: Path, seed: int, out_dir: Path, fmt: str, policy_dir) -> bool:
    scenario = load_scenario(path)
    outcome = run_scenario(scenario, seed, policy_dir=policy_dir)
    name = outcome.name
    (out_dir / f"{name}.trace").write_bytes(outcome.trace_bytes())
    (out_dir / f"{name}.report.json").write_text(
        json.dumps(outcome.report, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8",
    )
    if fmt == "human":
        (out_dir / f"{name}.trace.txt").write_text(
            render_human(outcome.world.trace), encoding="utf-8"
        )
    status = "ok" if outcome.ok else "FAILED"
    print(f"{name}: {status} ({outcome.world.clock} ticks, {len(outcome.world.trace)} events)")
    for r in outcome.assertion_results:
        mark = "pass" if r["ok"] else "FAIL"
        print(f"  [{mark}] {r['assertion']['type']}: {r['detail']}")
    return outcome.ok


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy_dir = Path(args.policy_dir) if args.policy_dir else None
    paths = [Path(p) for p in (args.matrix or [args.scenario])]
    if len(paths) == 1:
        return EXIT_OK if _run_one(paths[0], args.seed, out_dir, args.format, policy_dir) else EXIT_FAILED
    with ThreadPoolExecutor(max_workers=min(8, len(paths))) as pool:
        futures = [
            pool.submit(_run_one, p, args.seed, out_dir, args.format, policy_dir)
            for p in paths
        ]
        results = [f.result() for f in futures]
    return EXIT_OK if all(results) else EXIT_FAILED


def cmd_check_policy(args) -> int:
    try:
        source = Path(args.path).read_text(encoding="utf-8")
    except OSError as e:
        print(f"error: cannot read {args.path}: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        program = parse_policy(source)
    except PolicyError as e:
        print(f"{args.path}:{e.line}:{e.col}: {e}")
        return EXIT_FAILED
    print(
        f"{args.path}: ok ({len(program.rules)} rules, "
        f"{len(program.features)} features, {len(program.loa_table)} loa entries)"
    )
    return EXIT_OK


def cmd_vectors(args) -> int:
    out_dir = Path(args.out)
    names = write_vectors(out_dir)
    print(f"wrote {len(names)} vectors to {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        lines = Path(args.trace).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        print(f"error: cannot read {args.trace}: {e}", file=sys.stderr)
        return EXIT_USAGE
    events = []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            ev = wire.decode(bytes.fromhex(line))
        except (ValueError, WalletAttestError) as e:
            print(f"error: {args.trace}:{i}: not a trace event: {e}", file=sys.stderr)
            return EXIT_USAGE
        if not isinstance(ev, TraceEvent):
            print(f"error: {args.trace}:{i}: not a trace event", file=sys.stderr)
            return EXIT_USAGE
        events.append(ev)

    decisions = []
    reconciles = []
    loa_counts: dict[str, int] = {}
    confirmed = 0
    for ev in events:
        if ev.kind == "decision":
            decisions.append(ev.detail.decode("utf-8", "replace"))
        elif ev.kind == "reconcile":
            reconciles.append(json.loads(ev.detail.decode("utf-8")))
        elif ev.kind == "ledger-confirm":
            confirmed += 1
        elif ev.kind.startswith("deliver<"):
            try:
                msg = wire.decode(ev.detail)
            except WalletAttestError:
                continue
            if isinstance(msg, ResultDelivery):
                key = str(msg.result.loa) if msg.result.loa is not None else "fail"
                loa_counts[key] = loa_counts.get(key, 0) + 1

    if args.format == "json":
        print(
            json.dumps(
                {
                    "events": len(events),
                    "ticks": events[-1].tick if events else 0,
                    "confirmed_transfers": confirmed,
                    "decisions": decisions,
                    "loa_results": dict(sorted(loa_counts.items())),
                    "reconciliations": reconciles,
                },
                indent=2,
                sort_keys=True,
            )
        )
        return EXIT_OK
    print(f"trace: {len(events)} events over {events[-1].tick if events else 0} ticks")
    print(f"ledger: {confirmed} confirmed transfers")
    if loa_counts:
        rendered = ", ".join(f"loa {k}: {v}" for k, v in sorted(loa_counts.items()))
        print(f"attestation results: {rendered}")
    for d in decisions:
        print(f"decision: {d}")
    for r in reconciles:
        print(
            "reconciliation: "
            f"{r['missing_records']} missing records, {r['unconfirmed']} unconfirmed, "
            f"{r['divergences']} order divergences, {r['retroactive']} retroactive rejections"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="walletattest",
        description="Wallet attestation protocol stack and VASP network simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario deterministically")
    p_run.add_argument("--scenario", help="scenario file (.scn, JSON)")
    p_run.add_argument("--matrix", nargs="+", help="run several scenarios in parallel")
    p_run.add_argument("--seed", type=int, required=True, help="64-bit run seed")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--policy-dir", help="directory of .apl policy overlays")
    p_run.add_argument("--format", choices=("trace", "human"), default="trace")
    p_run.set_defaults(func=cmd_run)

    p_check = sub.add_parser("check-policy", help="validate a policy file")
    p_check.add_argument("path")
    p_check.set_defaults(func=cmd_check_policy)

    p_vec = sub.add_parser("vectors", help="regenerate golden wire vectors")
    p_vec.add_argument("--out", required=True)
    p_vec.set_defaults(func=cmd_vectors)

    p_rep = sub.add_parser("report", help="render summaries from a trace file")
    p_rep.add_argument("--trace", required=True)
    p_rep.add_argument("--format", choices=("human", "json"), default="human")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and not (args.scenario or args.matrix):
        parser.error("run requires --scenario or --matrix")
    try:
        return args.func(args)
    except (WalletAttestError, OSError, json.JSONDecodeError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
