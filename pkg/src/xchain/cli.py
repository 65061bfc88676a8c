"""``xchain`` command line.

Exit codes: 0 success, 1 a safety failure (atomicity violated, or stuck
without ``--allow-stuck``), 2 usage, schema or applicability errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import Sequence

from . import analysis
from .encoding import format_rational
from .harness import (
    BatchSummary,
    ScenarioFileError,
    canonical_json,
    configure_logging,
    load_scenario,
    run_seeds,
)
from .interleave import DEFAULT_MAX_EVENTS, DEFAULT_MAX_SCHEDULES, TooManySchedules, explore, model_for
from .protocols import BaselineInapplicable, ScenarioInvalid, execute

EXIT_OK, EXIT_UNSAFE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"xchain: {msg}", file=sys.stderr)


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    except ScenarioFileError as exc:
        raise UsageError(str(exc)) from exc


def cmd_run(args) -> int:
    loaded = _load(args.file)
    seeds = [args.seed] if args.seed is not None else None
    try:
        records = run_seeds(loaded, seeds, jobs=args.jobs, timing=args.timing)
    except BaselineInapplicable as exc:
        _err(f"{exc} (kind: {exc.kind})")
        return EXIT_USAGE
    except ScenarioInvalid as exc:
        raise UsageError(str(exc)) from exc
    summary = BatchSummary()
    for rec in records:
        summary.add(rec.outcome)
        print(rec.line())
    if args.summary:
        _err(f"{summary.runs} runs: " + ", ".join(f"{k}={v}" for k, v in sorted(summary.verdicts.items())))
    return summary.exit_code(args.allow_stuck)


def cmd_interleave(args) -> int:
    loaded = _load(args.file)
    bounds = loaded.raw.get("interleave", {})
    max_events = args.max_events or bounds.get("max_events", DEFAULT_MAX_EVENTS)
    max_schedules = args.max_schedules or bounds.get("max_schedules", DEFAULT_MAX_SCHEDULES)
    try:
        model = model_for(loaded.scenario)
        report = explore(model, max_schedules=max_schedules, max_events=max_events)
    except TooManySchedules as exc:
        _err(f"too many schedules: {exc}")
        return EXIT_USAGE
    except BaselineInapplicable as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ScenarioInvalid as exc:
        raise UsageError(str(exc)) from exc
    out = report.to_json()
    out["scenario"] = loaded.digest
    print(canonical_json(out))
    if loaded.scenario.protocol == "Baseline":
        # the baseline is expected to admit violations; only invariant breaks fail
        return EXIT_OK if not report.invariant_failures else EXIT_UNSAFE
    return EXIT_OK if report.ok else EXIT_UNSAFE


def parse_diam_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            values = list(range(lo, hi + 1))
        else:
            values = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --diam {text!r}; use LO..HI or a comma list") from exc
    if not values or min(values) < 2:
        raise UsageError("--diam values must be >= 2")
    return values


def parse_chain_table(text: str) -> dict[str, Fraction]:
    table = {}
    for part in filter(None, text.split(",")):
        name, sep, value = part.partition("=")
        if not sep:
            if name in analysis.REFERENCE_TPS:
                table[name] = Fraction(analysis.REFERENCE_TPS[name])
                continue
            raise UsageError(f"unknown chain {name!r}; give it as name=tps")
        try:
            table[name] = Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"bad tps for {name!r}: {value!r}") from exc
    if not table:
        raise UsageError("no chains given")
    return table


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


def cmd_analyze(args) -> int:
    try:
        if args.what == "latency":
            sys.stdout.write(analysis.latency_csv(parse_diam_range(args.diam), args.delta))
        elif args.what == "fees":
            fees = analysis.FeeSchedule(args.fd, args.ffc)
            rows = []
            for n in args.n:
                rows.append({
                    "n_edges": n,
                    "baseline": format_rational(analysis.total_fee("baseline", n, fees)),
                    "ac3wn": format_rational(analysis.total_fee("ac3wn", n, fees)),
                    "overhead": format_rational(analysis.fee_overhead(n, fees)),
                })
            for row in rows:
                print(canonical_json(row))
        elif args.what == "throughput":
            if args.table:
                sys.stdout.write(analysis.throughput_csv())
                return EXIT_OK
            table = parse_chain_table(args.chains or ",".join(analysis.REFERENCE_TPS))
            involved = dict(table)
            if args.witness is not None and args.witness not in involved:
                involved.update(parse_chain_table(args.witness))
            print(format_rational(analysis.min_throughput(involved.values())))
        elif args.what == "depth":
            p = analysis.SecurityParams(args.va, args.ch, args.dh)
            print(analysis.min_confirmation_depth(p))
    except analysis.AnalysisError as exc:
        raise UsageError(str(exc)) from exc
    return EXIT_OK


def cmd_export_chain(args) -> int:
    loaded = _load(args.file)
    seed = args.seed if args.seed is not None else loaded.scenario.seeds[0]
    try:
        world, _ = execute(loaded.scenario, seed)
    except BaselineInapplicable as exc:
        _err(str(exc))
        return EXIT_USAGE
    if args.chain_id not in world.chains:
        raise UsageError(f"no chain {args.chain_id!r}; have {', '.join(sorted(world.chains))}")
    print(json.dumps(world.chains[args.chain_id].export_json(), sort_keys=True, indent=args.indent))
    return EXIT_OK


def cmd_acceptance(args) -> int:
    from .acceptance import run_acceptance

    results = run_acceptance(only=args.only, stream=sys.stdout)
    return EXIT_OK if all(r.passed for r in results) else EXIT_UNSAFE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xchain", description="Cross-chain atomic swap simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario for each of its seeds")
    r.add_argument("file", help="scenario JSON path or bundled scenario name")
    r.add_argument("--seed", type=int, help="run only this seed")
    r.add_argument("--allow-stuck", action="store_true", help="do not fail on Stuck verdicts")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.add_argument("--timing", action="store_true", help="include wall_time_ms in each record")
    r.add_argument("--summary", action="store_true", help="print verdict counts to stderr")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("interleave", help="enumerate every legal event order")
    i.add_argument("file")
    i.add_argument("--max-events", type=int)
    i.add_argument("--max-schedules", type=int)
    i.set_defaults(func=cmd_interleave)

    a = sub.add_parser("analyze", help="closed-form calculators")
    asub = a.add_subparsers(dest="what", required=True)
    lat = asub.add_parser("latency")
    lat.add_argument("--diam", default="2..10")
    lat.add_argument("--delta", type=_fraction, default=Fraction(1))
    fees = asub.add_parser("fees")
    fees.add_argument("--n", type=int, nargs="+", default=[1, 2, 5, 10])
    fees.add_argument("--fd", type=_fraction, default=Fraction(1))
    fees.add_argument("--ffc", type=_fraction, default=Fraction(1))
    thr = asub.add_parser("throughput")
    thr.add_argument("--chains", help="comma list of name=tps (known names may omit =tps)")
    thr.add_argument("--witness", help="witness chain name, or name=tps")
    thr.add_argument("--table", action="store_true", help="emit the reference tps table as CSV")
    dep = asub.add_parser("depth")
    dep.add_argument("--va", type=_fraction, required=True)
    dep.add_argument("--ch", type=_fraction, required=True)
    dep.add_argument("--dh", type=_fraction, required=True)
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("export-chain", help="re-run a scenario and dump one chain's block tree")
    e.add_argument("file")
    e.add_argument("chain_id")
    e.add_argument("--seed", type=int)
    e.add_argument("--indent", type=int)
    e.set_defaults(func=cmd_export_chain)

    acc = sub.add_parser("acceptance", help="run the acceptance criteria")
    acc.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    acc.set_defaults(func=cmd_acceptance)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
