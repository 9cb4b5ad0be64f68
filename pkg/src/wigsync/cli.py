"""Command-line front end: ``run``, ``audit`` and ``compare``.

Exit status is 0 on success (and for an audit without violations), 1 when an
audit finds violations, 2 for invalid input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .audit import AuditError, builtin_table1_chain, parse_chain
from .hilbert import ImpossibleBranch
from .ledger import export_history
from .measurement import MeasurementError
from .protocol import Protocol, ProtocolError, parse
from .runner import (
    compare_modes,
    default_external_agents,
    format_table,
    run_audit,
    run_exact,
    run_ledgers,
    run_sampled,
    to_json,
)
from .scenarios import DEFAULT_RECORDS, builtin

EXIT_OK, EXIT_VIOLATIONS, EXIT_INVALID = 0, 1, 2


class UsageError(ValueError):
    pass


def load_protocol(source: str) -> tuple[Protocol, Optional[dict]]:
    """Protocol plus its reference outcome record (builtins only)."""
    if source.startswith("builtin:"):
        key = source.removeprefix("builtin:")
        try:
            return builtin(key), dict(DEFAULT_RECORDS[key])
        except KeyError as e:
            raise UsageError(str(e.args[0])) from None
    return parse(Path(source).read_bytes()), None


def _csv(text: Optional[str]) -> Optional[tuple[str, ...]]:
    if text is None:
        return None
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _record(text: Optional[str], fallback: Optional[dict]) -> Optional[dict]:
    if text is None:
        return fallback
    rec = {}
    for item in _csv(text):
        name, eq, label = item.partition("=")
        if not eq or not name or not label:
            raise UsageError(f"bad --record item {item!r}; expected measurement=label")
        rec[name] = label
    return rec


def _emit(text: str) -> None:
    sys.stdout.write(text)


def cmd_run(args) -> int:
    p, ref = load_protocol(args.protocol)
    mode = args.mode.replace("-", "_")
    external = _csv(args.external_agents)
    if mode == "sample":
        if args.trials is None:
            raise UsageError("--trials is required with --mode sample")
        table = run_sampled(p, args.trials, args.seed, "exact_collapse")
        rows = table.to_rows()
        if args.format == "json":
            _emit(to_json({
                "protocol": args.protocol,
                "mode": "sample",
                "trials": table.trials,
                "seed": table.seed,
                "measurements": list(table.measurements),
                "frequencies": rows,
            }))
        else:
            _emit(format_table(["path", "count", "frequency"], [[r["path"], r["count"], r["frequency"]] for r in rows]))
        return EXIT_OK
    if args.trials is not None:
        raise UsageError("--trials only applies to --mode sample")
    tree = run_exact(p, mode, external)
    if args.format == "table":
        _emit(format_table(["path", "p_cond", "p_cum"], [[r["path"], r["p_cond"], r["p_cum"]] for r in tree.to_rows()]))
        return EXIT_OK
    report = {
        "protocol": args.protocol,
        "mode": mode,
        "measurements": list(tree.measurements),
        "tree": tree.to_rows(),
    }
    if mode == "exact_external":
        report["external_agents"] = list(external if external is not None else default_external_agents(p))
    record = _record(args.record, ref)
    if record is not None:
        run = run_ledgers(p, record)
        report["record"] = record
        report["record_probability"] = run.probability
        report["ledger"] = export_history(run.ledgers)
    _emit(to_json(report))
    return EXIT_OK


def cmd_audit(args) -> int:
    p, ref = load_protocol(args.protocol)
    if args.chain == "builtin:table1":
        chain = builtin_table1_chain(p)
    elif args.chain.startswith("builtin:"):
        raise UsageError(f"unknown builtin chain {args.chain!r}; only builtin:table1 exists")
    else:
        chain = parse_chain(Path(args.chain).read_bytes(), p)
    rows = run_audit(p, chain, _record(args.record, ref), rebase=args.rebase)
    if args.format == "json":
        _emit(to_json([r.to_dict() for r in rows]))
    else:
        heads = ["statement_id", "agent", "verdict", "used_time", "latest_time", "p_used", "p_latest"]
        _emit(format_table(heads, [list(r.to_dict().values()) for r in rows]))
    return EXIT_VIOLATIONS if any(r.verdict != "ok" for r in rows) else EXIT_OK


def cmd_compare(args) -> int:
    p, ref = load_protocol(args.protocol)
    rows = [r.to_dict() for r in compare_modes(p, _csv(args.external_agents), _record(args.record, ref))]
    if args.format == "json":
        _emit(to_json(rows))
    else:
        heads = ["outcomes", "exact_external", "collapse_nosync_total", "collapse_synced_path"]
        _emit(format_table(heads, [[r[h] for h in heads] for r in rows]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wigsync", description="Observer-ledger quantum protocol runner.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--protocol", required=True, help="protocol file or builtin:<name>")
        sp.add_argument("--record", help="outcome record, e.g. r=tail,z=up (defaults per builtin)")
        sp.add_argument("--format", choices=("json", "table"), default="json")

    run = sub.add_parser("run", help="enumerate or sample outcome branches")
    common(run)
    run.add_argument("--mode", choices=("exact-collapse", "exact-external", "sample"), default="exact-collapse")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--external-agents", help="comma-separated agents treated as outside observers")
    run.set_defaults(func=cmd_run)

    audit = sub.add_parser("audit", help="check an inference chain against the agents' ledgers")
    common(audit)
    audit.add_argument("--chain", default="builtin:table1", help="chain file or builtin:table1")
    audit.add_argument("--rebase", action="store_true", help="re-point every statement at its holder's latest entry")
    audit.set_defaults(func=cmd_audit)

    cmp_ = sub.add_parser("compare", help="compare collapse and external descriptions")
    common(cmp_)
    cmp_.add_argument("--external-agents")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ProtocolError, AuditError, MeasurementError, ImpossibleBranch, UsageError, KeyError, ValueError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"wigsync: error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
