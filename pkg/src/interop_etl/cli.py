"""Command line entry point: ``interop-etl validate|etl|report|inspect``."""
from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from .errors import UserError
from .metrics import metric_row, render_report
from .pipeline import load_manifest, preflight, report_from_store, run_etl
from .store import canonical, open_store

EXIT_OK, EXIT_INTERNAL, EXIT_USER = 0, 1, 2


def cmd_validate(args) -> int:
    pre = preflight(load_manifest(args.manifest))
    for d in pre.diagnostics:
        print(d, file=sys.stderr)
    print(pre.summary)
    for m in pre.data_metrics:
        print(metric_row(m).rstrip())
    return EXIT_OK


def cmd_etl(args) -> int:
    m = load_manifest(args.manifest)
    pre = preflight(m)
    for d in pre.diagnostics:
        print(d, file=sys.stderr)
    result = run_etl(m, pre)
    sys.stdout.write(render_report(result.report, "human"))
    print(f"report written to {m.report_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    sr = report_from_store(args.store)
    if sr.dirty and not args.machine:
        print("WARNING: store is marked dirty; figures may be incomplete", file=sys.stderr)
    sys.stdout.write(render_report(sr.report, "machine" if args.machine else "human"))
    return EXIT_OK


def cmd_inspect(args) -> int:
    store = open_store(args.store)
    if args.collection is None:
        for coll, n in store.counts().items():
            print(f"{coll}\t{n}")
        return EXIT_OK
    if args.collection not in store.collections():
        raise UserError(f"no collection {args.collection!r}; have: {', '.join(store.collections())}")
    for i, doc in enumerate(store.docs(args.collection)):
        if args.limit is not None and i >= args.limit:
            break
        print(canonical(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="interop-etl", description="Interoperability-aware health data ETL.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a run manifest without writing the store")
    s.add_argument("manifest", type=Path)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("etl", help="run extract, transform, load and metrics")
    s.add_argument("manifest", type=Path)
    s.set_defaults(func=cmd_etl)

    s = sub.add_parser("report", help="print the interoperability report of a store")
    s.add_argument("store", type=Path)
    s.add_argument("--machine", action="store_true", help="structured JSON output")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("inspect", help="print documents of a collection")
    s.add_argument("store", type=Path)
    s.add_argument("collection", nargs="?")
    s.add_argument("--limit", type=int, default=10)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        if args.verbose:
            traceback.print_exc()
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
