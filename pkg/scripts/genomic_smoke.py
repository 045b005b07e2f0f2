#!/usr/bin/env python3
"""Genomic-scale run: wide count table, top-k union filter, full ETL, timing."""
import argparse
import tempfile
import time
from pathlib import Path

from interop_etl.metrics import render_report
from interop_etl.pipeline import load_manifest, run_etl
from interop_etl.synth import genomic_scenario


def run():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path)
    p.add_argument("--patients", type=int, default=111)
    p.add_argument("--genes", type=int, default=3000)
    p.add_argument("-k", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="genomic-"))
    s = genomic_scenario(out, args.patients, args.genes, args.k, seed=args.seed)
    start = time.perf_counter()
    res = run_etl(load_manifest(s.manifest_path))
    elapsed = time.perf_counter() - start
    print(render_report(res.report), end="")
    print(f"records: {sum(n for c, n in res.counts.items() if c.startswith('record-')):,}")
    print(f"elapsed: {elapsed:.1f}s")


if __name__ == "__main__":
    run()
