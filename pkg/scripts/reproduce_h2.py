#!/usr/bin/env python3
"""Build the H2-shaped synthetic scenario, run the ETL and print the report."""
import argparse
import tempfile
from pathlib import Path

from interop_etl.cli import main
from interop_etl.synth import h2_scenario


def run():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, help="scenario directory (default: a temporary one)")
    p.add_argument("--seed", type=int, default=2)
    args = p.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="h2-"))
    s = h2_scenario(out, seed=args.seed)
    print(f"scenario written to {s.root}")
    rc = main(["validate", str(s.manifest_path)]) or main(["etl", str(s.manifest_path)])
    raise SystemExit(rc)


if __name__ == "__main__":
    run()
