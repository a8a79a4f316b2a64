"""Sweep one config key over several values and tabulate the evaluation report.

Example:
    python3 scripts/sweep.py --key rerank.threshold --values 0.0 0.2 0.4 0.6
    python3 scripts/sweep.py --key distill.lam --values 0 0.5 1 2 --out sweep.csv
"""

import argparse
import csv
import json
import sys
import tempfile
from pathlib import Path

from rxdistill import pipeline

TOY = Path(pipeline.__file__).parent / "data" / "toy" / "config.json"
COLUMNS = ("records", "chunks_kept", "agreement_vs_teacher", "selection_f1", "rouge_l_f1")


def run_one(config: Path, key: str, value, workdir: Path) -> dict:
    cfg = pipeline.load_config(config, {key: value, "paths.out_dir": str(workdir)})
    manifest = pipeline.run("all", cfg)
    report = json.loads((cfg.out_dir / "report.json").read_text())
    return {
        "records": report["records"],
        "chunks_kept": manifest["stages"]["rerank"]["summary"]["chunks_kept"],
        "agreement_vs_teacher": report["agreement_vs_teacher"],
        "selection_f1": report["selection_vs_teacher"]["f1"],
        "rouge_l_f1": report["rouge"]["rouge_l"]["f1"],
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", "-c", type=Path, default=TOY, help="base config (default: bundled toy)")
    ap.add_argument("--key", required=True, help="dotted config key, e.g. sample.pool_top_m")
    ap.add_argument("--values", nargs="+", required=True, help="values, parsed as JSON when possible")
    ap.add_argument("--out", type=Path, help="also write the table as CSV")
    args = ap.parse_args(argv)

    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, raw in enumerate(args.values):
            try:
                value = json.loads(raw)
            except ValueError:
                value = raw
            rows.append({args.key: value, **run_one(args.config, args.key, value, Path(tmp) / str(i))})

    header = (args.key,) + COLUMNS
    print("  ".join(f"{h:>20s}" for h in header))
    for row in rows:
        print("  ".join(f"{row[h]:>20.4f}" if isinstance(row[h], float) else f"{row[h]!s:>20s}" for h in header))
    if args.out:
        with args.out.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
