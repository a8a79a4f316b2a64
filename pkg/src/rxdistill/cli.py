"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or config, 2 a stage failed,
3 ``verify`` found digest mismatches.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, dataset_builder, pipeline
from .errors import PipelineError, StageError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_STAGE, EXIT_MISMATCH = 0, 1, 2, 3


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "out_dir", None):
        out["paths.out_dir"] = str(Path(args.out_dir).resolve())
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    return out


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", required=True, help="pipeline config (JSON)")
    p.add_argument("--out-dir", help="override paths.out_dir")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any dotted config key; VALUE is parsed as JSON when possible")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rxdistill", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for stage in pipeline.STAGES:
        _add_config_args(sub.add_parser(stage, help=f"run the {stage} stage"))
    p = sub.add_parser("run", help="run all stages (or one with --stage)")
    _add_config_args(p)
    p.add_argument("--stage", default="all", choices=("all",) + pipeline.STAGES)
    p = sub.add_parser("validate-dataset", help="check an instruction dataset against its schema")
    p.add_argument("path")
    p = sub.add_parser("verify", help="recompute artifact digests recorded in a run manifest")
    p.add_argument("manifest", help="run_manifest.json or the run directory")
    p = sub.add_parser("toy-config", help="print the path of the bundled toy config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "toy-config":
            print(Path(__file__).parent / "data" / "toy" / "config.json")
            return EXIT_OK
        if args.command == "validate-dataset":
            report = dataset_builder.validate_dataset(args.path)
            for line_no, msg in report.violations:
                print(f"{args.path}:{line_no}: {msg}")
            print(f"{report.records} records, {len(report.violations)} violations")
            return EXIT_OK if report.ok else EXIT_INVALID
        if args.command == "verify":
            report = pipeline.verify(args.manifest)
            for rel in report.mismatches:
                print(f"MISMATCH {rel}")
            print(f"{report.checked} artifacts checked, {len(report.mismatches)} mismatched")
            return EXIT_OK if report.ok else EXIT_MISMATCH
        cfg = pipeline.load_config(args.config, _overrides(args))
        stage = args.stage if args.command == "run" else args.command
        manifest = pipeline.run(stage, cfg)
        for name in (pipeline.STAGES if stage == "all" else (stage,)):
            info = manifest["stages"][name]
            print(f"{name:14s} {info['seconds']:8.3f}s  {json.dumps(info['summary'], sort_keys=True)}")
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StageError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
