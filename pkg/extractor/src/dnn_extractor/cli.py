"""extract.py command line: features | traces | embed, each driven by a
JSON config.  Prints a JSON summary of the written files on stdout."""

from __future__ import annotations

import argparse
import json
import sys

from .pipeline import load_config, run_embed, run_features, run_traces


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract.py",
        description="produce dtest-compatible feature/trace/embedding files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("features", "traces", "embed"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        runner = {
            "features": run_features,
            "traces": run_traces,
            "embed": run_embed,
        }[args.command]
        summary = runner(config)
    except Exception as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0
