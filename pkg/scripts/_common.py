"""Dataclass config <-> argparse glue shared by the experiment scripts."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path


def parse_config(cls, description: str, argv=None):
    """Build ``cls`` from its defaults, an optional ``--config`` JSON and ``--field value`` flags."""
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--config", help="JSON file with field overrides")
    for f in dataclasses.fields(cls):
        kind = type(f.default) if f.default is not dataclasses.MISSING else str
        if kind is bool:
            ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, action=argparse.BooleanOptionalAction)
        else:
            ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind)
    args = ap.parse_args(argv)
    values = json.loads(Path(args.config).read_text()) if args.config else {}
    values.update({k: v for k, v in vars(args).items() if k != "config" and v is not None})
    return cls(**values)


def emit(rec: dict, out: Path | None) -> None:
    line = json.dumps(rec, sort_keys=True)
    print(line)
    if out is not None:
        with open(out, "a") as fh:
            fh.write(line + "\n")
    sys.stdout.flush()
