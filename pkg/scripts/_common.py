"""Shared argument handling for the figure-data scripts."""

import argparse
import logging
import os
from pathlib import Path


def parser(description: str, reps: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--reps", type=int, default=reps)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=20120401)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=os.environ.get("CQL_OUTPUT_DIR", "results"))
    return p


def setup(args, name: str) -> Path:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    return out
