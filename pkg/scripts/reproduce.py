#!/usr/bin/env python3
"""Run the bundled study configs in ``scripts/configs``.

Usage::

    python3 scripts/reproduce.py                 # every config
    python3 scripts/reproduce.py magnetization vertexcover   # by name prefix
    python3 scripts/reproduce.py --out-root /tmp/results misalign
"""
import argparse
import sys
from pathlib import Path

from qsim.experiments import ExperimentConfig, run_experiment

CONFIGS = Path(__file__).resolve().parent / "configs"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", help="config name prefixes (default: all)")
    p.add_argument("--out-root", help="write under this directory instead of each config's 'out'")
    args = p.parse_args(argv)
    paths = sorted(CONFIGS.glob("*.ini"))
    if args.names:
        paths = [q for q in paths if any(q.stem.startswith(n) for n in args.names)]
    if not paths:
        p.error(f"no config matches {args.names}")
    status = 0
    for path in paths:
        cfg = ExperimentConfig.load(path)
        if args.out_root:
            cfg.out = str(Path(args.out_root) / Path(cfg.out).name)
        print(f"== {path.stem} -> {cfg.out}")
        status |= run_experiment(cfg)
    return status


if __name__ == "__main__":
    sys.exit(main())
