"""``qsim`` command line: run one experiment from a config file plus flag overrides."""
from __future__ import annotations

import argparse
import logging
import sys

from .annealer import BACKENDS
from .errors import ConfigurationError
from .experiments import EXPERIMENTS, ExperimentConfig, parse_int_list, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsim", description="Quadrature photonic spatial Ising machine simulator.")
    p.add_argument("command", choices=EXPERIMENTS)
    p.add_argument("--config", help="INI file; omitted keys keep the experiment defaults")
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--seeds", help="seed list, e.g. '0,3,7' or '0:20'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--iterations", type=int, help="proposal budget per run")
    p.add_argument("--noise-sigma", type=float, help="detector noise as a fraction of full scale")
    p.add_argument("--pixels", type=int,
                   help="misalignment in pixels (misalign: sweep {0, M} only)")
    p.add_argument("--workers", type=int, help="process pool size for seed-level parallelism")
    p.add_argument("--plot", action="store_true", help="also write SVG plots (needs matplotlib)")
    p.add_argument("--dump-pgm", action="store_true", help="write phase maps and camera images as PGM")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key; may be repeated")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config, args.command)
    else:
        cfg = ExperimentConfig.defaults(args.command)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    if args.seeds is not None:
        cfg.runs.seeds = parse_int_list(args.seeds)
    if args.seed is not None:
        cfg.runs.seeds = [args.seed]
    if args.out is not None:
        cfg.out = args.out
    if args.backend is not None:
        cfg.policy.backend = args.backend
    if args.iterations is not None:
        cfg.policy.iterations = args.iterations
    if args.noise_sigma is not None:
        cfg.detector.noise_sigma = args.noise_sigma
    if args.pixels is not None:
        if args.command == "misalign":
            cfg.misalign.pixels = sorted({0, args.pixels})
        else:
            cfg.optics.misalignment = args.pixels
    if args.workers is not None:
        cfg.runs.workers = args.workers
    if args.plot:
        cfg.runs.plot = True
    if args.dump_pgm:
        cfg.runs.dump_pgm = True
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(cfg.to_ini())
            return 0
        return run_experiment(cfg)
    except (ConfigurationError, OSError) as exc:
        print(f"qsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
