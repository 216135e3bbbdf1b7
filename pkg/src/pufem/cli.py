"""Command-line entry point: ``pufem run`` plus small export helpers."""

from __future__ import annotations

import argparse
import sys

from .experiments import EXPERIMENTS, ExperimentConfig, parse_levels, run_experiment, write_csv


def _offset(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pufem", description="Smooth PUFEM particle regularisation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write its CSV")
    run.add_argument("--config", help="JSON file with ExperimentConfig fields")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--levels", type=parse_levels, help="level range a..b (inclusive)")
    run.add_argument("--C", type=float)
    run.add_argument("--s", type=int, choices=(1, 2))
    run.add_argument("--epsilon", type=float)
    run.add_argument("--dim", type=int, choices=(2, 3))
    run.add_argument("--P", type=int)
    run.add_argument("--offset", type=_offset, help="grid origin shift dx,dy(,dz)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--threads", type=int)

    phi = sub.add_parser("phi-table", help="dump the tabulated partition function")
    phi.add_argument("--resolution", type=int, default=4097)
    phi.add_argument("--out", default="phi_hat.csv")

    mesh = sub.add_parser("mesh", help="write the refined cube mesh")
    mesh.add_argument("--dim", type=int, choices=(2, 3), default=3)
    mesh.add_argument("--level", type=int, default=0)
    mesh.add_argument("--out", default="mesh.txt")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        overrides = {k: getattr(args, k) for k in
                     ("experiment", "levels", "C", "s", "epsilon", "dim", "P", "offset", "out", "threads")}
        try:
            config = ExperimentConfig.create(config_file=args.config, **overrides)
        except (ValueError, OSError) as exc:
            print(f"pufem: {exc}", file=sys.stderr)
            return 2
        path = write_csv(run_experiment(config), config)
        print(path)
    elif args.command == "phi-table":
        from .mollifier import build_phi_table

        build_phi_table(args.resolution).to_csv(args.out)
        print(args.out)
    elif args.command == "mesh":
        from .mesh import export_mesh, refined_cube_mesh

        export_mesh(refined_cube_mesh(args.dim, args.level), args.out)
        print(args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
