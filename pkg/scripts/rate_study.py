"""Milstein and Euler strong-error slopes across drift regularities.

Runs the rate pipeline for every alpha on one set of lattices and prints the
fitted slopes next to the reference values (1 + alpha) / 2 and 1/2.

    python3 scripts/rate_study.py --paths 2000 --alphas 0.25 0.5 0.75 1.0
"""

import argparse
import dataclasses

from sde_lab import harness


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--alphas", type=float, nargs="+", default=[0.25, 0.5, 0.75, 1.0])
    parser.add_argument("--paths", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results/rate-study")
    args = parser.parse_args()
    base = harness.preset("main-rate-a05")
    print(f"{'alpha':>6} {'milstein':>9} {'euler':>9} {'-(1+a)/2':>9}")
    for alpha in args.alphas:
        cfg = dataclasses.replace(
            base,
            experiment_id=f"rate-a{alpha:g}",
            model=dataclasses.replace(base.model, alpha=alpha),
            scheme_kinds=("milstein", "euler"),
            path_count=args.paths,
            seed=args.seed,
        )
        fits = {f["scheme"]: f["slope"] for f in harness.run(cfg, out_dir=args.out).summary["fits"]}
        print(f"{alpha:6.2f} {fits['milstein']:9.3f} {fits['euler']:9.3f} {-(1 + alpha) / 2:9.3f}")


if __name__ == "__main__":
    main()
