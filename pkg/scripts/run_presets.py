"""Run shipped presets with their acceptance checks and print one line each.

    python3 scripts/run_presets.py                      # every preset
    python3 scripts/run_presets.py smooth-rate moments  # a subset
    python3 scripts/run_presets.py --scale 0.1          # cheaper smoke run
"""

import argparse
import dataclasses
import time

from sde_lab import harness


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", default=sorted(harness.PRESETS))
    parser.add_argument("--out", default="results")
    parser.add_argument("--scale", type=float, default=1.0, help="multiply every path count by this factor")
    args = parser.parse_args()
    for name in args.names:
        cfg = harness.preset(name)
        if args.scale != 1.0:
            cfg = dataclasses.replace(cfg, path_count=max(10, int(cfg.path_count * args.scale)))
        t0 = time.perf_counter()
        res = harness.run(cfg, out_dir=args.out, check=harness.preset_check(name))
        verdict = "ok" if res.status == harness.EXIT_OK else "FAILED: " + "; ".join(res.failures)
        print(f"{name:20s} {time.perf_counter() - t0:7.1f}s  {verdict}", flush=True)


if __name__ == "__main__":
    main()
