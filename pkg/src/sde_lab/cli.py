"""Command line: ``run``, ``validate``, ``list-presets``.

Failures print a single JSON line ``{"status": ..., "exit_code": ..., "reason": ...}``
on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import harness
from .errors import ConfigurationError, SDELabError


def _fail(code, status, reason):
    print(json.dumps({"status": status, "exit_code": code, "reason": reason}), file=sys.stderr)
    return code


def _status_name(code):
    return {harness.EXIT_CONFIG: "config-error", harness.EXIT_NUMERICAL: "numerical-failure"}.get(code, "error")


def _load(args):
    if args.config is not None:
        config = harness.load_config(args.config)
    else:
        config = harness.preset(args.preset)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def cmd_run(args):
    config = _load(args)
    check = harness.preset_check(config.experiment_id) if args.assert_ else None
    if args.assert_ and check is None:
        raise ConfigurationError(f"--assert: no acceptance check is registered for {config.experiment_id!r}")
    result = harness.run(config, out_dir=args.out, check=check)
    if result.status == harness.EXIT_ASSERT:
        return _fail(result.status, "assertion-failed", "; ".join(result.failures))
    if result.status != harness.EXIT_OK:
        return _fail(result.status, "config-error", "; ".join(result.failures))
    written = [str(p) for p in (result.csv_path, result.sidecar_path) if p is not None]
    print(json.dumps({"status": "ok", "exit_code": 0, "files": written, "warnings": result.warnings}))
    return harness.EXIT_OK


def cmd_validate(args):
    config = harness.load_config(args.config)
    try:
        field = config.model.build()
    except SDELabError as exc:
        raise ConfigurationError(f"model: {exc}") from None
    report = harness.validate_assumptions(field)
    print(json.dumps({"status": "ok", "exit_code": 0, "experiment_id": config.experiment_id,
                      "report": report.as_dict()}))
    return harness.EXIT_OK


def cmd_list_presets(args):
    for name in sorted(harness.PRESETS):
        cfg = harness.PRESETS[name][0]
        print(f"{name}\tmode={cfg.mode}\talpha={cfg.model.alpha}\tM={cfg.path_count}")
    return harness.EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sde-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or a preset")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="flat key = value config file")
    src.add_argument("--preset", help="name of a pinned preset (see list-presets)")
    run.add_argument("--seed", type=int, help="override the seed")
    run.add_argument("--out", help="output directory (default: the config's output_path)")
    run.add_argument("--assert", dest="assert_", action="store_true",
                     help="check the preset's acceptance criterion; exit 4 on failure")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config file and the model's standing assumptions")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)

    lst = sub.add_parser("list-presets", help="print the shipped presets")
    lst.set_defaults(func=cmd_list_presets)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are configuration errors
        return harness.EXIT_CONFIG if exc.code else harness.EXIT_OK
    try:
        return args.func(args)
    except SDELabError as exc:
        try:
            code = harness.exit_code_for(exc)
        except SDELabError:
            code = harness.EXIT_NUMERICAL
        return _fail(code, _status_name(code), " ".join(str(exc).split()))


if __name__ == "__main__":
    sys.exit(main())
