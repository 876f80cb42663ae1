"""Command-line entry point.

    ergocell run <config-or-preset> [--out DIR] [--seed N] [--threads K] [--allow-flagged]
    ergocell validate <config-or-preset>
    ergocell list-presets

Exit codes: 0 success, 2 validation failure, 3 solver-failure budget exceeded.
The default output directory comes from ERGOCELL_OUT (falls back to
``./results/<experiment_id>``).
"""

from __future__ import annotations

import argparse
import os
import sys

# Keep BLAS single-threaded: parallelism is ours (worker pool over
# realizations) and reproducibility requires fixed reduction orders.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

from .config import ConfigError, RunConfig, load_config, parse_config, validate
from .runners import execute
from .stats import ExperimentError
from .solver import SolverError


def preset_dir() -> str:
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets")


def list_presets() -> list:
    d = preset_dir()
    if not os.path.isdir(d):
        return []
    return sorted(os.path.splitext(f)[0] for f in os.listdir(d) if f.endswith(".json"))


def resolve_config(name: str) -> RunConfig:
    if os.path.exists(name):
        return load_config(name)
    cand = os.path.join(preset_dir(), name + ".json")
    if os.path.exists(cand):
        return load_config(cand)
    raise ConfigError(f"no config file or preset named {name!r}")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="ergocell", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    runp = sub.add_parser("run", help="execute an experiment config or preset")
    runp.add_argument("config")
    runp.add_argument("--out", default=None)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--threads", type=int, default=None)
    runp.add_argument("--allow-flagged", action="store_true")

    valp = sub.add_parser("validate", help="validate a config or preset")
    valp.add_argument("config")

    sub.add_parser("list-presets", help="list shipped experiment presets")

    args = p.parse_args(argv)

    if args.cmd == "list-presets":
        for name in list_presets():
            print(name)
        return 0

    try:
        cfg = resolve_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    if args.cmd == "validate":
        errors, warnings = validate(cfg)
        for w in warnings:
            print(f"warning: {w}")
        for e in errors:
            print(f"error: {e}")
        return 2 if errors else 0

    if args.seed is not None:
        cfg.raw["master_seed"] = args.seed
    try:
        bundle = execute(cfg, threads=args.threads,
                         allow_flagged=args.allow_flagged)
    except ConfigError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except (ExperimentError, SolverError) as e:
        print(f"solver failure budget exceeded: {e}", file=sys.stderr)
        return 3

    out = args.out or os.environ.get("ERGOCELL_OUT") or os.path.join(
        "results", cfg.experiment_id)
    try:
        bundle.write(out)
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
