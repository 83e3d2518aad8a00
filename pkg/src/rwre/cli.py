"""Command line entry point: ``rwre <kind> --config PATH [--seed S] [--threads N] [--out PATH]``."""

import argparse
import json
import sys

from rwre.config import KINDS, ConfigError, load_config
from rwre.evp_density import MemoryGuardError
from rwre.harness import run_experiment, summarize
from rwre.results import TableError, replay_check

EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_TABLE = 4


def build_parser():
    p = argparse.ArgumentParser(prog="rwre", description="Random walk in random environment experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", required=True, help="config file (key = value lines)")
        s.add_argument("--seed", type=int, help="master seed, overrides the config")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--out", help="CSV path, overrides the config (default: stdout)")
    r = sub.add_parser("replay-check", help="byte-compare two result files")
    r.add_argument("a")
    r.add_argument("b")
    m = sub.add_parser("summarize", help="fitted slopes and CIs of a result table")
    m.add_argument("path")
    return p


def _run(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.kind != args.command:
        print(f"config error: {args.config}: kind is {cfg.kind!r}, not {args.command!r}",
              file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_CONFIG
        cfg.seed = args.seed
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.out
    try:
        table = run_experiment(cfg, threads=args.threads, out=out)
    except MemoryGuardError as exc:
        print(f"resource guard exceeded: {exc.guard}: {exc}", file=sys.stderr)
        return EXIT_GUARD
    if not out:
        sys.stdout.write(table.to_text())
    print(f"wall time {table.wall_time:.3f} s", file=sys.stderr)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "replay-check":
        same = replay_check(args.a, args.b)
        print("identical" if same else "different")
        return 0 if same else 1
    if args.command == "summarize":
        try:
            res = summarize(args.path)
        except (TableError, OSError) as exc:
            print(f"summarize error: {exc}", file=sys.stderr)
            return EXIT_TABLE
        print(json.dumps(res, indent=2, default=float))
        return 0
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
