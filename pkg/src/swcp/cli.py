"""Command-line entry point: ``swcp <subcommand> --config FILE [--seed N] [--workers N] [--out DIR]``."""

import argparse
import json
import sys

from .errors import BracketError, InvalidArgument, InvalidParameter, ResourceGuardError
from .harness import COMMANDS, SCHEMA, load_config, preset_names, preset_path, run_command

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="swcp", description="Contact process on small and big worlds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="flat key = value config file")
        src.add_argument("--preset", choices=preset_names(), help="shipped preset config")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    sub.add_parser("keys", help="list config keys")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "keys":
        for k, (_, default, text) in SCHEMA.items():
            print(f"{k:18s} {default!r:24s} {text}")
        return EXIT_OK
    overrides = {}
    try:
        for item in args.set:
            if "=" not in item:
                raise InvalidParameter(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        for flag in ("seed", "workers", "out"):
            v = getattr(args, flag)
            if v is not None:
                overrides[flag] = str(v)
        if args.preset:
            path = preset_path(args.preset)
        elif args.config:
            path = args.config
        else:
            raise InvalidParameter("give --config FILE or --preset NAME")
        cfg = load_config(path, overrides)
        summary = run_command(args.command, cfg)
    except ResourceGuardError as exc:
        print(f"swcp: resource guard tripped: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (InvalidParameter, InvalidArgument, BracketError) as exc:
        print(f"swcp: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    json.dump(summary, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
