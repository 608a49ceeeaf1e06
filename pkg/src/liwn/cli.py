"""Command line entry point: ``liwn <command> [--config FILE] [--set key=value ...]``."""
import argparse
import sys

from . import harness


def build_parser():
    p = argparse.ArgumentParser(prog="liwn", description="Locally invariant wavelet networks.")
    p.add_argument("command", choices=sorted(harness.COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config, args.overrides)
        if args.print_config:
            print(cfg.to_text(), end="")
            return 0
        result = harness.run(args.command, cfg)
    except (harness.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "gradcheck" and not result:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
