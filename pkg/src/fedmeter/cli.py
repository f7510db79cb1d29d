"""Command-line entry point: ``fedmeter run | validate | presets``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import config, runner
from .metrics import format_table

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def parse_overrides(tokens: list[str]) -> dict:
    """Turn ``--key value`` / ``--key=value`` tokens into typed config values."""
    out = {}
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if not tok.startswith("--") or tok == "--":
            raise config.ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if k + 1 >= len(tokens):
                raise config.ConfigError(f"--{key} needs a value")
            k += 1
            value = tokens[k]
        key = key.replace("-", "_")
        if key == "method":
            key = "methods"
        out[key] = config.parse_value(key, value)
        k += 1
    return out


def _load(args, extra) -> config.ExperimentConfig:
    overrides = parse_overrides(extra)
    if args.preset:
        overrides["preset"] = args.preset
    return config.load(args.config, overrides)


def cmd_run(args, extra) -> int:
    cfg = _load(args, extra)
    problems = config.validate(cfg)
    if problems:
        for p in problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return EXIT_CONFIG
    rows = runner.run(cfg)
    print(format_table(rows))
    print(f"artifacts written to {cfg.output_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args, extra) -> int:
    cfg = _load(args, extra)
    problems = config.validate(cfg)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return EXIT_CONFIG if problems else EXIT_OK


def cmd_presets(args, extra) -> int:
    if extra:
        raise config.ConfigError(f"unexpected arguments {extra}")
    if args.action == "list":
        for name in config.PRESETS:
            print(f"{name:16s} {config.PRESET_HELP[name]}")
        return EXIT_OK
    if not args.name:
        raise config.ConfigError("presets show needs a preset name")
    sys.stdout.write(config.dump(config.build(overrides={"preset": args.name}, env={})))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedmeter", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("run", cmd_run, "run an experiment sweep"),
                                ("validate", cmd_validate, "check a config and list problems")):
        sp = sub.add_parser(name, help=helptext,
                            epilog="any config key can be overridden with --key value")
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--preset", help="start from a named preset")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("presets", help="list or show the built-in presets")
    sp.add_argument("action", choices=("list", "show"))
    sp.add_argument("name", nargs="?")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except config.ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        logging.getLogger("fedmeter").debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
