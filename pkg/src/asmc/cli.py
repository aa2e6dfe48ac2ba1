"""Command line entry point: ``asmc <experiment> [--config PATH] [--seed U64] ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""

import argparse
import csv
import io
import json
import sys

from .errors import ASMCError, ConfigError
from .experiments import COMMANDS, resolve_config

CONFIG_PREFIX = "# config: "


def format_value(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v
    if hasattr(v, "item"):
        return format_value(v.item())
    return str(v)


def config_line(cfg):
    return CONFIG_PREFIX + json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def render(table):
    """CSV text: schema row, config comment, header, data rows."""
    buf = io.StringIO()
    buf.write(f"schema,{table.schema}\n")
    buf.write(config_line(table.config) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def load_config(path):
    """Read a JSON config, or the config comment of a previously written CSV."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if text.startswith("schema,"):
        for line in text.splitlines():
            if line.startswith(CONFIG_PREFIX):
                text = line[len(CONFIG_PREFIX):]
                break
        else:
            raise ConfigError(f"{path} has no config comment")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="asmc", description="Annealed SMC experiments")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        sp.add_argument("--config", help="JSON config, or a CSV written by an earlier run")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        sp.add_argument("--out", help="output CSV path (default stdout)")
        sp.add_argument("--replicates", type=int, help="number of independent runs R")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for replicates")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    name = args.experiment
    try:
        overrides = load_config(args.config) if args.config else {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.replicates is not None:
            overrides["replicates"] = args.replicates
        if args.threads is None or args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = resolve_config(name, overrides)
        table = COMMANDS[name](cfg, threads=args.threads)
        text = render(table)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError) as e:
        # model and schedule constructors validate their arguments
        print(f"config error: invalid value: {e}", file=sys.stderr)
        return 2
    except (ASMCError, FloatingPointError) as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(f"schema,asmc.{name}/aborted\n# aborted: {e}\n")
        return 3
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
