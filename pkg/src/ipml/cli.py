"""Command-line entry point: ``ipml <subcommand> --config path [--out dir]``.

Exit status 0 when every hard check passes, 1 on a hard failure, 2 when the
configuration cannot be used.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import config as config_mod
from .config import EXPERIMENTS, ConfigError, RunConfig


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipml", description="Layered oscillatory constructions for the IPM equation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON run configuration (defaults when omitted)")
        s.add_argument("--out", type=Path, help="output directory for CSV files and reports")
        if name == "verify-velocity":
            s.add_argument("--K", type=_ints, help="comma-separated truncation orders, e.g. 0,1,2")
            s.add_argument("--N-list", dest="N_list", type=_floats, help="comma-separated frequencies")
            s.add_argument("--direction", type=_floats, help="unit direction a,b")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        cfg = config_mod.load(args.config)
        if cfg.experiment != args.command and args.command != "check-all":
            raise ConfigError(f"experiment: config is for {cfg.experiment!r}, command is {args.command!r}")
    else:
        cfg = RunConfig(experiment=args.command)
    changes = {}
    for name in ("K", "N_list", "direction"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if args.out is not None:
        changes["out"] = str(args.out)
    if changes:
        try:
            cfg = dataclasses.replace(cfg, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    from . import experiments

    try:
        reports = experiments.run(cfg, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out) if cfg.out else None
    for rep in reports:
        print(rep.summary())
        if out is not None:
            rep.write(out if len(reports) == 1 else out / rep.experiment)
    failed = [r.experiment for r in reports if not r.passed]
    if len(reports) > 1:
        print(f"== overall: {'FAIL ' + ', '.join(failed) if failed else 'pass'}")
    return 1 if failed else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
