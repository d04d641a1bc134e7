"""Command line front end: ``dgns run|table|verify|export``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from .cli_io import (ConfigError, RunConfig, _parse_value, format_table, history_to_csv, run_table,
                     write_fields, write_table)
from .timestepping import make_discretization, run_simulation

log = logging.getLogger("dgns")


def _config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI file with [problem], [mesh], ... sections")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "allow_omega_override":
            parser.add_argument(flag, action="store_true", default=None, dest=f.name)
        else:
            parser.add_argument(flag, dest=f.name, metavar=f.name.upper(),
                                help="comma separated list" if f.name in ("dims", "dts") else None)


def load_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    kw = {}
    for f in dataclasses.fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        kw[f.name] = raw if isinstance(raw, bool) else _parse_value(f.name, raw)
    return base.with_overrides(**kw)


def _simulate(config: RunConfig, dt: float, callback=None):
    problem = config.problem_spec()
    disc = make_discretization(problem, config.dims, config.degree, config.alpha)
    res = run_simulation(disc, problem, config.scheme_config(dt, problem.T), config.projection_config(),
                         callback=callback)
    return disc, problem, res


def _save_config(config: RunConfig) -> None:
    os.makedirs(config.output, exist_ok=True)
    with open(os.path.join(config.output, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(config.to_ini())


def cmd_run(config: RunConfig, args) -> int:
    dt = config.dts[0]
    disc, problem, res = _simulate(config, dt)
    _save_config(config)
    path = os.path.join(config.output, f"history_dt{dt:g}.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(history_to_csv(res.rows))
    print(f"{problem.name}: {len(res.rows)} steps of dt={dt:g} in {res.elapsed:.1f}s -> {path}")
    if res.final_errors is not None:
        e = res.final_errors
        print(f"l2_v={e.l2_v:.6e}  h1_v={e.h1_v:.6e}  l2_p={e.l2_p:.6e}")
    if res.failed:
        print(f"run failed: {res.error}", file=sys.stderr)
        return 1
    return 0


def cmd_table(config: RunConfig, args) -> int:
    rows = run_table(config, progress=lambda r: log.info("dt=%g %s", r.dt, r.status))
    _save_config(config)
    path = write_table(rows, os.path.join(config.output, "table.csv"))
    print(format_table(rows))
    print(f"-> {path}")
    return 1 if any(r.failed for r in rows) else 0


def cmd_verify(config: RunConfig, args) -> int:
    from .verify import run_checks

    checks = run_checks(config.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_export(config: RunConfig, args) -> int:
    dt = config.dts[0]
    every = args.every
    written = []

    def snapshot(disc, problem, state):
        path = os.path.join(config.output, f"fields_{state.k:05d}.vtu")
        written.append(write_fields(path, disc, state.v, state.p, problem.g, state.t))

    problem = config.problem_spec()
    disc = make_discretization(problem, config.dims, config.degree, config.alpha)

    def callback(state, row):
        if every and state.k % every == 0:
            snapshot(disc, problem, state)

    res = run_simulation(disc, problem, config.scheme_config(dt, problem.T), config.projection_config(),
                         callback=callback)
    if not written or not written[-1].endswith(f"fields_{res.state.k:05d}.vtu"):
        snapshot(disc, problem, res.state)
    _save_config(config)
    for path in written:
        print(path)
    if res.failed:
        print(f"run failed: {res.error}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {"run": cmd_run, "table": cmd_table, "verify": cmd_verify, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgns", description="DG incompressible Navier-Stokes solver",
                                     allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"run": "single run at the first dt; writes the step history",
             "table": "dt sweep; writes the convergence table",
             "verify": "fast property suite; nonzero exit on any failure",
             "export": "single run; writes VTU field files"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, allow_abbrev=False)
        _config_flags(p)
        if name == "export":
            p.add_argument("--every", type=int, default=0, help="also write every N steps")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](config, args)


if __name__ == "__main__":
    sys.exit(main())
