"""Command-line interface: ``cddfekf {sweep,run,simulate,selftest}``.

Exit codes: 0 success, 1 configuration or usage error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config
from .dataset import read_dataset, write_dataset
from .errors import ConfigError
from .harness import TruthData, generate_truth, make_model, run_one, sweep
from .report import emit_reports, format_armse
from .selftest import run_all
from .variants import FILTER_IDS

EXIT_OK, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment configuration file")
    p.add_argument("--mc", type=int, dest="mc_runs", help="number of Monte Carlo runs")
    p.add_argument("--seed", type=int, dest="master_seed", help="master RNG seed")
    p.add_argument("--alpha", type=float, help="sample spread parameter")
    p.add_argument("--l-em", type=int, dest="l_em", help="substeps per interval for EM filters")
    p.add_argument("--l-it", type=int, dest="l_it", help="substeps per interval for IT filters")
    p.add_argument("--turn-rate-units", choices=("rad", "deg"), dest="turn_rate_units")
    p.add_argument("--truth-scheme", choices=("em", "it"), dest="truth_scheme")
    p.add_argument("--truth-initial", choices=("sampled", "mean"), dest="truth_initial")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cddfekf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", help="run the full benchmark and write reports")
    _add_config_args(p)
    p.add_argument("--gammas", type=float, nargs="+", dest="gamma_list", help="decreasing gamma values")
    p.add_argument("--filters", nargs="+", help=f"filter ids (default all of {len(FILTER_IDS)})")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-svg", action="store_true", help="skip SVG plots")
    p.add_argument(
        "--skip-after-failure", action="store_true",
        help="do not rerun a filter at smaller gamma once it has failed",
    )

    p = sub.add_parser("run", help="run one filter at one gamma and print status and ARMSE")
    _add_config_args(p)
    p.add_argument("--gamma", type=float, help="ill-conditioning parameter (taken from --data if given)")
    p.add_argument("--filter", required=True, choices=FILTER_IDS, metavar="FILTER")
    p.add_argument("--data", help="dataset written by 'simulate'")

    p = sub.add_parser("simulate", help="write a truth and measurement dataset")
    _add_config_args(p)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--out", required=True, help="output file")

    sub.add_parser("selftest", help="run the linear-oracle and array-identity checks")
    return parser


_CONFIG_KEYS = (
    "mc_runs", "master_seed", "alpha", "l_em", "l_it", "turn_rate_units", "truth_scheme",
    "truth_initial", "gamma_list", "filters",
)


def _config_from(args, **extra):
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    overrides.update(extra)
    return load_config(args.config, overrides)


def _cmd_sweep(args) -> int:
    cfg = _config_from(args)
    start = time.perf_counter()
    table = sweep(cfg, skip_after_failure=args.skip_after_failure)
    bundle = emit_reports(table, args.out, svg=not args.no_svg)
    print(f"sweep finished in {time.perf_counter() - start:.1f} s")
    for path in bundle.__dict__.values():
        if path is not None:
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    if args.data:
        ds = read_dataset(args.data)
        if args.gamma is not None and not np.isclose(args.gamma, ds.gamma, rtol=1e-12, atol=0):
            raise ConfigError("--gamma disagrees with the dataset header", "gamma")
        units = ds.meta.get("turn_rate_units")
        cfg = _config_from(args, mc_runs=ds.states.shape[0], turn_rate_units=args.turn_rate_units or units)
        gamma = ds.gamma
        model = make_model(cfg, gamma)
        data = TruthData(ds.times, ds.states, np.zeros_like(ds.z))
        z = ds.z
    else:
        if args.gamma is None:
            raise ConfigError("--gamma is required without --data", "gamma")
        cfg = _config_from(args)
        gamma = args.gamma
        model = make_model(cfg, gamma)
        data = generate_truth(cfg)
        z = data.measurements(model)
    cfg = cfg.with_overrides(filters=(args.filter,), gamma_list=(gamma,))
    row = run_one(args.filter, model, data, z, cfg, gamma)
    print(f"filter {row.filter}")
    print(f"gamma {gamma!r}")
    print(f"status {row.status}")
    if row.completed:
        print(f"armse {row.armse!r} ({format_armse(row.armse)})")
    else:
        print(f"failed_step {row.failed_step}")
        print(f"cause {row.cause}")
    print(f"cpu_seconds {row.cpu_seconds:.6f}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _config_from(args)
    model = make_model(cfg, args.gamma)
    data = generate_truth(cfg)
    meta = {
        "model": "coordinated-turn",
        "gamma": float(args.gamma),
        "seed": cfg.master_seed,
        "sample_period": float(cfg.sample_period),
        "horizon": float(cfg.horizon),
        "turn_rate_units": cfg.turn_rate_units,
    }
    path = write_dataset(args.out, meta, data.times, data.states, data.measurements(model))
    print(f"wrote {path} ({cfg.mc_runs} runs, {len(data.times)} steps)")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    ok = True
    for result in run_all():
        print(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}")
        ok &= result.passed
    return EXIT_OK if ok else EXIT_INTERNAL


COMMANDS = {"sweep": _cmd_sweep, "run": _cmd_run, "simulate": _cmd_simulate, "selftest": _cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
