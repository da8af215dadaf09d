"""Command-line entry point: ``obslandscape {run,sweep,topology,distance}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .distance import TableSet
from .harness import SWEEP_AXES, ConfigError, load_config, run_batch, run_sweep
from .topology import (DEFAULT_CAP, EnumerationCapError, landscape, table_distance,
                       tables_to_json)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3
EXIT_ALL_FAILED = 4

_CLASS_LABEL = {"global_max": "max", "global_min": "min", "saddle": "saddle"}


def parse_csv_floats(text: str) -> np.ndarray:
    try:
        vals = [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc
    if not vals:
        raise ConfigError("empty number list")
    return np.asarray(vals)


def read_unitary(path) -> np.ndarray:
    """Row-major CSV, each row ``re_0, im_0, re_1, im_1, ...``."""
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read unitary from {path}: {exc}") from exc
    n = raw.shape[0]
    if raw.shape[1] != 2 * n:
        raise ConfigError(f"expected {2 * n} columns of interleaved re,im pairs, got {raw.shape[1]}")
    return raw[:, 0::2] + 1j * raw[:, 1::2]


def _print_summary(summary, out):
    def fmt(x, spec=".4g"):
        return "n/a" if x is None else format(x, spec)
    print(f"runs={summary.n_runs} converged={summary.n_converged} failed={summary.n_failed} "
          f"exhausted={summary.n_exhausted}", file=out)
    print(f"MSE={fmt(summary.mean_search_effort, '.1f')} "
          f"D_sadd_min={fmt(summary.mean_d_sadd_min, '.3e')} "
          f"D_mean_sadd_min={fmt(summary.mean_d_mean_sadd_min, '.3e')} "
          f"D_sadd_fail={fmt(summary.mean_d_sadd_fail, '.3e')}", file=out)


def cmd_run(args) -> int:
    spec = load_config(args.config)
    summary = run_batch(spec, args.out, workers=args.workers, cap=args.cap)
    _print_summary(summary, sys.stdout)
    return EXIT_ALL_FAILED if summary.n_converged == 0 else EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_config(args.config)
    values = parse_csv_floats(args.values)
    summaries = run_sweep(spec, args.axis, values, args.out, workers=args.workers, cap=args.cap)
    for v, s in zip(values, summaries):
        print(f"[{args.axis}={v:g}]")
        _print_summary(s, sys.stdout)
    return EXIT_ALL_FAILED if all(s.n_converged == 0 for s in summaries) else EXIT_OK


def cmd_topology(args) -> int:
    rho, theta = parse_csv_floats(args.rho), parse_csv_floats(args.theta)
    if rho.size != theta.size:
        raise ConfigError("rho and theta must have the same length")
    _, _, tables = landscape(rho, theta, cap=args.cap)
    if args.json:
        doc = {"tables": json.loads(tables_to_json(tables))}
        doc["pairwise_distances"] = [[table_distance(a, b) for b in tables] for a in tables]
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    for t in tables:
        print(f"C{t.index + 1}  J={t.critical_value:.15g}  {_CLASS_LABEL[t.classification]}")
        for row in t.overlaps:
            print("  " + " ".join(str(int(x)) for x in row))
    print("pairwise table distances:")
    for a in tables:
        print("  " + " ".join(str(table_distance(a, b)) for b in tables))
    return EXIT_OK


def cmd_distance(args) -> int:
    rho, theta = parse_csv_floats(args.rho), parse_csv_floats(args.theta)
    u = read_unitary(args.unitary)
    if rho.size != u.shape[0] or theta.size != u.shape[0]:
        raise ConfigError("operator length does not match the unitary")
    rho_spec, theta_spec, tables = landscape(rho, theta, cap=args.cap)
    try:
        d = TableSet(tables, rho_spec, theta_spec).distances(u)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for t, x in zip(tables, d):
        print(f"C{t.index + 1}\t{t.classification}\t{x:.12e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obslandscape",
                                description="Saddles on observable control landscapes.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, batch: bool):
        sp.add_argument("--cap", type=int, default=DEFAULT_CAP,
                        help="maximum number of contingency tables to enumerate")
        if batch:
            sp.add_argument("--config", required=True, help="JSON case configuration")
            sp.add_argument("--out", default="runs", help="output directory (default: runs)")
            sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("run", help="run one batch of searches")
    common(sp, True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run one batch per value of a parameter")
    common(sp, True)
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", required=True, help="comma-separated axis values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("topology", help="list critical submanifolds of a landscape")
    common(sp, False)
    sp.add_argument("--rho", required=True, help="diagonal of rho0, comma-separated")
    sp.add_argument("--theta", required=True, help="diagonal of theta, comma-separated")
    sp.add_argument("--json", action="store_true", help="emit JSON instead of text")
    sp.set_defaults(func=cmd_topology)

    sp = sub.add_parser("distance", help="distance of a unitary to every critical submanifold")
    common(sp, False)
    sp.add_argument("--unitary", required=True, help="CSV of interleaved re,im pairs")
    sp.add_argument("--rho", required=True)
    sp.add_argument("--theta", required=True)
    sp.set_defaults(func=cmd_distance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EnumerationCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
