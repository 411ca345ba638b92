"""Command-line front end: ``levy-mv <subcommand> [options]``.

Exit codes: 0 success, 1 configuration or usage error, 2 numeric failure
(non-finite state, degenerate rate fit, failed invariant probe).
"""

import argparse
import json
import logging
import math
import re
import sys
from pathlib import Path

from .errors import ConfigError, DegenerateInputError, InvalidInputError, NumericOverflowError
from .experiments import (DESK_SCALE_N, PAPER_SCALE_N, ExperimentConfig, ExperimentError,
                          emit_manifest, env_seed, run_experiment, write_manifest,
                          write_results)
from .invariants import run_probes

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

SUBCOMMANDS = ("simulate", "convergence", "moments", "steps", "chaos", "validate")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for numeric failures here
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _parse_levels(text):
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo < 1 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad level range {text!r}")
        return list(range(lo, hi + 1))
    try:
        levels = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like 'a..b' or 'a,b,c', got {text!r}")
    if not levels or min(levels) < 1:
        raise argparse.ArgumentTypeError(f"levels must be positive, got {text!r}")
    return levels


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def build_parser():
    parser = _Parser(prog="levy-mv", description=(
        "Tamed-adaptive Euler-Maruyama simulation of Levy-driven McKean-Vlasov SDEs."))
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    helps = {
        "simulate": "simulate one particle system and write its terminal states",
        "convergence": "coupled two-level MSE per level and the fitted strong rate beta",
        "moments": "moment estimates E|X_t|^p at integer times",
        "steps": "mean adaptive step counts per level",
        "chaos": "W2 deviation from a large reference system as N grows",
        "validate": "probe the step-size and taming conditions on random points",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", type=Path, help="JSON config file (defaults: builtin "
                       "paper-ptvd model at desk scale)")
        p.add_argument("--seed", type=_seed, help="master seed (fallback: LEVY_MV_SEED, "
                       "then the config file)")
        p.add_argument("--out", type=Path, help=f"output CSV path (default: {name}.csv)")
        p.add_argument("--threads", type=_positive_int, default=1,
                       help="worker threads for repetitions (default 1)")
        p.add_argument("--paper-scale", action="store_true",
                       help=f"use N={PAPER_SCALE_N} particles instead of {DESK_SCALE_N}")
        p.add_argument("--levels", type=_parse_levels, help="levels as 'a..b' or 'a,b,c'")
        p.add_argument("--reps", type=_positive_int, help="Monte Carlo repetitions M")
        p.add_argument("--particles", type=_positive_int, help="particle count N")
        if name == "convergence":
            p.add_argument("--svg", type=Path, help="also write a log2(MSE) plot as SVG")
        if name == "validate":
            p.add_argument("--points", type=_positive_int, default=10_000,
                           help="random probe points (default 10000)")
    return parser


def resolve_config(args, command):
    """Merge the config file, CLI overrides and the env-var seed fallback."""
    if args.config is not None:
        config = ExperimentConfig.load(args.config)
        file_has_seed = "seed" in _raw_keys(args.config)
    else:
        config = ExperimentConfig()
        file_has_seed = False
    changes = {}
    if command != "validate":
        changes["experiment"] = command
    if args.seed is not None:
        changes["seed"] = args.seed
    elif not file_has_seed:
        fallback = env_seed()
        if fallback is not None:
            changes["seed"] = fallback
    if args.paper_scale:
        changes["N"] = PAPER_SCALE_N
    if args.particles is not None:
        changes["N"] = args.particles
    if args.reps is not None:
        changes["M"] = args.reps
    if args.levels is not None:
        changes["levels"] = args.levels
    return config.replace(**changes) if changes else config


def _raw_keys(path):
    with open(path) as fh:
        return set(json.load(fh))


def write_svg(table, fit, path):
    """Scatter of log2 MSE against level with the fitted line."""
    levels = [float(v) for v in table.column("level")]
    ys = [float(v) for v in table.column("log2_mse")]
    fitted = [float(v) for v in table.column("fitted_log2_mse")]
    width, height, pad = 480, 320, 50
    x_lo, x_hi = min(levels) - 0.5, max(levels) + 0.5
    finite = [v for v in ys + fitted if math.isfinite(v)]
    y_lo, y_hi = min(finite) - 0.5, max(finite) + 0.5

    def sx(v):
        return pad + (v - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline fill="none" stroke="steelblue" points="'
        + " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(levels, fitted)) + '"/>',
    ]
    for x, y in zip(levels, ys):
        if math.isfinite(y):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="crimson"/>')
    for x in levels:
        parts.append(f'<text x="{sx(x):.2f}" y="{height - pad + 18}" font-size="12" '
                     f'text-anchor="middle">{int(x)}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 8}" font-size="13" '
                 'text-anchor="middle">level</text>')
    parts.append(f'<text x="14" y="{height / 2}" font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 14 {height / 2})">log2 MSE</text>')
    parts.append(f'<text x="{width - pad}" y="{pad - 12}" font-size="13" text-anchor="end">'
                 f'beta = {fit.beta:.3f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _validate(config, args):
    model = config.build_model()
    results = run_probes(model, n_points=args.points, seed=config.seed, h0=config.h0)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.condition}: {r.n_violations}/{r.n_checked} violations "
              f"(worst lhs/rhs {r.worst_ratio:.6g})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                         format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        config = resolve_config(args, command)
        if command == "validate":
            return _validate(config, args)
        out = args.out or Path(f"{command}.csv")
        try:
            table, fit = run_experiment(config, threads=args.threads)
        except DegenerateInputError as exc:
            table = getattr(exc, "table", None)
            if table is not None:
                write_results(table, out)
                write_manifest(emit_manifest(config, table), out)
            print(f"levy-mv: degenerate rate fit: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        write_results(table, out)
        write_manifest(emit_manifest(config, table, table.provenance.get("wall_time_seconds")),
                       out)
        if fit is not None:
            print(f"beta = {fit.beta:.6f}  intercept = {fit.intercept:.6f}  "
                  f"residual_rms = {fit.residual_norm:.6f}")
            if getattr(args, "svg", None) is not None:
                write_svg(table, fit, args.svg)
        print(f"wrote {out}")
        return EXIT_OK
    except (ConfigError, InvalidInputError, OSError) as exc:
        print(f"levy-mv: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericOverflowError, ExperimentError) as exc:
        print(f"levy-mv: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
