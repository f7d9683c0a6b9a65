"""``gsketch`` command-line entry point."""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .exceptions import ConfigError, NumericalError
from .hsop import format_tabulated

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="gsketch", description="Randomized SVD experiments with Gaussian-process sketches.")
    parser.add_argument("command", choices=ex.COMMANDS)
    parser.add_argument("--seed", type=int, help="RNG seed (required for every command)")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--out", help="output path (CSV, or JSON for bound-check); stdout if omitted")
    parser.add_argument("--n", type=int, help="matrix size, grid size or expansion truncation")
    parser.add_argument("--k-max", type=int, dest="k_max")
    parser.add_argument("--p", type=int)
    parser.add_argument("--ell", type=float)
    parser.add_argument("--nu", type=float)
    parser.add_argument("--kernel", help="cossin, bessel or a tabulated kernel file")
    parser.add_argument("--cov", help="comma-separated covariances, e.g. sqexp:0.01,jacobi:3")
    parser.add_argument("--config", help="JSON file with any of the above; flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args):
    file_values = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    if file_values.get("seed") is None and flags.get("seed") is None:
        raise ConfigError("--seed is required")
    return ex.ExperimentConfig.merge(args.command, file_values, flags)


def _check_finite(rows):
    for row in rows:
        for key, value in row.items():
            if isinstance(value, float) and not np.isfinite(value):
                raise NumericalError(f"non-finite value in column {key!r}")


def format_csv(rows, resolved):
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(resolved, sort_keys=True) + "\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _emit(text, path):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


DEFAULTS = {
    "matrix-prior": {"n": 500, "trials": 10},
    "hs-convergence": {"kernel": "bessel", "k_max": 100, "trials": 10, "cov": "all"},
    "gp-samples": {"n": 500, "count": 5, "points": 401},
}


def run(cfg):
    if cfg.command == "bound-check":
        report = ex.run_bound_check(cfg)
        _emit(json.dumps(report, sort_keys=True, indent=2) + "\n", cfg.out)
        return EXIT_OK
    if cfg.command == "kernel-learn":
        kernel, learned, summary = ex.run_kernel_learn(cfg)
        if not np.isfinite(summary["rel_error"]):
            raise NumericalError("learned kernel has a non-finite error")
        line = json.dumps(summary, sort_keys=True)
        if cfg.out:
            Path(cfg.out).write_text(format_tabulated(learned.values, learned.grid_x, learned.grid_y),
                                     encoding="utf-8")
            Path(cfg.out).with_suffix(".json").write_text(line + "\n", encoding="utf-8")
        sys.stdout.write(line + "\n")
        return EXIT_OK
    runner = {
        "matrix-prior": ex.run_matrix_prior,
        "hs-convergence": ex.run_hs_convergence,
        "gp-samples": ex.run_gp_samples,
    }[cfg.command]
    rows = runner(cfg)
    _check_finite(rows)
    _emit(format_csv(rows, cfg.resolved(**DEFAULTS.get(cfg.command, {}))), cfg.out)
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger("gsketch").setLevel(logging.INFO)
        return run(load_config(args))
    except ConfigError as exc:
        print(f"gsketch: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gsketch: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
