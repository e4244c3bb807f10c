"""Command-line interface: ``fdepi <subcommand> --seed N [options]``.

Exit codes: 0 on success, 1 on invalid configuration or missing input,
2 on a numerical failure (the message names the module and operation).
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps floating-point results independent of the machine
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
import warnings  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .pipeline import STEPS, ArtifactWriter, Config, ConfigError, Context, coerce, parse_config_file  # noqa: E402

__all__ = ["main", "build_parser", "resolve_config"]

log = logging.getLogger("fdepi")

# flag -> config field, with help text; shared by every subcommand
_OPTIONS = [
    ("--seed", "seed", "master random seed (required; flag or config file)"),
    ("--out", "out", "output directory (default: fdepi_out)"),
    ("--data-dir", "data_dir", "directory holding the input CSVs (default: $FDEPI_FIXTURE_DIR or bundled)"),
    ("--dpc", "dpc", "civil-protection CSV"),
    ("--istat", "istat", "all-cause deaths CSV"),
    ("--mobility", "mobility", "mobility CSV"),
    ("--population", "population", "population CSV"),
    ("--covariates", "covariates", "covariate CSV"),
    ("--dataset", "dataset", "mortality data set: DPC, ISTAT or MAX (default MAX)"),
    ("--k", "k", "number of motifs (default 2)"),
    ("--length", "length", "motif length in days (default 65)"),
    ("--restarts", "restarts", "probKMA restarts (default 20)"),
    ("--derivative", "derivative", "use first-difference distances in probKMA (true/false)"),
    ("--permutations", "permutations", "IWT permutations B (default 1000)"),
    ("--smooth-lambdas", "smooth_lambdas", "comma-separated smoothing grid (default 41 log-spaced values)"),
    ("--reg-basis", "reg_basis", "B-spline functions per margin in regressions (default 15)"),
    ("--delta", "delta", "Cheng-Church adjusted H-score threshold (default 0.1)"),
    ("--max-biclusters", "max_biclusters", "biclusters to extract (default 2)"),
    ("--cc-alpha", "cc_alpha", "Cheng-Church multiple-deletion factor (default 1.2)"),
    ("--alpha", "alpha", "elastic-net mixing alpha (default 0.5)"),
    ("--variance-target", "variance_target", "FPC variance share (default 0.95)"),
    ("--n-lambda", "n_lambda", "selection path length (default 100)"),
    ("--top-k", "top_k", "number of top covariates reported (default 5)"),
    ("--threads", "threads", "worker threads (default $FDEPI_THREADS or 1); outputs do not depend on it"),
]

_HELP = {
    "ingest": "build raw curves and the covariate table",
    "smooth": "GCV-smoothed curves",
    "motifs": "probKMA motifs, memberships and shifts",
    "align": "cut mortality, mobility and positivity to the aligned windows",
    "iwt": "interval-wise test between the two groups",
    "depth": "functional boxplot and signed depth ranking",
    "regress-ff": "function-on-function regressions on mobility and positivity",
    "regress-fs": "marginal function-on-scalar regressions",
    "bicluster": "Cheng-Church biclusters of the covariates",
    "hclust": "complete-linkage dendrograms of regions and covariates",
    "pca": "principal components of the selected covariates",
    "vif": "variance inflation factors",
    "select": "group elastic-net covariate selection",
    "pipeline": "run every step in order",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of 'key = value' lines; flags take precedence")
    for flag, dest, text in _OPTIONS:
        common.add_argument(flag, dest=dest, default=None, help=text)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="fdepi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in list(STEPS) + ["pipeline"]:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    """Defaults < config file < flags < (threads only) environment fallback."""
    values = parse_config_file(args.config) if args.config else {}
    for _, dest, _ in _OPTIONS:
        raw = getattr(args, dest)
        if raw is not None:
            values[dest] = coerce(dest, raw)
    if "threads" not in values and os.environ.get("FDEPI_THREADS"):
        values["threads"] = coerce("threads", os.environ["FDEPI_THREADS"])
    if "seed" not in values:
        raise ConfigError("seed", "is required (pass --seed or set 'seed' in the config file)")
    return Config(**values)


def _write_manifest(writer: ArtifactWriter, config: Config, command: str, timings) -> None:
    lines = [f"command: {command}", f"config_sha256: {config.digest()}", f"seed: {config.seed}",
             f"threads: {config.threads}", "config:"]
    lines += ["  " + line for line in config.canonical().splitlines()]
    lines.append("steps:")
    lines += [f"  {name}: {sec:.3f} s" for name, sec in timings]
    lines.append("artifacts:")
    lines += [f"  {name}" for name in sorted(set(writer.written))]
    writer.write_bytes("run_manifest.txt", ("\n".join(lines) + "\n").encode("utf-8"))


def run(command: str, config: Config) -> list:
    """Execute ``command`` (a step name or ``pipeline``); return step timings."""
    config.check_inputs()
    ctx = Context(config)
    writer = ArtifactWriter(config.out)
    names = list(STEPS) if command == "pipeline" else [command]
    timings = []
    for name in names:
        fn, label = STEPS[name]
        t0 = time.perf_counter()
        log.info("running %s", name)
        try:
            fn(ctx, writer)
        except (ConfigError, FileNotFoundError):
            raise
        except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
            raise NumericalFailure(label, exc) from exc
        timings.append((name, time.perf_counter() - t0))
    _write_manifest(writer, config, command, timings)
    return timings


class NumericalFailure(Exception):
    def __init__(self, label: str, exc: Exception):
        super().__init__(f"numerical failure in {label}: {exc}")
        self.label = label


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="fdepi: %(message)s")
    if not args.verbose:
        warnings.filterwarnings("ignore", category=UserWarning)
    try:
        config = resolve_config(args)
        run(args.command, config)
    except NumericalFailure as exc:
        print(f"fdepi: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"fdepi: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
