"""Command line entry point: ``fedsvd {run,attack,compare,gen}``.

Exit status: 0 success, 1 user error (bad flags, config or input), 2 numerical
failure (rank deficiency, singular systems).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DecodeError, FedSVDError, InsufficientRank
from .experiment import (
    ExperimentConfig,
    compare_algorithms,
    config_from_mapping,
    load_data,
    read_config_file,
    run_attack_demo,
    run_repeats,
)
from .partition import save_matrix
from .protocol import ALGORITHMS

# flag dest -> config key; only flags the user actually passed override the file
_FLAG_KEYS = (
    "sites", "algorithm", "k", "epsilon", "max_iterations", "c", "i_prime", "seed", "repeats",
    "ortho_mode", "out", "input", "format", "skip_header", "standardize", "data", "m", "n", "rank",
    "decay", "data_seed",
)


def _add_common(p: argparse.ArgumentParser) -> None:
    d = argparse.SUPPRESS
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--sites", default=d, help="site count, or comma-separated relative sizes")
    p.add_argument("--algorithm", default=d, choices=ALGORITHMS)
    p.add_argument("--k", type=int, default=d, help="number of singular vectors")
    p.add_argument("--epsilon", type=float, default=d, help="convergence tolerance, 0 disables the test")
    p.add_argument("--max-iter", dest="max_iterations", type=int, default=d)
    p.add_argument("--c", type=int, default=d, help="oversampling factor for approximate init")
    p.add_argument("--i-prime", dest="i_prime", type=int, default=d, help="warm-up iterations for RANDOMIZED")
    p.add_argument("--seed", type=int, default=d, help="seed of the random start matrix")
    p.add_argument("--repeats", type=int, default=d)
    p.add_argument("--ortho-mode", dest="ortho_mode", default=d, choices=("none", "per-iteration", "final-only"))
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--input", default=d, help="matrix file, features x samples")
    p.add_argument("--format", default=d, choices=("fsvd", "csv"))
    p.add_argument("--skip-header", dest="skip_header", action="store_true", default=d)
    p.add_argument("--standardize", action="store_true", default=d, help="center and scale every feature")
    p.add_argument("--data", default=d, choices=("spectrum", "standin"), help="synthetic generator")
    p.add_argument("--m", type=int, default=d, help="synthetic feature count")
    p.add_argument("--n", type=int, default=d, help="synthetic sample count")
    p.add_argument("--rank", type=int, default=d, help="synthetic rank, 0 for full")
    p.add_argument("--decay", type=float, default=d, help="ratio between consecutive singular values")
    p.add_argument("--data-seed", dest="data_seed", type=int, default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsvd", description="Federated SVD experiments over a simulated star network.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one algorithm and record angles and costs")
    _add_common(run)
    attack = sub.add_parser("attack", help="reconstruct the feature covariance from an aggregator transcript")
    _add_common(attack)
    compare = sub.add_parser("compare", help="tabulate iterations and traffic for several algorithms")
    _add_common(compare)
    compare.add_argument("--algorithms", help="comma-separated list; default: the configured one")
    compare.add_argument("--configs", nargs="*", default=(), help="extra config files, one row each")
    gen = sub.add_parser("gen", help="write a synthetic matrix to a file")
    _add_common(gen)
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = config_from_mapping(values)
    flags = {key: getattr(args, key) for key in _FLAG_KEYS if hasattr(args, key)}
    return config_from_mapping({k: _flag_text(v) for k, v in flags.items()}, base=cfg)


def _flag_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _cmd_run(cfg: ExperimentConfig) -> int:
    for r, report in enumerate(run_repeats(cfg)):
        angle = float(np.max(report.final_angles))
        state = "converged" if report.converged else "not converged"
        print(
            f"[{r}] {report.algorithm}: {report.iterations} iterations ({state}), "
            f"max final angle {angle:.3g} deg, {report.ledger['floats']} floats, {report.ledger['bytes']} bytes"
        )
    return 0


def _cmd_attack(cfg: ExperimentConfig) -> int:
    try:
        report = run_attack_demo(cfg)
    except InsufficientRank as exc:
        print(
            f"attack failed: transcript yields {exc.columns_used} of {exc.required} independent equations; "
            f"{cfg.algorithm} withholds enough updates to keep the covariance hidden"
        )
        if cfg.out:
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            (Path(cfg.out) / "attack_report.txt").write_text(
                f"status=insufficient_rank\ncolumns_used={exc.columns_used}\nrequired={exc.required}\n",
                encoding="utf-8",
            )
        return 0
    print(
        f"reconstructed K from {report.columns_used} columns: pearson={report.pearson:.6f}, "
        f"elapsed={report.elapsed:.4f} s"
    )
    return 0


def _cmd_compare(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    cfgs = []
    if args.algorithms:
        for name in args.algorithms.split(","):
            cfgs.append(replace(cfg, algorithm=name.strip()))
    else:
        cfgs.append(cfg)
    for path in args.configs:
        cfgs.append(config_from_mapping(read_config_file(path)))
    out = Path(cfg.out) / "compare.csv" if cfg.out else None
    rows = compare_algorithms(cfgs, out)
    header = list(rows[0])
    print("  ".join(f"{h:>15}" for h in header))
    for row in rows:
        print("  ".join(f"{row[h]!s:>15}" for h in header))
    return 0


def _cmd_gen(cfg: ExperimentConfig) -> int:
    if not cfg.out:
        raise ConfigError("gen needs --out <file>")
    a = load_data(replace(cfg, input=None))
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    save_matrix(cfg.out, a, cfg.format)
    print(f"wrote {a.shape[0]}x{a.shape[1]} matrix to {cfg.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = _config(args)
        if args.command == "run":
            return _cmd_run(cfg)
        if args.command == "attack":
            return _cmd_attack(cfg)
        if args.command == "compare":
            return _cmd_compare(cfg, args)
        return _cmd_gen(cfg)
    except (ConfigError, DecodeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FedSVDError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
