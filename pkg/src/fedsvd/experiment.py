"""Batch runs: convergence trajectories, cost summaries and the attack demo."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attack import AttackTranscript, ReconstructionReport, export_transcript, reconstruct_covariance
from .errors import ConfigError, NotConverged
from .linalg import ConvergenceCriterion, principal_angles, reference_svd, sign_normalize
from .partition import (
    SyntheticSpec,
    generate_standin,
    generate_synthetic,
    geometric_spectrum,
    load_matrix,
    save_matrix,
    split_columns,
)
from .protocol import ALGORITHMS, ORTHO_MODES, ProtocolConfig, TranscriptRecorder, predicted_float_cost, run_algorithm
from .transport import LoopbackTransport

ATTACK_MAX_FEATURES = 64


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "RI-FULL"
    k: int = 5
    sites: tuple = (1.0, 1.0, 1.0)
    epsilon: float = 1e-9
    max_iterations: int = 1000
    c: int = 2
    i_prime: int = 10
    seed: int = 0
    repeats: int = 1
    ortho_mode: str = "final-only"
    out: Optional[str] = None
    # data source: a file, or a synthetic matrix
    input: Optional[str] = None
    format: str = "fsvd"
    skip_header: bool = False
    standardize: bool = False
    data: str = "spectrum"  # "spectrum" (exact singular values) or "standin" (tabular-like)
    m: int = 100
    n: int = 80
    rank: int = 0  # 0 means min(m, n)
    decay: float = 0.85
    data_seed: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        if self.ortho_mode not in ORTHO_MODES:
            raise ConfigError(f"ortho_mode must be one of {', '.join(ORTHO_MODES)}")
        for name in ("k", "max_iterations", "c", "i_prime", "repeats", "m", "n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.rank < 0 or not 0 <= self.epsilon < 1 or not 0 < self.decay <= 1:
            raise ConfigError("rank >= 0, 0 <= epsilon < 1 and 0 < decay <= 1 required")
        if not self.sites or any(w <= 0 or not math.isfinite(w) for w in self.sites):
            raise ConfigError("site weights must be positive")
        if self.format not in ("fsvd", "csv") or self.data not in ("spectrum", "standin"):
            raise ConfigError("format must be fsvd|csv and data spectrum|standin")
        if not 0 <= self.seed < 1 << 64 or not 0 <= self.data_seed < 1 << 64:
            raise ConfigError("seeds must be 64-bit unsigned integers")

    def protocol(self, seed: Optional[int] = None) -> ProtocolConfig:
        return ProtocolConfig(
            k=self.k,
            crit=ConvergenceCriterion(self.epsilon, self.max_iterations),
            ortho_mode=self.ortho_mode,
            c=self.c,
            i_prime=self.i_prime,
            seed=self.seed if seed is None else seed,
        )


def parse_sites(text: str) -> tuple:
    """``"3"`` means three equal sites; ``"1,2,1"`` gives relative sizes."""
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    try:
        if len(parts) == 1 and float(parts[0]).is_integer():
            count = int(float(parts[0]))
            if count < 1:
                raise ConfigError("site count must be positive")
            return (1.0,) * count
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse sites {text!r}") from None


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def config_from_mapping(values: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Build a config from string values; unknown keys and bad values raise ConfigError."""
    base = base or ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    updates = {}
    for raw_key, raw in values.items():
        key = raw_key.strip().replace("-", "_")
        if key == "max_iter":
            key = "max_iterations"
        if key not in types:
            raise ConfigError(f"unknown config key {raw_key!r}")
        text = str(raw).strip()
        try:
            if key == "sites":
                updates[key] = parse_sites(text)
            elif key in ("input", "out"):
                updates[key] = text or None
            elif types[key] in ("int",):
                updates[key] = int(text)
            elif types[key] in ("float",):
                updates[key] = float(text)
            elif types[key] in ("bool",):
                updates[key] = _BOOL[text.lower()]
            else:
                updates[key] = text
        except (ValueError, KeyError):
            raise ConfigError(f"bad value for {key}: {text!r}") from None
    return replace(base, **updates)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_data(cfg: ExperimentConfig) -> np.ndarray:
    """The global ``m x n`` matrix (features x samples) described by ``cfg``."""
    if cfg.input:
        a = load_matrix(cfg.input, cfg.format, skip_header=cfg.skip_header)
    elif cfg.data == "standin":
        a = generate_standin(cfg.n, cfg.m, seed=cfg.data_seed)
    else:
        rank = cfg.rank or min(cfg.m, cfg.n)
        a = generate_synthetic(SyntheticSpec(cfg.m, cfg.n, geometric_spectrum(rank, ratio=cfg.decay), cfg.data_seed))
    if cfg.standardize:
        a = standardize_rows(a)
    return a


def standardize_rows(a: np.ndarray) -> np.ndarray:
    """Center every feature (row) and scale it to unit variance; constant rows stay zero."""
    centered = a - a.mean(axis=1, keepdims=True)
    sd = centered.std(axis=1, keepdims=True)
    return centered / np.where(sd > 0, sd, 1.0)


@dataclass
class RunReport:
    algorithm: str
    angles: np.ndarray  # iterations x k, degrees vs the reference
    final_angles: np.ndarray
    iterations: int
    converged: bool
    sigma: np.ndarray
    ledger: dict
    predicted_floats: int
    matrix_seconds: float
    transport_seconds: float
    shape: tuple
    sites: int
    h: np.ndarray = field(repr=False, default=None)
    g: np.ndarray = field(repr=False, default=None)

    def summary_lines(self) -> list[str]:
        lines = [
            f"algorithm={self.algorithm}",
            f"m={self.shape[0]}",
            f"n={self.shape[1]}",
            f"sites={self.sites}",
            f"k={len(self.sigma)}",
            f"iterations={self.iterations}",
            f"converged={str(self.converged).lower()}",
            f"floats={self.ledger['floats']}",
            f"floats_client_to_agg={self.ledger['floats_client_to_agg']}",
            f"floats_agg_to_clients={self.ledger['floats_agg_to_clients']}",
            f"bytes={self.ledger['bytes']}",
            f"bytes_float64={self.ledger['bytes_float64']}",
            f"messages={self.ledger['messages']}",
            f"rounds={self.ledger['rounds']}",
            f"predicted_floats={self.predicted_floats}",
        ]
        lines += [f"sigma_{j + 1}={float(s)!r}" for j, s in enumerate(self.sigma)]
        lines += [f"final_angle_{j + 1}={float(x)!r}" for j, x in enumerate(self.final_angles)]
        lines.append(f"elapsed_ms={self.matrix_seconds * 1e3:.3f}")
        return lines

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        k = len(self.sigma)
        rows = ["iteration," + ",".join(f"angle_{j + 1}" for j in range(k))]
        for i, row in enumerate(self.angles, start=1):
            rows.append(f"{i}," + ",".join(repr(float(x)) for x in row))
        (directory / "angles.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        (directory / "summary.txt").write_text("\n".join(self.summary_lines()) + "\n", encoding="utf-8")
        (directory / "timing.txt").write_text(
            f"matrix_ms={self.matrix_seconds * 1e3:.3f}\ntransport_ms={self.transport_seconds * 1e3:.3f}\n",
            encoding="utf-8",
        )
        save_matrix(directory / "h.fsvd", self.h)
        save_matrix(directory / "g.fsvd", self.g)
        save_matrix(directory / "sigma.fsvd", self.sigma[None, :])


def run_experiment(cfg: ExperimentConfig, *, a: Optional[np.ndarray] = None, seed: Optional[int] = None) -> RunReport:
    """One run of ``cfg.algorithm`` against the oracle SVD of the unpartitioned data."""
    if a is None:
        a = load_data(cfg)
    ref = reference_svd(a, cfg.k)
    p = split_columns(a, cfg.sites)
    t = LoopbackTransport(p.num_sites)
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        res = run_algorithm(cfg.algorithm, p, cfg.protocol(seed), t, keep_history=True)
    total = time.perf_counter() - start
    history = res.h_history[: res.iterations]
    angles = np.array([principal_angles(h, ref.h) for h in history]).reshape(len(history), cfg.k)
    h, signs = sign_normalize(res.h)
    return RunReport(
        algorithm=cfg.algorithm,
        angles=angles,
        final_angles=principal_angles(res.h, ref.h),
        iterations=res.iterations,
        converged=res.converged,
        sigma=res.sigma,
        ledger=t.ledger.as_dict(),
        predicted_floats=predicted_float_cost(
            cfg.algorithm,
            iterations=res.iterations,
            sites=p.num_sites,
            k=cfg.k,
            m=p.m,
            c=cfg.c,
            i_prime=cfg.i_prime,
            ortho_mode=cfg.ortho_mode,
        ),
        matrix_seconds=res.matrix_seconds,
        transport_seconds=max(total - res.matrix_seconds, 0.0),
        shape=a.shape,
        sites=p.num_sites,
        h=h,
        g=res.g * signs,
    )


def run_repeats(cfg: ExperimentConfig) -> list[RunReport]:
    """``cfg.repeats`` runs with seeds ``seed, seed + 1, ...``; files go to ``out/repeat_<r>``."""
    a = load_data(cfg)
    reports = []
    for r in range(cfg.repeats):
        report = run_experiment(cfg, a=a, seed=(cfg.seed + r) % (1 << 64))
        if cfg.out:
            report.write(Path(cfg.out) / f"repeat_{r}" if cfg.repeats > 1 else cfg.out)
        reports.append(report)
    return reports


def attack_iterations(m: int, k: int) -> int:
    return math.ceil(m / k) + 2


def run_attack_demo(cfg: ExperimentConfig, *, a: Optional[np.ndarray] = None) -> ReconstructionReport:
    """Let the aggregator reconstruct ``A A^T`` from a RI-FULL (or RANDOMIZED) transcript.

    RI-FULL runs with the convergence test disabled for ``ceil(m/k) + 2``
    iterations and without per-iteration orthonormalization of G.

    Raises:
        InsufficientRank: the transcript does not determine K (the expected
            outcome for RANDOMIZED when ``k * i_prime < m``).
    """
    if a is None:
        a = load_data(cfg)
    m = a.shape[0]
    if m > ATTACK_MAX_FEATURES:
        raise ConfigError(f"attack demo is limited to m <= {ATTACK_MAX_FEATURES} features, got {m}")
    if cfg.algorithm not in ("RI-FULL", "RANDOMIZED"):
        raise ConfigError("attack demo supports RI-FULL and RANDOMIZED")
    iterations = attack_iterations(m, cfg.k)
    pcfg = replace(
        cfg.protocol(), crit=ConvergenceCriterion(0.0, iterations), ortho_mode="none", init_mode="random"
    )
    p = split_columns(a, cfg.sites)
    t = LoopbackTransport(p.num_sites)
    recorder = TranscriptRecorder()
    run_algorithm(cfg.algorithm, p, pcfg, t, recorder=recorder)
    transcript = AttackTranscript.from_recorder(recorder)
    if cfg.out:
        export_transcript(transcript, Path(cfg.out) / "transcript")
    report = reconstruct_covariance(transcript, m, cfg.k, truth=a @ a.T)
    if cfg.out:
        out = Path(cfg.out)
        save_matrix(out / "k_hat.fsvd", report.k_hat)
        (out / "attack_report.txt").write_text(
            f"pearson={report.pearson!r}\ncolumns_used={report.columns_used}\n"
            f"residual={report.residual!r}\nelapsed_s={report.elapsed!r}\n",
            encoding="utf-8",
        )
    return report


def compare_algorithms(cfgs: Sequence[ExperimentConfig], out=None) -> list[dict]:
    """One row per config: iterations, floats, bytes, messages, rounds, matrix-op time."""
    if not cfgs:
        raise ConfigError("need at least one config")
    first = cfgs[0]
    for cfg in cfgs[1:]:
        if cfg.k != first.k:
            raise ConfigError(f"k differs across configs ({first.k} vs {cfg.k})")
        data_keys = ("input", "format", "data", "m", "n", "rank", "decay", "data_seed", "standardize")
        if any(getattr(cfg, key) != getattr(first, key) for key in data_keys):
            raise ConfigError("configs must share the same input data")
    a = load_data(first)
    rows = []
    for cfg in cfgs:
        report = run_experiment(cfg, a=a)
        rows.append(
            {
                "algorithm": cfg.algorithm,
                "iterations": report.iterations,
                "floats": report.ledger["floats"],
                "bytes": report.ledger["bytes"],
                "messages": report.ledger["messages"],
                "rounds": report.ledger["rounds"],
                "matrix_ms": round(report.matrix_seconds * 1e3, 3),
                "max_final_angle": float(np.max(report.final_angles)),
            }
        )
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        header = list(rows[0])
        lines = [",".join(header)] + [",".join(str(r[h]) for h in header) for r in rows]
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
