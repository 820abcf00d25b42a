"""Covariance reconstruction by an honest-but-curious aggregator.

When sites update ``G = A^T H`` without re-orthonormalizing, the sum the
aggregator receives next round is ``H_raw = A A^T H_prev = K H_prev``. Every
broadcast column is one linear equation system for the rows of ``K``; once
``m`` independent columns have been seen, ``K`` follows from least squares.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InsufficientRank, NumericallySingular, ZeroVariance
from .linalg import as_matrix
from .partition import load_matrix, save_matrix
from .protocol import TranscriptRecorder

ADMISSION_TOL = 1e-10


@dataclass
class AttackTranscript:
    """Ordered ``(round, h_broadcast, h_raw)`` triples seen by the aggregator."""

    pairs: list = field(default_factory=list)

    @classmethod
    def from_recorder(cls, recorder: TranscriptRecorder) -> "AttackTranscript":
        return cls(list(recorder.pairs))

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ReconstructionReport:
    k_hat: np.ndarray
    pearson: Optional[float]
    columns_used: int
    residual: float
    elapsed: float  # seconds


def _admit(t: AttackTranscript, m: int, k: int) -> tuple[list, list]:
    lhs: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    for _, h_b, h_r in t.pairs:
        if h_b.shape != (m, k) or h_r.shape != (m, k):
            raise DimensionMismatch(f"pair shapes {h_b.shape}, {h_r.shape}; expected {(m, k)}")
        for j in range(k):
            if len(lhs) == m:
                return lhs, rhs
            sv = np.linalg.svd(np.column_stack(lhs + [h_b[:, j]]), compute_uv=False)
            if sv[0] > 0 and sv[-1] > ADMISSION_TOL * sv[0]:
                lhs.append(h_b[:, j])
                rhs.append(h_r[:, j])
    return lhs, rhs


def build_linear_system(t: AttackTranscript, m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Collect independent broadcast columns (lhs) and their images (rhs).

    Columns are considered in arrival order and admitted only while the
    smallest singular value of the admitted set stays above
    ``ADMISSION_TOL`` times the largest. Stops at ``m`` columns.

    Raises:
        InsufficientRank: the transcript ran out with fewer than ``m`` columns.
    """
    lhs, rhs = _admit(t, m, k)
    if len(lhs) < m:
        raise InsufficientRank(len(lhs), m)
    return np.column_stack(lhs), np.column_stack(rhs)


def reconstruct_covariance(
    t: AttackTranscript,
    m: int,
    k: int,
    *,
    truth: Optional[np.ndarray] = None,
    allow_underdetermined: bool = False,
) -> ReconstructionReport:
    """Estimate ``K = A A^T`` from the transcript alone.

    Solves ``K_hat L = R`` in the least-squares sense with a column-pivoted QR
    solver (minimum-norm when underdetermined). ``truth`` is used only to
    score the result.
    """
    start = time.perf_counter()
    if allow_underdetermined:
        cols, imgs = _admit(t, m, k)
        if not cols:
            raise InsufficientRank(0, m)
        lhs, rhs = np.column_stack(cols), np.column_stack(imgs)
    else:
        lhs, rhs = build_linear_system(t, m, k)
    used = lhs.shape[1]
    solution, _, rank, _ = scipy.linalg.lstsq(lhs.T, rhs.T, lapack_driver="gelsy")
    if rank < used:
        raise NumericallySingular(f"solver rank {rank} below {used} admitted columns")
    k_hat = solution.T
    elapsed = time.perf_counter() - start
    residual = float(np.linalg.norm(k_hat @ lhs - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))
    pearson = pearson_correlation(k_hat, truth) if truth is not None else None
    return ReconstructionReport(k_hat=k_hat, pearson=pearson, columns_used=used, residual=residual, elapsed=elapsed)


def pearson_correlation(x, y) -> float:
    """Product-moment correlation of the flattened entries."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    x, y = x.ravel(), y.ravel()
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("correlation undefined for a constant input")
    return max(-1.0, min(1.0, float(dx @ dy) / (sx * sy)))


def export_transcript(t: AttackTranscript, directory) -> Path:
    """Write every pair as fsvd-binary matrices plus ``index.txt``.

    Index lines read ``<round> <role> <rows> <cols> <file>`` with role
    ``broadcast`` or ``raw``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for idx, (rnd, h_b, h_r) in enumerate(t.pairs):
        for role, mat in (("broadcast", h_b), ("raw", h_r)):
            name = f"pair{idx:04d}_{role}.fsvd"
            save_matrix(directory / name, mat)
            lines.append(f"{rnd} {role} {mat.shape[0]} {mat.shape[1]} {name}")
    index = directory / "index.txt"
    index.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return index


def import_transcript(directory) -> AttackTranscript:
    directory = Path(directory)
    entries = [ln.split() for ln in (directory / "index.txt").read_text(encoding="utf-8").splitlines() if ln.strip()]
    pairs = []
    for b, r in zip(entries[::2], entries[1::2]):
        if b[1] != "broadcast" or r[1] != "raw" or b[0] != r[0]:
            raise ValueError(f"malformed index near round {b[0]}")
        pairs.append((int(b[0]), load_matrix(directory / b[4]), load_matrix(directory / r[4])))
    return AttackTranscript(pairs)
