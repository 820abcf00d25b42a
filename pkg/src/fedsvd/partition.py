"""Column-wise partitioning of a global matrix, matrix I/O and synthetic data."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    InconsistentRowLength,
    ParseError,
    TooManySites,
    UnsupportedVersion,
)
from .linalg import as_matrix, gram_schmidt
from .rng import Xoshiro256, gaussian_matrix_from

MATRIX_MAGIC = b"FSVD"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sHQQ")


@dataclass(frozen=True)
class VerticalPartition:
    """A global ``m x n`` matrix split into contiguous column blocks, one per site."""

    sites: tuple[np.ndarray, ...]
    offsets: tuple[int, ...]

    def __post_init__(self):
        if not self.sites:
            raise ValueError("a partition needs at least one site")
        if len(self.offsets) != len(self.sites):
            raise DimensionMismatch("one offset per site required")
        rows = {s.shape[0] for s in self.sites}
        if len(rows) != 1:
            raise DimensionMismatch(f"sites disagree on row count: {sorted(rows)}")
        expected = 0
        for block, off in zip(self.sites, self.offsets):
            if off != expected or block.shape[1] < 1:
                raise DimensionMismatch("offsets must start at 0 and follow block widths")
            expected += block.shape[1]

    @property
    def m(self) -> int:
        return self.sites[0].shape[0]

    @property
    def n(self) -> int:
        return self.offsets[-1] + self.sites[-1].shape[1]

    @property
    def num_sites(self) -> int:
        return len(self.sites)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.shape[1] for s in self.sites)

    def concatenate(self) -> np.ndarray:
        return np.hstack(self.sites)

    def slice_rows(self, x: np.ndarray) -> list[np.ndarray]:
        """Cut an ``n x k`` matrix into per-site row blocks."""
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} rows, got {x.shape[0]}")
        return [x[off : off + size].copy() for off, size in zip(self.offsets, self.sizes)]


def apportion(n: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` columns, at least one per site."""
    w = [float(x) for x in weights]
    if not w or any(x <= 0 or not math.isfinite(x) for x in w):
        raise ValueError("weights must be positive and finite")
    if n < len(w):
        raise TooManySites(f"{len(w)} sites but only {n} columns")
    total = sum(w)
    quotas = [n * x / total for x in w]
    sizes = [int(math.floor(q)) for q in quotas]
    leftover = n - sum(sizes)
    by_remainder = sorted(range(len(w)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] = 1
    return sizes


def split_columns(a, weights: Sequence[float]) -> VerticalPartition:
    a = as_matrix(a, "a")
    sizes = apportion(a.shape[1], weights)
    offsets = [0]
    for size in sizes[:-1]:
        offsets.append(offsets[-1] + size)
    sites = tuple(a[:, off : off + size].copy() for off, size in zip(offsets, sizes))
    return VerticalPartition(sites=sites, offsets=tuple(offsets))


def stack_right_blocks(blocks: Sequence[np.ndarray], offsets: Sequence[int]) -> np.ndarray:
    """Place per-site ``n^s x k`` blocks at their global row offsets."""
    if len(blocks) != len(offsets) or not blocks:
        raise DimensionMismatch("need one offset per block")
    k = blocks[0].shape[1]
    if any(b.ndim != 2 or b.shape[1] != k for b in blocks):
        raise DimensionMismatch("all blocks must have the same column count")
    expected = 0
    for b, off in zip(blocks, offsets):
        if off != expected:
            raise DimensionMismatch(f"block at offset {off}, expected {expected}")
        expected += b.shape[0]
    out = np.empty((expected, k))
    for b, off in zip(blocks, offsets):
        out[off : off + b.shape[0]] = b
    return out


# -- file formats ---------------------------------------------------------------


def encode_matrix(a: np.ndarray) -> bytes:
    a = as_matrix(a)
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, a.shape[0], a.shape[1])
    return header + np.ascontiguousarray(a, dtype="<f8").tobytes()


def decode_matrix(data: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != MATRIX_MAGIC:
        if MATRIX_MAGIC.startswith(bytes(data[:4])):
            raise ParseError(len(data), "truncated header")
        raise BadMagic(f"expected {MATRIX_MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < _MATRIX_HEADER.size:
        raise ParseError(len(data), "truncated header")
    _, version, rows, cols = _MATRIX_HEADER.unpack_from(data)
    if version != MATRIX_VERSION:
        raise UnsupportedVersion(f"matrix file version {version}")
    need = rows * cols * 8
    body = len(data) - _MATRIX_HEADER.size
    if body != need:
        raise ParseError(_MATRIX_HEADER.size + min(body, need), f"payload has {body} bytes, header declares {need}")
    values = np.frombuffer(data, dtype="<f8", offset=_MATRIX_HEADER.size).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError(_MATRIX_HEADER.size + 8 * int(bad[0]), "non-finite value")
    return values.reshape(rows, cols)


def _format_float(x: float) -> str:
    return repr(float(x))


def save_matrix(path, a, fmt: str = "fsvd") -> None:
    a = as_matrix(a)
    path = Path(path)
    if fmt == "fsvd":
        path.write_bytes(encode_matrix(a))
    elif fmt == "csv":
        lines = [",".join(_format_float(x) for x in row) for row in a]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load_matrix(path, fmt: str = "fsvd", *, skip_header: bool = False) -> np.ndarray:
    path = Path(path)
    if fmt == "fsvd":
        return decode_matrix(path.read_bytes())
    if fmt == "csv":
        return parse_csv(path.read_text(encoding="utf-8"), skip_header=skip_header)
    raise ValueError(f"unknown matrix format {fmt!r}")


def parse_csv(text: str, *, skip_header: bool = False) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if skip_header and lineno == 1:
            continue
        if not line.strip():
            continue
        try:
            values = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise ParseError(lineno, f"not a number in {line!r}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(lineno, "non-finite value")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise InconsistentRowLength(lineno, width, len(values))
        rows.append(values)
    if not rows:
        raise ParseError(0, "no data rows")
    return np.array(rows, dtype=np.float64)


# -- synthetic data -------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    m: int
    n: int
    singular_spectrum: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        spec = tuple(float(s) for s in self.singular_spectrum)
        object.__setattr__(self, "singular_spectrum", spec)
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not 1 <= len(spec) <= min(self.m, self.n):
            raise ValueError(f"spectrum length must be in [1, {min(self.m, self.n)}]")
        if any(s < 0 for s in spec) or any(b > a for a, b in zip(spec, spec[1:])):
            raise ValueError("spectrum must be non-negative and non-increasing")


def geometric_spectrum(count: int, first: float = 10.0, ratio: float = 0.85) -> tuple[float, ...]:
    return tuple(first * ratio**i for i in range(count))


def generate_synthetic(spec: SyntheticSpec) -> np.ndarray:
    """``A = H diag(sigma) G^T`` with orthonormal H, G from one seeded stream.

    H is drawn first (``m x r``), then G (``n x r``); both are passed through
    Gram-Schmidt twice so orthogonality holds to rounding level.
    """
    r = len(spec.singular_spectrum)
    gen = Xoshiro256(spec.seed)
    h = gaussian_matrix_from(gen, spec.m, r)
    g = gaussian_matrix_from(gen, spec.n, r)
    h = gram_schmidt(gram_schmidt(h)[0])[0]
    g = gram_schmidt(gram_schmidt(g)[0])[0]
    return (h * np.asarray(spec.singular_spectrum)) @ g.T


def generate_standin(
    n_samples: int, m_features: int, seed: int = 0, latent: int = 3, loading: float = 0.5
) -> np.ndarray:
    """Tabular-looking data set shaped like a small real one, as ``features x samples``.

    Features share ``latent`` factors (loadings scaled by ``loading``) plus
    independent unit noise and are then standardized. The default gives a
    dense covariance whose condition number stays in the tens for 30 features.
    """
    gen = Xoshiro256(seed)
    factors = gaussian_matrix_from(gen, n_samples, latent)
    loadings = gaussian_matrix_from(gen, latent, m_features) * loading
    noise = gaussian_matrix_from(gen, n_samples, m_features)
    d = factors @ loadings + noise
    d = (d - d.mean(axis=0)) / d.std(axis=0)
    return np.ascontiguousarray(d.T)
