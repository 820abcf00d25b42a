"""Dense building blocks and the centralized reference algorithms.

Matrices are plain 2-D ``float64`` numpy arrays. Everything here is pure: inputs
are never modified.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, NotConverged, RankDeficient, ZeroColumn
from .rng import gaussian_matrix

# Single relative tolerance for every degeneracy test on squared quantities.
RANK_TOL = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return a


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Stop once every column of H moved by less than ``arccos(1 - epsilon)``.

    ``epsilon == 0`` disables the test, so the loop runs ``max_iterations``.
    """

    epsilon: float = 1e-9
    max_iterations: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def enabled(self) -> bool:
        return self.epsilon > 0.0


@dataclass(frozen=True)
class SvdResult:
    h: np.ndarray  # m x k left singular vectors
    g: np.ndarray  # n x k right singular vectors
    sigma: np.ndarray  # k singular values


@dataclass(frozen=True)
class IterationResult(SvdResult):
    iterations: int = 0
    converged: bool = False


def gram_schmidt(v) -> tuple[np.ndarray, np.ndarray]:
    """Classical Gram-Schmidt orthonormalization of the columns of ``v``.

    Residual coefficients are taken against the *original* column,
    ``r_ij = u_j . v_i / n_j``, which is what makes the procedure decomposable
    across row blocks. Loss of orthogonality grows like cond(v)**2, so inputs
    are expected to be reasonably conditioned.

    Returns:
        (u, norms): ``u`` has orthonormal columns spanning the columns of ``v``;
        ``norms[i]`` is the squared norm of the i-th orthogonal vector before
        scaling.

    Raises:
        RankDeficient: a residual squared norm is at most ``RANK_TOL`` times the
            largest squared column norm of ``v``.
    """
    v = as_matrix(v, "v")
    r, k = v.shape
    scale = float(np.max(np.einsum("ij,ij->j", v, v))) if k else 0.0
    u = np.empty_like(v)
    norms = np.empty(k)
    for i in range(k):
        ui = v[:, i].copy()
        if i:
            coeffs = (u[:, :i].T @ v[:, i]) / norms[:i]
            ui -= u[:, :i] @ coeffs
        ni = float(ui @ ui)
        if ni <= RANK_TOL * scale or ni == 0.0:
            raise RankDeficient(i)
        u[:, i] = ui
        norms[i] = ni
    return u / np.sqrt(norms), norms


def complete_orthonormal_basis(v) -> np.ndarray:
    """Orthonormal basis with exactly ``v.shape[1]`` columns containing span(v).

    Uses Gram-Schmidt with one re-orthogonalization pass. Columns that are
    numerically dependent on their predecessors are replaced by the next
    coordinate vector that is sufficiently independent, so the result always
    has full column count. Requires ``v.shape[1] <= v.shape[0]``.
    """
    v = as_matrix(v, "v")
    r, k = v.shape
    if k > r:
        raise DimensionMismatch(f"cannot fit {k} orthonormal columns in R^{r}")
    q = np.zeros((r, k))
    filled = 0
    unit = 0

    def _residual(x, basis):
        for _ in range(2):
            x = x - basis @ (basis.T @ x)
        return x

    for i in range(k):
        x = v[:, i]
        ref = float(x @ x)
        res = _residual(x, q[:, :filled])
        if ref == 0.0 or float(res @ res) <= RANK_TOL * ref:
            while True:
                e = np.zeros(r)
                e[unit] = 1.0
                unit += 1
                res = _residual(e, q[:, :filled])
                if float(res @ res) > 0.25:
                    break
        q[:, filled] = res / math.sqrt(float(res @ res))
        filled += 1
    return q


def sign_normalize(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip columns so each one's largest-magnitude entry is positive.

    Ties go to the lowest row index. Returns ``(flipped, signs)`` so a paired
    factor can be flipped in tandem.
    """
    idx = np.argmax(np.abs(h), axis=0)
    signs = np.where(h[idx, np.arange(h.shape[1])] < 0, -1.0, 1.0)
    return h * signs, signs


def converged(h_prev, h_curr, epsilon: float) -> bool:
    h_prev = as_matrix(h_prev, "h_prev")
    h_curr = as_matrix(h_curr, "h_curr")
    if h_prev.shape != h_curr.shape:
        raise DimensionMismatch(f"{h_prev.shape} vs {h_curr.shape}")
    cosines = np.abs(np.einsum("ij,ij->j", h_curr, h_prev))
    return bool(np.all(cosines >= 1.0 - epsilon))


def vertical_subspace_iteration(
    a,
    k: int,
    crit: ConvergenceCriterion = ConvergenceCriterion(),
    seed: int = 0,
    *,
    callback: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> IterationResult:
    """Centralized subspace iteration producing left and right singular vectors.

    G0 is a standard-normal ``n x k`` draw from ``seed`` (see :mod:`fedsvd.rng`),
    orthonormalized before the first step. Each iteration computes
    ``H = orth(A G)``, sign-normalizes it, then ``G = orth(A^T H)``.
    ``callback(i, H_i, G_i)`` is invoked after every iteration.

    Singular values are the square roots of the last Gram-Schmidt norms of
    ``A^T H``.
    """
    a = as_matrix(a, "a")
    m, n = a.shape
    if not 1 <= k <= min(m, n):
        raise DimensionMismatch(f"k={k} must be in [1, {min(m, n)}]")

    g, _ = gram_schmidt(gaussian_matrix(n, k, seed))
    h_prev = None
    done = False
    i = 0
    for i in range(1, crit.max_iterations + 1):
        h, _ = gram_schmidt(a @ g)
        h, _ = sign_normalize(h)
        g, norms = gram_schmidt(a.T @ h)
        if callback is not None:
            callback(i, h, g)
        if crit.enabled and h_prev is not None and converged(h_prev, h, crit.epsilon):
            done = True
            break
        h_prev = h
    if crit.enabled and not done:
        warnings.warn(f"no convergence after {crit.max_iterations} iterations", NotConverged)
    return IterationResult(h=h, g=g, sigma=np.sqrt(norms), iterations=i, converged=done)


# -- oracle -------------------------------------------------------------------


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint index pairs covering all pairs."""
    size = n + (n % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(s, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once in tournament order; pairs
    inside a round are disjoint, so their rotations commute and are applied
    together. Returns eigenvalues in non-increasing order with matching
    eigenvector columns.
    """
    a = as_matrix(s, "s").copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionMismatch("matrix must be square")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n > 1:
        schedule = _round_robin(n)
        total = float(np.linalg.norm(a))
        prev_off = math.inf
        for _ in range(max_sweeps):
            off = float(np.linalg.norm(a - np.diag(np.diag(a))))
            if off <= 1e-15 * total or off >= prev_off:
                break
            prev_off = off
            for ps, qs in schedule:
                apq = a[ps, qs]
                active = apq != 0.0
                if not np.any(active):
                    continue
                with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                    tau = (a[qs, qs] - a[ps, ps]) / (2.0 * apq)
                    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(active & np.isfinite(t), t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                ap, aq = a[:, ps].copy(), a[:, qs].copy()
                a[:, ps] = ap * c - aq * sn
                a[:, qs] = ap * sn + aq * c
                ap, aq = a[ps, :].copy(), a[qs, :].copy()
                a[ps, :] = c[:, None] * ap - sn[:, None] * aq
                a[qs, :] = sn[:, None] * ap + c[:, None] * aq
                vp, vq = v[:, ps].copy(), v[:, qs].copy()
                v[:, ps] = vp * c - vq * sn
                v[:, qs] = vp * sn + vq * c
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def reference_svd(a, k: int) -> SvdResult:
    """Top-``k`` SVD via Jacobi on the smaller Gram matrix.

    The other factor is recovered by projection (``A g / sigma`` or
    ``A^T h / sigma``) followed by column normalization. H is sign-normalized and
    G flipped with it so that ``A g_i = sigma_i h_i`` keeps ``sigma_i >= 0``.

    Because the Gram matrix squares the spectrum, the rank test compares
    eigenvalues: fewer than ``k`` values above ``RANK_TOL * lambda_max`` raises
    :class:`RankDeficient`.
    """
    a = as_matrix(a, "a")
    m, n = a.shape
    if not 1 <= k <= min(m, n):
        raise DimensionMismatch(f"k={k} must be in [1, {min(m, n)}]")
    tall = n <= m
    gram = a.T @ a if tall else a @ a.T
    vals, vecs = jacobi_eigh(gram)
    vals = np.maximum(vals, 0.0)
    admissible = int(np.sum(vals > RANK_TOL * vals[0])) if vals[0] > 0 else 0
    if admissible < k:
        raise RankDeficient(admissible, f"only {admissible} singular values above tolerance, need {k}")
    sigma = np.sqrt(vals[:k])
    if tall:
        g = vecs[:, :k]
        h = a @ g
        h /= np.linalg.norm(h, axis=0)
    else:
        h = vecs[:, :k]
        g = a.T @ h
        g /= np.linalg.norm(g, axis=0)
    h, signs = sign_normalize(h)
    return SvdResult(h=h, g=g * signs, sigma=sigma)


def principal_angles(u, v) -> np.ndarray:
    """Column-wise angles in degrees, insensitive to sign.

    Uses the chord form ``2 asin(|u' - s v'| / 2)`` on unit vectors with
    ``s = sign(u' . v')``, which stays accurate for tiny angles where
    ``arccos`` of a cosine near 1 cannot resolve below about 1e-6 degrees.
    """
    u = as_matrix(u, "u")
    v = as_matrix(v, "v")
    if u.shape != v.shape:
        raise DimensionMismatch(f"{u.shape} vs {v.shape}")
    nu = np.linalg.norm(u, axis=0)
    nv = np.linalg.norm(v, axis=0)
    if np.any(nu == 0) or np.any(nv == 0):
        raise ZeroColumn("principal angles need nonzero columns")
    un, vn = u / nu, v / nv
    s = np.where(np.einsum("ij,ij->j", un, vn) < 0, -1.0, 1.0)
    chord = np.linalg.norm(un - vn * s, axis=0)
    return np.degrees(2.0 * np.arcsin(np.minimum(chord / 2.0, math.sqrt(0.5))))
