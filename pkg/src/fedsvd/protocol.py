"""Client and aggregator roles for federated singular value decomposition.

Data is partitioned by samples: site ``s`` owns the column block ``A^s``
(``m x n^s``) and, during the protocol, the matching row block ``G^s`` of the
right singular vectors. Only ``m``-dimensional products (``A^s G^s``), scalars
and small proxy matrices ever leave a site.

Algorithms (names follow the usual comparison labels):

``RI-FULL``     random init, subspace iteration, final orthonormalization
``FED-GS``      as RI-FULL but G is orthonormalized federatedly every iteration
``AI-ONLY``     approximate init from local subspaces, no iteration
``AI-FULL``     approximate init followed by subspace iteration
``RANDOMIZED``  short warm-up iteration, then a proxy-matrix solve

Every driver ends with the federated Gram-Schmidt pass on G and a Terminate
broadcast.
"""

from __future__ import annotations

import contextlib
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NotConverged, RankDeficient
from .linalg import (
    RANK_TOL,
    ConvergenceCriterion,
    complete_orthonormal_basis,
    converged,
    gram_schmidt,
    jacobi_eigh,
    reference_svd,
    sign_normalize,
)
from .partition import VerticalPartition, stack_right_blocks
from .rng import gaussian_matrix
from .transport import AGGREGATOR, LoopbackTransport, Message, MessageKind, TransmissionLedger

ALGORITHMS = ("RI-FULL", "FED-GS", "AI-ONLY", "AI-FULL", "RANDOMIZED")
ORTHO_MODES = ("none", "per-iteration", "final-only")
INIT_MODES = ("random", "approximate")


@dataclass(frozen=True)
class ProtocolConfig:
    k: int
    crit: ConvergenceCriterion = ConvergenceCriterion()
    init_mode: str = "random"
    ortho_mode: str = "final-only"
    c: int = 2
    i_prime: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.c < 1 or self.i_prime < 1:
            raise ValueError("k, c and i_prime must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.ortho_mode not in ORTHO_MODES:
            raise ValueError(f"ortho_mode must be one of {ORTHO_MODES}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def per_iteration(self) -> bool:
        return self.ortho_mode == "per-iteration"


class Stopwatch:
    """Accumulates wall time spent in matrix arithmetic only."""

    def __init__(self):
        self.seconds = 0.0

    @contextlib.contextmanager
    def matrix(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds += time.perf_counter() - start


@dataclass
class FederatedResult:
    g_blocks: list
    h: np.ndarray
    sigma: np.ndarray
    iterations: int
    converged: bool
    ledger: TransmissionLedger
    offsets: tuple
    matrix_seconds: float = 0.0
    h_history: list = field(default_factory=list)

    @property
    def g(self) -> np.ndarray:
        """Stacked G. Only an evaluation harness holding every block can form this."""
        return stack_right_blocks(self.g_blocks, self.offsets)


# -- attack hook ------------------------------------------------------------------


class TranscriptRecorder:
    """Aggregator-side record of (broadcast H_{i-1}, raw summed H_i) pairs.

    A pair is only meaningful when sites computed ``G = A^T H`` from the broadcast
    without touching G again, so drivers call :meth:`reset` whenever that chain
    is broken.
    """

    def __init__(self):
        self.pairs: list[tuple[int, np.ndarray, np.ndarray]] = []
        self._last_broadcast: Optional[np.ndarray] = None

    def on_broadcast(self, h: np.ndarray) -> None:
        self._last_broadcast = h.copy()

    def on_raw(self, rnd: int, h_raw: np.ndarray) -> None:
        if self._last_broadcast is not None:
            self.pairs.append((rnd, self._last_broadcast, h_raw.copy()))
        self._last_broadcast = None

    def reset(self) -> None:
        self._last_broadcast = None


# -- roles -------------------------------------------------------------------------


class GramSchmidtSite:
    """One site's share of federated Gram-Schmidt over its row block ``v``."""

    def __init__(self, site_id: int, v: np.ndarray):
        self.site_id = site_id
        self.v = v
        self.u = np.empty_like(v)
        self.norms = np.empty(v.shape[1])

    def residuals(self, i: int, rnd: int) -> Message:
        r = (self.u[:, :i].T @ self.v[:, i]) / self.norms[:i]
        return Message(MessageKind.PARTIAL_RESIDUALS, self.site_id, rnd, r[None, :])

    def apply_residuals(self, i: int, msg: Message) -> None:
        self.u[:, i] = self.v[:, i] - self.u[:, :i] @ msg.payload[0]

    def start(self) -> None:
        self.u[:, 0] = self.v[:, 0]

    def partial_norm(self, i: int, rnd: int) -> Message:
        ui = self.u[:, i].copy()
        return Message(MessageKind.PARTIAL_NORM, self.site_id, rnd, [[float(ui @ ui)]])

    def set_norm(self, i: int, msg: Message) -> None:
        self.norms[i] = msg.payload[0, 0]

    def finish(self) -> np.ndarray:
        return self.u / np.sqrt(self.norms)


class Client:
    """A data-holding site. ``g`` stays local for the whole protocol."""

    def __init__(self, site_id: int, a_s: np.ndarray, watch: Stopwatch):
        self.site_id = site_id
        self.a = a_s
        self.g: Optional[np.ndarray] = None
        self.h: Optional[np.ndarray] = None
        self.proxy: Optional[np.ndarray] = None
        self.phase = "idle"
        self._watch = watch

    def set_g(self, g: np.ndarray) -> None:
        if g.shape[0] != self.a.shape[1]:
            raise DimensionMismatch(f"site {self.site_id}: G block has {g.shape[0]} rows, data has {self.a.shape[1]}")
        self.g = g

    def partial_h(self, rnd: int) -> Message:
        self.phase = "partial-h"
        with self._watch.matrix():
            h_s = self.a @ self.g
        return Message(MessageKind.PARTIAL_H, self.site_id, rnd, h_s)

    def receive_h(self, msg: Message) -> None:
        self.phase = "update-g"
        self.h = np.array(msg.payload)
        with self._watch.matrix():
            self.g = self.a.T @ self.h

    def local_subspace(self, rows: int, rnd: int) -> Message:
        """Top ``rows`` left singular directions of ``A^s``, scaled by their singular values."""
        self.phase = "local-subspace"
        with self._watch.matrix():
            summary = weighted_left_subspace(self.a, rows)
        return Message(MessageKind.LOCAL_SUBSPACE, self.site_id, rnd, summary)

    def proxy_covariance(self, basis: np.ndarray, rnd: int) -> Message:
        self.phase = "proxy"
        with self._watch.matrix():
            self.proxy = basis.T @ self.a
            cov = self.proxy @ self.proxy.T
        return Message(MessageKind.PROXY_COV, self.site_id, rnd, cov)

    def receive_proxy_eigvecs(self, msg: Message) -> None:
        self.phase = "update-g"
        with self._watch.matrix():
            self.g = self.proxy.T @ msg.payload
        self.proxy = None


class Aggregator:
    """Sequential reducer. Sees sums of m-dimensional partials and scalars only."""

    def __init__(self, transport: LoopbackTransport, watch: Stopwatch, recorder: Optional[TranscriptRecorder] = None):
        self.t = transport
        self.h: Optional[np.ndarray] = None
        self.phase = "idle"
        self.recorder = recorder
        self._watch = watch

    @property
    def round(self) -> int:
        return self.t.ledger.rounds

    def gather_sum(self) -> np.ndarray:
        batch = self.t.collect()
        total = np.array(batch[0].payload)
        for msg in batch[1:]:
            total += msg.payload
        return total

    def broadcast(self, kind: MessageKind, payload) -> Message:
        return self.t.broadcast(Message(kind, AGGREGATOR, self.round - 1, payload)).message

    def update_h(self) -> np.ndarray:
        self.phase = "orthonormalize-h"
        h_raw = self.gather_sum()
        if self.recorder is not None:
            self.recorder.on_raw(self.round - 1, h_raw)
        with self._watch.matrix():
            h, _ = gram_schmidt(h_raw)
            h, _ = sign_normalize(h)
        self.h = h
        return h

    def send_h(self, h: np.ndarray) -> Message:
        if self.recorder is not None:
            self.recorder.on_broadcast(h)
        return self.broadcast(MessageKind.GLOBAL_H, h)


# -- federated Gram-Schmidt ----------------------------------------------------------


def _gs_rounds(sites: Sequence[GramSchmidtSite], t: LoopbackTransport) -> np.ndarray:
    """Drive the scalar exchange; returns the global squared norms.

    The aggregator's rank test needs the squared norm of each input column. It
    recovers it without extra traffic from ``|v_i|^2 = n_i + sum_j r_ij^2 n_j``,
    which holds because the orthogonal vectors ``u_j`` are mutually orthogonal.
    """
    k = sites[0].v.shape[1]
    norms = np.empty(k)
    scale = 0.0
    for i in range(k):
        coeffs = np.zeros(0)
        if i == 0:
            for site in sites:
                site.start()
        else:
            rnd = t.ledger.rounds
            for site in sites:
                t.send_to_aggregator(site.residuals(i, rnd))
            batch = t.collect()
            total = np.array(batch[0].payload)
            for msg in batch[1:]:
                total += msg.payload
            delivered = t.broadcast(Message(MessageKind.GLOBAL_RESIDUALS, AGGREGATOR, rnd, total)).message
            coeffs = total[0]
            for site in sites:
                site.apply_residuals(i, delivered)
        rnd = t.ledger.rounds
        for site in sites:
            t.send_to_aggregator(site.partial_norm(i, rnd))
        batch = t.collect()
        n_i = _ordered_sum(batch)
        scale = max(scale, n_i + float(np.sum(coeffs * coeffs * norms[:i])))
        if n_i <= RANK_TOL * scale or n_i <= 0.0:
            raise RankDeficient(i)
        norms[i] = n_i
        delivered = t.broadcast(Message(MessageKind.GLOBAL_NORM, AGGREGATOR, rnd, [[n_i]])).message
        for site in sites:
            site.set_norm(i, delivered)
    return norms


def _ordered_sum(batch: Sequence[Message]) -> float:
    total = float(batch[0].payload[0, 0])
    for msg in batch[1:]:
        total += float(msg.payload[0, 0])
    return total


def federated_gram_schmidt(blocks: Sequence[np.ndarray], t: LoopbackTransport) -> tuple[list[np.ndarray], np.ndarray]:
    """Orthonormalize the columns of the row-stacked ``blocks`` without moving them.

    Each site owns one ``n^s x k`` block. For every column the sites exchange
    only the scalar partial norm and, from the second column on, the ``i``
    partial residual coefficients against previously finished columns. Costs
    ``S (2k - 1)`` uploads and as many deliveries.

    Raises:
        RankDeficient: the global residual norm of column ``i`` is at most
            ``RANK_TOL`` times the largest squared input column norm seen so far.
    """
    if len(blocks) != t.num_sites:
        raise DimensionMismatch(f"{len(blocks)} blocks for {t.num_sites} sites")
    k = blocks[0].shape[1]
    if any(b.ndim != 2 or b.shape[1] != k for b in blocks):
        raise DimensionMismatch("all blocks must have the same column count")
    sites = [GramSchmidtSite(s, np.asarray(b, dtype=np.float64)) for s, b in enumerate(blocks)]
    norms = _gs_rounds(sites, t)
    return [site.finish() for site in sites], norms


def _orthonormalize_clients(clients: Sequence[Client], t: LoopbackTransport) -> np.ndarray:
    blocks, norms = federated_gram_schmidt([c.g for c in clients], t)
    for client, block in zip(clients, blocks):
        client.set_g(block)
    return norms


# -- local building block -----------------------------------------------------------


def weighted_left_subspace(a: np.ndarray, rows: int) -> np.ndarray:
    """``rows x m`` matrix whose rows are ``sigma_i h_i`` for the top singular pairs of ``a``.

    Computed from the smaller Gram matrix by Jacobi. Scaling by sigma keeps the
    stack meaningful when a site has lower rank than ``rows``: surplus directions
    carry (near) zero weight instead of arbitrary unit vectors.
    """
    m, n = a.shape
    if not 1 <= rows <= min(m, n):
        raise DimensionMismatch(f"need 1 <= rows <= {min(m, n)}, got {rows}")
    if n <= m:
        _, vecs = jacobi_eigh(a.T @ a)
        return (a @ vecs[:, :rows]).T
    vals, vecs = jacobi_eigh(a @ a.T)
    sigma = np.sqrt(np.maximum(vals[:rows], 0.0))
    return (vecs[:, :rows] * sigma).T


# -- drivers -------------------------------------------------------------------------


def _check(p: VerticalPartition, t: LoopbackTransport, k: int) -> None:
    if t.num_sites != p.num_sites:
        raise DimensionMismatch(f"transport has {t.num_sites} sites, partition {p.num_sites}")
    if not 1 <= k <= min(p.m, p.n):
        raise DimensionMismatch(f"k={k} must be in [1, {min(p.m, p.n)}]")


def _iterate(
    clients: Sequence[Client],
    agg: Aggregator,
    t: LoopbackTransport,
    cfg: ProtocolConfig,
    *,
    h_prev: Optional[np.ndarray],
    max_iterations: int,
    use_criterion: bool,
    history: Optional[list],
    callback,
) -> tuple[int, bool, Optional[np.ndarray]]:
    """Subspace iteration rounds. Returns (iterations, converged, last GS norms of A^T H)."""
    done = False
    last_norms = None
    i = 0
    for i in range(1, max_iterations + 1):
        with t.phase("iteration"):
            rnd = t.ledger.rounds
            for client in clients:
                t.send_to_aggregator(client.partial_h(rnd))
            h = agg.update_h()
            delivered = agg.send_h(h)
            for client in clients:
                client.receive_h(delivered)
        if cfg.per_iteration:
            with t.phase("orthonormalization"):
                last_norms = _orthonormalize_clients(clients, t)
            if agg.recorder is not None:
                agg.recorder.reset()
        if history is not None:
            history.append(h)
        if callback is not None:
            callback(i, h, [c.g for c in clients])
        if use_criterion and h_prev is not None and converged(h_prev, h, cfg.crit.epsilon):
            done = True
            break
        h_prev = h
    return i, done, last_norms


def _finish(
    clients, agg, t, p, watch, *, h, iterations, done, norms_hint, history
) -> FederatedResult:
    with t.phase("orthonormalization"):
        norms = _orthonormalize_clients(clients, t)
    with t.phase("terminate"):
        t.broadcast(Message(MessageKind.TERMINATE, AGGREGATOR, t.ledger.rounds))
    sigma = np.sqrt(norms if norms_hint is None else norms_hint)
    return FederatedResult(
        g_blocks=[c.g for c in clients],
        h=h,
        sigma=sigma,
        iterations=iterations,
        converged=done,
        ledger=t.ledger,
        offsets=p.offsets,
        matrix_seconds=watch.seconds,
        h_history=history if history is not None else [],
    )


def federated_subspace_iteration(
    p: VerticalPartition,
    cfg: ProtocolConfig,
    t: LoopbackTransport,
    *,
    recorder: Optional[TranscriptRecorder] = None,
    callback: Optional[Callable[[int, np.ndarray, list], None]] = None,
    keep_history: bool = False,
) -> FederatedResult:
    """Federated subspace iteration (RI-FULL, FED-GS or AI-FULL depending on ``cfg``).

    With random init the global ``n x k`` Gaussian draw for ``cfg.seed`` is
    sliced by site offsets, so the start point does not depend on the
    federation layout. With ``init_mode="approximate"`` the result of
    :func:`approximate_init` is used as is; the approximate H counts as the
    previous iterate for the first convergence test.

    ``callback(i, H_i, g_blocks)`` runs after every iteration (and after the
    per-iteration orthonormalization, if enabled).
    """
    _check(p, t, cfg.k)
    watch = Stopwatch()
    clients = [Client(s, a_s, watch) for s, a_s in enumerate(p.sites)]
    agg = Aggregator(t, watch, recorder)
    history = [] if keep_history else None
    h_prev = None
    if cfg.init_mode == "approximate":
        h_prev = _approximate_init_rounds(clients, agg, t, cfg.k, cfg.c)
    else:
        with watch.matrix():
            g0 = gaussian_matrix(p.n, cfg.k, cfg.seed)
        for client, block in zip(clients, p.slice_rows(g0)):
            client.set_g(block)
        if cfg.per_iteration:
            with t.phase("orthonormalization"):
                _orthonormalize_clients(clients, t)
    iterations, done, norms = _iterate(
        clients,
        agg,
        t,
        cfg,
        h_prev=h_prev,
        max_iterations=cfg.crit.max_iterations,
        use_criterion=cfg.crit.enabled,
        history=history,
        callback=callback,
    )
    if cfg.crit.enabled and not done:
        warnings.warn(f"no convergence after {cfg.crit.max_iterations} iterations", NotConverged)
    return _finish(
        clients, agg, t, p, watch, h=agg.h, iterations=iterations, done=done, norms_hint=norms, history=history
    )


def _approximate_init_rounds(clients, agg: Aggregator, t: LoopbackTransport, k: int, c: int) -> np.ndarray:
    rows = c * k
    for client in clients:
        if rows > min(client.a.shape):
            raise DimensionMismatch(f"c*k={rows} exceeds min(m, n^s) at site {client.site_id}")
    with t.phase("init"):
        rnd = t.ledger.rounds
        for client in clients:
            t.send_to_aggregator(client.local_subspace(rows, rnd))
        batch = t.collect()
        with agg._watch.matrix():
            stacked = np.vstack([msg.payload for msg in batch])
            h = _top_right_vectors(stacked, k)
        agg.h = h
        delivered = agg.send_h(h)
        for client in clients:
            client.receive_h(delivered)
    return h


def _top_right_vectors(stacked: np.ndarray, k: int) -> np.ndarray:
    """Top-k right singular vectors of the stacked local summaries, sign-normalized."""
    h, _ = sign_normalize(reference_svd(stacked, k).g)
    return h


def approximate_init(
    p: VerticalPartition, k: int, c: int, t: LoopbackTransport
) -> FederatedResult:
    """AI-ONLY: approximate H from stacked local subspaces, ``G^s = A^sT H``, then final GS.

    Each site sends its top ``c*k`` left singular directions weighted by their
    singular values (``c*k x m``); the aggregator takes the top-k right singular
    vectors of the ``c*k*S x m`` stack as H.
    """
    _check(p, t, k)
    if c < 1:
        raise ValueError("c must be >= 1")
    watch = Stopwatch()
    clients = [Client(s, a_s, watch) for s, a_s in enumerate(p.sites)]
    agg = Aggregator(t, watch)
    h = _approximate_init_rounds(clients, agg, t, k, c)
    return _finish(clients, agg, t, p, watch, h=h, iterations=0, done=False, norms_hint=None, history=[h])


def federated_randomized_svd(
    p: VerticalPartition,
    cfg: ProtocolConfig,
    t: LoopbackTransport,
    *,
    recorder: Optional[TranscriptRecorder] = None,
    keep_history: bool = False,
) -> FederatedResult:
    """RANDOMIZED: ``i_prime`` warm-up iterations, then one proxy-matrix solve.

    Every party forms the same orthonormal basis ``Q`` of the ``k * i_prime``
    broadcast H columns (all of them saw the broadcasts, so this costs nothing).
    Sites send ``Q^T A^s (Q^T A^s)^T``; the aggregator sums and takes the top-k
    eigenvectors ``X``. Their signs are fixed so that ``Q X`` is sign-normalized,
    which carries over to the final H. Sites set ``G^s = (Q^T A^s)^T X``,
    orthonormalize federatedly and send ``A^s G^s`` once more for the final H.
    The warm-up ignores the convergence criterion.
    """
    _check(p, t, cfg.k)
    k, ip = cfg.k, cfg.i_prime
    if k * ip > min(p.m, p.n):
        raise DimensionMismatch(f"k*i_prime={k * ip} exceeds min(m, n)={min(p.m, p.n)}")
    watch = Stopwatch()
    clients = [Client(s, a_s, watch) for s, a_s in enumerate(p.sites)]
    agg = Aggregator(t, watch, recorder)
    with watch.matrix():
        g0 = gaussian_matrix(p.n, k, cfg.seed)
    for client, block in zip(clients, p.slice_rows(g0)):
        client.set_g(block)
    if cfg.per_iteration:
        with t.phase("orthonormalization"):
            _orthonormalize_clients(clients, t)
    warm: list = []
    _iterate(
        clients, agg, t, cfg, h_prev=None, max_iterations=ip, use_criterion=False, history=warm, callback=None
    )
    if recorder is not None:
        recorder.reset()
    with watch.matrix():
        basis = complete_orthonormal_basis(np.hstack(warm))
    with t.phase("proxy"):
        rnd = t.ledger.rounds
        for client in clients:
            t.send_to_aggregator(client.proxy_covariance(basis, rnd))
        cov = agg.gather_sum()
        with watch.matrix():
            _, vecs = jacobi_eigh(cov)
            x = vecs[:, :k]
            _, signs = sign_normalize(basis @ x)
            x = x * signs
        delivered = agg.broadcast(MessageKind.PROXY_EIGVECS, x)
        for client in clients:
            client.receive_proxy_eigvecs(delivered)
    with t.phase("orthonormalization"):
        norms = _orthonormalize_clients(clients, t)
    with t.phase("final"):
        rnd = t.ledger.rounds
        for client in clients:
            t.send_to_aggregator(client.partial_h(rnd))
        h_raw = agg.gather_sum()
        with watch.matrix():
            h, _ = gram_schmidt(h_raw)
        agg.h = h
        delivered = agg.broadcast(MessageKind.GLOBAL_H, h)
        for client in clients:
            client.h = np.array(delivered.payload)
    with t.phase("terminate"):
        t.broadcast(Message(MessageKind.TERMINATE, AGGREGATOR, t.ledger.rounds))
    return FederatedResult(
        g_blocks=[c.g for c in clients],
        h=h,
        sigma=np.sqrt(norms),
        iterations=ip,
        converged=False,
        ledger=t.ledger,
        offsets=p.offsets,
        matrix_seconds=watch.seconds,
        h_history=(warm + [h]) if keep_history else [],
    )


def run_algorithm(
    name: str,
    p: VerticalPartition,
    cfg: ProtocolConfig,
    t: LoopbackTransport,
    *,
    recorder: Optional[TranscriptRecorder] = None,
    keep_history: bool = False,
    callback=None,
) -> FederatedResult:
    """Dispatch by algorithm label. ``cfg.init_mode`` and, for FED-GS, ``ortho_mode`` are overridden."""
    if name == "RI-FULL":
        return federated_subspace_iteration(
            p, replace(cfg, init_mode="random"), t, recorder=recorder, keep_history=keep_history, callback=callback
        )
    if name == "FED-GS":
        return federated_subspace_iteration(
            p,
            replace(cfg, init_mode="random", ortho_mode="per-iteration"),
            t,
            recorder=recorder,
            keep_history=keep_history,
            callback=callback,
        )
    if name == "AI-FULL":
        return federated_subspace_iteration(
            p, replace(cfg, init_mode="approximate"), t, recorder=recorder, keep_history=keep_history, callback=callback
        )
    if name == "AI-ONLY":
        return approximate_init(p, cfg.k, cfg.c, t)
    if name == "RANDOMIZED":
        return federated_randomized_svd(p, cfg, t, recorder=recorder, keep_history=keep_history)
    raise ValueError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")


# -- cost model ----------------------------------------------------------------------


def predicted_float_cost(
    alg: str,
    *,
    iterations: int,
    sites: int,
    k: int,
    m: int,
    c: int = 2,
    i_prime: int = 10,
    ortho_mode: str = "final-only",
) -> int:
    """Exact number of floats the loopback ledger records for one run (both directions).

    With ``GS = S k (k + 1)`` for one federated Gram-Schmidt pass and ``W = 2 S k m``
    for one upload-plus-broadcast of an ``m x k`` matrix:

    ============  =====================================================
    RI-FULL       ``I W + GS``            (+ ``(I + 1) GS`` per-iteration)
    FED-GS        ``I W + (I + 2) GS``
    AI-ONLY       ``S c k m + S k m + GS``
    AI-FULL       ``S c k m + S k m + I W + GS``   (+ ``I GS`` per-iteration)
    RANDOMIZED    ``I' W + S q^2 + S q k + GS + W``, ``q = k I'``
                  (+ ``(I' + 1) GS`` per-iteration)
    ============  =====================================================

    The Terminate broadcast carries no floats.
    """
    if ortho_mode not in ORTHO_MODES:
        raise ValueError(f"ortho_mode must be one of {ORTHO_MODES}")
    s, i = sites, iterations
    gs = s * k * (k + 1)
    w = 2 * s * k * m
    per_iter = ortho_mode == "per-iteration"
    if alg == "FED-GS":
        alg, per_iter = "RI-FULL", True
    if alg == "RI-FULL":
        return i * w + gs + ((i + 1) * gs if per_iter else 0)
    if alg == "AI-ONLY":
        return s * c * k * m + s * k * m + gs
    if alg == "AI-FULL":
        return s * c * k * m + s * k * m + i * w + gs + (i * gs if per_iter else 0)
    if alg == "RANDOMIZED":
        q = k * i_prime
        return i_prime * w + s * q * q + s * q * k + gs + w + ((i_prime + 1) * gs if per_iter else 0)
    raise ValueError(f"unknown algorithm {alg!r}")


def predicted_message_count(
    alg: str, *, iterations: int, sites: int, k: int, i_prime: int = 10, ortho_mode: str = "final-only"
) -> int:
    """Uploads plus per-site deliveries, including the final Terminate broadcast."""
    s = sites
    gs = 2 * s * (2 * k - 1)
    per_iter = ortho_mode == "per-iteration"
    if alg == "FED-GS":
        alg, per_iter = "RI-FULL", True
    if alg == "RI-FULL":
        return iterations * 2 * s + gs + ((iterations + 1) * gs if per_iter else 0) + s
    if alg == "AI-ONLY":
        return 2 * s + gs + s
    if alg == "AI-FULL":
        return 2 * s + iterations * 2 * s + gs + (iterations * gs if per_iter else 0) + s
    if alg == "RANDOMIZED":
        return i_prime * 2 * s + 2 * s + gs + 2 * s + s + ((i_prime + 1) * gs if per_iter else 0)
    raise ValueError(f"unknown algorithm {alg!r}")


# -- privacy scanner -----------------------------------------------------------------


def legitimate_shapes(kind: MessageKind, *, m: int, k: int, c: int, i_prime: int) -> Callable[[tuple], bool]:
    q = k * i_prime
    rules = {
        MessageKind.PARTIAL_H: lambda s: s == (m, k),
        MessageKind.GLOBAL_H: lambda s: s == (m, k),
        MessageKind.PARTIAL_NORM: lambda s: s == (1, 1),
        MessageKind.GLOBAL_NORM: lambda s: s == (1, 1),
        MessageKind.PARTIAL_RESIDUALS: lambda s: s[0] == 1 and 1 <= s[1] < k,
        MessageKind.GLOBAL_RESIDUALS: lambda s: s[0] == 1 and 1 <= s[1] < k,
        MessageKind.LOCAL_SUBSPACE: lambda s: s == (c * k, m),
        MessageKind.PROXY_COV: lambda s: s == (q, q),
        MessageKind.PROXY_EIGVECS: lambda s: s == (q, k),
        MessageKind.TERMINATE: lambda s: s == (0, 0),
    }
    return rules[kind]


def scan_transcript(
    log, *, m: int, k: int, sample_sizes: Sequence[int], c: int = 2, i_prime: int = 10
) -> list:
    """Return log entries that could carry sample-dimension data.

    An entry is flagged when its payload shape is not the declared shape for its
    kind, or when any payload dimension equals a site's sample count (or the
    total) while not being explained by ``m``, ``k`` or the fixed protocol sizes.
    """
    explained = {0, 1, m, k, c * k, k * i_prime} | set(range(1, k))
    sizes = set(sample_sizes) | {sum(sample_sizes)}
    flagged = []
    for entry in log:
        msg = entry.message
        shape = msg.payload.shape
        ok = legitimate_shapes(msg.kind, m=m, k=k, c=c, i_prime=i_prime)(shape)
        suspicious = any(d in sizes and d not in explained for d in shape)
        if not ok or suspicious:
            flagged.append(entry)
    return flagged
