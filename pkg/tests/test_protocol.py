import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsvd.errors import DimensionMismatch, NotConverged, RankDeficient
from fedsvd.linalg import (
    ConvergenceCriterion,
    gram_schmidt,
    principal_angles,
    reference_svd,
    vertical_subspace_iteration,
)
from fedsvd.partition import SyntheticSpec, generate_synthetic, geometric_spectrum, split_columns, stack_right_blocks
from fedsvd.protocol import (
    ALGORITHMS,
    ProtocolConfig,
    TranscriptRecorder,
    approximate_init,
    federated_gram_schmidt,
    federated_randomized_svd,
    federated_subspace_iteration,
    predicted_float_cost,
    predicted_message_count,
    run_algorithm,
    scan_transcript,
)
from fedsvd.transport import AGGREGATOR, LogEntry, LoopbackTransport, Message, MessageKind


def gap_rich(m, n, seed, rank=None, ratio=0.8):
    return generate_synthetic(SyntheticSpec(m, n, geometric_spectrum(rank or min(m, n), ratio=ratio), seed))


def run(alg, a, weights, cfg, **kw):
    p = split_columns(a, weights)
    t = LoopbackTransport(p.num_sites)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        return run_algorithm(alg, p, cfg, t, **kw), t, p


# -- equivalence with the centralized iteration ----------------------------------------


def _trajectories(a, k, weights, seed, crit):
    central = []
    vertical_subspace_iteration(a, k, crit, seed=seed, callback=lambda i, h, g: central.append((h, g)))
    p = split_columns(a, weights)
    fed = []
    federated_subspace_iteration(
        p,
        ProtocolConfig(k, crit, ortho_mode="per-iteration", seed=seed),
        LoopbackTransport(p.num_sites),
        callback=lambda i, h, g: fed.append((h, stack_right_blocks(g, p.offsets))),
    )
    return central, fed


def test_single_site_reproduces_centralized_bit_for_bit():
    a = np.random.default_rng(42).standard_normal((20, 15))
    crit = ConvergenceCriterion(1e-9, 300)
    central, fed = _trajectories(a, 5, [1], 3, crit)
    assert len(central) == len(fed)
    for (hc, gc), (hf, gf) in zip(central, fed):
        assert np.array_equal(hc, hf) and np.array_equal(gc, gf)
    ref = vertical_subspace_iteration(a, 5, crit, seed=3)
    res = federated_subspace_iteration(
        split_columns(a, [1]), ProtocolConfig(5, crit, ortho_mode="per-iteration", seed=3), LoopbackTransport(1)
    )
    assert np.array_equal(res.h, ref.h) and np.array_equal(res.sigma, ref.sigma)
    # the mandatory closing Gram-Schmidt pass re-normalizes an orthonormal G
    assert np.abs(res.g - ref.g).max() < 1e-14


def test_three_sites_match_centralized_trajectory():
    a = np.random.default_rng(42).standard_normal((20, 15))
    central, fed = _trajectories(a, 5, [1, 1, 1], 0, ConvergenceCriterion(1e-9, 400))
    assert len(central) == len(fed)
    diff = max(max(np.abs(hc - hf).max(), np.abs(gc - gf).max()) for (hc, gc), (hf, gf) in zip(central, fed))
    assert diff < 1e-9


# -- federated Gram-Schmidt -------------------------------------------------------------


@given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_federated_gram_schmidt_equals_dense(sites, k, seed):
    rows = max(k + 2, sites) + seed % 20
    v = np.random.default_rng(seed).standard_normal((rows, k))
    p = split_columns(v.T, [1] * sites)  # row partition of v
    t = LoopbackTransport(sites)
    blocks, norms = federated_gram_schmidt(p.slice_rows(v), t)
    u, dense_norms = gram_schmidt(v)
    assert np.abs(stack_right_blocks(blocks, p.offsets) - u).max() < 1e-12
    assert np.allclose(norms, dense_norms, rtol=1e-12)
    # scalar traffic only: S(2k-1) uploads and as many deliveries
    assert t.ledger.messages == 2 * sites * (2 * k - 1)
    assert t.ledger.total_floats == sites * k * (k + 1)
    for entry in t.log:
        assert entry.message.payload.shape[0] == 1 and entry.message.payload.shape[1] < max(k, 2)


def test_federated_gram_schmidt_single_site_bit_exact():
    v = np.random.default_rng(5).standard_normal((12, 4))
    blocks, norms = federated_gram_schmidt([v], LoopbackTransport(1))
    u, dense = gram_schmidt(v)
    assert np.array_equal(blocks[0], u) and np.array_equal(norms, dense)


def test_federated_gram_schmidt_rank_deficient():
    v = np.random.default_rng(1).standard_normal((12, 3))
    v[:, 2] = v[:, 0] - 2 * v[:, 1]
    with pytest.raises(RankDeficient) as exc:
        federated_gram_schmidt([v[:4], v[4:8], v[8:]], LoopbackTransport(3))
    assert exc.value.column == 2


def test_federated_gram_schmidt_block_count_checked():
    with pytest.raises(DimensionMismatch):
        federated_gram_schmidt([np.ones((2, 1))], LoopbackTransport(2))


# -- final result quality ---------------------------------------------------------------------


@pytest.mark.parametrize("ortho", ["none", "final-only", "per-iteration"])
def test_residual_check_every_ortho_mode(ortho):
    # the default tolerance stops near 1e-4 rad; a residual of 1e-6 |A| needs a tighter one
    a = gap_rich(30, 24, 3, ratio=0.7)
    cfg = ProtocolConfig(4, ConvergenceCriterion(1e-13, 1000), ortho_mode=ortho)
    res, _, _ = run("RI-FULL", a, [1, 2, 1], cfg)
    assert res.converged
    assert np.abs(res.g.T @ res.g - np.eye(4)).max() < 1e-10
    resid = np.linalg.norm(a @ res.g - res.h * res.sigma, axis=0)
    assert np.all(resid <= 1e-6 * np.linalg.norm(a))


def test_not_converged_flag():
    a = gap_rich(12, 10, 1, ratio=0.99)
    p = split_columns(a, [1, 1])
    with pytest.warns(NotConverged):
        res = federated_subspace_iteration(p, ProtocolConfig(3, ConvergenceCriterion(1e-12, 3)), LoopbackTransport(2))
    assert not res.converged and res.iterations == 3


def test_k_out_of_range():
    p = split_columns(np.ones((3, 4)), [1, 1])
    with pytest.raises(DimensionMismatch):
        federated_subspace_iteration(p, ProtocolConfig(4), LoopbackTransport(2))
    with pytest.raises(DimensionMismatch):
        federated_subspace_iteration(p, ProtocolConfig(2), LoopbackTransport(3))


def test_protocol_config_validation():
    for bad in (dict(k=0), dict(k=1, c=0), dict(k=1, i_prime=0), dict(k=1, ortho_mode="x"), dict(k=1, seed=-1)):
        with pytest.raises(ValueError):
            ProtocolConfig(**bad)


# -- approximate init ------------------------------------------------------------------------


def test_approximate_init_exact_on_homogeneous_low_rank_data():
    block = gap_rich(20, 12, 4, rank=3)
    a = np.hstack([block, block, block])
    p = split_columns(a, [1, 1, 1])
    res = approximate_init(p, 3, 2, LoopbackTransport(3))
    ref = reference_svd(a, 3)
    assert np.all(principal_angles(res.h, ref.h) <= 1e-6)
    assert res.iterations == 0


def test_approximate_init_beats_random_start():
    a = gap_rich(40, 30, 8)
    k = 4
    ref = reference_svd(a, k)
    ai, _, _ = run("AI-ONLY", a, [1, 1, 1], ProtocolConfig(k))
    p = split_columns(a, [1, 1, 1])
    first = []
    federated_subspace_iteration(
        p,
        ProtocolConfig(k, ConvergenceCriterion(0.0, 1)),
        LoopbackTransport(3),
        callback=lambda i, h, g: first.append(h),
    )
    assert principal_angles(ai.h, ref.h).max() < principal_angles(first[0], ref.h).max()
    full, _, _ = run("AI-FULL", a, [1, 1, 1], ProtocolConfig(k))
    rand, _, _ = run("RI-FULL", a, [1, 1, 1], ProtocolConfig(k))
    assert full.iterations < rand.iterations


def test_approximate_init_requires_room_for_ck():
    p = split_columns(np.random.default_rng(0).standard_normal((10, 6)), [1, 1, 1])
    with pytest.raises(DimensionMismatch):
        approximate_init(p, 2, 2, LoopbackTransport(3))


# -- randomized -------------------------------------------------------------------------------


def test_randomized_captures_exact_rank():
    a = gap_rich(40, 30, 6, rank=6)
    res, t, _ = run("RANDOMIZED", a, [1, 1], ProtocolConfig(3, i_prime=2))
    ref = reference_svd(a, 3)
    assert np.all(principal_angles(res.h, ref.h) <= 0.01)
    assert np.abs(res.g.T @ res.g - np.eye(3)).max() < 1e-10
    assert np.allclose(res.sigma, ref.sigma, rtol=1e-9)


@pytest.mark.parametrize("m,n", [(30, 20), (50, 40)])
def test_randomized_proxy_dims_and_broadcast_count(m, n):
    a = np.random.default_rng(m).standard_normal((m, n))
    res, t, _ = run("RANDOMIZED", a, [1, 1, 1], ProtocolConfig(2, i_prime=4))
    proxy = [e.message for e in t.log if e.message.kind == MessageKind.PROXY_COV]
    assert {msg.payload.shape for msg in proxy} == {(8, 8)}
    full_width = [e for e in t.log if e.direction == "down" and e.message.payload.shape == (m, 2)]
    assert len(full_width) == 4 + 1


def test_randomized_precondition():
    p = split_columns(np.random.default_rng(0).standard_normal((10, 9)), [1, 1])
    with pytest.raises(DimensionMismatch):
        federated_randomized_svd(p, ProtocolConfig(2, i_prime=5), LoopbackTransport(2))


# -- cost model and ledger ------------------------------------------------------------------


@pytest.mark.parametrize("alg", ALGORITHMS)
@pytest.mark.parametrize("ortho", ["final-only", "per-iteration"])
def test_ledger_matches_prediction(alg, ortho):
    a = np.random.default_rng(11).standard_normal((16, 12))
    cfg = ProtocolConfig(2, ConvergenceCriterion(1e-6, 50), ortho_mode=ortho, i_prime=3)
    res, t, p = run(alg, a, [1, 1], cfg)
    kw = dict(iterations=res.iterations, sites=2, k=2, i_prime=3, ortho_mode=ortho)
    assert t.ledger.total_floats == predicted_float_cost(alg, m=16, c=2, **kw)
    assert t.ledger.messages == predicted_message_count(alg, **kw)


def test_ri_full_per_iteration_cost():
    one = predicted_float_cost("RI-FULL", iterations=1, sites=3, k=2, m=10)
    two = predicted_float_cost("RI-FULL", iterations=2, sites=3, k=2, m=10)
    assert two - one == 2 * 3 * 2 * 10


def test_ledger_independent_of_values():
    cfg = ProtocolConfig(3, ConvergenceCriterion(0.0, 6))
    ledgers = []
    for seed in (1, 2):
        a = np.random.default_rng(seed).standard_normal((14, 11))
        _, t, _ = run("RI-FULL", a, [2, 1, 1], cfg)
        ledgers.append(t.ledger.as_dict())
    assert ledgers[0] == ledgers[1]


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_transcripts_are_deterministic(alg):
    a = np.random.default_rng(4).standard_normal((18, 14))
    cfg = ProtocolConfig(2, ConvergenceCriterion(1e-8, 40), i_prime=3, seed=9)
    first = run(alg, a, [1, 2], cfg)[1].transcript_bytes()
    second = run(alg, a, [1, 2], cfg)[1].transcript_bytes()
    assert first == second and len(first) > 0


# -- privacy scanner ------------------------------------------------------------------------------


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_scanner_clean_for_every_algorithm(alg):
    a = np.random.default_rng(2).standard_normal((16, 23))
    res, t, p = run(alg, a, [1, 1, 1], ProtocolConfig(3, ConvergenceCriterion(1e-8, 30), i_prime=2))
    assert p.sizes == (8, 8, 7)
    assert scan_transcript(t.log, m=16, k=3, sample_sizes=p.sizes, i_prime=2) == []


def test_scanner_flags_a_leaked_block():
    g_block = np.ones((8, 3))
    leaked = LogEntry("up", Message(MessageKind.PARTIAL_H, 0, 0, g_block))
    wrong_kind = LogEntry("up", Message(MessageKind.PARTIAL_NORM, 0, 0, np.ones((1, 3))))
    ok = LogEntry("down", Message(MessageKind.GLOBAL_H, AGGREGATOR, 0, np.ones((16, 3))))
    flagged = scan_transcript([leaked, wrong_kind, ok], m=16, k=3, sample_sizes=(8, 8, 7))
    assert flagged == [leaked, wrong_kind]


# -- attack hook -----------------------------------------------------------------------------------


def test_recorder_pairs_satisfy_linear_model():
    a = np.random.default_rng(3).standard_normal((12, 30))
    rec = TranscriptRecorder()
    run("RI-FULL", a, [1, 1, 1], ProtocolConfig(2, ConvergenceCriterion(0.0, 5), ortho_mode="none"), recorder=rec)
    k_true = a @ a.T
    assert len(rec.pairs) == 4
    for _, h_b, h_r in rec.pairs:
        assert np.abs(h_r - k_true @ h_b).max() <= 1e-9 * np.abs(k_true).max()


def test_recorder_skips_pairs_broken_by_orthonormalization():
    a = np.random.default_rng(3).standard_normal((12, 30))
    rec = TranscriptRecorder()
    run("FED-GS", a, [1, 1], ProtocolConfig(2, ConvergenceCriterion(0.0, 5)), recorder=rec)
    assert rec.pairs == []
    rec = TranscriptRecorder()
    run("RANDOMIZED", a, [1, 1], ProtocolConfig(2, i_prime=4), recorder=rec)
    assert len(rec.pairs) == 3
