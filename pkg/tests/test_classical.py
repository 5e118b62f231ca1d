import numpy as np
import pytest

from frfid.classical import (ExperimentBlocks, FrfEstimate, ari_estimate, h1_estimate, jio_classical, log_average,
                             log_estimate, phase_align_matrix, unvec, vec)
from frfid.sigproc import SpectralRecord


def _cn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _orthogonal_U(rng, L, n, M):
    """Per line, M blocks of scaled unitary n x n input matrices."""
    blocks = []
    for _ in range(M):
        Q = np.linalg.qr(_cn(rng, L, n, n))[0]
        blocks.append(Q)
    return np.concatenate(blocks, axis=2)


def _record(G0, U, noise=0.0, rng=None, R=None):
    Y = G0 @ U
    if noise:
        Y = Y + noise * _cn(rng, *Y.shape)
    return SpectralRecord(np.arange(1, G0.shape[0] + 1, dtype=float), U, Y, R)


def test_vec_is_column_stacking():
    G = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(vec(G), [1, 3, 2, 4])
    np.testing.assert_array_equal(unvec(vec(G), 2, 2), G)


def test_noise_free_all_estimators_exact():
    rng = np.random.default_rng(0)
    L, n, M = 7, 3, 2
    G0 = _cn(rng, L, n, n)
    U = _orthogonal_U(rng, L, n, M)
    rec = _record(G0, U, R=U)
    for fn in (h1_estimate, ari_estimate, log_estimate, jio_classical):
        est = fn(rec)
        assert est.valid.all()
        np.testing.assert_allclose(est.G, G0, rtol=1e-9, atol=1e-9 * np.abs(G0).max())


def test_h1_scalar_hand_example():
    rec = SpectralRecord(np.array([1.0]), np.array([[[1.0, 1.0]]]) + 0j, np.array([[[2.0, 4.0]]]) + 0j)
    est = h1_estimate(rec, ExperimentBlocks(((0,), (1,))))
    assert est.G[0, 0, 0] == pytest.approx(3.0)


def test_ari_scalar_mean_and_single_block():
    rec = SpectralRecord(np.array([1.0]), np.array([[[1.0, 1.0]]]) + 0j, np.array([[[2.0, 4.0]]]) + 0j)
    assert ari_estimate(rec, ExperimentBlocks(((0,), (1,)))).G[0, 0, 0] == pytest.approx(3.0)
    rng = np.random.default_rng(1)
    noisy = _record(_cn(rng, 5, 2, 2), _orthogonal_U(rng, 5, 2, 1), 0.1, rng)
    np.testing.assert_allclose(ari_estimate(noisy).G, h1_estimate(noisy).G, atol=1e-12)


def test_ari_excludes_singular_block():
    U = np.array([[[1.0, 0.0]]]) + 0j
    Y = np.array([[[2.0, 5.0]]]) + 0j
    rec = SpectralRecord(np.array([1.0]), U, Y)
    est = ari_estimate(rec, ExperimentBlocks(((0,), (1,))))
    assert est.G[0, 0, 0] == pytest.approx(2.0)
    assert est.notes


def test_h1_singular_line_flagged():
    rng = np.random.default_rng(2)
    U = _orthogonal_U(rng, 3, 2, 1)
    U[1] = np.array([[1.0, 1.0], [1.0, 1.0]])
    est = h1_estimate(_record(_cn(rng, 3, 2, 2), U))
    np.testing.assert_array_equal(est.valid, [True, False, True])
    assert np.all(est.G[1] == 0)


def test_h1_error_shrinks_with_M():
    rng = np.random.default_rng(3)
    L, n = 20, 2
    G0 = _cn(rng, L, n, n)
    mse = {}
    for M in (1, 4):
        err = 0.0
        for _ in range(500):
            est = h1_estimate(_record(G0, _orthogonal_U(rng, L, n, M), 0.3, rng))
            err += np.mean(np.abs(est.G - G0) ** 2)
        mse[M] = err / 500
    assert mse[4] < mse[1]
    assert mse[1] / mse[4] == pytest.approx(4.0, rel=0.15)


def test_phase_align_diagonal_example():
    G1 = np.diag([2 * np.exp(1j * np.pi / 3), 5 * np.exp(-2j)])
    P = phase_align_matrix(G1)
    np.testing.assert_allclose(P, np.diag([np.exp(-1j * np.pi / 3), np.exp(2j)]), atol=1e-14)
    np.testing.assert_allclose(P @ G1, np.diag([2.0, 5.0]), atol=1e-14)
    np.testing.assert_allclose(phase_align_matrix(np.diag([1.0, 3.0])), np.eye(2), atol=1e-15)


def test_phase_align_random_eigenvalues_real_positive():
    rng = np.random.default_rng(4)
    for _ in range(50):
        G1 = _cn(rng, 3, 3)
        ev = np.linalg.eigvals(phase_align_matrix(G1) @ G1)
        assert np.all(np.abs(np.angle(ev)) < 1e-8)


def test_log_scalar_geometric_mean():
    Gs = np.array([2.0, 8.0]).reshape(2, 1, 1, 1) + 0j
    assert log_average(Gs).G[0, 0, 0] == pytest.approx(4.0, abs=1e-12)


def test_log_wrap_safe_phase():
    Gs = np.exp(1j * np.deg2rad([170.0, -170.0])).reshape(2, 1, 1, 1)
    g = log_average(Gs).G[0, 0, 0]
    assert abs(g) == pytest.approx(1.0, abs=1e-12)
    assert abs(np.angle(g)) == pytest.approx(np.pi, abs=1e-12)


def test_log_equals_h1_at_single_block():
    rng = np.random.default_rng(5)
    rec = _record(_cn(rng, 9, 3, 3), _orthogonal_U(rng, 9, 3, 1), 0.2, rng)
    np.testing.assert_allclose(log_estimate(rec).G, h1_estimate(rec).G, atol=1e-10)


def test_log_identical_blocks_zero_spread():
    rng = np.random.default_rng(6)
    G0 = _cn(rng, 4, 2, 2)
    est = log_average(np.stack([G0, G0, G0]))
    np.testing.assert_allclose(est.G, G0, atol=1e-12)
    np.testing.assert_allclose(est.cov, 0, atol=1e-20)
    assert est.cov_valid.all()


def test_log_covariance_psd_and_single_block_unavailable():
    rng = np.random.default_rng(7)
    rec = _record(_cn(rng, 6, 2, 2), _orthogonal_U(rng, 6, 2, 3), 0.3, rng)
    est = log_estimate(rec)
    for C in est.cov:
        np.testing.assert_allclose(C, C.conj().T, atol=1e-15)
        assert np.linalg.eigvalsh(C).min() >= -1e-12 * np.trace(C).real
    one = log_estimate(rec, ExperimentBlocks(((0, 1),)))
    assert not one.cov_valid.any()


def test_log_covariance_shrinks_as_one_over_M():
    rng = np.random.default_rng(8)
    L, n, trials = 10, 2, 100
    G0 = _cn(rng, L, n, n) + 3 * np.eye(n)
    Ms = [4, 8, 16, 32]
    tr = []
    for M in Ms:
        acc = 0.0
        for _ in range(trials):
            est = log_estimate(_record(G0, _orthogonal_U(rng, L, n, M), 0.05, rng))
            acc += np.trace(est.cov, axis1=1, axis2=2).real.mean()
        tr.append(acc / trials)
    slope = np.polyfit(np.log(Ms), np.log(tr), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.2)


def test_equivariance_left_transform():
    rng = np.random.default_rng(9)
    L, n = 5, 2
    U = _orthogonal_U(rng, L, n, 2)
    rec = _record(_cn(rng, L, n, n), U, 0.2, rng, R=U + 0.1 * _cn(rng, *U.shape))
    T = _cn(rng, n, n) + 2 * np.eye(n)
    rec_T = SpectralRecord(rec.freqs, rec.U, T @ rec.Y, rec.R)
    for fn in (h1_estimate, ari_estimate, jio_classical):
        np.testing.assert_allclose(fn(rec_T).G, T @ fn(rec).G, rtol=1e-9, atol=1e-12)
    # LOG commutes with scalar gains for any M
    c = 1.7 * np.exp(0.4j)
    rec_c = SpectralRecord(rec.freqs, rec.U, c * rec.Y)
    np.testing.assert_allclose(log_estimate(rec_c).G, c * log_estimate(rec).G, rtol=1e-9)


def test_jio_equals_h1_with_reference_equal_to_input():
    rng = np.random.default_rng(10)
    U = _cn(rng, 4, 1, 1)
    rec = _record(_cn(rng, 4, 1, 1), U, 0.3, rng, R=U)
    np.testing.assert_allclose(jio_classical(rec).G, h1_estimate(rec).G, atol=1e-12)


def test_jio_requires_reference():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError):
        jio_classical(_record(_cn(rng, 2, 1, 1), _cn(rng, 2, 1, 1)))


def test_jio_less_biased_than_h1_in_closed_loop():
    # scalar loop: u = C (r - y), y = G u + v
    rng = np.random.default_rng(12)
    L, trials, sv = 15, 200, 0.5
    G0 = _cn(rng, L, 1, 1)
    C = 1.0 + 0.5 * _cn(rng, L, 1, 1)
    S = 1.0 / (1.0 + G0 * C)
    acc_h1 = np.zeros((L, 1, 1), complex)
    acc_jio = np.zeros((L, 1, 1), complex)
    for _ in range(trials):
        r = np.exp(2j * np.pi * rng.uniform(size=(L, 1, 4)))
        v = sv * _cn(rng, L, 1, 4)
        u = S * C * (r - v)
        y = G0 * u + v
        rec = SpectralRecord(np.arange(1.0, L + 1), u, y, r)
        acc_h1 += h1_estimate(rec).G
        acc_jio += jio_classical(rec).G
    b_h1 = np.mean(np.abs(acc_h1 / trials - G0))
    b_jio = np.mean(np.abs(acc_jio / trials - G0))
    assert b_jio <= b_h1


def test_frf_estimate_marks_nonfinite_invalid():
    G = np.ones((3, 1, 1), complex)
    G[1] = np.nan
    est = FrfEstimate(np.arange(1.0, 4.0), G)
    np.testing.assert_array_equal(est.valid, [True, False, True])
    assert est.G[1, 0, 0] == 0


def test_blocks_validation():
    with pytest.raises(ValueError):
        ExperimentBlocks.contiguous(5, 2)
    with pytest.raises(ValueError):
        ExperimentBlocks(((0, 1), (2,))).check(2, 3)
