import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_hermitian, random_psd
from nearfield import (ArrayGeometry, DegenerateSubspaceWarning, SourceTruth, analytic_covariance,
                       angle_spectrum, bin_angles, bin_to_angle, decompose, sample_covariance,
                       source_steering, steering_vector, synthesize_snapshots)
from nearfield.spectral import centered_bin


def dense_spectrum(r, s):
    """diag(W R~ W^-1) with W built explicitly."""
    m = r.shape[0]
    k = np.arange(s)
    w = np.exp(2j * np.pi * np.outer(k, k) / s)
    rp = np.zeros((s, s), complex)
    rp[:m, :m] = r
    return np.diagonal(w @ rp @ (w.conj().T / s))


# ---- sample covariance --------------------------------------------------

def test_identical_columns():
    y = np.array([1 + 1j, 2, -1j])
    r = sample_covariance(np.tile(y[:, None], (1, 7)))
    np.testing.assert_allclose(r, np.outer(y, y.conj()), atol=1e-14)


def test_identity_snapshots():
    r = sample_covariance(np.eye(5, dtype=complex))
    np.testing.assert_allclose(r, np.eye(5) / 5, atol=0)


def test_covariance_exactly_hermitian():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((6, 11)) + 1j * rng.standard_normal((6, 11))
    r = sample_covariance(y)
    assert np.array_equal(r, r.conj().T)


def test_covariance_rejects_bad_input():
    with pytest.raises(ValueError):
        sample_covariance(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        sample_covariance(np.ones(4))


def test_covariance_statistical_single_source():
    g = ArrayGeometry(17, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6)])
    a = steering_vector(g, 3.0, math.radians(6))
    errs = []
    for seed in range(20):
        r = sample_covariance(synthesize_snapshots(g, t, 200, 0.0, seed))
        errs.append(np.linalg.norm(r - np.outer(a, a.conj())) / np.linalg.norm(r))
    assert np.median(errs) < 0.2


# ---- eigendecomposition -------------------------------------------------

def check_decomposition(r, dec, tol=1e-8):
    k = dec.num_sources
    m = r.shape[0]
    es, en = dec.signal_basis, dec.noise_basis
    assert es.shape == (m, k) and en.shape == (m, m - k)
    assert np.all(np.diff(dec.eigenvalues) <= 0)
    assert np.linalg.norm(es.conj().T @ es - np.eye(k)) < tol
    assert np.linalg.norm(en.conj().T @ en - np.eye(m - k)) < tol
    assert np.linalg.norm(es.conj().T @ en) < tol
    assert np.linalg.norm(dec.reconstruct() - r) < tol * np.linalg.norm(r)


@given(st.integers(2, 32), st.integers(0, 2**32 - 1), st.data())
def test_decompose_invariants(m, seed, data):
    k = data.draw(st.integers(1, m - 1))
    r = random_psd(np.random.default_rng(seed), m)
    check_decomposition(r, decompose(r, k))


def test_decompose_identity_warns():
    r = np.eye(6, dtype=complex)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        dec = decompose(r, 1)
    assert any(issubclass(w.category, DegenerateSubspaceWarning) for w in rec)
    assert dec.degenerate_gap
    np.testing.assert_allclose(dec.eigenvalues, 1.0)
    check_decomposition(r, dec)


def test_decompose_single_source_eigenvalue():
    g = ArrayGeometry(21, 0.005, 0.01)
    r = analytic_covariance(g, SourceTruth.from_degrees([(3, 10)]), 0.0)
    dec = decompose(r, 1)
    assert dec.eigenvalues[0] == pytest.approx(21.0, rel=1e-12)
    assert np.max(np.abs(dec.eigenvalues[1:])) < 1e-10
    assert not dec.degenerate_gap


def test_decompose_noise_floor_equals_sigma2():
    g = ArrayGeometry(33, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6), (4, 7), (32, 20)])
    dec = decompose(analytic_covariance(g, t, 0.3), 3)
    np.testing.assert_allclose(dec.eigenvalues[3:], 0.3, atol=1e-8)


def test_decompose_bad_k():
    with pytest.raises(ValueError):
        decompose(np.eye(4), 0)
    with pytest.raises(ValueError):
        decompose(np.eye(4), 4)


@given(st.integers(0, 2**32 - 1), st.sampled_from([17, 33, 65]))
def test_noise_subspace_orthogonal_at_sources(seed, m):
    rng = np.random.default_rng(seed)
    g = ArrayGeometry(m, 0.005, 0.01)
    k = int(rng.integers(1, 4))
    srcs = [(float(rng.uniform(1, 40)), float(rng.uniform(-60, 60))) for _ in range(k)]
    t = SourceTruth.from_degrees(srcs)
    en = decompose(analytic_covariance(g, t, 0.1), k).noise_basis
    a = source_steering(g, t)
    assert np.max(np.linalg.norm(en.conj().T @ a, axis=0)) < 1e-6 * math.sqrt(m)


# ---- angle spectrum -----------------------------------------------------

def test_fft_matches_dense_example():
    rng = np.random.default_rng(1)
    r = random_hermitian(rng, 16)
    np.testing.assert_allclose(angle_spectrum(r, 32).values, dense_spectrum(r, 32).real,
                               rtol=0, atol=1e-10)


@given(st.integers(1, 32), st.integers(0, 32), st.integers(0, 2**32 - 1))
def test_fft_matches_dense(m, extra, seed):
    s = m + extra
    r = random_hermitian(np.random.default_rng(seed), m)
    p = angle_spectrum(r, s).values
    dense = dense_spectrum(r, s)
    scale = max(1.0, np.max(np.abs(dense)))
    assert np.max(np.abs(p - dense.real)) <= 1e-10 * scale
    assert np.max(np.abs(dense.imag)) <= 1e-10 * scale


@given(st.integers(1, 48), st.integers(0, 64), st.integers(0, 2**32 - 1))
def test_spectrum_real_nonnegative_trace(m, extra, seed):
    s = m + extra
    r = random_psd(np.random.default_rng(seed), m)
    p = angle_spectrum(r, s).values
    assert p.dtype == float and p.shape == (s,)
    assert np.min(p) >= -1e-8 * np.max(p)
    tr = np.trace(r).real
    assert abs(p.sum() - tr) <= 1e-8 * tr


def test_identity_flat_unpadded():
    np.testing.assert_allclose(angle_spectrum(np.eye(8), 8).values, 1.0, atol=1e-14)


def test_identity_flat_padded_is_m_over_s():
    np.testing.assert_allclose(angle_spectrum(np.eye(8), 32).values, 8 / 32, atol=1e-14)


def test_spectrum_rejects_small_s():
    with pytest.raises(ValueError):
        angle_spectrum(np.eye(8), 7)


def test_spectrum_rejects_non_hermitian():
    r = np.eye(4, dtype=complex)
    r[0, 1] = 1j
    with pytest.raises(ValueError):
        angle_spectrum(r, 8)


@pytest.mark.parametrize("deg", [-50.0, -20.0, 0.0, 6.0, 20.0, 45.0])
def test_far_field_peak_bin(deg):
    g = ArrayGeometry(33, 0.005, 0.01)
    r = analytic_covariance(g, SourceTruth.from_degrees([(1e5, deg)]), 0.0)
    spec = angle_spectrum(r, 128, g)
    best = int(np.argmax(spec.values))
    ang = spec.bin_angles
    nearest = int(np.nanargmin(np.abs(ang - math.radians(deg))))
    assert best == nearest
    # brute-force quadratic form with row s of W: w_s R w_s^H / S
    s = 128
    rows = [np.exp(2j * np.pi * np.arange(33) * b / s) for b in range(s)]
    brute = [np.real(w @ r @ w.conj()) / s for w in rows]
    np.testing.assert_allclose(spec.values, brute, atol=1e-9)


# ---- bin to angle -------------------------------------------------------

def test_bin_zero_is_broadside():
    g = ArrayGeometry(9, 0.005, 0.01)
    assert bin_to_angle(g, 64, 0) == 0.0


def test_quarter_bin_is_thirty_degrees():
    g = ArrayGeometry(9, 0.005, 0.01)
    # u = +1/4 looks towards -30 deg, u = -1/4 towards +30 deg
    assert math.degrees(bin_to_angle(g, 64, 16)) == pytest.approx(-30.0)
    assert math.degrees(bin_to_angle(g, 64, 48)) == pytest.approx(30.0)


def test_edge_bin_is_endfire():
    g = ArrayGeometry(9, 0.005, 0.01)
    assert math.degrees(bin_to_angle(g, 64, 32)) == pytest.approx(90.0)


def test_unmapped_bins_for_dense_spacing():
    g = ArrayGeometry(9, 0.0025, 0.01)  # d = lambda / 4
    assert bin_to_angle(g, 64, 20) is None
    assert np.isnan(bin_angles(g, 64)[20])
    assert bin_to_angle(g, 64, 8) == pytest.approx(-math.pi / 6)


def test_bin_index_checked():
    g = ArrayGeometry(9, 0.005, 0.01)
    with pytest.raises(IndexError):
        bin_to_angle(g, 64, 64)


@given(st.integers(3, 40), st.integers(0, 200))
def test_bin_angles_vectorised(n, extra):
    g = ArrayGeometry(2 * n + 1, 0.004, 0.01)
    s = 2 * n + 1 + extra
    vec = bin_angles(g, s)
    for b in range(0, s, max(1, s // 17)):
        one = bin_to_angle(g, s, b)
        assert (one is None and np.isnan(vec[b])) or vec[b] == one


def test_centered_bin():
    assert centered_bin(8, np.arange(8)).tolist() == [0, 1, 2, 3, -4, -3, -2, -1]
    assert centered_bin(7, np.arange(7)).tolist() == [0, 1, 2, 3, -3, -2, -1]


def test_ordered_ascending():
    g = ArrayGeometry(9, 0.005, 0.01)
    spec = angle_spectrum(np.eye(9), 32, g)
    bins, ang, vals = spec.ordered()
    assert np.all(np.diff(ang) > 0)
    assert np.array_equal(vals, spec.values[bins])
