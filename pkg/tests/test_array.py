import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nearfield import (ArrayGeometry, GeometryError, Source, SourceTruth, analytic_covariance,
                       element_positions, sample_covariance, snr_to_noise_var,
                       source_element_distance, source_steering, steering_matrix, steering_vector,
                       synthesize_snapshots)
from nearfield.array import SPEED_OF_LIGHT


def scalar_entry(lam, d, r, theta, delta):
    """Steering entry straight from the spherical-wavefront distance, no vectorisation."""
    x = delta * d
    rd = math.sqrt(x * x + r * r - 2 * x * r * math.sin(theta))
    return cmath.exp(-1j * 2 * math.pi / lam * (rd - r))


# ---- geometry ----------------------------------------------------------

def test_positions_m3():
    g = ArrayGeometry(3, 0.005, 0.01)
    assert element_positions(g).tolist() == [-0.005, 0.0, 0.005]


def test_positions_integer_case():
    g = ArrayGeometry(5, 1.0, 2.0)
    assert element_positions(g).tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]


def test_positions_513_span():
    g = ArrayGeometry(513, 0.005, 0.01)
    x = element_positions(g)
    assert x[0] == pytest.approx(-1.28, abs=1e-12)
    assert x[-1] == pytest.approx(1.28, abs=1e-12)
    assert g.aperture == pytest.approx(2.56)


@pytest.mark.parametrize("m", [0, 1, 2, 4, 512])
def test_bad_element_count(m):
    with pytest.raises(GeometryError):
        ArrayGeometry(m, 0.005, 0.01)


def test_even_m_message():
    with pytest.raises(GeometryError, match="M must be odd"):
        ArrayGeometry(512, 0.005, 0.01)


@pytest.mark.parametrize("d,lam", [(0, 0.01), (-1, 0.01), (0.005, 0), (float("nan"), 0.01)])
def test_bad_lengths(d, lam):
    with pytest.raises(GeometryError):
        ArrayGeometry(5, d, lam)


def test_from_carrier():
    g = ArrayGeometry.from_carrier(513, 30e9)
    assert g.wavelength == SPEED_OF_LIGHT / 30e9
    assert g.spacing == 0.5 * g.wavelength
    assert g.half_size == 256
    assert g.indices[0] == -256 and g.indices[-1] == 256


def test_source_validation():
    with pytest.raises(GeometryError):
        Source(0.0, 0.1)
    with pytest.raises(GeometryError):
        Source(1.0, math.pi / 2)
    with pytest.raises(GeometryError):
        Source(1.0, 0.0, power=0.0)
    t = SourceTruth.from_degrees([(3, 6), (32, 20, 2.0)])
    assert len(t) == 2
    np.testing.assert_allclose(t.angles, np.deg2rad([6, 20]))
    assert t.powers.tolist() == [1.0, 2.0]


# ---- distances ----------------------------------------------------------

def test_distance_reference_element():
    g = ArrayGeometry(9, 0.005, 0.01)
    for r, th in [(0.3, 0.0), (3.0, 0.4), (40.0, -1.2)]:
        assert source_element_distance(g, r, th, 0) == r


def test_distance_broadside_oracle():
    g = ArrayGeometry(3, 0.005, 0.01)
    assert source_element_distance(g, 3.0, 0.0, 1) == pytest.approx(math.sqrt(9 + 2.5e-5), rel=1e-15)


def test_distance_degenerate_rejected():
    g = ArrayGeometry(3, 0.005, 0.01)
    with pytest.raises(GeometryError):
        source_element_distance(g, 0.005, math.pi / 2 - 1e-12, 1)
    with pytest.raises(GeometryError):
        source_element_distance(g, 0.0, 0.0, 1)
    with pytest.raises(GeometryError):
        source_element_distance(g, 1.0, 0.0, 2)


def test_steering_on_element_rejected():
    g = ArrayGeometry(3, 0.005, 0.01)
    with pytest.raises(GeometryError):
        steering_vector(g, 0.005, math.pi / 2 - 1e-12)


# ---- steering vectors ---------------------------------------------------

def test_steering_scalar_oracle_m3():
    lam = 0.01
    g = ArrayGeometry(3, lam / 2, lam)
    th = math.radians(6)
    a = steering_vector(g, 3.0, th)
    want = [scalar_entry(lam, lam / 2, 3.0, th, d) for d in (-1, 0, 1)]
    np.testing.assert_allclose(a, want, rtol=0, atol=1e-12)


def test_steering_frozen_values():
    # 40-digit mpmath evaluation of the same scene
    g = ArrayGeometry(3, 0.005, 0.01)
    a = steering_vector(g, 3.0, math.radians(6))
    want = [0.945726020645 - 0.324965065623j, 1.0, 0.94739625203 + 0.320063027605j]
    np.testing.assert_allclose(a, want, rtol=0, atol=1e-11)


def test_reference_entry_exact():
    g = ArrayGeometry(17, 0.005, 0.01)
    a = steering_matrix(g, np.array([0.3, 3.0, 400.0]), np.array([-1.0, 0.1, 1.3]))
    assert np.all(a[:, g.half_size] == 1 + 0j)


def test_far_field_example():
    lam = 0.01
    g = ArrayGeometry(9, lam / 2, lam)
    th = 0.4
    a = steering_vector(g, 1e6 * lam, th)
    plane = np.exp(1j * np.pi * g.indices * np.sin(th))
    assert np.max(np.abs(np.angle(a / plane))) < 1e-3


def test_source_steering_shape():
    g = ArrayGeometry(5, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6), (4, 7)])
    a = source_steering(g, t)
    assert a.shape == (5, 2)
    np.testing.assert_array_equal(a[:, 1], steering_vector(g, 4.0, math.radians(7)))
    assert source_steering(g, SourceTruth()).shape == (5, 0)


geometries = st.builds(
    lambda n, frac, lam: ArrayGeometry(2 * n + 1, frac * lam, lam),
    st.integers(1, 64), st.floats(0.2, 1.0), st.floats(1e-3, 1.0))


@given(geometries, st.floats(0.05, 1e4), st.floats(-1.5, 1.5))
def test_unit_modulus(g, r_scale, th):
    r = r_scale * max(g.aperture, g.wavelength)
    a = steering_vector(g, r, th)
    np.testing.assert_allclose(np.abs(a), 1.0, rtol=1e-12, atol=0)
    assert a[g.half_size] == 1


@given(geometries, st.floats(0.05, 1e3), st.floats(-1.5, 1.5))
def test_mirror_symmetry(g, r_scale, th):
    r = r_scale * max(g.aperture, g.wavelength)
    a = steering_vector(g, r, th)
    b = steering_vector(g, r, -th)
    np.testing.assert_allclose(a, b[::-1], rtol=0, atol=1e-12)


# aperture/lambda <= 12 keeps the quadratic phase term below 1e-3 rad at r = 1e4 apertures
far_geometries = st.builds(
    lambda n, frac, lam: ArrayGeometry(2 * n + 1, frac * lam, lam),
    st.integers(1, 12), st.floats(0.2, 0.5), st.floats(1e-3, 1.0))


@given(far_geometries, st.floats(1e4, 1e6), st.floats(-1.5, 1.5))
def test_far_field_phase(g, mult, th):
    r = mult * g.aperture
    a = steering_vector(g, r, th)
    plane = g.wavenumber * element_positions(g) * math.sin(th)
    err = np.angle(a * np.exp(-1j * plane))
    assert np.max(np.abs(err)) < 1e-3


# ---- snapshots ----------------------------------------------------------

def test_snapshots_deterministic():
    g = ArrayGeometry(9, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6), (32, 20)])
    y1 = synthesize_snapshots(g, t, 50, 0.1, seed=7)
    y2 = synthesize_snapshots(g, t, 50, 0.1, seed=7)
    assert y1.shape == (9, 50)
    np.testing.assert_array_equal(y1, y2)
    assert not np.array_equal(y1, synthesize_snapshots(g, t, 50, 0.1, seed=8))


def test_snapshots_signal_part_shared_across_snr():
    g = ArrayGeometry(9, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6)])
    clean = synthesize_snapshots(g, t, 20, 0.0, seed=3)
    noisy = synthesize_snapshots(g, t, 20, 1.0, seed=3)
    # noise is drawn after the symbols, so the difference is pure noise
    z = noisy - clean
    assert abs(np.mean(np.abs(z) ** 2) - 1.0) < 0.3


def test_snapshots_reject_bad_args():
    g = ArrayGeometry(5, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6)])
    with pytest.raises(GeometryError):
        synthesize_snapshots(g, t, 0, 0.1, 0)
    with pytest.raises(GeometryError):
        synthesize_snapshots(g, t, 5, -1.0, 0)


def test_noiseless_rank():
    g = ArrayGeometry(33, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6), (4, 7), (32, 20)])
    r = sample_covariance(synthesize_snapshots(g, t, 200, 0.0, seed=1))
    w = np.sort(np.linalg.eigvalsh(r))[::-1]
    assert w[3] < 1e-8 * w[2]


def test_noiseless_single_source_rank_one():
    g = ArrayGeometry(17, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 10)])
    r = sample_covariance(synthesize_snapshots(g, t, 2000, 0.0, seed=2))
    a = steering_vector(g, 3.0, math.radians(10))
    p = np.real(np.trace(r)) / 17
    np.testing.assert_allclose(r, p * np.outer(a, a.conj()), atol=1e-10 * p)


def test_pure_noise_eigenvalues_near_one():
    g = ArrayGeometry(9, 0.005, 0.01)
    r = sample_covariance(synthesize_snapshots(g, SourceTruth(), 10_000, 1.0, seed=4))
    w = np.linalg.eigvalsh(r)
    assert np.all(np.abs(w - 1.0) < 0.1)


def test_analytic_covariance_form():
    g = ArrayGeometry(9, 0.005, 0.01)
    t = SourceTruth.from_degrees([(3, 6, 2.0)])
    r = analytic_covariance(g, t, 0.5)
    a = steering_vector(g, 3.0, math.radians(6))
    np.testing.assert_allclose(r, 2.0 * np.outer(a, a.conj()) + 0.5 * np.eye(9), atol=1e-12)


def test_snr_convention():
    assert snr_to_noise_var(10.0) == pytest.approx(0.1)
    assert snr_to_noise_var(0.0) == 1.0
    assert snr_to_noise_var(float("inf")) == 0.0
