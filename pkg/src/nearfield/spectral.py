"""Sample covariance, subspace split and the FFT angle spectrum."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .array import ArrayGeometry
from .errors import DegenerateSubspaceWarning

_GAP_RATIO = 1.0 + 1e-6
_IMAG_RTOL = 1e-8


def sample_covariance(y: np.ndarray) -> np.ndarray:
    """``R = Y Y^H / J``, symmetrized to remove rounding skew."""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] < 1:
        raise ValueError(f"snapshot matrix must be M x J with J >= 1, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("snapshot matrix contains non-finite entries")
    r = (y @ y.conj().T) / y.shape[1]
    return 0.5 * (r + r.conj().T)


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Eigen-split of a covariance matrix into signal and noise subspaces.

    ``eigenvalues`` are sorted in descending order; ``signal_basis`` holds the
    leading ``num_sources`` eigenvectors and ``noise_basis`` the rest. Both
    bases are C-contiguous so they feed BLAS directly.
    """

    eigenvalues: np.ndarray
    signal_basis: np.ndarray
    noise_basis: np.ndarray
    num_sources: int
    degenerate_gap: bool = False

    def reconstruct(self) -> np.ndarray:
        k = self.num_sources
        es, en = self.signal_basis, self.noise_basis
        return (es * self.eigenvalues[:k]) @ es.conj().T + (en * self.eigenvalues[k:]) @ en.conj().T


def decompose(r: np.ndarray, num_sources: int) -> SubspaceDecomposition:
    """Hermitian eigendecomposition of ``r`` split at ``num_sources``.

    A signal/noise eigenvalue gap below one part in 10^6 raises a
    :class:`DegenerateSubspaceWarning` and sets ``degenerate_gap``; the split
    is still returned.
    """
    r = np.asarray(r)
    m = r.shape[0]
    k = int(num_sources)
    if not 1 <= k < m:
        raise ValueError(f"number of sources must satisfy 1 <= K < M={m}, got {num_sources}")
    w, v = np.linalg.eigh(r)
    w = w[::-1].copy()
    v = v[:, ::-1]
    degenerate = bool(w[k - 1] <= _GAP_RATIO * max(w[k], 0.0))
    if degenerate:
        warnings.warn(
            f"eigenvalue gap lambda_K/lambda_(K+1) below {_GAP_RATIO} at K={k}",
            DegenerateSubspaceWarning, stacklevel=2)
    return SubspaceDecomposition(
        eigenvalues=w,
        signal_basis=np.ascontiguousarray(v[:, :k]),
        noise_basis=np.ascontiguousarray(v[:, k:]),
        num_sources=k,
        degenerate_gap=degenerate,
    )


@dataclass(frozen=True)
class AngleSpectrum:
    """FFT angle spectrum.

    ``bin_angles[s]`` is the angle (radians) that FFT bin ``s`` maps to, or
    NaN when the bin lies outside the visible region.
    """

    values: np.ndarray
    num_bins: int
    bin_angles: np.ndarray

    def ordered(self):
        """Mapped bins sorted by ascending angle: ``(bins, angles, values)``."""
        bins = np.flatnonzero(np.isfinite(self.bin_angles))
        order = np.argsort(self.bin_angles[bins], kind="stable")
        bins = bins[order]
        return bins, self.bin_angles[bins], self.values[bins]


def centered_bin(num_bins: int, b):
    """Signed frequency index of FFT bin ``b`` (``fftfreq`` convention)."""
    b = np.asarray(b)
    return np.where(b < (num_bins + 1) // 2, b, b - num_bins)


def bin_to_angle(geom: ArrayGeometry, num_bins: int, b: int) -> Optional[float]:
    """Angle seen by FFT bin ``b``, or None when the bin is not visible.

    With normalized frequency ``u = centered(b) / S`` the bin looks towards
    ``theta = arcsin(-lambda u / d)``. The minus sign makes a source at
    positive angle peak at a bin mapping to a positive angle.
    """
    if not 0 <= b < num_bins:
        raise IndexError(f"bin {b} outside 0..{num_bins - 1}")
    u = float(centered_bin(num_bins, b)) / num_bins
    s = -geom.wavelength * u / geom.spacing
    if abs(s) > 1.0:
        return None
    return float(np.arcsin(s))


def bin_angles(geom: ArrayGeometry, num_bins: int) -> np.ndarray:
    """Vectorized :func:`bin_to_angle`; unmapped bins are NaN."""
    u = centered_bin(num_bins, np.arange(num_bins)) / num_bins
    s = -geom.wavelength * u / geom.spacing
    out = np.full(num_bins, np.nan)
    ok = np.abs(s) <= 1.0
    out[ok] = np.arcsin(s[ok])
    return out


def angle_spectrum(r: np.ndarray, num_bins: int,
                   geom: Optional[ArrayGeometry] = None) -> AngleSpectrum:
    """Diagonal of ``W R W^-1`` with the ``S``-point DFT matrix ``W``.

    ``R`` is zero-padded into the leading ``M x M`` block; ``W`` has entries
    ``exp(+2 pi j k s / S)`` and ``W^-1 = W^H / S``. The product is formed with
    an FFT along the rows of ``R`` followed by an inverse FFT down the columns.
    """
    r = np.asarray(r)
    m = r.shape[0]
    s = int(num_bins)
    if s < m:
        raise ValueError(f"FFT size S={s} must be at least M={m}")
    rw = np.fft.fft(r, n=s, axis=1)          # S * (R W^-1), M x S
    full = np.fft.ifft(rw, n=s, axis=0)      # (W R W^-1), S x S
    diag = np.diagonal(full)
    scale = np.max(np.abs(diag.real)) if diag.size else 0.0
    if np.max(np.abs(diag.imag)) > _IMAG_RTOL * max(scale, np.finfo(float).tiny):
        raise ValueError("angle spectrum has a large imaginary part; input is not Hermitian")
    angles = bin_angles(geom, s) if geom is not None else np.full(s, np.nan)
    return AngleSpectrum(values=diag.real.copy(), num_bins=s, bin_angles=angles)
