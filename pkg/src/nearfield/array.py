"""Near-field uniform linear array model.

The array has ``M = 2N + 1`` elements at positions ``delta * d`` for signed
indices ``delta = -N..N``; element ``delta = 0`` is the phase reference.
A source at range ``r`` and angle ``theta`` (measured from broadside) reaches
element ``delta`` over the exact spherical-wavefront distance

    r_delta = sqrt((delta d)^2 + r^2 - 2 delta d r sin(theta))

and the steering entry is ``exp(-j 2 pi / lambda * (r_delta - r))``.
Angles are radians throughout this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GeometryError

SPEED_OF_LIGHT = 299_792_458.0
RNG_ALGORITHM = "numpy.random.Generator(PCG64)"

# relative tolerance below which a source-element distance counts as zero
_DEGENERATE_RTOL = 1e-9


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array with an odd number of elements.

    Parameters
    ----------
    num_elements : int
        Element count ``M``; must be odd and at least 3.
    spacing : float
        Inter-element spacing ``d`` in meters.
    wavelength : float
        Carrier wavelength in meters.
    """

    num_elements: int
    spacing: float
    wavelength: float

    def __post_init__(self):
        m = self.num_elements
        if isinstance(m, bool) or int(m) != m:
            raise GeometryError(f"element count must be an integer, got {m!r}")
        object.__setattr__(self, "num_elements", int(m))
        if m < 3:
            raise GeometryError(f"M must be at least 3, got {m}")
        if m % 2 == 0:
            raise GeometryError(f"M must be odd (M = 2N + 1), got {m}")
        for name in ("spacing", "wavelength"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise GeometryError(f"{name} must be a positive finite length, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_carrier(cls, num_elements: int, carrier_hz: float,
                     spacing_wavelengths: float = 0.5) -> "ArrayGeometry":
        """Build a geometry from the carrier frequency, spacing given in wavelengths."""
        if carrier_hz <= 0:
            raise GeometryError(f"carrier frequency must be positive, got {carrier_hz}")
        lam = SPEED_OF_LIGHT / carrier_hz
        return cls(num_elements, spacing_wavelengths * lam, lam)

    @property
    def half_size(self) -> int:
        return (self.num_elements - 1) // 2

    @property
    def indices(self) -> np.ndarray:
        """Signed element indices ``-N..N``."""
        n = self.half_size
        return np.arange(-n, n + 1)

    @property
    def aperture(self) -> float:
        return (self.num_elements - 1) * self.spacing

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength


@dataclass(frozen=True)
class Source:
    range: float
    angle: float
    power: float = 1.0

    def __post_init__(self):
        r, th, p = float(self.range), float(self.angle), float(self.power)
        if not np.isfinite(r) or r <= 0:
            raise GeometryError(f"source range must be positive, got {r}")
        if not np.isfinite(th) or abs(th) >= np.pi / 2:
            raise GeometryError(f"source angle must lie in (-pi/2, pi/2), got {th}")
        if not np.isfinite(p) or p <= 0:
            raise GeometryError(f"source power must be positive, got {p}")
        object.__setattr__(self, "range", r)
        object.__setattr__(self, "angle", th)
        object.__setattr__(self, "power", p)


@dataclass(frozen=True)
class SourceTruth:
    """Ground-truth source list. An empty list describes a noise-only scene."""

    sources: tuple = ()

    def __post_init__(self):
        srcs = tuple(s if isinstance(s, Source) else Source(*s) for s in self.sources)
        object.__setattr__(self, "sources", srcs)

    @classmethod
    def from_degrees(cls, items: Iterable[Sequence[float]]) -> "SourceTruth":
        """``items`` holds ``(range_m, angle_deg[, power])`` tuples."""
        out = []
        for it in items:
            r, a, *rest = it
            out.append(Source(r, np.deg2rad(a), *rest))
        return cls(tuple(out))

    def __len__(self):
        return len(self.sources)

    def __iter__(self):
        return iter(self.sources)

    @property
    def ranges(self) -> np.ndarray:
        return np.array([s.range for s in self.sources], dtype=float)

    @property
    def angles(self) -> np.ndarray:
        return np.array([s.angle for s in self.sources], dtype=float)

    @property
    def powers(self) -> np.ndarray:
        return np.array([s.power for s in self.sources], dtype=float)


def element_positions(geom: ArrayGeometry) -> np.ndarray:
    """Element coordinates ``delta * d`` in ascending signed-index order."""
    return geom.indices * geom.spacing


def _path_difference(geom, ranges, angles):
    # r_delta - r, written as q / (r_delta + r) to avoid cancellation at large r
    x = element_positions(geom)
    r = np.asarray(ranges, dtype=float)[..., None]
    s = np.sin(np.asarray(angles, dtype=float))[..., None]
    q = x * (x - 2.0 * r * s)
    dist = np.sqrt(r * r + q)
    if np.any(dist <= _DEGENERATE_RTOL * (r + np.abs(x))):
        raise GeometryError("source coincides with an array element (zero distance)")
    return q / (dist + r)


def source_element_distance(geom: ArrayGeometry, r: float, theta: float, delta: int) -> float:
    """Exact distance from a source at ``(r, theta)`` to element ``delta``."""
    n = geom.half_size
    if int(delta) != delta or abs(delta) > n:
        raise GeometryError(f"element index {delta} outside -{n}..{n}")
    if not r > 0:
        raise GeometryError(f"source range must be positive, got {r}")
    x = delta * geom.spacing
    dist = float(np.sqrt(x * x + r * r - 2.0 * x * r * np.sin(theta)))
    if not dist > _DEGENERATE_RTOL * (r + abs(x)):
        raise GeometryError("source coincides with an array element (zero distance)")
    return dist


def steering_matrix(geom: ArrayGeometry, ranges, angles) -> np.ndarray:
    """Steering vectors for broadcast ``(ranges, angles)``.

    Returns an array of shape ``broadcast(ranges, angles).shape + (M,)``.
    """
    ranges = np.asarray(ranges, dtype=float)
    if np.any(~np.isfinite(ranges)) or np.any(ranges <= 0):
        raise GeometryError("steering ranges must be positive and finite")
    return np.exp(-1j * geom.wavenumber * _path_difference(geom, ranges, angles))


def steering_vector(geom: ArrayGeometry, r: float, theta: float) -> np.ndarray:
    """Length-``M`` steering vector; the ``delta = 0`` entry is exactly 1."""
    return steering_matrix(geom, r, theta)


def source_steering(geom: ArrayGeometry, truth: SourceTruth) -> np.ndarray:
    """``M x K`` steering matrix ``A`` stacking one column per source."""
    if len(truth) == 0:
        return np.zeros((geom.num_elements, 0), dtype=complex)
    return steering_matrix(geom, truth.ranges, truth.angles).T


def _complex_gaussian(rng, shape, var):
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_snapshots(geom: ArrayGeometry, truth: SourceTruth, num_snapshots: int,
                         noise_var: float, seed: int) -> np.ndarray:
    """Draw ``Y = A X + Z`` with ``num_snapshots`` columns.

    Source rows of ``X`` are independent circularly-symmetric complex Gaussian
    with the per-source powers; ``Z`` is white with variance ``noise_var``.
    Source symbols are drawn before the noise, so for a fixed seed the
    signal part does not depend on the noise level.
    """
    j = int(num_snapshots)
    if j < 1:
        raise GeometryError(f"need at least one snapshot, got {num_snapshots}")
    if not noise_var >= 0:
        raise GeometryError(f"noise variance must be non-negative, got {noise_var}")
    rng = np.random.Generator(np.random.PCG64(seed))
    a = source_steering(geom, truth)
    x = _complex_gaussian(rng, (len(truth), j), truth.powers[:, None])
    z = _complex_gaussian(rng, (geom.num_elements, j), noise_var)
    return a @ x + z


def analytic_covariance(geom: ArrayGeometry, truth: SourceTruth, noise_var: float) -> np.ndarray:
    """Infinite-snapshot covariance ``A R_s A^H + noise_var I``."""
    a = source_steering(geom, truth)
    r = (a * truth.powers) @ a.conj().T
    r += noise_var * np.eye(geom.num_elements)
    return 0.5 * (r + r.conj().T)


def snr_to_noise_var(snr_db: float, reference_power: float = 1.0) -> float:
    """Per-antenna SNR convention: ``snr = reference_power / noise_var``."""
    return reference_power * 10.0 ** (-snr_db / 10.0)
