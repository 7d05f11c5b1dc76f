"""MUSIC and beamforming spectra over angle/range grids, plus peak picking."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import peak_prominences

from .array import ArrayGeometry, _path_difference
from .errors import GridError

# nodes at or below this range are dropped from every range axis (r = 0 is singular)
RANGE_FLOOR = 0.1
# budget of complex steering entries held in memory per evaluation chunk
_CHUNK_ENTRIES = 1 << 21
_SNAP_TOL = 1e-9


@dataclass(frozen=True)
class Axis:
    """Uniform axis with nodes ``origin + i * step`` that fall inside ``[min, max]``.

    ``origin`` defaults to ``min``. Sub-axes made with :meth:`restrict` keep the
    parent origin, so shared nodes are bit-identical floats.
    """

    min: float
    max: float
    step: float
    origin: Optional[float] = None

    def __post_init__(self):
        for name in ("min", "max", "step"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.origin is None:
            object.__setattr__(self, "origin", self.min)
        if not (np.isfinite(self.min) and np.isfinite(self.max) and self.min <= self.max):
            raise GridError(f"axis needs finite min <= max, got [{self.min}, {self.max}]")
        if not (np.isfinite(self.step) and self.step > 0):
            raise GridError(f"axis step must be positive, got {self.step}")

    def index_span(self) -> Tuple[int, int]:
        lo = math.ceil((self.min - self.origin) / self.step - _SNAP_TOL)
        hi = math.floor((self.max - self.origin) / self.step + _SNAP_TOL)
        return lo, hi

    def nodes(self) -> np.ndarray:
        lo, hi = self.index_span()
        return self.origin + np.arange(lo, hi + 1) * self.step

    def restrict(self, lo: float, hi: float) -> "Axis":
        """Sub-axis over ``[lo, hi]`` clipped to this axis, same node lattice."""
        lo, hi = max(lo, self.min), min(hi, self.max)
        if lo > hi:
            lo = hi = min(max(lo, self.min), self.max)
        return Axis(lo, hi, self.step, self.origin)

    def snap(self, value: float) -> float:
        """Nearest node to ``value``."""
        nodes = self.nodes()
        return float(nodes[np.argmin(np.abs(nodes - value))])


@dataclass(frozen=True)
class GridSpec:
    """Angle (radians) by range (meters) search grid."""

    angle: Axis
    range: Axis

    def __post_init__(self):
        if self.angle.min <= -np.pi / 2 or self.angle.max >= np.pi / 2:
            raise GridError("angle grid must stay inside the visible region (-pi/2, pi/2)")
        if self.range.max <= RANGE_FLOOR:
            raise GridError(f"range grid must extend beyond {RANGE_FLOOR} m")
        if self.angles().size < 1 or self.ranges().size < 1:
            raise GridError("grid has no nodes")

    @classmethod
    def from_degrees(cls, angle_min, angle_max, angle_step,
                     range_min, range_max, range_step) -> "GridSpec":
        return cls(Axis(np.deg2rad(angle_min), np.deg2rad(angle_max), np.deg2rad(angle_step)),
                   Axis(range_min, range_max, range_step))

    def angles(self) -> np.ndarray:
        return self.angle.nodes()

    def ranges(self) -> np.ndarray:
        r = self.range.nodes()
        return r[r > RANGE_FLOOR]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.angles().size, self.ranges().size

    @property
    def num_nodes(self) -> int:
        a, r = self.shape
        return a * r

    def restrict(self, angle_lo, angle_hi, range_lo, range_hi) -> "GridSpec":
        return replace(self, angle=self.angle.restrict(angle_lo, angle_hi),
                       range=self.range.restrict(range_lo, range_hi))

    def with_steps(self, angle_step: Optional[float], range_step: Optional[float]) -> "GridSpec":
        """Same extent and origin, possibly finer steps."""
        a, r = self.angle, self.range
        if angle_step:
            a = Axis(a.min, a.max, angle_step, a.origin)
        if range_step:
            r = Axis(r.min, r.max, range_step, r.origin)
        return GridSpec(a, r)


@dataclass(frozen=True)
class Spectrum2D:
    """Spectrum values indexed ``[angle_index, range_index]``."""

    values: np.ndarray
    angles: np.ndarray
    ranges: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.values.size


def _as_nodes(axis_or_nodes) -> np.ndarray:
    if isinstance(axis_or_nodes, Axis):
        n = axis_or_nodes.nodes()
        return n[n > RANGE_FLOOR]
    return np.atleast_1d(np.asarray(axis_or_nodes, dtype=float))


def _noise_projection(noise_basis, geom, angles, ranges) -> np.ndarray:
    """``||E_n^H a||^2`` on the ``angles x ranges`` lattice."""
    en = np.ascontiguousarray(noise_basis)
    if en.shape[0] != geom.num_elements:
        raise ValueError(f"noise basis has {en.shape[0]} rows, array has {geom.num_elements}")
    angles = np.asarray(angles, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    out = np.empty((angles.size, ranges.size))
    rows = max(1, _CHUNK_ENTRIES // max(1, ranges.size * geom.num_elements))
    k = geom.wavenumber
    for i0 in range(0, angles.size, rows):
        th = angles[i0:i0 + rows, None]
        # conj(a) generated directly: exp(+j k (r_delta - r))
        ac = np.exp(1j * k * _path_difference(geom, ranges[None, :], th))
        g = ac.reshape(-1, geom.num_elements) @ en
        q = np.einsum("ij,ij->i", g.real, g.real) + np.einsum("ij,ij->i", g.imag, g.imag)
        out[i0:i0 + rows] = q.reshape(th.shape[0], ranges.size)
    return out


def music_floor(geom: ArrayGeometry) -> float:
    return 1e-12 * geom.num_elements


def music_spectrum(noise_basis, geom: ArrayGeometry, angles, ranges) -> np.ndarray:
    """``1 / max(a^H E_n E_n^H a, eps)`` on an explicit node lattice."""
    q = _noise_projection(noise_basis, geom, angles, ranges)
    return 1.0 / np.maximum(q, music_floor(geom))


def music_2d(noise_basis, geom: ArrayGeometry, grid: GridSpec) -> Spectrum2D:
    """Near-field 2D-MUSIC pseudo-spectrum over ``grid``.

    Each node costs one projection ``E_n^H a``; ``E_n E_n^H`` is never formed.
    Nodes are independent, so any sub-grid sharing the lattice reproduces the
    corresponding block of a larger evaluation.
    """
    angles, ranges = grid.angles(), grid.ranges()
    return Spectrum2D(music_spectrum(noise_basis, geom, angles, ranges), angles, ranges)


def music_1d_distance(noise_basis, geom: ArrayGeometry, theta: float, ranges) -> np.ndarray:
    """MUSIC spectrum along range with the angle pinned to ``theta``."""
    return music_spectrum(noise_basis, geom, [theta], _as_nodes(ranges))[0]


def music_1d_angle(noise_basis, geom: ArrayGeometry, angles, r: float) -> np.ndarray:
    """MUSIC spectrum along angle with the range pinned to ``r``."""
    return music_spectrum(noise_basis, geom, np.asarray(angles, dtype=float), [r])[:, 0]


def beamform_distance_scan(r: np.ndarray, geom: ArrayGeometry, alpha: float, ranges) -> np.ndarray:
    """Conventional near-field beamformer power ``a^H R a`` along range at angle ``alpha``."""
    ranges = _as_nodes(ranges)
    a = np.exp(-1j * geom.wavenumber * _path_difference(geom, ranges, np.full(ranges.shape, alpha)))
    ra = a @ np.asarray(r).T                     # rows are (R a)^T
    p = np.einsum("ij,ij->i", a.conj(), ra)
    scale = np.max(np.abs(p.real)) if p.size else 0.0
    if np.max(np.abs(p.imag), initial=0.0) > 1e-8 * max(scale, np.finfo(float).tiny):
        raise ValueError("beamformer output has a large imaginary part; R is not Hermitian")
    return p.real.copy()


def find_peaks(values, min_prominence: float = 0.05) -> List[Tuple[int, float]]:
    """Strict local maxima with enough prominence, strongest first.

    A flat top counts once, at its first index. ``min_prominence`` is a
    fraction of the vector's total dynamic range. Endpoints never qualify.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    cand = []
    i = 1
    while i < n - 1:
        if x[i] > x[i - 1]:
            j = i
            while j + 1 < n and x[j + 1] == x[i]:
                j += 1
            if j + 1 < n and x[j + 1] < x[i]:
                cand.append(i)
            i = j + 1
        else:
            i += 1
    if not cand:
        return []
    cand = np.array(cand)
    prom = peak_prominences(x, cand)[0]
    need = min_prominence * (x.max() - x.min())
    keep = cand[prom >= need]
    order = sorted(keep.tolist(), key=lambda k: (-x[k], k))
    return [(int(k), float(x[k])) for k in order]


def peaks_2d(values: np.ndarray) -> List[Tuple[int, int, float]]:
    """Local maxima of a 2D spectrum over the 8-neighbourhood, strongest first.

    Ties inside a flat top resolve to the first node in raster order.
    """
    v = np.asarray(values, dtype=float)
    pad = np.pad(v, 1, constant_values=-np.inf)
    nb = maximum_filter(pad, size=3, mode="constant", cval=-np.inf)[1:-1, 1:-1]
    is_max = v >= nb
    # earlier raster neighbours must be strictly lower
    h, w = v.shape
    for di, dj in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
        is_max &= v > pad[1 + di:1 + di + h, 1 + dj:1 + dj + w]
    ii, jj = np.nonzero(is_max)
    vals = v[ii, jj]
    order = np.lexsort((jj, ii, -vals))
    return [(int(ii[k]), int(jj[k]), float(vals[k])) for k in order]
