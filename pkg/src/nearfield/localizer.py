"""Coarse-to-fine near-field localization.

Pipeline for ``K`` sources:

1. sample covariance and its eigen-split (one EVD per call);
2. FFT angle spectrum, peak picking and angle clusters from a spread
   threshold ``(1 - margin) * min(peak amplitudes)``;
3. single-peak clusters: the angle from the FFT peak seeds alternating 1D MUSIC
   cuts (range, then angle inside the cluster) that settle on the cluster's
   2D-MUSIC maximum;
4. multi-peak clusters: beamformer range scans at both cluster edges give a
   distance interval; 2D-MUSIC runs only on that angle x range window;
5. while fewer than ``K`` sources are found, widen the distance windows and
   search again.

The full-grid 2D-MUSIC baseline lives here too (:func:`music_2d_localize`) so
both estimators return the same result type.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .array import ArrayGeometry
from .errors import ConfigError, NoSourcesVisibleError
from .music import (RANGE_FLOOR, GridSpec, beamform_distance_scan, find_peaks, music_1d_angle,
                    music_1d_distance, music_spectrum, peaks_2d)
from .spectral import AngleSpectrum, angle_spectrum, decompose, sample_covariance


@dataclass(frozen=True)
class LocalizerConfig:
    """Tuning knobs; defaults follow the ``M = 513`` reference scenario.

    ``spread_margin_angle`` and ``spread_margin_distance`` are relative:
    the angle threshold is ``(1 - margin) * min(peak amplitudes)`` and the
    distance selection keeps samples within ``margin`` of the scan's dynamic
    range above its minimum. ``peak_gain_db`` is how far a MUSIC peak must
    rise above the ``1/M`` level of an unmatched steering vector to count as
    a source.
    """

    grid: GridSpec
    fft_size: int = 1024
    spread_margin_angle: float = 0.5
    spread_margin_distance: float = 0.1
    peak_prominence: float = 0.05
    retry_prominence_factor: float = 0.5
    refine_steps: Tuple[Optional[float], Optional[float]] = (None, None)
    max_expansions: int = 3
    expansion_factor: float = 2.0
    peak_gain_db: float = 10.0
    refine_iterations: int = 10

    def validate(self, geom: ArrayGeometry) -> None:
        if self.fft_size < geom.num_elements:
            raise ConfigError(f"fft_size={self.fft_size} must be >= M={geom.num_elements}")
        for name in ("spread_margin_angle", "spread_margin_distance", "peak_prominence",
                     "retry_prominence_factor"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.max_expansions < 1:
            raise ConfigError(f"max_expansions must be >= 1, got {self.max_expansions}")
        if not self.expansion_factor > 1:
            raise ConfigError(f"expansion_factor must exceed 1, got {self.expansion_factor}")
        for s in self.refine_steps:
            if s is not None and not s > 0:
                raise ConfigError(f"refine steps must be positive, got {self.refine_steps}")

    @property
    def refine_grid(self) -> GridSpec:
        return self.grid.with_steps(*self.refine_steps)


@dataclass(frozen=True)
class AngleCluster:
    """Run of FFT bins above the spread threshold.

    ``lower``/``upper`` are the angles of the run's end bins. The fine searches
    scan ``search_lower``..``search_upper``, which reaches out to the first bin
    below the threshold on each side, since the source may sit anywhere
    between those bins.
    """

    lower: float
    upper: float
    peak_count: int
    peak_bins: Tuple[int, ...]
    peak_angles: Tuple[float, ...]
    peak_values: Tuple[float, ...]
    search_lower: Optional[float] = None
    search_upper: Optional[float] = None

    def __post_init__(self):
        if self.search_lower is None:
            object.__setattr__(self, "search_lower", self.lower)
        if self.search_upper is None:
            object.__setattr__(self, "search_upper", self.upper)

    @property
    def strongest(self) -> float:
        return max(self.peak_values)


@dataclass(frozen=True)
class DistanceCluster:
    """Range window for a multi-peak angle cluster. ``empty`` marks a void intersection."""

    lower: float
    upper: float
    expansion_count: int = 0
    empty: bool = False

    @property
    def width(self) -> float:
        return 0.0 if self.empty else self.upper - self.lower


@dataclass(frozen=True)
class Estimate:
    range: float
    angle: float
    kind: str            # "distant", "close", or "full" for the baseline
    cluster_id: int
    value: float         # MUSIC pseudo-spectrum at the estimate


@dataclass
class Diagnostics:
    timings: Dict[str, float] = field(default_factory=dict)
    num_clusters: int = 0
    clusters: List[AngleCluster] = field(default_factory=list)
    distance_clusters: Dict[int, DistanceCluster] = field(default_factory=dict)
    spread_threshold: float = float("nan")
    prominence_used: float = float("nan")
    expansion_count: int = 0
    promoted: bool = False
    residual_search: bool = False
    confined_nodes: int = 0
    distant_nodes: int = 0
    full_grid_nodes: int = 0
    shortfall: int = 0
    degenerate_gap: bool = False

    @property
    def peak_counts(self) -> List[int]:
        return [c.peak_count for c in self.clusters]

    @property
    def evaluated_nodes(self) -> int:
        return self.confined_nodes + self.distant_nodes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distance_clusters"] = {str(k): asdict(v) for k, v in self.distance_clusters.items()}
        d["peak_counts"] = self.peak_counts
        d["evaluated_nodes"] = self.evaluated_nodes
        return d


@dataclass
class LocalizationResult:
    estimates: List[Estimate]
    diagnostics: Diagnostics


class _Timer:
    def __init__(self, sink: Dict[str, float], key: str):
        self.sink, self.key = sink, key

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.key] = self.sink.get(self.key, 0.0) + time.perf_counter() - self.t0


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Inclusive ``(start, end)`` index pairs of the True runs in ``mask``."""
    m = np.concatenate(([False], np.asarray(mask, bool), [False]))
    edges = np.flatnonzero(m[1:] != m[:-1])
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def angle_clusters(spectrum: AngleSpectrum, num_sources: int, cfg: LocalizerConfig,
                   diag: Optional[Diagnostics] = None) -> List[AngleCluster]:
    """Group FFT spectral peaks into angle intervals.

    Peaks are searched among bins looking inside the grid's angle span plus
    one bin on either side, so a source on the grid edge still shows a peak.
    If fewer than ``num_sources`` peaks clear the prominence bar it is lowered
    once by ``retry_prominence_factor`` and the strongest newly admitted peaks
    are added until there are ``num_sources`` candidates. Bins above the spread threshold form
    runs; each run holding at least one peak becomes a cluster.
    """
    if num_sources < 1:
        raise ValueError("need at least one source")
    bins, angles, values = spectrum.ordered()
    lo, hi = cfg.grid.angle.min, cfg.grid.angle.max
    inside = np.flatnonzero((angles >= lo) & (angles <= hi))
    if inside.size < 3:
        raise NoSourcesVisibleError("fewer than three FFT bins fall inside the angle grid")
    # two extra bins per side so the bin just past the grid edge can be a strict maximum
    first = max(int(inside[0]) - 2, 0)
    window = values[first:min(int(inside[-1]) + 2, values.size - 1) + 1]
    ok_lo, ok_hi = int(inside[0]) - 1 - first, int(inside[-1]) + 1 - first

    def detect(prom):
        return [p for p in find_peaks(window, prom) if ok_lo <= p[0] <= ok_hi]

    prominence = cfg.peak_prominence
    peaks = detect(prominence)
    if len(peaks) < num_sources:
        # top up with the strongest of the weaker peaks, never past K candidates
        prominence *= cfg.retry_prominence_factor
        have = {i for i, _ in peaks}
        extra = [p for p in detect(prominence) if p[0] not in have]
        peaks = peaks + extra[:num_sources - len(peaks)]
    if not peaks:
        raise NoSourcesVisibleError("angle spectrum has no usable peak")

    positions = np.array(sorted(first + i for i, _ in peaks))
    gamma = (1.0 - cfg.spread_margin_angle) * min(v for _, v in peaks)
    def clip(x):
        return float(min(max(x, lo), hi))

    last = values.size - 1
    clusters = []
    for start, end in _runs(values > gamma):
        members = positions[(positions >= start) & (positions <= end)]
        if members.size == 0:
            continue
        clusters.append(AngleCluster(
            lower=clip(angles[start]),
            upper=clip(angles[end]),
            search_lower=clip(angles[max(start - 1, 0)]),
            search_upper=clip(angles[min(end + 1, last)]),
            peak_count=int(members.size),
            peak_bins=tuple(int(b) for b in bins[members]),
            peak_angles=tuple(float(a) for a in angles[members]),
            peak_values=tuple(float(v) for v in values[members]),
        ))
    if diag is not None:
        diag.spread_threshold = float(gamma)
        diag.prominence_used = float(prominence)
    return clusters


def distance_cluster(r: np.ndarray, geom: ArrayGeometry, cluster: AngleCluster,
                     cfg: LocalizerConfig) -> DistanceCluster:
    """Range window where beam scans at both cluster edges sit near their minima.

    At each edge angle the range samples within ``spread_margin_distance`` of
    the scan's dynamic range above its minimum are kept; the window is the
    hull of the samples kept at both edges.
    """
    ranges = cfg.grid.ranges()
    keep = np.ones(ranges.size, bool)
    for alpha in (cluster.lower, cluster.upper):
        p = beamform_distance_scan(r, geom, alpha, ranges)
        keep &= p <= p.min() + cfg.spread_margin_distance * (p.max() - p.min())
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return DistanceCluster(float("nan"), float("nan"), 0, empty=True)
    return DistanceCluster(float(ranges[idx[0]]), float(ranges[idx[-1]]))


def expand_distance_cluster(dc: DistanceCluster, cfg: LocalizerConfig) -> DistanceCluster:
    """Widen symmetrically by ``expansion_factor``.

    An empty window, or the last permitted expansion, becomes the full range.
    """
    r_lo, r_hi = cfg.grid.range.min, cfg.grid.range.max
    if dc.empty or dc.expansion_count + 1 >= cfg.max_expansions:
        return DistanceCluster(r_lo, r_hi, dc.expansion_count + 1)
    center = 0.5 * (dc.lower + dc.upper)
    half = 0.5 * (dc.upper - dc.lower)
    half = max(cfg.expansion_factor * half, half + cfg.refine_grid.range.step)
    return DistanceCluster(max(r_lo, center - half), min(r_hi, center + half),
                           dc.expansion_count + 1)


def _gain_ok(value: float, geom: ArrayGeometry, cfg: LocalizerConfig) -> bool:
    return value * geom.num_elements >= 10.0 ** (cfg.peak_gain_db / 10.0)


def _confined_search(noise_basis, geom, cfg, cluster, dc, cap, cid) -> Tuple[List[Estimate], int]:
    """2D-MUSIC on the cluster window; returns accepted estimates and nodes evaluated."""
    if dc.empty or cap <= 0:
        return [], 0
    grid = cfg.refine_grid
    a_in = grid.angle.restrict(cluster.search_lower, cluster.search_upper).nodes()
    r_in = grid.range.restrict(dc.lower, dc.upper).nodes()
    r_in = r_in[r_in > RANGE_FLOOR]
    if a_in.size == 0:
        a_in = np.array([grid.angle.snap(0.5 * (cluster.lower + cluster.upper))])
    if r_in.size == 0:
        r_in = np.array([grid.range.snap(0.5 * (dc.lower + dc.upper))])
    # one guard node on every side so edge maxima are checked against outside neighbours
    a_all, r_all = grid.angles(), grid.ranges()
    ia0, ia1 = np.searchsorted(a_all, a_in[0]), np.searchsorted(a_all, a_in[-1])
    ir0, ir1 = np.searchsorted(r_all, r_in[0]), np.searchsorted(r_all, r_in[-1])
    ga0, ga1 = max(ia0 - 1, 0), min(ia1 + 1, a_all.size - 1)
    gr0, gr1 = max(ir0 - 1, 0), min(ir1 + 1, r_all.size - 1)
    angles, ranges = a_all[ga0:ga1 + 1], r_all[gr0:gr1 + 1]
    spec = music_spectrum(noise_basis, geom, angles, ranges)
    found = []
    for i, j, v in peaks_2d(spec):
        if not (ia0 <= ga0 + i <= ia1 and ir0 <= gr0 + j <= ir1):
            continue
        if not _gain_ok(v, geom, cfg):
            break
        found.append(Estimate(float(ranges[j]), float(angles[i]), "close", cid, v))
        if len(found) == cap:
            break
    return found, int(spec.size)


def _distant_search(noise_basis, geom, cfg, cluster, cid) -> Tuple[Optional[Estimate], int]:
    """Single-source cluster: FFT angle seed, then alternating 1D MUSIC cuts.

    The range cut at the current angle and the angle cut (restricted to the
    cluster) at the current range are repeated until the point stops moving,
    then a 3x3 hill climb makes it a 2D local maximum.
    """
    grid = cfg.grid
    ranges = grid.ranges()
    span = grid.angle.restrict(cluster.search_lower, cluster.search_upper).nodes()
    if span.size == 0:
        span = np.array([grid.angle.snap(cluster.peak_angles[0])])
    ia = int(np.argmin(np.abs(span - cluster.peak_angles[0])))
    nodes = 0
    cut = music_1d_distance(noise_basis, geom, span[ia], ranges)
    nodes += cut.size
    jr = int(np.argmax(cut))
    for _ in range(cfg.refine_iterations):
        acut = music_1d_angle(noise_basis, geom, span, ranges[jr])
        nodes += acut.size
        ia_new = int(np.argmax(acut))
        cut = music_1d_distance(noise_basis, geom, span[ia_new], ranges)
        nodes += cut.size
        jr_new = int(np.argmax(cut))
        moved = (ia_new, jr_new) != (ia, jr)
        ia, jr = ia_new, jr_new
        if not moved:
            break
    best = float(cut[jr])
    for _ in range(span.size + ranges.size):
        i_sl = slice(max(ia - 1, 0), ia + 2)
        j_sl = slice(max(jr - 1, 0), jr + 2)
        local = music_spectrum(noise_basis, geom, span[i_sl], ranges[j_sl])
        nodes += local.size
        di, dj = np.unravel_index(int(np.argmax(local)), local.shape)
        ni, nj = i_sl.start + int(di), j_sl.start + int(dj)
        if local[di, dj] <= best:
            break
        ia, jr, best = ni, nj, float(local[di, dj])
    if not _gain_ok(best, geom, cfg):
        return None, nodes
    return Estimate(float(ranges[jr]), float(span[ia]), "distant", cid, best), nodes


def _close_pass(noise_basis, geom, cfg, close_ids, clusters, dclusters, needed, k_bound, diag):
    found: List[Estimate] = []
    for cid in close_ids:
        remaining = needed - len(found)
        cap = min(clusters[cid].peak_count, remaining) if k_bound else remaining
        est, n = _confined_search(noise_basis, geom, cfg, clusters[cid], dclusters[cid], cap, cid)
        diag.confined_nodes += n
        found.extend(est)
    return found


def _residual_search(noise_basis, geom, cfg, clusters, missing, diag) -> List[Estimate]:
    """2D-MUSIC over the angles no cluster covered, at every range."""
    a_all = cfg.refine_grid.angles()
    covered = np.zeros(a_all.size, bool)
    for c in clusters:
        covered |= (a_all >= c.search_lower) & (a_all <= c.search_upper)
    full = DistanceCluster(cfg.grid.range.min, cfg.grid.range.max)
    found: List[Estimate] = []
    for start, end in _runs(~covered):
        gap = AngleCluster(float(a_all[start]), float(a_all[end]), 0, (), (), ())
        est, n = _confined_search(noise_basis, geom, cfg, gap, full, missing, -1)
        diag.confined_nodes += n
        found.extend(est)
    return sorted(found, key=lambda e: -e.value)[:missing]


def _dedupe(estimates: List[Estimate]) -> List[Estimate]:
    seen, out = set(), []
    for e in sorted(estimates, key=lambda e: -e.value):
        key = (e.angle, e.range)
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


def localize_covariance(r: np.ndarray, geom: ArrayGeometry, num_sources: int,
                        cfg: LocalizerConfig, diag: Optional[Diagnostics] = None) -> LocalizationResult:
    """Run the coarse-to-fine search on a covariance matrix."""
    cfg.validate(geom)
    k = int(num_sources)
    if not 1 <= k < geom.num_elements:
        raise ValueError(f"number of sources must satisfy 1 <= K < M, got {num_sources}")
    diag = diag if diag is not None else Diagnostics()
    t = diag.timings
    diag.full_grid_nodes = cfg.grid.num_nodes

    with _Timer(t, "evd"):
        dec = decompose(r, k)
    diag.degenerate_gap = dec.degenerate_gap
    en = dec.noise_basis
    with _Timer(t, "angle_spectrum"):
        spec = angle_spectrum(r, cfg.fft_size, geom)
    with _Timer(t, "angle_clusters"):
        clusters = angle_clusters(spec, k, cfg, diag)
    diag.clusters = clusters
    diag.num_clusters = len(clusters)

    distant_ids = [i for i, c in enumerate(clusters) if c.peak_count == 1]
    close_ids = [i for i, c in enumerate(clusters) if c.peak_count > 1]

    distant: List[Estimate] = []
    failed: List[int] = []
    with _Timer(t, "distant_search"):
        for cid in distant_ids:
            est, n = _distant_search(en, geom, cfg, clusters[cid], cid)
            diag.distant_nodes += n
            if est is None:
                failed.append(cid)
            else:
                distant.append(est)
    distant = _dedupe(distant)
    if failed:
        # no significant 1D peak: hand the cluster to the confined 2D search
        diag.promoted = True
        distant_ids = [i for i in distant_ids if i not in failed]
        close_ids = sorted(close_ids + failed)

    def order(ids):
        return sorted(ids, key=lambda i: -clusters[i].strongest)

    dclusters: Dict[int, DistanceCluster] = {}
    with _Timer(t, "distance_clusters"):
        for cid in close_ids:
            dclusters[cid] = distance_cluster(r, geom, clusters[cid], cfg)
    with _Timer(t, "confined_search"):
        close = _close_pass(en, geom, cfg, order(close_ids), clusters, dclusters,
                            k - len(distant), True, diag)

    promoted_all = False
    while len(distant) + len(close) < k and diag.expansion_count < cfg.max_expansions:
        if not close_ids:
            if promoted_all or not distant_ids:
                break
            # every cluster looked like a single source yet sources are missing
            promoted_all = diag.promoted = True
            close_ids, distant_ids, distant = distant_ids, [], []
            with _Timer(t, "distance_clusters"):
                for cid in close_ids:
                    dclusters[cid] = distance_cluster(r, geom, clusters[cid], cfg)
        else:
            diag.expansion_count += 1
            for cid in close_ids:
                dclusters[cid] = expand_distance_cluster(dclusters[cid], cfg)
        with _Timer(t, "confined_search"):
            close = _close_pass(en, geom, cfg, order(close_ids), clusters, dclusters,
                                k - len(distant), False, diag)
    diag.distance_clusters = dclusters

    estimates = _dedupe(distant + close)
    if len(estimates) < k:
        # strong lobes can hide weak sources from the FFT clustering altogether
        diag.residual_search = True
        with _Timer(t, "residual_search"):
            extra = _residual_search(en, geom, cfg, clusters, k - len(estimates), diag)
        estimates = _dedupe(estimates + extra)
    if len(estimates) > k:
        estimates = estimates[:k]
    diag.shortfall = max(0, k - len(estimates))
    estimates.sort(key=lambda e: (e.angle, e.range))
    return LocalizationResult(estimates, diag)


def localize(y: np.ndarray, geom: ArrayGeometry, num_sources: int,
             cfg: LocalizerConfig) -> LocalizationResult:
    """Locate ``num_sources`` sources from the ``M x J`` snapshot matrix ``y``.

    Returns estimates sorted by angle together with per-stage timings, the
    clusters found and search-node counts. If the search cannot find every
    source the result holds fewer estimates and ``diagnostics.shortfall`` says
    how many are missing.
    """
    diag = Diagnostics()
    with _Timer(diag.timings, "covariance"):
        r = sample_covariance(y)
    return localize_covariance(r, geom, num_sources, cfg, diag)


def music_2d_localize_covariance(r: np.ndarray, geom: ArrayGeometry, num_sources: int,
                                 grid: GridSpec, diag: Optional[Diagnostics] = None) -> LocalizationResult:
    """Baseline: 2D-MUSIC over the whole grid, top ``num_sources`` local maxima."""
    diag = diag if diag is not None else Diagnostics()
    t = diag.timings
    with _Timer(t, "evd"):
        dec = decompose(r, num_sources)
    diag.degenerate_gap = dec.degenerate_gap
    angles, ranges = grid.angles(), grid.ranges()
    with _Timer(t, "music_2d"):
        spec = music_spectrum(dec.noise_basis, geom, angles, ranges)
    diag.full_grid_nodes = diag.confined_nodes = int(spec.size)
    with _Timer(t, "peaks"):
        top = peaks_2d(spec)[:num_sources]
    est = [Estimate(float(ranges[j]), float(angles[i]), "full", 0, v) for i, j, v in top]
    diag.shortfall = max(0, num_sources - len(est))
    est.sort(key=lambda e: (e.angle, e.range))
    return LocalizationResult(est, diag)


def music_2d_localize(y: np.ndarray, geom: ArrayGeometry, num_sources: int,
                      grid: GridSpec) -> LocalizationResult:
    diag = Diagnostics()
    with _Timer(diag.timings, "covariance"):
        r = sample_covariance(y)
    return music_2d_localize_covariance(r, geom, num_sources, grid, diag)
