"""Monte-Carlo trials, RMSE sweeps, timing benchmarks and spectrum exports."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import __version__
from ..array import RNG_ALGORITHM, analytic_covariance, synthesize_snapshots
from ..errors import ConfigError
from ..localizer import (Estimate, LocalizationResult, localize_covariance,
                         music_2d_localize_covariance)
from ..music import beamform_distance_scan, music_1d_distance, music_spectrum
from ..spectral import angle_spectrum, decompose, sample_covariance
from .config import ScenarioConfig
from .tables import Table, make_table

ALGORITHMS = ("proposed", "music2d")
SPECTRUM_KINDS = ("angle-fft", "music2d", "beamform", "music1d")


def algorithms_for(choice: str) -> Tuple[str, ...]:
    if choice == "both":
        return ALGORITHMS
    if choice not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {choice!r}; expected proposed, music2d or both")
    return (choice,)


@dataclass(frozen=True)
class SourceMatch:
    truth_range: float
    truth_angle: float                  # radians
    est_range: Optional[float] = None
    est_angle: Optional[float] = None
    kind: Optional[str] = None

    @property
    def matched(self) -> bool:
        return self.est_range is not None


@dataclass
class TrialRecord:
    """One algorithm on one Monte-Carlo draw."""

    algorithm: str
    seed: int
    snr_db: float
    matches: List[SourceMatch]
    unmatched: List[Estimate]
    timings: Dict[str, float]
    wall_time: float
    evaluated_nodes: int
    full_grid_nodes: int
    num_clusters: int = 0
    expansion_count: int = 0
    shortfall: int = 0
    diagnostics: dict = field(default_factory=dict)


def match_estimates(truth_ranges, truth_angles, estimates: Sequence[Estimate],
                    angle_step: float, range_step: float) -> List[Tuple[int, int]]:
    """Greedy nearest-neighbour pairing in ``(angle / angle_step, range / range_step)``.

    The globally closest (truth, estimate) pair is fixed first, then the next
    closest among the remaining ones. Each truth and each estimate is used at
    most once. Returns ``(truth_index, estimate_index)`` pairs.
    """
    tr = np.asarray(truth_ranges, float)
    ta = np.asarray(truth_angles, float)
    if tr.size == 0 or not estimates:
        return []
    er = np.array([e.range for e in estimates])
    ea = np.array([e.angle for e in estimates])
    d = np.hypot((ta[:, None] - ea[None, :]) / angle_step, (tr[:, None] - er[None, :]) / range_step)
    order = np.argsort(d, axis=None, kind="stable")
    used_t, used_e, pairs = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), len(estimates))
        if i in used_t or j in used_e:
            continue
        used_t.add(i)
        used_e.add(j)
        pairs.append((i, j))
        if len(pairs) == min(tr.size, len(estimates)):
            break
    return sorted(pairs)


def _record(cfg: ScenarioConfig, algorithm: str, seed: int, snr_db: float,
            result: LocalizationResult, wall: float) -> TrialRecord:
    truth = cfg.truth()
    grid = cfg.grid_spec()
    pairs = dict(match_estimates(truth.ranges, truth.angles, result.estimates,
                                 grid.angle.step, grid.range.step))
    matches = []
    for i, src in enumerate(truth):
        if i in pairs:
            e = result.estimates[pairs[i]]
            matches.append(SourceMatch(src.range, src.angle, e.range, e.angle, e.kind))
        else:
            matches.append(SourceMatch(src.range, src.angle))
    used = set(pairs.values())
    unmatched = [e for j, e in enumerate(result.estimates) if j not in used]
    d = result.diagnostics
    return TrialRecord(
        algorithm=algorithm, seed=seed, snr_db=float(snr_db), matches=matches, unmatched=unmatched,
        timings=dict(d.timings), wall_time=wall, evaluated_nodes=d.evaluated_nodes,
        full_grid_nodes=d.full_grid_nodes, num_clusters=d.num_clusters,
        expansion_count=d.expansion_count, shortfall=d.shortfall, diagnostics=d.to_dict())


def trial_data(cfg: ScenarioConfig, seed: int, snr_db: float, analytic: bool = False) -> np.ndarray:
    """Snapshot matrix for one draw, or the exact covariance when ``analytic``."""
    geom, truth = cfg.geometry(), cfg.truth()
    if analytic:
        return analytic_covariance(geom, truth, cfg.noise_var(snr_db))
    return synthesize_snapshots(geom, truth, cfg.snapshots, cfg.noise_var(snr_db), seed)


def run_algorithm(cfg: ScenarioConfig, algorithm: str, data: np.ndarray,
                  is_covariance: bool) -> Tuple[LocalizationResult, float]:
    """Run one estimator; the wall time covers covariance through final estimates."""
    geom = cfg.geometry()
    k = cfg.num_sources
    if k < 1:
        raise ConfigError("[sources]: localization needs at least one source")
    t0 = time.perf_counter()
    r = data if is_covariance else sample_covariance(data)
    if algorithm == "proposed":
        res = localize_covariance(r, geom, k, cfg.localizer_config())
    elif algorithm == "music2d":
        res = music_2d_localize_covariance(r, geom, k, cfg.grid_spec())
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    return res, time.perf_counter() - t0


def run_trial(cfg: ScenarioConfig, seed: int, snr_db: float,
              algorithms: Sequence[str] = ALGORITHMS, analytic: bool = False) -> List[TrialRecord]:
    """Draw one data set and run every requested algorithm on it."""
    data = trial_data(cfg, seed, snr_db, analytic)
    out = []
    for alg in algorithms:
        res, wall = run_algorithm(cfg, alg, data, analytic)
        out.append(_record(cfg, alg, seed, snr_db, res, wall))
    return out


def run_scenario(cfg: ScenarioConfig, algorithm: str = "proposed",
                 seed: Optional[int] = None) -> List[TrialRecord]:
    """One trial of the configured scene at ``cfg.snr_db``."""
    seed = cfg.seed if seed is None else seed
    return run_trial(cfg, seed, cfg.snr_db, algorithms_for(algorithm))


def metadata(cfg: ScenarioConfig, seed: int, **extra) -> Dict[str, str]:
    meta = {"config_hash": cfg.config_hash(), "seed": str(seed), "version": __version__,
            "rng": RNG_ALGORITHM}
    meta.update({k: str(v) for k, v in extra.items()})
    return meta


ESTIMATE_COLUMNS = ["algorithm", "seed", "snr_db", "source", "true_range_m", "true_angle_deg",
                    "est_range_m", "est_angle_deg", "kind", "range_error_m", "angle_error_deg",
                    "within_cell", "evaluated_nodes", "full_grid_nodes", "num_clusters",
                    "expansion_count", "shortfall"]
TIMING_COLUMNS = ["algorithm", "seed", "snr_db", "stage", "seconds"]


def within_cell(m: SourceMatch, angle_step: float, range_step: float) -> bool:
    """Estimate no further than one grid step from truth on both axes."""
    if not m.matched:
        return False
    tol = 1e-9
    return (abs(m.est_angle - m.truth_angle) <= angle_step * (1 + tol)
            and abs(m.est_range - m.truth_range) <= range_step * (1 + tol))


def estimates_table(cfg: ScenarioConfig, records: List[TrialRecord], seed: int) -> Table:
    grid = cfg.grid_spec()
    rows = []
    for rec in records:
        common = {"algorithm": rec.algorithm, "seed": rec.seed, "snr_db": rec.snr_db,
                  "evaluated_nodes": rec.evaluated_nodes, "full_grid_nodes": rec.full_grid_nodes,
                  "num_clusters": rec.num_clusters, "expansion_count": rec.expansion_count,
                  "shortfall": rec.shortfall}
        for i, m in enumerate(rec.matches):
            row = dict(common, source=i, true_range_m=m.truth_range,
                       true_angle_deg=float(np.rad2deg(m.truth_angle)), kind=m.kind,
                       within_cell=within_cell(m, grid.angle.step, grid.range.step))
            if m.matched:
                row.update(est_range_m=m.est_range, est_angle_deg=float(np.rad2deg(m.est_angle)),
                           range_error_m=m.est_range - m.truth_range,
                           angle_error_deg=float(np.rad2deg(m.est_angle - m.truth_angle)))
            rows.append(row)
        for e in rec.unmatched:
            rows.append(dict(common, est_range_m=e.range, est_angle_deg=float(np.rad2deg(e.angle)),
                             kind=e.kind, within_cell=False))
    return make_table(ESTIMATE_COLUMNS, rows, metadata(cfg, seed))


def timings_table(cfg: ScenarioConfig, records: List[TrialRecord], seed: int) -> Table:
    rows = []
    for rec in records:
        for stage, sec in rec.timings.items():
            rows.append({"algorithm": rec.algorithm, "seed": rec.seed, "snr_db": rec.snr_db,
                         "stage": stage, "seconds": sec})
        rows.append({"algorithm": rec.algorithm, "seed": rec.seed, "snr_db": rec.snr_db,
                     "stage": "total", "seconds": rec.wall_time})
    return make_table(TIMING_COLUMNS, rows, metadata(cfg, seed))


# ---- RMSE sweep ---------------------------------------------------------

RMSE_COLUMNS = ["snr_db", "algorithm", "trials", "sources", "rmse_angle_deg", "rmse_range_m",
                "matched_fraction", "within_cell_fraction"]


def penalties(cfg: ScenarioConfig) -> Tuple[float, float]:
    """Error charged for an unmatched source: half the search domain on each axis."""
    g = cfg.grid
    return 0.5 * (g.angle_max_deg - g.angle_min_deg), 0.5 * (g.range_max_m - g.range_min_m)


def _sweep_task(args):
    cfg, seed, snr, algorithms, analytic = args
    return run_trial(cfg, seed, snr, algorithms, analytic)


def sweep_trials(cfg: ScenarioConfig, snr_list: Sequence[float], trials: int,
                 algorithms: Sequence[str] = ALGORITHMS, base_seed: Optional[int] = None,
                 analytic: bool = False, jobs: int = 1) -> List[TrialRecord]:
    """All records ordered by (SNR, seed). Trial ``t`` uses seed ``base_seed + t`` at every SNR."""
    if trials < 1:
        raise ConfigError(f"trials must be at least 1, got {trials}")
    base = cfg.seed if base_seed is None else base_seed
    tasks = [(cfg, base + t, float(s), tuple(algorithms), analytic)
             for s in snr_list for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_task, tasks))
    else:
        chunks = [_sweep_task(t) for t in tasks]
    return [rec for chunk in chunks for rec in chunk]


def rmse_from_records(cfg: ScenarioConfig, records: List[TrialRecord]) -> List[dict]:
    pa, pr = penalties(cfg)
    grid = cfg.grid_spec()
    groups: Dict[Tuple[float, str], List[TrialRecord]] = {}
    for rec in records:
        groups.setdefault((rec.snr_db, rec.algorithm), []).append(rec)
    rows = []
    for (snr, alg), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], ALGORITHMS.index(kv[0][1]))):
        ea, er, hit, cell = [], [], 0, 0
        for rec in recs:
            for m in rec.matches:
                if m.matched:
                    ea.append(float(np.rad2deg(m.est_angle - m.truth_angle)))
                    er.append(m.est_range - m.truth_range)
                    hit += 1
                    cell += within_cell(m, grid.angle.step, grid.range.step)
                else:
                    ea.append(pa)
                    er.append(pr)
        n = len(ea)
        rows.append({
            "snr_db": snr, "algorithm": alg, "trials": len(recs), "sources": n,
            "rmse_angle_deg": math.sqrt(math.fsum(x * x for x in ea) / n) if n else float("nan"),
            "rmse_range_m": math.sqrt(math.fsum(x * x for x in er) / n) if n else float("nan"),
            "matched_fraction": hit / n if n else float("nan"),
            "within_cell_fraction": cell / n if n else float("nan"),
        })
    return rows


def rmse_sweep(cfg: ScenarioConfig, snr_list: Optional[Sequence[float]] = None,
               trials: Optional[int] = None, algorithms: Sequence[str] = ALGORITHMS,
               base_seed: Optional[int] = None, analytic: bool = False, jobs: int = 1) -> Table:
    """Pooled RMSE over trials and sources, per SNR and algorithm."""
    snr_list = cfg.snr_list if snr_list is None else tuple(snr_list)
    trials = cfg.trials if trials is None else trials
    base = cfg.seed if base_seed is None else base_seed
    records = sweep_trials(cfg, snr_list, trials, algorithms, base, analytic, jobs)
    pa, pr = penalties(cfg)
    meta = metadata(cfg, base, trials=trials, penalty_angle_deg=repr(pa),
                    penalty_range_m=repr(pr), aggregation="pooled over trials and sources",
                    data="analytic covariance" if analytic else f"{cfg.snapshots} snapshots")
    return make_table(RMSE_COLUMNS, rmse_from_records(cfg, records), meta)


# ---- timing benchmark ---------------------------------------------------

BENCH_COLUMNS = ["algorithm", "repetitions", "mean_time_s", "min_time_s", "evaluated_nodes",
                 "full_grid_nodes", "node_ratio", "speedup", "nodes_stable"]


def bench(cfg: ScenarioConfig, repetitions: Optional[int] = None,
          algorithms: Sequence[str] = ALGORITHMS, seed: Optional[int] = None) -> Table:
    """Time each estimator on the same snapshots ``repetitions`` times.

    ``speedup`` is the full 2D-MUSIC mean time over this row's mean time and
    is only filled when both estimators run.
    """
    reps = cfg.repetitions if repetitions is None else repetitions
    if reps < 3:
        raise ConfigError(f"repetitions must be at least 3, got {reps}")
    seed = cfg.seed if seed is None else seed
    y = synthesize_snapshots(cfg.geometry(), cfg.truth(), cfg.snapshots, cfg.noise_var(), seed)
    stats = {}
    for alg in algorithms:
        times, nodes = [], set()
        for _ in range(reps):
            res, wall = run_algorithm(cfg, alg, y, False)
            times.append(wall)
            nodes.add(res.diagnostics.evaluated_nodes)
        stats[alg] = (times, nodes)
    rows = []
    base = float(np.mean(stats["music2d"][0])) if "music2d" in stats else None
    full = cfg.grid_spec().num_nodes
    for alg, (times, nodes) in stats.items():
        mean = float(np.mean(times))
        n = max(nodes)
        rows.append({"algorithm": alg, "repetitions": reps, "mean_time_s": mean,
                     "min_time_s": float(min(times)), "evaluated_nodes": n,
                     "full_grid_nodes": full, "node_ratio": n / full,
                     "speedup": base / mean if base is not None and len(stats) > 1 else None,
                     "nodes_stable": len(nodes) == 1})
    return make_table(BENCH_COLUMNS, rows, metadata(cfg, seed, snr_db=repr(cfg.snr_db)))


# ---- spectrum export ----------------------------------------------------

def _noise_basis(r: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        # no sources: every eigenvector spans the noise space
        return np.ascontiguousarray(np.linalg.eigh(r)[1])
    return decompose(r, k).noise_basis


def _db(values: np.ndarray) -> np.ndarray:
    top = float(np.max(values)) if values.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(values / top) if top > 0 else np.full(values.shape, np.nan)


def dump_spectrum(cfg: ScenarioConfig, which: str, seed: Optional[int] = None,
                  angle_deg: Optional[float] = None) -> Table:
    """Evaluate one spectrum on the scenario's snapshots.

    ``amplitude`` is linear and ``amplitude_db`` is relative to the maximum.
    The 1D kinds (``beamform``, ``music1d``) scan range at ``angle_deg``,
    which defaults to the first source's angle or broadside.
    """
    if which not in SPECTRUM_KINDS:
        raise ConfigError(f"unknown spectrum kind {which!r}; expected one of {', '.join(SPECTRUM_KINDS)}")
    seed = cfg.seed if seed is None else seed
    geom, grid = cfg.geometry(), cfg.grid_spec()
    y = synthesize_snapshots(geom, cfg.truth(), cfg.snapshots, cfg.noise_var(), seed)
    r = sample_covariance(y)
    extra = {"spectrum": which}

    if which == "angle-fft":
        spec = angle_spectrum(r, cfg.localizer.fft_size, geom)
        bins, angles, vals = spec.ordered()
        db = _db(vals)
        rows = [{"bin": int(b), "angle_deg": float(np.rad2deg(a)), "amplitude": float(v),
                 "amplitude_db": float(d)} for b, a, v, d in zip(bins, angles, vals, db)]
        return make_table(["bin", "angle_deg", "amplitude", "amplitude_db"], rows,
                          metadata(cfg, seed, **extra))

    if which == "music2d":
        angles, ranges = grid.angles(), grid.ranges()
        vals = music_spectrum(_noise_basis(r, cfg.num_sources), geom, angles, ranges)
        db = _db(vals)
        a_deg = np.rad2deg(angles)
        rows = [{"angle_deg": float(a_deg[i]), "range_m": float(ranges[j]),
                 "amplitude": float(vals[i, j]), "amplitude_db": float(db[i, j])}
                for i in range(angles.size) for j in range(ranges.size)]
        return make_table(["angle_deg", "range_m", "amplitude", "amplitude_db"], rows,
                          metadata(cfg, seed, **extra))

    if angle_deg is None:
        angle_deg = cfg.sources[0][1] if cfg.sources else 0.0
    theta = float(np.deg2rad(angle_deg))
    ranges = grid.ranges()
    if which == "beamform":
        vals = beamform_distance_scan(r, geom, theta, ranges)
    else:
        vals = music_1d_distance(_noise_basis(r, cfg.num_sources), geom, theta, ranges)
    db = _db(vals)
    rows = [{"angle_deg": float(angle_deg), "range_m": float(rr), "amplitude": float(v),
             "amplitude_db": float(d)} for rr, v, d in zip(ranges, vals, db)]
    return make_table(["angle_deg", "range_m", "amplitude", "amplitude_db"], rows,
                      metadata(cfg, seed, angle_deg=repr(float(angle_deg)), **extra))
