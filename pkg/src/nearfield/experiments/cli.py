"""``nearfield`` command line.

Subcommands: ``simulate``, ``rmse``, ``bench`` and ``spectrum``. Every run
writes CSV files into ``--out`` and prints a short summary to stdout. On
failure a single JSON line ``{"error": <category>, "message": ...}`` goes to
stderr and the exit code identifies the category.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import NearFieldError
from .config import load_config
from .runner import (SPECTRUM_KINDS, algorithms_for, bench, dump_spectrum, estimates_table,
                     rmse_sweep, run_scenario, timings_table)
from .tables import write_table

EXIT_CODES = {"config": 2, "geometry": 3, "grid": 4, "no-sources": 5, "io": 6, "error": 1}


def _snr_list(text: str):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated dB values, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nearfield", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, algorithm=True):
        sp.add_argument("--config", required=True, help="scenario INI file")
        sp.add_argument("--seed", type=int, help="override [simulation] seed")
        sp.add_argument("--out", help="output directory (default: [output] dir)")
        if algorithm:
            sp.add_argument("--algorithm", choices=("proposed", "music2d", "both"), default="both")

    sp = sub.add_parser("simulate", help="one trial of the scenario")
    common(sp)
    sp = sub.add_parser("rmse", help="Monte-Carlo RMSE against SNR")
    common(sp)
    sp.add_argument("--trials", type=int, help="override [simulation] trials")
    sp.add_argument("--snr-list", type=_snr_list, help="comma-separated SNR values in dB")
    sp.add_argument("--analytic", action="store_true", help="use exact covariances instead of snapshots")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp = sub.add_parser("bench", help="wall-time comparison on identical inputs")
    common(sp)
    sp.add_argument("--repetitions", type=int, help="override [simulation] repetitions (>= 3)")
    sp = sub.add_parser("spectrum", help="export one spectrum as CSV")
    common(sp, algorithm=False)
    sp.add_argument("kind", choices=SPECTRUM_KINDS)
    sp.add_argument("--angle", type=float, help="scan angle in degrees for beamform/music1d")
    return p


def _run(args) -> None:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    seed = cfg.seed if args.seed is None else args.seed

    if args.command == "simulate":
        recs = run_scenario(cfg, args.algorithm, seed)
        write_table(estimates_table(cfg, recs, seed), out / "estimates.csv")
        write_table(timings_table(cfg, recs, seed), out / "timings.csv")
        for rec in recs:
            print(f"{rec.algorithm}: {rec.wall_time:.3f} s, {rec.evaluated_nodes} nodes")
            for m in rec.matches:
                est = ("missed" if not m.matched else
                       f"{m.est_range:.2f} m, {np.rad2deg(m.est_angle):.2f} deg ({m.kind})")
                print(f"  truth {m.truth_range:.2f} m, {np.rad2deg(m.truth_angle):.2f} deg -> {est}")
    elif args.command == "rmse":
        table = rmse_sweep(cfg, args.snr_list, args.trials, algorithms_for(args.algorithm),
                           seed, args.analytic, args.jobs)
        write_table(table, out / "rmse.csv")
        for row in table.rows:
            print(f"{row['snr_db']:6.1f} dB {row['algorithm']:>8}: angle {row['rmse_angle_deg']:.4f} deg,"
                  f" range {row['rmse_range_m']:.4f} m")
    elif args.command == "bench":
        table = bench(cfg, args.repetitions, algorithms_for(args.algorithm), seed)
        write_table(table, out / "bench.csv")
        for row in table.rows:
            sp = "" if row["speedup"] is None else f", speedup {row['speedup']:.2f}x"
            print(f"{row['algorithm']:>8}: mean {row['mean_time_s']:.3f} s, nodes {row['evaluated_nodes']}"
                  f" ({100 * row['node_ratio']:.1f}%){sp}")
    else:
        table = dump_spectrum(cfg, args.kind, seed, args.angle)
        path = write_table(table, out / f"spectrum_{args.kind}.csv")
        print(f"{len(table.rows)} rows -> {path}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except NearFieldError as exc:
        return _fail(exc.category, str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    except ValueError as exc:
        return _fail("error", str(exc))
    return 0


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
