"""Command-line front end.

    cv2xgeo simulate --scheduler geo --density 60 --pps 10
    cv2xgeo sweep --duration 20 --out results/
    cv2xgeo analytic --density 60,120 --pps 10
    cv2xgeo validate --lanes-per-direction 1 --directions 1 --speed-spread 0

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analytic, sim
from .config import Cell, ExperimentSpec, load_config
from .errors import ConfigError

log = logging.getLogger("cv2xgeo")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# -- argument parsing ---------------------------------------------------------

def _common(p: argparse.ArgumentParser, grid_defaults: bool = False) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="YAML configuration file (see DEFAULT_YAML in cv2xgeo.config)")
    g.add_argument("--scheduler", help="comma list of geo, sps")
    g.add_argument("--density", help="comma list of densities in veh/km")
    g.add_argument("--pps", help="comma list of beacon rates: 10, 20, 50")
    g.add_argument("--duration", type=float, help="measured seconds per run, after the warm-up")
    g.add_argument("--warmup", type=float, help="warm-up seconds excluded from metrics")
    g.add_argument("--replications", type=int)
    g.add_argument("--seed", type=int, help="base seed")
    g.add_argument("--out", help="output directory")
    g.add_argument("--bler-table", help="'class snr_db bler' table replacing the logistic curves")
    g.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s = p.add_argument_group("scenario")
    s.add_argument("--length", help="road length in metres or 'auto'")
    s.add_argument("--lanes-per-direction", type=int)
    s.add_argument("--directions", type=int, choices=(1, 2))
    s.add_argument("--speed", type=float, help="speed limit in km/h")
    s.add_argument("--speed-spread", type=float)
    s.add_argument("--topology", choices=("ring", "line"))
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(grid_defaults=grid_defaults)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cv2xgeo", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="run the simulator on every cell of the grid"))
    _common(sub.add_parser("sweep", help="scheduler comparison over the full density x rate grid"),
            grid_defaults=True)
    _common(sub.add_parser("analytic", help="analytical PDR curve of the geo scheme"))
    _common(sub.add_parser("validate", help="simulated vs analytical PDR under one configuration"))
    return ap


def spec_from_args(args) -> ExperimentSpec:
    over: dict = {}
    if args.grid_defaults:
        over.update(schedulers=["sps", "geo"], densities=[60, 120], rates=[10, 20, 50])
    flat = {"schedulers": args.scheduler, "densities": args.density, "rates": args.pps,
            "duration_s": args.duration, "warmup_s": args.warmup, "replications": args.replications,
            "seed": args.seed, "outdir": args.out, "bler_table": args.bler_table}
    over.update({k: v for k, v in flat.items() if v is not None})
    scen = {"length_m": args.length, "lanes_per_direction": args.lanes_per_direction,
            "directions": args.directions, "speed_kmh": args.speed, "speed_spread": args.speed_spread}
    scen = {k: v for k, v in scen.items() if v is not None}
    if scen:
        over["scenario"] = scen
    if args.topology:
        over["sim"] = {"topology": args.topology}
    if args.grid_defaults and args.config:
        # the grid of a config file wins over the sweep defaults
        for k in ("schedulers", "densities", "rates"):
            if flat[k] is None:
                over.pop(k)
    cfg = load_config(args.config, over)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return ExperimentSpec.from_dict(cfg)


# -- output helpers -----------------------------------------------------------

class Staging:
    """Collects outputs in a scratch directory and moves them in place at the end.

    Nothing is left behind when the command fails part way.
    """

    def __init__(self, outdir: Path):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.path = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.outdir))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.commit()
        finally:
            shutil.rmtree(self.path, ignore_errors=True)
        return False

    def commit(self) -> None:
        for item in sorted(self.path.iterdir()):
            dest = self.outdir / item.name
            if dest.is_dir() and item.is_dir():
                old = dest.with_name(f".old-{dest.name}")
                shutil.rmtree(old, ignore_errors=True)
                os.replace(dest, old)
                os.replace(item, dest)
                shutil.rmtree(old, ignore_errors=True)
            else:
                os.replace(item, dest)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- simulation ---------------------------------------------------------------

def _run_one(spec: ExperimentSpec, cell: Cell, rep: int) -> sim.SimResult:
    cfg = spec.sim_config(cell, rep)
    scenario = spec.scenario_config(cell.density, cell.rate)
    t0 = time.perf_counter()
    res = sim.run(scenario, cfg, spec.radio_config(), spec.bler())
    log.info("%s rep %d: %d vehicles, pdr90 %.1f m (%.0f s)", cell.name, rep, res.vehicles,
             res.pdr90_m, time.perf_counter() - t0)
    return res


def _pool_ordering(stats):
    # replications share the pool clock; average them pool by pool
    stats = [s for s in stats if s is not None]
    if not stats:
        return None
    n = min(len(s.pool_index) for s in stats)
    out = sim.OrderingStats()
    for k in range(n):
        out.record(stats[0].pool_index[k], float(np.mean([s.frac_changed[k] for s in stats])),
                   float(np.mean([s.frac_incorrect[k] for s in stats])))
    return out


def run_grid(spec: ExperimentSpec, jobs: int = 1) -> dict:
    """Run every (cell, replication); returns {cell: [SimResult, ...]}."""
    cells = spec.cells()
    tasks = [(c, r) for c in cells for r in range(spec.replications)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_run_one, spec, c, r) for c, r in tasks]
            results = [f.result() for f in futs]
    else:
        results = [_run_one(spec, c, r) for c, r in tasks]
    out: dict = {c: [] for c in cells}
    for (c, _), res in zip(tasks, results):
        out[c].append(res)
    return out


def write_grid(spec: ExperimentSpec, results: dict, root: Path) -> None:
    summary, runs = [], []
    for cell, reps in results.items():
        curve = reps[0].curve
        for r in reps[1:]:
            curve = curve.merge(r.curve)
        d = root / cell.name
        d.mkdir()
        pooled = sim.SimResult(reps[0].config, reps[0].scenario, curve,
                               _pool_ordering([r.ordering for r in reps]))
        sim.write_outputs(pooled, d)
        row = [cell.scheduler, f"{cell.density:g}", cell.rate, f"{sim.pdr90_distance(curve):.1f}"]
        _write_rows(d / "summary.csv", ["scheduler", "density", "pps", "pdr90_m"], [row])
        summary.append(row)
        for k, r in enumerate(reps):
            corr = "" if r.ordering is None else f"{r.ordering.correct_fraction:.6f}"
            runs.append([cell.name, cell.index, k, r.config.seed, r.vehicles,
                         f"{r.scenario.length_m:.3f}", f"{r.pdr90_m:.1f}", corr])
    _write_rows(root / "summary.csv", ["scheduler", "density", "pps", "pdr90_m"], summary)
    _write_rows(root / "runs.csv", ["cell", "cell_index", "replication", "seed", "vehicles",
                                    "length_m", "pdr90_m", "ordering_correct"], runs)


def cmd_simulate(spec: ExperimentSpec, jobs: int = 1) -> dict:
    results = run_grid(spec, jobs)
    with Staging(spec.outdir) as st:
        write_grid(spec, results, st.path)
    for row in _read(spec.outdir / "summary.csv"):
        print(f"{row['scheduler']:>4} {row['density']:>5} veh/km {row['pps']:>3} pps  "
              f"pdr90 {row['pdr90_m']} m")
    return results


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- analytic model -----------------------------------------------------------

def cmd_analytic(spec: ExperimentSpec) -> None:
    if spec.schedulers != ["geo"]:
        raise ConfigError("the analytical model covers the geo scheduler only")
    dist = spec.distances()
    with Staging(spec.outdir) as st:
        for cell in spec.cells():
            cfg = spec.analytic_config(cell.density, cell.rate)
            d = st.path / cell.name
            d.mkdir()
            analytic.write_curve(analytic.curve(dist, cfg), d / "analytic_curve.csv")
            print(f"{cell.name}: {len(dist)} distances")


# -- validation ---------------------------------------------------------------

def validation_rows(curve: sim.PdrCurve, cfg: analytic.AnalyticConfig, max_m: float):
    """Per-bin (lo, hi, sim, analytic, |gap|) for bins ending at or before max_m."""
    pdr_sim = curve.pdr()
    rows = []
    for k in range(curve.nbins):
        if curve.hi[k] > max_m + 1e-9 or np.isnan(pdr_sim[k]):
            continue
        a = analytic.pdr(curve.centers[k], cfg)
        rows.append((curve.lo[k], curve.hi[k], pdr_sim[k], a, abs(pdr_sim[k] - a)))
    return rows


def cmd_validate(spec: ExperimentSpec, jobs: int = 1) -> float:
    spec = spec.with_(schedulers=["geo"])
    if len(spec.densities) != 1 or len(spec.rates) != 1:
        raise ConfigError("validate takes a single density and rate")
    results = run_grid(spec, jobs)
    cell, reps = next(iter(results.items()))
    curve = reps[0].curve
    for r in reps[1:]:
        curve = curve.merge(r.curve)
    cfg = spec.analytic_config(cell.density, cell.rate)
    max_m = float(spec.analytic["gap_max_m"])
    rows = validation_rows(curve, cfg, max_m)
    if not rows:
        raise ConfigError("no simulated bin within the validation range")
    gap = float(np.mean([r[4] for r in rows]))
    with Staging(spec.outdir) as st:
        write_grid(spec, results, st.path)
        _write_rows(st.path / "validation.csv", ["bin_lo_m", "bin_hi_m", "pdr_sim", "pdr_analytic", "abs_gap"],
                    [[f"{lo:g}", f"{hi:g}", f"{s:.6f}", f"{a:.6f}", f"{g:.6f}"] for lo, hi, s, a, g in rows])
        _write_rows(st.path / "validation_summary.csv", ["density", "pps", "max_distance_m", "bins", "mean_abs_gap"],
                    [[f"{cell.density:g}", cell.rate, f"{max_m:g}", len(rows), f"{gap:.6f}"]])
    print(f"mean |PDR_sim - PDR_analytic| up to {max_m:g} m: {gap:.4f} over {len(rows)} bins")
    return gap


# -- entry point --------------------------------------------------------------

def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = spec_from_args(args)
        if args.command in ("simulate", "sweep"):
            cmd_simulate(spec, args.jobs)
        elif args.command == "analytic":
            cmd_analytic(spec)
        else:
            cmd_validate(spec, args.jobs)
    except ConfigError as exc:
        print(f"cv2xgeo: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:        # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"cv2xgeo: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
