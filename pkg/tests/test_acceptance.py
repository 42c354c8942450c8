"""Acceptance gate: one PASS/FAIL line per criterion, printed in the summary.

The slow criteria (5-8) simulate several minutes of traffic in total; the
whole module takes roughly half an hour on one core.
"""
import math
import time

import numpy as np
import pytest

from cv2xgeo import analytic as A, cli, geo, grid, sim
from cv2xgeo.config import ExperimentSpec, load_config
from cv2xgeo.phy import Outcome, RadioConfig

SWEEP_DENSITIES = (60, 120)
SWEEP_RATES = (10, 20, 50)
# 10 pps cells also serve the ordering and collision criteria, which ask for 60 s
SWEEP_DURATION = {10: 60.0, 20: 20.0, 50: 20.0}
WARMUP = 5.0


# -- 1 ---------------------------------------------------------------------

def test_c01_grid_bijection(criterion):
    t0 = time.perf_counter()
    ok = True
    for rate in grid.SUPPORTED_RATES:
        cfg = grid.pool_dims(rate, 4)
        slots = {(grid.subframe_of(pi, cfg), grid.first_subchannel(pi, 1, cfg)) for pi in range(cfg.N)}
        ok &= len(slots) == cfg.N and all(0 <= sf < cfg.SF and 0 <= sc < 4 for sf, sc in slots)
    dt = time.perf_counter() - t0
    assert criterion(1, ok and dt < 1.0, f"PosIndex -> (sf, sc) bijective for 10/20/50 pps in {dt:.3f} s")


# -- 2 ---------------------------------------------------------------------

def test_c02_randomization_rate(criterion):
    rng = np.random.default_rng(2)
    parts, ok = [], True
    for rate, want in ((10, 0.1), (20, 0.05), (50, 0.02)):
        cfg = grid.pool_dims(rate)
        st = geo.SchedulerState.initial(0, cfg, rng)
        n = 1_000_000
        k = sum(geo.next_mode(st, cfg, rng) is geo.Mode.RANDOM for _ in range(n))
        ok &= abs(k / n - want) <= 0.002 and abs(cfg.p_random - want) < 1e-12
        parts.append(f"{rate} pps {k / n:.4f} (want {want})")
    assert criterion(2, ok, "random fraction over 1e6 ticks: " + ", ".join(parts))


# -- 3 ---------------------------------------------------------------------

def _hd_monte_carlo(dpi, cfg, n, rng):
    pool = cfg.pool
    sf = np.array([grid.subframe_of(p, pool) for p in range(pool.N)])
    win = np.array([grid.window_set(grid.random_center(p, pool), pool.M, pool.N) for p in range(pool.N)])

    def draw(pi):
        rnd = rng.random(n) < cfg.p_ran
        pick = win[pi, rng.integers(0, 2 * pool.M + 1, n)]
        return sf[np.where(rnd, pick, pi)]

    pt = rng.integers(0, pool.N, n)
    return float(np.mean(draw(pt) == draw((pt + dpi) % pool.N)))


def test_c03_hd_closed_form_vs_monte_carlo(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, where = 0.0, None
    for rate in grid.SUPPORTED_RATES:
        cfg = A.AnalyticConfig(beta=0.06, pool=grid.pool_dims(rate))
        K, M = cfg.K, cfg.pool.M
        # every branch: exact same sub-frame, the quarter windows, the whole
        # windows around the exact points, their edges and the empty region
        sweep = {0, K // 2, K, 3 * K // 2, 1, M, M + 1, K // 2 + M, K + 1, 3 * K // 2 - M, 7,
                 K // 4, K // 4 + M, K // 4 + M + 1, 3 * K // 4, 3 * K // 4 - M, 5 * K // 4,
                 7 * K // 4, 7 * K // 4 + M, K // 8}
        for dpi in sorted(sweep):
            mc = _hd_monte_carlo(dpi, cfg, 100_000, rng)
            err = abs(mc - float(A.delta_hd_dpi(dpi, cfg)))
            if err >= worst:
                worst, where = err, (rate, dpi)
    dt = time.perf_counter() - t0
    assert criterion(3, worst < 1e-2 and dt < 60,
                     f"max |delta_hd - MC| = {worst:.4f} (at {where[0]} pps, dPI {where[1]}), {dt:.1f} s")


# -- 4 ---------------------------------------------------------------------

def test_c04_sen_closed_form_vs_monte_carlo(criterion):
    t0 = time.perf_counter()
    cfg = A.AnalyticConfig(beta=0.06, pool=grid.pool_dims(10))
    r = cfg.radio
    rng = np.random.default_rng(4)
    worst = 0.0
    for d in np.linspace(100.0, 1000.0, 10):
        pr = A.mean_rx_dbm(d, cfg) + rng.normal(0.0, r.shadow_sigma_db, 1_000_000)
        mc = float(np.mean(pr <= r.sensing_threshold_dbm))
        worst = max(worst, abs(mc - float(A.delta_sen(d, cfg))))
    dt = time.perf_counter() - t0
    assert criterion(4, worst < 1e-3 and dt < 60, f"max |delta_sen - MC| = {worst:.5f} over 10 distances, {dt:.1f} s")


# -- 5 ---------------------------------------------------------------------

def test_c05_analytic_vs_simulation(criterion):
    t0 = time.perf_counter()
    over = {"schedulers": ["geo"], "densities": [60], "rates": [10], "duration_s": 60.0, "warmup_s": WARMUP,
            "seed": 5, "scenario": {"lanes_per_direction": 1, "directions": 1, "speed_spread": 0.0},
            "radio": {"ibe_mask_db": []}}
    spec = ExperimentSpec.from_dict(load_config(None, over))
    results = cli.run_grid(spec)
    cell, (res,) = next(iter(results.items()))
    rows = cli.validation_rows(res.curve, spec.analytic_config(60, 10), 500.0)
    gap = float(np.mean([g for *_, g in rows]))
    dt = time.perf_counter() - t0
    assert criterion(5, gap <= 0.05 and dt < 600,
                     f"mean |PDR_sim - PDR_analytic| up to 500 m = {gap:.4f} ({len(rows)} bins, {dt:.0f} s)")


# -- 6, 7, 8 ---------------------------------------------------------------

@pytest.fixture(scope="session")
def sweep():
    t0 = time.perf_counter()
    out = {}
    for rate in SWEEP_RATES:
        over = {"schedulers": ["sps", "geo"], "densities": list(SWEEP_DENSITIES), "rates": [rate],
                "duration_s": SWEEP_DURATION[rate], "warmup_s": WARMUP, "seed": 7}
        spec = ExperimentSpec.from_dict(load_config(None, over))
        for cell, (res,) in cli.run_grid(spec).items():
            out[(cell.scheduler, int(cell.density), cell.rate)] = res
    out["elapsed_s"] = time.perf_counter() - t0
    return out


def test_c06_ordering_correctness(sweep, criterion):
    parts, ok = [], True
    for dens in SWEEP_DENSITIES:
        res = sweep[("geo", dens, 10)]
        frac = res.ordering.correct_fraction
        ok &= frac >= 0.99
        parts.append(f"{dens} veh/km {frac:.4f} ({res.vehicles} vehicles)")
    assert criterion(6, ok, "steady-state PosIndex = predecessor + 1 at 10 pps: " + ", ".join(parts))


def test_c07_comparative_claim(sweep, criterion):
    lines, ok = [], True
    gain = {}
    for rate in SWEEP_RATES:
        for dens in SWEEP_DENSITIES:
            g, s = sweep[("geo", dens, rate)].pdr90_m, sweep[("sps", dens, rate)].pdr90_m
            ok &= g > s
            gain[(dens, rate)] = (g - s) / s if s > 0 else math.inf
            lines.append(f"{dens}/{rate}: geo {g:.0f} m vs sps {s:.0f} m")
        better = gain[(120, rate)] > gain[(60, rate)]
        ok &= better
        lines.append(f"gain at {rate} pps {gain[(60, rate)]:+.0%} -> {gain[(120, rate)]:+.0%}"
                     f"{'' if better else ' (not larger at 120)'}")
    elapsed = sweep["elapsed_s"]
    ok &= elapsed <= 7200
    assert criterion(7, ok, "; ".join(lines) + f"; sweep {elapsed / 60:.0f} min")


def test_c08_collision_reduction(sweep, criterion):
    parts, ok = [], True
    for dens in SWEEP_DENSITIES:
        frac = {}
        for s in ("geo", "sps"):
            c = sweep[(s, dens, 10)].curve
            k = c.bin_at(440.0)
            assert (c.lo[k], c.hi[k]) == (440.0, 460.0)
            frac[s] = c.counts[k, Outcome.COL] / c.attempts[k]
        ratio = frac["geo"] / frac["sps"]
        ok &= ratio <= 0.5
        parts.append(f"{dens} veh/km COL geo {frac['geo']:.3f} / sps {frac['sps']:.3f} = {ratio:.2f}")
    assert criterion(8, ok, "440-460 m collisions at 10 pps: " + ", ".join(parts))


# -- 9 ---------------------------------------------------------------------

def test_c09_determinism(tmp_path, criterion):
    argv = ["--scheduler", "geo,sps", "--density", "60", "--pps", "10", "--duration", "3", "--warmup", "2",
            "--seed", "9"]
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["simulate", *argv, "--out", str(d)]) == 0
        assert cli.main(["analytic", "--pps", "10", "--out", str(d / "an")]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    same = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    assert criterion(9, same and len(files) >= 7, f"{len(files)} CSV files byte-identical across two runs")


# -- 10 --------------------------------------------------------------------

def test_c10_analytic_grid_convergence(criterion):
    d = np.arange(10.0, 801.0, 10.0)
    worst = 0.0
    for dens in SWEEP_DENSITIES:
        coarse = A.AnalyticConfig(beta=dens / 1000, pool=grid.pool_dims(10), grid_step_db=0.1)
        fine = A.AnalyticConfig(beta=dens / 1000, pool=grid.pool_dims(10), grid_step_db=0.05)
        for x in d:
            p, q = A.evaluate(x, coarse), A.evaluate(x, fine)
            for f in ("delta_hd", "delta_sen", "delta_pro", "delta_col", "pdr"):
                worst = max(worst, abs(getattr(p, f) - getattr(q, f)))
    assert criterion(10, worst < 1e-3, f"max change when halving the dB grid = {worst:.2e}")
