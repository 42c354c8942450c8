"""Synthetic multi-lane highway with constant-speed vehicles and wrap-around."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError

# speed limit (km/h) used for each density (veh/km) when none is given
DEFAULT_SPEED_KMH = {60: 140.0, 120: 70.0}


@dataclass(frozen=True)
class ScenarioConfig:
    density_veh_km: float = 60.0
    length_m: float = 5000.0
    lanes_per_direction: int = 3
    directions: int = 2
    lane_width_m: float = 4.0
    speed_kmh: float | None = None
    speed_spread: float = 0.1
    # longitudinal jitter around equal spacing, as a fraction of the spacing
    jitter: float = 0.5

    @property
    def lanes(self) -> int:
        return self.lanes_per_direction * self.directions

    @property
    def vehicle_count(self) -> int:
        return int(round(self.density_veh_km * self.length_m / 1000.0))

    @property
    def beta(self) -> float:
        """Density in vehicles per metre."""
        return self.density_veh_km / 1000.0

    def limit_kmh(self) -> float:
        if self.speed_kmh is not None:
            return self.speed_kmh
        try:
            return DEFAULT_SPEED_KMH[int(self.density_veh_km)]
        except KeyError:
            raise ConfigError(f"no default speed for {self.density_veh_km} veh/km; set speed_kmh") from None

    def validate(self) -> None:
        if self.density_veh_km <= 0:
            raise ConfigError("traffic density must be positive")
        if self.length_m <= 0 or self.lanes_per_direction < 1 or self.directions not in (1, 2):
            raise ConfigError("invalid road geometry")
        if not 0 <= self.speed_spread < 1:
            raise ConfigError("speed_spread must be in [0, 1)")
        if not 0 <= self.jitter <= 1:
            raise ConfigError("jitter must be in [0, 1]")
        if self.vehicle_count < 1:
            raise ConfigError("scenario holds no vehicle")
        self.limit_kmh()


def consistent_length(density_veh_km: float, N: int, min_length_m: float = 5000.0) -> float:
    """Shortest ring of at least ``min_length_m`` holding a multiple of N vehicles.

    Going once around a ring the PosIndex must come back to itself, which is
    only possible without a discontinuity when the vehicle count is a
    multiple of N.  Open highways have no such constraint.
    """
    beta = density_veh_km / 1000.0
    need = math.ceil(round(min_length_m * beta, 9) / N) * N
    return need / beta


@dataclass(frozen=True)
class Population:
    x: np.ndarray       # longitudinal position in [0, length)
    y: np.ndarray       # lateral position (lane centre)
    v: np.ndarray       # signed longitudinal speed (m/s)
    lane: np.ndarray
    laps: np.ndarray    # completed wrap-arounds
    length_m: float

    def __len__(self):
        return len(self.x)


def init_scenario(cfg: ScenarioConfig, seed_or_rng) -> Population:
    cfg.validate()
    rng = np.random.default_rng(seed_or_rng)
    total = cfg.vehicle_count
    per_lane = np.full(cfg.lanes, total // cfg.lanes)
    per_lane[: total % cfg.lanes] += 1
    limit = cfg.limit_kmh() / 3.6
    xs, ys, vs, lanes = [], [], [], []
    for lane, n in enumerate(per_lane):
        if n == 0:
            continue
        spacing = cfg.length_m / n
        jit = cfg.jitter * rng.uniform(-0.5, 0.5, n)
        x = ((np.arange(n) + 0.5 + jit) * spacing) % cfg.length_m
        sign = 1.0 if lane < cfg.lanes_per_direction else -1.0
        speed = rng.uniform(limit * (1.0 - cfg.speed_spread), limit, n) if cfg.speed_spread else np.full(n, limit)
        xs.append(x)
        ys.append(np.full(n, lane * cfg.lane_width_m))
        vs.append(sign * speed)
        lanes.append(np.full(n, lane))
    x, y, v, lane = (np.concatenate(a) for a in (xs, ys, vs, lanes))
    # ids run from the front of the road to the back, so that a cold-start
    # PosIndex of id mod N already follows the queue
    order = np.lexsort((lane, -x))
    return Population(x[order], y[order], v[order], lane[order],
                      np.zeros(total, dtype=np.int64), cfg.length_m)


def step(pop: Population, dt_ms: float) -> Population:
    if dt_ms < 0:
        raise ValueError("dt must be >= 0")
    raw = pop.x + pop.v * dt_ms / 1000.0
    wraps = np.floor_divide(raw, pop.length_m).astype(np.int64)
    return replace(pop, x=raw - wraps * pop.length_m, laps=pop.laps + np.abs(wraps))


class SyntheticMobility:
    """Closed-form constant-speed motion from an initial population."""

    def __init__(self, pop: Population):
        self.start = pop

    def at(self, t_ms: float) -> Population:
        return step(self.start, t_ms)


class TraceMobility:
    """Replays positions from a ``t_ms,vehicle_id,lane,x_m,v_mps`` trace.

    Positions are linearly interpolated between samples; a jump larger than
    half the road between two samples counts as a wrap-around.
    """

    def __init__(self, times, x, v, lane, length_m: float, lane_width_m: float = 4.0):
        self.times = np.asarray(times, dtype=float)
        self.x = np.asarray(x, dtype=float)       # (T, V)
        self.v = np.asarray(v, dtype=float)
        self.lane = np.asarray(lane)
        self.length_m = length_m
        self.y = self.lane * lane_width_m
        jumps = np.abs(np.diff(self.x, axis=0)) > length_m / 2
        self.laps = np.vstack([np.zeros((1, self.x.shape[1]), dtype=np.int64),
                               np.cumsum(jumps, axis=0)])

    def at(self, t_ms: float) -> Population:
        k = int(np.clip(np.searchsorted(self.times, t_ms, side="right") - 1, 0, len(self.times) - 1))
        if k + 1 < len(self.times):
            frac = (t_ms - self.times[k]) / (self.times[k + 1] - self.times[k])
            dx = self.x[k + 1] - self.x[k]
            dx = np.where(self.laps[k + 1] != self.laps[k], dx - np.sign(dx) * self.length_m, dx)
            x = (self.x[k] + frac * dx) % self.length_m
        else:
            x = self.x[k]
        return Population(x, self.y, self.v[k], self.lane, self.laps[k].copy(), self.length_m)

    @classmethod
    def load(cls, path, length_m: float, lane_width_m: float = 4.0) -> "TraceMobility":
        rows: dict[float, dict[int, tuple]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"t_ms", "vehicle_id", "lane", "x_m", "v_mps"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise ConfigError(f"{path}: trace header must be {','.join(sorted(need))}")
            for r in reader:
                rows.setdefault(float(r["t_ms"]), {})[int(r["vehicle_id"])] = (
                    int(r["lane"]), float(r["x_m"]), float(r["v_mps"]))
        times = sorted(rows)
        ids = sorted(rows[times[0]])
        if any(sorted(rows[t]) != ids for t in times):
            raise ConfigError(f"{path}: every sample time must list the same vehicles")
        lane = np.array([rows[times[0]][i][0] for i in ids])
        x = np.array([[rows[t][i][1] for i in ids] for t in times])
        v = np.array([[rows[t][i][2] for i in ids] for t in times])
        return cls(times, x, v, lane, length_m, lane_width_m)


def export_trace(mobility, times_ms, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "vehicle_id", "lane", "x_m", "v_mps"])
        for t in times_ms:
            p = mobility.at(t)
            for i in range(len(p)):
                w.writerow([f"{t:g}", i, int(p.lane[i]), f"{p.x[i]:.4f}", f"{p.v[i]:.4f}"])
