"""Geo-based scheduler: virtual queue, PosIndex estimation and slot choice."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import grid
from .errors import SchedulingError
from .grid import PoolConfig, ResourceAssignment

# A neighbour is usable if one of its last ELIGIBLE_BEACONS beacons arrived.
ELIGIBLE_BEACONS = 10
DEFAULT_MU = 10.0
DEFAULT_ETA = 0.1
POSINDEX_OVERHEAD_BYTES = 2


class Mode(Enum):
    NORMAL = "normal"
    RANDOM = "random"


@dataclass
class NeighborRecord:
    vehicle_id: int
    x: float                # longitudinal position in the last beacon (m)
    speed: float            # signed longitudinal speed (m/s)
    timestamp_ms: float     # generation time of that beacon
    posindex: int
    y: float = 0.0
    received_ms: list[float] = field(default_factory=list)

    def eligible(self, now_ms: float, period_ms: float) -> bool:
        return any(now_ms - t < ELIGIBLE_BEACONS * period_ms for t in self.received_ms)


@dataclass
class SchedulerState:
    posindex: int
    w: int
    mu: float = DEFAULT_MU
    eta: float = DEFAULT_ETA

    @classmethod
    def initial(cls, vehicle_id: int, cfg: PoolConfig, rng: np.random.Generator,
                mu: float = DEFAULT_MU, eta: float = DEFAULT_ETA) -> "SchedulerState":
        # cold start: no beacon heard yet, so fall back on the vehicle id
        w = int(rng.integers(cfg.w_min, cfg.w_max + 1))
        return cls(posindex=vehicle_id % cfg.N, w=w, mu=mu, eta=eta)


def estimate_position(record: NeighborRecord, now_ms: float) -> float:
    if now_ms < record.timestamp_ms:
        raise ValueError("beacon timestamp lies in the future")
    return record.x + record.speed * (now_ms - record.timestamp_ms) / 1000.0


def build_queue(self_x: float, neighbors: list[NeighborRecord], now_ms: float):
    """Preceding neighbours as ``(record, distance)`` pairs, nearest first.

    Vehicles are ordered on the longitudinal axis whatever their lane or
    direction; equal estimated positions are broken by ascending id.  Several
    records of one vehicle collapse to the most recent beacon.
    """
    latest: dict[int, NeighborRecord] = {}
    for rec in neighbors:
        cur = latest.get(rec.vehicle_id)
        if cur is None or rec.timestamp_ms > cur.timestamp_ms:
            latest[rec.vehicle_id] = rec
    ahead = []
    for rec in latest.values():
        d = estimate_position(rec, now_ms) - self_x
        if d > 0:
            ahead.append((d, rec.vehicle_id, rec))
    ahead.sort(key=lambda t: (t[0], t[1]))
    return [(rec, d) for d, _, rec in ahead]


def compute_posindex(preceding, current: int, cfg: PoolConfig,
                     mu: float = DEFAULT_MU, eta: float = DEFAULT_ETA) -> int:
    """Weighted vote over the PosIndex implied by each preceding vehicle.

    ``preceding`` holds ``(posindex_u, distance_u)`` pairs ordered nearest
    first; vehicle ``u`` (1-based) suggests ``posindex_u + u``.  Ties go to the
    smallest PosIndex.
    """
    if not preceding:
        return current
    scores = np.zeros(cfg.N)
    for u, (pi_u, d_u) in enumerate(preceding, start=1):
        scores[(int(pi_u) + u) % cfg.N] += mu + eta * d_u
    return int(np.argmax(scores))


def next_mode(state: SchedulerState, cfg: PoolConfig, rng: np.random.Generator) -> Mode:
    """Advance the normal-mode countdown by one transmission."""
    state.w -= 1
    if state.w <= 0:
        state.w = int(rng.integers(cfg.w_min, cfg.w_max + 1))
        return Mode.RANDOM
    return Mode.NORMAL


def random_posindex(pi: int, cfg: PoolConfig, rng: np.random.Generator) -> int:
    window = grid.window_set(grid.random_center(pi, cfg), cfg.M, cfg.N)
    return window[int(rng.integers(len(window)))]


def select_assignment(state: SchedulerState, mode: Mode, np_: int, cfg: PoolConfig,
                      rng: np.random.Generator) -> ResourceAssignment:
    if np_ > cfg.SC:
        raise SchedulingError(f"packet needs {np_} sub-channels but only {cfg.SC} exist")
    pi = state.posindex
    if mode is Mode.RANDOM:
        pi = random_posindex(pi, cfg, rng)
    return grid.assignment_of(pi, np_, cfg)


def wrap_offset(dx, length_m: float):
    """Signed offset on a ring, in ``[-length/2, length/2)``."""
    return (np.asarray(dx) + length_m / 2) % length_m - length_m / 2


def batch_posindex(est_x: np.ndarray, eligible: np.ndarray, heard_pi: np.ndarray,
                   self_x: np.ndarray, current: np.ndarray, cfg: PoolConfig,
                   mu: float = DEFAULT_MU, eta: float = DEFAULT_ETA,
                   ring_m: float | None = None) -> np.ndarray:
    """Vectorised :func:`compute_posindex` for a whole population.

    Row ``i`` of the ``(V, V)`` inputs describes what vehicle ``i`` knows about
    every other vehicle: estimated position, eligibility and the PosIndex in
    the last beacon heard.  On a ring road of length ``ring_m`` offsets are
    taken along the shorter arc.
    """
    V = len(current)
    offset = est_x - self_x[:, None]
    if ring_m is not None:
        offset = wrap_offset(offset, ring_m)
    ids = np.arange(V)
    ahead = eligible & (offset > 0)
    np.fill_diagonal(ahead, False)
    counts = ahead.sum(axis=1)
    key = np.where(ahead, offset, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    rank = np.arange(V)[None, :]
    valid = rank < counts[:, None]
    rows = np.broadcast_to(ids[:, None], (V, V))[valid]
    cols = order[valid]
    u = rank.repeat(V, axis=0)[valid] + 1
    cand = (heard_pi[rows, cols] + u) % cfg.N
    weight = mu + eta * offset[rows, cols]
    scores = np.bincount(rows * cfg.N + cand, weights=weight, minlength=V * cfg.N)
    best = scores.reshape(V, cfg.N).argmax(axis=1)
    return np.where(counts > 0, best, current)
