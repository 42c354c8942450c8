"""Sensing-based semi-persistent scheduling (3GPP Release 14 baseline)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import PoolConfig

HISTORY_MS = 1000
RSRP_THRESHOLD_DBM = -120.0
RSRP_STEP_DB = 3.0
L2_FRACTION = 0.2

COUNTER_RANGE = {10: (5, 15), 20: (10, 30), 50: (25, 75)}


class Tick(Enum):
    KEEP = "keep"
    RESELECT = "reselect"


@dataclass
class Reservation:
    time_ms: int        # first transmission time
    phase: int          # sub-frame index within the reservation interval
    sc: int
    np: int
    counter: int
    interval_ms: int

    def next_time(self, after_ms: int) -> int:
        """First reserved sub-frame strictly after ``after_ms``."""
        k = (self.phase - after_ms) % self.interval_ms
        return after_ms + (k if k else self.interval_ms)


class SensingHistory:
    """Per-vehicle sensing state over the last 1000 sub-frames.

    ``rssi`` is a ``(1000, SC)`` ring of linear powers (mW) indexed by
    ``t % 1000``; NaN marks sub-frames the vehicle could not sense because it
    was transmitting.  ``sci_rsrp``/``sci_time`` hold, per reservation phase
    and sub-channel, the strongest RSRP (dBm) among SCIs decoded recently and
    when the last one arrived.  Arrays may be views into a population-wide
    :class:`SensingBank`.
    """

    def __init__(self, SC: int, interval_ms: int, rssi=None, sci_rsrp=None, sci_time=None):
        if HISTORY_MS % interval_ms:
            raise ValueError("reservation interval must divide 1000 ms")
        self.SC = SC
        self.interval_ms = interval_ms
        self.rssi = np.full((HISTORY_MS, SC), np.nan) if rssi is None else rssi
        self.sci_rsrp = np.full((interval_ms, SC), -np.inf) if sci_rsrp is None else sci_rsrp
        self.sci_time = np.full((interval_ms, SC), -np.inf) if sci_time is None else sci_time

    def record_subframe(self, t_ms: int, rssi_mw=None, transmitting: bool = False) -> None:
        row = t_ms % HISTORY_MS
        if transmitting or rssi_mw is None:
            self.rssi[row] = np.nan
        else:
            self.rssi[row] = rssi_mw

    def record_sci(self, t_ms: int, sc: int, np_: int, rsrp_dbm: float) -> None:
        ph = t_ms % self.interval_ms
        sl = slice(sc, sc + np_)
        stale = self.sci_time[ph, sl] < t_ms - HISTORY_MS
        cur = np.where(stale, -np.inf, self.sci_rsrp[ph, sl])
        self.sci_rsrp[ph, sl] = np.maximum(cur, rsrp_dbm)
        self.sci_time[ph, sl] = t_ms

    def average_rssi(self) -> np.ndarray:
        """Mean sensed power per (phase, sub-channel); 0 where nothing was sensed."""
        P = self.interval_ms
        stack = self.rssi.reshape(HISTORY_MS // P, P, self.SC)
        known = ~np.isnan(stack)
        total = np.where(known, stack, 0.0).sum(axis=0)
        count = known.sum(axis=0)
        return np.divide(total, count, out=np.zeros_like(total), where=count > 0)

    def reserved_rsrp(self, now_ms: int) -> np.ndarray:
        fresh = self.sci_time >= now_ms - HISTORY_MS
        return np.where(fresh, self.sci_rsrp, -np.inf)


class SensingBank:
    """Sensing state of a whole population in stacked arrays."""

    def __init__(self, V: int, SC: int, interval_ms: int):
        self.SC = SC
        self.interval_ms = interval_ms
        self.rssi = np.full((V, HISTORY_MS, SC), np.nan)
        self.sci_rsrp = np.full((V, interval_ms, SC), -np.inf)
        self.sci_time = np.full((V, interval_ms, SC), -np.inf)

    def view(self, i: int) -> SensingHistory:
        return SensingHistory(self.SC, self.interval_ms, self.rssi[i], self.sci_rsrp[i], self.sci_time[i])

    def record_subframe(self, t_ms: int, rssi_mw: np.ndarray, transmitting: np.ndarray) -> None:
        row = self.rssi[:, t_ms % HISTORY_MS]
        row[:] = rssi_mw
        row[transmitting] = np.nan


def draw_counter(rate: int, rng: np.random.Generator) -> int:
    lo, hi = COUNTER_RANGE[rate]
    return int(rng.integers(lo, hi + 1))


def candidate_count(np_: int, cfg: PoolConfig) -> int:
    return cfg.SF * (cfg.SC - np_ + 1)


def select_csr(history: SensingHistory, np_: int, now_ms: int, cfg: PoolConfig,
               rng: np.random.Generator, threshold_dbm: float = RSRP_THRESHOLD_DBM,
               return_lists: bool = False):
    """Pick a candidate single-subframe resource in the window (now, now + period].

    Returns a fresh :class:`Reservation`; with ``return_lists`` also the L1
    mask, the L2 indices and the final RSRP threshold, indexed over the
    ``(window offset, first sub-channel)`` candidate grid.
    """
    P = cfg.SF
    if np_ > cfg.SC:
        raise ValueError(f"packet needs {np_} sub-channels, only {cfg.SC} exist")
    nsc = cfg.SC - np_ + 1
    times = now_ms + 1 + np.arange(P)
    phases = times % history.interval_ms

    reserved = history.reserved_rsrp(now_ms)[phases]          # (P, SC)
    csr_rsrp = np.full((P, nsc), -np.inf)
    rssi = history.average_rssi()[phases]
    csr_rssi = np.zeros((P, nsc))
    for k in range(np_):
        csr_rsrp = np.maximum(csr_rsrp, reserved[:, k:k + nsc])
        csr_rssi += rssi[:, k:k + nsc]
    csr_rssi /= np_

    total = P * nsc
    quota = math.ceil(L2_FRACTION * total)
    thr = threshold_dbm
    while True:
        l1 = ~(csr_rsrp > thr)
        if l1.sum() >= quota:
            break
        thr += RSRP_STEP_DB

    flat = np.flatnonzero(l1)
    tiebreak = rng.random(flat.size)
    ranked = flat[np.lexsort((tiebreak, csr_rssi.ravel()[flat]))]
    l2 = ranked[:quota]
    pick = int(l2[rng.integers(quota)])
    off, sc = divmod(pick, nsc)
    t = int(times[off])
    res = Reservation(time_ms=t, phase=t % history.interval_ms, sc=int(sc), np=np_,
                      counter=draw_counter(cfg.rate, rng), interval_ms=history.interval_ms)
    if return_lists:
        return res, l1, l2, thr
    return res


def tick_reservation(res: Reservation, next_np: int | None = None) -> Tick:
    """Count one transmission against the reservation.

    Resources are never kept once the counter expires (keep probability 0).
    """
    res.counter -= 1
    if res.counter <= 0 or (next_np is not None and next_np > res.np):
        return Tick.RESELECT
    return Tick.KEEP


def needs_reselection(res: Reservation | None, np_: int) -> bool:
    return res is None or res.counter <= 0 or np_ > res.np
