"""Sub-frame stepped C-V2X mode 4 system simulator.

Each 1 ms step advances mobility, generates due beacons, lets the scheduler
place them on the resource grid and evaluates every transmission at every
vehicle within the evaluation radius.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geo, grid, sps
from .errors import ConfigError
from .grid import PoolConfig
from .mobility import Population, ScenarioConfig, SyntheticMobility, init_scenario
from .phy import BlerTable, Outcome, RadioConfig, ShadowingField, classify, coupling_matrix, pathloss_db

log = logging.getLogger(__name__)

SCHEDULERS = ("geo", "sps")
HF, LF = 0, 1
CLASS_NAMES = ("HF", "LF")


@dataclass(frozen=True)
class Beacon:
    sender: int
    generated_ms: int
    packet_class: str
    x: float
    speed: float
    posindex: int | None = None

    @property
    def np(self) -> int:
        return 2 if self.packet_class == "LF" else 1

    @property
    def payload_bytes(self) -> int:
        size = 300 if self.packet_class == "LF" else 190
        if self.posindex is not None:
            size += geo.POSINDEX_OVERHEAD_BYTES
        return size


@dataclass(frozen=True)
class SimConfig:
    scheduler: str = "geo"
    rate: int = 10
    SC: int = 4
    duration_s: float = 60.0
    warmup_s: float = 5.0
    seed: int = 0
    eval_radius_m: float = 1000.0
    bin_width_m: float = 20.0
    max_distance_m: float = 800.0
    # "ring": the segment closes on itself and distances wrap around;
    # "line": vehicles leaving one end re-enter at the other with no memory,
    # and metrics only count transmitters measure_margin_m away from both ends
    topology: str = "ring"
    measure_margin_m: float = 1000.0
    shadow_update_ms: int = 100
    lf_every: int = 5
    # pools during which a fresh vehicle keeps its cold-start PosIndex while
    # its neighbour table fills
    posindex_hold_pools: int = geo.ELIGIBLE_BEACONS
    mu: float = geo.DEFAULT_MU
    eta: float = geo.DEFAULT_ETA

    def validate(self) -> None:
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.topology not in ("ring", "line"):
            raise ConfigError(f"unknown topology {self.topology!r}")
        grid.pool_dims(self.rate, self.SC)
        if self.SC < 2:
            raise ConfigError("LF beacons need 2 sub-channels; SC must be >= 2")
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.warmup_s < 0 or self.bin_width_m <= 0 or self.max_distance_m <= 0:
            raise ConfigError("invalid metric configuration")
        if self.shadow_update_ms < 1 or self.lf_every < 1 or self.posindex_hold_pools < 0:
            raise ConfigError("invalid timing configuration")


class PdrCurve:
    """Distance-binned reception outcomes."""

    COLUMNS = ("ok", "hd", "sen", "pro", "col")

    def __init__(self, bin_width_m: float = 20.0, max_distance_m: float = 800.0, counts=None):
        self.bin_width = bin_width_m
        self.nbins = int(np.ceil(max_distance_m / bin_width_m - 1e-9))
        self.counts = np.zeros((self.nbins, 5), dtype=np.int64) if counts is None else np.asarray(counts)

    @property
    def lo(self):
        return np.arange(self.nbins) * self.bin_width

    @property
    def hi(self):
        return self.lo + self.bin_width

    @property
    def centers(self):
        return self.lo + self.bin_width / 2

    @property
    def attempts(self):
        return self.counts.sum(axis=1)

    def pdr(self):
        a = self.attempts
        return np.divide(self.counts[:, Outcome.OK], a, out=np.full(self.nbins, np.nan), where=a > 0)

    def fraction(self, outcome: Outcome):
        a = self.attempts
        return np.divide(self.counts[:, outcome], a, out=np.full(self.nbins, np.nan), where=a > 0)

    def add(self, distance_m, outcome) -> None:
        b = (np.asarray(distance_m) / self.bin_width).astype(np.int64)
        keep = b < self.nbins
        idx = b[keep] * 5 + np.asarray(outcome)[keep]
        self.counts += np.bincount(idx, minlength=self.nbins * 5).reshape(self.nbins, 5)

    def merge(self, other: "PdrCurve") -> "PdrCurve":
        return PdrCurve(self.bin_width, self.nbins * self.bin_width, self.counts + other.counts)

    def bin_at(self, d_m: float) -> int:
        return int(d_m // self.bin_width)

    def rows(self):
        pdr = self.pdr()
        for k in range(self.nbins):
            c = self.counts[k]
            yield [f"{self.lo[k]:g}", f"{self.hi[k]:g}", int(c.sum()), *map(int, c),
                   "" if np.isnan(pdr[k]) else f"{pdr[k]:.6f}"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo_m", "bin_hi_m", "attempts", *self.COLUMNS, "pdr"])
            w.writerows(self.rows())

    @classmethod
    def read_csv(cls, path) -> "PdrCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        width = float(rows[0]["bin_hi_m"]) - float(rows[0]["bin_lo_m"])
        counts = [[int(r[c]) for c in cls.COLUMNS] for r in rows]
        return cls(width, float(rows[-1]["bin_hi_m"]), counts)


def pdr90_distance(curve: PdrCurve, target: float = 0.9) -> float:
    """Largest distance up to which every bin keeps PDR >= ``target``.

    The crossing is interpolated linearly between the centres of the last
    passing bin and the first failing one.  Empty bins are skipped.
    """
    pdr = curve.pdr()
    centers = curve.centers
    have = np.flatnonzero(~np.isnan(pdr))
    if have.size == 0:
        raise ValueError("PDR curve has no samples")
    prev = None
    for k in have:
        if pdr[k] < target:
            if prev is None:
                return 0.0
            p0, p1 = pdr[prev], pdr[k]
            c0, c1 = centers[prev], centers[k]
            return float(c0 + (p0 - target) / (p0 - p1) * (c1 - c0))
        prev = k
    return float(curve.hi[have[-1]])


@dataclass
class OrderingStats:
    pool_index: list = field(default_factory=list)
    frac_changed: list = field(default_factory=list)
    frac_incorrect: list = field(default_factory=list)

    def record(self, pool: int, changed: float, incorrect: float) -> None:
        self.pool_index.append(pool)
        self.frac_changed.append(changed)
        self.frac_incorrect.append(incorrect)

    @property
    def correct_fraction(self) -> float:
        if not self.frac_incorrect:
            return float("nan")
        return 1.0 - float(np.mean(self.frac_incorrect))

    @property
    def churn(self) -> float:
        return float(np.mean(self.frac_changed)) if self.frac_changed else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pool_index", "frac_changed", "frac_incorrect"])
            for p, c, i in zip(self.pool_index, self.frac_changed, self.frac_incorrect):
                w.writerow([p, f"{c:.6f}", f"{i:.6f}"])


def queue_predecessors(x: np.ndarray, ring: bool = False) -> np.ndarray:
    """Ground-truth nearest vehicle ahead (larger x) of every vehicle.

    On a line the front vehicle gets -1; on a ring it follows the rearmost.
    """
    order = np.lexsort((np.arange(len(x)), -x))     # front first, ties by id
    pred = np.full(len(x), -1)
    pred[order[1:]] = order[:-1]
    if ring and len(x) > 1:
        pred[order[0]] = order[-1]
    return pred


def posindex_correct(pi: np.ndarray, pred: np.ndarray, N: int) -> np.ndarray:
    has = pred >= 0
    ok = np.ones(len(pi), dtype=bool)
    ok[has] = pi[has] == (pi[pred[has]] + 1) % N
    return ok


@dataclass
class SimResult:
    config: SimConfig
    scenario: ScenarioConfig
    curve: PdrCurve
    ordering: OrderingStats | None
    transmissions: int = 0
    subchannels_used: int = 0
    dropped: int = 0
    random_tx: int = 0
    vehicles: int = 0
    pools: int = 0

    @property
    def pdr90_m(self) -> float:
        return pdr90_distance(self.curve)


class Engine:
    def __init__(self, scenario: ScenarioConfig, cfg: SimConfig, radio: RadioConfig | None = None,
                 table: BlerTable | None = None, mobility=None, pool: PoolConfig | None = None,
                 posindex_init=None):
        cfg.validate()
        self.cfg = cfg
        self.scenario = scenario
        self.radio = radio or RadioConfig()
        self.table = table or BlerTable.logistic()
        self.table.require(CLASS_NAMES)
        self.pool = pool or grid.pool_dims(cfg.rate, cfg.SC)
        streams = np.random.SeedSequence(cfg.seed).spawn(5)
        self.rng_mob, self.rng_shadow, self.rng_sched, self.rng_rx, self.rng_traffic = (
            np.random.default_rng(s) for s in streams)
        if mobility is None:
            mobility = SyntheticMobility(init_scenario(scenario, self.rng_mob))
        self.mobility = mobility
        pop = mobility.at(0)
        self.V = V = len(pop)
        P = self.pool.SF

        self.gen_phase = self.rng_traffic.integers(0, P, V)
        self.lf_offset = self.rng_traffic.integers(0, cfg.lf_every, V)
        self.n_generated = np.zeros(V, dtype=np.int64)
        self.pend = np.zeros(V, dtype=bool)
        self.pend_gen = np.zeros(V, dtype=np.int64)
        self.pend_cls = np.zeros(V, dtype=np.int64)
        self.pend_x = np.zeros(V)
        self.pend_v = np.zeros(V)
        self.pend_rand = np.zeros(V, dtype=bool)
        self.pend_rpi = np.zeros(V, dtype=np.int64)
        self.pend_time = np.full(V, -1, dtype=np.int64)

        self.pi = (np.arange(V) % self.pool.N) if posindex_init is None else np.asarray(posindex_init).copy()
        self.w = self.rng_sched.integers(self.pool.w_min, self.pool.w_max + 1, V)

        self.res_phase = np.zeros(V, dtype=np.int64)
        self.res_sc = np.zeros(V, dtype=np.int64)
        self.res_np = np.zeros(V, dtype=np.int64)
        self.res_counter = np.zeros(V, dtype=np.int64)
        if cfg.scheduler == "sps":
            self.bank = sps.SensingBank(V, self.pool.SC, P)

        self.rec_time = np.full((V, V), -np.inf)
        self.rec_x = np.zeros((V, V))
        self.rec_v = np.zeros((V, V))
        self.rec_ts = np.zeros((V, V))
        self.rec_pi = np.zeros((V, V), dtype=np.int64)
        self.own_ts = np.full(V, np.nan)
        self.own_x = np.zeros(V)
        self.own_v = np.zeros(V)

        self.shadow = ShadowingField(V, self.radio.shadow_sigma_db, self.radio.shadow_decorrelation_m,
                                     self.rng_shadow)
        self.coupling = coupling_matrix(self.pool.SC, self.radio)
        self.noise_mw_sc = 10 ** (self.radio.noise_dbm(1) / 10)
        self.noise_dbm = np.array([self.radio.noise_dbm(1), self.radio.noise_dbm(2)])

        self.curve = PdrCurve(cfg.bin_width_m, cfg.max_distance_m)
        self.ordering = OrderingStats() if cfg.scheduler == "geo" else None
        self.prev_pred = None
        self.stats = dict(transmissions=0, subchannels_used=0, dropped=0, random_tx=0, pools=0)
        self.warmup_ms = int(round(cfg.warmup_s * 1000))
        self.total_ms = self.warmup_ms + int(round(cfg.duration_s * 1000))
        self.trace = None

    # -- helpers -------------------------------------------------------------

    def _np_of(self, cls):
        return np.where(cls == LF, 2, 1)

    @property
    def ring(self) -> bool:
        return self.cfg.topology == "ring"

    def _in_region(self, x):
        if self.ring:
            return np.ones(np.shape(x), dtype=bool)
        m = self.cfg.measure_margin_m
        return (x >= m) & (x <= self.scenario.length_m - m)

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimResult:
        P = self.pool.SF
        prev_laps = self.mobility.at(0).laps.copy()
        last_shadow_t = 0
        for t in range(self.total_ms):
            pop = self.mobility.at(t)
            wrapped = pop.laps != prev_laps
            if wrapped.any() and not self.ring:
                self._forget(np.flatnonzero(wrapped))
                prev_laps = pop.laps.copy()
            if t - last_shadow_t >= self.cfg.shadow_update_ms:
                moved = np.abs(pop.v) * (t - last_shadow_t) / 1000.0
                self.shadow.advance(moved)
                last_shadow_t = t
            if self.cfg.scheduler == "geo" and t % P == 0 and t > 0:
                self._pool_update(t, pop)
            # a slot that coincides with the next generation still carries the old beacon
            self._transmit(t, pop)
            self._generate(t, pop)
        c = self.stats
        return SimResult(self.cfg, self.scenario, self.curve, self.ordering, c["transmissions"],
                         c["subchannels_used"], c["dropped"], c["random_tx"], self.V, c["pools"])

    def _forget(self, idx):
        # a wrapped vehicle re-enters the road with no neighbour knowledge
        self.rec_time[idx, :] = -np.inf
        self.own_ts[idx] = np.nan

    def _pool_update(self, t, pop: Population):
        P = self.pool.SF
        eligible = self.rec_time > t - geo.ELIGIBLE_BEACONS * P
        est = self.rec_x + self.rec_v * (t - self.rec_ts) / 1000.0
        has_own = ~np.isnan(self.own_ts)
        self_x = np.where(has_own, self.own_x + self.own_v * (t - np.nan_to_num(self.own_ts)) / 1000.0, pop.x)
        if t >= self.cfg.posindex_hold_pools * P:
            self.pi = geo.batch_posindex(est, eligible, self.rec_pi, self_x, self.pi, self.pool,
                                         self.cfg.mu, self.cfg.eta,
                                         ring_m=self.scenario.length_m if self.ring else None)
        pred = queue_predecessors(pop.x, self.ring)
        if t >= self.warmup_ms:
            region = self._in_region(pop.x)
            n = max(int(region.sum()), 1)
            ok = posindex_correct(self.pi, pred, self.pool.N)
            changed = 0.0
            if self.prev_pred is not None:
                changed = float((pred != self.prev_pred)[region].sum()) / n
            self.ordering.record(t // P, changed, float((~ok)[region].sum()) / n)
            self.stats["pools"] += 1
        self.prev_pred = pred

    def _generate(self, t, pop: Population):
        P = self.pool.SF
        due = np.flatnonzero((t >= self.gen_phase) & ((t - self.gen_phase) % P == 0))
        if due.size == 0:
            return
        if t >= self.warmup_ms:
            self.stats["dropped"] += int(self.pend[due].sum())
        cls = np.where((self.n_generated[due] + self.lf_offset[due]) % self.cfg.lf_every == 0, LF, HF)
        self.n_generated[due] += 1
        self.pend[due] = True
        self.pend_gen[due] = t
        self.pend_cls[due] = cls
        self.pend_x[due] = pop.x[due]
        self.pend_v[due] = pop.v[due]
        if self.cfg.scheduler == "geo":
            self.w[due] -= 1
            rnd = self.w[due] <= 0
            rv = due[rnd]
            self.w[rv] = self.rng_sched.integers(self.pool.w_min, self.pool.w_max + 1, rv.size)
            self.pend_rand[due] = rnd
            if rv.size:
                center = np.array([grid.random_center(int(p), self.pool) for p in self.pi[rv]])
                off = self.rng_sched.integers(-self.pool.M, self.pool.M + 1, rv.size)
                self.pend_rpi[rv] = (center + off) % self.pool.N
        else:
            nps = self._np_of(cls)
            for i, np_ in zip(due, nps):
                if self.res_np[i] == 0 or self.res_counter[i] <= 0 or np_ > self.res_np[i]:
                    res = sps.select_csr(self.bank.view(i), int(np_), t, self.pool, self.rng_sched)
                    self.res_phase[i], self.res_sc[i] = res.phase, res.sc
                    self.res_np[i], self.res_counter[i] = res.np, res.counter
                    self.pend_time[i] = res.time_ms
                else:
                    k = (self.res_phase[i] - t) % P
                    self.pend_time[i] = t + (k if k else P)

    def _transmit(self, t, pop: Population):
        P = self.pool.SF
        if self.cfg.scheduler == "geo":
            eff = np.where(self.pend_rand, self.pend_rpi, self.pi)
            txs = np.flatnonzero(self.pend & (t > self.pend_gen) & (eff % P == t % P))
        else:
            txs = np.flatnonzero(self.pend & (self.pend_time == t))
        busy = np.zeros(self.V, dtype=bool)
        busy[txs] = True
        if txs.size == 0:
            if self.cfg.scheduler == "sps":
                self.bank.record_subframe(t, self.noise_mw_sc, busy)
            return

        cls = self.pend_cls[txs]
        nps = self._np_of(cls)
        if self.cfg.scheduler == "geo":
            eff_pi = eff[txs]
            r = (eff_pi // P) % (self.pool.SC // nps)
            k = 2 * r * nps
            scs = k % self.pool.SC + (k // self.pool.SC) * nps
            beacon_pi = self.pi[txs]
        else:
            scs = self.res_sc[txs]
            beacon_pi = np.zeros(txs.size, dtype=np.int64)

        T = txs.size
        dx = pop.x[txs, None] - pop.x[None, :]
        if self.ring:
            dx = geo.wrap_offset(dx, self.scenario.length_m)
        dy = pop.y[txs, None] - pop.y[None, :]
        d = np.hypot(dx, dy)
        pr = self.radio.tx_power_dbm - pathloss_db(d, self.radio) - self.shadow.values[txs]
        pr[np.arange(T), txs] = -np.inf
        pr_lin = 10.0 ** (pr / 10.0)

        occ = np.zeros((T, self.pool.SC))
        for j in range(T):
            occ[j, scs[j]:scs[j] + nps[j]] = 1.0
        per_sc = (occ @ self.coupling) / nps[:, None]       # power share leaking into each sub-channel
        W = per_sc @ occ.T                                  # W[a, b]: share of a's power inside b's band
        np.fill_diagonal(W, 0.0)
        interference = W.T @ pr_lin

        u = self.rng_rx.random((T, self.V))
        noise = self.noise_dbm[cls][:, None]

        def bler_of(s):
            out = np.empty_like(s)
            for c, name in enumerate(CLASS_NAMES):
                rows = cls == c
                if rows.any():
                    out[rows] = self.table.bler(name, s[rows])
            return out

        outcome, _, _ = classify(pr, noise, interference, u, bler_of, busy[None, :],
                                 self.radio.sensing_threshold_dbm)
        within = d <= self.cfg.eval_radius_m
        within[np.arange(T), txs] = False

        if t >= self.warmup_ms:
            tx_in = self._in_region(pop.x[txs])
            m = within & tx_in[:, None] & (d < self.cfg.max_distance_m)
            self.curve.add(d[m], outcome[m])
            self.stats["transmissions"] += T
            self.stats["subchannels_used"] += int(nps.sum())
            self.stats["random_tx"] += int(self.pend_rand[txs].sum()) if self.cfg.scheduler == "geo" else 0

        ok = within & (outcome == Outcome.OK)
        rows, cols = np.nonzero(ok)
        if rows.size:
            senders = txs[rows]
            self.rec_time[cols, senders] = t
            self.rec_x[cols, senders] = self.pend_x[senders]
            self.rec_v[cols, senders] = self.pend_v[senders]
            self.rec_ts[cols, senders] = self.pend_gen[senders]
            self.rec_pi[cols, senders] = beacon_pi[rows]
        self.own_x[txs] = self.pend_x[txs]
        self.own_v[txs] = self.pend_v[txs]
        self.own_ts[txs] = self.pend_gen[txs]

        if self.cfg.scheduler == "sps":
            rssi = self.noise_mw_sc + pr_lin.T @ per_sc
            self.bank.record_subframe(t, rssi, busy)
            ph = t % P
            for j in range(T):
                rx = np.flatnonzero(ok[j])
                if rx.size == 0:
                    continue
                a = txs[j]
                lo, n = self.res_sc[a], self.res_np[a]
                # RSRP: received power averaged over the TB's resource blocks
                rsrp = pr[j, rx] - 10 * np.log10(nps[j] * self.radio.rbs_per_subchannel)
                sl = slice(lo, lo + n)
                st = self.bank.sci_time[rx, ph, sl]
                cur = np.where(st < t - sps.HISTORY_MS, -np.inf, self.bank.sci_rsrp[rx, ph, sl])
                self.bank.sci_rsrp[rx, ph, sl] = np.maximum(cur, rsrp[:, None])
                self.bank.sci_time[rx, ph, sl] = t
            self.res_counter[txs] -= 1

        self.pend[txs] = False
        if self.trace is not None:
            self.trace.append((t, txs.copy(), scs.copy(), nps.copy(), outcome.copy(), within.copy()))


def run(scenario: ScenarioConfig, cfg: SimConfig, radio: RadioConfig | None = None,
        table: BlerTable | None = None, **kw) -> SimResult:
    return Engine(scenario, cfg, radio, table, **kw).run()


def write_outputs(result: SimResult, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = [outdir / "pdr_curve.csv"]
    result.curve.write_csv(written[0])
    if result.ordering is not None:
        written.append(outdir / "ordering.csv")
        result.ordering.write_csv(written[-1])
    return written
