"""Closed-form PDR of the geo-based scheduler for perfectly ordered traffic.

Vehicles sit single file every 1/beta metres.  A packet is delivered if it
suffers none of four mutually exclusive errors: half duplex (HD), received
power under the sensing threshold (SEN), propagation (PRO) and collision
(COL).  Received powers are Gaussian in dB (log-normal shadowing) and are
handled as probability masses on a uniform dB lattice.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, ndtr

from .errors import ConfigError
from .grid import PoolConfig
from .phy import BlerTable, RadioConfig, pathloss_db

CLASSES = ("HF", "LF")
CLASS_NP = {"HF": 1, "LF": 2}


@dataclass
class DbDistribution:
    """Probability mass on the lattice ``(start + j) * step`` dB."""

    start: int
    step: float
    p: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return (self.start + np.arange(len(self.p))) * self.step

    @property
    def total(self) -> float:
        return float(self.p.sum())

    def normalized(self) -> "DbDistribution":
        t = self.total
        if t <= 0:
            raise ValueError("cannot normalise an empty distribution")
        return DbDistribution(self.start, self.step, self.p / t)

    def expect(self, fn) -> float:
        return float(np.dot(self.p, fn(self.values)))

    def minus(self, other: "DbDistribution") -> "DbDistribution":
        """Distribution of ``X - Y`` for independent ``X`` (self) and ``Y``."""
        if not math.isclose(self.step, other.step):
            raise ValueError("lattices differ")
        p = np.correlate(self.p, other.p, mode="full")
        start = self.start - (other.start + len(other.p) - 1)
        return DbDistribution(start, self.step, p)

    @classmethod
    def from_cdf(cls, cdf, lo: float, hi: float, step: float) -> "DbDistribution":
        """Exact cell masses of a distribution given by ``cdf`` over ``[lo, hi]``."""
        j0 = int(math.floor(lo / step + 0.5))
        j1 = int(math.ceil(hi / step - 0.5))
        edges = (np.arange(j0, j1 + 2) - 0.5) * step
        c = cdf(edges)
        return cls(j0, step, np.clip(np.diff(c), 0.0, None))


@dataclass(frozen=True)
class AnalyticConfig:
    beta: float                                 # vehicles per metre
    pool: PoolConfig
    radio: RadioConfig = field(default_factory=RadioConfig)
    table: BlerTable = field(default_factory=BlerTable.logistic)
    p_lf: float = 0.2
    grid_step_db: float = 0.1
    grid_range_db: tuple = (-40.0, 60.0)        # SNR/SINR support
    span_sigma: float = 8.0                     # support of each shadowed power
    trunc_radius_m: float = 3000.0

    def __post_init__(self):
        if self.pool.SC != 4:
            raise ConfigError("the analytic model covers SC = 4 only")
        if self.beta <= 0:
            raise ConfigError("traffic density must be positive")
        if not 0 <= self.p_lf <= 1:
            raise ConfigError("p_lf must be a probability")
        if self.grid_step_db <= 0 or self.grid_range_db[0] >= self.grid_range_db[1]:
            raise ConfigError("invalid dB grid")
        if self.trunc_radius_m < 1.0 / self.beta:
            raise ConfigError("truncation radius shorter than the vehicle spacing: no interferer")
        self.table.require(CLASSES)

    @property
    def p_ran(self) -> float:
        return self.pool.p_random

    @property
    def p_nor(self) -> float:
        return 1.0 - self.p_ran

    @property
    def p_hf(self) -> float:
        return 1.0 - self.p_lf

    @property
    def K(self) -> int:
        k, r = divmod(self.pool.N, self.pool.SC // 2)
        if r:
            raise ConfigError("N / floor(SC/2) is not integral")
        return k

    def p_class(self, cls: str) -> float:
        return self.p_lf if cls == "LF" else self.p_hf


def in_window(dpi, center, M: int, N: int):
    """Whether ``dpi`` lies in the 2M+1 PosIndex values centred at ``center`` (mod N)."""
    off = (np.asarray(dpi) - center) % N
    return (off <= M) | (off >= N - M)


def _in_any(dpi, centers, M, N):
    return np.logical_or.reduce([in_window(dpi, c, M, N) for c in centers])


def _exact(dpi, values, N):
    return np.isin(np.asarray(dpi) % N, [v % N for v in values])


# -- half duplex ------------------------------------------------------------

def delta_hd_dpi(dpi, cfg: AnalyticConfig):
    """HD error probability as a function of the PosIndex difference."""
    K, M, N = cfg.K, cfg.pool.M, cfg.pool.N
    w = 2 * M + 1
    same_sf = _exact(dpi, (0, K // 2, K, 3 * K // 2), N)
    quarter = _any_quarter(dpi, cfg)
    whole = _in_any(dpi, (0, K // 2, K, 3 * K // 2), M, N)
    nor = np.where(same_sf, cfg.p_nor, np.where(quarter, cfg.p_ran / w, 0.0))
    ran = np.where(quarter, cfg.p_nor / w, np.where(whole, cfg.p_ran / w, 0.0))
    return cfg.p_ran * ran + cfg.p_nor * nor


def _any_quarter(dpi, cfg):
    K = cfg.K
    return _in_any(dpi, (K // 4, 3 * K // 4, 5 * K // 4, 7 * K // 4), cfg.pool.M, cfg.pool.N)


def delta_pi(d, cfg: AnalyticConfig):
    """Vectorised :func:`grid.delta_pi` (non-negative distances)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be >= 0")
    return np.floor(cfg.beta * d + 0.5).astype(np.int64) % cfg.pool.N


def delta_hd(d_tr, cfg: AnalyticConfig):
    dpi = delta_pi(d_tr, cfg)
    return delta_hd_dpi(dpi, cfg)


# -- sensing and propagation ------------------------------------------------

def mean_rx_dbm(d, cfg: AnalyticConfig):
    return cfg.radio.tx_power_dbm - pathloss_db(d, cfg.radio)


def delta_sen(d_tr, cfg: AnalyticConfig):
    margin = mean_rx_dbm(d_tr, cfg) - cfg.radio.sensing_threshold_dbm
    return 0.5 * (1.0 - erf(margin / (cfg.radio.shadow_sigma_db * math.sqrt(2.0))))


def _gauss_cdf(mu, sigma):
    if sigma == 0:
        return lambda x: (np.asarray(x) >= mu).astype(float)
    return lambda x: ndtr((np.asarray(x) - mu) / sigma)


def rx_distribution(d, cfg: AnalyticConfig, truncate: bool = True) -> DbDistribution:
    """Received power (dBm) of the wanted signal, optionally conditioned on P_r > P_SEN.

    The returned mass is *not* renormalised: it sums to ``1 - delta_sen``.
    """
    mu = float(mean_rx_dbm(d, cfg))
    s = cfg.radio.shadow_sigma_db
    cdf = _gauss_cdf(mu, s)
    lo, hi = mu - cfg.span_sigma * s, mu + cfg.span_sigma * s
    if truncate:
        thr = cfg.radio.sensing_threshold_dbm
        lo = max(lo, thr)
        hi = max(hi, thr)
        cdf0 = cdf
        cdf = lambda x: np.clip(cdf0(np.maximum(x, thr)) - cdf0(thr), 0.0, None)
    return DbDistribution.from_cdf(cdf, lo, hi, cfg.grid_step_db)


def noise_dbm(cls: str, cfg: AnalyticConfig) -> float:
    return cfg.radio.noise_dbm(CLASS_NP[cls])


def _bler_fn(cls, cfg, offset_db=0.0):
    lo, hi = cfg.grid_range_db
    return lambda v: cfg.table.bler(cls, np.clip(v - offset_db, lo, hi))


def delta_pro_class(d_tr, cls: str, cfg: AnalyticConfig) -> float:
    rx = rx_distribution(d_tr, cfg)
    kept = rx.total
    if kept <= 0:
        return 0.0
    return min(max(rx.expect(_bler_fn(cls, cfg, noise_dbm(cls, cfg))) / kept, 0.0), 1.0)


def delta_pro(d_tr, cfg: AnalyticConfig) -> float:
    return sum(cfg.p_class(c) * delta_pro_class(d_tr, c, cfg) for c in CLASSES)


# -- collisions -------------------------------------------------------------

def interference_plus_noise(d_ir, cls: str, cfg: AnalyticConfig) -> DbDistribution:
    """Distribution of 10 log10(P_i + N0) in dBm, P_i the shadowed interferer power."""
    mu = float(mean_rx_dbm(d_ir, cfg))
    s = cfg.radio.shadow_sigma_db
    n0 = noise_dbm(cls, cfg)
    n0_mw = 10 ** (n0 / 10)
    base = _gauss_cdf(mu, s)

    def cdf(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            pi = 10 * np.log10(10 ** (y / 10) - n0_mw)
        return np.where(y > n0, base(np.nan_to_num(pi, nan=-np.inf)), 0.0)

    lo = max(n0, 10 * math.log10(10 ** ((mu - cfg.span_sigma * s) / 10) + n0_mw))
    hi = 10 * math.log10(10 ** ((mu + cfg.span_sigma * s) / 10) + n0_mw)
    return DbDistribution.from_cdf(cdf, lo, hi, cfg.grid_step_db)


def sinr_distribution(d_tr, d_ir, cls: str, cfg: AnalyticConfig) -> DbDistribution:
    """SINR (dB) of the wanted packet given one co-channel interferer, P_r > P_SEN."""
    rx = rx_distribution(d_tr, cfg).normalized()
    return rx.minus(interference_plus_noise(d_ir, cls, cfg))


def p_int(d_tr, d_ir, cls: str, cfg: AnalyticConfig, pro: float | None = None) -> float:
    """Probability that one interferer turns a decodable packet into a loss."""
    if rx_distribution(d_tr, cfg).total <= 0:
        return 0.0
    p_sinr = sinr_distribution(d_tr, d_ir, cls, cfg).expect(_bler_fn(cls, cfg))
    if pro is None:
        pro = delta_pro_class(d_tr, cls, cfg)
    if pro >= 1.0:
        return 0.0
    return min(max((p_sinr - pro) / (1.0 - pro), 0.0), 1.0)


def p_sim(dpi, mode: str, cls: str, cfg: AnalyticConfig):
    """Probability that an interferer ``dpi`` PosIndex away uses the same sub-channel."""
    K, M, N = cfg.K, cfg.pool.M, cfg.pool.N
    w = 2 * M + 1
    pn, pr, plf = cfg.p_nor, cfg.p_ran, cfg.p_lf
    dpi = np.asarray(dpi)
    win = lambda c: in_window(dpi, c, M, N)
    if mode == "nor" and cls == "HF":
        cases = [(_exact(dpi, (0,), N), pn), (_exact(dpi, (K,), N), pn * plf),
                 (win(5 * K // 4), pr / w), (win(K // 4), pr * plf / w)]
    elif mode == "nor" and cls == "LF":
        cases = [(_exact(dpi, (0, K), N), pn), (win(K // 4) | win(5 * K // 4), pr / w)]
    elif mode == "ran" and cls == "HF":
        # the random window of the transmitter is centred 3K/4 ahead of its
        # PosIndex, so any normal packet there hits it and LF packets K further
        # away overlap it too
        cases = [(win(3 * K // 4), pn / w), (win(7 * K // 4), pn * plf / w),
                 (win(0), pr / w), (win(K), pr * plf / w)]
    elif mode == "ran" and cls == "LF":
        cases = [(win(3 * K // 4) | win(7 * K // 4), pn / w), (win(0) | win(K), pr / w)]
    else:
        raise ValueError(f"unknown mode/class {mode}/{cls}")
    out = np.zeros(dpi.shape)
    for mask, val in reversed(cases):        # first matching branch wins
        out = np.where(mask, val, out)
    return out


def interferers(d_tr, cfg: AnalyticConfig):
    """``(d_ti, d_ir, dpi_ti)`` of the single-file interferers around the pair.

    The transmitter sits at 0 and the receiver at ``d_tr``; the lattice slot
    holding the receiver is left out.
    """
    spacing = 1.0 / cfg.beta
    kmax = int(math.floor(cfg.trunc_radius_m * cfg.beta + 1e-9))
    k = np.concatenate([np.arange(-kmax, 0), np.arange(1, kmax + 1)])
    x = k * spacing
    keep = np.abs(x - d_tr) >= spacing / 2
    x, k = x[keep], k[keep]
    d_ti = np.abs(x)
    return d_ti, np.abs(x - d_tr), delta_pi(d_ti, cfg)


def delta_col(d_tr, cfg: AnalyticConfig) -> float:
    d_ti, d_ir, dpi = interferers(d_tr, cfg)
    total = 0.0
    for cls in CLASSES:
        pro = delta_pro_class(d_tr, cls, cfg)
        sims = {m: p_sim(dpi, m, cls, cfg) for m in ("nor", "ran")}
        need = np.flatnonzero((sims["nor"] > 0) | (sims["ran"] > 0))
        pint = np.zeros(len(dpi))
        for j in need:
            pint[j] = p_int(d_tr, d_ir[j], cls, cfg, pro)
        col = {m: 1.0 - np.prod(1.0 - sims[m] * pint) for m in sims}
        total += cfg.p_class(cls) * (cfg.p_nor * col["nor"] + cfg.p_ran * col["ran"])
    return float(total)


@dataclass(frozen=True)
class AnalyticPoint:
    d_m: float
    delta_hd: float
    delta_sen: float
    delta_pro: float
    delta_col: float

    @property
    def pdr(self) -> float:
        return ((1 - self.delta_sen) * (1 - self.delta_pro) * (1 - self.delta_hd)
                * (1 - self.delta_col))


def evaluate(d_tr, cfg: AnalyticConfig) -> AnalyticPoint:
    if d_tr <= 0:
        raise ValueError("distance must be positive")
    return AnalyticPoint(float(d_tr), float(delta_hd(d_tr, cfg)), float(delta_sen(d_tr, cfg)),
                         delta_pro(d_tr, cfg), delta_col(d_tr, cfg))


def pdr(d_tr, cfg: AnalyticConfig) -> float:
    return evaluate(d_tr, cfg).pdr


def compose_pdr(delta_sen, delta_pro, delta_hd, delta_col):
    return (1 - delta_sen) * (1 - delta_pro) * (1 - delta_hd) * (1 - delta_col)


def curve(distances, cfg: AnalyticConfig) -> list[AnalyticPoint]:
    return [evaluate(d, cfg) for d in distances]


def write_curve(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d_m", "delta_hd", "delta_sen", "delta_pro", "delta_col", "pdr"])
        for p in points:
            w.writerow([f"{p.d_m:g}", *(f"{v:.6f}" for v in
                        (p.delta_hd, p.delta_sen, p.delta_pro, p.delta_col, p.pdr))])
