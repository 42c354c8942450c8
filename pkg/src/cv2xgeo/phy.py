"""Link abstraction: pathloss, shadowing, BLER curves and reception outcomes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0


class Outcome(IntEnum):
    OK = 0
    HD = 1
    SEN = 2
    PRO = 3
    COL = 4


@dataclass(frozen=True)
class RadioConfig:
    tx_power_dbm: float = 23.0
    carrier_hz: float = 5.9e9
    channel_mhz: float = 10.0
    rbs_per_subchannel: int = 12
    rb_hz: float = 180e3
    noise_figure_db: float = 9.0
    sensing_threshold_dbm: float = -90.4
    shadow_sigma_db: float = 3.0
    shadow_decorrelation_m: float = 25.0
    # log-distance pathloss: intercept + slope*log10(d) up to the breakpoint,
    # far_slope dB/decade beyond it (continuous at the breakpoint)
    pl_intercept_db: float = 41.1
    pl_slope_db: float = 22.7
    pl_far_slope_db: float = 40.0
    pl_breakpoint_m: float | None = None
    antenna_height_m: float = 1.5
    min_distance_m: float = 1.0
    # attenuation (dB) for sub-channel offsets 1, 2, ...; empty disables leakage
    ibe_mask_db: tuple = field(default_factory=tuple)

    @property
    def breakpoint_m(self) -> float:
        if self.pl_breakpoint_m is not None:
            return self.pl_breakpoint_m
        h = self.antenna_height_m
        return 4.0 * h * h * self.carrier_hz / SPEED_OF_LIGHT

    def noise_dbm(self, np_: int = 1) -> float:
        bw = np_ * self.rbs_per_subchannel * self.rb_hz
        return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bw) + self.noise_figure_db


def pathloss_db(d, radio: RadioConfig):
    """Mean pathloss in dB at distance ``d`` (scalar or array, metres)."""
    d = np.maximum(np.asarray(d, dtype=float), radio.min_distance_m)
    bp = radio.breakpoint_m
    near = radio.pl_intercept_db + radio.pl_slope_db * np.log10(d)
    at_bp = radio.pl_intercept_db + radio.pl_slope_db * math.log10(bp)
    far = at_bp + radio.pl_far_slope_db * np.log10(d / bp)
    out = np.where(d <= bp, near, far)
    return float(out) if out.ndim == 0 else out


def mean_rx_power_dbm(d, radio: RadioConfig):
    return radio.tx_power_dbm - pathloss_db(d, radio)


def in_band_emission(offset: int, radio: RadioConfig) -> float:
    """Leakage (dB, <= 0) into a sub-channel ``offset`` sub-channels away."""
    offset = abs(int(offset))
    if offset == 0:
        return 0.0
    if not radio.ibe_mask_db:
        return -math.inf
    mask = radio.ibe_mask_db
    return float(mask[min(offset, len(mask)) - 1])


def coupling_matrix(SC: int, radio: RadioConfig) -> np.ndarray:
    """Linear power coupling between sub-channels, ``(SC, SC)``."""
    off = np.abs(np.subtract.outer(np.arange(SC), np.arange(SC)))
    db = np.vectorize(lambda o: in_band_emission(o, radio))(off)
    return np.where(np.isfinite(db), 10.0 ** (db / 10.0), 0.0)


class BlerTable:
    """Piecewise-linear BLER(SNR) curves per packet class.

    File format: a header line ``class snr_db bler`` followed by one row per
    point, rows of each class sorted by SNR.
    """

    def __init__(self, curves: dict[str, tuple[np.ndarray, np.ndarray]]):
        self.curves = {}
        for cls, (snr, bler) in curves.items():
            snr = np.asarray(snr, dtype=float)
            bler = np.clip(np.asarray(bler, dtype=float), 0.0, 1.0)
            if snr.ndim != 1 or snr.shape != bler.shape or snr.size == 0:
                raise ConfigError(f"BLER curve {cls!r} is malformed")
            if np.any(np.diff(snr) <= 0):
                raise ConfigError(f"BLER curve {cls!r}: SNR points must increase")
            if np.any(np.diff(bler) > 0):
                raise ConfigError(f"BLER curve {cls!r}: BLER must not increase with SNR")
            self.curves[cls] = (snr, bler)

    @classmethod
    def logistic(cls, midpoints=None, slope: float = 2.0,
                 snr_range=(-20.0, 30.0), step: float = 0.1) -> "BlerTable":
        midpoints = midpoints or {"HF": 5.0, "LF": 3.5}
        n = int(round((snr_range[1] - snr_range[0]) / step)) + 1
        snr = np.linspace(snr_range[0], snr_range[1], n)
        return cls({k: (snr, 1.0 / (1.0 + np.exp(slope * (snr - s0))))
                    for k, s0 in midpoints.items()})

    @classmethod
    def constant(cls, value: float, classes=("HF", "LF")) -> "BlerTable":
        snr = np.array([0.0])
        return cls({k: (snr, np.array([value])) for k in classes})

    @classmethod
    def step(cls, thresholds: dict[str, float], eps: float = 1e-6) -> "BlerTable":
        """BLER 1 below the threshold and 0 above it."""
        return cls({k: (np.array([s0 - eps, s0 + eps]), np.array([1.0, 0.0]))
                    for k, s0 in thresholds.items()})

    def bler(self, cls: str, snr_db):
        try:
            snr, bler = self.curves[cls]
        except KeyError:
            raise ConfigError(f"BLER table has no curve for class {cls!r}") from None
        return np.interp(snr_db, snr, bler)

    def require(self, classes) -> None:
        missing = [c for c in classes if c not in self.curves]
        if missing:
            raise ConfigError(f"BLER table missing classes: {', '.join(missing)}")

    @classmethod
    def load(cls, path) -> "BlerTable":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"BLER table file not found: {path}")
        lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
        if not lines or lines[0] != ["class", "snr_db", "bler"]:
            raise ConfigError(f"{path}: header must be 'class snr_db bler'")
        pts: dict[str, list[tuple[float, float]]] = {}
        for n, row in enumerate(lines[1:], start=2):
            if len(row) != 3:
                raise ConfigError(f"{path}:{n}: expected 3 columns")
            try:
                pts.setdefault(row[0], []).append((float(row[1]), float(row[2])))
            except ValueError:
                raise ConfigError(f"{path}:{n}: non-numeric value") from None
        return cls({k: (np.array([p[0] for p in v]), np.array([p[1] for p in v]))
                    for k, v in pts.items()})

    def save(self, path) -> None:
        rows = ["class snr_db bler"]
        for k, (snr, bler) in self.curves.items():
            rows += [f"{k} {s:.4f} {b:.8g}" for s, b in zip(snr, bler)]
        Path(path).write_text("\n".join(rows) + "\n")


class ShadowingField:
    """Symmetric per-link log-normal shadowing with exponential decorrelation.

    Each link keeps a zero-mean Gaussian value (dB).  After both ends have
    moved a total distance ``dx`` the value becomes
    ``rho*old + sqrt(1-rho^2)*sigma*z`` with ``rho = exp(-dx/d_corr)``.
    """

    def __init__(self, n: int, sigma_db: float, decorrelation_m: float,
                 rng: np.random.Generator):
        self.n = n
        self.sigma = sigma_db
        self.dcorr = decorrelation_m
        self.rng = rng
        self.values = self._symmetric(self._normal(n)) * sigma_db

    def _normal(self, n):
        return self.rng.standard_normal((n, n))

    @staticmethod
    def _symmetric(z):
        upper = np.triu(z, 1)
        return upper + upper.T

    def advance(self, moved_m: np.ndarray) -> None:
        """``moved_m``: per-vehicle distance travelled since the last update."""
        if self.sigma == 0:
            return
        dx = np.add.outer(moved_m, moved_m)
        rho = np.exp(-dx / self.dcorr) if self.dcorr > 0 else np.zeros_like(dx)
        innov = self._symmetric(self._normal(self.n))
        self.values = rho * self.values + np.sqrt(1.0 - rho * rho) * self.sigma * innov

    def link(self, a: int, b: int) -> float:
        return float(self.values[a, b])


def classify(pr_dbm, noise_dbm, interference_mw, u, bler_of, rx_busy, sensing_threshold_dbm):
    """Vectorised reception outcome.

    Precedence: HD (receiver busy) > SEN (power at or below the sensing
    threshold) > PRO (decode failure at the SNR) > COL (decode failure caused
    by the interference).  A single uniform ``u`` drives both decode stages,
    so a COL is a packet that would have survived the noise alone.

    Returns ``(outcome, snr_db, sinr_db)``.
    """
    pr_dbm = np.asarray(pr_dbm, dtype=float)
    noise_mw = 10.0 ** (np.asarray(noise_dbm, dtype=float) / 10.0)
    snr = pr_dbm - np.asarray(noise_dbm, dtype=float)
    with np.errstate(divide="ignore"):
        sinr = pr_dbm - 10.0 * np.log10(noise_mw + interference_mw)
    out = np.full(np.broadcast(pr_dbm, u, rx_busy).shape, Outcome.OK, dtype=np.int8)
    out[u < bler_of(sinr)] = Outcome.COL
    out[u < bler_of(snr)] = Outcome.PRO
    out[pr_dbm <= sensing_threshold_dbm] = Outcome.SEN
    out[np.broadcast_to(rx_busy, out.shape)] = Outcome.HD
    return out, snr, sinr


@dataclass
class RxOutcome:
    outcome: Outcome
    pr_dbm: float
    interference_dbm: float
    snr_db: float
    sinr_db: float


def receive(pr_dbm: float, interferers_dbm, packet_class: str, np_: int, radio: RadioConfig,
            table: BlerTable, rng: np.random.Generator, rx_transmitting: bool = False) -> RxOutcome:
    """Outcome of one packet at one receiver given co-slot interferer powers."""
    i_mw = float(np.sum(10.0 ** (np.asarray(interferers_dbm, dtype=float) / 10.0)))
    u = rng.random()
    out, snr, sinr = classify(np.array([pr_dbm]), radio.noise_dbm(np_), i_mw, np.array([u]),
                              lambda s: table.bler(packet_class, s),
                              np.array([rx_transmitting]), radio.sensing_threshold_dbm)
    with np.errstate(divide="ignore"):
        i_db = 10.0 * math.log10(i_mw) if i_mw > 0 else -math.inf
    return RxOutcome(Outcome(int(out[0])), pr_dbm, i_db, float(snr[0]), float(sinr[0]))
