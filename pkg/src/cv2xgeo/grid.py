"""Integer arithmetic of the sidelink resource Pool.

A Pool spans one beacon period: ``SF = 1000 / rate`` sub-frames of 1 ms with
``SC`` sub-channels each, ``N = SF * SC`` sub-channels in total.  Every
vehicle owns a PosIndex in ``[0, N)`` that maps to one sub-frame and a first
sub-channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

SUPPORTED_RATES = (10, 20, 50)

# rate -> (M, w_min, w_max)
_RATE_DEFAULTS = {
    10: (5, 5, 15),
    20: (2, 10, 30),
    50: (1, 25, 75),
}


@dataclass(frozen=True)
class PoolConfig:
    rate: int
    SF: int
    SC: int
    N: int
    M: int
    w_min: int
    w_max: int

    def __post_init__(self):
        if self.SF * self.SC != self.N:
            raise ConfigError(f"N={self.N} must equal SF*SC={self.SF * self.SC}")
        if 2 * self.M + 1 > self.N:
            raise ConfigError("random window wider than the Pool")
        if not 1 <= self.w_min <= self.w_max:
            raise ConfigError("need 1 <= w_min <= w_max")

    @property
    def period_ms(self) -> int:
        return self.SF

    @property
    def p_random(self) -> float:
        return 2.0 / (self.w_min + self.w_max)


@dataclass(frozen=True)
class ResourceAssignment:
    sf: int
    sc: int
    np: int

    def channels(self) -> range:
        return range(self.sc, self.sc + self.np)


def pool_dims(rate: int, SC: int = 4, *, M: int | None = None,
              w_min: int | None = None, w_max: int | None = None) -> PoolConfig:
    if rate not in _RATE_DEFAULTS:
        raise ConfigError(f"unsupported packet rate {rate} pps; use one of {SUPPORTED_RATES}")
    if SC < 1:
        raise ConfigError("SC must be >= 1")
    d_M, d_wmin, d_wmax = _RATE_DEFAULTS[rate]
    SF = 1000 // rate
    return PoolConfig(
        rate=rate, SF=SF, SC=SC, N=SF * SC,
        M=d_M if M is None else M,
        w_min=d_wmin if w_min is None else w_min,
        w_max=d_wmax if w_max is None else w_max,
    )


def _check_pi(pi: int, cfg: PoolConfig) -> None:
    if not 0 <= pi < cfg.N:
        raise ValueError(f"PosIndex {pi} outside [0, {cfg.N})")


def subframe_of(pi: int, cfg: PoolConfig) -> int:
    _check_pi(pi, cfg)
    return pi % cfg.SF


def first_subchannel(pi: int, np_: int, cfg: PoolConfig) -> int:
    """First sub-channel used by PosIndex ``pi`` for a packet of ``np_`` sub-channels."""
    _check_pi(pi, cfg)
    if not 1 <= np_ <= cfg.SC:
        raise ValueError(f"packet needs {np_} sub-channels, sub-frame has {cfg.SC}")
    r = (pi // cfg.SF) % (cfg.SC // np_)
    k = 2 * r * np_
    return k % cfg.SC + (k // cfg.SC) * np_


def assignment_of(pi: int, np_: int, cfg: PoolConfig) -> ResourceAssignment:
    return ResourceAssignment(subframe_of(pi, cfg), first_subchannel(pi, np_, cfg), np_)


def random_center(pi: int, cfg: PoolConfig) -> int:
    """Centre PosIndex of the random transmission window of ``pi``."""
    _check_pi(pi, cfg)
    half = -(-cfg.N // 2)
    if cfg.SC % 2 == 0:
        # SF/2 shift keeps the window out of the sub-frames of PI-1, PI, PI+1
        return (pi + half - cfg.SF // 2) % cfg.N
    return (pi + half) % cfg.N


def window_set(center: int, M: int, N: int) -> list[int]:
    """The 2M+1 PosIndex values centred at ``center`` (mod N), in window order."""
    if 2 * M + 1 > N:
        raise ValueError(f"window of {2 * M + 1} exceeds N={N}")
    if not 0 <= center < N:
        raise ValueError(f"center {center} outside [0, {N})")
    return [(center + k) % N for k in range(-M, M + 1)]


def nearest_int(x: float) -> int:
    """Round half away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def delta_pi(distance: float, beta: float, N: int) -> int:
    """Expected PosIndex difference between two vehicles ``distance`` metres apart."""
    if distance < 0:
        raise ValueError("distance must be >= 0")
    if beta <= 0:
        raise ValueError("density must be > 0")
    return nearest_int(beta * distance) % N
