"""Experiment configuration: YAML file with full defaulting, plus seeding."""
from __future__ import annotations

import copy
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import grid
from .errors import ConfigError
from .mobility import ScenarioConfig, consistent_length
from .phy import BlerTable, RadioConfig
from .sim import SCHEDULERS, SimConfig

DEFAULT_YAML = """\
# cv2xgeo experiment configuration.  Every key is optional; missing keys take
# the value shown here.

schedulers: [geo]           # any of geo, sps
densities: [60]             # veh/km
rates: [10]                 # packets per second: 10, 20 or 50
duration_s: 60.0            # measured time per run, after the warm-up
warmup_s: 5.0
replications: 1
seed: 0                     # base seed, combined with cell and replication index
outdir: out
bler_table: null            # path to a 'class snr_db bler' table; null = logistic curves

scenario:
  length_m: auto            # auto = shortest ring >= 5000 m holding a multiple of N vehicles
  lanes_per_direction: 3    # highway: 3 lanes per direction
  directions: 2
  lane_width_m: 4.0
  speed_kmh: null           # null = 140 km/h at 60 veh/km, 70 km/h at 120 veh/km
  speed_spread: 0.1         # speeds uniform in [limit*(1-spread), limit]
  jitter: 0.5               # initial longitudinal jitter, fraction of the spacing

radio:
  tx_power_dbm: 23.0
  carrier_hz: 5.9e+9
  channel_mhz: 10.0
  rbs_per_subchannel: 12    # 4 sub-channels of 12 RBs in 10 MHz
  noise_figure_db: 9.0
  sensing_threshold_dbm: -90.4
  shadow_sigma_db: 3.0
  shadow_decorrelation_m: 25.0
  pl_intercept_db: 41.1
  pl_slope_db: 22.7
  pl_far_slope_db: 40.0
  pl_breakpoint_m: null     # null = 4 h^2 f / c
  ibe_mask_db: []           # leakage per sub-channel offset (dB); empty = off

sim:
  SC: 4
  topology: ring
  eval_radius_m: 1000.0
  bin_width_m: 20.0
  max_distance_m: 800.0
  shadow_update_ms: 100
  mu: 10.0                  # PosIndex vote weights mu + eta * distance
  eta: 0.1

analytic:
  grid_step_db: 0.1
  span_sigma: 8.0
  trunc_radius_m: 3000.0
  d_step_m: 10.0
  d_max_m: 800.0
  gap_max_m: 500.0          # validate: bins up to here enter the mean gap
"""

DEFAULTS = yaml.safe_load(DEFAULT_YAML)
SECTIONS = ("scenario", "radio", "sim", "analytic")


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    cfg = _merge(DEFAULTS, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def run_seed(base: int, cell: int, rep: int) -> int:
    """Seed of one run: the base seed xor a stable hash of (cell, replication)."""
    return (int(base) ^ zlib.crc32(f"{cell}:{rep}".encode())) & 0xFFFFFFFF


def _listify(v):
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True)
class Cell:
    index: int
    scheduler: str
    density: float
    rate: int

    @property
    def name(self) -> str:
        return f"{self.scheduler}_d{self.density:g}_r{self.rate}"


@dataclass
class ExperimentSpec:
    schedulers: list
    densities: list
    rates: list
    duration_s: float
    warmup_s: float
    replications: int
    seed: int
    outdir: Path
    bler_table: str | None
    scenario: dict = field(default_factory=dict)
    radio: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    analytic: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        try:
            spec = cls(
                schedulers=[str(s) for s in _listify(d["schedulers"])],
                densities=[float(x) for x in _listify(d["densities"])],
                rates=[int(x) for x in _listify(d["rates"])],
                duration_s=float(d["duration_s"]),
                warmup_s=float(d["warmup_s"]),
                replications=int(d["replications"]),
                seed=int(d["seed"]),
                outdir=Path(d["outdir"]),
                bler_table=d["bler_table"],
                **{s: dict(d[s]) for s in SECTIONS},
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration value: {exc}") from None
        spec.validate()
        return spec

    def validate(self) -> None:
        for s in self.schedulers:
            if s not in SCHEDULERS:
                raise ConfigError(f"unknown scheduler {s!r} (choose from {', '.join(SCHEDULERS)})")
        for r in self.rates:
            grid.pool_dims(r, int(self.sim["SC"]))
        if any(x <= 0 for x in self.densities):
            raise ConfigError("traffic density must be positive")
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive: no metrics would be collected")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not (self.schedulers and self.densities and self.rates):
            raise ConfigError("empty experiment grid")
        self.radio_config()

    def cells(self) -> list[Cell]:
        out = []
        for s in self.schedulers:
            for d in self.densities:
                for r in self.rates:
                    out.append(Cell(len(out), s, d, r))
        return out

    def radio_config(self) -> RadioConfig:
        kw = dict(self.radio)
        try:
            kw["ibe_mask_db"] = tuple(float(x) for x in kw.get("ibe_mask_db") or ())
            # YAML 1.1 reads 5.9e9 (no exponent sign) as a string
            kw = {k: (float(v) if isinstance(v, str) else v) for k, v in kw.items()}
            return RadioConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def bler(self) -> BlerTable:
        return BlerTable.load(self.bler_table) if self.bler_table else BlerTable.logistic()

    def scenario_config(self, density: float, rate: int) -> ScenarioConfig:
        kw = dict(self.scenario)
        if kw.get("length_m") in (None, "auto"):
            N = grid.pool_dims(rate, int(self.sim["SC"])).N
            kw["length_m"] = consistent_length(density, N)
        kw["length_m"] = float(kw["length_m"])
        sc = ScenarioConfig(density_veh_km=density, **kw)
        sc.validate()
        return sc

    def sim_config(self, cell: Cell, rep: int) -> SimConfig:
        known = {f.name for f in fields(SimConfig)}
        kw = {k: v for k, v in self.sim.items() if k in known}
        cfg = SimConfig(scheduler=cell.scheduler, rate=cell.rate, duration_s=self.duration_s,
                        warmup_s=self.warmup_s, seed=run_seed(self.seed, cell.index, rep), **kw)
        cfg.validate()
        return cfg

    def analytic_config(self, density: float, rate: int):
        from .analytic import AnalyticConfig

        a = self.analytic
        try:
            return AnalyticConfig(beta=density / 1000.0, pool=grid.pool_dims(rate, int(self.sim["SC"])),
                                  radio=self.radio_config(), table=self.bler(),
                                  grid_step_db=float(a["grid_step_db"]), span_sigma=float(a["span_sigma"]),
                                  trunc_radius_m=float(a["trunc_radius_m"]))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def distances(self) -> np.ndarray:
        step, top = float(self.analytic["d_step_m"]), float(self.analytic["d_max_m"])
        if step <= 0 or top < step:
            raise ConfigError("analytic distance sweep needs 0 < d_step_m <= d_max_m")
        return np.arange(1, int(round(top / step)) + 1) * step

    def with_(self, **kw) -> "ExperimentSpec":
        return replace(self, **kw)
