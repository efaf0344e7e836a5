"""Scenario configuration.

Every tunable of a run lives in one nested dataclass tree. Scenario files are
YAML documents mirroring that tree; unknown keys are rejected with the dotted
path of the offending field, and the canonical JSON form of the tree is hashed
so every output can carry the exact configuration it came from.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

# (use_ris, use_prediction, use_cmab) for the eight compared configurations.
CONFIGURATIONS: dict[int, tuple[bool, bool, bool]] = {
    1: (False, False, False),
    2: (True, False, False),
    3: (False, True, False),
    4: (True, True, False),
    5: (False, False, True),
    6: (True, False, True),
    7: (False, True, True),
    8: (True, True, True),
}

CONFIGURATION_NAMES: dict[int, str] = {
    1: "LTM",
    2: "LTM+RIS",
    3: "LTM+LMMSE",
    4: "LTM+LMMSE+RIS",
    5: "LTM+CMAB",
    6: "LTM+CMAB+RIS",
    7: "LTM+CMAB+LMMSE",
    8: "LTM+CMAB+LMMSE+RIS",
}


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` is the dotted path at fault."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class GeometryConfig:
    n_cells: int = 7
    inter_site_distance_m: float = 200.0
    reuse_factor: int = 3
    # cell-relative panel positions
    ris_offsets_m: tuple[tuple[float, float], ...] = ((-40.0, -40.0), (40.0, 40.0))
    zone_side_m: float = 40.0
    subzones_per_side: int = 4
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5
    ris_height_m: float = 10.0
    # None -> inter_site_distance / sqrt(3)
    hex_circumradius_m: float | None = None


@dataclass(frozen=True)
class MobilityConfig:
    speed_min_kmh: float = 10.0
    speed_max_kmh: float = 18.0
    segment_min_s: float = 10.0
    segment_max_s: float = 30.0


@dataclass(frozen=True)
class ChannelConfig:
    carrier_ghz: float = 10.0
    bandwidth_mhz: float = 200.0
    tx_power_dbm: float = 25.0
    noise_psd_dbm_hz: float = -174.0
    element_gain_dbi: float = 3.0
    beamwidth_deg: float = 65.0
    max_attenuation_db: float = 30.0
    downtilt_deg: float = 6.0
    shadowing_std_db: float = 4.0
    shadowing_decorrelation_m: float = 37.0
    fading_oscillators: int = 32
    obstruction_db: float = 20.0
    # "owner": only the RIS-owning site's links are obstructed; "all": every link
    obstruction_scope: str = "owner"
    ssb_period_ms: float = 20.0
    max_spectral_efficiency: float = 7.4063


@dataclass(frozen=True)
class RisConfig:
    n_elements: int = 1600
    # physical elements per phase-controlled tile (1600 x 8 = 12800 elements)
    tile_size: int = 8
    strategy: str = "sequential"
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    tol: float = 1e-4
    max_iters: int = 5000
    patience: int = 10
    seed: int = 0
    map_resolution_m: float = 0.5
    cache_dir: str = ".ltmsim_cache"


@dataclass(frozen=True)
class PredictionConfig:
    l1_window: int = 5
    l3_coeff: float = 0.5
    order: int = 8
    forgetting: float = 0.99
    ridge: float = 1e-6
    horizon_s: float = 20.0
    adaptive_horizon: bool = False
    candidate_horizons_s: tuple[float, ...] = ()


@dataclass(frozen=True)
class BanditConfig:
    kernel_order: int = 1
    window: int = 500
    ridge: float = 1.0
    exploration: float = 0.5
    avg_samples: int = 10
    reward_window_ms: float = 100.0
    alpha_hof: float = 0.1
    alpha_ho: float = 0.8
    alpha_pp: float = 0.9


@dataclass(frozen=True)
class HoConfig:
    offset_db: float = 3.0
    ttt_ms: float = 100.0
    n310: int = 6
    qout_db: float = -8.0
    qin_db: float = -6.0
    interruption_ms: float = 5.0
    rlf_recovery_ms: float = 200.0
    sensitivity_dbm: float = -95.0
    n_prepared: int = 4
    prep_hysteresis_db: float = 3.0
    report_delay_ms: float = 10.0
    decision_delay_ms: float = 10.0
    pp_window_ms: float = 1000.0
    use_ris: bool = False
    use_prediction: bool = False
    use_cmab: bool = False

    def with_configuration(self, index: int) -> "HoConfig":
        use_ris, use_prediction, use_cmab = CONFIGURATIONS[index]
        return dataclasses.replace(
            self, use_ris=use_ris, use_prediction=use_prediction, use_cmab=use_cmab
        )


@dataclass(frozen=True)
class SimConfig:
    tick_ms: float = 10.0
    duration_s: float = 60.0
    n_ues: int = 50
    n_replicates: int = 10
    master_seed: int = 1
    configurations: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    workers: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    ris: RisConfig = field(default_factory=RisConfig)
    prediction: PredictionConfig = field(default_factory=PredictionConfig)
    bandit: BanditConfig = field(default_factory=BanditConfig)
    handover: HoConfig = field(default_factory=HoConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **sections: Any) -> "ScenarioConfig":
        """Return a copy with fields overridden, e.g. ``replace(sim={"n_ues": 5})``."""
        data = self.to_dict()
        for name, values in sections.items():
            if name not in data:
                raise ConfigError(name, "unknown section")
            data[name].update(values)
        return from_dict(data)


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value: Any, annotation: str, path: str) -> Any:
    ann = annotation.replace(" ", "")
    if ann.startswith("tuple"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        if ann == "tuple[tuple[float,float],...]":
            out = []
            for i, pair in enumerate(value):
                if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                    raise ConfigError(f"{path}[{i}]", "expected an [x, y] pair")
                out.append((float(pair[0]), float(pair[1])))
            return tuple(out)
        inner = ann[len("tuple[") : -len(",...]")]
        return tuple(_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value))
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if ann in ("float", "float|None"):
        if value is None and ann == "float|None":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {annotation}")


def _build(cls: type, data: Any, path: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(sub, "unknown key")
        f = fields[key]
        if f.default_factory is not dataclasses.MISSING:
            kwargs[key] = _build(f.default_factory, value, sub)
        else:
            kwargs[key] = _coerce(value, str(f.type), sub)
    return cls(**kwargs)


def from_dict(data: dict[str, Any]) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "")
    validate(cfg)
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    return from_dict(data)


def dump_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def validate(cfg: ScenarioConfig) -> None:
    g, c, r, p, b, h, s = (
        cfg.geometry, cfg.channel, cfg.ris, cfg.prediction, cfg.bandit, cfg.handover, cfg.sim,
    )
    checks = [
        ("geometry.inter_site_distance_m", g.inter_site_distance_m > 0, "must be positive"),
        ("geometry.n_cells", g.n_cells in (1, 7), "only 1 or 7 cells are supported"),
        ("geometry.reuse_factor", g.reuse_factor in (1, 3), "must be 1 or 3"),
        ("geometry.zone_side_m", g.zone_side_m > 0, "must be positive"),
        ("geometry.subzones_per_side", g.subzones_per_side >= 1, "must be >= 1"),
        ("mobility.speed_min_kmh", 0 < cfg.mobility.speed_min_kmh <= cfg.mobility.speed_max_kmh, "must be in (0, speed_max]"),
        ("mobility.segment_min_s", 0 < cfg.mobility.segment_min_s <= cfg.mobility.segment_max_s, "must be in (0, segment_max]"),
        ("channel.carrier_ghz", c.carrier_ghz > 0, "must be positive"),
        ("channel.fading_oscillators", c.fading_oscillators >= 1, "must be >= 1"),
        ("channel.obstruction_scope", c.obstruction_scope in ("owner", "all"), "must be 'owner' or 'all'"),
        ("channel.ssb_period_ms", c.ssb_period_ms > 0, "must be positive"),
        ("ris.n_elements", r.n_elements >= 16 and r.n_elements % 16 == 0, "must be a positive multiple of 16"),
        ("ris.tile_size", r.tile_size >= 1, "must be >= 1"),
        ("ris.strategy", r.strategy in ("sequential", "simultaneous"), "must be 'sequential' or 'simultaneous'"),
        ("ris.tol", r.tol > 0, "must be positive"),
        ("ris.max_iters", r.max_iters >= 1, "must be >= 1"),
        ("prediction.l3_coeff", 0 < p.l3_coeff <= 1, "must be in (0, 1]"),
        ("prediction.l1_window", p.l1_window >= 1, "must be >= 1"),
        ("prediction.order", p.order >= 1, "must be >= 1"),
        ("prediction.forgetting", 0 < p.forgetting < 1, "must be in (0, 1)"),
        ("prediction.horizon_s", p.horizon_s > 0, "must be positive"),
        ("bandit.kernel_order", b.kernel_order == 1, "only order 1 is implemented"),
        ("bandit.window", b.window >= 1, "must be >= 1"),
        ("bandit.ridge", b.ridge > 0, "must be positive"),
        ("bandit.alpha_hof", 0 < b.alpha_hof <= 1, "must be in (0, 1]"),
        ("bandit.alpha_ho", 0 < b.alpha_ho <= 1, "must be in (0, 1]"),
        ("bandit.alpha_pp", 0 < b.alpha_pp <= 1, "must be in (0, 1]"),
        ("handover.offset_db", h.offset_db >= 0, "must be >= 0"),
        ("handover.n310", h.n310 >= 1, "must be >= 1"),
        ("handover.n_prepared", h.n_prepared >= 1, "must be >= 1"),
        ("sim.tick_ms", s.tick_ms > 0, "must be positive"),
        ("sim.duration_s", s.duration_s > 0, "must be positive"),
        ("sim.n_ues", s.n_ues >= 1, "must be >= 1"),
        ("sim.n_replicates", s.n_replicates >= 1, "must be >= 1"),
        ("sim.configurations", all(k in CONFIGURATIONS for k in s.configurations) and len(s.configurations) > 0,
         "entries must be in 1..8"),
        ("sim.workers", s.workers >= 1, "must be >= 1"),
    ]
    for path, ok, msg in checks:
        if not ok:
            raise ConfigError(path, msg)
    ssb_ticks = c.ssb_period_ms / s.tick_ms
    if abs(ssb_ticks - round(ssb_ticks)) > 1e-9:
        raise ConfigError("channel.ssb_period_ms", "must be a multiple of sim.tick_ms")

