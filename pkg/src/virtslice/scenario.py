"""Domain model: region, base stations, SP demands, allocations.

Scenario files are YAML with the unit in every field name. Values are kept in
file units on the dataclasses (so a load/dump round trip is exact) and the SI
quantities the engine needs are exposed as properties.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Malformed or invalid scenario input."""


class ValidationError(ScenarioError):
    """A type invariant does not hold; ``field`` names the offending quantity."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ValidationError(field_name, message)


def _finite(x, field_name: str) -> float:
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise ValidationError(field_name, f"expected a number, got {x!r}") from None
    _require(math.isfinite(v), field_name, "must be finite")
    return v


@dataclass(frozen=True)
class Region:
    width_km: float
    height_km: float
    origin_x_km: float = 0.0
    origin_y_km: float = 0.0

    def __post_init__(self):
        _require(self.width_km > 0, "region.width_km", "must be > 0")
        _require(self.height_km > 0, "region.height_km", "must be > 0")

    @property
    def area(self) -> float:
        return self.width_km * self.height_km

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin_x_km, self.origin_y_km
        return x0, y0, x0 + self.width_km, y0 + self.height_km

    def contains(self, x: float, y: float, tol: float = 1e-12) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol


@dataclass(frozen=True)
class BaseStation:
    id: str
    rp_id: str
    x_km: float
    y_km: float
    tx_power_dbm: float
    bandwidth_mhz: float
    coverage_radius_km: float
    lease_cost: float

    def __post_init__(self):
        _require(math.isfinite(self.tx_power_dbm), f"{self.id}.tx_power_dbm", "must be finite")
        _require(self.bandwidth_mhz > 0, f"{self.id}.bandwidth_mhz", "must be > 0")
        _require(self.coverage_radius_km > 0, f"{self.id}.coverage_radius_km", "must be > 0")
        _require(self.lease_cost >= 0, f"{self.id}.lease_cost", "must be >= 0")

    @property
    def location(self) -> tuple[float, float]:
        return (self.x_km, self.y_km)

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)

    @property
    def mu(self) -> float:
        """Rate of the exponential fading power, 1 / transmit power."""
        return 1.0 / self.tx_power_w

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6

    @property
    def q(self) -> float:
        return self.coverage_radius_km


@dataclass(frozen=True)
class PropagationModel:
    pathloss_exponent: float
    noise_psd_dbm_per_hz: float

    def __post_init__(self):
        _require(self.pathloss_exponent > 2, "propagation.pathloss_exponent", "must be > 2")
        _require(math.isfinite(self.noise_psd_dbm_per_hz), "propagation.noise_psd_dbm_per_hz",
                 "must be finite")

    @property
    def alpha(self) -> float:
        return self.pathloss_exponent

    @property
    def noise_psd_w_per_hz(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_per_hz)

    def noise_power(self, bandwidth_hz: float) -> float:
        return self.noise_psd_w_per_hz * bandwidth_hz


@dataclass(frozen=True)
class ServiceDemand:
    sp_id: str
    min_rate_kbps: float
    min_coverage_prob: float
    ue_intensity_per_km2: float
    priority_rank: int

    def __post_init__(self):
        _require(self.min_rate_kbps > 0, f"{self.sp_id}.min_rate_kbps", "must be > 0")
        _require(0 < self.min_coverage_prob <= 1, f"{self.sp_id}.min_coverage_prob",
                 "beta must lie in (0, 1]")
        _require(self.ue_intensity_per_km2 > 0, f"{self.sp_id}.ue_intensity_per_km2", "must be > 0")
        _require(self.priority_rank >= 1, f"{self.sp_id}.priority_rank", "must be a positive integer")

    @property
    def kappa(self) -> float:
        """Minimum rate in bit/s."""
        return self.min_rate_kbps * 1e3

    @property
    def beta(self) -> float:
        return self.min_coverage_prob

    @property
    def lam(self) -> float:
        return self.ue_intensity_per_km2


@dataclass(frozen=True)
class Scenario:
    region: Region
    base_stations: tuple[BaseStation, ...]
    propagation: PropagationModel
    demands: tuple[ServiceDemand, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        object.__setattr__(self, "demands", tuple(self.demands))
        _require(len(self.base_stations) >= 1, "base_stations", "need at least one base station")
        _require(len(self.demands) >= 1, "demands", "need at least one demand")
        ids = [b.id for b in self.base_stations]
        _require(len(set(ids)) == len(ids), "base_stations.id", "ids must be unique")
        sp_ids = [d.sp_id for d in self.demands]
        _require(len(set(sp_ids)) == len(sp_ids), "demands.sp_id", "ids must be unique")
        ranks = [d.priority_rank for d in self.demands]
        _require(len(set(ranks)) == len(ranks), "demands.priority_rank", "ranks must be unique")
        for b in self.base_stations:
            _require(self.region.contains(b.x_km, b.y_km), f"{b.id}.location",
                     "base station lies outside the region")

    @property
    def n_bs(self) -> int:
        return len(self.base_stations)

    @property
    def n_sp(self) -> int:
        return len(self.demands)

    @property
    def locations(self) -> np.ndarray:
        return np.array([b.location for b in self.base_stations], dtype=float)

    def with_intensity(self, lam: float) -> "Scenario":
        """Copy with every SP's UE intensity set to ``lam``."""
        demands = tuple(replace(d, ue_intensity_per_km2=float(lam)) for d in self.demands)
        return replace(self, demands=demands)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "region": asdict(self.region),
            "propagation": asdict(self.propagation),
            "base_stations": [asdict(b) for b in self.base_stations],
            "demands": [asdict(d) for d in self.demands],
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_BS_KEYS = ("id", "rp_id", "x_km", "y_km", "tx_power_dbm", "bandwidth_mhz",
            "coverage_radius_km", "lease_cost")
_SP_KEYS = ("sp_id", "min_rate_kbps", "min_coverage_prob", "ue_intensity_per_km2", "priority_rank")


def _section(data: dict, key: str, kind=dict):
    if key not in data:
        raise ValidationError(key, "missing section")
    val = data[key]
    if not isinstance(val, kind):
        raise ValidationError(key, f"expected {kind.__name__}")
    return val


def _pick(entry: dict, keys: Sequence[str], where: str) -> dict:
    if not isinstance(entry, dict):
        raise ValidationError(where, "expected a mapping")
    unknown = set(entry) - set(keys)
    if unknown:
        raise ValidationError(where, f"unknown fields {sorted(unknown)}")
    missing = [k for k in keys if k not in entry]
    if missing:
        raise ValidationError(where, f"missing fields {missing}")
    return entry


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a mapping")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError("format_version", f"unsupported version {version!r}")

    reg = _section(data, "region")
    region = Region(
        width_km=_finite(reg.get("width_km"), "region.width_km"),
        height_km=_finite(reg.get("height_km"), "region.height_km"),
        origin_x_km=_finite(reg.get("origin_x_km", 0.0), "region.origin_x_km"),
        origin_y_km=_finite(reg.get("origin_y_km", 0.0), "region.origin_y_km"),
    )
    prop = _section(data, "propagation")
    propagation = PropagationModel(
        pathloss_exponent=_finite(prop.get("pathloss_exponent"), "propagation.pathloss_exponent"),
        noise_psd_dbm_per_hz=_finite(prop.get("noise_psd_dbm_per_hz"),
                                     "propagation.noise_psd_dbm_per_hz"),
    )

    stations = []
    for i, raw in enumerate(_section(data, "base_stations", list)):
        e = _pick(raw, _BS_KEYS, f"base_stations[{i}]")
        bid = str(e["id"])
        stations.append(BaseStation(
            id=bid, rp_id=str(e["rp_id"]),
            x_km=_finite(e["x_km"], f"{bid}.x_km"),
            y_km=_finite(e["y_km"], f"{bid}.y_km"),
            tx_power_dbm=_finite(e["tx_power_dbm"], f"{bid}.tx_power_dbm"),
            bandwidth_mhz=_finite(e["bandwidth_mhz"], f"{bid}.bandwidth_mhz"),
            coverage_radius_km=_finite(e["coverage_radius_km"], f"{bid}.coverage_radius_km"),
            lease_cost=_finite(e["lease_cost"], f"{bid}.lease_cost"),
        ))

    demands = []
    for i, raw in enumerate(_section(data, "demands", list)):
        e = _pick(raw, _SP_KEYS, f"demands[{i}]")
        sid = str(e["sp_id"])
        rank = e["priority_rank"]
        if isinstance(rank, bool) or not isinstance(rank, int):
            raise ValidationError(f"{sid}.priority_rank", "must be a positive integer")
        demands.append(ServiceDemand(
            sp_id=sid,
            min_rate_kbps=_finite(e["min_rate_kbps"], f"{sid}.min_rate_kbps"),
            min_coverage_prob=_finite(e["min_coverage_prob"], f"{sid}.min_coverage_prob"),
            ue_intensity_per_km2=_finite(e["ue_intensity_per_km2"], f"{sid}.ue_intensity_per_km2"),
            priority_rank=rank,
        ))

    return Scenario(region=region, base_stations=tuple(stations), propagation=propagation,
                    demands=tuple(demands), name=str(data.get("name", "")))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"parse error in {path}: {exc}") from exc
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=False)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(scenario))


def sample_ppp(intensity: float, region: Region, seed) -> np.ndarray:
    """Homogeneous PPP on ``region``; returns an ``(n, 2)`` array of km coordinates."""
    if intensity < 0:
        raise ValueError("intensity must be >= 0")
    rng = np.random.default_rng(seed)
    n = rng.poisson(intensity * region.area)
    x0, y0, x1, y1 = region.bounds
    pts = np.empty((n, 2))
    pts[:, 0] = rng.uniform(x0, x1, n)
    pts[:, 1] = rng.uniform(y0, y1, n)
    return pts


@dataclass
class Allocation:
    """Lease vector ``x`` (n_bs,) and slice matrix ``delta`` (n_bs, n_sp)."""

    x: np.ndarray
    delta: np.ndarray
    tol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=int).reshape(-1)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta.ndim != 2 or self.delta.shape[0] != self.x.size:
            raise ValidationError("allocation", "delta must have shape (n_bs, n_sp)")

    @classmethod
    def empty(cls, n_bs: int, n_sp: int) -> "Allocation":
        return cls(np.zeros(n_bs, dtype=int), np.zeros((n_bs, n_sp)))

    @property
    def leased(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.x)]

    def cost(self, scenario: Scenario) -> float:
        total = 0.0
        for b, bs in enumerate(scenario.base_stations):
            if self.x[b]:
                total += bs.lease_cost
        return total

    def violations(self) -> list[str]:
        out = []
        if np.any((self.x != 0) & (self.x != 1)):
            out.append("x must be binary")
        if np.any(self.delta < -self.tol):
            out.append("delta must be >= 0")
        load = self.delta.sum(axis=1)
        for b in np.flatnonzero(load > 1 + self.tol):
            out.append(f"bs {b}: total slice {load[b]:.6g} exceeds 1")
        for b in np.flatnonzero((self.x == 0) & (load > self.tol)):
            out.append(f"bs {b}: sliced but not leased")
        for b in np.flatnonzero((self.x == 1) & (load <= self.tol)):
            out.append(f"bs {b}: leased with zero total slice")
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ValidationError("allocation", "; ".join(bad))

    def cleaned(self) -> "Allocation":
        """Unlease stations whose total slice is zero; clip round-off in delta."""
        delta = np.where(np.abs(self.delta) <= self.tol, 0.0, self.delta)
        delta = np.clip(delta, 0.0, 1.0)
        x = (delta.sum(axis=1) > self.tol).astype(int)
        return Allocation(x, delta, tol=self.tol)

    def to_dict(self, scenario: Scenario | None = None) -> dict:
        d = {"x": [int(v) for v in self.x], "delta": [[float(v) for v in row] for row in self.delta]}
        if scenario is not None:
            d["bs_ids"] = [b.id for b in scenario.base_stations]
            d["sp_ids"] = [s.sp_id for s in scenario.demands]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        return cls(np.array(d["x"], dtype=int), np.array(d["delta"], dtype=float))
