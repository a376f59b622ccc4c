"""World model: hospitals, arrival profile, service model, travel model.

A scenario is loaded from a single YAML file. Schema (all rates per hour,
distances in km, durations in hours unless stated otherwise):

    name: demo-1d
    horizon_hours: 1000.0
    warmup_hours: 100.0          # optional, default 10% of horizon
    map:
      kind: line                 # line | euclidean | network
      length: 10.0               # line: patient positions drawn on [0, length]
      region: [[0, 0], [10, 10]] # euclidean: uniform rectangle
      velocity_kmh: 40.0         # line / euclidean
      network_file: edges.csv    # network: from_node,to_node,travel_minutes[,m0..m23]
      origin_nodes: [n1, n2]     # network: where patients appear
      traffic: false             # apply hour-of-day multipliers when present
    arrivals:
      base_rate: 1.0
      hourly_scale: [..24 values..]   # optional; normalized to mean 1
      empirical_locations: points.csv # optional; overrides uniform sampling
    service:
      kind: exponential          # exponential | kde
      rate: 2.0                  # exponential: services/hour/server
      samples_file: stents.txt   # kde: one duration in MINUTES per line
      bandwidth: null            # kde: optional, default Scott's rule
    hospitals:
      - id: 0
        location: 0.0            # scalar (line), [x, y] (euclidean), node id (network)
        servers: 2
        queue_buffer: 0          # omit or null = unbounded
        default_strategy: A      # A | R
        service: {...}           # optional per-hospital override of `service`
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .stochastic import KdeFit, kde_fit, stream, PROCESS_LOCATIONS


class ScenarioError(ValueError):
    """Raised when a scenario file fails schema or value validation."""


@dataclass(frozen=True)
class ServiceModel:
    kind: str                          # "exponential" | "kde"
    rate: float | None = None          # services/hour/server (exponential)
    samples: tuple | None = None       # service durations in minutes (kde)
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind == "exponential":
            if self.rate is None or self.rate <= 0:
                raise ScenarioError(f"service.rate must be positive, got {self.rate}")
        elif self.kind == "kde":
            if self.samples is None or len(self.samples) < 2:
                raise ScenarioError("service.samples needs at least 2 values for a KDE fit")
        else:
            raise ScenarioError(f"unknown service.kind {self.kind!r}")

    def kde(self) -> KdeFit:
        return kde_fit(np.asarray(self.samples), bandwidth=self.bandwidth)

    @property
    def mean_hours(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.rate
        return float(np.mean(self.samples)) / 60.0

    @property
    def effective_rate(self) -> float:
        """Services per hour per server (1 / mean service time)."""
        return 1.0 / self.mean_hours

    def sample_hours(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=size)
        return self.kde().sample(rng, size=size) / 60.0


@dataclass(frozen=True)
class HospitalSpec:
    id: int
    location: object                   # float, (x, y) tuple, or node id string
    servers: int
    queue_buffer: int | None = None    # None = unbounded waiting room
    service: ServiceModel | None = None
    default_strategy: str = "A"

    def __post_init__(self):
        if self.servers < 1:
            raise ScenarioError(f"hospital {self.id}: servers must be >= 1")
        if self.queue_buffer is not None and self.queue_buffer < 0:
            raise ScenarioError(f"hospital {self.id}: queue_buffer must be >= 0")
        if self.default_strategy not in ("A", "R"):
            raise ScenarioError(f"hospital {self.id}: default_strategy must be A or R")

    @property
    def capacity(self) -> float:
        """Redirect threshold N = servers + buffer; inf when the buffer is unbounded."""
        if self.queue_buffer is None:
            return math.inf
        return self.servers + self.queue_buffer


@dataclass(frozen=True)
class ArrivalProfile:
    base_rate: float
    hourly_scale: tuple = tuple([1.0] * 24)
    empirical_locations: tuple | None = None   # sequence of origin points / node ids

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ScenarioError(f"arrivals.base_rate must be positive, got {self.base_rate}")
        if len(self.hourly_scale) != 24:
            raise ScenarioError("arrivals.hourly_scale must have 24 entries")
        if any(s < 0 for s in self.hourly_scale):
            raise ScenarioError("arrivals.hourly_scale entries must be non-negative")
        mean = sum(self.hourly_scale) / 24.0
        if mean <= 0:
            raise ScenarioError("arrivals.hourly_scale must not be all zero")
        # Normalize so base_rate stays the overall mean rate.
        object.__setattr__(self, "hourly_scale", tuple(s / mean for s in self.hourly_scale))

    def rate_at(self, t_hours: float) -> float:
        return self.base_rate * self.hourly_scale[int(t_hours) % 24]

    @property
    def peak_rate(self) -> float:
        return self.base_rate * max(self.hourly_scale)


@dataclass(frozen=True)
class TravelModel:
    kind: str                           # "line" | "euclidean" | "network"
    velocity_kmh: float | None = None
    length: float | None = None         # line map extent
    region: tuple | None = None         # euclidean ((x0,y0),(x1,y1))
    edges: dict | None = None           # (from, to) -> (minutes, multipliers|None)
    origin_nodes: tuple | None = None
    traffic: bool = False

    def __post_init__(self):
        if self.kind in ("line", "euclidean"):
            if self.velocity_kmh is None or self.velocity_kmh <= 0:
                raise ScenarioError("map.velocity_kmh must be positive")
        elif self.kind == "network":
            if not self.edges:
                raise ScenarioError("network map needs an edge table")
        else:
            raise ScenarioError(f"unknown map.kind {self.kind!r}")

    def travel_hours(self, origin, destination, t_hours: float = 0.0) -> float:
        if self.kind == "line":
            return abs(float(origin) - float(destination)) / self.velocity_kmh
        if self.kind == "euclidean":
            dx = origin[0] - destination[0]
            dy = origin[1] - destination[1]
            return math.hypot(dx, dy) / self.velocity_kmh
        key = (origin, destination)
        if key not in self.edges:
            raise ScenarioError(f"no travel edge from {origin!r} to {destination!r}")
        minutes, multipliers = self.edges[key]
        if self.traffic and multipliers is not None:
            minutes = minutes * multipliers[int(t_hours) % 24]
        return minutes / 60.0


@dataclass(frozen=True)
class Scenario:
    hospitals: tuple
    arrivals: ArrivalProfile
    travel: TravelModel
    horizon: float
    warmup: float = None  # type: ignore[assignment]  # default 10% of horizon
    name: str = "scenario"
    count_in_transit: bool = False  # whether in-transit patients count toward capacity

    def __post_init__(self):
        if not self.hospitals:
            raise ScenarioError("scenario needs at least one hospital")
        ids = [h.id for h in self.hospitals]
        if len(set(ids)) != len(ids):
            raise ScenarioError("hospital ids must be unique")
        if self.horizon <= 0:
            raise ScenarioError("horizon_hours must be positive")
        if self.warmup is None:
            object.__setattr__(self, "warmup", 0.1 * self.horizon)
        if not (0 <= self.warmup < self.horizon):
            raise ScenarioError("need horizon > warmup >= 0")

    @property
    def k(self) -> int:
        return len(self.hospitals)

    def service_of(self, hospital: HospitalSpec) -> ServiceModel:
        if hospital.service is None:
            raise ScenarioError(f"hospital {hospital.id} has no service model")
        return hospital.service

    @property
    def rho(self) -> float:
        """System load ratio lambda / sum_j C_j mu_j."""
        total = sum(h.servers * self.service_of(h).effective_rate for h in self.hospitals)
        return self.arrivals.base_rate / total

    def with_overrides(self, base_rate: float | None = None, service_rate: float | None = None,
                       velocity_kmh: float | None = None, horizon: float | None = None,
                       warmup: float | None = None, servers: list | None = None,
                       queue_buffers: list | None = None, traffic: bool | None = None,
                       hospital_ids: list | None = None) -> "Scenario":
        """Derived scenario with selected parameters replaced (used by sweeps)."""
        hospitals = list(self.hospitals)
        if hospital_ids is not None:
            hospitals = [h for h in hospitals if h.id in set(hospital_ids)]
            if not hospitals:
                raise ScenarioError("hospital_ids selects no hospitals")
        if servers is not None:
            hospitals = [replace(h, servers=int(c)) for h, c in zip(hospitals, servers, strict=True)]
        if queue_buffers is not None:
            hospitals = [replace(h, queue_buffer=(None if q is None else int(q)))
                         for h, q in zip(hospitals, queue_buffers, strict=True)]
        if service_rate is not None:
            hospitals = [replace(h, service=ServiceModel(kind="exponential", rate=service_rate))
                         for h in hospitals]
        arrivals = self.arrivals if base_rate is None else replace(self.arrivals, base_rate=base_rate)
        travel = self.travel
        if velocity_kmh is not None:
            travel = replace(travel, velocity_kmh=velocity_kmh)
        if traffic is not None:
            travel = replace(travel, traffic=traffic)
        new_horizon = self.horizon if horizon is None else horizon
        new_warmup = warmup if warmup is not None else (
            self.warmup if horizon is None else 0.1 * new_horizon)
        return replace(self, hospitals=tuple(hospitals), arrivals=arrivals, travel=travel,
                       horizon=new_horizon, warmup=new_warmup)


# ---------------------------------------------------------------------------
# Config file I/O


def _parse_service(block: dict, base_dir: Path) -> ServiceModel:
    kind = block.get("kind", "exponential")
    if kind == "exponential":
        return ServiceModel(kind="exponential", rate=block.get("rate"))
    if kind == "kde":
        if "samples_file" in block:
            path = base_dir / block["samples_file"]
            samples = tuple(float(line) for line in path.read_text().split())
        else:
            samples = tuple(float(v) for v in block.get("samples", ()))
        return ServiceModel(kind="kde", samples=samples, bandwidth=block.get("bandwidth"))
    raise ScenarioError(f"unknown service.kind {kind!r}")


def _read_network(path: Path) -> dict:
    edges = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "from_node":
                continue
            frm, to, minutes, *mults = row
            multipliers = tuple(float(m) for m in mults) if mults else None
            if multipliers is not None and len(multipliers) != 24:
                raise ScenarioError(f"edge {frm}->{to}: expected 24 hour multipliers")
            edges[(frm, to)] = (float(minutes), multipliers)
    return edges


def _parse_location(raw, kind: str):
    if kind == "line":
        return float(raw)
    if kind == "euclidean":
        return (float(raw[0]), float(raw[1]))
    return str(raw)


def load_scenario(path) -> Scenario:
    """Load and validate a scenario YAML file; warns when the load ratio is >= 1."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    base_dir = path.parent
    return scenario_from_dict(raw, base_dir=base_dir)


def scenario_from_dict(raw: dict, base_dir: Path = Path(".")) -> Scenario:
    for key in ("horizon_hours", "map", "arrivals", "hospitals"):
        if key not in raw:
            raise ScenarioError(f"missing required field {key!r}")

    map_block = raw["map"]
    kind = map_block.get("kind", "line")
    edges = None
    if kind == "network":
        if "network_file" in map_block:
            edges = _read_network(base_dir / map_block["network_file"])
        else:
            edges = {(str(e["from"]), str(e["to"])): (float(e["minutes"]),
                     tuple(e["multipliers"]) if e.get("multipliers") else None)
                     for e in map_block.get("edges", ())}
    region = map_block.get("region")
    travel = TravelModel(
        kind=kind,
        velocity_kmh=map_block.get("velocity_kmh"),
        length=map_block.get("length"),
        region=tuple(tuple(p) for p in region) if region else None,
        edges=edges,
        origin_nodes=tuple(str(n) for n in map_block["origin_nodes"]) if "origin_nodes" in map_block else None,
        traffic=bool(map_block.get("traffic", False)),
    )

    arr_block = raw["arrivals"]
    empirical = None
    if "empirical_locations" in arr_block:
        pts = read_patient_records(base_dir / arr_block["empirical_locations"])
        if kind == "network":
            empirical = tuple(r["node_id"] for r in pts)
        elif kind == "line":
            empirical = tuple(r["x"] for r in pts)
        else:
            empirical = tuple((r["x"], r["y"]) for r in pts)
    arrivals = ArrivalProfile(
        base_rate=arr_block.get("base_rate", 0.0),
        hourly_scale=tuple(arr_block["hourly_scale"]) if "hourly_scale" in arr_block else tuple([1.0] * 24),
        empirical_locations=empirical,
    )

    default_service = _parse_service(raw["service"], base_dir) if "service" in raw else None
    hospitals = []
    for block in raw["hospitals"]:
        service = _parse_service(block["service"], base_dir) if "service" in block else default_service
        if service is None:
            raise ScenarioError(f"hospital {block.get('id')}: no service model (set top-level `service`)")
        qb = block.get("queue_buffer")
        hospitals.append(HospitalSpec(
            id=int(block["id"]),
            location=_parse_location(block["location"], kind),
            servers=int(block["servers"]),
            queue_buffer=None if qb is None else int(qb),
            service=service,
            default_strategy=block.get("default_strategy", "A"),
        ))

    scenario = Scenario(
        hospitals=tuple(hospitals),
        arrivals=arrivals,
        travel=travel,
        horizon=float(raw["horizon_hours"]),
        warmup=float(raw["warmup_hours"]) if "warmup_hours" in raw else None,
        name=str(raw.get("name", "scenario")),
        count_in_transit=bool(raw.get("count_in_transit", False)),
    )
    if scenario.rho >= 1:
        warnings.warn(f"scenario {scenario.name!r}: load ratio rho = {scenario.rho:.3f} >= 1; "
                      "the system will overcrowd under all-accept strategies", stacklevel=2)
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    def service_block(m: ServiceModel):
        if m.kind == "exponential":
            return {"kind": "exponential", "rate": m.rate}
        return {"kind": "kde", "samples": list(m.samples), "bandwidth": m.bandwidth}

    map_block = {"kind": s.travel.kind, "traffic": s.travel.traffic}
    if s.travel.velocity_kmh is not None:
        map_block["velocity_kmh"] = s.travel.velocity_kmh
    if s.travel.length is not None:
        map_block["length"] = s.travel.length
    if s.travel.region is not None:
        map_block["region"] = [list(p) for p in s.travel.region]
    if s.travel.edges is not None:
        map_block["edges"] = [
            {"from": frm, "to": to, "minutes": minutes,
             **({"multipliers": list(mult)} if mult else {})}
            for (frm, to), (minutes, mult) in sorted(s.travel.edges.items())]
    if s.travel.origin_nodes is not None:
        map_block["origin_nodes"] = list(s.travel.origin_nodes)

    arr_block = {"base_rate": s.arrivals.base_rate, "hourly_scale": list(s.arrivals.hourly_scale)}
    out = {
        "name": s.name,
        "horizon_hours": s.horizon,
        "warmup_hours": s.warmup,
        "count_in_transit": s.count_in_transit,
        "map": map_block,
        "arrivals": arr_block,
        "hospitals": [
            {"id": h.id,
             "location": (list(h.location) if isinstance(h.location, tuple) else h.location),
             "servers": h.servers,
             "queue_buffer": h.queue_buffer,
             "default_strategy": h.default_strategy,
             "service": service_block(s.service_of(h))}
            for h in s.hospitals],
    }
    return out


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(s), sort_keys=False))


# ---------------------------------------------------------------------------
# Patient locations and synthetic records


def sample_locations(scenario: Scenario, rng: np.random.Generator, size: int) -> list:
    """Draw patient origin locations per the scenario's spatial model."""
    arr, travel = scenario.arrivals, scenario.travel
    if arr.empirical_locations is not None:
        idx = rng.integers(0, len(arr.empirical_locations), size=size)
        return [arr.empirical_locations[i] for i in idx]
    if travel.kind == "line":
        length = travel.length if travel.length is not None else _default_extent(scenario)
        return list(rng.uniform(0.0, length, size=size))
    if travel.kind == "euclidean":
        if travel.region is None:
            raise ScenarioError("euclidean map needs `region` or empirical locations")
        (x0, y0), (x1, y1) = travel.region
        xs = rng.uniform(x0, x1, size=size)
        ys = rng.uniform(y0, y1, size=size)
        return [(float(x), float(y)) for x, y in zip(xs, ys)]
    if travel.origin_nodes is None:
        raise ScenarioError("network map needs `origin_nodes` or empirical locations")
    idx = rng.integers(0, len(travel.origin_nodes), size=size)
    return [travel.origin_nodes[i] for i in idx]


def _default_extent(scenario: Scenario) -> float:
    locs = [float(h.location) for h in scenario.hospitals]
    return max(locs) - min(locs) if len(locs) > 1 else max(locs[0], 1.0)


def nearest_hospital(scenario: Scenario, origin, t_hours: float = 0.0) -> int:
    times = [(scenario.travel.travel_hours(origin, h.location, t_hours), h.id)
             for h in scenario.hospitals]
    return min(times)[1]


def generate_synthetic_patients(scenario: Scenario, count: int, seed: int) -> list:
    """Synthetic patient record table: list of dicts with timestamp, origin, and
    the ground-truth nearest hospital. Deterministic per seed; hour-of-day
    frequencies follow the scenario's hourly scale factors."""
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = stream(seed, PROCESS_LOCATIONS)
    n_hours = int(math.ceil(scenario.horizon))
    weights = np.array([scenario.arrivals.hourly_scale[h % 24] for h in range(n_hours)])
    # clip hours extending past a fractional horizon
    for h in range(n_hours):
        weights[h] *= min(scenario.horizon - h, 1.0)
    weights = weights / weights.sum()
    hours = rng.choice(n_hours, size=count, p=weights)
    offsets = rng.uniform(0.0, 1.0, size=count)
    stamps = np.minimum(hours + offsets, np.nextafter(scenario.horizon, 0.0))
    origins = sample_locations(scenario, rng, count)
    records = []
    for ts, origin in zip(stamps, origins):
        if isinstance(origin, tuple):
            x, y, node = origin[0], origin[1], ""
        elif isinstance(origin, str):
            x, y, node = math.nan, math.nan, origin
        else:
            x, y, node = float(origin), 0.0, ""
        records.append({
            "timestamp_hours": float(ts),
            "x": x, "y": y, "node_id": node,
            "nearest_hospital": nearest_hospital(scenario, origin, float(ts)),
        })
    records.sort(key=lambda r: r["timestamp_hours"])
    return records


def write_patient_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_hours", "x", "y", "node_id"])
        for r in records:
            writer.writerow([repr(r["timestamp_hours"]), r["x"], r["y"], r.get("node_id", "")])


def read_patient_records(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append({
                "timestamp_hours": float(row["timestamp_hours"]),
                "x": float(row["x"]) if row.get("x") not in (None, "", "nan") else math.nan,
                "y": float(row["y"]) if row.get("y") not in (None, "", "nan") else math.nan,
                "node_id": row.get("node_id", "") or "",
            })
    return records


def record_origin(record: dict, kind: str):
    if kind == "network":
        return record["node_id"]
    if kind == "line":
        return record["x"]
    return (record["x"], record["y"])
