"""
Synthetic bus-fleet GPS generator.

Buses leave the depot (arc length 0) one headway apart and follow a route
polyline. Speed is the base speed scaled by every congestion zone active at
the bus's position and time of day. Fixes carry Gaussian position noise in
meters and are dropped with a fixed probability; every random draw comes
from a stream keyed on (seed, bus, fix index).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gsmt_errors import ConfigError, ContractError
from gsmt_geo import haversine_m, meters_to_degrees
from gsmt_ingest import GpsRecord

logger = logging.getLogger("gsmt.synth")

ANCHOR = (3.14, 101.69)  # Kuala Lumpur
ROUTE_KINDS = ("loop", "corridor")
SECONDS_PER_DAY = 86_400.0
# 2024-01-01 00:00 at UTC+8; simulation time 0 is local midnight
DEFAULT_START_EPOCH = 1_704_038_400.0


@dataclass
class RouteSpec:
    waypoints: np.ndarray
    arc: np.ndarray
    closed: bool = False

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[Tuple[float, float]], closed: bool = False) -> "RouteSpec":
        pts = np.asarray(waypoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ContractError(f"route needs at least 2 (lat, lon) waypoints, got shape {pts.shape}")
        seg = haversine_m(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1])
        if np.any(seg <= 0):
            raise ContractError(f"route has coincident consecutive waypoints at segment {int(np.argmin(seg))}")
        return cls(pts, np.concatenate([[0.0], np.cumsum(seg)]), closed)

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def position_at(self, s: float) -> Tuple[float, float]:
        """(lat, lon) at arc length ``s`` meters, linear within a segment"""
        s = min(max(s, 0.0), self.length)
        i = int(np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.arc) - 2))
        frac = (s - self.arc[i]) / (self.arc[i + 1] - self.arc[i])
        p = self.waypoints[i] + frac * (self.waypoints[i + 1] - self.waypoints[i])
        return float(p[0]), float(p[1])

    def arc_position(self, distance: float) -> float:
        """Arc length reached after driving ``distance`` meters from the depot"""
        if self.closed:
            return math.fmod(distance, self.length)
        s = math.fmod(distance, 2.0 * self.length)
        return 2.0 * self.length - s if s > self.length else s


@dataclass
class CongestionZone:
    """Speed multiplier on a stretch of route (fractions of its length) during a daily time window (seconds)"""

    arc_from: float
    arc_to: float
    multiplier: float
    t_start: float
    t_end: float

    def active(self, arc_fraction: float, time_of_day: float) -> bool:
        return self.arc_from <= arc_fraction < self.arc_to and self.t_start <= time_of_day < self.t_end


def default_congestion() -> List[CongestionZone]:
    return [
        CongestionZone(0.30, 0.50, 0.4, 7 * 3600.0, 10 * 3600.0),
        CongestionZone(0.60, 0.75, 0.5, 16 * 3600.0, 19 * 3600.0),
    ]


@dataclass
class FleetSpec:
    n_buses: int = 5
    headway: float = 600.0
    base_speed: float = 25.0  # km/h
    congestion_zones: List[CongestionZone] = field(default_factory=default_congestion)
    gps_noise_sigma: float = 15.0  # meters
    dropout_prob: float = 0.05
    fix_interval: float = 30.0
    seed: int = 42
    sim_dt: float = 1.0
    start_epoch: float = DEFAULT_START_EPOCH

    def validate(self):
        if self.n_buses < 1:
            raise ConfigError(f"synth.n_buses must be >= 1, got {self.n_buses}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"synth.dropout_prob must be in [0, 1), got {self.dropout_prob}")
        if self.base_speed <= 0 or self.headway < 0 or self.gps_noise_sigma < 0:
            raise ConfigError("synth.base_speed must be > 0; synth.headway and synth.gps_noise_sigma must be >= 0")
        for zone in self.congestion_zones:
            if not 0.0 < zone.multiplier <= 1.0:
                raise ConfigError(f"synth congestion multiplier must be in (0, 1], got {zone.multiplier}")
        if self.sim_dt <= 0 or self.fix_interval <= 0:
            raise ConfigError("synth.sim_dt and synth.fix_interval must be > 0")
        ratio = self.fix_interval / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(f"synth.fix_interval ({self.fix_interval}) must be a multiple of synth.sim_dt ({self.sim_dt})")

    def speed_at(self, arc_fraction: float, t: float) -> float:
        """Noiseless speed in km/h at a route position and simulation time"""
        time_of_day = math.fmod(t, SECONDS_PER_DAY)
        v = self.base_speed
        for zone in self.congestion_zones:
            if zone.active(arc_fraction, time_of_day):
                v *= zone.multiplier
        return v


def make_route(kind: str = "loop", n_waypoints: int = 12, extent_km: float = 20.0, seed: int = 42) -> RouteSpec:
    """Smooth random polyline of about ``extent_km`` near Kuala Lumpur.

    A loop is a jittered circle of that circumference closed back onto its
    first waypoint; a corridor is a gently turning walk starting at the anchor.
    """
    if kind not in ROUTE_KINDS:
        raise ContractError(f"route kind must be one of {ROUTE_KINDS}, got {kind!r}")
    if n_waypoints < 2:
        raise ContractError(f"route needs at least 2 waypoints, got {n_waypoints}")
    if extent_km <= 0:
        raise ContractError(f"extent_km must be > 0, got {extent_km}")
    rng = np.random.default_rng(seed)
    extent_m = extent_km * 1000.0

    if kind == "loop":
        radius = extent_m / (2.0 * math.pi)
        theta = 2.0 * math.pi * np.arange(n_waypoints) / n_waypoints
        r = radius * (1.0 + 0.1 * rng.uniform(-1.0, 1.0, n_waypoints))
        dlat, dlon = meters_to_degrees(r * np.cos(theta), r * np.sin(theta), ANCHOR[0])
        pts = np.column_stack([ANCHOR[0] + dlat, ANCHOR[1] + dlon])
        return RouteSpec.from_waypoints(np.vstack([pts, pts[:1]]), closed=True)

    step = extent_m / (n_waypoints - 1)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    east, north = [0.0], [0.0]
    for _ in range(n_waypoints - 1):
        east.append(east[-1] + step * math.cos(heading))
        north.append(north[-1] + step * math.sin(heading))
        heading += rng.uniform(-math.pi / 6, math.pi / 6)
    dlat, dlon = meters_to_degrees(np.array(east), np.array(north), ANCHOR[0])
    return RouteSpec.from_waypoints(np.column_stack([ANCHOR[0] + dlat, ANCHOR[1] + dlon]))


def bus_id(index: int) -> str:
    return f"bus{index + 1:02d}"


def simulate(route: RouteSpec, fleet: FleetSpec, duration: float) -> List[GpsRecord]:
    """Deterministic fleet run over [0, duration] seconds.

    Every bus reports ``floor(duration / fix_interval) + 1`` fixes before
    dropout; before its departure it waits at the depot with speed 0.
    """
    fleet.validate()
    if route.length <= 0:
        raise ContractError("route has zero length")
    if duration <= 0:
        raise ContractError(f"duration must be > 0, got {duration}")
    if duration <= fleet.headway * fleet.n_buses:
        logger.warning(f"Duration {duration}s does not exceed headway x buses ({fleet.headway * fleet.n_buses}s); late buses barely move")

    n_fixes = int(math.floor(duration / fleet.fix_interval + 1e-9)) + 1
    sub_steps = int(round(fleet.fix_interval / fleet.sim_dt))
    records: List[GpsRecord] = []
    for i in range(fleet.n_buses):
        depart = i * fleet.headway
        distance = 0.0
        kept = 0
        for k in range(n_fixes):
            t = k * fleet.fix_interval
            s = route.arc_position(distance)
            speed = fleet.speed_at(s / route.length, t) if t >= depart else 0.0
            lat, lon = route.position_at(s)

            rng = np.random.default_rng((fleet.seed, i, k))
            drop = rng.random() < fleet.dropout_prob
            noise = rng.normal(0.0, 1.0, 2) * fleet.gps_noise_sigma
            if not drop:
                dlat, dlon = meters_to_degrees(noise[0], noise[1], lat)
                records.append(GpsRecord(bus_id(i), fleet.start_epoch + t, lat + float(dlat), lon + float(dlon), speed))
                kept += 1

            for m in range(sub_steps):
                tm = t + m * fleet.sim_dt
                if tm < depart:
                    continue
                v = fleet.speed_at(route.arc_position(distance) / route.length, tm)
                distance += v / 3.6 * fleet.sim_dt
        logger.debug(f"{bus_id(i)}: {kept}/{n_fixes} fixes, {distance / 1000.0:.1f} km driven")
    return records


@dataclass
class SynthConfig:
    route_kind: str = "loop"
    n_waypoints: int = 12
    extent_km: float = 20.0
    n_buses: int = 5
    headway: float = 600.0
    base_speed: float = 25.0
    congestion: Optional[List[Dict[str, float]]] = None
    gps_noise_sigma: float = 15.0
    dropout_prob: float = 0.05
    fix_interval: float = 30.0
    duration: float = 86_400.0
    sim_dt: float = 1.0
    seed: int = 42

    def validate(self):
        if self.route_kind not in ROUTE_KINDS:
            raise ConfigError(f"synth.route_kind must be one of {ROUTE_KINDS}, got {self.route_kind!r}")
        if self.n_waypoints < 2:
            raise ConfigError(f"synth.n_waypoints must be >= 2, got {self.n_waypoints}")
        if self.extent_km <= 0 or self.duration <= 0:
            raise ConfigError("synth.extent_km and synth.duration must be > 0")
        self.fleet().validate()

    def zones(self) -> List[CongestionZone]:
        if self.congestion is None:
            return default_congestion()
        try:
            return [CongestionZone(**{k: float(v) for k, v in zone.items()}) for zone in self.congestion]
        except TypeError as e:
            raise ConfigError(f"synth.congestion entries need arc_from, arc_to, multiplier, t_start, t_end: {e}") from None

    def route(self) -> RouteSpec:
        return make_route(self.route_kind, self.n_waypoints, self.extent_km, self.seed)

    def fleet(self) -> FleetSpec:
        return FleetSpec(
            n_buses=self.n_buses,
            headway=self.headway,
            base_speed=self.base_speed,
            congestion_zones=self.zones(),
            gps_noise_sigma=self.gps_noise_sigma,
            dropout_prob=self.dropout_prob,
            fix_interval=self.fix_interval,
            seed=self.seed,
            sim_dt=self.sim_dt,
        )


def generate(config: SynthConfig) -> List[GpsRecord]:
    config.validate()
    route = config.route()
    logger.info(f"Simulating {config.n_buses} buses on a {route.length / 1000.0:.1f} km {config.route_kind} for {config.duration:.0f}s")
    return simulate(route, config.fleet(), config.duration)
