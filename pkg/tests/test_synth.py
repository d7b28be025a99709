#!/usr/bin/env python3
"""
Tests for the synthetic fleet generator
"""

import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from gsmt_errors import ConfigError, ContractError
from gsmt_geo import degrees_to_meters, haversine_m
from gsmt_synth import (
    DEFAULT_START_EPOCH,
    CongestionZone,
    FleetSpec,
    RouteSpec,
    SynthConfig,
    bus_id,
    generate,
    make_route,
    simulate,
)

QUIET = FleetSpec(n_buses=1, headway=0.0, congestion_zones=[], gps_noise_sigma=0.0, dropout_prob=0.0)


def _by_bus(records):
    out = {}
    for r in records:
        out.setdefault(r.bus_id, []).append(r)
    return out


def _distance_to_route(route: RouteSpec, lat: float, lon: float) -> float:
    """Shortest planar distance in meters from a point to the route polyline"""
    dx, dy = degrees_to_meters(route.waypoints[:, 0] - lat, route.waypoints[:, 1] - lon, lat)
    a = np.column_stack([dx[:-1], dy[:-1]])
    d = np.column_stack([dx[1:], dy[1:]]) - a
    t = np.clip(-np.einsum("ij,ij->i", a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    return float(np.min(np.linalg.norm(a + t[:, None] * d, axis=1)))


class TestRoute:
    """RouteSpec and make_route"""

    def test_arc_lengths(self):
        """Cumulative arc length follows haversine segment lengths"""
        route = RouteSpec.from_waypoints([(3.10, 101.60), (3.11, 101.60), (3.11, 101.61)])
        first = float(haversine_m(3.10, 101.60, 3.11, 101.60))
        assert route.arc[1] == pytest.approx(first)
        assert route.length == pytest.approx(first + float(haversine_m(3.11, 101.60, 3.11, 101.61)))

    def test_position_interpolates(self):
        """Halfway along a segment is its midpoint"""
        route = RouteSpec.from_waypoints([(3.10, 101.60), (3.12, 101.60)])
        lat, lon = route.position_at(route.length / 2)
        assert lat == pytest.approx(3.11, abs=1e-12)
        assert lon == pytest.approx(101.60, abs=1e-12)

    def test_position_clamped(self):
        """Beyond either end holds the end point"""
        route = RouteSpec.from_waypoints([(3.10, 101.60), (3.12, 101.60)])
        assert route.position_at(-5.0) == (3.10, 101.60)
        assert route.position_at(route.length + 5.0) == pytest.approx((3.12, 101.60))

    def test_loop_wraps(self):
        """A closed route wraps past its length"""
        route = make_route("loop", seed=1)
        assert route.closed
        assert route.arc_position(route.length + 10.0) == pytest.approx(10.0)

    def test_corridor_reflects(self):
        """An open route turns back at its end"""
        route = make_route("corridor", seed=1)
        assert not route.closed
        assert route.arc_position(route.length + 10.0) == pytest.approx(route.length - 10.0)
        assert route.arc_position(2 * route.length + 10.0) == pytest.approx(10.0)

    @pytest.mark.parametrize("kind", ["loop", "corridor"])
    def test_extent(self, kind):
        """Route length is on the order of the requested extent"""
        route = make_route(kind, extent_km=20.0, seed=3)
        assert 10_000.0 < route.length < 30_000.0

    def test_loop_closes(self):
        """The loop ends where it started"""
        route = make_route("loop", seed=2)
        np.testing.assert_array_equal(route.waypoints[0], route.waypoints[-1])

    def test_bad_routes(self):
        """Degenerate routes are refused"""
        with pytest.raises(ContractError):
            RouteSpec.from_waypoints([(3.1, 101.6)])
        with pytest.raises(ContractError):
            RouteSpec.from_waypoints([(3.1, 101.6), (3.1, 101.6)])
        with pytest.raises(ContractError):
            make_route("spiral")


class TestSimulate:
    """simulate"""

    def test_fix_count(self):
        """One hour at 30 s fixes gives 121 fixes per bus"""
        fleet = replace(QUIET, n_buses=3, headway=300.0)
        records = simulate(make_route("loop"), fleet, 3600.0)
        per_bus = _by_bus(records)
        assert sorted(per_bus) == ["bus01", "bus02", "bus03"]
        assert all(len(v) == 121 for v in per_bus.values())

    def test_timestamps(self):
        """Fixes are fix_interval apart from the start epoch"""
        records = simulate(make_route("loop"), QUIET, 300.0)
        assert [r.timestamp for r in records] == [DEFAULT_START_EPOCH + 30.0 * k for k in range(11)]

    def test_closed_form_position(self):
        """Without noise or congestion a fix sits at arc length v t"""
        route = make_route("corridor", extent_km=20.0, seed=5)
        records = simulate(route, QUIET, 1800.0)
        v = QUIET.base_speed / 3.6
        for k, r in enumerate(records):
            lat, lon = route.position_at(v * 30.0 * k)
            assert r.lat == pytest.approx(lat, rel=1e-9)
            assert r.lon == pytest.approx(lon, rel=1e-9)
            assert r.speed == QUIET.base_speed

    def test_waits_before_departure(self):
        """A bus that has not departed sits at the depot at speed 0"""
        route = make_route("loop")
        records = _by_bus(simulate(route, replace(QUIET, n_buses=2, headway=600.0), 1200.0))["bus02"]
        depot = route.position_at(0.0)
        for r in records[:20]:
            assert (r.lat, r.lon) == depot
            assert r.speed == 0.0
        assert records[20].speed > 0

    def test_congestion_slows(self):
        """A route-wide half-speed zone halves the distance driven"""
        route = make_route("corridor", extent_km=20.0, seed=5)
        slow = replace(QUIET, congestion_zones=[CongestionZone(0.0, 1.0, 0.5, 0.0, 86_400.0)])
        records = simulate(route, slow, 1200.0)
        v = QUIET.base_speed / 3.6 * 0.5
        last = records[-1]
        lat, lon = route.position_at(v * 1200.0)
        assert last.lat == pytest.approx(lat, rel=1e-9)
        assert last.lon == pytest.approx(lon, rel=1e-9)
        assert last.speed == pytest.approx(12.5)

    def test_congestion_time_window(self):
        """Zones outside their time window have no effect"""
        fleet = replace(QUIET, congestion_zones=[CongestionZone(0.0, 1.0, 0.5, 3600.0, 7200.0)])
        assert fleet.speed_at(0.5, 100.0) == fleet.base_speed
        assert fleet.speed_at(0.5, 4000.0) == fleet.base_speed * 0.5
        assert fleet.speed_at(0.5, 86_400.0 + 4000.0) == fleet.base_speed * 0.5

    def test_deterministic(self):
        """Same seed, same fixes"""
        fleet = replace(QUIET, n_buses=2, gps_noise_sigma=15.0, dropout_prob=0.1)
        route = make_route("loop")
        assert simulate(route, fleet, 900.0) == simulate(route, fleet, 900.0)

    def test_seed_changes_noise(self):
        """A different seed moves the fixes"""
        fleet = replace(QUIET, gps_noise_sigma=15.0)
        route = make_route("loop")
        a = simulate(route, fleet, 300.0)
        b = simulate(route, replace(fleet, seed=7), 300.0)
        assert [r.lat for r in a] != [r.lat for r in b]

    def test_dropout_keeps_surviving_fixes(self):
        """Dropout removes fixes without disturbing the others"""
        noisy = replace(QUIET, gps_noise_sigma=15.0)
        route = make_route("loop")
        full = {r.timestamp: r for r in simulate(route, noisy, 3600.0)}
        thinned = simulate(route, replace(noisy, dropout_prob=0.3), 3600.0)
        assert 0 < len(thinned) < len(full)
        assert all(full[r.timestamp] == r for r in thinned)

    def test_noise_scale(self):
        """Position noise has roughly the configured spread"""
        route = make_route("loop")
        clean = simulate(route, replace(QUIET, n_buses=3), 7200.0)
        noisy = simulate(route, replace(QUIET, n_buses=3, gps_noise_sigma=15.0), 7200.0)
        offsets = [float(haversine_m(a.lat, a.lon, b.lat, b.lon)) for a, b in zip(clean, noisy)]
        # mean of a 2-D Rayleigh with sigma 15 m is about 18.8 m
        assert 14.0 < np.mean(offsets) < 24.0
        assert max(_distance_to_route(route, r.lat, r.lon) for r in clean) < 1e-3
        assert max(_distance_to_route(route, r.lat, r.lon) for r in noisy) <= 6 * 15.0

    def test_short_duration_warns(self, caplog):
        """A run shorter than the departure schedule is flagged"""
        caplog.set_level(logging.WARNING, logger="gsmt.synth")
        simulate(make_route("loop"), replace(QUIET, n_buses=5, headway=600.0), 600.0)
        assert "late buses barely move" in caplog.text

    def test_bad_duration(self):
        """Duration must be positive"""
        with pytest.raises(ContractError):
            simulate(make_route("loop"), QUIET, 0.0)


class TestSynthConfig:
    """SynthConfig and generate"""

    def test_default_ids(self):
        """Five buses named bus01..bus05"""
        records = generate(SynthConfig(duration=600.0))
        assert sorted({r.bus_id for r in records}) == [bus_id(i) for i in range(5)]
        assert bus_id(0) == "bus01"

    def test_custom_congestion(self):
        """Congestion entries become zones"""
        config = SynthConfig(congestion=[{"arc_from": 0.1, "arc_to": 0.2, "multiplier": 0.3, "t_start": 0, "t_end": 60}])
        (zone,) = config.zones()
        assert zone.multiplier == 0.3
        assert config.fleet().congestion_zones == [zone]

    def test_bad_congestion_entry(self):
        """A malformed zone is a configuration error"""
        with pytest.raises(ConfigError):
            SynthConfig(congestion=[{"arc_from": 0.1}]).zones()

    @pytest.mark.parametrize(
        "changes",
        [
            {"dropout_prob": 1.0},
            {"n_buses": 0},
            {"route_kind": "ring"},
            {"fix_interval": 2.5},
            {"congestion": [{"arc_from": 0, "arc_to": 1, "multiplier": 1.5, "t_start": 0, "t_end": 1}]},
        ],
    )
    def test_validate(self, changes):
        """Invalid knobs are configuration errors"""
        with pytest.raises(ConfigError):
            replace(SynthConfig(), **changes).validate()
