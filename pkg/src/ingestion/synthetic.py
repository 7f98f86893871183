# /src/ingestion/synthetic.py
"""
Deterministic synthetic mini-dataset with planted structure:

- per city, Rain -> Accident -> Congestion chains starting in the 15:00-17:00 local window;
- per city, decoy two-node relations that stay below the minimum support;
- Fog entities far from any traffic;
- long constructions with extra congestion in their immediate neighborhood during the span;
- background traffic that forms no relation at all (unique streets, kept out of weather windows).
"""
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from ..core.config import DEFAULT_TZ_OFFSETS
from ..core.models import (
    EntityKind, EntityType, GeoEntity, StreetSide, TrafficLocation, WeatherLocation, to_iso,
)
from .parser import entities_to_frame
from .weather import DEFAULT_THRESHOLDS

logger = logging.getLogger(__name__)

EPOCH_2018 = 1514764800  # 2018-01-01T00:00:00Z
DAY = 86400
HOUR = 3600
MINUTE = 60
DAYS = 90

CHAINS_PER_CITY = 40
DECOYS_PER_CITY = 15
FOGS_PER_CITY = 6
BACKGROUND_PER_CITY = 340
EXTRA_CONGESTION_PER_DAY = 8
CONSTRUCTION_DAYS = 10
CONSTRUCTION_START_DAY = 40
CONSTRUCTION_CITIES = 6

# weather starts keep traffic out of [start - 45 min, start + 60 min] at the same station
WEATHER_GUARD = (45 * MINUTE, 60 * MINUTE)


@dataclass(frozen=True)
class City:
    name: str
    state: str
    lat: float
    lon: float
    station: str
    zip_base: int
    snowy: bool = False


CITIES: Tuple[City, ...] = (
    City("Columbus", "OH", 39.9612, -82.9988, "KCMH", 43200, snowy=True),
    City("Cleveland", "OH", 41.4993, -81.6944, "KCLE", 44100, snowy=True),
    City("Los Angeles", "CA", 34.0522, -118.2437, "KLAX", 90000),
    City("San Francisco", "CA", 37.7749, -122.4194, "KSFO", 94100),
    City("Houston", "TX", 29.7604, -95.3698, "KIAH", 77000),
    City("Austin", "TX", 30.2672, -97.7431, "KAUS", 78700),
    City("New York", "NY", 40.7128, -74.0060, "KJFK", 10000, snowy=True),
    City("Miami", "FL", 25.7617, -80.1918, "KMIA", 33100),
    City("Seattle", "WA", 47.6062, -122.3321, "KSEA", 98100),
    City("Chicago", "IL", 41.8781, -87.6298, "KORD", 60600, snowy=True),
)

BACKGROUND_TYPES = ("Accident", "Broken-Vehicle", "Congestion", "Event", "Lane-Blocked", "Flow-Incident")


def _offset(lat: float, lon: float, north_m: float, east_m: float) -> Tuple[float, float]:
    dlat = north_m / 111_320.0
    dlon = east_m / (111_320.0 * math.cos(math.radians(lat)))
    return (round(lat + dlat, 6), round(lon + dlon, 6))


class _CityBuilder:
    def __init__(self, city: City, rng: np.random.Generator, ids: Dict[str, int]):
        self.city = city
        self.rng = rng
        self.ids = ids
        self.utc_offset = int(DEFAULT_TZ_OFFSETS[city.state] * HOUR)
        self.zipcodes = [str(city.zip_base + i) for i in range(5)]
        # zipcode sub-centers within ~4 km of downtown
        self.zip_centers = {
            z: _offset(city.lat, city.lon, *rng.uniform(-4000, 4000, size=2)) for z in self.zipcodes
        }
        self.street_counter = 0
        self.weather_starts: List[int] = []
        self.traffic: List[GeoEntity] = []
        self.weather: List[GeoEntity] = []

    def _next_id(self, prefix: str) -> str:
        self.ids[prefix] += 1
        return f"{prefix}-{self.ids[prefix]:06d}"

    def _street(self) -> str:
        self.street_counter += 1
        return f"{self.city.name} St {self.street_counter}"

    def _spot(self, zipcode: str, spread_m: float = 2500.0) -> Tuple[float, float]:
        lat, lon = self.zip_centers[zipcode]
        return _offset(lat, lon, *self.rng.normal(0.0, spread_m / 2, size=2))

    def _traffic(self, label: str, start: int, duration: int, point: Tuple[float, float],
                 street: str, zipcode: str, side: StreetSide = StreetSide.RIGHT) -> GeoEntity:
        e = GeoEntity(
            id=self._next_id("T"), etype=EntityType(EntityKind.TRAFFIC, label), start=start, end=start + duration,
            loc=TrafficLocation(point[0], point[1], street, side, zipcode, self.city.name, self.city.state),
        )
        self.traffic.append(e)
        return e

    def _weather(self, label: str, start: int, duration: int, severity=None) -> GeoEntity:
        e = GeoEntity(
            id=self._next_id("W"), etype=EntityType(EntityKind.WEATHER, label), start=start, end=start + duration,
            loc=WeatherLocation(self.city.station), severity=severity,
        )
        self.weather.append(e)
        self.weather_starts.append(start)
        return e

    def _local_to_utc(self, day: int, local_seconds: float) -> int:
        return int(EPOCH_2018 + day * DAY + local_seconds - self.utc_offset)

    def _clear_of_weather(self, t: int) -> bool:
        return all(not (w - WEATHER_GUARD[0] <= t <= w + WEATHER_GUARD[1]) for w in self.weather_starts)

    def _clear_of_events(self, t: int, gap: int) -> bool:
        return all(abs(t - w) >= gap for w in self.weather_starts)

    def _free_time(self, lo: int, hi: int) -> int:
        while True:
            t = int(self.rng.integers(lo, hi))
            if self._clear_of_weather(t):
                return t

    def build_chains(self):
        days = np.sort(self.rng.choice(DAYS, size=CHAINS_PER_CITY, replace=False))
        for day in days:
            start = self._local_to_utc(int(day), self.rng.uniform(15 * HOUR, 16 * HOUR + 50 * MINUTE))
            self._weather("Rain", start, int(self.rng.integers(60, 91)) * MINUTE, severity="moderate")
            zipcode = self.zipcodes[int(self.rng.integers(5))]
            street = self._street()
            accident_at = self._spot(zipcode)
            congestion_at = _offset(accident_at[0], accident_at[1], 100.0, 0.0)
            self._traffic("Accident", start + 4 * MINUTE, int(self.rng.integers(20, 50)) * MINUTE, accident_at, street, zipcode)
            self._traffic("Congestion", start + 9 * MINUTE, int(self.rng.integers(20, 50)) * MINUTE, congestion_at, street, zipcode)

    def build_weather_only(self):
        snow_decoys = 5 if self.city.snowy else 0
        placed_snow, placed_fog = 0, 0
        while placed_snow < snow_decoys:
            day = int(self.rng.integers(DAYS))
            start = self._local_to_utc(day, self.rng.uniform(6 * HOUR, 9 * HOUR))
            if not self._clear_of_events(start, 3 * HOUR):
                continue
            self._weather("Snow", start, int(self.rng.integers(60, 120)) * MINUTE, severity="light")
            zipcode = self.zipcodes[int(self.rng.integers(5))]
            self._traffic("Accident", start + 5 * MINUTE, int(self.rng.integers(20, 50)) * MINUTE,
                          self._spot(zipcode), self._street(), zipcode)
            placed_snow += 1
        while placed_fog < FOGS_PER_CITY:
            day = int(self.rng.integers(DAYS))
            if abs(day - CONSTRUCTION_START_DAY - CONSTRUCTION_DAYS / 2) < 12:
                continue
            start = self._local_to_utc(day, self.rng.uniform(0, 3 * HOUR))
            if not self._clear_of_events(start, 3 * HOUR):
                continue
            self._weather("Fog", start, int(self.rng.integers(180, 481)) * MINUTE)
            placed_fog += 1

    def build_decoys(self):
        pairs = [("Congestion", "Congestion"), ("Construction", "Congestion"), ("Accident", "Lane-Blocked")]
        lo, hi = EPOCH_2018, EPOCH_2018 + DAYS * DAY
        for i in range(DECOYS_PER_CITY - (5 if self.city.snowy else 0)):
            parent_label, child_label = pairs[i % len(pairs)]
            while True:
                start = self._free_time(lo, hi)
                if self._clear_of_weather(start + 5 * MINUTE):
                    break
            zipcode = self.zipcodes[int(self.rng.integers(5))]
            street = self._street()
            at = self._spot(zipcode)
            self._traffic(parent_label, start, int(self.rng.integers(20, 50)) * MINUTE, at, street, zipcode)
            self._traffic(child_label, start + 5 * MINUTE, int(self.rng.integers(20, 50)) * MINUTE,
                          _offset(at[0], at[1], 0.0, 120.0), street, zipcode)

    def build_construction(self):
        zipcode = self.zipcodes[0]
        site = self.zip_centers[zipcode]
        start = self._free_time(EPOCH_2018 + CONSTRUCTION_START_DAY * DAY,
                                EPOCH_2018 + CONSTRUCTION_START_DAY * DAY + 6 * HOUR)
        self._traffic("Construction", start, CONSTRUCTION_DAYS * DAY, site, self._street(), zipcode)
        for _ in range(EXTRA_CONGESTION_PER_DAY * CONSTRUCTION_DAYS):
            t = self._free_time(start + HOUR, start + CONSTRUCTION_DAYS * DAY - 2 * HOUR)
            self._traffic("Congestion", t, int(self.rng.integers(5, 56)) * MINUTE,
                          self._spot_near(site, 500.0), self._street(), zipcode)

    def _spot_near(self, point: Tuple[float, float], radius_m: float) -> Tuple[float, float]:
        r = radius_m * math.sqrt(self.rng.uniform())
        theta = self.rng.uniform(0, 2 * math.pi)
        return _offset(point[0], point[1], r * math.cos(theta), r * math.sin(theta))

    def build_background(self):
        lo, hi = EPOCH_2018, EPOCH_2018 + DAYS * DAY
        for _ in range(BACKGROUND_PER_CITY):
            label = BACKGROUND_TYPES[int(self.rng.integers(len(BACKGROUND_TYPES)))]
            zipcode = self.zipcodes[int(self.rng.integers(5))]
            side = StreetSide.RIGHT if self.rng.uniform() < 0.5 else StreetSide.LEFT
            self._traffic(label, self._free_time(lo, hi), int(self.rng.integers(5, 56)) * MINUTE,
                          self._spot(zipcode), self._street(), zipcode, side)


def _observations(rng: np.random.Generator, stations: List[str]) -> pd.DataFrame:
    """Hourly observations whose attributes cluster around the default threshold centers."""
    th = DEFAULT_THRESHOLDS
    rows = []
    for station in stations:
        for hour in range(24 * 20):
            condition = ["Clear", "Rain", "Snow", "Fog"][int(rng.integers(4))]
            precipitation = 0.0
            if condition == "Rain":
                precipitation = float(rng.choice(th.rain_centers) + rng.normal(0, 0.2))
            elif condition == "Snow":
                precipitation = float(rng.choice(th.snow_centers) + rng.normal(0, 0.05))
            rows.append({
                "station": station,
                "timestamp": to_iso(EPOCH_2018 + hour * HOUR),
                "temperature": round(float(rng.choice(th.temperature_centers) + rng.normal(0, 1.0)), 2),
                "humidity": round(float(rng.uniform(0.2, 1.0)), 2),
                "wind_speed": round(max(0.0, float(rng.choice(th.wind_centers) + rng.normal(0, 1.5))), 2),
                "pressure": round(float(rng.normal(1013, 5)), 1),
                "precipitation": round(max(0.01, precipitation), 3) if condition in ("Rain", "Snow") else 0.0,
                "condition": condition,
            })
    return pd.DataFrame(rows)


def build_mini_dataset(seed: int = 0) -> Tuple[List[GeoEntity], List[GeoEntity], List[Tuple[str, float, float, str]]]:
    """Traffic entities, weather entities and (airport_code, lat, lon, state) stations."""
    rng = np.random.default_rng(seed)
    ids = {"T": 0, "W": 0}
    traffic: List[GeoEntity] = []
    weather: List[GeoEntity] = []
    stations = []
    for i, city in enumerate(CITIES):
        builder = _CityBuilder(city, rng, ids)
        builder.build_chains()
        builder.build_weather_only()
        builder.build_decoys()
        if i < CONSTRUCTION_CITIES:
            builder.build_construction()
        builder.build_background()
        traffic.extend(builder.traffic)
        weather.extend(builder.weather)
        station_at = _offset(city.lat, city.lon, 8000.0, 8000.0)
        stations.append((city.station, station_at[0], station_at[1], city.state))
    traffic.sort(key=lambda e: (e.start, e.id))
    weather.sort(key=lambda e: (e.start, e.id))
    return traffic, weather, stations


def generate_mini_dataset(out_dir: str, seed: int = 0) -> Dict[str, str]:
    """Writes traffic.csv, weather.csv, stations.csv, observations.csv and mini.env into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    traffic, weather, stations = build_mini_dataset(seed)
    paths = {
        "traffic_path": os.path.join(out_dir, "traffic.csv"),
        "weather_path": os.path.join(out_dir, "weather.csv"),
        "stations_path": os.path.join(out_dir, "stations.csv"),
        "observations_path": os.path.join(out_dir, "observations.csv"),
    }
    entities_to_frame(traffic, EntityKind.TRAFFIC).to_csv(paths["traffic_path"], index=False)
    entities_to_frame(weather, EntityKind.WEATHER).to_csv(paths["weather_path"], index=False)
    pd.DataFrame(stations, columns=["airport_code", "lat", "lon", "state"]).to_csv(paths["stations_path"], index=False)
    _observations(np.random.default_rng(seed + 1), [s[0] for s in stations[:3]]).to_csv(
        paths["observations_path"], index=False)
    config_path = os.path.join(out_dir, "mini.env")
    with open(config_path, "w", encoding="utf-8") as f:
        f.write("# mini dataset; observations are only used by derive-thresholds\n")
        for key in ("traffic_path", "weather_path", "stations_path"):
            f.write(f"{key}={os.path.abspath(paths[key])}\n")
    paths["config_path"] = config_path
    logger.info(f"Mini dataset: {len(traffic)} traffic, {len(weather)} weather entities, {len(stations)} stations in {out_dir}")
    return paths
