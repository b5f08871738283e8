"""
Data models for the telecoupling toolkit.
"""

import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import InputError, SpecificationError


GRID_LOCATION_PREFIX = "grid:"


class DuplicateId(InputError):
    """Raised when two registry rows share a city_id."""
    pass


class CoordinateOutOfRange(InputError):
    """Raised when a longitude or latitude falls outside its valid range."""
    pass


class MissingPopulation(InputError):
    """Raised when a population value is requested for an unknown year."""
    pass


class UnknownLocation(InputError):
    """Raised when a wind sample refers to a location that cannot be resolved."""
    pass


class InvalidConfig(SpecificationError):
    """Raised when a synthetic-data configuration is invalid."""
    pass


class ColumnRole(str, Enum):
    """Role a panel column plays in a regression design."""
    OUTCOME = "outcome"
    REGRESSOR = "regressor"
    INSTRUMENT = "instrument"
    FE = "fe"
    CLUSTER = "cluster"
    WEIGHT = "weight"

    @property
    def is_numeric(self) -> bool:
        return self in (ColumnRole.OUTCOME, ColumnRole.REGRESSOR,
                        ColumnRole.INSTRUMENT, ColumnRole.WEIGHT)


class WindRegime(str, Enum):
    """Wind patterns available to the synthetic generator."""
    CONSTANT = "constant"
    ROTATING = "rotating"
    RANDOM_SMOOTH = "random-smooth"


def check_coordinates(longitude: float, latitude: float, where: str = "") -> None:
    """Validate a lon/lat pair in degrees."""
    suffix = f" ({where})" if where else ""
    if not (math.isfinite(longitude) and -180.0 <= longitude <= 180.0):
        raise CoordinateOutOfRange(f"Longitude {longitude} outside [-180, 180]{suffix}")
    if not (math.isfinite(latitude) and -90.0 <= latitude <= 90.0):
        raise CoordinateOutOfRange(f"Latitude {latitude} outside [-90, 90]{suffix}")


def grid_location_id(longitude: float, latitude: float) -> str:
    """Build the location_id used for wind samples taken at a bare coordinate."""
    return f"{GRID_LOCATION_PREFIX}{longitude:.12g}:{latitude:.12g}"


def parse_grid_location(location_id: str) -> Optional[Tuple[float, float]]:
    """Return (lon, lat) for a ``grid:<lon>:<lat>`` id, or None for a city id."""
    if not location_id.startswith(GRID_LOCATION_PREFIX):
        return None
    parts = location_id[len(GRID_LOCATION_PREFIX):].split(":")
    if len(parts) != 2:
        raise UnknownLocation(f"Malformed grid location '{location_id}'")
    try:
        lon, lat = float(parts[0]), float(parts[1])
    except ValueError:
        raise UnknownLocation(f"Malformed grid location '{location_id}'")
    check_coordinates(lon, lat, location_id)
    return lon, lat


@dataclass(frozen=True)
class City:
    """A city (microregion centroid) with its annual population."""

    city_id: str
    longitude: float
    latitude: float
    population_by_year: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        """Validate coordinates and populations."""
        if not self.city_id:
            raise InputError("city_id cannot be empty")
        check_coordinates(self.longitude, self.latitude, self.city_id)
        for year, count in self.population_by_year.items():
            if not math.isfinite(count) or count < 0:
                raise InputError(f"Population of '{self.city_id}' in {year} must be >= 0, got {count}")

    def population(self, year: int) -> float:
        try:
            return float(self.population_by_year[year])
        except KeyError:
            raise MissingPopulation(f"No population for city '{self.city_id}' in {year}")


@dataclass(frozen=True)
class CityRegistry:
    """Validated, ordered collection of cities."""

    cities: Tuple[City, ...]

    def __post_init__(self):
        object.__setattr__(self, "cities", tuple(self.cities))
        seen = set()
        for city in self.cities:
            if city.city_id in seen:
                raise DuplicateId(f"Duplicate city_id '{city.city_id}'")
            seen.add(city.city_id)

    def __len__(self) -> int:
        return len(self.cities)

    def __iter__(self):
        return iter(self.cities)

    def __contains__(self, city_id: object) -> bool:
        return any(c.city_id == city_id for c in self.cities)

    @property
    def ids(self) -> List[str]:
        return [c.city_id for c in self.cities]

    @property
    def years(self) -> List[int]:
        """Sorted union of population years."""
        years = set()
        for city in self.cities:
            years.update(city.population_by_year)
        return sorted(years)

    def get(self, city_id: str) -> City:
        for city in self.cities:
            if city.city_id == city_id:
                return city
        raise UnknownLocation(f"Unknown city '{city_id}'")

    def coordinates(self) -> np.ndarray:
        """(n, 2) array of lon/lat in registry order."""
        return np.array([[c.longitude, c.latitude] for c in self.cities], dtype=float).reshape(-1, 2)

    def population(self, city_id: str, year: int) -> float:
        return self.get(city_id).population(year)

    def population_frame(self) -> pd.DataFrame:
        """Long frame of (city_id, year, population)."""
        rows = [
            (c.city_id, int(y), float(p))
            for c in self.cities for y, p in sorted(c.population_by_year.items())
        ]
        return pd.DataFrame(rows, columns=["city_id", "year", "population"])

    def resolve(self, location_id: str) -> Tuple[float, float]:
        """Return lon/lat for a city id or a ``grid:`` location."""
        point = parse_grid_location(location_id)
        if point is not None:
            return point
        city = self.get(location_id)
        return city.longitude, city.latitude

    @classmethod
    def from_points(cls, ids: Sequence[str], coords: np.ndarray) -> "CityRegistry":
        """Registry of bare points (no population), e.g. grid nodes."""
        return cls(tuple(City(str(i), float(lon), float(lat)) for i, (lon, lat) in zip(ids, coords)))


@dataclass(frozen=True)
class WindSampleTable:
    """Daily prevailing wind vectors keyed by (location_id, date).

    ``frame`` has columns location_id, date (datetime64), u, v (m/s) and is
    kept in input order.
    """

    frame: pd.DataFrame

    COLUMNS = ("location_id", "date", "u", "v")

    def __post_init__(self):
        frame = self.frame.loc[:, list(self.COLUMNS)].copy()
        frame["date"] = pd.to_datetime(frame["date"]).dt.normalize()
        frame = frame.reset_index(drop=True)
        object.__setattr__(self, "frame", frame)

    def __len__(self) -> int:
        return len(self.frame)

    def dates(self) -> List[date]:
        return sorted({ts.date() for ts in self.frame["date"]})

    def for_date(self, day: date) -> pd.DataFrame:
        mask = self.frame["date"] == pd.Timestamp(day)
        return self.frame.loc[mask].reset_index(drop=True)


@dataclass(frozen=True)
class PanelTable:
    """A typed panel with declared column roles."""

    frame: pd.DataFrame
    roles: Mapping[str, Tuple[ColumnRole, ...]]

    def __len__(self) -> int:
        return len(self.frame)

    def columns_with(self, role: ColumnRole) -> List[str]:
        return [name for name, rs in self.roles.items() if role in rs]

    def role_of(self, column: str) -> Tuple[ColumnRole, ...]:
        return tuple(self.roles.get(column, ()))

    def roles_to_dict(self) -> Dict[str, object]:
        """Sidecar representation of the role declaration."""
        out: Dict[str, object] = {}
        for name, rs in self.roles.items():
            values = [r.value for r in rs]
            out[name] = values[0] if len(values) == 1 else values
        return {"roles": out}


@dataclass
class SynthConfig:
    """Configuration of the synthetic data generator."""

    n_cities: int = 6
    n_days: int = 60
    wind_regime: WindRegime = WindRegime.CONSTANT
    seed: int = 1
    start_date: date = date(2001, 1, 1)
    base_u: float = 5.0
    base_v: float = 0.0
    rotation_days: float = 30.0
    lon_range: Tuple[float, float] = (-74.0, -34.0)
    lat_range: Tuple[float, float] = (-34.0, 5.0)
    # shift-share panel DGP
    first_year: int = 2000
    n_years: int = 8
    n_products: int = 12
    iv_horizon: int = 4
    first_stage: float = 0.8
    trade_effect: float = -0.174
    confounding: float = 0.3
    noise_sd: float = 1.0
    n_macro_regions: int = 3

    def __post_init__(self):
        """Coerce enum/date fields and validate."""
        if isinstance(self.wind_regime, str):
            try:
                self.wind_regime = WindRegime(self.wind_regime)
            except ValueError:
                valid = ", ".join(r.value for r in WindRegime)
                raise InvalidConfig(f"Invalid wind_regime '{self.wind_regime}'. Must be one of: {valid}")
        if isinstance(self.start_date, str):
            self.start_date = date.fromisoformat(self.start_date)
        self.lon_range = tuple(self.lon_range)
        self.lat_range = tuple(self.lat_range)
        self.validate()

    def validate(self) -> None:
        if self.n_cities < 2:
            raise InvalidConfig("n_cities must be >= 2 (area of effect needs a sender and a receiver)")
        if self.n_days < 1:
            raise InvalidConfig("n_days must be >= 1")
        if self.seed is None or int(self.seed) < 0:
            raise InvalidConfig("seed must be a non-negative integer")
        if self.n_products < 1 or self.n_years < 1 or self.iv_horizon < 1:
            raise InvalidConfig("n_products, n_years and iv_horizon must be >= 1")
        if self.n_macro_regions < 1:
            raise InvalidConfig("n_macro_regions must be >= 1")
        if not all(math.isfinite(x) for x in (self.base_u, self.base_v, self.noise_sd)):
            raise InvalidConfig("Wind components and noise_sd must be finite")
        if self.noise_sd < 0:
            raise InvalidConfig("noise_sd must be >= 0")
        if self.rotation_days <= 0:
            raise InvalidConfig("rotation_days must be > 0")
        for lo, hi in (self.lon_range, self.lat_range):
            if not lo < hi:
                raise InvalidConfig("Coordinate ranges must be increasing")
        check_coordinates(self.lon_range[0], self.lat_range[0])
        check_coordinates(self.lon_range[1], self.lat_range[1])

    @property
    def years(self) -> List[int]:
        return list(range(self.first_year, self.first_year + self.n_years))

    def to_dict(self) -> dict:
        return {
            "n_cities": self.n_cities,
            "n_days": self.n_days,
            "wind_regime": self.wind_regime.value,
            "seed": self.seed,
            "start_date": self.start_date.isoformat(),
            "base_u": self.base_u,
            "base_v": self.base_v,
            "rotation_days": self.rotation_days,
            "lon_range": list(self.lon_range),
            "lat_range": list(self.lat_range),
            "first_year": self.first_year,
            "n_years": self.n_years,
            "n_products": self.n_products,
            "iv_horizon": self.iv_horizon,
            "first_stage": self.first_stage,
            "trade_effect": self.trade_effect,
            "confounding": self.confounding,
            "noise_sd": self.noise_sd,
            "n_macro_regions": self.n_macro_regions,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"Unknown synth settings: {', '.join(sorted(unknown))}")
        return cls(**data)
