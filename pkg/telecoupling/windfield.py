"""
Daily gridded wind fields built from scattered city-day samples.

The grid spacing is the largest bounding-box dimension of the registry
divided by ``res``. Nodes inside the convex hull of the day's samples are
interpolated linearly over a Delaunay triangulation; nodes outside take the
nearest sample. Lookups along a streamline snap to the nearest node.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from typing import Dict, Iterable, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, Delaunay, cKDTree

from .errors import InputError, SpecificationError
from .models import CityRegistry, WindSampleTable


logger = logging.getLogger(__name__)

DEFAULT_RES = 64


class DegenerateExtent(InputError):
    """Raised when the registry has no spatial extent to grid."""
    pass


class NoSamplesForDate(InputError):
    """Raised when a day has no wind samples."""
    pass


class InvalidGrid(SpecificationError):
    """Raised when grid parameters are invalid."""
    pass


@dataclass(frozen=True)
class GridSpec:
    """Regular lon/lat grid anchored at (lon_min, lat_min)."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    res: int = DEFAULT_RES

    def __post_init__(self):
        if int(self.res) != self.res or self.res < 2:
            raise InvalidGrid(f"Grid resolution must be an integer >= 2, got {self.res}")
        if self.lon_max < self.lon_min or self.lat_max < self.lat_min:
            raise InvalidGrid("Grid bounds must satisfy min <= max")
        if not self.spacing > 0:
            raise DegenerateExtent("Grid extent is zero in both dimensions")

    @property
    def spacing(self) -> float:
        """Degrees between neighbouring nodes."""
        return max(self.lon_max - self.lon_min, self.lat_max - self.lat_min) / self.res

    @staticmethod
    def _count(span: float, spacing: float) -> int:
        return int(math.ceil(span / spacing - 1e-9)) + 1 if span > 0 else 1

    @property
    def n_lon(self) -> int:
        return self._count(self.lon_max - self.lon_min, self.spacing)

    @property
    def n_lat(self) -> int:
        return self._count(self.lat_max - self.lat_min, self.spacing)

    @property
    def shape(self) -> Tuple[int, int]:
        """(rows, cols) = (latitude nodes, longitude nodes)."""
        return self.n_lat, self.n_lon

    @property
    def node_count(self) -> int:
        return self.n_lat * self.n_lon

    def lon_nodes(self) -> np.ndarray:
        return self.lon_min + self.spacing * np.arange(self.n_lon)

    def lat_nodes(self) -> np.ndarray:
        return self.lat_min + self.spacing * np.arange(self.n_lat)

    def node_coordinates(self) -> np.ndarray:
        """(rows*cols, 2) lon/lat array in row-major order."""
        lon, lat = np.meshgrid(self.lon_nodes(), self.lat_nodes())
        return np.column_stack([lon.ravel(), lat.ravel()])

    def nearest_node(self, lon: float, lat: float) -> Optional[Tuple[int, int]]:
        """
        Nearest (row, col) by Euclidean distance in degrees.

        Returns None when the position lies outside the node extent. On an
        exact tie the lower index wins.
        """
        if not (math.isfinite(lon) and math.isfinite(lat)):
            return None
        lon_top = self.lon_min + self.spacing * (self.n_lon - 1)
        lat_top = self.lat_min + self.spacing * (self.n_lat - 1)
        if lon < self.lon_min or lon > lon_top or lat < self.lat_min or lat > lat_top:
            return None
        col = math.ceil((lon - self.lon_min) / self.spacing - 0.5)
        row = math.ceil((lat - self.lat_min) / self.spacing - 0.5)
        return min(max(row, 0), self.n_lat - 1), min(max(col, 0), self.n_lon - 1)

    def to_dict(self) -> dict:
        return {
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "res": self.res,
            "spacing": self.spacing,
            "n_lon": self.n_lon,
            "n_lat": self.n_lat,
        }


@dataclass(frozen=True, eq=False)
class DailyWindGrid:
    """u/v components (m/s) on every node of a grid for one day."""

    spec: GridSpec
    date: date
    u: np.ndarray
    v: np.ndarray
    hull: np.ndarray
    method: str = "linear"

    def __post_init__(self):
        for name in ("u", "v"):
            array = np.array(getattr(self, name), dtype=float)
            if array.shape != self.spec.shape:
                raise InvalidGrid(f"{name} has shape {array.shape}, expected {self.spec.shape}")
            if not np.isfinite(array).all():
                raise InvalidGrid(f"{name} contains non-finite values")
            array.setflags(write=False)
            object.__setattr__(self, name, array)


class WindLookup(NamedTuple):
    """Result of a point lookup; ``exited`` flags a position outside the grid."""
    u: float
    v: float
    exited: bool = False


def build_grid(registry: CityRegistry, res: int = DEFAULT_RES) -> GridSpec:
    """
    Build the grid covering the registry's bounding box.

    Raises:
        DegenerateExtent: fewer than two distinct city locations
    """
    coords = registry.coordinates()
    if len(np.unique(coords, axis=0)) < 2:
        raise DegenerateExtent("At least two distinct city locations are needed to build a grid")
    lon_min, lat_min = coords.min(axis=0)
    lon_max, lat_max = coords.max(axis=0)
    return GridSpec(float(lon_min), float(lon_max), float(lat_min), float(lat_max), int(res))


def _day_samples(samples: WindSampleTable, day: date, registry: CityRegistry) -> Tuple[np.ndarray, np.ndarray]:
    """Resolved, de-duplicated and lexicographically ordered samples of one day."""
    frame = samples.for_date(day)
    if frame.empty:
        raise NoSamplesForDate(f"No wind samples for {day.isoformat()}")
    positions = [registry.resolve(loc) for loc in frame["location_id"]]
    points = pd.DataFrame(positions, columns=["lon", "lat"])
    points["u"] = frame["u"].to_numpy(dtype=float)
    points["v"] = frame["v"].to_numpy(dtype=float)
    merged = points.groupby(["lon", "lat"], sort=True).mean()
    coords = np.array(merged.index.tolist(), dtype=float).reshape(-1, 2)
    return coords, merged[["u", "v"]].to_numpy(dtype=float)


def _is_degenerate(points: np.ndarray) -> bool:
    if len(points) < 3:
        return True
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    return singular[-1] <= 1e-10 * max(singular[0], 1.0)


def rasterize_day(samples: WindSampleTable, day: date, spec: GridSpec, registry: CityRegistry) -> DailyWindGrid:
    """
    Interpolate one day's samples onto every grid node.

    Raises:
        NoSamplesForDate: the day has no samples
    """
    points, values = _day_samples(samples, day, registry)
    nodes = spec.node_coordinates()
    out = np.empty((len(nodes), 2), dtype=float)

    if _is_degenerate(points):
        logger.warning("%s: %d sample location(s) are collinear or too few; using nearest-sample rasterization",
                       day.isoformat(), len(points))
        _, nearest = cKDTree(points).query(nodes)
        out[:] = values[nearest]
        hull, method = points, "nearest"
    else:
        tri = Delaunay(points)
        simplex = tri.find_simplex(nodes)
        inside = simplex >= 0
        if inside.any():
            s = simplex[inside]
            transform = tri.transform[s]
            b = np.einsum("ijk,ik->ij", transform[:, :2], nodes[inside] - transform[:, 2])
            bary = np.column_stack([b, 1.0 - b.sum(axis=1)])
            out[inside] = np.einsum("ij,ijk->ik", bary, values[tri.simplices[s]])
        if (~inside).any():
            _, nearest = cKDTree(points).query(nodes[~inside])
            out[~inside] = values[nearest]
        hull, method = points[ConvexHull(points).vertices], "linear"

    return DailyWindGrid(
        spec=spec,
        date=day,
        u=out[:, 0].reshape(spec.shape),
        v=out[:, 1].reshape(spec.shape),
        hull=hull,
        method=method,
    )


def rasterize_days(samples: WindSampleTable, registry: CityRegistry, spec: GridSpec,
                   days: Optional[Iterable[date]] = None, threads: int = 1) -> Dict[date, DailyWindGrid]:
    """Rasterize several days; the result is ordered by date whatever the worker count."""
    days = sorted(days) if days is not None else samples.dates()
    if threads <= 1:
        grids = [rasterize_day(samples, d, spec, registry) for d in days]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grids = list(pool.map(lambda d: rasterize_day(samples, d, spec, registry), days))
    return dict(zip(days, grids))


def sample_at(grid: DailyWindGrid, lon: float, lat: float) -> WindLookup:
    """Wind at the nearest grid node, or an exit flag outside the grid."""
    node = grid.spec.nearest_node(lon, lat)
    if node is None:
        return WindLookup(math.nan, math.nan, True)
    row, col = node
    return WindLookup(float(grid.u[row, col]), float(grid.v[row, col]), False)


def grid_frame(grid: DailyWindGrid) -> pd.DataFrame:
    """Long table (date,row,col,lon,lat,u,v) for CSV dumps."""
    spec = grid.spec
    rows, cols = np.indices(spec.shape)
    nodes = spec.node_coordinates()
    return pd.DataFrame({
        "date": grid.date.isoformat(),
        "row": rows.ravel(),
        "col": cols.ravel(),
        "lon": nodes[:, 0],
        "lat": nodes[:, 1],
        "u": grid.u.ravel(),
        "v": grid.v.ravel(),
    })
