"""
Loaders and canonical writers for every input table.

CSV with a required header row is the interchange format. Loaders validate
and reject; they never impute.
"""

import json
import math
import re
from datetime import date
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from .errors import InputError
from .models import (
    City, CityRegistry, ColumnRole, MissingPopulation, PanelTable, WindSampleTable,
)
from .storage import atomic_write_text, dumps_json, frame_to_csv


POPULATION_COLUMN = re.compile(r"^pop_(\d{4})$")

CITY_COLUMNS = ["city_id", "longitude", "latitude"]
WIND_COLUMNS = ["location_id", "date", "u_ms", "v_ms"]
TRADE_COLUMNS = ["region_id", "product_id", "year", "export_value"]
IMPORT_COLUMNS = ["product_id", "year", "import_value"]
POPULATION_COLUMNS = ["region_id", "year", "population"]
FOREST_COLUMNS = ["region_id", "year", "forest"]
LAND_COLUMNS = ["region_id", "land"]
SHOCK_COLUMNS = ["sender_id", "delta_trade"]
BINNED_COLUMNS = ["sender_id", "receiver_id", "period", "score", "bin"]
COEFFICIENT_COLUMNS = ["bin", "coef"]


class InputFileNotFound(InputError):
    """Raised when an input path does not exist."""
    pass


class SchemaError(InputError):
    """Raised when a header or a cell does not match the expected schema."""
    pass


class DuplicateKey(InputError):
    """Raised when a table key appears more than once."""
    pass


class NonFiniteValue(InputError):
    """Raised when a numeric cell is NaN or infinite."""
    pass


class MissingValue(InputError):
    """Raised when a required cell is empty."""
    pass


class NegativeWeight(InputError):
    """Raised when a weight column contains a negative value."""
    pass


class NegativeValue(InputError):
    """Raised when a value that must be non-negative is negative."""
    pass


def _read_csv(path: Union[str, Path], required: Sequence[str], exact: bool = False) -> pd.DataFrame:
    """Read a CSV as strings and check its header."""
    path = Path(path)
    if not path.exists():
        raise InputFileNotFound(f"Input file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty (a header row is required)")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise SchemaError(f"{path}: could not parse CSV: {e}")
    columns = list(frame.columns)
    if exact and columns != list(required):
        raise SchemaError(f"{path}: header {columns} does not match {list(required)}")
    missing = [c for c in required if c not in columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    return frame


def _cell_float(value: str, path: Path, row: int, column: str) -> float:
    """Parse a numeric cell; row numbers are 1-based data rows."""
    if value is None or str(value).strip() == "":
        raise MissingValue(f"{path}: row {row}, column '{column}' is empty")
    try:
        number = float(value)
    except ValueError:
        raise SchemaError(f"{path}: row {row}, column '{column}': '{value}' is not a number")
    if not math.isfinite(number):
        raise NonFiniteValue(f"{path}: row {row}, column '{column}' is not finite ({value})")
    return number


def _cell_int(value: str, path: Path, row: int, column: str) -> int:
    number = _cell_float(value, path, row, column)
    if not number.is_integer():
        raise SchemaError(f"{path}: row {row}, column '{column}': '{value}' is not an integer")
    return int(number)


def _cell_date(value: str, path: Path, row: int, column: str) -> date:
    if not value:
        raise MissingValue(f"{path}: row {row}, column '{column}' is empty")
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise SchemaError(f"{path}: row {row}, column '{column}': '{value}' is not an ISO date")


def _check_unique(frame: pd.DataFrame, key: List[str], path: Path) -> None:
    dupes = frame.duplicated(subset=key, keep="first")
    if dupes.any():
        first = frame.loc[dupes, key].iloc[0].tolist()
        raise DuplicateKey(f"{path}: duplicate key {dict(zip(key, first))}")


# ---------------------------------------------------------------------------
# City registry
# ---------------------------------------------------------------------------

def load_city_registry(path: Union[str, Path]) -> CityRegistry:
    """
    Load and validate a city registry.

    Args:
        path: cities.csv with columns city_id,longitude,latitude[,pop_YYYY...]

    Returns:
        Validated CityRegistry in file order

    Raises:
        SchemaError: bad header or cell
        DuplicateId: repeated city_id
        CoordinateOutOfRange: longitude/latitude outside valid ranges
    """
    path = Path(path)
    frame = _read_csv(path, CITY_COLUMNS)
    if list(frame.columns[:3]) != CITY_COLUMNS:
        raise SchemaError(f"{path}: header must start with {','.join(CITY_COLUMNS)}")
    pop_columns: Dict[str, int] = {}
    for column in frame.columns[3:]:
        match = POPULATION_COLUMN.match(column)
        if not match:
            raise SchemaError(f"{path}: unexpected column '{column}' (expected pop_YYYY)")
        pop_columns[column] = int(match.group(1))

    cities = []
    for i, record in enumerate(frame.to_dict("records"), start=1):
        city_id = record["city_id"].strip()
        if not city_id:
            raise MissingValue(f"{path}: row {i}, column 'city_id' is empty")
        lon = _cell_float(record["longitude"], path, i, "longitude")
        lat = _cell_float(record["latitude"], path, i, "latitude")
        population = {}
        for column, year in pop_columns.items():
            count = _cell_float(record[column], path, i, column)
            if count < 0:
                raise NegativeValue(f"{path}: row {i}, column '{column}' is negative")
            population[year] = count
        cities.append(City(city_id, lon, lat, population))
    return CityRegistry(tuple(cities))


def city_registry_frame(registry: CityRegistry) -> pd.DataFrame:
    """Canonical cities.csv frame; every city must cover every year."""
    years = registry.years
    rows = []
    for city in registry:
        row = [city.city_id, city.longitude, city.latitude]
        for year in years:
            if year not in city.population_by_year:
                raise MissingPopulation(f"City '{city.city_id}' has no population for {year}")
            row.append(city.population_by_year[year])
        rows.append(row)
    columns = CITY_COLUMNS + [f"pop_{y}" for y in years]
    return pd.DataFrame(rows, columns=columns)


def write_city_registry(registry: CityRegistry, path: Union[str, Path]) -> None:
    """Write a registry in canonical form."""
    atomic_write_text(Path(path), frame_to_csv(city_registry_frame(registry)))


# ---------------------------------------------------------------------------
# Wind samples
# ---------------------------------------------------------------------------

def load_wind_samples(path: Union[str, Path], registry: CityRegistry) -> WindSampleTable:
    """
    Load daily prevailing wind vectors.

    Args:
        path: wind.csv with columns location_id,date,u_ms,v_ms
        registry: registry used to resolve city locations

    Returns:
        WindSampleTable keyed by (location, date)

    Raises:
        UnknownLocation: location neither a registry city nor a grid coordinate
        DuplicateKey: repeated (location, date)
        NonFiniteValue: NaN or infinite wind component
    """
    path = Path(path)
    frame = _read_csv(path, WIND_COLUMNS)
    records = []
    for i, record in enumerate(frame.to_dict("records"), start=1):
        location = record["location_id"].strip()
        if not location:
            raise MissingValue(f"{path}: row {i}, column 'location_id' is empty")
        registry.resolve(location)
        day = _cell_date(record["date"].strip(), path, i, "date")
        u = _cell_float(record["u_ms"], path, i, "u_ms")
        v = _cell_float(record["v_ms"], path, i, "v_ms")
        records.append((location, day, u, v))
    table = pd.DataFrame(records, columns=["location_id", "date", "u", "v"])
    _check_unique(table, ["location_id", "date"], path)
    return WindSampleTable(table)


def wind_samples_frame(samples: WindSampleTable) -> pd.DataFrame:
    """Canonical wind.csv frame (row order preserved)."""
    frame = samples.frame
    return pd.DataFrame({
        "location_id": frame["location_id"],
        "date": frame["date"].dt.strftime("%Y-%m-%d"),
        "u_ms": frame["u"].astype(float),
        "v_ms": frame["v"].astype(float),
    })


def write_wind_samples(samples: WindSampleTable, path: Union[str, Path]) -> None:
    """Write wind samples in canonical form."""
    atomic_write_text(Path(path), frame_to_csv(wind_samples_frame(samples)))


# ---------------------------------------------------------------------------
# Panels
# ---------------------------------------------------------------------------

def parse_roles(declaration: Mapping[str, object], source: str = "role declaration") -> Dict[str, Tuple[ColumnRole, ...]]:
    """Normalize a role declaration ({column: role | [roles]})."""
    if "roles" in declaration and isinstance(declaration["roles"], Mapping):
        declaration = declaration["roles"]
    roles: Dict[str, Tuple[ColumnRole, ...]] = {}
    for column, value in declaration.items():
        values = [value] if isinstance(value, str) else list(value)
        try:
            parsed = tuple(ColumnRole(str(v).lower()) for v in values)
        except ValueError:
            valid = ", ".join(r.value for r in ColumnRole)
            raise SchemaError(f"{source}: invalid role {values} for '{column}'. Must be one of: {valid}")
        if not parsed:
            raise SchemaError(f"{source}: column '{column}' has no role")
        roles[str(column)] = parsed
    weights = [c for c, rs in roles.items() if ColumnRole.WEIGHT in rs]
    if len(weights) > 1:
        raise SchemaError(f"{source}: at most one weight column allowed, got {weights}")
    return roles


def load_panel_roles(path: Union[str, Path]) -> Dict[str, Tuple[ColumnRole, ...]]:
    """Read a JSON role sidecar."""
    path = Path(path)
    if not path.exists():
        raise InputFileNotFound(f"Input file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e}")
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: role sidecar must be a JSON object")
    return parse_roles(data, str(path))


def default_roles_path(panel_path: Union[str, Path]) -> Path:
    """Sidecar location convention: panel.csv -> panel.roles.json."""
    panel_path = Path(panel_path)
    return panel_path.with_name(panel_path.stem + ".roles.json")


def load_panel(path: Union[str, Path],
               schema: Optional[Union[Mapping[str, object], str, Path]] = None) -> PanelTable:
    """
    Load a panel and bind column roles.

    Args:
        path: panel CSV
        schema: role declaration mapping, sidecar path, or None for the
            ``<stem>.roles.json`` sidecar next to the panel

    Returns:
        PanelTable with numeric role columns as floats and FE/cluster
        columns as string categories

    Raises:
        SchemaError: declared column absent or bad value
        MissingValue: empty cell in a role column
        NegativeWeight: weight below zero
    """
    path = Path(path)
    if schema is None:
        roles = load_panel_roles(default_roles_path(path))
    elif isinstance(schema, (str, Path)):
        roles = load_panel_roles(schema)
    else:
        roles = parse_roles(schema)

    frame = _read_csv(path, list(roles))
    for column, column_roles in roles.items():
        values = frame[column]
        empty = values.str.strip() == ""
        if empty.any():
            row = int(empty.to_numpy().nonzero()[0][0]) + 1
            raise MissingValue(f"{path}: row {row}, column '{column}' is empty")
        if any(r.is_numeric for r in column_roles):
            parsed = [_cell_float(v, path, i, column) for i, v in enumerate(values, start=1)]
            frame[column] = pd.Series(parsed, index=frame.index, dtype=float)
            if ColumnRole.WEIGHT in column_roles and (frame[column] < 0).any():
                row = int((frame[column] < 0).to_numpy().nonzero()[0][0]) + 1
                raise NegativeWeight(f"{path}: row {row}, weight column '{column}' is negative")
    return PanelTable(frame, roles)


def write_panel(panel: PanelTable, path: Union[str, Path], roles_path: Optional[Union[str, Path]] = None) -> None:
    """Write a panel CSV and its role sidecar."""
    path = Path(path)
    atomic_write_text(path, frame_to_csv(panel.frame))
    atomic_write_text(Path(roles_path) if roles_path else default_roles_path(path),
                      dumps_json(panel.roles_to_dict()))


# ---------------------------------------------------------------------------
# Shift-share inputs
# ---------------------------------------------------------------------------

def _load_numeric_table(path: Union[str, Path], columns: List[str], key: List[str],
                        int_columns: Sequence[str], value_columns: Sequence[str],
                        signed: Sequence[str] = ()) -> pd.DataFrame:
    path = Path(path)
    frame = _read_csv(path, columns)
    rows = []
    for i, record in enumerate(frame.to_dict("records"), start=1):
        row = []
        for column in columns:
            if column in int_columns:
                row.append(_cell_int(record[column], path, i, column))
            elif column in value_columns:
                value = _cell_float(record[column], path, i, column)
                if value < 0 and column not in signed:
                    raise NegativeValue(f"{path}: row {i}, column '{column}' is negative")
                row.append(value)
            else:
                text = record[column].strip()
                if not text:
                    raise MissingValue(f"{path}: row {i}, column '{column}' is empty")
                row.append(text)
        rows.append(row)
    table = pd.DataFrame(rows, columns=columns)
    if table.empty:
        table = table.astype({c: int for c in int_columns}).astype({c: float for c in value_columns})
    _check_unique(table, key, path)
    return table


def load_trade(path: Union[str, Path]) -> pd.DataFrame:
    """Load trade.csv (region_id,product_id,year,export_value)."""
    return _load_numeric_table(path, TRADE_COLUMNS, ["region_id", "product_id", "year"],
                               ["year"], ["export_value"])


def load_imports(path: Union[str, Path]) -> pd.DataFrame:
    """Load imports.csv (product_id,year,import_value)."""
    return _load_numeric_table(path, IMPORT_COLUMNS, ["product_id", "year"], ["year"], ["import_value"])


def load_region_population(path: Union[str, Path]) -> pd.DataFrame:
    """Load population.csv (region_id,year,population)."""
    return _load_numeric_table(path, POPULATION_COLUMNS, ["region_id", "year"], ["year"], ["population"])


# ---------------------------------------------------------------------------
# Accounting and bin-design inputs
# ---------------------------------------------------------------------------

def load_forest(path: Union[str, Path]) -> pd.DataFrame:
    """Load forest.csv (region_id,year,forest) with forest cover in hectares."""
    return _load_numeric_table(path, FOREST_COLUMNS, ["region_id", "year"], ["year"], ["forest"])


def load_land(path: Union[str, Path]) -> pd.DataFrame:
    return _load_numeric_table(path, LAND_COLUMNS, ["region_id"], [], ["land"])


def load_trade_shock(path: Union[str, Path]) -> pd.DataFrame:
    """Load trade_shock.csv (sender_id,delta_trade); shocks may be negative."""
    return _load_numeric_table(path, SHOCK_COLUMNS, ["sender_id"], [], ["delta_trade"], signed=["delta_trade"])


def load_outcomes(path: Union[str, Path], outcome: str = "outcome") -> pd.DataFrame:
    """Load receiver outcomes (receiver_id,period,<outcome>) keyed by YYYY-MM period."""
    return _load_numeric_table(path, ["receiver_id", "period", outcome], ["receiver_id", "period"],
                               [], [outcome], signed=[outcome])


def load_binned(path: Union[str, Path]) -> pd.DataFrame:
    """Load a binned monthly matrix as written by aoe-build."""
    return _load_numeric_table(path, BINNED_COLUMNS, ["sender_id", "receiver_id", "period"], [], ["score"])


def load_coefficients(path: Union[str, Path]) -> pd.DataFrame:
    """
    Load a bin coefficient table (bin,coef).

    Extra columns such as the ``dropped`` flag of a fit output are ignored.
    """
    frame = _read_csv(path, COEFFICIENT_COLUMNS)
    kept = frame.loc[frame["coef"].str.strip() != ""]
    if "dropped" in frame.columns:
        kept = kept.loc[kept["dropped"].str.strip().str.lower() != "true"]
    rows = [(record["bin"].strip(), _cell_float(record["coef"], Path(path), i, "coef"))
            for i, record in enumerate(kept.to_dict("records"), start=1)]
    table = pd.DataFrame(rows, columns=COEFFICIENT_COLUMNS).astype({"coef": float})
    _check_unique(table, ["bin"], Path(path))
    return table
