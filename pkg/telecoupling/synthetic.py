"""
Seeded synthetic inputs for desk-scale runs of the whole pipeline.

Every component draws from its own stream derived from (seed, component),
so the same configuration always yields byte-identical tables.
"""

import logging
import math
from dataclasses import dataclass
from datetime import timedelta
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from .ingest import city_registry_frame, wind_samples_frame
from .models import City, CityRegistry, ColumnRole, PanelTable, SynthConfig, WindRegime, WindSampleTable
from .shiftshare import build_iv_panel


logger = logging.getLogger(__name__)

# stream ids
CITIES, WIND, TRADE, IMPORTS, PANEL, FOREST, OUTCOMES, SHOCK = range(8)

PANEL_ROLES = {
    "region_id": (ColumnRole.CLUSTER,),
    "macro_region": (ColumnRole.FE,),
    "year": (ColumnRole.FE,),
    "d_forest": (ColumnRole.OUTCOME,),
    "d_export": (ColumnRole.REGRESSOR,),
    "iv": (ColumnRole.INSTRUMENT,),
    "weight": (ColumnRole.WEIGHT,),
}
BALANCE_CHARACTERISTICS = ["pre_forest_share", "pre_pop_growth"]


@dataclass
class SyntheticData:
    """Every table the generator produces."""

    config: SynthConfig
    registry: CityRegistry
    wind: WindSampleTable
    panel: PanelTable
    trade: pd.DataFrame
    imports: pd.DataFrame
    population: pd.DataFrame
    forest: pd.DataFrame
    land: pd.DataFrame
    outcomes: pd.DataFrame
    trade_shock: pd.DataFrame


def _rng(config: SynthConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(config.seed), stream])


def _wind_days(config: SynthConfig) -> List:
    return [config.start_date + timedelta(days=d) for d in range(config.n_days)]


def _outcome_months(config: SynthConfig) -> List[str]:
    # arrivals can spill a week past the last emission day
    last = config.start_date + timedelta(days=config.n_days - 1 + 7)
    return [str(p) for p in pd.period_range(pd.Period(pd.Timestamp(config.start_date), "M"), pd.Period(pd.Timestamp(last), "M"), freq="M")]


def _all_years(config: SynthConfig) -> List[int]:
    years = set(config.years)
    years.update(d.year for d in _wind_days(config))
    years.update(int(m[:4]) for m in _outcome_months(config))
    return sorted(years)


def _cities(config: SynthConfig) -> CityRegistry:
    rng = _rng(config, CITIES)
    width = len(str(config.n_cities))
    lon = rng.uniform(*config.lon_range, size=config.n_cities)
    lat = rng.uniform(*config.lat_range, size=config.n_cities)
    base = rng.uniform(5e4, 2e6, size=config.n_cities)
    years = _all_years(config)
    cities = []
    for i in range(config.n_cities):
        population = {y: float(round(base[i] * 1.01 ** (y - years[0]))) for y in years}
        cities.append(City(f"C{i + 1:0{width}d}", float(lon[i]), float(lat[i]), population))
    return CityRegistry(tuple(cities))


def _wind_components(config: SynthConfig, registry: CityRegistry) -> Tuple[np.ndarray, np.ndarray]:
    """(days, cities) arrays of u and v."""
    n_days, n_cities = config.n_days, len(registry)
    if config.wind_regime == WindRegime.CONSTANT:
        return np.full((n_days, n_cities), config.base_u), np.full((n_days, n_cities), config.base_v)

    if config.wind_regime == WindRegime.ROTATING:
        speed = math.hypot(config.base_u, config.base_v) or 5.0
        start = math.atan2(config.base_v, config.base_u)
        angle = start + 2.0 * math.pi * np.arange(n_days) / config.rotation_days
        u = np.repeat((speed * np.cos(angle))[:, None], n_cities, axis=1)
        v = np.repeat((speed * np.sin(angle))[:, None], n_cities, axis=1)
        return u, v

    rng = _rng(config, WIND)
    coords = registry.coordinates()
    lon_mid, lat_mid = coords.mean(axis=0)
    lon_span = max(np.ptp(coords[:, 0]), 1e-9)
    lat_span = max(np.ptp(coords[:, 1]), 1e-9)
    a = np.zeros(n_days)
    b = np.zeros(n_days)
    shocks = rng.normal(size=(n_days, 2))
    for d in range(n_days):
        a[d] = (0.8 * a[d - 1] if d else 0.0) + shocks[d, 0]
        b[d] = (0.8 * b[d - 1] if d else 0.0) + shocks[d, 1]
    u = config.base_u + 2.0 * a[:, None] + b[:, None] * ((coords[:, 1] - lat_mid) / lat_span)[None, :]
    v = config.base_v + 2.0 * b[:, None] + a[:, None] * ((coords[:, 0] - lon_mid) / lon_span)[None, :]
    return u, v


def _wind(config: SynthConfig, registry: CityRegistry) -> WindSampleTable:
    u, v = _wind_components(config, registry)
    rows = []
    for d, day in enumerate(_wind_days(config)):
        for c, city_id in enumerate(registry.ids):
            rows.append((city_id, pd.Timestamp(day), float(u[d, c]), float(v[d, c])))
    return WindSampleTable(pd.DataFrame(rows, columns=["location_id", "date", "u", "v"]))


def _trade(config: SynthConfig, registry: CityRegistry) -> pd.DataFrame:
    rng = _rng(config, TRADE)
    products = [f"P{j + 1:02d}" for j in range(config.n_products)]
    rows = []
    for city_id in registry.ids:
        active = rng.uniform(size=config.n_products) < 0.6
        active[rng.integers(config.n_products)] = True
        scale = rng.lognormal(10.0, 1.0, size=config.n_products)
        for year in config.years:
            drift = rng.lognormal(0.0, 0.2, size=config.n_products)
            for j, product in enumerate(products):
                value = float(round(scale[j] * drift[j], 2)) if active[j] else 0.0
                rows.append((city_id, product, year, value))
    return pd.DataFrame(rows, columns=["region_id", "product_id", "year", "export_value"])


def _imports(config: SynthConfig) -> pd.DataFrame:
    rng = _rng(config, IMPORTS)
    years = list(range(config.first_year, config.first_year + config.n_years + config.iv_horizon))
    rows = []
    for j in range(config.n_products):
        level = 5.0 + np.cumsum(rng.normal(0.0, 0.3, size=len(years)))
        for year, value in zip(years, np.exp(level)):
            rows.append((f"P{j + 1:02d}", year, float(round(value, 4))))
    return pd.DataFrame(rows, columns=["product_id", "year", "import_value"])


def _population(registry: CityRegistry) -> pd.DataFrame:
    return registry.population_frame().rename(columns={"city_id": "region_id"})


def _panel(config: SynthConfig, registry: CityRegistry, trade: pd.DataFrame, imports: pd.DataFrame,
           population: pd.DataFrame) -> PanelTable:
    iv_years = [y for y in config.years if y - config.iv_horizon >= config.first_year]
    if not iv_years:
        logger.warning("No instrument years: n_years=%d is not longer than iv_horizon=%d",
                       config.n_years, config.iv_horizon)
    iv = build_iv_panel(trade, imports, population, iv_years, config.iv_horizon)
    rng = _rng(config, PANEL)
    n = len(iv)
    values = iv["iv"].to_numpy(dtype=float)
    sd = values.std()
    iv_std = (values - values.mean()) / sd if sd > 0 else np.zeros(n)
    confounder = rng.normal(size=n)
    d_export = config.first_stage * iv_std + config.confounding * confounder + config.noise_sd * rng.normal(size=n)
    macro = {c: f"M{i % config.n_macro_regions + 1}" for i, c in enumerate(registry.ids)}
    macro_effect = {f"M{k + 1}": e for k, e in enumerate(rng.normal(size=config.n_macro_regions))}
    macro_region = iv["region_id"].map(macro)
    d_forest = (config.trade_effect * d_export + config.confounding * confounder
                + macro_region.map(macro_effect).to_numpy() + config.noise_sd * rng.normal(size=n))
    weight = rng.uniform(0.5, 1.5, size=n)
    frame = pd.DataFrame({
        "region_id": iv["region_id"].astype(str),
        "macro_region": macro_region,
        "year": iv["year"].astype(int),
        "d_forest": d_forest,
        "d_export": d_export,
        "iv": values,
        "weight": weight,
        "pre_forest_share": rng.uniform(0.2, 0.9, size=n),
        "pre_pop_growth": rng.normal(0.01, 0.005, size=n),
    })
    return PanelTable(frame, dict(PANEL_ROLES))


def _forest(config: SynthConfig, registry: CityRegistry) -> Tuple[pd.DataFrame, pd.DataFrame]:
    rng = _rng(config, FOREST)
    land = rng.uniform(5e4, 5e5, size=len(registry))
    cover = rng.uniform(0.4, 0.8, size=len(registry))
    years = _all_years(config)
    rows = []
    for i, city_id in enumerate(registry.ids):
        for t, year in enumerate(years):
            share = cover[i] - 0.01 * t + rng.normal(0.0, 0.02)
            rows.append((city_id, year, float(round(land[i] * min(max(share, 0.0), 1.0), 2))))
    forest = pd.DataFrame(rows, columns=["region_id", "year", "forest"])
    land_frame = pd.DataFrame({"region_id": registry.ids, "land": np.round(land, 2)})
    return forest, land_frame


def _outcomes(config: SynthConfig, registry: CityRegistry) -> pd.DataFrame:
    rng = _rng(config, OUTCOMES)
    months = _outcome_months(config)
    level = rng.normal(size=len(registry))
    rows = []
    for i, city_id in enumerate(registry.ids):
        noise = rng.normal(0.0, config.noise_sd, size=len(months))
        for m, month in enumerate(months):
            rows.append((city_id, month, float(level[i] + noise[m])))
    return pd.DataFrame(rows, columns=["receiver_id", "period", "outcome"])


def _trade_shock(config: SynthConfig, registry: CityRegistry) -> pd.DataFrame:
    rng = _rng(config, SHOCK)
    return pd.DataFrame({"sender_id": registry.ids, "delta_trade": np.round(rng.uniform(0.0, 2.0, len(registry)), 4)})


def generate_data(config: SynthConfig) -> SyntheticData:
    """
    Generate every synthetic table.

    Raises:
        InvalidConfig: invalid configuration
    """
    config.validate()
    registry = _cities(config)
    wind = _wind(config, registry)
    trade = _trade(config, registry)
    imports = _imports(config)
    population = _population(registry)
    panel = _panel(config, registry, trade, imports, population)
    forest, land = _forest(config, registry)
    logger.debug("Generated %d cities, %d wind rows, %d panel rows", len(registry), len(wind), len(panel))
    return SyntheticData(
        config=config,
        registry=registry,
        wind=wind,
        panel=panel,
        trade=trade,
        imports=imports,
        population=population,
        forest=forest,
        land=land,
        outcomes=_outcomes(config, registry),
        trade_shock=_trade_shock(config, registry),
    )


def generate_synthetic(config: SynthConfig) -> Tuple[CityRegistry, WindSampleTable, PanelTable]:
    """Registry, wind samples and estimation panel for a configuration."""
    data = generate_data(config)
    return data.registry, data.wind, data.panel


def plant_downwind_effect(panel: pd.DataFrame, exposure: str, effect: float, seed: int,
                          bin_label: str = "1st", noise_sd: float = 1.0, outcome: str = "outcome",
                          bin_column: str = "bin") -> pd.DataFrame:
    """
    Replace ``outcome`` with effect * exposure in ``bin_label`` months plus
    pair-month-of-year and year levels and Gaussian noise.
    """
    rng = np.random.default_rng([int(seed), OUTCOMES])
    frame = panel.copy()
    cell = frame["sender_id"].astype(str) + "|" + frame["receiver_id"].astype(str) + "|" + frame["month"].astype(str)
    cell_codes, cells = pd.factorize(cell, sort=True)
    year_codes, years = pd.factorize(frame["year"], sort=True)
    cell_level = rng.normal(size=len(cells))
    year_level = rng.normal(size=len(years))
    signal = effect * frame[exposure].astype(float) * (frame[bin_column].astype(str) == bin_label)
    frame[outcome] = (signal.to_numpy() + cell_level[cell_codes] + year_level[year_codes]
                      + rng.normal(0.0, noise_sd, size=len(frame)))
    return frame


def bundle_frames(data: SyntheticData) -> Dict[str, pd.DataFrame]:
    """Artifact name -> frame for every table except the panel."""
    return {
        "cities.csv": city_registry_frame(data.registry),
        "wind.csv": wind_samples_frame(data.wind),
        "trade.csv": data.trade,
        "imports.csv": data.imports,
        "population.csv": data.population,
        "forest.csv": data.forest,
        "land.csv": data.land,
        "outcomes.csv": data.outcomes,
        "trade_shock.csv": data.trade_shock,
    }
