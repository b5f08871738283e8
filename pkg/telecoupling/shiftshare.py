"""
Shift-share instrument construction and its diagnostics.

The instrument for region i in year t combines base-year export shares
(year t - h) with Davis-Haltiwanger growth of world import demand per
product over [t, t + h], scaled by base-year exports per capita.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .econometrics import DesignSpec, FitResult, fit, ols
from .errors import EstimationError, InputError, SpecificationError


logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 4
PLACEBO_VARIANCE = 5.0
DEFAULT_LEVELS = (0.05, 0.01)


class BothZero(SpecificationError):
    """Raised when a growth rate is requested between two zero values."""
    pass


class ZeroBaseExports(EstimationError):
    """Raised when a region has no exports in the base year."""
    pass


class MissingYear(InputError):
    """Raised when a required year is absent from a series."""
    pass


class ZeroPopulation(InputError):
    """Raised when an exporting region has zero base-year population."""
    pass


class ZeroDenominator(InputError):
    """Raised when a long-difference denominator is zero."""
    pass


class InvalidReps(SpecificationError):
    """Raised when a placebo run asks for fewer than one replication."""
    pass


class OutOfRangeP(SpecificationError):
    """Raised when a p-value lies outside [0, 1]."""
    pass


def dh_growth(v_start: float, v_end: float) -> float:
    """
    Davis-Haltiwanger growth: change over the midpoint average, in [-2, 2].

    Raises:
        BothZero: both values are zero
    """
    if v_start < 0 or v_end < 0:
        raise SpecificationError(f"Growth inputs must be >= 0, got ({v_start}, {v_end})")
    if v_start == 0 and v_end == 0:
        raise BothZero("Growth is undefined when start and end are both zero")
    return (v_end - v_start) / ((v_end + v_start) / 2.0)


def _dh_growth_array(start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Vectorized growth; pairs that are zero at both ends get 0."""
    midpoint = (start + end) / 2.0
    return np.divide(end - start, midpoint, out=np.zeros_like(midpoint, dtype=float), where=midpoint > 0)


def build_shares(trade: pd.DataFrame, region: str, base_year: int) -> Dict[str, float]:
    """
    Product shares of a region's base-year exports.

    Raises:
        ZeroBaseExports: the region exported nothing in base_year
    """
    rows = trade.loc[(trade["region_id"].astype(str) == str(region)) & (trade["year"] == base_year)]
    total = float(rows["export_value"].sum())
    if not total > 0:
        raise ZeroBaseExports(f"Region '{region}' has no exports in {base_year}")
    by_product = rows.groupby("product_id", sort=True)["export_value"].sum()
    return {str(p): float(v) / total for p, v in by_product.items() if v > 0}


def import_shifts(imports: pd.DataFrame, products: Sequence[str], window: Tuple[int, int]) -> np.ndarray:
    """
    Growth of world imports per product over ``window``.

    Raises:
        MissingYear: a product lacks a value at either end of the window
    """
    start_year, end_year = window
    table = imports.assign(product_id=imports["product_id"].astype(str)).set_index(["product_id", "year"])["import_value"]
    start, end = [], []
    for product in products:
        for year, sink in ((start_year, start), (end_year, end)):
            try:
                sink.append(float(table.loc[(product, year)]))
            except KeyError:
                raise MissingYear(f"No world imports for product '{product}' in {year}")
    start_arr, end_arr = np.array(start), np.array(end)
    flat = (start_arr == 0) & (end_arr == 0)
    if flat.any():
        logger.debug("%d product(s) with zero imports at both ends get a zero shift", int(flat.sum()))
    return _dh_growth_array(start_arr, end_arr)


@dataclass
class ShiftShareDesign:
    """
    Share matrix and exposure vector for one instrument year.

    ``iv(shocks)`` evaluates shares @ shocks * exposure, so placebo draws
    only need a new shock vector.
    """

    year: int
    horizon: int
    regions: List[str]
    products: List[str]
    shares: np.ndarray
    exposure: np.ndarray
    zero_base: List[str] = field(default_factory=list)

    @property
    def base_year(self) -> int:
        return self.year - self.horizon

    @classmethod
    def from_inputs(cls, trade: pd.DataFrame, population: pd.DataFrame, year: int,
                    horizon: int = DEFAULT_HORIZON, regions: Optional[Sequence[str]] = None) -> "ShiftShareDesign":
        """
        Raises:
            MissingYear: no base-year population for an exporting region
            ZeroPopulation: base-year population of an exporting region is 0
        """
        if horizon < 1:
            raise SpecificationError("horizon must be >= 1")
        base_year = year - horizon
        trade = trade.assign(region_id=trade["region_id"].astype(str), product_id=trade["product_id"].astype(str))
        regions = sorted(set(trade["region_id"])) if regions is None else [str(r) for r in regions]
        base = trade.loc[(trade["year"] == base_year) & (trade["export_value"] > 0)]
        products = sorted(set(base["product_id"]))
        pop = population.assign(region_id=population["region_id"].astype(str)) \
            .set_index(["region_id", "year"])["population"]

        shares = np.zeros((len(regions), len(products)))
        exposure = np.zeros(len(regions))
        column = {p: j for j, p in enumerate(products)}
        zero_base = []
        for i, region in enumerate(regions):
            try:
                region_shares = build_shares(base, region, base_year)
            except ZeroBaseExports:
                zero_base.append(region)
                continue
            for product, share in region_shares.items():
                shares[i, column[product]] = share
            try:
                people = float(pop.loc[(region, base_year)])
            except KeyError:
                raise MissingYear(f"No population for region '{region}' in {base_year}")
            if not people > 0:
                raise ZeroPopulation(f"Region '{region}' has zero population in {base_year}")
            total = float(base.loc[base["region_id"] == region, "export_value"].sum())
            exposure[i] = total / people
        if zero_base:
            logger.info("%d region(s) without %d exports get IV = 0: %s",
                        len(zero_base), base_year, ", ".join(zero_base[:10]))
        return cls(year, horizon, regions, products, shares, exposure, zero_base)

    def iv(self, shocks: np.ndarray) -> np.ndarray:
        return (self.shares @ np.asarray(shocks, dtype=float)) * self.exposure

    def herfindahl(self) -> pd.Series:
        """Share concentration per region (0 for regions without base exports)."""
        return pd.Series((self.shares ** 2).sum(axis=1), index=self.regions, name="herfindahl")


def build_iv(trade: pd.DataFrame, imports: pd.DataFrame, population: pd.DataFrame, year: int,
             horizon: int = DEFAULT_HORIZON, window: Optional[Tuple[int, int]] = None) -> pd.DataFrame:
    """
    Shift-share exposure to world demand for every region in one year.

    Args:
        trade: region_id, product_id, year, export_value
        imports: product_id, year, import_value
        population: region_id, year, population
        year: instrument year t (shares from t - horizon)
        horizon: base-year lag and default shock window length
        window: shock window; defaults to (year, year + horizon)

    Returns:
        Frame (region_id, year, iv) sorted by region
    """
    design = ShiftShareDesign.from_inputs(trade, population, year, horizon)
    shifts = import_shifts(imports, design.products, window or (year, year + horizon))
    return pd.DataFrame({"region_id": design.regions, "year": year, "iv": design.iv(shifts)})


def build_iv_panel(trade: pd.DataFrame, imports: pd.DataFrame, population: pd.DataFrame,
                   years: Iterable[int], horizon: int = DEFAULT_HORIZON) -> pd.DataFrame:
    frames = [build_iv(trade, imports, population, y, horizon) for y in sorted(years)]
    if not frames:
        return pd.DataFrame(columns=["region_id", "year", "iv"])
    return pd.concat(frames, ignore_index=True)


def long_difference(series: pd.DataFrame, horizon: int = DEFAULT_HORIZON,
                    denom: Optional[pd.DataFrame] = None, value_column: str = "value",
                    denom_column: Optional[str] = None) -> pd.DataFrame:
    """
    h-year differences per region.

    Without ``denom`` the result is value[y+h] - value[y]. With ``denom``
    (region_id[, year], value) it is the change over denom[y] in percentage
    points.

    Returns:
        Frame (region_id, year, diff), year being the start of the window

    Raises:
        MissingYear: a region lacks y or y+h inside the observed span
        ZeroDenominator: denom[y] is zero
    """
    if horizon < 1:
        raise SpecificationError("horizon must be >= 1")
    frame = series.assign(region_id=series["region_id"].astype(str))
    years = sorted(frame["year"].unique())
    if not years or years[0] + horizon > years[-1]:
        raise MissingYear(f"Series spans {years[:1]}..{years[-1:]}: too short for a {horizon}-year difference")
    starts = [y for y in years if y + horizon <= years[-1]]
    values = frame.set_index(["region_id", "year"])[value_column]

    if denom is not None:
        denom_column = denom_column or value_column
        denom = denom.assign(region_id=denom["region_id"].astype(str))
        per_year = "year" in denom.columns
        base = denom.set_index(["region_id", "year"] if per_year else "region_id")[denom_column]

    rows = []
    for region in sorted(frame["region_id"].unique()):
        for y in starts:
            try:
                start, end = float(values.loc[(region, y)]), float(values.loc[(region, y + horizon)])
            except KeyError:
                raise MissingYear(f"Region '{region}' lacks {y} or {y + horizon}")
            diff = end - start
            if denom is not None:
                try:
                    d = float(base.loc[(region, y)] if per_year else base.loc[region])
                except KeyError:
                    raise MissingYear(f"No denominator for region '{region}' in {y}")
                if d == 0:
                    raise ZeroDenominator(f"Denominator is zero for region '{region}' in {y}")
                diff = 100.0 * diff / d
            rows.append((region, int(y), diff))
    return pd.DataFrame(rows, columns=["region_id", "year", "diff"])


def draw_placebo_shocks(products: Sequence[str], seed: int, rep: Optional[int] = None,
                        year: Optional[int] = None) -> pd.Series:
    """
    I.i.d. Normal(0, variance 5) shocks per product.

    ``rep`` and ``year`` select an independent stream derived from
    (seed, rep, year); with neither the stream is the seed's own.
    """
    if seed is None:
        raise SpecificationError("Placebo shocks need an explicit seed")
    stream = [int(s) for s in (rep, year) if s is not None]
    rng = np.random.default_rng([int(seed), *stream] if stream else seed)
    draws = rng.normal(0.0, math.sqrt(PLACEBO_VARIANCE), size=len(products))
    return pd.Series(draws, index=[str(p) for p in products], dtype=float, name="shock")


@dataclass
class PlaceboResult:
    """Outcome of a placebo-shock run."""

    rates: Dict[float, float]
    coefficients: np.ndarray
    pvalues: np.ndarray
    reps: int
    seed: int
    term: str

    def to_dict(self) -> dict:
        return {
            "reps": self.reps,
            "seed": self.seed,
            "term": self.term,
            "rejection_rates": {f"{level:g}": rate for level, rate in sorted(self.rates.items())},
            "coefficient_mean": float(np.nanmean(self.coefficients)) if self.reps else None,
            "coefficient_sd": float(np.nanstd(self.coefficients)) if self.reps else None,
        }


def reduced_form(spec: DesignSpec, iv_column: str = "iv") -> DesignSpec:
    """
    The design with ``iv_column`` as a regressor and no instrumented terms.

    Outcome, fixed effects, weights, clustering and the remaining exogenous
    regressors carry over unchanged.

    Raises:
        SpecificationError: iv_column is neither a regressor nor an instrument of spec
    """
    if iv_column not in spec.exog and iv_column not in spec.instruments:
        raise SpecificationError(f"IV column '{iv_column}' is neither a regressor nor an instrument of the design")
    others = tuple(c for c in spec.exog if c != iv_column)
    return replace(spec, exog=(iv_column,) + others, endog=(), instruments=())


def placebo_rejection(panel: pd.DataFrame, designs: Mapping[int, ShiftShareDesign], spec: DesignSpec,
                      seed: int, reps: int = 1000, levels: Sequence[float] = DEFAULT_LEVELS,
                      iv_column: str = "iv", region_column: str = "region_id", year_column: str = "year",
                      threads: int = 1) -> PlaceboResult:
    """
    Rejection rates of the design when the real shifts are replaced by noise.

    Each replication draws one shock vector per instrument year from the
    stream (seed, rep, year), rebuilds ``iv_column`` through the precomputed
    designs, fits the reduced form of ``spec`` (outcome on ``iv_column``)
    and records the p-value of ``iv_column``. Replications are independent
    of scheduling.

    Args:
        panel: estimation panel with region and year columns
        designs: instrument year -> ShiftShareDesign
        spec: the estimation design; an IV design is fitted in reduced form

    Raises:
        InvalidReps: reps < 1
    """
    if reps < 1:
        raise InvalidReps(f"reps must be >= 1, got {reps}")
    if seed is None:
        raise SpecificationError("Placebo runs need an explicit seed")
    reduced = reduced_form(spec, iv_column)
    years = sorted(designs)
    row_year = panel[year_column].astype(int).to_numpy()
    row_region = panel[region_column].astype(str).to_numpy()
    lookups = []
    for year in years:
        mask = row_year == year
        position = {r: i for i, r in enumerate(designs[year].regions)}
        missing = sorted({r for r in row_region[mask] if r not in position})
        if missing:
            raise MissingYear(f"Regions without a {year} shift-share design: {', '.join(missing[:5])}")
        lookups.append((year, mask, np.array([position[r] for r in row_region[mask]], dtype=int)))
    if not any(mask.any() for _, mask, _ in lookups):
        raise MissingYear("No panel rows fall in the design years")

    def replicate(rep: int) -> Tuple[float, float]:
        values = np.full(len(panel), np.nan)
        for year, mask, index in lookups:
            design = designs[year]
            shocks = draw_placebo_shocks(design.products, seed, rep=rep, year=year)
            values[mask] = design.iv(shocks.to_numpy())[index]
        frame = panel.assign(**{iv_column: values}).loc[~np.isnan(values)]
        result = fit(frame, reduced)
        return result.coefficient(iv_column), result.pvalue(iv_column)

    if threads <= 1:
        outcomes = [replicate(rep) for rep in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(replicate, range(reps)))
    coefs = np.array([c for c, _ in outcomes])
    pvalues = np.array([p for _, p in outcomes])
    rates = {float(level): float(np.mean(pvalues < level)) for level in levels}
    logger.info("Placebo rejection rates over %d reps: %s", reps, rates)
    return PlaceboResult(rates, coefs, pvalues, reps, int(seed), iv_column)


def fdr_adjust(pvalues: Sequence[float]) -> np.ndarray:
    """
    Benjamini-Hochberg step-up q-values in input order.

    Raises:
        OutOfRangeP: a p-value outside [0, 1]
    """
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return p
    if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
        raise OutOfRangeP("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    stepped = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(stepped, 1.0)
    return q


BALANCE_COLUMNS = ["characteristic", "coef", "se", "t", "p", "q", "n_obs"]


def balance_test(panel: pd.DataFrame, characteristics: Sequence[str], iv_column: str,
                 spec: Optional[DesignSpec] = None, threads: int = 1) -> pd.DataFrame:
    """
    Regress each pre-shock characteristic on the instrument.

    ``spec`` supplies fixed effects, clustering, weights and controls; its
    outcome and regressors are replaced per characteristic. q-values are
    Benjamini-Hochberg over the p column.
    """
    if not characteristics:
        return pd.DataFrame(columns=BALANCE_COLUMNS)
    template = spec or DesignSpec(outcome=characteristics[0], exog=(iv_column,))
    controls = tuple(c for c in template.exog if c != iv_column)

    def one(characteristic: str) -> Tuple:
        design = DesignSpec(**{**template.to_dict(), "outcome": characteristic,
                               "exog": (iv_column,) + controls, "endog": (), "instruments": ()})
        result: FitResult = ols(panel, design)
        k = result.names.index(iv_column) if iv_column in result.names else None
        if k is None:
            return characteristic, math.nan, math.nan, math.nan, math.nan, result.n_obs
        return (characteristic, float(result.coef[k]), float(result.std_errors[k]),
                float(result.tstats[k]), float(result.pvalues[k]), result.n_obs)

    if threads <= 1:
        rows = [one(c) for c in characteristics]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, characteristics))
    table = pd.DataFrame(rows, columns=["characteristic", "coef", "se", "t", "p", "n_obs"])
    finite = table["p"].notna()
    table["q"] = np.nan
    if finite.any():
        table.loc[finite, "q"] = fdr_adjust(table.loc[finite, "p"].to_numpy())
    return table[BALANCE_COLUMNS]


def herfindahl(design: ShiftShareDesign) -> pd.Series:
    """Per-region Herfindahl index of base-year export shares."""
    return design.herfindahl()
