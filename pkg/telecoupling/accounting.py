"""
Damage accounting: trade-induced forest loss, downwind excess deaths and
their monetized value.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .econometrics import MissingBin, ZeroVariance
from .errors import InputError, SpecificationError
from .models import CityRegistry, MissingPopulation


logger = logging.getLogger(__name__)

PER_POPULATION = 100_000.0
SCOPES = ("pooled", "per-sender")


class ZeroExports(SpecificationError):
    """Raised when a damage ratio is requested against zero exports."""
    pass


class EmptyCoefficients(SpecificationError):
    """Raised when a coefficient table has no usable entries."""
    pass


class MissingExposure(InputError):
    """Raised when a sender-year has no forest-loss value."""
    pass


class InvalidAccountingInput(SpecificationError):
    """Raised when an accounting parameter is out of range."""
    pass


@dataclass(frozen=True)
class CoefficientTable:
    """Mortality coefficient per bin (deaths per 100,000 per SD of forest loss)."""

    coefficients: Mapping[str, float]

    def __post_init__(self):
        coefs = {str(k): float(v) for k, v in self.coefficients.items()}
        if not coefs:
            raise EmptyCoefficients("Coefficient table is empty")
        bad = [k for k, v in coefs.items() if not math.isfinite(v)]
        if bad:
            raise EmptyCoefficients(f"Non-finite coefficient(s) for bin(s): {', '.join(bad)}")
        if "calm" not in coefs:
            raise EmptyCoefficients("Coefficient table needs a 'calm' entry (it may be 0)")
        object.__setattr__(self, "coefficients", coefs)

    def __getitem__(self, label: str) -> float:
        try:
            return self.coefficients[label]
        except KeyError:
            raise MissingBin(f"No coefficient for bin '{label}'")

    def __contains__(self, label: object) -> bool:
        return label in self.coefficients

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, bin_column: str = "bin", coef_column: str = "coef") -> "CoefficientTable":
        """Build from a bin coefficient table (bin,coef,...)."""
        if frame.empty:
            raise EmptyCoefficients("Coefficient table is empty")
        missing = [c for c in (bin_column, coef_column) if c not in frame.columns]
        if missing:
            raise EmptyCoefficients(f"Coefficient table lacks column(s): {', '.join(missing)}")
        values = pd.to_numeric(frame[coef_column], errors="coerce")
        return cls(dict(zip(frame[bin_column].astype(str), values.astype(float))))


@dataclass(frozen=True)
class VslParams:
    """Value-of-statistical-life transfer inputs (USD)."""

    base_vsl: float = 2.3e6
    transfer_elasticity: float = 1.2
    income_ratio: float = 7.0
    override_vsl: Optional[float] = 0.7e6

    def __post_init__(self):
        if not (self.base_vsl > 0 and self.income_ratio > 0):
            raise InvalidAccountingInput("base_vsl and income_ratio must be > 0")
        if not self.transfer_elasticity >= 0:
            raise InvalidAccountingInput("transfer_elasticity must be >= 0")
        if self.override_vsl is not None and not self.override_vsl > 0:
            raise InvalidAccountingInput("override_vsl must be > 0 when set")

    def to_dict(self) -> dict:
        return {
            "base_vsl": self.base_vsl,
            "transfer_elasticity": self.transfer_elasticity,
            "income_ratio": self.income_ratio,
            "override_vsl": self.override_vsl,
        }


def standardize_loss(forest: pd.DataFrame, scope: str = "pooled", value_column: str = "forest",
                     sender_column: str = "sender_id") -> pd.DataFrame:
    """
    Forest loss in standard-deviation units: z = -(forest - mean) / sd.

    Population standard deviation, over the pooled panel or within sender.

    Returns:
        Frame (sender_id, year, z_loss, mean, sd) in input order

    Raises:
        ZeroVariance: no variation within the scope
    """
    if scope not in SCOPES:
        raise InvalidAccountingInput(f"scope must be one of: {', '.join(SCOPES)}")
    frame = forest.rename(columns={"region_id": sender_column})
    values = frame[value_column].astype(float)
    if scope == "pooled":
        mean = pd.Series(values.mean(), index=frame.index)
        sd = pd.Series(values.std(ddof=0), index=frame.index)
    else:
        grouped = values.groupby(frame[sender_column])
        mean = grouped.transform("mean")
        sd = grouped.transform(lambda s: s.std(ddof=0))
    flat = ~(sd > 0)
    if flat.any():
        where = "pooled panel" if scope == "pooled" else f"sender '{frame.loc[flat, sender_column].iloc[0]}'"
        raise ZeroVariance(f"Forest series has zero variance in {where}")
    return pd.DataFrame({
        "sender_id": frame[sender_column].astype(str),
        "year": frame["year"].astype(int),
        "z_loss": -(values - mean) / sd,
        "mean": mean,
        "sd": sd,
    })


def trade_deforestation(delta_trade: float, beta_trade: float, land: float) -> float:
    """
    Hectares lost to a trade shock: |beta| / 100 * delta_trade * land.

    ``beta_trade`` is in percentage points of land per unit of trade; a
    positive coefficient implies no loss and yields 0 with a warning.
    """
    if not land > 0:
        raise InvalidAccountingInput(f"land must be > 0, got {land}")
    if beta_trade > 0:
        logger.warning("Positive trade coefficient %.4g implies forest gain; deforestation set to 0", beta_trade)
        return 0.0
    return abs(beta_trade) / 100.0 * delta_trade * land


def hectares_to_sd(hectares: float, sd: float) -> float:
    """Hectares of loss expressed in SD units of the estimation standardization."""
    if not sd > 0:
        raise ZeroVariance("Forest standard deviation must be > 0")
    return hectares / sd


def _population_table(population: Union[CityRegistry, pd.DataFrame]) -> pd.Series:
    frame = population.population_frame() if isinstance(population, CityRegistry) else population
    frame = frame.rename(columns={"city_id": "receiver_id", "region_id": "receiver_id"})
    frame = frame.assign(receiver_id=frame["receiver_id"].astype(str), year=frame["year"].astype(int))
    return frame.set_index(["receiver_id", "year"])["population"].astype(float)


def death_cells(binned: pd.DataFrame, z_loss: pd.DataFrame, coefs: CoefficientTable,
                population: Union[CityRegistry, pd.DataFrame]) -> pd.DataFrame:
    """
    Per (sender, receiver, month) excess deaths.

    Args:
        binned: sender_id, receiver_id, period (YYYY-MM), bin
        z_loss: sender_id, z_loss and optionally year (a row without year
            applies to every year)
        coefs: bin coefficients
        population: registry or (receiver_id|city_id, year, population)

    Returns:
        binned plus year, coef, z_loss, population and deaths columns

    Raises:
        MissingBin, MissingPopulation, MissingExposure
    """
    cells = binned.copy()
    cells["sender_id"] = cells["sender_id"].astype(str)
    cells["receiver_id"] = cells["receiver_id"].astype(str)
    cells["year"] = cells["period"].astype(str).str.slice(0, 4).astype(int)
    if cells["bin"].isna().any():
        raise MissingBin(f"{int(cells['bin'].isna().sum())} pair-month(s) without a bin")
    unknown = sorted(set(cells["bin"].astype(str)) - set(coefs.coefficients))
    if unknown:
        raise MissingBin(f"No coefficient for bin(s): {', '.join(unknown)}")
    cells["coef"] = cells["bin"].astype(str).map(coefs.coefficients).astype(float)

    exposure = z_loss.rename(columns={"region_id": "sender_id"})
    exposure = exposure.assign(sender_id=exposure["sender_id"].astype(str))
    if "year" in exposure.columns:
        exposure = exposure.assign(year=exposure["year"].astype(int))
        cells = cells.merge(exposure[["sender_id", "year", "z_loss"]], on=["sender_id", "year"], how="left")
    else:
        cells = cells.merge(exposure[["sender_id", "z_loss"]], on="sender_id", how="left")
    lacking = cells["z_loss"].isna()
    if lacking.any():
        first = cells.loc[lacking].iloc[0]
        raise MissingExposure(f"No forest loss for sender '{first['sender_id']}' in {first['year']}")

    pop = _population_table(population)
    keys = list(zip(cells["receiver_id"], cells["year"]))
    absent = [k for k in keys if k not in pop.index]
    if absent:
        raise MissingPopulation(f"No population for receiver '{absent[0][0]}' in {absent[0][1]}")
    cells["population"] = pop.reindex(pd.MultiIndex.from_tuples(keys)).to_numpy(dtype=float)
    cells["deaths"] = cells["coef"] * cells["z_loss"] * cells["population"] / PER_POPULATION
    return cells


def excess_deaths(sender: str, z_loss: pd.DataFrame, binned: pd.DataFrame, coefs: CoefficientTable,
                  population: Union[CityRegistry, pd.DataFrame]) -> float:
    """Excess deaths caused downwind by one sender, summed over receivers and months."""
    rows = binned.loc[binned["sender_id"].astype(str) == str(sender)]
    if rows.empty:
        return 0.0
    return math.fsum(death_cells(rows, z_loss, coefs, population)["deaths"])


def vsl_value(params: VslParams) -> float:
    """
    VSL used for monetization.

    Returns the override when set; otherwise base * ratio^(-elasticity),
    which is flagged because it does not reproduce the default override.
    """
    if params.override_vsl is not None:
        return float(params.override_vsl)
    value = params.base_vsl * params.income_ratio ** (-params.transfer_elasticity)
    if params.transfer_elasticity > 0:
        logger.warning("Formula VSL %.4g differs from the default override of %.4g; check transfer inputs",
                       value, VslParams().override_vsl)
    return value


def monetize(deaths: float, vsl: float) -> float:
    """Monetized loss; net deaths may be negative, vsl may not."""
    if not vsl >= 0:
        raise InvalidAccountingInput(f"vsl must be >= 0, got {vsl}")
    return deaths * vsl


def damage_ratio(loss: float, export_total: float) -> float:
    """Loss per unit of exports."""
    if not export_total > 0:
        raise ZeroExports("Export total must be > 0")
    return loss / export_total


def implied_export_total(loss: float, ratio: float) -> float:
    """Export base implied by a loss and a damage ratio."""
    if not ratio > 0:
        raise InvalidAccountingInput("ratio must be > 0")
    return loss / ratio


@dataclass
class DamageLedger:
    """Per-sender and per-receiver damage accounts with national totals."""

    senders: pd.DataFrame
    receivers: pd.DataFrame
    totals: Dict[str, object] = field(default_factory=dict)

    def is_conserved(self, rel: float = 1e-12) -> bool:
        left = math.fsum(self.senders["excess_deaths"])
        right = math.fsum(self.receivers["received_deaths"])
        return math.isclose(left, right, rel_tol=rel, abs_tol=1e-12)

    def to_dict(self) -> dict:
        return {"totals": self.totals, "n_senders": len(self.senders), "n_receivers": len(self.receivers)}


def build_ledger(binned: pd.DataFrame, trade_shock: pd.DataFrame, beta_trade: float, land: pd.DataFrame,
                 forest_sd: pd.DataFrame, coefs: CoefficientTable,
                 population: Union[CityRegistry, pd.DataFrame], vsl: VslParams,
                 export_total: Optional[float] = None) -> DamageLedger:
    """
    Chain a trade shock through deforestation to downwind deaths and money.

    Args:
        binned: sender_id, receiver_id, period, bin
        trade_shock: sender_id, delta_trade[, year]
        beta_trade: forest coefficient (pp of land per unit of trade)
        land: sender_id, land (hectares)
        forest_sd: sender_id, sd (hectares) from the estimation standardization
        coefs: bin mortality coefficients
        population: receiver populations
        vsl: VSL inputs
        export_total: optional export base for the damage ratio
    """
    shock = trade_shock.rename(columns={"region_id": "sender_id"})
    shock = shock.assign(sender_id=shock["sender_id"].astype(str))
    key = ["sender_id", "year"] if "year" in shock.columns else ["sender_id"]
    if shock.duplicated(subset=key).any():
        raise InvalidAccountingInput(f"Trade shock rows must be unique by {', '.join(key)}")
    land_by_sender = land.rename(columns={"region_id": "sender_id"}).assign(
        sender_id=lambda f: f["sender_id"].astype(str)).set_index("sender_id")["land"].astype(float)
    sd_by_sender = forest_sd.rename(columns={"region_id": "sender_id"}).assign(
        sender_id=lambda f: f["sender_id"].astype(str)).groupby("sender_id")["sd"].first().astype(float)

    hectares, z_units = [], []
    for row in shock.itertuples(index=False):
        if row.sender_id not in land_by_sender.index:
            raise MissingExposure(f"No land area for sender '{row.sender_id}'")
        if row.sender_id not in sd_by_sender.index:
            raise MissingExposure(f"No forest standard deviation for sender '{row.sender_id}'")
        ha = trade_deforestation(float(row.delta_trade), beta_trade, float(land_by_sender[row.sender_id]))
        hectares.append(ha)
        z_units.append(hectares_to_sd(ha, float(sd_by_sender[row.sender_id])))
    shock = shock.assign(deforestation_ha=hectares, z_loss=z_units)

    senders = sorted(set(shock["sender_id"]))
    cells = binned.loc[binned["sender_id"].astype(str).isin(senders)]
    cells = death_cells(cells, shock, coefs, population) if len(cells) else cells.assign(deaths=np.zeros(0))
    value = vsl_value(vsl)

    sender_rows = []
    for sender in senders:
        mine = shock.loc[shock["sender_id"] == sender]
        deaths = cells.loc[cells["sender_id"].astype(str) == sender, "deaths"].to_numpy(dtype=float)
        net = math.fsum(deaths)
        sender_rows.append({
            "sender_id": sender,
            "trade_shock": math.fsum(mine["delta_trade"].astype(float)),
            "deforestation_ha": math.fsum(mine["deforestation_ha"]),
            "z_loss": math.fsum(mine["z_loss"]),
            "excess_deaths": net,
            "gross_positive_deaths": math.fsum(deaths[deaths > 0]),
            "monetized_loss": monetize(net, value),
        })
    sender_frame = pd.DataFrame(sender_rows, columns=[
        "sender_id", "trade_shock", "deforestation_ha", "z_loss", "excess_deaths",
        "gross_positive_deaths", "monetized_loss"])

    receiver_rows = [
        {"receiver_id": r, "received_deaths": math.fsum(group["deaths"].to_numpy(dtype=float))}
        for r, group in cells.groupby(cells["receiver_id"].astype(str), sort=True)
    ]
    receiver_frame = pd.DataFrame(receiver_rows, columns=["receiver_id", "received_deaths"])

    total_deaths = math.fsum(cells["deaths"].to_numpy(dtype=float)) if len(cells) else 0.0
    loss = monetize(total_deaths, value)
    totals = {
        "deforestation_ha": math.fsum(sender_frame["deforestation_ha"]),
        "excess_deaths": total_deaths,
        "gross_positive_deaths": math.fsum(sender_frame["gross_positive_deaths"]),
        "vsl": value,
        "vsl_source": "override" if vsl.override_vsl is not None else "formula",
        "monetized_loss": loss,
        "export_total": export_total,
        "damage_ratio": damage_ratio(loss, export_total) if export_total is not None else None,
    }
    ledger = DamageLedger(sender_frame, receiver_frame, totals)
    if not ledger.is_conserved():
        logger.warning("Sender and receiver death totals disagree beyond rounding")
    return ledger
