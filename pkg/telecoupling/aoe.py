"""
Area-of-effect engine.

A virtual particle leaves each sender city on each emission day and is
advected by the daily wind fields for ``n_steps`` days. At every step the
cities inside a growing search disk around the particle that lie roughly
downwind receive an exponentially decaying score. Step scores are summed
by arrival day and averaged by calendar month; the positive monthly scores
are then cut into deciles.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import EstimationError, InputError, SpecificationError
from .models import CityRegistry
from .windfield import DailyWindGrid, GridSpec, sample_at


logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
SECONDS_PER_DAY = 24 * 3600
MATRIX_COLUMNS = ["sender_id", "receiver_id", "period", "score"]


class InvalidScoreParams(SpecificationError):
    """Raised when score parameters violate their constraints."""
    pass


class UnknownSender(InputError):
    """Raised when a streamline is requested for a city not in the registry."""
    pass


class InsufficientPositiveScores(EstimationError):
    """Raised when too few positive monthly scores exist to form deciles."""
    pass


class NegativeScore(SpecificationError):
    """Raised when a negative score is binned."""
    pass


@dataclass(frozen=True)
class ScoreParams:
    """Decay coefficients, search radius schedule and cutoffs of the score law."""

    alpha: float = 0.8
    beta: float = 0.49
    gamma: float = 0.23
    rad0: float = 2.8
    rad_inc: float = 0.2
    max_offaxis: float = 0.4 * math.pi
    n_steps: int = 7
    calm_speed_eps: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise InvalidScoreParams("Decay coefficients alpha, beta, gamma must all be > 0")
        if self.rad0 <= 0:
            raise InvalidScoreParams("rad0 must be > 0")
        if self.rad_inc < 0:
            raise InvalidScoreParams("rad_inc must be >= 0")
        if not 0 < self.max_offaxis <= math.pi / 2:
            raise InvalidScoreParams("max_offaxis must lie in (0, pi/2]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidScoreParams("n_steps must be an integer >= 1")
        if self.calm_speed_eps < 0:
            raise InvalidScoreParams("calm_speed_eps must be >= 0")

    def radius(self, step: int) -> float:
        """Search radius (degrees) at a step."""
        return self.rad0 + step * self.rad_inc

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "rad0": self.rad0,
            "rad_inc": self.rad_inc,
            "max_offaxis": self.max_offaxis,
            "n_steps": self.n_steps,
            "calm_speed_eps": self.calm_speed_eps,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "ScoreParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidScoreParams(f"Unknown score parameter(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def preset(cls, name: str, **overrides) -> "ScoreParams":
        """Named parameter set, optionally with field overrides."""
        try:
            base = PRESETS[name]
        except KeyError:
            raise InvalidScoreParams(f"Unknown preset '{name}'. Must be one of: {', '.join(PRESETS)}")
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(base, **overrides) if overrides else base


PRESETS: Dict[str, ScoreParams] = {
    "appendix": ScoreParams(),
    "appendix-radian": ScoreParams(max_offaxis=0.4),
    "main-text": ScoreParams(alpha=0.7, beta=0.5, gamma=0.2),
}


@dataclass
class StreamlineState:
    """Position and search radius of a streamline at one step."""

    sender_id: str
    emit_day: date
    step: int
    lon: float
    lat: float
    radius: float


@dataclass(frozen=True)
class RawScore:
    """Score emitted for one receiver at one step of one streamline."""

    sender_id: str
    receiver_id: str
    emit_day: date
    step: int
    value: float

    @property
    def arrival_day(self) -> date:
        return self.emit_day + timedelta(days=self.step)

    def sort_key(self) -> Tuple[str, str, date, int]:
        return self.sender_id, self.receiver_id, self.emit_day, self.step


class WindBin(str, Enum):
    """Downwind intensity bins; "1st" is the strongest decile."""
    CALM = "calm"
    TENTH = "10th"
    NINTH = "9th"
    EIGHTH = "8th"
    SEVENTH = "7th"
    SIXTH = "6th"
    FIFTH = "5th"
    FOURTH = "4th"
    THIRD = "3rd"
    SECOND = "2nd"
    FIRST = "1st"


# weakest to strongest
DECILE_BINS: Tuple[WindBin, ...] = (
    WindBin.TENTH, WindBin.NINTH, WindBin.EIGHTH, WindBin.SEVENTH, WindBin.SIXTH,
    WindBin.FIFTH, WindBin.FOURTH, WindBin.THIRD, WindBin.SECOND, WindBin.FIRST,
)
ALL_BINS: Tuple[WindBin, ...] = (WindBin.CALM,) + DECILE_BINS


@dataclass(frozen=True)
class WindBins:
    """Nine interior decile cut points of the pooled positive monthly scores."""

    cuts: Tuple[float, ...]
    n_positive: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cuts", tuple(float(c) for c in self.cuts))
        if len(self.cuts) != 9:
            raise SpecificationError(f"Expected 9 decile cut points, got {len(self.cuts)}")
        if any(b < a for a, b in zip(self.cuts, self.cuts[1:])):
            raise SpecificationError("Decile cut points must be non-decreasing")

    def to_dict(self) -> dict:
        return {"cuts": list(self.cuts), "n_positive": self.n_positive}

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "WindBins":
        return cls(tuple(data["cuts"]), int(data.get("n_positive", 0)))


@dataclass
class ScoreMatrix:
    """
    Sparse (sender, receiver, period) -> score table.

    ``period`` is an ISO day (YYYY-MM-DD) for daily matrices and YYYY-MM for
    monthly ones; rows are sorted by (sender_id, receiver_id, period).
    """

    frame: pd.DataFrame
    frequency: str = "day"
    period_range: Optional[Tuple[str, str]] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        frame = self.frame.loc[:, MATRIX_COLUMNS] if len(self.frame.columns) else \
            pd.DataFrame(columns=MATRIX_COLUMNS)
        frame = frame.astype({"sender_id": str, "receiver_id": str, "period": str, "score": float})
        self.frame = frame.sort_values(MATRIX_COLUMNS[:3], kind="mergesort").reset_index(drop=True)

    def __len__(self) -> int:
        return len(self.frame)

    def lookup(self, sender_id: str, receiver_id: str, period: str) -> float:
        """Score of one cell, 0.0 when absent."""
        f = self.frame
        hit = f[(f.sender_id == sender_id) & (f.receiver_id == receiver_id) & (f.period == period)]
        return float(hit.score.iloc[0]) if len(hit) else 0.0

    def pairs(self) -> List[Tuple[str, str]]:
        return list(self.frame[["sender_id", "receiver_id"]].drop_duplicates().itertuples(index=False, name=None))

    def add(self, other: "ScoreMatrix") -> "ScoreMatrix":
        """Entrywise sum of two matrices of the same frequency."""
        if other.frequency != self.frequency:
            raise SpecificationError("Cannot add matrices of different frequency")
        stacked = pd.concat([self.frame, other.frame], ignore_index=True)
        stacked = stacked.sort_values(MATRIX_COLUMNS[:3], kind="mergesort")
        summed = stacked.groupby(MATRIX_COLUMNS[:3], sort=True, as_index=False)["score"].sum()
        return ScoreMatrix(summed, self.frequency, self.period_range)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def meters_per_degree_lon(lat: float) -> float:
    """Haversine length in meters of one degree of longitude at ``lat``."""
    phi = math.radians(lat)
    a = math.cos(phi) ** 2 * math.sin(math.radians(0.5)) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def great_circle_degrees(lon1, lat1, lon2, lat2):
    """Central angle in degrees between points (vectorized haversine)."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return np.degrees(2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0))))


def advance_position(lon: float, lat: float, u: float, v: float) -> Tuple[float, float]:
    """
    Move a position by one day of wind.

    Both components are converted with the local length of a degree of
    longitude; this is the conversion the grid streamlines are defined with.
    """
    if u == 0 and v == 0:
        return lon, lat
    scale = meters_per_degree_lon(lat)
    if scale == 0.0:
        return math.inf, math.inf
    return lon + SECONDS_PER_DAY * u / scale, lat + SECONDS_PER_DAY * v / scale


def _step_scores(lon: float, lat: float, u: float, v: float, radius: float,
                 coords: np.ndarray, params: ScoreParams) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and values of receivers scored from one streamline position."""
    speed = math.hypot(u, v)
    if speed < params.calm_speed_eps or len(coords) == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=float)
    dlon = coords[:, 0] - lon
    dlat = coords[:, 1] - lat
    dist = great_circle_degrees(lon, lat, coords[:, 0], coords[:, 1])
    norm = np.hypot(dlon, dlat)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = (u * dlon + v * dlat) / (speed * norm)
    angle = np.where(norm > 0, np.arccos(np.clip(cosine, -1.0, 1.0)), 0.0)
    offset = np.abs((v * dlon - u * dlat) / speed)
    keep = (dist <= radius) & (angle <= params.max_offaxis)
    values = np.exp(-params.alpha * radius - params.beta * offset[keep] - params.gamma * dist[keep])
    index = np.flatnonzero(keep)
    positive = values > 0
    return index[positive], values[positive]


def score_step(state: StreamlineState, w: Tuple[float, float], receivers: CityRegistry,
               params: ScoreParams, exclude: Optional[str] = None) -> List[RawScore]:
    """
    Score receivers around a streamline position.

    Args:
        state: current streamline position and radius
        w: wind (u, v) in m/s sampled at the position
        receivers: candidate receivers
        params: score law parameters
        exclude: receiver id to skip (the sender itself)

    Returns:
        One RawScore per receiver inside the disk and the downwind cone
    """
    ids = receivers.ids
    index, values = _step_scores(state.lon, state.lat, float(w[0]), float(w[1]), state.radius,
                                 receivers.coordinates(), params)
    return [
        RawScore(state.sender_id, ids[i], state.emit_day, state.step, float(value))
        for i, value in zip(index, values) if ids[i] != exclude
    ]


def run_streamline(sender_id: str, start_day: date, fields: Mapping[date, DailyWindGrid],
                   registry: CityRegistry, params: ScoreParams,
                   receivers: Optional[CityRegistry] = None) -> List[RawScore]:
    """
    Trace one streamline and collect its step scores.

    Missing wind fields truncate the streamline, as does leaving the grid.
    Calm steps emit nothing and hold the position.

    Raises:
        UnknownSender: sender not in registry
    """
    if sender_id not in registry:
        raise UnknownSender(f"Unknown sender '{sender_id}'")
    sender = registry.get(sender_id)
    receivers = receivers if receivers is not None else registry

    lon, lat = sender.longitude, sender.latitude
    scores: List[RawScore] = []
    for step in range(params.n_steps):
        grid = fields.get(start_day + timedelta(days=step))
        if grid is None:
            break
        wind = sample_at(grid, lon, lat)
        if wind.exited:
            break
        state = StreamlineState(sender_id, start_day, step, lon, lat, params.radius(step))
        scores.extend(score_step(state, (wind.u, wind.v), receivers, params, exclude=sender_id))
        if math.hypot(wind.u, wind.v) >= params.calm_speed_eps:
            lon, lat = advance_position(lon, lat, wind.u, wind.v)
    return scores


def build_raw_scores(registry: CityRegistry, fields: Mapping[date, DailyWindGrid], params: ScoreParams,
                     start_days: Optional[Iterable[date]] = None, threads: int = 1) -> List[RawScore]:
    """
    Run every (sender, start day) streamline and merge deterministically.

    The merged list is sorted by (sender, receiver, emit day, step), so the
    result does not depend on the worker count.
    """
    days = sorted(start_days) if start_days is not None else sorted(fields)
    tasks = [(sender_id, day) for sender_id in registry.ids for day in days]

    def work(task):
        return run_streamline(task[0], task[1], fields, registry, params)

    if threads <= 1:
        chunks = [work(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, tasks))
    merged = [score for chunk in chunks for score in chunk]
    merged.sort(key=RawScore.sort_key)
    logger.debug("Built %d raw scores from %d streamlines", len(merged), len(tasks))
    return merged


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_daily(raws: Iterable[RawScore]) -> ScoreMatrix:
    """Sum raw scores by arrival day (emit day + step)."""
    ordered = sorted(raws, key=RawScore.sort_key)
    if not ordered:
        return ScoreMatrix(pd.DataFrame(columns=MATRIX_COLUMNS), "day")
    frame = pd.DataFrame({
        "sender_id": [r.sender_id for r in ordered],
        "receiver_id": [r.receiver_id for r in ordered],
        "period": [r.arrival_day.isoformat() for r in ordered],
        "score": [r.value for r in ordered],
    })
    daily = frame.groupby(MATRIX_COLUMNS[:3], sort=True, as_index=False)["score"].sum()
    periods = daily["period"]
    return ScoreMatrix(daily, "day", (periods.min(), periods.max()))


def month_range(first: str, last: str) -> List[str]:
    """Inclusive list of YYYY-MM labels."""
    return [str(p) for p in pd.period_range(pd.Period(first, "M"), pd.Period(last, "M"), freq="M")]


def aggregate_monthly(daily: ScoreMatrix, period: Optional[Tuple[str, str]] = None) -> ScoreMatrix:
    """
    Average daily scores over calendar months.

    Every pair with a positive score in the period gets an entry for every
    month of the period (zeros included); absent days count as zero.

    Args:
        daily: day-level matrix
        period: (first, last) months as YYYY-MM; inferred from arrivals when None
    """
    frame = daily.frame.copy()
    frame["month"] = frame["period"].str.slice(0, 7)
    if period is None:
        if frame.empty:
            return ScoreMatrix(pd.DataFrame(columns=MATRIX_COLUMNS), "month")
        period = (frame["month"].min(), frame["month"].max())
    months = month_range(*period)

    outside = ~frame["month"].isin(months)
    if outside.any():
        logger.warning("Dropping %d daily entries arriving outside %s..%s", int(outside.sum()), *period)
        frame = frame.loc[~outside]

    sums = frame.groupby(["sender_id", "receiver_id", "month"], sort=True)["score"].sum()
    observed = frame.loc[frame["score"] > 0, ["sender_id", "receiver_id"]].drop_duplicates()
    if observed.empty:
        return ScoreMatrix(pd.DataFrame(columns=MATRIX_COLUMNS), "month", tuple(period))

    full = observed.merge(pd.DataFrame({"month": months}), how="cross")
    full = full.merge(sums.rename("total").reset_index(), on=["sender_id", "receiver_id", "month"], how="left")
    days_in_month = {m: pd.Period(m, "M").days_in_month for m in months}
    full["score"] = full["total"].fillna(0.0) / full["month"].map(days_in_month)
    full = full.rename(columns={"month": "period"})
    return ScoreMatrix(full[MATRIX_COLUMNS], "month", (months[0], months[-1]))


def compute_bins(monthly: ScoreMatrix) -> WindBins:
    """
    Decile cut points over the pooled positive monthly scores.

    Raises:
        InsufficientPositiveScores: fewer than 10 positive entries
    """
    positive = np.sort(monthly.frame["score"].to_numpy(dtype=float))
    positive = positive[positive > 0]
    if len(positive) < 10:
        raise InsufficientPositiveScores(
            f"Need at least 10 positive monthly scores to form deciles, got {len(positive)}")
    cuts = np.quantile(positive, np.arange(1, 10) / 10.0, method="linear")
    return WindBins(tuple(float(c) for c in cuts), int(len(positive)))


def assign_bin(score: float, bins: WindBins) -> WindBin:
    """
    Bin a score: 0 is calm, positives fall in (cut_{k-1}, cut_k].

    Raises:
        NegativeScore: score below zero
    """
    if score < 0 or math.isnan(score):
        raise NegativeScore(f"Cannot bin score {score}")
    if score == 0:
        return WindBin.CALM
    k = int(np.searchsorted(np.asarray(bins.cuts), score, side="left"))
    return DECILE_BINS[k]


def assign_bins(monthly: ScoreMatrix, bins: WindBins) -> pd.DataFrame:
    """Monthly matrix frame with a ``bin`` column."""
    frame = monthly.frame.copy()
    scores = frame["score"].to_numpy(dtype=float)
    if (scores < 0).any():
        raise NegativeScore("Monthly matrix contains negative scores")
    k = np.searchsorted(np.asarray(bins.cuts), scores, side="left")
    labels = np.array([b.value for b in DECILE_BINS], dtype=object)[np.minimum(k, 9)]
    frame["bin"] = np.where(scores == 0, WindBin.CALM.value, labels)
    return frame


def simulate_heatmap(sender_id: str, start_day: date, fields: Mapping[date, DailyWindGrid],
                     registry: CityRegistry, spec: GridSpec, params: ScoreParams) -> pd.DataFrame:
    """
    Score every grid node as if it were a receiver of one streamline.

    Returns:
        Frame (row, col, lon, lat, score) with the per-node sum over steps
    """
    nodes = spec.node_coordinates()
    rows, cols = np.indices(spec.shape)
    node_ids = [f"node:{r}:{c}" for r, c in zip(rows.ravel(), cols.ravel())]
    receivers = CityRegistry.from_points(node_ids, nodes)
    totals = dict.fromkeys(node_ids, 0.0)
    for score in sorted(run_streamline(sender_id, start_day, fields, registry, params, receivers),
                        key=RawScore.sort_key):
        totals[score.receiver_id] += score.value
    return pd.DataFrame({
        "row": rows.ravel(),
        "col": cols.ravel(),
        "lon": nodes[:, 0],
        "lat": nodes[:, 1],
        "score": [totals[i] for i in node_ids],
    })
