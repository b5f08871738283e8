"""
Fixed-effects regression engine.

Weighted OLS and 2SLS on panels with any number of absorbed fixed-effect
dimensions (alternating weighted group demeaning), heteroskedasticity-robust
and one- or two-way cluster-robust variance, first-stage Wald F, and the
downwind bin-interaction design.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .errors import EstimationError, SpecificationError
from .models import ColumnRole, PanelTable


logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
COLLINEARITY_TOL = 1e-7
WEAK_INSTRUMENT_F = 10.0
INTERCEPT = "const"

VCOV_TYPES = ("robust", "iid")


class UndeclaredColumn(SpecificationError):
    """Raised when a design names a column the panel does not declare."""
    pass


class InvalidDesign(SpecificationError):
    """Raised when a design specification is internally inconsistent."""
    pass


class MissingBin(SpecificationError):
    """Raised when a row carries no bin or an unknown bin label."""
    pass


class NonConvergence(EstimationError):
    """Raised when fixed-effect demeaning does not converge."""

    def __init__(self, message: str, change: float = math.nan):
        super().__init__(message)
        self.change = change


class RankDeficient(EstimationError):
    """Raised when nothing identifiable is left to estimate."""
    pass


class EmptyPanel(EstimationError):
    """Raised when no row carries positive weight."""
    pass


class WeakRank(EstimationError):
    """Raised when the excluded instruments cannot identify the endogenous regressors."""
    pass


class SingleCluster(EstimationError):
    """Raised when a cluster dimension has fewer than two clusters."""
    pass


class ZeroVariance(EstimationError):
    """Raised when a series to be standardized has no variation."""
    pass


@dataclass(frozen=True)
class DesignSpec:
    """
    Which panel columns play which part in a regression.

    ``exog`` regressors are their own instruments; ``endog`` regressors are
    instrumented by ``instruments``. An intercept is added only when no
    fixed effects are absorbed.
    """

    outcome: str
    exog: Tuple[str, ...] = ()
    endog: Tuple[str, ...] = ()
    instruments: Tuple[str, ...] = ()
    fe: Tuple[str, ...] = ()
    cluster: Tuple[str, ...] = ()
    weight: Optional[str] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    vcov: str = "robust"
    small_sample: bool = False
    ci_level: float = 0.95

    def __post_init__(self):
        for name in ("exog", "endog", "instruments", "fe", "cluster"):
            value = getattr(self, name)
            object.__setattr__(self, name, (value,) if isinstance(value, str) else tuple(value))
        self.validate()

    def validate(self) -> None:
        if not self.outcome:
            raise InvalidDesign("A design needs an outcome column")
        if len(self.instruments) < len(self.endog):
            raise InvalidDesign(
                f"Order condition fails: {len(self.instruments)} instrument(s) for {len(self.endog)} endogenous regressor(s)")
        if len(self.cluster) > 2:
            raise InvalidDesign("At most two cluster dimensions are supported")
        if not self.tol > 0:
            raise InvalidDesign("Demeaning tolerance must be > 0")
        if self.max_iter < 1:
            raise InvalidDesign("max_iter must be >= 1")
        if self.vcov not in VCOV_TYPES:
            raise InvalidDesign(f"vcov must be one of: {', '.join(VCOV_TYPES)}")
        if not 0 < self.ci_level < 1:
            raise InvalidDesign("ci_level must lie in (0, 1)")
        overlap = set(self.exog) & set(self.endog) | set(self.exog) & set(self.instruments)
        if overlap:
            raise InvalidDesign(f"Columns listed twice in the design: {', '.join(sorted(overlap))}")

    @property
    def regressors(self) -> Tuple[str, ...]:
        return self.exog + self.endog

    @property
    def is_iv(self) -> bool:
        return bool(self.endog)

    def columns(self) -> List[str]:
        names = [self.outcome, *self.exog, *self.endog, *self.instruments, *self.fe, *self.cluster]
        if self.weight:
            names.append(self.weight)
        return list(dict.fromkeys(names))

    def check_panel(self, panel: Union[PanelTable, pd.DataFrame]) -> None:
        """
        Verify every named column exists (and, for a PanelTable, is declared
        with a compatible role).

        Raises:
            UndeclaredColumn: a column is absent or has no role
        """
        frame = panel.frame if isinstance(panel, PanelTable) else panel
        missing = [c for c in self.columns() if c not in frame.columns]
        if missing:
            raise UndeclaredColumn(f"Column(s) not in panel: {', '.join(missing)}")
        if isinstance(panel, PanelTable):
            undeclared = [c for c in self.columns() if not panel.role_of(c)]
            if undeclared:
                raise UndeclaredColumn(f"Column(s) without a declared role: {', '.join(undeclared)}")
            numeric = [self.outcome, *self.exog, *self.endog, *self.instruments]
            if self.weight:
                numeric.append(self.weight)
            wrong = [c for c in numeric if not any(r.is_numeric for r in panel.role_of(c))]
            if wrong:
                raise UndeclaredColumn(f"Column(s) used numerically but declared categorical: {', '.join(wrong)}")

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "exog": list(self.exog),
            "endog": list(self.endog),
            "instruments": list(self.instruments),
            "fe": list(self.fe),
            "cluster": list(self.cluster),
            "weight": self.weight,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "vcov": self.vcov,
            "small_sample": self.small_sample,
            "ci_level": self.ci_level,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "DesignSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidDesign(f"Unknown design field(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_roles(cls, panel: PanelTable, **overrides) -> "DesignSpec":
        """Design read off a panel's role declaration."""
        outcomes = panel.columns_with(ColumnRole.OUTCOME)
        if len(outcomes) != 1:
            raise InvalidDesign(f"Role declaration must name exactly one outcome, got {outcomes}")
        instruments = panel.columns_with(ColumnRole.INSTRUMENT)
        regressors = panel.columns_with(ColumnRole.REGRESSOR)
        weights = panel.columns_with(ColumnRole.WEIGHT)
        values = {
            "outcome": outcomes[0],
            "exog": tuple(regressors) if not instruments else tuple(regressors[1:]),
            "endog": tuple(regressors[:1]) if instruments else (),
            "instruments": tuple(instruments),
            "fe": tuple(panel.columns_with(ColumnRole.FE)),
            "cluster": tuple(panel.columns_with(ColumnRole.CLUSTER)),
            "weight": weights[0] if weights else None,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class FitResult:
    """Estimates, variance and diagnostics of one fit."""

    names: List[str]
    coef: np.ndarray
    vcov: np.ndarray
    n_obs: int
    df_resid: int
    iterations: int
    method: str = "ols"
    vcov_type: str = "robust"
    first_stage_F: Optional[float] = None
    ci_level: float = 0.95
    diagnostics: Dict[str, object] = field(default_factory=dict)
    residuals: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def coefficients(self) -> Dict[str, float]:
        return {n: float(b) for n, b in zip(self.names, self.coef)}

    @property
    def se(self) -> Dict[str, float]:
        return {n: float(s) for n, s in zip(self.names, self.std_errors)}

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def tstats(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.std_errors

    @property
    def pvalues(self) -> np.ndarray:
        t = np.abs(self.tstats)
        return np.where(np.isnan(t), np.nan, 2.0 * stats.t.sf(t, self.df_resid))

    def conf_int(self, level: Optional[float] = None) -> np.ndarray:
        """(k, 2) array of lower/upper bounds."""
        level = self.ci_level if level is None else level
        crit = stats.t.ppf(0.5 + level / 2.0, self.df_resid)
        half = crit * self.std_errors
        return np.column_stack([self.coef - half, self.coef + half])

    def coefficient(self, name: str) -> float:
        """Coefficient by name; NaN when the column was dropped."""
        return self.coefficients.get(name, math.nan)

    def pvalue(self, name: str) -> float:
        if name not in self.names:
            return math.nan
        return float(self.pvalues[self.names.index(name)])

    def to_frame(self) -> pd.DataFrame:
        ci = self.conf_int()
        return pd.DataFrame({
            "term": self.names,
            "coef": self.coef,
            "se": self.std_errors,
            "t": self.tstats,
            "p": self.pvalues,
            "ci_lo": ci[:, 0],
            "ci_hi": ci[:, 1],
        })

    def to_dict(self, spec: Optional[DesignSpec] = None) -> dict:
        """Fit report payload."""
        payload = {
            "method": self.method,
            "vcov_type": self.vcov_type,
            "coefficients": self.coefficients,
            "se": self.se,
            "pvalues": {n: float(p) for n, p in zip(self.names, self.pvalues)},
            "vcov": self.vcov.tolist(),
            "names": list(self.names),
            "n_obs": self.n_obs,
            "df_resid": self.df_resid,
            "iterations": self.iterations,
            "first_stage_F": self.first_stage_F,
            "first_stage_F_label": "cluster-robust Wald F" if self.first_stage_F is not None else None,
            "diagnostics": self.diagnostics,
        }
        if spec is not None:
            payload["spec"] = spec.to_dict()
        return payload


@dataclass
class DemeanResult:
    frame: pd.DataFrame
    iterations: int
    max_change: float


# ---------------------------------------------------------------------------
# Demeaning
# ---------------------------------------------------------------------------

def _factorize(values) -> Tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(pd.Series(values).astype(str), sort=True)
    return codes.astype(np.int64), len(uniques)


def _demean_matrix(X: np.ndarray, groups: Sequence[Tuple[np.ndarray, int]], weights: np.ndarray,
                   tol: float, max_iter: int) -> Tuple[np.ndarray, int, float]:
    """Alternating weighted group demeaning of every column of X."""
    X = np.array(X, dtype=float, copy=True)
    if not groups or X.size == 0:
        return X, 0, 0.0
    group_weight = [np.bincount(codes, weights=weights, minlength=n) for codes, n in groups]
    scale = max(1.0, float(np.max(np.abs(X))))
    change = math.inf
    for iteration in range(1, max_iter + 1):
        before = X.copy()
        for (codes, n), wsum in zip(groups, group_weight):
            for j in range(X.shape[1]):
                sums = np.bincount(codes, weights=weights * X[:, j], minlength=n)
                means = np.divide(sums, wsum, out=np.zeros(n), where=wsum > 0)
                X[:, j] -= means[codes]
        if len(groups) == 1:
            return X, 1, 0.0
        change = float(np.max(np.abs(X - before))) / scale
        if change < tol:
            return X, iteration, change
    raise NonConvergence(
        f"Fixed-effect demeaning did not converge in {max_iter} iterations (last relative change {change:.3g})",
        change)


def demean(panel: Union[PanelTable, pd.DataFrame], columns: Sequence[str], fe: Sequence[str],
           weight: Optional[str] = None, tol: float = DEFAULT_TOL,
           max_iter: int = DEFAULT_MAX_ITER) -> DemeanResult:
    """
    Absorb fixed effects from columns by alternating weighted group demeaning.

    Sweeps over the FE dimensions repeat until the largest change of any
    value, relative to max(1, max |value|), falls below ``tol``. A single
    dimension is exact after one sweep.

    Raises:
        NonConvergence: ``max_iter`` sweeps without convergence
    """
    if not tol > 0:
        raise InvalidDesign("Demeaning tolerance must be > 0")
    frame = panel.frame if isinstance(panel, PanelTable) else panel
    weights = frame[weight].to_numpy(dtype=float) if weight else np.ones(len(frame))
    groups = [_factorize(frame[d]) for d in fe]
    values, iterations, change = _demean_matrix(frame[list(columns)].to_numpy(dtype=float), groups,
                                                weights, tol, max_iter)
    return DemeanResult(pd.DataFrame(values, columns=list(columns), index=frame.index), iterations, change)


# ---------------------------------------------------------------------------
# Variance
# ---------------------------------------------------------------------------

def _bread(X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.linalg.inv((X * weights[:, None]).T @ X)


def _cluster_meat(scores: np.ndarray, codes: np.ndarray, small_sample: bool) -> Tuple[np.ndarray, int]:
    n_clusters = int(codes.max()) + 1
    summed = np.zeros((n_clusters, scores.shape[1]))
    np.add.at(summed, codes, scores)
    meat = summed.T @ summed
    if small_sample:
        meat *= n_clusters / (n_clusters - 1)
    return meat, n_clusters


def is_psd(matrix: np.ndarray, tol: float = 1e-12) -> bool:
    """True when the smallest eigenvalue is not materially negative."""
    if matrix.size == 0:
        return True
    eigenvalues = np.linalg.eigvalsh((matrix + matrix.T) / 2.0)
    return bool(eigenvalues.min() >= -tol * max(1.0, float(np.abs(eigenvalues).max())))


def cluster_vcov(X: np.ndarray, residuals: np.ndarray, weights: Optional[np.ndarray],
                 clusters: Sequence, small_sample: bool = False) -> np.ndarray:
    """
    Cluster-robust sandwich variance.

    Args:
        X: (n, k) regressors as used in the estimating equations (the
            projected regressors for 2SLS)
        residuals: (n,) structural residuals
        weights: (n,) regression weights or None
        clusters: one or two sequences of cluster labels
        small_sample: apply G/(G-1) to each component

    Returns:
        (k, k) matrix; two dimensions combine as V_A + V_B - V_AB

    Raises:
        SingleCluster: a dimension with fewer than two clusters
    """
    X = np.asarray(X, dtype=float)
    weights = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    if not 1 <= len(clusters) <= 2:
        raise InvalidDesign("cluster_vcov takes one or two cluster dimensions")
    codes = [_factorize(c)[0] for c in clusters]
    for i, c in enumerate(codes):
        if len(c) and c.max() < 1:
            raise SingleCluster(f"Cluster dimension {i + 1} has a single cluster")
    bread = _bread(X, weights)
    scores = X * (weights * np.asarray(residuals, dtype=float))[:, None]

    meat, _ = _cluster_meat(scores, codes[0], small_sample)
    if len(codes) == 2:
        meat_b, _ = _cluster_meat(scores, codes[1], small_sample)
        joint = _factorize(codes[0] * (int(codes[1].max()) + 1) + codes[1])[0]
        meat_ab, _ = _cluster_meat(scores, joint, small_sample)
        meat = meat + meat_b - meat_ab
    vcov = bread @ meat @ bread
    vcov = (vcov + vcov.T) / 2.0
    if len(codes) == 2 and not is_psd(vcov):
        logger.warning("Two-way cluster variance is not positive semi-definite; reported as computed")
    return vcov


def robust_vcov(X: np.ndarray, residuals: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Heteroskedasticity-robust (HC0) sandwich."""
    X = np.asarray(X, dtype=float)
    weights = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    bread = _bread(X, weights)
    scores = X * (weights * residuals)[:, None]
    vcov = bread @ (scores.T @ scores) @ bread
    return (vcov + vcov.T) / 2.0


def iid_vcov(X: np.ndarray, residuals: np.ndarray, weights: np.ndarray, df_resid: int) -> np.ndarray:
    sigma2 = float(np.sum(weights * residuals ** 2)) / max(df_resid, 1)
    return sigma2 * _bread(X, weights)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

@dataclass
class _Prepared:
    y: np.ndarray
    X: np.ndarray
    x_names: List[str]
    Z: Optional[np.ndarray]
    z_names: List[str]
    weights: np.ndarray
    clusters: List[np.ndarray]
    absorbed: int
    iterations: int
    diagnostics: Dict[str, object]


def _select_columns(M: np.ndarray, raw_norms: np.ndarray, weights: np.ndarray) -> List[int]:
    """Keep columns in order unless they lie in the span of those kept before them."""
    root_w = np.sqrt(weights)
    basis: List[np.ndarray] = []
    kept = []
    for j in range(M.shape[1]):
        v = root_w * M[:, j]
        for _ in range(2):
            for q in basis:
                v = v - q * (q @ v)
        norm = float(np.linalg.norm(v))
        if raw_norms[j] > 0 and norm > COLLINEARITY_TOL * raw_norms[j]:
            basis.append(v / norm)
            kept.append(j)
    return kept


def _prepare(panel: Union[PanelTable, pd.DataFrame], spec: DesignSpec) -> _Prepared:
    spec.check_panel(panel)
    frame = panel.frame if isinstance(panel, PanelTable) else panel
    diagnostics: Dict[str, object] = {}

    if not spec.regressors:
        raise InvalidDesign("A design needs at least one regressor")
    numeric = [spec.outcome, *spec.regressors, *spec.instruments]
    values = np.column_stack([pd.to_numeric(frame[c], errors="coerce").to_numpy(dtype=float) for c in numeric])
    if not np.isfinite(values).all():
        bad = [c for c, ok in zip(numeric, np.isfinite(values).all(axis=0)) if not ok]
        raise InvalidDesign(f"Non-finite or non-numeric values in column(s): {', '.join(bad)}")
    weights = frame[spec.weight].to_numpy(dtype=float) if spec.weight else np.ones(len(frame))
    if (weights < 0).any() or not np.isfinite(weights).all():
        raise InvalidDesign(f"Weight column '{spec.weight}' must be finite and >= 0")

    keep = weights > 0
    diagnostics["zero_weight_dropped"] = int((~keep).sum())
    if not keep.any():
        raise EmptyPanel("No observation carries positive weight")
    values, weights = values[keep], weights[keep]
    kept_frame = frame.loc[keep]

    groups = [_factorize(kept_frame[d]) for d in spec.fe]
    diagnostics["fe_levels"] = {d: n for d, (_, n) in zip(spec.fe, groups)}
    diagnostics["singletons"] = {
        d: int((np.bincount(codes, minlength=n) == 1).sum()) for d, (codes, n) in zip(spec.fe, groups)
    }
    clusters = [_factorize(kept_frame[c])[0] for c in spec.cluster]

    if not groups:
        values = np.column_stack([values[:, :1], np.ones(len(values)), values[:, 1:]])
        numeric = [spec.outcome, INTERCEPT, *numeric[1:]]
    raw_norms = np.linalg.norm(np.sqrt(weights)[:, None] * values, axis=0)
    demeaned, iterations, _ = _demean_matrix(values, groups, weights, spec.tol, spec.max_iter)

    y = demeaned[:, 0]
    if groups and np.linalg.norm(np.sqrt(weights) * y) <= COLLINEARITY_TOL * max(raw_norms[0], 1e-300):
        raise RankDeficient(f"Outcome '{spec.outcome}' is absorbed by the fixed effects")

    names = numeric[1:]
    n_x = len(spec.regressors) + (0 if groups else 1)
    x_idx = list(range(n_x))
    z_idx = [i for i, n in enumerate(names) if n in (INTERCEPT, *spec.exog)] + \
        list(range(n_x, len(names)))
    block = demeaned[:, 1:]
    block_norms = raw_norms[1:]

    kept_x = [x_idx[i] for i in _select_columns(block[:, x_idx], block_norms[x_idx], weights)]
    dropped = [names[i] for i in x_idx if i not in kept_x]
    if dropped:
        logger.warning("Dropped collinear regressor(s): %s", ", ".join(dropped))
    diagnostics["collinear_dropped"] = dropped
    if not kept_x:
        raise RankDeficient("No identifiable regressor remains after absorbing fixed effects")

    Z, z_names = None, []
    if spec.is_iv:
        kept_exog = [i for i in z_idx if i < n_x and i in kept_x]
        excluded = [i for i in z_idx if i >= n_x]
        order = kept_exog + excluded
        kept_z = [order[i] for i in _select_columns(block[:, order], block_norms[order], weights)]
        dropped_z = [names[i] for i in excluded if i not in kept_z]
        if dropped_z:
            logger.warning("Dropped collinear instrument(s): %s", ", ".join(dropped_z))
        diagnostics["instruments_dropped"] = dropped_z
        n_endog = sum(1 for i in kept_x if names[i] in spec.endog)
        if sum(1 for i in kept_z if i >= n_x) < n_endog:
            raise WeakRank("Fewer usable excluded instruments than endogenous regressors")
        Z, z_names = block[:, kept_z], [names[i] for i in kept_z]

    absorbed = sum(n for _, n in groups) - max(len(groups) - 1, 0) if groups else 0
    return _Prepared(y, block[:, kept_x], [names[i] for i in kept_x], Z, z_names, weights,
                     clusters, absorbed, iterations, diagnostics)


def _variance(X: np.ndarray, residuals: np.ndarray, prepared: _Prepared, spec: DesignSpec,
              df_resid: int) -> Tuple[np.ndarray, str, int]:
    """Variance matrix, its label and the t degrees of freedom."""
    if prepared.clusters:
        for name, codes in zip(spec.cluster, prepared.clusters):
            if codes.max() < 1:
                raise SingleCluster(f"Cluster dimension '{name}' has a single cluster")
        vcov = cluster_vcov(X, residuals, prepared.weights, prepared.clusters, spec.small_sample)
        smallest = min(int(c.max()) + 1 for c in prepared.clusters)
        return vcov, "cluster", smallest - 1
    if spec.vcov == "iid":
        return iid_vcov(X, residuals, prepared.weights, df_resid), "iid", df_resid
    return robust_vcov(X, residuals, prepared.weights), "robust", df_resid


def _wls(y: np.ndarray, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    root_w = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(X * root_w[:, None], y * root_w, rcond=None)
    return coef


def _finish(coef, X_scores, X_structural, prepared: _Prepared, spec: DesignSpec, method: str,
            first_stage_F: Optional[float] = None) -> FitResult:
    residuals = prepared.y - X_structural @ coef
    n = len(prepared.y)
    df_resid = n - X_structural.shape[1] - prepared.absorbed
    if df_resid < 1:
        raise RankDeficient(f"No residual degrees of freedom ({n} observations)")
    vcov, vcov_type, df = _variance(X_scores, residuals, prepared, spec, df_resid)
    diagnostics = dict(prepared.diagnostics)
    if vcov_type == "cluster" and len(prepared.clusters) == 2:
        diagnostics["vcov_psd"] = is_psd(vcov)
    return FitResult(
        names=list(prepared.x_names),
        coef=np.asarray(coef, dtype=float),
        vcov=vcov,
        n_obs=n,
        df_resid=int(df),
        iterations=prepared.iterations,
        method=method,
        vcov_type=vcov_type,
        first_stage_F=first_stage_F,
        ci_level=spec.ci_level,
        diagnostics=diagnostics,
        residuals=residuals,
    )


def ols(panel: Union[PanelTable, pd.DataFrame], spec: DesignSpec) -> FitResult:
    """
    Weighted least squares after absorbing the design's fixed effects.

    Endogenous regressors, if any, are treated as exogenous here.

    Raises:
        UndeclaredColumn, EmptyPanel, RankDeficient, NonConvergence
    """
    if spec.is_iv:
        spec = replace(spec, exog=spec.exog + spec.endog, endog=(), instruments=())
    prepared = _prepare(panel, spec)
    coef = _wls(prepared.y, prepared.X, prepared.weights)
    return _finish(coef, prepared.X, prepared.X, prepared, spec, "ols")


def _first_stage_F(prepared: _Prepared, spec: DesignSpec, endog_idx: List[int]) -> Dict[str, float]:
    """Cluster-robust (or robust/iid) Wald F on the excluded instruments, per endogenous regressor."""
    Z = prepared.Z
    excluded = [i for i, n in enumerate(prepared.z_names) if n in spec.instruments]
    out = {}
    for j in endog_idx:
        target = prepared.X[:, j]
        gamma = _wls(target, Z, prepared.weights)
        residuals = target - Z @ gamma
        df_resid = max(len(target) - Z.shape[1] - prepared.absorbed, 1)
        vcov, _, _ = _variance(Z, residuals, prepared, spec, df_resid)
        sub = vcov[np.ix_(excluded, excluded)]
        g = gamma[excluded]
        try:
            wald = float(g @ np.linalg.solve(sub, g))
        except np.linalg.LinAlgError:
            wald = math.nan
        out[prepared.x_names[j]] = wald / len(excluded)
    return out


def tsls(panel: Union[PanelTable, pd.DataFrame], spec: DesignSpec) -> FitResult:
    """
    Two-stage least squares after absorbing the design's fixed effects.

    The reported first-stage F is the Wald statistic on the excluded
    instruments divided by their number, using the same variance type as the
    second stage. Values below 10 are flagged as weak.

    Raises:
        WeakRank: instruments cannot identify the endogenous regressors
    """
    if not spec.is_iv:
        raise InvalidDesign("tsls needs at least one endogenous regressor and instrument")
    prepared = _prepare(panel, spec)
    Z, X, w = prepared.Z, prepared.X, prepared.weights
    projection = np.column_stack([Z @ _wls(X[:, j], Z, w) for j in range(X.shape[1])])
    if np.linalg.matrix_rank(projection * np.sqrt(w)[:, None]) < X.shape[1]:
        raise WeakRank("Projected regressors are rank deficient")
    coef = _wls(prepared.y, projection, w)

    endog_idx = [j for j, n in enumerate(prepared.x_names) if n in spec.endog]
    per_endog = _first_stage_F(prepared, spec, endog_idx)
    first_stage = min(per_endog.values()) if per_endog else None
    fit = _finish(coef, projection, X, prepared, spec, "2sls", first_stage)
    fit.diagnostics["first_stage_F_by_endog"] = per_endog
    weak = first_stage is None or not (first_stage >= WEAK_INSTRUMENT_F)
    fit.diagnostics["weak_rank"] = weak
    if weak:
        logger.warning("Weak instruments: first-stage F = %s (< %g)", first_stage, WEAK_INSTRUMENT_F)
    return fit


def fit(panel: Union[PanelTable, pd.DataFrame], spec: DesignSpec) -> FitResult:
    """OLS or 2SLS depending on whether the design has endogenous regressors."""
    return tsls(panel, spec) if spec.is_iv else ols(panel, spec)


# ---------------------------------------------------------------------------
# Downwind bin design
# ---------------------------------------------------------------------------

@dataclass
class BinFit:
    """Per-bin interaction estimates with the underlying fit."""

    table: pd.DataFrame
    fit: FitResult
    reference: str
    spec: DesignSpec

    def coefficient(self, label: str) -> float:
        row = self.table.loc[self.table["bin"] == label]
        return float(row["coef"].iloc[0]) if len(row) else math.nan

    def se(self, label: str) -> float:
        row = self.table.loc[self.table["bin"] == label]
        return float(row["se"].iloc[0]) if len(row) else math.nan


def interaction_name(exposure: str, label: str) -> str:
    return f"{exposure}_x_{label}"


def bin_dummy_name(label: str) -> str:
    return f"bin_{label}"


def fit_downwind_bins(panel: Union[PanelTable, pd.DataFrame], exposure: str, spec: DesignSpec,
                      bin_labels: Optional[Sequence[str]] = None, reference: str = "10th",
                      bin_column: str = "bin", sender: str = "sender_id", receiver: str = "receiver_id",
                      month: str = "month", year: str = "year", frequency: str = "monthly") -> BinFit:
    """
    Estimate exposure effects by downwind intensity bin.

    Builds exposure x bin interactions and bin dummies for every label
    except ``reference``, plus the exposure main effect and ``spec.exog``
    controls. Fixed effects are sender x receiver x month-of-year and year
    (sender x receiver and year when ``frequency="annual"``); errors are
    clustered two-way on sender and receiver.

    Returns:
        BinFit whose table has one row per label (reference at 0); dropped
        interactions carry NaN and ``dropped=True``

    Raises:
        MissingBin: a row without a known bin label, or an unknown reference
    """
    from .aoe import ALL_BINS

    frame = (panel.frame if isinstance(panel, PanelTable) else panel).copy()
    labels = list(bin_labels) if bin_labels is not None else [b.value for b in ALL_BINS]
    if reference not in labels:
        raise MissingBin(f"Reference bin '{reference}' is not among {labels}")
    if frequency not in ("monthly", "annual"):
        raise InvalidDesign("frequency must be 'monthly' or 'annual'")
    needed = [bin_column, exposure, sender, receiver, year] + ([month] if frequency == "monthly" else [])
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise UndeclaredColumn(f"Column(s) not in panel: {', '.join(missing)}")
    bins = frame[bin_column]
    unknown = bins.isna() | ~bins.astype(str).isin(labels)
    if unknown.any():
        raise MissingBin(f"{int(unknown.sum())} row(s) without a known bin label (first: {bins[unknown].iloc[0]!r})")

    exposure_values = pd.to_numeric(frame[exposure], errors="coerce").astype(float)
    others = [label for label in labels if label != reference]
    interactions, dummies = [], []
    for label in others:
        indicator = (bins.astype(str) == label).astype(float)
        frame[bin_dummy_name(label)] = indicator
        frame[interaction_name(exposure, label)] = indicator * exposure_values
        interactions.append(interaction_name(exposure, label))
        dummies.append(bin_dummy_name(label))

    pair = frame[sender].astype(str) + "|" + frame[receiver].astype(str)
    if frequency == "monthly":
        frame["_cell_fe"] = pair + "|" + frame[month].astype(str)
    else:
        frame["_cell_fe"] = pair
    controls = tuple(c for c in spec.exog if c not in interactions + dummies + [exposure])
    design = replace(
        spec,
        exog=tuple(interactions) + tuple(dummies) + (exposure,) + controls,
        endog=(), instruments=(),
        fe=("_cell_fe", year),
        cluster=(sender, receiver),
    )
    result = ols(frame, design)

    ci = result.conf_int()
    rows = []
    for label in labels:
        if label == reference:
            rows.append((label, 0.0, 0.0, 0.0, 0.0, math.nan, False))
            continue
        name = interaction_name(exposure, label)
        if name in result.names:
            k = result.names.index(name)
            rows.append((label, float(result.coef[k]), float(result.std_errors[k]),
                         float(ci[k, 0]), float(ci[k, 1]), float(result.pvalues[k]), False))
        else:
            rows.append((label, math.nan, math.nan, math.nan, math.nan, math.nan, True))
    table = pd.DataFrame(rows, columns=["bin", "coef", "se", "ci_lo", "ci_hi", "p", "dropped"])
    if table["dropped"].any():
        logger.warning("Interaction(s) absorbed by fixed effects: %s",
                       ", ".join(table.loc[table["dropped"], "bin"]))
    return BinFit(table, result, reference, design)


def build_downwind_panel(binned: pd.DataFrame, exposure: pd.DataFrame, outcomes: pd.DataFrame,
                         exposure_column: str = "z_loss") -> pd.DataFrame:
    """
    Join binned monthly scores with sender exposure and receiver outcomes.

    Args:
        binned: sender_id, receiver_id, period (YYYY-MM), score, bin
        exposure: sender_id, year, <exposure_column>
        outcomes: receiver_id, period and outcome columns

    Returns:
        Panel with sender_id, receiver_id, period, year, month, score, bin,
        the exposure column and the outcome columns; rows lacking exposure
        or outcomes are dropped with a warning
    """
    panel = binned.copy()
    panel["year"] = panel["period"].str.slice(0, 4).astype(int)
    panel["month"] = panel["period"].str.slice(5, 7).astype(int)
    exposure = exposure.rename(columns={"region_id": "sender_id"})
    exposure = exposure.assign(sender_id=exposure["sender_id"].astype(str), year=exposure["year"].astype(int))
    outcomes = outcomes.rename(columns={"city_id": "receiver_id"})
    merged = panel.merge(exposure[["sender_id", "year", exposure_column]], on=["sender_id", "year"], how="inner")
    merged = merged.merge(outcomes, on=["receiver_id", "period"], how="inner")
    lost = len(panel) - len(merged)
    if lost:
        logger.warning("Dropped %d pair-month row(s) without sender exposure or receiver outcomes", lost)
    return merged.sort_values(["sender_id", "receiver_id", "period"], kind="mergesort").reset_index(drop=True)


def zscore_index(frame: pd.DataFrame, columns: Optional[Sequence[str]] = None) -> pd.Series:
    """
    Equal-weight average of per-series z-scores (population sd).

    Rows average over the series present (non-missing) for them.

    Raises:
        ZeroVariance: a series without variation
    """
    columns = list(columns) if columns is not None else list(frame.columns)
    if not columns:
        raise InvalidDesign("zscore_index needs at least one series")
    scores = {}
    for column in columns:
        values = pd.to_numeric(frame[column], errors="coerce").astype(float)
        sd = values.std(ddof=0)
        if not sd > 0:
            raise ZeroVariance(f"Series '{column}' has zero variance")
        scores[column] = (values - values.mean()) / sd
    return pd.DataFrame(scores).mean(axis=1, skipna=True).rename("index")
