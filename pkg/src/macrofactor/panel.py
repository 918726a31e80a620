"""Panel pre-treatment: aggregation, transforms, seasonal dummies, outliers,
EM imputation and standardization.

Panels are stored series-by-time (N x T) with NaN marking missing cells.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import _time
from .catalog import RawPanel, SeriesMeta
from .errors import (
    ConstantSeries,
    DegenerateIQR,
    EMNoConvergence,
    NonPositiveForLog,
    RankDeficient,
    TooFewObservations,
    TooShortForSeasonal,
)

logger = logging.getLogger(__name__)

COVID_MONTHLY = ("2020-03", "2020-12")
COVID_QUARTERLY = ("2020-01", "2020-10")

OUTLIER_IQR_MULTIPLE = 10.0


@dataclass
class Panel:
    periods: list[str]
    metas: list[SeriesMeta]
    values: np.ndarray = field(repr=False)
    frequency: str = "Monthly"
    codes: list[int] | None = None  # transform code applied to each row, if any

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.metas), len(self.periods)):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{len(self.metas)} series x {len(self.periods)} periods")

    @property
    def keys(self) -> list[str]:
        return [m.key for m in self.metas]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def index(self, key: str) -> int:
        try:
            return self.keys.index(key)
        except ValueError:
            raise KeyError(key) from None

    def row(self, key: str) -> np.ndarray:
        return self.values[self.index(key)]

    def select(self, rows: Sequence[int]) -> "Panel":
        rows = list(rows)
        return replace(self, metas=[self.metas[i] for i in rows], values=self.values[rows],
                       codes=None if self.codes is None else [self.codes[i] for i in rows])

    def trim(self, start: str | None = None, end: str | None = None) -> "Panel":
        keep = [i for i, p in enumerate(self.periods)
                if (start is None or p >= start) and (end is None or p <= end)]
        return replace(self, periods=[self.periods[i] for i in keep], values=self.values[:, keep])

    @property
    def balanced(self) -> bool:
        return not np.isnan(self.values).any()


@dataclass
class StandardizedPanel:
    panel: Panel              # standardized values, no missing cells
    mu: np.ndarray            # per-series sample mean
    omega: np.ndarray         # per-series population standard deviation
    original: np.ndarray = field(repr=False)  # N x T input on the original scale

    @property
    def z(self) -> np.ndarray:
        return self.panel.values

    @property
    def shape(self) -> tuple[int, int]:
        return self.panel.values.shape


# ----------------------------------------------------------------------------
# frequency handling

def aggregate_to_quarterly(values, kind: str, periods: Sequence[str] | None = None):
    """Aggregate a monthly series to calendar quarters.

    Flows are summed over the three months, stocks averaged. A quarter with
    any unobserved (or uncovered) month is missing.

    Returns ``(quarter_periods, quarter_values)``; quarters are labelled by
    their first month. Without ``periods`` the series is assumed to start in
    January.
    """
    x = np.asarray(values, dtype=float)
    if periods is None:
        periods = _time.month_range("2000-01", _time.from_index(_time.month_index("2000-01") + len(x) - 1))
    if len(periods) != len(x):
        raise ValueError("periods and values differ in length")
    if len(x) == 0:
        return [], np.empty(0)
    if kind not in ("Stock", "Flow"):
        raise ValueError(f"kind must be Stock or Flow, got {kind!r}")
    first = _time.month_index(_time.quarter_start(periods[0]))
    last = _time.month_index(periods[-1])
    qstarts = list(range(first, last + 1, 3))
    idx = {_time.month_index(p): i for i, p in enumerate(periods)}
    out = np.full(len(qstarts), np.nan)
    for j, q in enumerate(qstarts):
        pos = [idx.get(q + k) for k in range(3)]
        if any(p is None for p in pos):
            continue
        block = x[pos]
        if np.isnan(block).any():
            continue
        out[j] = block.sum() if kind == "Flow" else block.mean()
    return [_time.from_index(q) for q in qstarts], out


def to_quarterly(raw: RawPanel) -> Panel:
    """Balanced-frequency quarterly panel: monthly series aggregated by their
    stock/flow tag, quarterly series read from the first month of each quarter."""
    if not raw.periods:
        return Panel([], list(raw.metas), np.empty((len(raw.metas), 0)), "Quarterly")
    qperiods = None
    rows = []
    for meta, vals in raw.series:
        if meta.frequency == "Monthly":
            qp, q = aggregate_to_quarterly(vals, meta.stock_flow, raw.periods)
        else:
            qp = [p for p in _time.month_range(_time.quarter_start(raw.periods[0]), raw.periods[-1], 3)]
            pos = {p: i for i, p in enumerate(raw.periods)}
            q = np.array([vals[pos[p]] if p in pos else np.nan for p in qp])
        qperiods = qp
        rows.append(q)
    return Panel(qperiods, list(raw.metas), np.vstack(rows), "Quarterly")


def monthly_subset(raw: RawPanel) -> Panel:
    rows = [i for i, m in enumerate(raw.metas) if m.frequency == "Monthly"]
    return Panel(list(raw.periods), [raw.metas[i] for i in rows], raw.values[rows], "Monthly")


# ----------------------------------------------------------------------------
# transformations

def apply_transform(values, code: int) -> np.ndarray:
    """Stationarity transform by code.

    0: x, 1: 100 log x, 2: 100 dlog x, 3: 100 d2 log x, 4: dx, 5: d2 x.
    Differenced entries without enough history are NaN; length is preserved.
    """
    x = np.asarray(values, dtype=float)
    if code not in range(6):
        raise ValueError(f"transform code {code} outside 0-5")
    if code in (1, 2, 3):
        obs = x[~np.isnan(x)]
        if (obs <= 0).any():
            raise NonPositiveForLog(f"log transform (code {code}) of non-positive values")
        x = 100.0 * np.log(x)
    order = {0: 0, 1: 0, 2: 1, 3: 2, 4: 1, 5: 2}[code]
    out = x.copy()
    for _ in range(order):
        d = np.full_like(out, np.nan)
        d[1:] = out[1:] - out[:-1]
        out = d
    return out


def transform_panel(panel: Panel, which: str = "HT", level_ids: Iterable[str] = ()) -> Panel:
    """Apply each series' LT or HT code; ids in ``level_ids`` are kept untransformed."""
    level_ids = set(level_ids)
    codes, rows = [], []
    for meta, vals in zip(panel.metas, panel.values):
        code = 0 if meta.id in level_ids or meta.key in level_ids else meta.code(which)
        try:
            rows.append(apply_transform(vals, code))
        except NonPositiveForLog as exc:
            raise NonPositiveForLog(f"{meta.key}: {exc}") from None
        codes.append(code)
    values = np.vstack(rows) if rows else np.empty((0, len(panel.periods)))
    return replace(panel, values=values, codes=codes)


def deseasonalize_dummies(values, frequency: str = "Quarterly",
                          periods: Sequence[str] | None = None) -> np.ndarray:
    """Remove a deterministic seasonal pattern by seasonal-dummy OLS.

    Equivalent to regressing on an intercept and s-1 dummies and adding the
    sample mean back to the residuals, so the series mean is preserved.
    Missing cells stay missing.
    """
    x = np.asarray(values, dtype=float)
    s = 12 if frequency == "Monthly" else 4
    if periods is None:
        seasons = np.arange(len(x)) % s
    else:
        seasons = np.array([_time.season(p, frequency) for p in periods])
    obs = ~np.isnan(x)
    counts = np.bincount(seasons[obs], minlength=s)
    if counts.min() < 2:
        raise TooShortForSeasonal(f"need two full seasonal cycles (got per-season counts {counts.tolist()})")
    sums = np.bincount(seasons[obs], weights=x[obs], minlength=s)
    season_mean = sums / counts
    grand = x[obs].mean()
    out = x - (season_mean[seasons] - grand)
    out[~obs] = np.nan
    return out


def detect_outliers(values, periods: Sequence[str] | None = None,
                    covid_window: tuple[str, str] | None = None,
                    multiple: float = OUTLIER_IQR_MULTIPLE) -> set[int]:
    """Indices deviating from the median by more than ``multiple`` IQRs.

    Cells inside ``covid_window`` (inclusive stamps) are never flagged.
    """
    x = np.asarray(values, dtype=float)
    obs = x[~np.isnan(x)]
    if len(obs) < 4:
        raise TooFewObservations("outlier detection needs at least 4 observations")
    q1, med, q3 = np.percentile(obs, [25, 50, 75])
    iqr = q3 - q1
    if iqr <= 0:
        warnings.warn("interquartile range is zero; no outliers flagged", DegenerateIQR, stacklevel=2)
        return set()
    exempt = (_time.in_window(periods, covid_window) if periods is not None and covid_window
              else [False] * len(x))
    with np.errstate(invalid="ignore"):
        far = np.abs(x - med) > multiple * iqr
    return {int(t) for t in np.flatnonzero(far) if not exempt[t]}


# ----------------------------------------------------------------------------
# EM imputation

@dataclass
class EMInfo:
    iterations: int
    converged: bool
    objective: list[float]
    imputed: dict[str, int]


def _lowrank(z: np.ndarray, r: int) -> np.ndarray:
    """Column-mean plus best rank-r approximation of a T x N matrix."""
    m = z.mean(axis=0)
    if r == 0:
        return np.broadcast_to(m, z.shape).copy()
    u, s, vt = np.linalg.svd(z - m, full_matrices=False)
    return m + (u[:, :r] * s[:r]) @ vt[:r]


def em_impute(panel: Panel, r: int, tol: float = 1e-6, max_iter: int = 500,
              *, return_info: bool = False):
    """Fill missing cells with the r-factor common component (EM/PCA).

    Observed cells are standardized by their observed means and standard
    deviations; missing cells start at zero and are replaced each iteration
    by the mean-plus-rank-r fit of the filled panel. Iteration stops when the
    largest change in an imputed standardized cell falls below ``tol``.
    Observed cells of the returned panel are the input values unchanged.

    Hitting ``max_iter`` emits :class:`EMNoConvergence` and returns the last
    iterate.
    """
    x = panel.values
    n, t = x.shape
    if r < 0 or r >= min(n, t):
        raise RankDeficient(f"r={r} must satisfy 0 <= r < min(N, T) = {min(n, t)}")
    obs = ~np.isnan(x)
    need = max(4, int(np.ceil(0.2 * t)))
    short = [panel.metas[i].key for i in range(n) if obs[i].sum() < need]
    if short:
        raise TooFewObservations(f"series with fewer than {need} observations: {short}")
    mu = np.array([row[o].mean() for row, o in zip(x, obs)])
    sd = np.array([row[o].std() for row, o in zip(x, obs)])
    if (sd <= 0).any():
        bad = [panel.metas[i].key for i in np.flatnonzero(sd <= 0)]
        raise ConstantSeries(f"constant observed values: {bad}")
    z = np.where(obs, (x - mu[:, None]) / sd[:, None], 0.0).T  # T x N
    obs_t = obs.T
    miss_t = ~obs_t
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fit = _lowrank(z, r)
        history.append(float(((z - fit)[obs_t] ** 2).sum()))
        new = fit[miss_t]
        delta = float(np.abs(new - z[miss_t]).max()) if new.size else 0.0
        z[miss_t] = new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"EM imputation did not converge in {max_iter} iterations",
                      EMNoConvergence, stacklevel=2)
    filled = x.copy()
    rec = mu[:, None] + sd[:, None] * z.T
    filled[~obs] = rec[~obs]
    out = replace(panel, values=filled)
    if not return_info:
        return out
    imputed = {m.key: int((~o).sum()) for m, o in zip(panel.metas, obs)}
    return out, EMInfo(it, converged, history, imputed)


# ----------------------------------------------------------------------------
# standardization

def standardize(panel: Panel) -> StandardizedPanel:
    x = panel.values
    if np.isnan(x).any():
        raise TooFewObservations("standardize requires a balanced panel")
    mu = x.mean(axis=1)
    omega = x.std(axis=1)
    bad = omega <= 1e-14 * np.maximum(1.0, np.abs(mu))
    if bad.any():
        raise ConstantSeries(f"constant series: {[panel.metas[i].key for i in np.flatnonzero(bad)]}")
    z = (x - mu[:, None]) / omega[:, None]
    return StandardizedPanel(replace(panel, values=z), mu, omega, x.copy())


def destandardize(sp: StandardizedPanel, z: np.ndarray | None = None) -> np.ndarray:
    z = sp.z if z is None else z
    return sp.mu[:, None] + sp.omega[:, None] * z


# ----------------------------------------------------------------------------
# orchestration

@dataclass
class PretreatConfig:
    frequency: str = "Monthly"
    codes: str = "HT"
    level_ids: tuple[str, ...] = ("UNETOT", "UNEO25", "UNEU25")
    seasonal_tags: tuple[str, ...] = ("MSA",)
    start: str | None = None
    end: str | None = None
    covid_window: tuple[str, str] | None = None
    em_r: int = 6
    em_tol: float = 1e-6
    em_max_iter: int = 500
    deseasonalize: bool = True
    flag_outliers: bool = True

    def window(self) -> tuple[str, str]:
        if self.covid_window is not None:
            return tuple(_time.parse_period(p) for p in self.covid_window)
        return COVID_MONTHLY if self.frequency == "Monthly" else COVID_QUARTERLY


def select_frequency(raw: RawPanel, frequency: str) -> Panel:
    return to_quarterly(raw) if frequency == "Quarterly" else monthly_subset(raw)


def prepare(raw: RawPanel, cfg: PretreatConfig) -> tuple[Panel, dict]:
    """Frequency selection, transforms, trimming, seasonal dummies and
    outlier masking; returns a panel that may still contain missing cells."""
    panel = select_frequency(raw, cfg.frequency)
    panel = transform_panel(panel, cfg.codes, cfg.level_ids)
    panel = panel.trim(cfg.start and _time.parse_period(cfg.start), cfg.end and _time.parse_period(cfg.end))
    report: dict = {"frequency": cfg.frequency, "series": {}, "dropped": []}
    values = panel.values.copy()
    window = cfg.window()
    for i, meta in enumerate(panel.metas):
        entry = {"outliers": 0, "deseasonalized": False}
        row = values[i]
        n_obs = int((~np.isnan(row)).sum())
        if cfg.deseasonalize and meta.seasonal in cfg.seasonal_tags:
            try:
                row = deseasonalize_dummies(row, cfg.frequency, panel.periods)
                entry["deseasonalized"] = True
            except TooShortForSeasonal:
                logger.warning("%s: too short for seasonal dummies, left unadjusted", meta.key)
        if cfg.flag_outliers and n_obs >= 4:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateIQR)
                flagged = detect_outliers(row, panel.periods, window)
            if flagged:
                row = row.copy()
                row[sorted(flagged)] = np.nan
            entry["outliers"] = len(flagged)
        values[i] = row
        report["series"][meta.key] = entry
    panel = replace(panel, values=values)
    need = max(4, int(np.ceil(0.2 * len(panel.periods))))
    keep = []
    for i, meta in enumerate(panel.metas):
        obs = values[i][~np.isnan(values[i])]
        if len(obs) < need or obs.std() <= 0:
            report["dropped"].append(meta.key)
            del report["series"][meta.key]
        else:
            keep.append(i)
    return panel.select(keep), report


def pretreat(raw: RawPanel, cfg: PretreatConfig) -> tuple[Panel, dict]:
    """Run the full pre-treatment chain and return a balanced panel plus a
    JSON-ready report of imputed and outlier counts per series."""
    panel, report = prepare(raw, cfg)
    balanced, info = em_impute(panel, min(cfg.em_r, min(panel.shape) - 1), cfg.em_tol,
                               cfg.em_max_iter, return_info=True)
    for key, n in info.imputed.items():
        report["series"][key]["imputed"] = n
    report["em"] = {"iterations": info.iterations, "converged": info.converged,
                    "objective_final": info.objective[-1] if info.objective else None}
    return balanced, report
