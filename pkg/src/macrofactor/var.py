"""Reduced-form VAR with a Covid-period residual volatility scale, plus
moving-average (impulse response) computations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _time
from .errors import NoConvergence, NotEnoughObservations, SingularRegressors, SingularSigma

logger = logging.getLogger(__name__)

SIGMA_MIN = 1e-3
SIGMA_TOL = 1e-6
SIGMA_MAX_ITER = 200


@dataclass(frozen=True)
class VarModel:
    """Y_t = C + sum_i B_i Y_{t-i} + sigma_t u_t, u_t ~ (0, Sigma).

    ``residuals`` are the scaled innovations u_t (rows aligned with Y[p:]);
    ``sigma_t`` equals one before the volatility window.
    """

    n: int
    p: int
    C: np.ndarray
    B: np.ndarray             # p x n x n
    Sigma: np.ndarray
    residuals: np.ndarray     # (T-p) x n
    sigma_t: np.ndarray       # T-p
    Y: np.ndarray = field(repr=False)
    covid_start: int | None = None   # row of Y where scaling starts
    periods: tuple[str, ...] | None = None  # stamps of Y rows
    labels: tuple[str, ...] | None = None
    iterations: int = 0

    @property
    def residual_periods(self) -> tuple[str, ...] | None:
        return None if self.periods is None else tuple(self.periods[self.p:])

    def companion(self) -> np.ndarray:
        n, p = self.n, self.p
        top = np.hstack(list(self.B))
        if p == 1:
            return top
        return np.vstack([top, np.eye(n * (p - 1), n * p)])

    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.companion())).max())

    def to_dict(self) -> dict:
        return {
            "n": self.n, "p": self.p, "labels": list(self.labels or []),
            "C": self.C.tolist(), "B": [b.tolist() for b in self.B],
            "Sigma": self.Sigma.tolist(), "sigma_t": self.sigma_t.tolist(),
            "covid_start": None if self.covid_start is None or self.periods is None
            else self.periods[self.covid_start],
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class Irf:
    values: np.ndarray        # (H+1) x n responses to one shock
    cumulative_flags: tuple[bool, ...]
    labels: tuple[str, ...] | None = None

    @property
    def H(self) -> int:
        return self.values.shape[0] - 1

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.values.shape[0])

    def column(self, label: str) -> np.ndarray:
        return self.values[:, list(self.labels).index(label)]


def lag_matrix(Y: np.ndarray, p: int) -> np.ndarray:
    """Rows [1, Y_{t-1}', ..., Y_{t-p}'] for t = p..T-1."""
    t = Y.shape[0]
    cols = [np.ones((t - p, 1))] + [Y[p - i:t - i] for i in range(1, p + 1)]
    return np.hstack(cols)


def _resolve_start(covid_start, periods, t: int) -> int | None:
    if covid_start is None:
        return None
    if isinstance(covid_start, (int, np.integer)):
        return int(covid_start)
    if periods is None:
        raise ValueError("a period-stamp covid_start needs the Y periods")
    stamp = _time.parse_period(covid_start)
    for i, p in enumerate(periods):
        if p >= stamp:
            return i
    return t


def _mahalanobis(E: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise SingularSigma("residual covariance is not positive definite") from None
    w = np.linalg.solve(L, E.T)
    return (w ** 2).sum(axis=0)


def estimate_covid_volatility(residuals, Sigma, window, sigma_min: float = SIGMA_MIN) -> np.ndarray:
    """Per-period Gaussian MLE of the volatility scale given Sigma.

    ``window`` is a boolean mask over residual rows (or the first row index
    of the window). Outside it the scale is exactly one.
    """
    E = np.asarray(residuals, float)
    m, n = E.shape
    if not isinstance(window, np.ndarray) or window.dtype != bool:
        start = m if window is None else int(window)
        window = np.arange(m) >= start
    sigma = np.ones(m)
    if window.any():
        d2 = _mahalanobis(E[window], np.asarray(Sigma, float)) / n
        sigma[window] = np.maximum(np.sqrt(d2), sigma_min)
    return sigma


def _wls(X, Y, sigma):
    # column-equilibrated QR; full column rank is checked upstream
    Xs = X / sigma[:, None]
    norms = np.linalg.norm(Xs, axis=0)
    q, r = np.linalg.qr(Xs / norms)
    return np.linalg.solve(r, q.T @ (Y / sigma[:, None])) / norms[:, None]


def fit_var(Y, p: int, covid_start=None, *, periods: Sequence[str] | None = None,
            labels: Sequence[str] | None = None, sigma_fixed=None,
            tol: float = SIGMA_TOL, max_iter: int = SIGMA_MAX_ITER,
            sigma_min: float = SIGMA_MIN) -> VarModel:
    """Fit the VAR by OLS, or by iterated WLS when a volatility window is set.

    With ``covid_start`` (row index or period stamp) the scale sigma_t for
    rows from the window start on is re-estimated jointly with the
    coefficients and Sigma until the scales move by less than ``tol``.
    ``sigma_fixed`` (length T-p) skips the iteration and uses given scales.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("Y must be T x n")
    t, n = Y.shape
    if p < 1:
        raise ValueError("p must be at least 1")
    if t - p <= n * p + 1:
        raise NotEnoughObservations(f"T={t} too short for {n} variables and {p} lags")
    if np.isnan(Y).any():
        raise ValueError("Y must be balanced")
    X = lag_matrix(Y, p)
    Yt = Y[p:]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularRegressors("regressor matrix is rank deficient (constant or collinear series?)")
    m = t - p
    start = _resolve_start(covid_start, periods, t)
    window = np.zeros(m, dtype=bool) if start is None else np.arange(p, t) >= start

    iterations = 0
    if sigma_fixed is not None:
        sigma = np.asarray(sigma_fixed, float).copy()
        if sigma.shape != (m,):
            raise ValueError(f"sigma_fixed must have length {m}")
        coef = _wls(X, Yt, sigma)
    elif not window.any():
        sigma = np.ones(m)
        coef = _wls(X, Yt, sigma)
    else:
        sigma = np.ones(m)
        for iterations in range(1, max_iter + 1):
            coef = _wls(X, Yt, sigma)
            E = Yt - X @ coef
            U = E / sigma[:, None]
            Sigma = U.T @ U / m
            new = estimate_covid_volatility(E, Sigma, window, sigma_min)
            delta = np.abs(new - sigma).max()
            sigma = new
            if delta < tol:
                break
        else:
            raise NoConvergence(f"volatility iteration did not converge in {max_iter} steps")
        coef = _wls(X, Yt, sigma)
    E = Yt - X @ coef
    U = E / sigma[:, None]
    Sigma = U.T @ U / m
    Sigma = (Sigma + Sigma.T) / 2
    B = np.stack([coef[1 + i * n:1 + (i + 1) * n].T for i in range(p)])
    return VarModel(n=n, p=p, C=coef[0].copy(), B=B, Sigma=Sigma, residuals=U, sigma_t=sigma,
                    Y=Y, covid_start=start, periods=None if periods is None else tuple(periods),
                    labels=None if labels is None else tuple(labels), iterations=iterations)


def ma_coefficients(model: VarModel, H: int) -> np.ndarray:
    """Psi_0..Psi_H of the truncated moving-average representation."""
    n, p = model.n, model.p
    psi = np.zeros((H + 1, n, n))
    psi[0] = np.eye(n)
    for h in range(1, H + 1):
        for i in range(1, min(h, p) + 1):
            psi[h] += model.B[i - 1] @ psi[h - i]
    return psi


def cumulate(values: np.ndarray, flags: Sequence[bool]) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    flags = np.asarray(flags, dtype=bool)
    if flags.any():
        out[..., flags] = np.cumsum(out[..., flags], axis=-2)
    return out


def irf(model: VarModel, impact, H: int, cumulative_flags: Sequence[bool] | None = None) -> Irf:
    """Responses Psi_h s for h = 0..H; flagged variables are cumulated."""
    if H < 0:
        raise ValueError("H must be non-negative")
    s = np.asarray(impact, float)
    flags = tuple(bool(f) for f in (cumulative_flags if cumulative_flags is not None else [False] * model.n))
    raw = ma_coefficients(model, H) @ s
    return Irf(cumulate(raw, flags), flags, model.labels)
