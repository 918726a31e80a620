"""Principal-components estimation of the approximate factor model and
selection of the number of factors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._rng import DEFAULT_SEED, substream
from .errors import NoFixedPoint, NoStableInterval, RankTooLarge, ShapeMismatch
from .panel import StandardizedPanel


@dataclass
class FactorModel:
    r: int
    loadings: np.ndarray      # N x r, loadings' loadings / N = I
    factors: np.ndarray       # T x r
    eigenvalues: np.ndarray   # min(N, T), descending
    mu: np.ndarray
    omega: np.ndarray
    keys: list[str] = field(default_factory=list)
    periods: list[str] = field(default_factory=list)


@dataclass
class CommonComponents:
    chi: np.ndarray           # N x T, original scale
    xi: np.ndarray            # N x T
    factors: np.ndarray       # T x r
    keys: list[str] = field(default_factory=list)
    periods: list[str] = field(default_factory=list)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.chi[self.keys.index(key)]


def _eig(z: np.ndarray, k: int):
    """Top-k eigenpairs of the N x N covariance z'z/T from whichever Gram
    matrix is smaller. Returns (all eigenvalues, N x k eigenvectors)."""
    t, n = z.shape
    if n <= t:
        vals, vecs = np.linalg.eigh(z.T @ z / t)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order[:k]]
    else:
        vals, u = np.linalg.eigh(z @ z.T / t)
        order = np.argsort(vals)[::-1]
        vals, u = vals[order], u[:, order[:k]]
        lam = np.clip(vals[:k], 1e-300, None)
        vecs = z.T @ u / np.sqrt(t * lam)
        vecs /= np.linalg.norm(vecs, axis=0, keepdims=True)
    vals = np.clip(vals, 0.0, None)
    if vals.size:
        vals[vals <= max(t, n) * np.finfo(float).eps * vals[0]] = 0.0  # numerical rank
    return vals, vecs


def _fix_signs(v: np.ndarray) -> np.ndarray:
    if v.shape[1] == 0:
        return v
    pick = np.abs(v).argmax(axis=0)
    signs = np.sign(v[pick, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def spectrum(sp) -> np.ndarray:
    """Descending eigenvalues of the standardized sample covariance.

    Accepts a :class:`StandardizedPanel` or an already computed spectrum.
    """
    if isinstance(sp, StandardizedPanel):
        vals, _ = _eig(sp.z.T, 0)
        return vals
    return np.asarray(sp, dtype=float)


def pca_factors(sp: StandardizedPanel, r: int) -> FactorModel:
    """Loadings are sqrt(N) times the leading eigenvectors (sign fixed so the
    largest-magnitude entry of each column is positive); factors are the
    projections N^-1 Lambda' z_t."""
    z = sp.z.T
    t, n = z.shape
    if r < 0 or r > min(n, t):
        raise RankTooLarge(f"r={r} exceeds min(N, T)={min(n, t)}")
    vals, vecs = _eig(z, r)
    loadings = np.sqrt(n) * _fix_signs(vecs)
    factors = z @ loadings / n
    return FactorModel(r, loadings, factors, vals, sp.mu, sp.omega,
                       list(sp.panel.keys), list(sp.panel.periods))


def common_components(fm: FactorModel, sp: StandardizedPanel) -> CommonComponents:
    n, t = sp.shape
    if fm.loadings.shape[0] != n or fm.factors.shape[0] != t:
        raise ShapeMismatch(f"factor model is {fm.loadings.shape[0]}x{fm.factors.shape[0]}, panel is {n}x{t}")
    chi_std = fm.loadings @ fm.factors.T
    chi = fm.mu[:, None] + fm.omega[:, None] * chi_std
    xi = sp.original - chi
    return CommonComponents(chi, xi, fm.factors, list(sp.panel.keys), list(sp.panel.periods))


def explained_variance(fm: FactorModel, sp: StandardizedPanel, i: int) -> float:
    """Share of the variance of series ``i`` explained by its common component."""
    chi_i = fm.mu[i] + fm.omega[i] * (fm.loadings[i] @ fm.factors.T)
    share = np.var(chi_i) / np.var(sp.original[i])
    return float(np.clip(share, 0.0, 1.0))


def explained_variances(fm: FactorModel, sp: StandardizedPanel) -> np.ndarray:
    return np.array([explained_variance(fm, sp, i) for i in range(sp.shape[0])])


# ----------------------------------------------------------------------------
# number of factors

def _ic2_path(eigs: np.ndarray, n: int, t: int, rmax: int, c=1.0) -> np.ndarray:
    """IC2(k) for k = 0..rmax (rows) and each penalty multiplier c (columns)."""
    tail = np.array([eigs[k:].sum() for k in range(rmax + 1)])
    with np.errstate(divide="ignore"):
        logv = np.log(np.clip(tail / n, 0.0, None))
    pen = (n + t) / (n * t) * np.log(min(n, t))
    k = np.arange(rmax + 1)[:, None]
    return logv[:, None] + np.atleast_1d(c)[None, :] * k * pen


def ic2_bai_ng(sp: StandardizedPanel, rmax: int) -> int:
    """Bai-Ng IC2: argmin_k log V(k) + k (N+T)/(NT) log min(N, T)."""
    n, t = sp.shape
    if rmax >= min(n, t):
        raise RankTooLarge(f"rmax={rmax} must be below min(N, T)={min(n, t)}")
    ic = _ic2_path(spectrum(sp), n, t, rmax)[:, 0]
    return int(np.argmin(ic))


def er_ahn_horenstein(sp, rmax: int) -> int:
    """Eigenvalue ratio: argmax_{1<=k<=rmax} lambda_k / lambda_{k+1}."""
    eigs = spectrum(sp)
    if rmax < 1:
        return 0
    if rmax + 1 > len(eigs):
        raise RankTooLarge(f"rmax+1={rmax + 1} exceeds the number of eigenvalues {len(eigs)}")
    num, den = eigs[:rmax], eigs[1:rmax + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, np.nan))
    ratio = np.where(np.isnan(ratio), -np.inf, ratio)
    return int(np.argmax(ratio)) + 1


def onatski_test(sp, rmax: int, max_iter: int = 20, n_slope: int = 5) -> int:
    """Onatski's edge-distribution estimator.

    Starting from j = rmax + 1, regress lambda_j..lambda_{j+4} on
    (j-1)^{2/3}..(j+3)^{2/3}, set delta = 2|slope| and take the largest
    k <= rmax whose eigen-gap is at least delta; repeat with j = k + 1 until
    j stops moving.
    """
    eigs = spectrum(sp)
    if rmax + n_slope > len(eigs):
        raise RankTooLarge(f"need rmax + {n_slope} <= {len(eigs)} eigenvalues")
    gaps = eigs[:rmax] - eigs[1:rmax + 1]
    j = rmax + 1
    r_hat = 0
    for _ in range(max_iter):
        y = eigs[j - 1:j - 1 + n_slope]
        x = (j - 1 + np.arange(n_slope)) ** (2.0 / 3.0)
        beta = np.polyfit(x, y, 1)[0]
        delta = 2.0 * abs(beta)
        hits = np.flatnonzero((gaps >= delta) & (gaps > 0))
        r_hat = int(hits[-1]) + 1 if hits.size else 0
        if r_hat + 1 == j:
            return r_hat
        j = r_hat + 1
    warnings.warn("Onatski iteration did not reach a fixed point", NoFixedPoint, stacklevel=2)
    return r_hat


@dataclass
class ABCPath:
    c_grid: np.ndarray
    r_full: np.ndarray        # selection on the full panel for each c
    variance: np.ndarray      # across-subsample variance of the selection, per c
    intervals: list[tuple[int, int, int]]  # (first c index, last c index, r)


def _restandardize(z: np.ndarray) -> np.ndarray:
    sd = z.std(axis=0)
    sd[sd == 0] = 1.0
    return (z - z.mean(axis=0)) / sd


def abc_path(sp: StandardizedPanel, rmax: int, c_grid=None, n_subsamples: int = 30,
             shrink: float = 0.25, rng=None) -> ABCPath:
    n, t = sp.shape
    if rmax >= min(n, t):
        raise RankTooLarge(f"rmax={rmax} must be below min(N, T)={min(n, t)}")
    if n_subsamples < 2:
        raise ValueError("need at least two subsample sizes")
    c_grid = np.round(np.arange(1, 301) * 0.01, 10) if c_grid is None else np.asarray(c_grid, float)
    rng = substream(DEFAULT_SEED, "subsamples") if rng is None else rng
    perm = rng.permutation(n)
    z = sp.z.T
    picks = np.empty((n_subsamples, len(c_grid)), dtype=int)
    for j in range(n_subsamples):
        frac = 1.0 - shrink * (n_subsamples - 1 - j) / (n_subsamples - 1)
        nj, tj = max(rmax + 1, int(round(n * frac))), max(rmax + 1, int(round(t * frac)))
        sub = z[:tj, perm[:nj]] if j < n_subsamples - 1 else z
        if j < n_subsamples - 1:
            sub = _restandardize(sub)
        eigs, _ = _eig(sub, 0)
        picks[j] = np.argmin(_ic2_path(eigs, nj if j < n_subsamples - 1 else n,
                                       tj if j < n_subsamples - 1 else t, rmax, c_grid), axis=0)
    variance = picks.var(axis=0)
    r_full = picks[-1]
    intervals = []
    start = None
    for i in range(len(c_grid) + 1):
        stable = i < len(c_grid) and variance[i] == 0
        if stable and start is not None and r_full[i] != r_full[start]:
            intervals.append((start, i - 1, int(r_full[start])))
            start = i
        elif stable and start is None:
            start = i
        elif not stable and start is not None:
            intervals.append((start, i - 1, int(r_full[start])))
            start = None
    return ABCPath(c_grid, r_full, variance, intervals)


def abc_tuned(sp: StandardizedPanel, rmax: int, c_grid=None, n_subsamples: int = 30,
              shrink: float = 0.25, rng=None) -> int:
    """IC2 with the penalty tuned by subsample stability (Alessi et al.).

    The selection is read from the second stability interval of the penalty
    multiplier, i.e. the first zero-variance run past the trivial one where
    every subsample selects ``rmax``.
    """
    path = abc_path(sp, rmax, c_grid, n_subsamples, shrink, rng)
    remaining = [iv for iv in path.intervals if iv[2] != rmax]
    if not remaining:
        warnings.warn("no stable penalty interval; falling back to IC2", NoStableInterval, stacklevel=2)
        return ic2_bai_ng(sp, rmax)
    return remaining[0][2]


METHODS = ("Bai-Ng IC2", "Onatski", "Ahn-Horenstein ER", "Alessi et al. ABC")


def select_number_of_factors(sp: StandardizedPanel, rmax: int, rng=None) -> dict[str, int]:
    """All four selectors, keyed in the layout of the factor-count table."""
    return {
        METHODS[0]: ic2_bai_ng(sp, rmax),
        METHODS[1]: onatski_test(sp, min(rmax, len(spectrum(sp)) - 5)),
        METHODS[2]: er_ahn_horenstein(sp, rmax),
        METHODS[3]: abc_tuned(sp, rmax, rng=rng),
    }
