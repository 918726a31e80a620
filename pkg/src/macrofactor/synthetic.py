"""Data-generating processes used by the test suite and the bundled fixture."""

from __future__ import annotations

import numpy as np


def ar1(rng, t: int, k: int, rho, burn: int = 100) -> np.ndarray:
    """T x k independent AR(1) paths with unit innovation variance."""
    rho = np.broadcast_to(np.asarray(rho, float), (k,))
    e = rng.standard_normal((t + burn, k))
    x = np.zeros_like(e)
    for s in range(1, t + burn):
        x[s] = rho * x[s - 1] + e[s]
    return x[burn:]


def factor_panel(rng, n: int, t: int, r: int, *, idio_ratio: float = 1.0,
                 idio_ar: float = 0.5, factor_ar: float = 0.0, lowrank_only: bool = False):
    """Static factor panel x = Lambda f + xi, returned N x T.

    ``idio_ratio`` is the idiosyncratic-to-common variance ratio per series;
    the idiosyncratic parts are AR(1) with coefficient ``idio_ar``.
    Returns ``(x, loadings, factors)``.
    """
    lam = rng.standard_normal((n, r))
    f = ar1(rng, t, r, factor_ar) * np.sqrt(1 - factor_ar ** 2)
    chi = lam @ f.T
    if lowrank_only or idio_ratio == 0:
        return chi, lam, f
    xi = ar1(rng, t, n, idio_ar).T * np.sqrt(1 - idio_ar ** 2)
    scale = np.sqrt(idio_ratio * (lam ** 2).sum(axis=1))
    return chi + scale[:, None] * xi, lam, f


def simulate_var(rng, intercept, coefs, impact, t: int, *, burn: int = 200,
                 sigma_t=None, shocks=None):
    """Simulate Y_t = C + sum B_i Y_{t-i} + sigma_t S eps_t.

    ``coefs`` is a list of n x n lag matrices, ``impact`` the structural
    impact matrix S. Returns ``(Y, eps)`` with Y of shape T x n and the
    structural shocks that drove the kept sample.
    """
    c = np.asarray(intercept, float)
    n = len(c)
    p = len(coefs)
    total = t + burn
    eps = rng.standard_normal((total, n)) if shocks is None else np.vstack(
        [rng.standard_normal((burn, n)), np.asarray(shocks)])
    scale = np.ones(total)
    if sigma_t is not None:
        scale[burn:] = sigma_t
    y = np.zeros((total, n))
    mean = np.linalg.solve(np.eye(n) - sum(coefs), c) if p else c
    y[:p] = mean
    for s in range(p, total):
        y[s] = c + sum(coefs[i] @ y[s - 1 - i] for i in range(p)) + scale[s] * (impact @ eps[s])
    return y[burn:], eps[burn:]
