import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrofactor.errors import NotEnoughObservations, SingularRegressors, SingularSigma
from macrofactor.synthetic import simulate_var
from macrofactor.var import (SIGMA_MIN, cumulate, estimate_covid_volatility, fit_var, irf, lag_matrix,
                             ma_coefficients)

from conftest import stable_var


def _sim(n=3, p=2, t=400, seed=0, **kw):
    c, B, S = stable_var(n, p, seed)
    Y, _ = simulate_var(np.random.default_rng(seed + 1000), c, B, S, t, **kw)
    return Y, c, B, S


def test_ols_matches_lstsq_oracle():
    Y, *_ = _sim()
    m = fit_var(Y, 2)
    X = lag_matrix(Y, 2)
    coef = np.linalg.lstsq(X, Y[2:], rcond=None)[0]
    assert np.allclose(m.C, coef[0], atol=1e-10)
    assert np.allclose(np.hstack(list(m.B)), coef[1:].T, atol=1e-10)
    U = Y[2:] - X @ coef
    assert np.allclose(m.Sigma, U.T @ U / U.shape[0], atol=1e-10)
    assert np.allclose(m.residuals, U, atol=1e-10)


def test_residuals_orthogonal_to_regressors():
    Y, *_ = _sim(seed=3)
    m = fit_var(Y, 2)
    X = lag_matrix(Y, 2)
    assert np.abs(X.T @ m.residuals).max() < 1e-8


def test_monte_carlo_ar_coefficients():
    est = []
    for s in range(100):
        Y, _ = simulate_var(np.random.default_rng(s), [0, 0], [0.5 * np.eye(2)], np.eye(2), 500)
        est.append(fit_var(Y, 1).B[0])
    med = np.median(est, axis=0)
    assert np.abs(med - 0.5 * np.eye(2)).max() < 0.05


def test_constant_series_singular():
    Y, *_ = _sim(n=2, p=1)
    Y[:, 1] = 4.0
    with pytest.raises(SingularRegressors):
        fit_var(Y, 1)


def test_not_enough_observations():
    with pytest.raises(NotEnoughObservations):
        fit_var(np.random.default_rng(0).standard_normal((8, 3)), 2)


def test_covid_start_past_end_equals_ols():
    Y, *_ = _sim()
    periods = [f"{2000 + i // 12}-{i % 12 + 1:02d}" for i in range(len(Y))]
    a = fit_var(Y, 2, periods=periods)
    b = fit_var(Y, 2, "2099-01", periods=periods)
    assert np.array_equal(b.sigma_t, np.ones_like(b.sigma_t))
    assert np.allclose(a.B, b.B, atol=1e-12) and np.allclose(a.Sigma, b.Sigma, atol=1e-12)


def test_sigma_exactly_one_before_window():
    t = 300
    scale = np.ones(t)
    scale[250:262] = 3.0
    Y, *_ = _sim(t=t, sigma_t=scale, seed=5)
    m = fit_var(Y, 2, 250)
    assert (m.sigma_t[:248] == 1.0).all()
    assert m.sigma_t[248:260].mean() > 1.5
    assert (m.sigma_t > 0).all()


def test_covid_fixed_point():
    t = 300
    scale = np.ones(t)
    scale[240:260] = 2.5
    Y, *_ = _sim(t=t, sigma_t=scale, seed=6)
    m = fit_var(Y, 2, 240)
    # the returned quantities satisfy all three updates jointly
    again = fit_var(Y, 2, sigma_fixed=m.sigma_t)
    assert np.allclose(again.B, m.B, atol=1e-6) and np.allclose(again.Sigma, m.Sigma, atol=1e-6)
    raw = m.residuals * m.sigma_t[:, None]                 # residuals are stored scaled
    sig = estimate_covid_volatility(raw, m.Sigma, 238)
    assert np.abs(sig - m.sigma_t).max() < 1e-5


def test_volatility_examples():
    rng = np.random.default_rng(0)
    Sigma = np.diag([1.0, 2.0, 0.5])
    u = np.zeros((10, 3))
    assert np.array_equal(estimate_covid_volatility(u, Sigma, 10), np.ones(10))
    sig = estimate_covid_volatility(u, Sigma, 5)
    assert (sig[5:] == SIGMA_MIN).all() and (sig[:5] == 1).all()
    u = rng.multivariate_normal(np.zeros(3), Sigma, size=10)
    mask = np.zeros(10, bool)
    mask[[2, 7]] = True
    sig = estimate_covid_volatility(u, Sigma, mask)
    expect = np.sqrt(np.einsum("ti,ij,tj->t", u, np.linalg.inv(Sigma), u) / 3)
    assert np.allclose(sig[mask], expect[mask]) and (sig[~mask] == 1).all()
    with pytest.raises(SingularSigma):
        estimate_covid_volatility(u, np.zeros((3, 3)), 0)


def test_irf_scalar_ar():
    Y, _ = simulate_var(np.random.default_rng(0), [0, 0], [0.5 * np.eye(2)], np.eye(2), 100)
    m = fit_var(Y, 1)
    m = type(m)(**{**m.__dict__, "B": np.array([0.5 * np.eye(2)])})
    r = irf(m, [1.0, 0.0], 3)
    assert np.allclose(r.values[:, 0], [1, 0.5, 0.25, 0.125]) and np.allclose(r.values[:, 1], 0)
    assert np.array_equal(irf(m, [0.3, -2.0], 0).values, [[0.3, -2.0]])


def test_irf_matches_simulation_oracle():
    Y, *_ = _sim(n=4, p=2, seed=9)
    m = fit_var(Y, 2)
    s = np.array([0.5, -1.0, 0.2, 0.7])
    H = 15
    # direct simulation: zero history, unit shock at t=0, no intercept
    y = np.zeros((H + 3, 4))
    for h in range(H + 1):
        t = h + 2
        y[t] = m.B[0] @ y[t - 1] + m.B[1] @ y[t - 2] + (s if h == 0 else 0)
    assert np.abs(irf(m, s, H).values - y[2:]).max() < 1e-10


def test_companion_matches_ma():
    c, B, S = stable_var(3, 3, 2, rho=0.3)
    Y, _ = simulate_var(np.random.default_rng(2), c, B, S, 400)
    m = fit_var(Y, 3)
    A = m.companion()
    psi = ma_coefficients(m, 6)
    P = np.eye(A.shape[0])
    for h in range(7):
        assert np.allclose(P[:3, :3], psi[h], atol=1e-12)
        P = A @ P
    assert m.spectral_radius() < 1


def test_cumulative_flags():
    Y, *_ = _sim(seed=4)
    m = fit_var(Y, 2)
    raw = irf(m, [1, 0, 0], 10).values
    cum = irf(m, [1, 0, 0], 10, [True, False, True]).values
    assert np.allclose(cum[:, 0], np.cumsum(raw[:, 0])) and np.array_equal(cum[:, 1], raw[:, 1])
    assert np.allclose(cumulate(raw, [False] * 3), raw)


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_irf_linearity(a, b, seed):
    Y, *_ = _sim(seed=seed % 7)
    m = fit_var(Y, 2)
    rng = np.random.default_rng(seed)
    s1, s2 = rng.standard_normal(3), rng.standard_normal(3)
    lhs = irf(m, a * s1 + b * s2, 12, [True, False, False]).values
    rhs = a * irf(m, s1, 12, [True, False, False]).values + b * irf(m, s2, 12, [True, False, False]).values
    assert np.abs(lhs - rhs).max() < 1e-10 * max(1.0, np.abs(lhs).max())


@given(st.permutations(range(4)))
@settings(max_examples=20, deadline=None)
def test_reordering_invariance(perm):
    perm = list(perm)
    Y, *_ = _sim(n=4, p=2, seed=8)
    a, b = fit_var(Y, 2), fit_var(Y[:, perm], 2)
    assert np.allclose(b.C, a.C[perm], atol=1e-10)
    assert np.allclose(b.B, a.B[:, perm][:, :, perm], atol=1e-10)
    assert np.allclose(b.Sigma, a.Sigma[np.ix_(perm, perm)], atol=1e-10)


def test_model_dump_json_ready():
    import json
    Y, *_ = _sim()
    periods = [f"{2000 + i // 12}-{i % 12 + 1:02d}" for i in range(len(Y))]
    d = fit_var(Y, 2, "2030-01", periods=periods).to_dict()
    back = json.loads(json.dumps(d))
    assert back["covid_start"] == "2030-01" and len(back["B"]) == 2
