import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from macrofactor import _time
from macrofactor.catalog import RawPanel, SeriesMeta
from macrofactor.errors import (ConstantSeries, DegenerateIQR, NonPositiveForLog, RankDeficient,
                                TooFewObservations, TooShortForSeasonal)
from macrofactor.panel import (PretreatConfig, aggregate_to_quarterly, apply_transform, deseasonalize_dummies,
                               destandardize, detect_outliers, em_impute, pretreat, standardize, to_quarterly)

from conftest import make_panel

finite = st.floats(-1e6, 1e6, allow_nan=False)
positive = st.floats(1e-3, 1e6, allow_nan=False)


# aggregation

def test_flow_sums_stock_averages():
    assert aggregate_to_quarterly([1, 2, 3], "Flow")[1].tolist() == [6.0]
    assert aggregate_to_quarterly([1, 2, 3], "Stock")[1].tolist() == [2.0]


def test_incomplete_trailing_quarter_missing():
    q, v = aggregate_to_quarterly([1, 2, 3, 4, 5], "Flow")
    assert q == ["2000-01", "2000-04"]
    assert v[0] == 6 and np.isnan(v[1])


def test_quarter_with_missing_month():
    _, v = aggregate_to_quarterly([1, np.nan, 3, 4, 5, 6], "Stock")
    assert np.isnan(v[0]) and v[1] == 5


@given(arrays(float, 12, elements=finite), arrays(float, 12, elements=finite),
       st.floats(-10, 10), st.floats(-10, 10), st.sampled_from(["Stock", "Flow"]))
@settings(max_examples=50, deadline=None)
def test_aggregation_linear(x, y, a, b, kind):
    lhs = aggregate_to_quarterly(a * x + b * y, kind)[1]
    rhs = a * aggregate_to_quarterly(x, kind)[1] + b * aggregate_to_quarterly(y, kind)[1]
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


def test_to_quarterly_mixed_panel():
    periods = _time.month_range("2000-01", "2000-06")
    metas = [SeriesMeta("IP", "EA", "Monthly", 2, 2, "Real", stock_flow="Flow"),
             SeriesMeta("M1", "EA", "Monthly", 2, 2, "Financial", stock_flow="Stock"),
             SeriesMeta("GDP", "EA", "Quarterly", 2, 2, "Real")]
    vals = np.array([[1, 2, 3, 4, 5, 6], [1, 2, 3, 4, 5, 6], [9, np.nan, np.nan, 10, np.nan, np.nan]], float)
    q = to_quarterly(RawPanel(periods, metas, vals))
    assert q.periods == ["2000-01", "2000-04"]
    assert q.values.tolist() == [[6, 15], [2, 5], [9, 10]]


# transforms

def test_transform_examples():
    assert apply_transform([5, -1, 7], 0).tolist() == [5, -1, 7]
    out = apply_transform([100, 110], 2)
    assert np.isnan(out[0]) and out[1] == pytest.approx(9.53101798, abs=1e-7)
    t = np.arange(10)
    out = apply_transform(np.exp(0.3 + 0.05 * t), 3)
    assert np.isnan(out[:2]).all() and np.abs(out[2:]).max() < 1e-10


def test_log_rejects_nonpositive():
    for code in (1, 2, 3):
        with pytest.raises(NonPositiveForLog):
            apply_transform([1, 0, 2], code)


LEADING = {0: 0, 1: 0, 2: 1, 3: 2, 4: 1, 5: 2}


@given(arrays(float, st.integers(3, 30), elements=positive), st.integers(0, 5))
@settings(max_examples=100, deadline=None)
def test_transform_length_and_leading_missings(x, code):
    out = apply_transform(x, code)
    k = LEADING[code]
    assert out.shape == x.shape
    assert np.isnan(out[:k]).all() and not np.isnan(out[k:]).any()


@given(arrays(float, st.integers(2, 40), elements=finite))
@settings(max_examples=100, deadline=None)
def test_code4_cumsum_inverts(x):
    d = apply_transform(x, 4)
    rebuilt = x[0] + np.r_[0.0, np.cumsum(d[1:])]
    assert np.allclose(rebuilt, x, rtol=1e-12, atol=1e-6)


def test_missing_inputs_propagate():
    out = apply_transform([1.0, np.nan, 3.0, 4.0], 4)
    assert np.isnan(out[:3]).all() and out[3] == 1.0


# seasonal dummies

def test_quarterly_additive_pattern_removed():
    x = np.tile([1.0, 0.0, -1.0, 0.0], 10) + 5.0
    out = deseasonalize_dummies(x, "Quarterly")
    assert np.ptp(out) < 1e-10
    assert out.mean() == pytest.approx(x.mean(), abs=1e-10)


def test_constant_unchanged():
    x = np.full(24, 3.5)
    assert np.allclose(deseasonalize_dummies(x, "Monthly"), x, atol=1e-12)


def test_monthly_sinusoid_reduced():
    rng = np.random.default_rng(3)
    t = np.arange(241)
    x = 0.01 * t + np.sin(2 * np.pi * t / 12) + 0.01 * rng.standard_normal(241)
    dx = np.diff(x)                                  # the caller differences away the trend
    out = deseasonalize_dummies(dx, "Monthly")
    w = 2 * np.pi * np.arange(240) / 12
    basis = np.column_stack([np.ones(240), np.sin(w), np.cos(w)])

    def amp(v):
        coef = np.linalg.lstsq(basis, v, rcond=None)[0]
        return np.hypot(coef[1], coef[2])
    assert amp(out) < 0.01 * amp(dx)


def test_seasonal_needs_two_cycles():
    with pytest.raises(TooShortForSeasonal):
        deseasonalize_dummies(np.arange(7.0), "Quarterly")


@given(arrays(float, st.integers(8, 40), elements=st.floats(-100, 100, allow_nan=False)))
@settings(max_examples=50, deadline=None)
def test_seasonal_mean_preserved(x):
    out = deseasonalize_dummies(x, "Quarterly")
    assert out.mean() == pytest.approx(x.mean(), abs=1e-9)


# outliers

def _base_series(n=60, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


def test_outlier_flagged_and_covid_exempt():
    x = _base_series()
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    periods = _time.month_range("2016-01", _time.from_index(_time.month_index("2016-01") + 59))
    i = periods.index("2020-04")
    x[i] = med + 10.5 * (q3 - q1)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    assert x[i] - med > 10 * (q3 - q1)
    assert detect_outliers(x) == {i}
    assert detect_outliers(x, periods, ("2020-03", "2020-12")) == set()


def test_degenerate_iqr_warns():
    with pytest.warns(DegenerateIQR):
        assert detect_outliers([1.0, 1.0, 1.0, 1.0, 50.0]) == set()


@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-100, 100))
@settings(max_examples=60, deadline=None)
def test_outliers_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(1.5, 50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateIQR)
        flags = detect_outliers(x)
        flags2 = detect_outliers(a * x + b)
    # exact boundary ties can flip under rounding; require they are not razor-close
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    margin = np.abs(np.abs(x - med) - 10 * (q3 - q1)).min()
    assume(margin > 1e-9 * (1 + np.abs(x).max()))
    assert flags == flags2


# EM imputation

def _lowrank_panel(n, t, r, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, r)) @ rng.standard_normal((r, t))
    return x + noise * rng.standard_normal((n, t))


def test_em_rank_one_single_cell():
    rng = np.random.default_rng(1)
    lam, f = rng.uniform(1, 2, 8), rng.standard_normal(50)
    x = np.outer(lam, f) + np.arange(8)[:, None]           # rank one after centering
    masked = x.copy()
    masked[3, 17] = np.nan
    out = em_impute(make_panel(masked), 1, tol=1e-13, max_iter=5000)
    assert out.values[3, 17] == pytest.approx(x[3, 17], abs=1e-8)


def test_em_no_missing_unchanged():
    x = _lowrank_panel(6, 30, 2, 0, 0.1)
    out, info = em_impute(make_panel(x), 2, return_info=True)
    assert info.iterations == 1 and info.converged
    assert out.values.tobytes() == x.tobytes()


def test_em_observed_cells_bit_identical_and_monotone():
    x = _lowrank_panel(20, 80, 2, 4, 0.05)
    mask = np.random.default_rng(5).uniform(size=x.shape) < 0.1
    xm = np.where(mask, np.nan, x)
    out, info = em_impute(make_panel(xm), 2, return_info=True)
    assert out.values[~mask].tobytes() == xm[~mask].tobytes()
    assert not np.isnan(out.values).any()
    obj = np.array(info.objective)
    assert (np.diff(obj) <= 1e-12 * obj[0]).all()


def test_em_errors():
    x = _lowrank_panel(5, 20, 1, 0)
    with pytest.raises(RankDeficient):
        em_impute(make_panel(x), 5)
    x[0, 1:] = np.nan
    with pytest.raises(TooFewObservations):
        em_impute(make_panel(x), 1)


# standardization

def test_standardize_examples():
    sp = standardize(make_panel([[0.0, 2.0]]))
    assert sp.z.tolist() == [[-1.0, 1.0]] and sp.mu[0] == 1 and sp.omega[0] == 1


def test_already_standardized():
    z = np.random.default_rng(0).standard_normal((3, 40))
    z = (z - z.mean(1, keepdims=True)) / z.std(1, keepdims=True)
    sp = standardize(make_panel(z))
    assert np.allclose(sp.z, z, atol=1e-12) and np.allclose(sp.mu, 0, atol=1e-12)
    assert np.allclose(sp.omega, 1, atol=1e-12)


def test_constant_series_rejected():
    with pytest.raises(ConstantSeries):
        standardize(make_panel([[1.0, 1.0, 1.0], [1.0, 2.0, 3.0]]))


@given(arrays(float, (4, 25), elements=st.floats(-1e3, 1e3, allow_nan=False)))
@settings(max_examples=60, deadline=None)
def test_standardize_properties(x):
    assume((x.std(axis=1) > 1e-3).all())
    sp = standardize(make_panel(x))
    assert np.abs(sp.z.mean(axis=1)).max() < 1e-10
    assert np.abs(sp.z.var(axis=1) - 1).max() < 1e-8
    assert np.allclose(destandardize(sp), x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))


def test_pretreat_report_counts():
    x = _lowrank_panel(10, 120, 2, 9, 0.2) + 50
    x[2, 10] = 1e4                                   # an outlier
    x[4, :5] = np.nan
    panel = make_panel(x)
    balanced, report = pretreat(RawPanel(panel.periods, panel.metas, panel.values),
                                PretreatConfig(em_r=2, deseasonalize=False))
    assert not np.isnan(balanced.values).any()
    assert report["series"]["S2_EA"]["outliers"] == 1
    assert report["series"]["S4_EA"]["imputed"] == 5
