import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrofactor.ccvar import QUARTERLY_SIGNS, sign_spec_for
from macrofactor.errors import (AcceptanceStarved, BootstrapDegenerate, ConflictingSigns, HorizonOutOfRange,
                                NoOverlap)
from macrofactor.identify import (F_THRESHOLD, Instrument, IrfBundle, SignSpec, block_bootstrap_irfs,
                                  block_indices, check_signs, default_block_length, draw_rotation,
                                  fry_pagan_index, fry_pagan_select, info_shock_filter, instrument_screen,
                                  instrument_to_quarterly, proxy_iv, read_bundle_csv, read_instrument, rebuild,
                                  sign_identify)
from macrofactor.var import Irf, fit_var, irf

from conftest import SIGN_FLAGS, SIGN_LABELS, iv_dgp, sign_dgp


# information-shock filter

def test_info_filter_examples():
    out = info_shock_filter([0.1, 0.1, 0.1, -0.2, np.nan], [-0.3, 0.2, 0.0, 0.5, -1.0])
    assert out[0] == 0.1 and out[3] == -0.2
    assert np.isnan(out[[1, 2, 4]]).all()


def test_read_instrument_applies_filter(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("date,z,equity_surprise\n2000-01,0.1,-0.3\n2000-02,0.1,0.2\n2000-03,,0.1\n2000-04,-0.2,0.4\n", encoding="utf-8")
    ins = read_instrument(p)
    assert ins.z[0] == 0.1 and ins.z[3] == -0.2 and np.isnan(ins.z[1:3]).all()
    assert read_instrument(p, apply_filter=False).z[1] == 0.1


def test_quarterly_instrument_sum():
    months = ("2000-01", "2000-02", "2000-03", "2000-04", "2000-05", "2000-07")
    ins = Instrument(months, [1.0, np.nan, 2.0, np.nan, np.nan, -1.5])
    q = instrument_to_quarterly(ins)
    assert q.periods == ("2000-01", "2000-04", "2000-07")
    assert q.z[0] == 3.0 and np.isnan(q.z[1]) and q.z[2] == -1.5


def test_constant_instrument_rejected():
    with pytest.raises(ValueError):
        Instrument(None, [1.0, 1.0, np.nan])


# proxy IV

def _iv_model(seed=0, t=300, **kw):
    Y, z, S, _ = iv_dgp(seed, t, **kw)
    return fit_var(Y, 1), z, S


def _ols_oracle(U, z):
    """Two-stage estimate via explicit least squares with numpy."""
    X = np.column_stack([np.ones(len(z)), z])
    coef = np.linalg.lstsq(X, U[:, 0], rcond=None)[0]
    fit = X @ coef
    return np.array([np.linalg.lstsq(fit[:, None], U[:, j], rcond=None)[0][0] for j in range(U.shape[1])])


def test_proxy_iv_matches_oracle():
    m, z, S = _iv_model(1)
    col = proxy_iv(m, Instrument(None, z))
    ref = _ols_oracle(m.residuals, z[1:])
    assert col.s[0] == 1.0
    assert np.allclose(col.s[1:], ref[1:], atol=1e-12)
    assert col.strong and col.f_stat > F_THRESHOLD


def test_f_equals_squared_t():
    m, z, _ = _iv_model(2)
    col = proxy_iv(m, Instrument(None, z))
    zz, up = z[1:], m.residuals[:, 0]
    X = np.column_stack([np.ones(len(zz)), zz])
    coef, res, *_ = np.linalg.lstsq(X, up, rcond=None)
    s2 = res[0] / (len(zz) - 2)
    se = np.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
    assert col.f_stat == pytest.approx((coef[1] / se) ** 2, rel=1e-8)


@given(st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100))
@settings(max_examples=40, deadline=None)
def test_affine_instrument_invariance(a, b):
    m, z, _ = _iv_model(3)
    base = proxy_iv(m, Instrument(None, z))
    other = proxy_iv(m, Instrument(None, a * z + b))
    assert np.allclose(base.s, other.s, rtol=1e-8, atol=1e-10)
    assert other.f_stat == pytest.approx(base.f_stat, rel=1e-7)


def test_no_overlap():
    m, z, _ = _iv_model(4)
    zz = np.full_like(z, np.nan)
    zz[:9] = np.arange(9.0)
    with pytest.raises(NoOverlap):
        proxy_iv(m, Instrument(None, zz))


def test_instrument_screen():
    m, z, _ = _iv_model(5)
    single = instrument_screen(m, [Instrument(None, z, name="a")])
    assert single[0]["rank"] == 1 and single[0]["name"] == "a"
    empty = Instrument(None, np.r_[np.nan * np.ones(len(z) - 2), 1.0, 2.0], name="gone")
    out = instrument_screen(m, [empty, Instrument(None, z, name="a")])
    assert [d["name"] for d in out] == ["a", "gone"]
    assert out[1]["rank"] is None and out[1]["error"] == "NoOverlap"


def test_screen_ranks_strong_above_weak():
    wins = 0
    for seed in range(100):
        Y, _, _, _ = iv_dgp(seed, 300)
        m = fit_var(Y, 1)
        rng = np.random.default_rng(seed + 7)
        e = m.residuals[:, 0]
        e = e / e.std()
        strong = e + rng.standard_normal(len(e))                 # R^2 0.5
        weak = e + np.sqrt(19) * rng.standard_normal(len(e))     # R^2 0.05
        out = instrument_screen(m, [Instrument(None, weak, name="weak"), Instrument(None, strong, name="strong")])
        wins += out[0]["name"] == "strong"
    assert wins >= 95


# sign restrictions

def test_rotation_properties():
    rng = np.random.default_rng(0)
    assert draw_rotation(1, rng).tolist() == [[1.0]]
    for n in (2, 3, 5):
        Q = draw_rotation(n, rng)
        assert np.abs(Q @ Q.T - np.eye(n)).max() < 1e-10
        assert abs(abs(np.linalg.det(Q)) - 1) < 1e-10
    a = draw_rotation(4, np.random.default_rng(9))
    b = draw_rotation(4, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_rotation_haar_mean():
    rng = np.random.default_rng(1)
    mean = np.mean([draw_rotation(3, rng) for _ in range(10000)], axis=0)
    assert np.abs(mean).max() < 0.02


def test_signspec_json_roundtrip():
    labels = ["R", "Y", "P"]
    text = json.dumps([{"variable": "R", "horizon": 0, "sign": "+"}, {"variable": "Y", "horizon": 2, "sign": "-"}])
    spec = SignSpec.from_json(text, labels)
    assert spec.constraints == ((0, 0, 1), (1, 2, -1))
    assert SignSpec.from_json(spec.to_json(), labels) == spec
    with pytest.raises(ConflictingSigns):
        SignSpec.from_json([{"variable": "R", "horizon": 0, "sign": "+"},
                            {"variable": "R", "horizon": 0, "sign": "-"}], labels)
    with pytest.raises(ValueError):
        SignSpec(((0, -1, 1),))


def test_check_signs_examples():
    spec = sign_spec_for(QUARTERLY_SIGNS, SIGN_LABELS)
    values = np.tile(np.sign([1.0, -1, -1, 1, -1, -1, 1, 1]), (4, 1)) * 0.5
    good = Irf(values, SIGN_FLAGS, SIGN_LABELS)
    assert check_signs(good, spec)
    bad = values.copy()
    bad[1, 0] = -0.01
    assert not check_signs(bad, spec)
    zero = values.copy()
    zero[0, 3] = 0.0
    assert not check_signs(zero, spec)
    with pytest.raises(HorizonOutOfRange):
        check_signs(values[:2], spec)


def _sign_model(seed=0):
    Y, S, _ = sign_dgp(seed)
    return fit_var(Y, 1, labels=SIGN_LABELS)


def test_sign_identify_sound():
    m = _sign_model()
    spec = sign_spec_for(QUARTERLY_SIGNS, SIGN_LABELS)
    draws = sign_identify(m, spec, 30, 100_000, np.random.default_rng(2), SIGN_FLAGS)
    assert len(draws) == 30 and draws.tries >= 30
    for S in draws:
        assert np.abs(S @ S.T - m.Sigma).max() < 1e-8
        assert check_signs(irf(m, S[:, 0], spec.max_horizon, SIGN_FLAGS), spec)


def test_empty_spec_accepts_first_draws():
    m = _sign_model(1)
    draws = sign_identify(m, SignSpec(()), 5, 100, np.random.default_rng(3))
    assert draws.tries == 5
    rng = np.random.default_rng(3)
    W = rng.standard_normal((100, m.n, m.n))            # one batch of max_tries draws
    L = np.linalg.cholesky(m.Sigma)
    for i, S in enumerate(draws):
        Q, R = np.linalg.qr(W[i])
        Q = Q * np.sign(np.diag(R))
        assert np.allclose(S, L @ Q.T, atol=1e-12)


def test_infeasible_spec_starves():
    m = _sign_model(2)
    spec = SignSpec(((0, 0, 1), (0, 0, -1)))
    with pytest.raises(AcceptanceStarved) as info:
        sign_identify(m, spec, 3, 2000, np.random.default_rng(0))
    assert info.value.count == 0 and info.value.tries == 2000


def _fp_bruteforce(vals):
    med = np.median(vals, axis=0)
    sd = vals.std(axis=0)
    best, arg = np.inf, -1
    for k in range(len(vals)):
        d = 0.0
        for h in range(vals.shape[1]):
            for j in range(vals.shape[2]):
                if sd[h, j] > 0:
                    d += ((vals[k, h, j] - med[h, j]) / sd[h, j]) ** 2
        if d < best:
            best, arg = d, k
    return arg


@given(st.integers(1, 31), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_fry_pagan_bruteforce(k, seed):
    vals = np.random.default_rng(seed).standard_normal((k, 5, 3))
    assert fry_pagan_index(list(vals)) == _fp_bruteforce(vals)


def test_fry_pagan_examples():
    one = Irf(np.ones((3, 2)), (False, False))
    assert fry_pagan_select([one]) is one
    base = np.random.default_rng(0).standard_normal((3, 2))
    irfs = [Irf(base * k, (False, False)) for k in (-2.0, 0.5, 1.0, 3.0, 4.0)]
    assert fry_pagan_select(irfs) is irfs[2]              # the member equal to the median
    with pytest.raises(ValueError):
        fry_pagan_select([])


# bootstrap

def test_block_indices():
    rng = np.random.default_rng(0)
    idx = block_indices(100, 5, rng)
    assert len(idx) == 100 and idx.min() >= 0 and idx.max() < 100
    assert default_block_length(100) == 5 and default_block_length(1) == 1
    assert block_indices(10, 10, rng).tolist() == list(range(10))


def test_rebuild_identity():
    m, _, _ = _iv_model(6)
    assert np.allclose(rebuild(m, m.residuals), m.Y, atol=1e-10)


def test_identity_resample_iv():
    Y, z, _, _ = iv_dgp(7)
    ins = Instrument(None, z)
    m = fit_var(Y, 1)
    b = block_bootstrap_irfs(Y, 1, ins, B=1, block_len=len(Y) - 1, H=10, jobs=1)
    assert np.abs(b.draws[1] - b.draws[0]).max() < 1e-10
    assert np.abs(b.original.values - irf(m, proxy_iv(m, ins).s, 10).values).max() < 1e-10


def test_identity_resample_signs():
    Y, _, _ = sign_dgp(3)
    spec = sign_spec_for(QUARTERLY_SIGNS, SIGN_LABELS)
    b = block_bootstrap_irfs(Y, 1, spec, B=1, block_len=len(Y) - 1, H=8, K=10, labels=SIGN_LABELS,
                             cumulative_flags=SIGN_FLAGS, jobs=1)
    assert b.draws.shape == (2, 9, 8)


def test_bundle_ordering_and_csv(tmp_path):
    Y, z, _, _ = iv_dgp(8)
    b = block_bootstrap_irfs(Y, 1, Instrument(None, z), B=40, H=6, seed=3, jobs=1,
                             labels=[f"v{i}" for i in range(7)])
    med = np.median(b.draws, axis=0)
    assert (b.lower.values <= b.upper.values).all()
    assert (b.lower.values <= med).all() and (med <= b.upper.values).all()
    path = tmp_path / "b.csv"
    b.write_csv(path)
    labels, arr = read_bundle_csv(path)
    assert labels == [f"v{i}" for i in range(7)]
    assert np.array_equal(arr[..., 0], b.point.values) and np.array_equal(arr[..., 1], b.lower.values)
    back = IrfBundle.from_dict(json.loads(json.dumps(b.to_dict())))
    assert np.array_equal(back.upper.values, b.upper.values)


def test_bootstrap_deterministic_across_jobs():
    Y, z, _, _ = iv_dgp(9)
    a = block_bootstrap_irfs(Y, 1, Instrument(None, z), B=30, H=5, seed=11, jobs=1)
    b = block_bootstrap_irfs(Y, 1, Instrument(None, z), B=30, H=5, seed=11, jobs=4)
    assert np.array_equal(a.draws, b.draws)


def test_bootstrap_degenerate():
    # most replications fail when the instrument barely clears the overlap floor
    Y, _, _, _ = iv_dgp(10)
    z = np.full(len(Y), np.nan)
    z[-12:] = np.random.default_rng(0).standard_normal(12)
    with pytest.raises(BootstrapDegenerate):
        block_bootstrap_irfs(Y, 1, Instrument(None, z), B=20, block_len=3, H=2, seed=1, jobs=1)


def test_rescaled_unit_impact():
    Y, _, _ = sign_dgp(5)
    spec = sign_spec_for(QUARTERLY_SIGNS, SIGN_LABELS)
    b = block_bootstrap_irfs(Y, 1, spec, B=10, H=4, K=5, labels=SIGN_LABELS, cumulative_flags=SIGN_FLAGS,
                             seed=2, jobs=1)
    u = b.rescaled(0)
    assert np.allclose(u.draws[:, 0, 0], 1.0) and u.original.values[0, 0] == pytest.approx(1.0)
