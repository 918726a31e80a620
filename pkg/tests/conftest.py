import numpy as np
import pytest

from macrofactor import _time
from macrofactor.catalog import SeriesMeta
from macrofactor.panel import Panel, standardize
from macrofactor.synthetic import simulate_var


def make_panel(x, frequency="Monthly", start="2000-01", ids=None, codes=None):
    """Panel from an N x T array with synthetic metadata."""
    x = np.asarray(x, float)
    n, t = x.shape
    step = 1 if frequency == "Monthly" else 3
    periods = _time.month_range(start, _time.from_index(_time.month_index(start) + step * (t - 1)), step)
    ids = ids or [f"S{i}" for i in range(n)]
    metas = [SeriesMeta(id=i, country="EA", frequency=frequency, lt_code=0, ht_code=0, klass="Real")
             for i in ids]
    return Panel(periods, metas, x, frequency, codes)


def make_sp(x, **kw):
    return standardize(make_panel(x, **kw))


def stable_var(n=3, p=1, seed=0, rho=0.5):
    """Stable lag matrices, intercept and a lower-triangular impact."""
    rng = np.random.default_rng(seed)
    coefs = []
    for i in range(p):
        a = rng.normal(scale=0.1, size=(n, n))
        np.fill_diagonal(a, rho / (i + 1))
        coefs.append(a)
    S = np.tril(rng.normal(scale=0.3, size=(n, n)))
    np.fill_diagonal(S, 1.0 + rng.uniform(size=n))
    return rng.normal(size=n) * 0.1, coefs, S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# structural DGPs shared by the identification tests and the acceptance suite

IV_IMPACT = np.array([1.0, -0.8, 0.6, 1.2, -1.1, 0.7, 0.9])


def iv_dgp(seed, t=300, r2=0.5, noiseless=False):
    """7-variable SVAR(1) whose first shock is the policy shock, with a
    lower-triangular impact so u^p loads on that shock alone, plus an
    instrument with first-stage R^2 close to ``r2``."""
    rng = np.random.default_rng(seed)
    n = len(IV_IMPACT)
    B = np.diag(np.linspace(0.5, 0.2, n))
    B[1:, 0] = 0.05
    S = np.tril(np.full((n, n), 0.2), -1) + np.eye(n)
    # the policy shock accounts for half of every innovation variance
    S[1:, 1:] *= (np.abs(IV_IMPACT[1:]) / np.linalg.norm(S[1:, 1:], axis=1))[:, None]
    S[:, 0] = IV_IMPACT
    Y, eps = simulate_var(rng, np.zeros(n), [B], S, t)
    noise = np.sqrt((1 - r2) / r2) * rng.standard_normal(t)
    z = eps[:, 0] if noiseless else eps[:, 0] + noise
    return Y, z, S, B


SIGN_LABELS = ("IRT3M_EA", "chi:GDP_EA", "chi:HICPOV_EA", "chi:LTIRT_EA", "chi:SHIX_EA", "f1",
               "chi:LTIRT_DE", "chi:IPMN_DE")
SIGN_FLAGS = (False, True, True, False, True, False, False, True)
SIGN_IMPACT = np.array([1.0, -0.5, -0.4, 0.6, -0.8, -0.5, 0.3, -0.2])


def sign_dgp(seed, t=240):
    """Quarterly-shaped 8-variable VAR(1) whose policy column satisfies the
    default sign pattern (diagonal dynamics keep the impact signs)."""
    rng = np.random.default_rng(seed)
    n = len(SIGN_IMPACT)
    B = np.diag(np.full(n, 0.5))
    S = 0.3 * np.tril(rng.standard_normal((n, n)), -1) + np.diag(np.full(n, 0.6))
    S[:, 0] = SIGN_IMPACT
    Y, _ = simulate_var(rng, np.zeros(n), [B], S, t)
    return Y, S, B


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
