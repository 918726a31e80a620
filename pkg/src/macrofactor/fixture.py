"""Synthetic monthly vintage used for smoke tests and the bundled example
run: an EA block plus two countries driven by the same factor VAR, with a
Covid volatility burst, a few level spikes and ragged edges."""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import _time
from ._rng import substream

FIXTURE_SEED = 424242
START, END = "2000-01", "2023-12"
COVID = ("2020-03", "2020-08")
COVID_SCALE = 4.0
N_FACTORS = 6
COUNTRIES = ("DE", "FR")

# (id, unit, class, HT code, first_obs, last_obs). Code 2 series are
# built as indices, code 4 as rates, code 0 as levels.
EA_SERIES = [
    ("IRT2Y", "Percent", "F", 4), ("IRT3M", "Percent", "F", 4), ("LTIRT", "Percent", "F", 4),
    ("IPMN", "2021=100", "R", 2), ("HICPOV", "2010=100", "N", 2), ("SHIX", "2010=100", "F", 2),
    ("UNETOT", "%active", "R", 0), ("IPCAG", "2021=100", "R", 2), ("IPNDCOG", "2021=100", "R", 2),
    ("TRNMN", "2021=100", "R", 2), ("HICPNEF", "2010=100", "N", 2), ("HICPG", "2010=100", "N", 2),
    ("PPICAG", "2021=100", "N", 2), ("M1", "Mil. EUR", "F", 2), ("M3", "Mil. EUR", "F", 2),
    ("EXRUS", "Rate", "F", 2), ("IRT6M", "Percent", "F", 4), ("CONFCI", "Balance", "C", 4),
    ("INDCI", "Balance", "C", 4), ("ESENTIX", "Index", "C", 4),
]
NATIONAL_SERIES = [
    ("LTIRT", "Percent", "F", 4), ("IPMN", "2021=100", "R", 2), ("HICPOV", "2010=100", "N", 2),
    ("UNETOT", "%active", "R", 0), ("IPCAG", "2021=100", "R", 2), ("HICPNEF", "2010=100", "N", 2),
    ("SHIX", "2010=100", "F", 2), ("TRNMN", "2021=100", "R", 2), ("CONFCI", "Balance", "C", 4),
]
RAGGED = {"IPMN_DE": (None, "2023-09"), "HICPOV_FR": ("2001-01", None), "M1_EA": (None, "2023-10"),
          "CONFCI_FR": ("2000-07", "2023-11")}
SPIKES = {"IPCAG_EA": ["2008-06"], "TRNMN_DE": ["2012-02"], "HICPNEF_FR": ["2016-09"]}


def _factor_var(rng, t, sigma):
    """Factor VAR(1) whose first shock is the policy shock."""
    A = np.diag([0.6, 0.7, 0.5, 0.4, 0.3, 0.2])
    A[1, 0], A[2, 0] = -0.15, -0.10
    S = np.eye(N_FACTORS) * 0.8 + 0.1
    eps = rng.standard_normal((t + 100, N_FACTORS))
    f = np.zeros_like(eps)
    scale = np.r_[np.ones(100), sigma]
    for s in range(1, t + 100):
        f[s] = A @ f[s - 1] + scale[s] * (S @ eps[s])
    return f[100:], eps[100:, 0]


def _levels(x, code, rng):
    if code == 2:
        return 100.0 * np.exp(np.cumsum(x) / 100.0)
    if code == 4:
        return 2.0 + rng.uniform(0, 2) + np.cumsum(x)
    return 8.0 + rng.uniform(-1, 1) + x


def generate_fixture(out_dir, seed: int = FIXTURE_SEED) -> Path:
    """Write catalog.csv, data/{EA,DE,FR}.csv, instrument.csv and two run
    configs into ``out_dir``."""
    out = Path(out_dir)
    (out / "data").mkdir(parents=True, exist_ok=True)
    periods = _time.month_range(START, END)
    t = len(periods)
    covid = np.array(_time.in_window(periods, COVID))
    sigma = np.where(covid, COVID_SCALE, 1.0)
    rng = substream(seed, "fixture")
    f, eps_p = _factor_var(rng, t, sigma)

    # loadings of the key transformed series on the policy-driven factors
    key_load = {"IRT2Y": [0.9, 0.1, 0.1, 0, 0, 0.1], "IRT3M": [1.0, 0.0, 0.1, 0, 0.1, 0],
                "LTIRT": [0.5, 0.2, 0.0, 0.2, 0, 0], "IPMN": [-0.6, 1.0, 0.2, 0.3, 0, 0],
                "HICPOV": [-0.3, 0.2, 1.0, 0, 0.2, 0], "SHIX": [-0.8, 0.5, 0, 0, 0.6, 0.3],
                "UNETOT": [0.3, -0.6, 0, 0.2, 0, 0.1]}
    scale = {2: 0.6, 4: 0.08, 0: 0.3}
    drift = {2: 0.15, 4: 0.0, 0: 0.0}
    catalog_rows, data = [], {}
    groups = [("EA", EA_SERIES)] + [(c, NATIONAL_SERIES) for c in COUNTRIES]
    number = 0
    for country, series in groups:
        cols = {}
        for sid, unit, klass, code in series:
            number += 1
            key = f"{sid}_{country}"
            base = key_load.get(sid)
            lam = np.array(base, float) if base is not None else rng.standard_normal(N_FACTORS) * 0.6
            if country != "EA":
                lam = lam + 0.05 * rng.standard_normal(N_FACTORS)
            idio = rng.standard_normal(t) * np.sqrt(0.5) * sigma ** 0.5
            x = drift[code] + scale[code] * (f @ lam + idio)
            if code == 0:
                x = np.cumsum(x) * 0.02 + 0.5 * (f @ lam) * scale[code]
            level = _levels(x, code, rng)
            for stamp in SPIKES.get(key, []):
                level[periods.index(stamp)] *= 1.5
            first, last = RAGGED.get(key, (None, None))
            obs = np.array(_time.in_window(periods, (first, last)))
            level = np.where(obs, level, np.nan)
            cols[sid] = level
            catalog_rows.append([number, sid, country, f"Synthetic {sid} ({country})", unit,
                                 "SA" if klass != "F" else "NSA", "M", "EUR", code, code, klass, "", ""])
        if country == "EA":
            # quarterly GDP: a flow, sum of three monthly volumes
            g = 100.0 * np.exp(np.cumsum(0.12 + 0.5 * (f @ np.array([-0.4, 1.0, 0.1, 0.2, 0, 0]))
                                         + 0.3 * rng.standard_normal(t)) / 100.0)
            q = np.full(t, np.nan)
            for i in range(0, t, 3):
                q[i] = g[i:i + 3].sum()
            cols["GDP"] = q
            number += 1
            catalog_rows.append([number, "GDP", "EA", "Synthetic GDP (EA)", "CLV(2015)", "SCA", "Q", "EUR",
                                 2, 2, "R", "Flow", ""])
        data[country] = cols

    with open(out / "catalog.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "ID", "Country", "Series", "Unit", "SA", "F", "Source", "LT", "HT", "Class",
                    "StockFlow", "FirstObs"])
        w.writerows(catalog_rows)
    for country, cols in data.items():
        with open(out / "data" / f"{country}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date"] + list(cols))
            for i, p in enumerate(periods):
                w.writerow([p] + ["" if np.isnan(v[i]) else f"{v[i]:.6f}" for v in cols.values()])

    # swap surprise correlated with the policy shock; the equity surprise
    # mostly moves the other way, and ~20% of meetings look like info shocks
    noise = rng.standard_normal(t)
    z = 0.05 * (eps_p + 0.8 * noise)
    equity = -np.sign(z) * np.abs(rng.normal(0.3, 0.1, t))
    flip = rng.uniform(size=t) < 0.2
    equity[flip] *= -1
    meet = rng.uniform(size=t) < 0.9
    with open(out / "instrument.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "z", "equity_surprise"])
        for i, p in enumerate(periods):
            w.writerow([p, f"{z[i]:.6f}" if meet[i] else "", f"{equity[i]:.6f}" if meet[i] else ""])

    targets = [f"{s}_{c}" for c in COUNTRIES for s in ("UNETOT", "IPMN", "HICPOV")]
    paths = {"catalog": "catalog.csv", "data_dir": "data", "instrument": "instrument.csv"}
    iv = {
        "paths": paths, "frequency": "Monthly", "start": "2000-02", "end": "2023-12", "r": 6,
        "spec": {"national_targets": targets},
        "identification": {"method": "IV", "column": "z", "equity_column": "equity_surprise", "filter": True},
        "bootstrap": {"B": 200, "reestimate_sigma": True}, "seed": 7,
    }
    signs = {
        "paths": paths, "frequency": "Quarterly", "start": "2000-04", "end": "2023-10", "r": 7,
        "spec": {"national_targets": targets[:2], "p": 2, "H": 12, "covid_start": "2020-04"},
        "identification": {"method": "Signs", "K": 30, "max_tries": 200000},
        "bootstrap": {"B": 50, "reestimate_sigma": True}, "seed": 7,
    }
    (out / "run.json").write_text(json.dumps(iv, indent=1) + "\n", encoding="utf-8")
    (out / "run_signs_quarterly.json").write_text(json.dumps(signs, indent=1) + "\n", encoding="utf-8")
    return out


def fixture_dir() -> Path:
    """Location of the bundled fixture inside the installed package."""
    return Path(str(resources.files("macrofactor") / "data" / "fixture"))


if __name__ == "__main__":
    generate_fixture(fixture_dir())
