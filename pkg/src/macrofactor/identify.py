"""Identification of the policy column of the impact matrix: external
instruments, sign restrictions, and moving-block bootstrap bands."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _time
from ._rng import DEFAULT_SEED, substream
from .errors import (AcceptanceStarved, BootstrapDegenerate, CholeskyFailure,
                     ConflictingSigns, HorizonOutOfRange, MacroFactorError, NoOverlap,
                     ZeroFirstStage)
from .var import Irf, VarModel, cumulate, fit_var, ma_coefficients

logger = logging.getLogger(__name__)

MIN_OVERLAP = 10
F_THRESHOLD = 10.0
MAX_DROP_SHARE = 0.10


@dataclass(frozen=True)
class Instrument:
    periods: tuple[str, ...] | None
    z: np.ndarray             # NaN where missing
    policy_index: int = 0
    name: str = "z"

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", z)
        if self.periods is not None:
            object.__setattr__(self, "periods", tuple(_time.parse_period(p) for p in self.periods))
            if len(self.periods) != len(z):
                raise ValueError("instrument periods and values differ in length")
        obs = z[~np.isnan(z)]
        if obs.size and np.ptp(obs) == 0:
            raise ValueError(f"instrument {self.name} is constant on its observed support")


@dataclass(frozen=True)
class ImpactColumn:
    s: np.ndarray
    normalization: str = "UnitPolicyImpact"
    f_stat: float = float("nan")
    beta: float = float("nan")
    n_obs: int = 0
    policy_index: int = 0

    @property
    def strong(self) -> bool:
        return self.f_stat > F_THRESHOLD


def info_shock_filter(swap, equity) -> np.ndarray:
    """Keep a surprise only when the equity surprise moves with strictly
    opposite sign; everything else (including zeros) becomes missing."""
    swap = np.asarray(swap, dtype=float)
    equity = np.asarray(equity, dtype=float)
    if swap.shape != equity.shape:
        raise ValueError("surprise series must be equally indexed")
    with np.errstate(invalid="ignore"):
        keep = np.sign(swap) * np.sign(equity) < 0
    return np.where(keep, swap, np.nan)


def instrument_to_quarterly(instr: Instrument) -> Instrument:
    """Sum monthly surprises within each quarter (quarters with no
    observed surprise stay missing)."""
    if instr.periods is None:
        raise ValueError("quarterly aggregation needs instrument periods")
    sums: dict[str, float] = {}
    for per, v in zip(instr.periods, instr.z):
        q = _time.quarter_start(per)
        if not np.isnan(v):
            sums[q] = sums.get(q, 0.0) + v
        else:
            sums.setdefault(q, np.nan)
    qs = sorted(sums)
    return Instrument(tuple(qs), np.array([sums[q] for q in qs]), instr.policy_index, instr.name)


def read_instrument(path, column: str = "z", *, policy_index: int = 0, equity_column: str | None = "equity_surprise",
                    apply_filter: bool = True, name: str | None = None) -> Instrument:
    """Instrument CSV with a date column, a surprise column and optionally
    the equity surprise used by the information-shock filter."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "date" not in rows[0] or column not in rows[0]:
        raise ValueError(f"{path}: expected columns date,{column}")

    def num(s):
        s = (s or "").strip()
        return float(s) if s and s.upper() not in ("NA", "NAN") else np.nan

    periods = tuple(_time.parse_period(r["date"]) for r in rows)
    z = np.array([num(r[column]) for r in rows])
    if apply_filter and equity_column and equity_column in rows[0]:
        z = info_shock_filter(z, np.array([num(r[equity_column]) for r in rows]))
    return Instrument(periods, z, policy_index, name or column)


def align_instrument(model: VarModel, instr: Instrument) -> np.ndarray:
    """Instrument values on the residual rows of ``model`` (NaN if absent)."""
    m = model.residuals.shape[0]
    if instr.periods is not None and model.periods is not None:
        lookup = dict(zip(instr.periods, instr.z))
        return np.array([lookup.get(p, np.nan) for p in model.residual_periods])
    if len(instr.z) == m:
        return instr.z.copy()
    if len(instr.z) == m + model.p:
        return instr.z[model.p:].copy()
    raise ValueError(f"cannot align instrument of length {len(instr.z)} with {m} residuals")


def _proxy(U: np.ndarray, z: np.ndarray, policy: int) -> ImpactColumn:
    ok = ~np.isnan(z)
    m = int(ok.sum())
    if m < MIN_OVERLAP:
        raise NoOverlap(f"only {m} overlapping observations (need {MIN_OVERLAP})")
    zo, uo = z[ok], U[ok]
    up = uo[:, policy]
    X = np.column_stack([np.ones(m), zo])
    coef, *_ = np.linalg.lstsq(X, up, rcond=None)
    beta = coef[1]
    zc = zo - zo.mean()
    sxx = zc @ zc
    if sxx == 0 or abs(beta) * np.sqrt(sxx / m) <= 1e-12 * max(np.std(up), 1e-300):
        raise ZeroFirstStage("first-stage slope is numerically zero")
    fitted = X @ coef
    resid = up - fitted
    s2 = resid @ resid / (m - 2)
    f_stat = float(beta ** 2 * sxx / s2) if s2 > 0 else float("inf")
    gamma = fitted @ uo / (fitted @ fitted)
    s = np.asarray(gamma, dtype=float)
    s[policy] = 1.0
    return ImpactColumn(s, "UnitPolicyImpact", f_stat, float(beta), m, policy)


def proxy_iv(model: VarModel, instr: Instrument) -> ImpactColumn:
    """Two-stage external-instrument estimate of the policy column.

    Stage one regresses the policy residual on a constant and Z; stage two
    regresses every other residual on the stage-one fitted values. The
    policy entry is normalized to one and ``f_stat`` is the stage-one F.
    """
    z = align_instrument(model, instr)
    return _proxy(model.residuals, z, instr.policy_index)


def instrument_screen(model: VarModel, candidates: Sequence[Instrument]) -> list[dict]:
    """Candidates ranked by first-stage F, strong above 10. Failures are
    reported with their error and left unranked at the end."""
    if not candidates:
        raise ValueError("need at least one candidate instrument")
    ok, failed = [], []
    for c in candidates:
        try:
            col = proxy_iv(model, c)
        except (NoOverlap, ZeroFirstStage, ValueError) as exc:
            failed.append({"name": c.name, "f_stat": None, "strong": False, "rank": None,
                           "error": type(exc).__name__, "n_obs": 0})
            continue
        ok.append({"name": c.name, "f_stat": col.f_stat, "strong": col.strong,
                   "error": None, "n_obs": col.n_obs, "impact": col})
    ok.sort(key=lambda d: -d["f_stat"])
    for i, d in enumerate(ok, 1):
        d["rank"] = i
    return ok + failed


# ----------------------------------------------------------------------------
# sign restrictions

_SIGNS = {"+": 1, "-": -1, "−": -1, 1: 1, -1: -1, "pos": 1, "neg": -1}


@dataclass(frozen=True)
class SignSpec:
    """Constraints ``(variable index, horizon, sign)`` on the responses to
    the first structural shock. Construction does not reject conflicting
    cells (such a spec is simply infeasible); :meth:`validate` does."""

    constraints: tuple[tuple[int, int, int], ...] = ()
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        cons = []
        for var, h, sign in self.constraints:
            if int(h) < 0:
                raise ValueError("sign-restriction horizons must be non-negative")
            if sign not in _SIGNS:
                raise ValueError(f"bad sign {sign!r}")
            cons.append((int(var), int(h), _SIGNS[sign]))
        object.__setattr__(self, "constraints", tuple(cons))

    @property
    def max_horizon(self) -> int:
        return max((h for _, h, _ in self.constraints), default=-1)

    def validate(self) -> "SignSpec":
        seen = {}
        for var, h, sign in self.constraints:
            if seen.setdefault((var, h), sign) != sign:
                raise ConflictingSigns(f"variable {var} at horizon {h} has conflicting signs")
        return self

    @classmethod
    def from_json(cls, obj, labels: Sequence[str] | None = None) -> "SignSpec":
        if isinstance(obj, (str, os.PathLike)) and Path(obj).exists():
            obj = json.loads(Path(obj).read_text(encoding="utf-8"))
        elif isinstance(obj, str):
            obj = json.loads(obj)
        cons = []
        for item in obj:
            var = item["variable"]
            if not isinstance(var, int):
                if labels is None or var not in labels:
                    raise ValueError(f"unknown sign-restriction variable {var!r}")
                var = list(labels).index(var)
            cons.append((var, int(item["horizon"]), item["sign"]))
        return cls(tuple(cons), None if labels is None else tuple(labels)).validate()

    def to_json(self) -> list[dict]:
        out = []
        for var, h, sign in self.constraints:
            name = self.labels[var] if self.labels else var
            out.append({"variable": name, "horizon": h, "sign": "+" if sign > 0 else "-"})
        return out


def check_signs(candidate, spec: SignSpec) -> bool:
    """True iff every constraint holds strictly on the (cumulated) responses."""
    values = candidate.values if isinstance(candidate, Irf) else np.asarray(candidate)
    if spec.max_horizon > values.shape[0] - 1:
        raise HorizonOutOfRange(f"constraint at horizon {spec.max_horizon} beyond H={values.shape[0] - 1}")
    for var, h, sign in spec.constraints:
        if not values[h, var] * sign > 0:
            return False
    return True


def draw_rotation(n: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR of a Gaussian matrix with
    the diagonal of R made positive."""
    return _rotations(rng.standard_normal((1, n, n)))[0]


def _rotations(W: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(W)
    d = np.sign(np.diagonal(R, axis1=1, axis2=2))
    d[d == 0] = 1.0
    return Q * d[:, None, :]


def _chol(sigma):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise CholeskyFailure("Sigma is not positive definite") from None


class AcceptedDraws(list):
    """Accepted impact matrices in draw order, plus the number of tries."""
    tries: int = 0


def sign_identify(model: VarModel, spec: SignSpec, K: int = 30, max_tries: int = 100_000, rng=None,
                  cumulative_flags: Sequence[bool] | None = None, batch: int = 512) -> list[np.ndarray]:
    """Accept rotated Cholesky factors S = L Q' until ``K`` pass the sign
    checks, taking draws in order. Raises :class:`AcceptanceStarved` with the
    partial set if ``max_tries`` draws do not suffice."""
    rng = substream(DEFAULT_SEED, "rotations") if rng is None else rng
    n = model.n
    L = _chol(model.Sigma)
    flags = [False] * n if cumulative_flags is None else list(cumulative_flags)
    hmax = max(spec.max_horizon, 0)
    # psiL[h, i, j]: response of variable i at horizon h to Cholesky shock j
    psiL = ma_coefficients(model, hmax) @ L
    psiL = np.transpose(cumulate(np.transpose(psiL, (2, 0, 1)), flags), (1, 2, 0))
    cons = spec.constraints
    accepted: list[np.ndarray] = []
    tries = 0
    while len(accepted) < K and tries < max_tries:
        b = min(batch, max_tries - tries)
        Q = _rotations(rng.standard_normal((b, n, n)))
        q1 = Q[:, 0, :]                                    # first column of Q'
        resp = np.einsum("hij,bj->bhi", psiL, q1)
        ok = np.ones(b, dtype=bool)
        for var, h, sign in cons:
            ok &= resp[:, h, var] * sign > 0
        for i in np.flatnonzero(ok):
            accepted.append(L @ Q[i].T)
            if len(accepted) == K:
                tries += int(i) + 1
                break
        else:
            tries += b
    if len(accepted) < K:
        raise AcceptanceStarved(f"{len(accepted)} of {K} draws accepted in {tries} tries",
                                accepted=tuple(accepted), tries=tries)
    out = AcceptedDraws(accepted)
    out.tries = tries
    return out


def fry_pagan_index(irfs) -> int:
    vals = np.stack([x.values if isinstance(x, Irf) else np.asarray(x) for x in irfs])
    med = np.median(vals, axis=0)
    sd = vals.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    dist = np.where(sd > 0, (vals - med) / safe, 0.0)
    return int(np.argmin((dist ** 2).sum(axis=(1, 2))))


def fry_pagan_select(irfs):
    """Member closest to the pointwise median, each cell standardized by its
    cross-draw standard deviation."""
    if not len(irfs):
        raise ValueError("need at least one IRF")
    return irfs[fry_pagan_index(irfs)]


# ----------------------------------------------------------------------------
# bootstrap

@dataclass
class IrfBundle:
    point: Irf
    lower: Irf
    upper: Irf
    level: tuple[float, float] = (0.16, 0.84)
    draws: np.ndarray | None = field(default=None, repr=False)   # (B+1) x (H+1) x n, original first
    n_dropped: int = 0
    original: Irf | None = None

    @property
    def labels(self):
        return self.point.labels

    @classmethod
    def from_draws(cls, draws: np.ndarray, flags, labels, level=(0.16, 0.84), n_dropped=0, original=None):
        lo, med, hi = np.quantile(draws, [level[0], 0.5, level[1]], axis=0)
        mk = lambda v: Irf(v, tuple(flags), labels)
        return cls(mk(med), mk(lo), mk(hi), tuple(level), draws, n_dropped, original)

    def rescaled(self, policy_index: int) -> "IrfBundle":
        """Bands recomputed after scaling every draw to a unit impact on the
        policy variable."""
        if self.draws is None:
            raise ValueError("rescaling needs the stored draws")
        scale = self.draws[:, 0, policy_index]
        draws = self.draws / scale[:, None, None]
        orig = None
        if self.original is not None:
            v = self.original.values
            orig = Irf(v / v[0, policy_index], self.original.cumulative_flags, self.original.labels)
        return IrfBundle.from_draws(draws, self.point.cumulative_flags, self.point.labels,
                                    self.level, self.n_dropped, orig)

    def rows(self):
        labels = self.labels or tuple(f"y{j}" for j in range(self.point.values.shape[1]))
        for h in range(self.point.values.shape[0]):
            for j, lab in enumerate(labels):
                yield h, lab, self.point.values[h, j], self.lower.values[h, j], self.upper.values[h, j]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "variable", "point", "lo16", "hi84"])
            for h, lab, pt, lo, hi in self.rows():
                w.writerow([h, lab, repr(float(pt)), repr(float(lo)), repr(float(hi))])

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels or []), "level": list(self.level),
            "cumulative_flags": list(self.point.cumulative_flags),
            "point": self.point.values.tolist(), "lower": self.lower.values.tolist(),
            "upper": self.upper.values.tolist(), "n_dropped": self.n_dropped,
            "original": None if self.original is None else self.original.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IrfBundle":
        labels = tuple(d["labels"]) or None
        flags = tuple(d["cumulative_flags"])
        mk = lambda v: Irf(np.array(v, dtype=float), flags, labels)
        orig = None if d.get("original") is None else mk(d["original"])
        return cls(mk(d["point"]), mk(d["lower"]), mk(d["upper"]), tuple(d["level"]),
                   None, int(d["n_dropped"]), orig)


def read_bundle_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a bundle CSV back as (labels, (H+1) x n x 3 array of point/lo/hi)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    labels = list(dict.fromkeys(r["variable"] for r in rows))
    H = max(int(r["horizon"]) for r in rows)
    out = np.full((H + 1, len(labels), 3), np.nan)
    for r in rows:
        out[int(r["horizon"]), labels.index(r["variable"])] = [float(r["point"]), float(r["lo16"]), float(r["hi84"])]
    return labels, out


def default_block_length(m: int) -> int:
    return max(1, math.ceil(m ** (1.0 / 3.0) - 1e-12))


def block_indices(m: int, block_len: int, rng) -> np.ndarray:
    """Moving-block resample of row indices 0..m-1."""
    block_len = min(block_len, m)
    n_blocks = math.ceil(m / block_len)
    starts = rng.integers(0, m - block_len + 1, size=n_blocks)
    idx = (starts[:, None] + np.arange(block_len)[None, :]).ravel()
    return idx[:m]


def rebuild(model: VarModel, U: np.ndarray) -> np.ndarray:
    """Recursively regenerate Y from its first p rows and innovations U."""
    Y0 = model.Y
    t, n = Y0.shape
    p = model.p
    Y = np.empty_like(Y0)
    Y[:p] = Y0[:p]
    E = U * model.sigma_t[:, None]
    for s in range(p, t):
        acc = model.C + E[s - p]
        for i in range(p):
            acc = acc + model.B[i] @ Y[s - 1 - i]
        Y[s] = acc
    return Y


def identify_irf(model: VarModel, ident, H: int, flags, *, K: int = 30, max_tries: int = 100_000,
                 rng=None, z=None):
    """One IRF for ``model`` under ``ident`` (an Instrument or a SignSpec).

    Returns ``(Irf, info)``. For instruments ``z`` may carry pre-aligned
    instrument values (used by the bootstrap). For signs the Fry-Pagan
    member of the ``K`` accepted draws is returned.
    """
    from .var import irf as _irf
    if isinstance(ident, Instrument):
        col = _proxy(model.residuals, align_instrument(model, ident) if z is None else z, ident.policy_index)
        return _irf(model, col.s, H, flags), {"f_stat": col.f_stat, "n_obs": col.n_obs, "s": col.s}
    if isinstance(ident, SignSpec):
        S = sign_identify(model, ident, K, max_tries, rng, flags)
        irfs = [_irf(model, s[:, 0], H, flags) for s in S]
        k = fry_pagan_index(irfs)
        return irfs[k], {"s": S[k][:, 0], "accepted": K, "tries": S.tries}
    raise TypeError("identification must be an Instrument or a SignSpec")


def _refit(model: VarModel, Y, covid_start, reestimate_sigma: bool, sigma_fixed):
    kw = dict(periods=model.periods, labels=model.labels)
    if covid_start is not None and reestimate_sigma:
        return fit_var(Y, model.p, covid_start, **kw)
    if sigma_fixed is not None:
        return fit_var(Y, model.p, sigma_fixed=sigma_fixed, **kw)
    if covid_start is not None:
        return fit_var(Y, model.p, sigma_fixed=model.sigma_t, **kw)
    return fit_var(Y, model.p, **kw)


def block_bootstrap_irfs(Y, p: int, ident, B: int = 10_000, block_len: int | None = None, H: int = 20,
                         K: int = 30, seed: int = DEFAULT_SEED, *, covid_start=None, periods=None,
                         labels=None, cumulative_flags=None, sigma_fixed=None, reestimate_sigma: bool = True,
                         max_tries: int = 100_000, jobs: int | None = None, model: VarModel | None = None,
                         level=(0.16, 0.84)) -> IrfBundle:
    """Moving-block bootstrap of the identified IRF.

    Residuals are resampled in blocks jointly with the aligned instrument,
    Y is rebuilt from its first ``p`` rows, and the model is re-fitted and
    re-identified; with ``covid_start`` set the volatility scale is
    re-estimated in every replication unless ``reestimate_sigma`` is off, in
    which case the sample scales are reused. Replication ``b`` (0 is the
    original sample) draws from
    its own RNG stream keyed on ``(seed, b)``. The point estimate and bands
    are the median and percentiles over all surviving IRFs.
    """
    if B < 1 or (block_len is not None and block_len < 1):
        raise ValueError("need B >= 1 and block_len >= 1")
    if model is None:
        model = fit_var(Y, p, covid_start, periods=periods, labels=labels, sigma_fixed=sigma_fixed)
    m = model.residuals.shape[0]
    if block_len is None:
        block_len = default_block_length(m)
    flags = tuple(bool(f) for f in (cumulative_flags if cumulative_flags is not None else [False] * model.n))
    z0 = align_instrument(model, ident) if isinstance(ident, Instrument) else None
    base, _ = identify_irf(model, ident, H, flags, K=K, max_tries=max_tries,
                           rng=substream(seed, "rotations", 0), z=z0)

    def one(b):
        rng = substream(seed, "bootstrap", b)
        idx = block_indices(m, block_len, rng)
        try:
            Yb = rebuild(model, model.residuals[idx])
            mb = _refit(model, Yb, covid_start, reestimate_sigma, sigma_fixed)
            zb = None if z0 is None else z0[idx]
            out, _ = identify_irf(mb, ident, H, flags, K=K, max_tries=max_tries,
                                  rng=substream(seed, "rotations", b), z=zb)
        except (MacroFactorError, np.linalg.LinAlgError) as exc:
            logger.debug("replication %d dropped: %s", b, exc)
            return None
        v = out.values
        return v if np.isfinite(v).all() else None

    workers = jobs or os.cpu_count() or 1
    if workers > 1 and B > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(one, range(1, B + 1)))
    else:
        reps = [one(b) for b in range(1, B + 1)]
    kept = [r for r in reps if r is not None]
    dropped = B - len(kept)
    if dropped > MAX_DROP_SHARE * B:
        raise BootstrapDegenerate(f"{dropped} of {B} replications failed")
    draws = np.stack([base.values] + kept)
    return IrfBundle.from_draws(draws, flags, base.labels, level, dropped, base)
