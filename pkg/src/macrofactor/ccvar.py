"""Common-component VAR: assemble Y_t from estimated common components and
observed series, loop over national targets, harmonize the volatility
scale, and collect identified impulse responses."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .catalog import load_vintage, merge_catalogs, read_catalog, write_matrix_csv
from .config import RunConfig
from .errors import (CcvarError, ConfigError, DuplicateSeries, MacroFactorError,
                     NStarMismatch, UnknownSeries)
from .factors import CommonComponents, common_components, pca_factors
from ._rng import substream
from .errors import BootstrapDegenerate
from .identify import (MAX_DROP_SHARE, Instrument, IrfBundle, SignSpec, align_instrument, block_indices,
                       default_block_length, identify_irf, instrument_to_quarterly, read_instrument,
                       rebuild)
from .panel import Panel, PretreatConfig, pretreat, standardize
from .var import fit_var

logger = logging.getLogger(__name__)

OBSERVED, COMMON = "Observed", "CommonComponent"
MODELS = ("ccvar", "var", "favar")
FACTOR_LABEL = "f1"
CC_PREFIX = "chi:"
EA_INVARIANCE_TOL = 1e-8


@dataclass(frozen=True)
class CcvarSpec:
    frequency: str
    r: int
    policy_series: str
    ea_block: tuple[tuple[str, str], ...]
    include_first_factor: bool
    national_rate_id: str
    national_targets: tuple[str, ...]
    p: int
    H: int
    covid_start: str | None = None
    model: str = "ccvar"

    def __post_init__(self):
        object.__setattr__(self, "ea_block", tuple((k, u) for k, u in self.ea_block))
        object.__setattr__(self, "national_targets", tuple(self.national_targets))
        if self.model not in MODELS:
            raise CcvarError(f"model must be one of {MODELS}", stage="ccvar")
        for key, use in self.ea_block:
            if use not in (OBSERVED, COMMON):
                raise CcvarError(f"{key}: use must be {OBSERVED} or {COMMON}", stage="ccvar")

    @property
    def n_star(self) -> int:
        """Common components (EA block, national rate, target) plus the factor."""
        return sum(u == COMMON for _, u in self.ea_block) + 2 + int(self.include_first_factor)

    def validate(self) -> "CcvarSpec":
        uses = dict(self.ea_block)
        if uses.get(self.policy_series) != OBSERVED:
            raise CcvarError(f"policy series {self.policy_series} must enter the EA block as {OBSERVED}",
                             stage="ccvar")
        if self.model == "ccvar" and self.n_star != self.r:
            raise NStarMismatch(f"n* = {self.n_star} common components but r = {self.r}", stage="ccvar")
        keys = [k for k, _ in self.ea_block]
        if len(set(keys)) != len(keys):
            raise DuplicateSeries("duplicate series in the EA block", stage="ccvar")
        if len(set(self.national_targets)) != len(self.national_targets):
            raise DuplicateSeries("duplicate national targets", stage="ccvar")
        return self

    def national_rate(self, target: str) -> str:
        return f"{self.national_rate_id}_{target.rsplit('_', 1)[-1]}"

    def observed_version(self) -> "CcvarSpec":
        """Same variables, all observed (the VAR comparator)."""
        return replace(self, model="var", ea_block=tuple((k, OBSERVED) for k, _ in self.ea_block),
                       include_first_factor=False)

    def to_dict(self) -> dict:
        return {"frequency": self.frequency, "r": self.r, "policy_series": self.policy_series,
                "ea_block": [list(x) for x in self.ea_block],
                "include_first_factor": self.include_first_factor,
                "national_rate_id": self.national_rate_id, "national_targets": list(self.national_targets),
                "p": self.p, "H": self.H, "covid_start": self.covid_start, "model": self.model}

    @classmethod
    def from_dict(cls, d: dict, frequency: str | None = None, r: int | None = None) -> "CcvarSpec":
        freq = d.get("frequency", frequency or "Monthly")
        base = monthly_default_spec() if freq == "Monthly" else quarterly_default_spec()
        merged = {**base.to_dict(), **d}
        if r is not None and "r" not in d:
            merged["r"] = r
        merged["frequency"] = freq
        model = merged.pop("model", "ccvar")
        spec = cls(**{**merged, "ea_block": tuple(tuple(x) for x in merged["ea_block"]), "model": "ccvar"})
        if model == "var":
            spec = spec.observed_version()
        elif model == "favar":
            spec = replace(spec.observed_version(), model="favar", include_first_factor=True)
        return spec


def monthly_default_spec(targets: Sequence[str] = ()) -> CcvarSpec:
    return CcvarSpec(
        frequency="Monthly", r=6, policy_series="IRT2Y_EA",
        ea_block=(("IRT2Y_EA", OBSERVED), ("IPMN_EA", COMMON), ("HICPOV_EA", COMMON),
                  ("LTIRT_EA", COMMON), ("SHIX_EA", COMMON)),
        include_first_factor=False, national_rate_id="LTIRT", national_targets=tuple(targets),
        p=8, H=48, covid_start="2020-03")


def quarterly_default_spec(targets: Sequence[str] = ()) -> CcvarSpec:
    return CcvarSpec(
        frequency="Quarterly", r=7, policy_series="IRT3M_EA",
        ea_block=(("IRT3M_EA", OBSERVED), ("GDP_EA", COMMON), ("HICPOV_EA", COMMON),
                  ("LTIRT_EA", COMMON), ("SHIX_EA", COMMON)),
        include_first_factor=True, national_rate_id="LTIRT", national_targets=tuple(targets),
        p=2, H=20, covid_start="2020-04")


# default sign pattern for the quarterly model, keyed by series
QUARTERLY_SIGNS = [
    {"variable": "IRT3M_EA", "horizon": 0, "sign": "+"},
    {"variable": "LTIRT_EA", "horizon": 0, "sign": "+"},
    {"variable": "IRT3M_EA", "horizon": 1, "sign": "+"},
    {"variable": "GDP_EA", "horizon": 1, "sign": "-"},
    {"variable": "HICPOV_EA", "horizon": 1, "sign": "-"},
    {"variable": "LTIRT_EA", "horizon": 1, "sign": "+"},
    {"variable": "SHIX_EA", "horizon": 1, "sign": "-"},
    {"variable": FACTOR_LABEL, "horizon": 1, "sign": "-"},
    {"variable": "GDP_EA", "horizon": 2, "sign": "-"},
    {"variable": "HICPOV_EA", "horizon": 2, "sign": "-"},
    {"variable": "SHIX_EA", "horizon": 2, "sign": "-"},
    {"variable": FACTOR_LABEL, "horizon": 2, "sign": "-"},
]


def resolve_label(name: str, labels: Sequence[str]) -> str:
    """Match a series key against Y labels, with or without the common
    component prefix."""
    if name in labels:
        return name
    for cand in (CC_PREFIX + name, name[len(CC_PREFIX):] if name.startswith(CC_PREFIX) else None):
        if cand and cand in labels:
            return cand
    raise UnknownSeries(f"sign restriction on {name!r} matches no Y column", stage="identify")


def sign_spec_for(restrictions, labels: Sequence[str]) -> SignSpec:
    # the factor restriction only applies to models that carry the factor
    restrictions = [x for x in restrictions if x["variable"] != FACTOR_LABEL or FACTOR_LABEL in labels]
    items = [{**x, "variable": resolve_label(x["variable"], labels) if isinstance(x["variable"], str)
              else x["variable"]} for x in restrictions]
    return SignSpec.from_json(items, labels)


def _is_cumulated(code: int | None) -> bool:
    return code is not None and 2 <= code <= 5


def build_Y(cc: CommonComponents, panel: Panel, spec: CcvarSpec, target: str):
    """Return ``(Y, labels, cumulative_flags)`` with columns in the fixed
    order: EA block, first factor, national long rate, target."""
    spec.validate()
    nat_rate = spec.national_rate(target)
    if target == nat_rate or target in dict(spec.ea_block):
        raise DuplicateSeries(f"target {target} already enters Y", stage="ccvar")
    entries = list(spec.ea_block)
    if spec.include_first_factor:
        entries.append(("__f1__", None))
    use_nat = COMMON if spec.model == "ccvar" else OBSERVED
    entries += [(nat_rate, use_nat), (target, use_nat)]
    codes = dict(zip(panel.keys, panel.codes or [None] * len(panel.keys)))
    cols, labels, flags = [], [], []
    for key, use in entries:
        if key == "__f1__":
            cols.append(cc.factors[:, 0])
            labels.append(FACTOR_LABEL)
            flags.append(False)
            continue
        if use == COMMON:
            if key not in cc.keys:
                raise UnknownSeries(f"{key} has no common component", stage="ccvar")
            cols.append(cc[key])
            labels.append(CC_PREFIX + key)
        else:
            if key not in panel.keys:
                raise UnknownSeries(f"{key} not found in the panel", stage="ccvar")
            cols.append(panel.row(key))
            labels.append(key)
        flags.append(_is_cumulated(codes.get(key)))
    return np.column_stack(cols), labels, flags


# ----------------------------------------------------------------------------
# results

@dataclass
class ResultBundle:
    ea_irfs: IrfBundle | None
    national_irfs: dict[str, IrfBundle]
    sigma_median: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    periods: list[str] = field(default_factory=list)
    unit_irfs: dict[str, IrfBundle] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ea_irfs": None if self.ea_irfs is None else self.ea_irfs.to_dict(),
            "national_irfs": {k: v.to_dict() for k, v in self.national_irfs.items()},
            "unit_irfs": {k: v.to_dict() for k, v in self.unit_irfs.items()},
            "sigma_median": self.sigma_median.tolist(),
            "periods": list(self.periods),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultBundle":
        return cls(
            ea_irfs=None if d["ea_irfs"] is None else IrfBundle.from_dict(d["ea_irfs"]),
            national_irfs={k: IrfBundle.from_dict(v) for k, v in d["national_irfs"].items()},
            sigma_median=np.array(d["sigma_median"], dtype=float),
            diagnostics=d["diagnostics"], periods=list(d["periods"]),
            unit_irfs={k: IrfBundle.from_dict(v) for k, v in d.get("unit_irfs", {}).items()},
        )

    @classmethod
    def from_json(cls, text: str) -> "ResultBundle":
        return cls.from_dict(json.loads(text))


def _subset(bundle: IrfBundle, cols: list[int]) -> IrfBundle:
    from .var import Irf
    pick = lambda irf: Irf(irf.values[:, cols], tuple(irf.cumulative_flags[c] for c in cols),
                           tuple(irf.labels[c] for c in cols))
    return IrfBundle(pick(bundle.point), pick(bundle.lower), pick(bundle.upper), bundle.level,
                     None if bundle.draws is None else bundle.draws[:, :, cols], bundle.n_dropped,
                     None if bundle.original is None else pick(bundle.original))


def _identification(method, ident, instrument, spec, labels):
    if method == "IV":
        if instrument is None:
            raise ConfigError("IV identification needs an instrument", stage="identify")
        return replace(instrument, policy_index=labels.index(spec.policy_series))
    if method == "Signs":
        return sign_spec_for(ident.get("restrictions", QUARTERLY_SIGNS), labels)
    raise ConfigError(f"unknown identification method {method!r}", stage="identify")


def run_country_loop(spec: CcvarSpec, cc: CommonComponents, panel: Panel, ident: dict | None = None, *,
                     instrument: Instrument | None = None, B: int = 200, block_len: int | None = None,
                     seed: int = 0, jobs: int | None = None, reestimate_sigma: bool = True) -> ResultBundle:
    """Estimate one CC-VAR per national target with a common volatility path.

    Pass one fits every target model to get its volatility path; the
    per-period median of those paths is held fixed in pass two, where each
    model is identified. Bootstrap replications share block draws across
    targets and repeat the same two passes on the resampled data, so the
    EA-block responses stay comparable across targets. Targets that fail
    estimation or identification on the original sample are skipped and
    reported.
    """
    spec.validate()
    ident = ident or {"method": "IV"}
    method = ident.get("method", "IV")
    K = int(ident.get("K", 30))
    max_tries = int(ident.get("max_tries", 100_000))
    periods = list(panel.periods)
    skipped: dict[str, str] = {}
    built, sigmas = {}, {}
    for target in spec.national_targets:
        try:
            Y, labels, flags = build_Y(cc, panel, spec, target)
            m = fit_var(Y, spec.p, spec.covid_start, periods=periods, labels=labels)
        except MacroFactorError as exc:
            skipped[target] = f"{type(exc).__name__}: {exc}"
            logger.warning("target %s skipped: %s", target, exc)
            continue
        built[target] = (Y, labels, flags)
        sigmas[target] = m.sigma_t
    if not built:
        raise CcvarError("every national target failed: " + "; ".join(skipped.values()), stage="ccvar")
    sigma_median = np.median(np.vstack(list(sigmas.values())), axis=0)

    models, idents, zs, base, diags = {}, {}, {}, {}, {}
    for target, (Y, labels, flags) in built.items():
        model = fit_var(Y, spec.p, periods=periods, labels=labels, sigma_fixed=sigma_median)
        idobj = _identification(method, ident, instrument, spec, labels)
        z = align_instrument(model, idobj) if method == "IV" else None
        try:
            irf0, info = identify_irf(model, idobj, spec.H, flags, K=K, max_tries=max_tries,
                                      rng=substream(seed, "rotations", 0), z=z)
        except MacroFactorError as exc:
            skipped[target] = f"{type(exc).__name__}: {exc}"
            logger.warning("target %s not identified: %s", target, exc)
            continue
        models[target], idents[target], zs[target], base[target] = model, idobj, z, irf0
        diag = {"n_obs": int(Y.shape[0]), "spectral_radius": model.spectral_radius(),
                "labels": labels, "cumulative_flags": flags,
                "impact": [float(x) for x in info["s"]]}
        if method == "IV":
            diag.update(f_stat=info["f_stat"], strong=bool(info["f_stat"] > 10), n_instrument_obs=info["n_obs"])
        if method == "Signs":
            diag["acceptance_rate"] = info["accepted"] / info["tries"]
        diags[target] = diag
    if not models:
        raise CcvarError("identification failed for every target: " + "; ".join(skipped.values()),
                         stage="identify")

    targets = list(models)
    m_rows = sigma_median.shape[0]
    L = default_block_length(m_rows) if block_len is None else int(block_len)
    covid = spec.covid_start if (reestimate_sigma and spec.covid_start is not None) else None

    def one(b):
        idx = block_indices(m_rows, L, substream(seed, "bootstrap", b))
        try:
            Yb = {t: rebuild(models[t], models[t].residuals[idx]) for t in targets}
            if covid is not None:
                sig = np.median(np.vstack([fit_var(Yb[t], spec.p, covid, periods=periods).sigma_t
                                           for t in targets]), axis=0)
            else:
                sig = sigma_median
            out = {}
            for t in targets:
                mb = fit_var(Yb[t], spec.p, periods=periods, labels=models[t].labels, sigma_fixed=sig)
                z = None if zs[t] is None else zs[t][idx]
                irf_b, _ = identify_irf(mb, idents[t], spec.H, built[t][2], K=K, max_tries=max_tries,
                                        rng=substream(seed, "rotations", b), z=z)
                if not np.isfinite(irf_b.values).all():
                    return None
                out[t] = irf_b.values
            return out
        except (MacroFactorError, np.linalg.LinAlgError) as exc:
            logger.debug("replication %d dropped: %s", b, exc)
            return None

    workers = jobs or os.cpu_count() or 1
    if workers > 1 and B > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(one, range(1, B + 1)))
    else:
        reps = [one(b) for b in range(1, B + 1)]
    kept = [r for r in reps if r is not None]
    dropped = B - len(kept)
    if dropped > MAX_DROP_SHARE * B:
        raise BootstrapDegenerate(f"{dropped} of {B} bootstrap replications failed", stage="bootstrap")

    national, unit = {}, {}
    for t in targets:
        labels, flags = built[t][1], built[t][2]
        draws = np.stack([base[t].values] + [r[t] for r in kept])
        national[t] = IrfBundle.from_draws(draws, flags, tuple(labels), n_dropped=dropped, original=base[t])
        diags[t]["n_dropped"] = dropped
        if method == "Signs":
            unit[t] = national[t].rescaled(labels.index(spec.policy_series))

    first = targets[0]
    ea_cols = list(range(len(built[first][1]) - 2))
    ea = _subset(national[first], ea_cols)
    gaps = {}
    for part in ("original", "point", "lower", "upper"):
        ref = getattr(ea, part).values
        gaps[part] = max(float(np.abs(getattr(_subset(b, ea_cols), part).values - ref).max())
                         for b in national.values())
    gap = max(gaps.values())
    invariant = gap < EA_INVARIANCE_TOL
    if method == "IV" and not invariant:
        logger.warning("EA-block IRFs differ across targets by %.3g", gap)
    diagnostics = {
        "method": method, "model": spec.model, "targets": diags, "skipped": skipped,
        "bootstrap": {"B": B, "block_len": L, "dropped": dropped, "reestimate_sigma": covid is not None},
        "ea_invariance": {"max_abs_gap": gap, "by_part": gaps, "tolerance": EA_INVARIANCE_TOL,
                          "within_tolerance": bool(invariant), "asserted": method == "IV"},
        "sigma_window_rows": int((sigma_median != 1).sum()),
    }
    if method == "Signs":
        rates = {t: diags[t].get("acceptance_rate") for t in targets}
        diagnostics["signs"] = {"K": K, "max_tries": max_tries, "acceptance": rates}
        unit["EA"] = _subset(unit[first], ea_cols)
    return ResultBundle(ea, national, sigma_median, diagnostics, periods[spec.p:], unit)


# ----------------------------------------------------------------------------
# full pipeline

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage(name):
    """Re-raise untagged library errors with the failing stage attached."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if ev is not None and isinstance(ev, MacroFactorError) and ev.stage in (None, "general"):
                ev.stage = name
            return False
    return _Ctx()


def prepare_inputs(cfg: RunConfig):
    """Ingest and pre-treat the panel, extract factors and common components."""
    with _stage("ingest"):
        catalog = merge_catalogs(*[read_catalog(cfg.path(c)) for c in cfg.catalog])
        raw = load_vintage(cfg.path(cfg.data_dir), catalog)
    spec = CcvarSpec.from_dict(cfg.spec, cfg.frequency, cfg.r)
    r = spec.r if cfg.r is None else cfg.r
    if spec.r != r:
        spec = replace(spec, r=r)
    pt = PretreatConfig(frequency=cfg.frequency, start=cfg.start, end=cfg.end, em_r=r,
                        **{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.pretreat.items()})
    with _stage("transform"):
        panel, report = pretreat(raw, pt)
    with _stage("factors"):
        sp = standardize(panel)
        fm = pca_factors(sp, r)
        cc = common_components(fm, sp)
    return spec, panel, cc, fm, report


def load_identification(cfg: RunConfig, frequency: str):
    ident = dict(cfg.identification)
    method = ident.get("method", "IV")
    if method != "IV":
        return ident, None
    path = cfg.path(cfg.instrument)
    if path is None or not path.is_file():
        raise ConfigError(f"instrument file not found: {cfg.instrument}", stage="identify")
    instr = read_instrument(path, ident.get("column", "z"),
                            equity_column=ident.get("equity_column", "equity_surprise"),
                            apply_filter=bool(ident.get("filter", True)))
    if frequency == "Quarterly":
        instr = instrument_to_quarterly(instr)
    return ident, instr


def write_outputs(result: ResultBundle, out_dir: Path, *, extra: dict | None = None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, writer):
        p = out_dir / name
        writer(p)
        written.append(p)

    if result.ea_irfs is not None:
        put("irf_EA.csv", result.ea_irfs.write_csv)
    for target, b in result.national_irfs.items():
        put(f"irf_{target}.csv", b.write_csv)
    for target, b in result.unit_irfs.items():
        put(f"irf_{target}_unit.csv", b.write_csv)
    put("sigma_median.csv", lambda p: write_matrix_csv(p, result.periods, ["sigma"], result.sigma_median[:, None]))
    put("diagnostics.json", lambda p: p.write_text(json.dumps(result.diagnostics, indent=1, sort_keys=True) + "\n",
                                                   encoding="utf-8"))
    put("result.json", lambda p: p.write_text(result.to_json() + "\n", encoding="utf-8"))
    for name, payload in (extra or {}).items():
        put(name, lambda p, payload=payload: p.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n",
                                                          encoding="utf-8"))
    return written


def write_manifest(out_dir: Path, command: str, params: dict, seed: int, inputs: Sequence[Path],
                   outputs: Sequence[Path], base: Path | None = None) -> Path:
    """Reproduction record: parameters, seed and checksums, no timestamps."""
    def name(p):
        p = Path(p)
        if base is not None:
            try:
                return str(p.resolve().relative_to(base.resolve()))
            except ValueError:
                pass
        return p.name
    manifest = {
        "command": command, "version": __version__, "seed": int(seed), "parameters": params,
        "inputs": {name(p): sha256(p) for p in inputs},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def input_files(cfg: RunConfig) -> list[Path]:
    files = [cfg.path(c) for c in cfg.catalog]
    files += sorted(p for p in cfg.path(cfg.data_dir).glob("*.csv"))
    if cfg.instrument and cfg.path(cfg.instrument).is_file():
        files.append(cfg.path(cfg.instrument))
    return files


def run_pipeline(cfg: RunConfig, out_dir=None) -> ResultBundle:
    """Ingest through bootstrap; writes IRF CSVs, diagnostics and a manifest
    when an output directory is given. Errors carry the failing stage."""
    spec, panel, cc, fm, report = prepare_inputs(cfg)
    ident, instr = load_identification(cfg, cfg.frequency)
    boot = dict(cfg.bootstrap)
    with _stage("ccvar"):
        result = run_country_loop(spec, cc, panel, ident, instrument=instr, B=int(boot.get("B", 10_000)),
                                  block_len=boot.get("block_len"), seed=cfg.seed, jobs=cfg.jobs,
                                  reestimate_sigma=bool(boot.get("reestimate_sigma", True)))
    result.diagnostics["pretreat"] = {"dropped": report["dropped"], "em": report.get("em")}
    result.diagnostics["factors"] = {"r": fm.r, "eigenvalues": [float(x) for x in fm.eigenvalues[:max(fm.r, 10)]]}
    out = out_dir or cfg.output_dir
    if out is not None:
        out = Path(out) if Path(out).is_absolute() or cfg.output_dir is None or out_dir else cfg.path(out)
        written = write_outputs(result, out)
        params = {**cfg.to_dict(), "spec_resolved": spec.to_dict()}
        write_manifest(out, "ccvar", params, cfg.seed, input_files(cfg), written, Path(cfg.base_dir))
    return result
