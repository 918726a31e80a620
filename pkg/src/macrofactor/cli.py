"""Command-line frontend: one subcommand per pipeline stage plus the full
CC-VAR run and a plotting report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import DEFAULT_SEED, substream
from .catalog import load_vintage, merge_catalogs, read_catalog, read_matrix_csv, write_matrix_csv
from .ccvar import run_pipeline, write_manifest
from .config import RunConfig, load_config, resolve_seed  # noqa: F401  (RunConfig re-exported)
from .errors import ConfigError, MacroFactorError
from .factors import (METHODS, common_components, explained_variances, pca_factors,
                      select_number_of_factors)
from .identify import (Instrument, SignSpec, block_bootstrap_irfs, fry_pagan_index, proxy_iv,
                       read_instrument, sign_identify)
from .panel import PretreatConfig, prepare, pretreat, standardize
from .var import fit_var, irf

logger = logging.getLogger("macrofactor")

FREQ_FLAG = {"M": "Monthly", "Q": "Quarterly"}


# ----------------------------------------------------------------------------
# helpers

def _load_raw(args):
    catalog = merge_catalogs(*[read_catalog(c) for c in args.catalog])
    return load_vintage(args.data_dir, catalog)


def _pretreat_cfg(args, frequency, start=None, end=None) -> PretreatConfig:
    return PretreatConfig(frequency=frequency, codes=args.codes, start=start, end=end,
                          em_r=args.em_r, deseasonalize=not args.no_seasonal,
                          flag_outliers=not args.no_outliers)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _inputs(args) -> list[Path]:
    files = [Path(c) for c in getattr(args, "catalog", None) or []]
    if getattr(args, "data_dir", None):
        files += sorted(Path(args.data_dir).glob("*.csv"))
    for name in ("y", "instrument", "signs"):
        v = getattr(args, name, None)
        for p in (v if isinstance(v, list) else [v]):
            if p and Path(p).is_file():
                files.append(Path(p))
    return files


def _params(args) -> dict:
    skip = {"func", "out_dir", "verbose"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = [str(x) for x in v] if isinstance(v, list) else (str(v) if isinstance(v, Path) else v)
    return out


def _finish(args, command, written, seed=None):
    out = _out_dir(args)
    write_manifest(out, command, _params(args), DEFAULT_SEED if seed is None else seed,
                   _inputs(args), written)
    for p in written:
        logger.info("wrote %s", p)


def _write_json(path, payload) -> Path:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def _write_panel(path, panel) -> Path:
    write_matrix_csv(path, panel.periods, panel.keys, panel.values.T)
    return Path(path)


def _irf_csv(path, response) -> Path:
    labels = response.labels or tuple(f"y{j}" for j in range(response.values.shape[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "variable", "response"])
        for h in range(response.values.shape[0]):
            for j, lab in enumerate(labels):
                w.writerow([h, lab, repr(float(response.values[h, j]))])
    return Path(path)


def _load_y(args):
    periods, labels, Y = read_matrix_csv(args.y)
    if np.isnan(Y).any():
        raise ConfigError(f"{args.y}: Y must be balanced (no missing cells)", stage="var")
    flags = [lab in set(args.cumulate or []) for lab in labels]
    unknown = set(args.cumulate or []) - set(labels)
    if unknown:
        raise ConfigError(f"--cumulate names unknown columns {sorted(unknown)}", stage="var")
    return periods, labels, Y, flags


def _policy_index(args, labels) -> int:
    if args.policy is None:
        return 0
    if args.policy not in labels:
        raise ConfigError(f"policy column {args.policy!r} not in Y", stage="identify")
    return labels.index(args.policy)


def _instrument(args, path, labels):
    if not Path(path).is_file():
        raise ConfigError(f"instrument file not found: {path}", stage="identify")
    instr = read_instrument(path, args.column, equity_column=args.equity_column,
                            apply_filter=not args.no_filter, name=Path(path).stem)
    return Instrument(instr.periods, instr.z, _policy_index(args, labels), instr.name)


def _signs(args, labels) -> SignSpec:
    if not Path(args.signs).is_file():
        raise ConfigError(f"sign restriction file not found: {args.signs}", stage="identify")
    return SignSpec.from_json(json.loads(Path(args.signs).read_text(encoding="utf-8")), labels)


def _fit(args, periods, labels, Y):
    return fit_var(Y, args.p, args.covid_start, periods=periods, labels=labels)


# ----------------------------------------------------------------------------
# subcommands

def cmd_ingest(args):
    raw = _load_raw(args)
    out = _out_dir(args)
    path = out / "raw_panel.csv"
    write_matrix_csv(path, raw.periods, raw.keys, raw.values.T)
    summary = {"series": len(raw.keys), "periods": len(raw.periods),
               "first": raw.periods[0] if raw.periods else None, "last": raw.periods[-1] if raw.periods else None,
               "observed": {k: int((~np.isnan(v)).sum()) for k, v in zip(raw.keys, raw.values)}}
    _finish(args, "ingest", [path, _write_json(out / "ingest.json", summary)])


def cmd_transform(args):
    raw = _load_raw(args)
    panel, report = prepare(raw, _pretreat_cfg(args, FREQ_FLAG[args.frequency], args.start, args.end))
    out = _out_dir(args)
    _finish(args, "transform", [_write_panel(out / "transformed.csv", panel),
                                _write_json(out / "transform_report.json", report)])


def cmd_impute(args):
    raw = _load_raw(args)
    panel, report = pretreat(raw, _pretreat_cfg(args, FREQ_FLAG[args.frequency], args.start, args.end))
    out = _out_dir(args)
    _finish(args, "impute", [_write_panel(out / "imputed.csv", panel),
                             _write_json(out / "impute_report.json", report)])


def _nfactor_counts(args, raw, frequency, start, end, rng):
    panel, _ = pretreat(raw, _pretreat_cfg(args, frequency, start, end))
    sp = standardize(panel)
    return select_number_of_factors(sp, args.rmax, rng=rng)


def cmd_nfactors(args):
    raw = _load_raw(args)
    seed = resolve_seed(args.seed, None)
    freqs = {"M": ["Monthly"], "Q": ["Quarterly"], "both": ["Monthly", "Quarterly"]}[args.frequency]
    samples = {"Monthly": (args.start, args.end), "Quarterly": (args.q_start, args.q_end)}
    table = {f: _nfactor_counts(args, raw, f, *samples[f], substream(seed, "subsamples"))
             for f in freqs}
    out = _out_dir(args)
    if args.format == "json":
        text = json.dumps({"rmax": args.rmax, "counts": table}, indent=1, sort_keys=True) + "\n"
        path = out / "nfactors.json"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["criterion"] + freqs)
        for m in METHODS:
            w.writerow([m] + [table[f][m] for f in freqs])
        text = buf.getvalue()
        path = out / "nfactors.csv"
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _finish(args, "nfactors", [path], seed)


def cmd_factors(args):
    raw = _load_raw(args)
    panel, _ = pretreat(raw, _pretreat_cfg(args, FREQ_FLAG[args.frequency], args.start, args.end))
    sp = standardize(panel)
    fm = pca_factors(sp, args.r)
    cc = common_components(fm, sp)
    out = _out_dir(args)
    names = [f"f{j + 1}" for j in range(fm.r)]
    written = [out / "factors.csv", out / "loadings.csv", out / "common_components.csv", out / "factors.json"]
    write_matrix_csv(written[0], panel.periods, names, fm.factors)
    with open(written[1], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series"] + names)
        for k, row in zip(panel.keys, fm.loadings):
            w.writerow([k] + [repr(float(x)) for x in row])
    write_matrix_csv(written[2], panel.periods, panel.keys, cc.chi.T)
    share = explained_variances(fm, sp)
    _write_json(written[3], {"r": fm.r, "eigenvalues": [float(x) for x in fm.eigenvalues],
                             "explained_variance": dict(zip(panel.keys, map(float, share)))})
    _finish(args, "factors", written)


def cmd_ccvar(args):
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out_dir, jobs=args.jobs)
    if args.B is not None:
        cfg.bootstrap = {**cfg.bootstrap, "B": args.B}
    out = Path(args.out_dir) if args.out_dir else (cfg.path(cfg.output_dir) if cfg.output_dir else Path("out"))
    result = run_pipeline(cfg, out)
    gap = result.diagnostics["ea_invariance"]["max_abs_gap"]
    print(f"ccvar: {len(result.national_irfs)} targets, {len(result.diagnostics['skipped'])} skipped, "
          f"EA-block gap across targets {gap:.3g}; outputs in {out}")


def cmd_identify_iv(args):
    periods, labels, Y, flags = _load_y(args)
    model = _fit(args, periods, labels, Y)
    out = _out_dir(args)
    written = []
    if len(args.instrument) > 1:
        from .identify import instrument_screen
        ranked = instrument_screen(model, [_instrument(args, p, labels) for p in args.instrument])
        rows = [{k: v for k, v in d.items() if k != "impact"} for d in ranked]
        written.append(_write_json(out / "instrument_screen.json", rows))
        if ranked[0]["rank"] is None:
            raise MacroFactorError("no candidate instrument overlaps the sample", stage="identify")
        best = next(c for c in args.instrument if Path(c).stem == ranked[0]["name"])
    else:
        best = args.instrument[0]
    col = proxy_iv(model, _instrument(args, best, labels))
    written.append(_write_json(out / "impact.json", {
        "instrument": Path(best).stem, "labels": labels, "s": [float(x) for x in col.s],
        "normalization": col.normalization, "f_stat": col.f_stat, "strong": col.strong, "n_obs": col.n_obs}))
    written.append(_irf_csv(out / "irf.csv", irf(model, col.s, args.H, flags)))
    _finish(args, "identify-iv", written)
    print(f"F = {col.f_stat:.2f} ({'strong' if col.strong else 'weak'}), n = {col.n_obs}")


def cmd_identify_sign(args):
    periods, labels, Y, flags = _load_y(args)
    model = _fit(args, periods, labels, Y)
    spec = _signs(args, labels)
    seed = resolve_seed(args.seed, None)
    S = sign_identify(model, spec, args.K, args.max_tries, substream(seed, "rotations", 0), flags)
    irfs = [irf(model, s[:, 0], args.H, flags) for s in S]
    k = fry_pagan_index(irfs)
    pol = _policy_index(args, labels)
    unit = irfs[k].values / irfs[k].values[0, pol]
    out = _out_dir(args)
    written = [
        _write_json(out / "impacts.json", {"labels": labels, "selected": k, "tries": S.tries,
                                           "impact_matrices": [s.tolist() for s in S]}),
        _irf_csv(out / "irf.csv", irfs[k]),
        _irf_csv(out / "irf_unit.csv", type(irfs[k])(unit, irfs[k].cumulative_flags, irfs[k].labels)),
    ]
    _finish(args, "identify-sign", written, seed)
    print(f"accepted {len(S)} draws in {S.tries} tries; Fry-Pagan pick {k}")


def cmd_bootstrap(args):
    periods, labels, Y, flags = _load_y(args)
    if (args.instrument is None) == (args.signs is None):
        raise ConfigError("give exactly one of --instrument or --signs", stage="bootstrap")
    ident = _instrument(args, args.instrument, labels) if args.instrument else _signs(args, labels)
    seed = resolve_seed(args.seed, None)
    bundle = block_bootstrap_irfs(Y, args.p, ident, B=args.B, block_len=args.block_len, H=args.H, K=args.K,
                                  seed=seed, covid_start=args.covid_start, periods=periods, labels=labels,
                                  cumulative_flags=flags, reestimate_sigma=not args.fixed_sigma,
                                  max_tries=args.max_tries, jobs=args.jobs)
    out = _out_dir(args)
    written = [out / "irf_bundle.csv"]
    bundle.write_csv(written[0])
    if isinstance(ident, SignSpec):
        written.append(out / "irf_bundle_unit.csv")
        bundle.rescaled(_policy_index(args, labels)).write_csv(written[-1])
    _finish(args, "bootstrap", written, seed)
    print(f"{args.B} replications, {bundle.n_dropped} dropped")


def cmd_report(args):
    from .report import render_report
    paths = []
    for p in args.inputs:
        p = Path(p)
        if p.is_dir():
            paths += sorted(q for q in p.glob("irf*.csv"))
        elif p.is_file():
            paths.append(p)
        else:
            raise ConfigError(f"report input not found: {p}", stage="report")
    paths = [p for p in paths if _is_bundle(p)]
    if not paths:
        raise ConfigError("no IRF bundle CSVs (horizon,variable,point,lo16,hi84) among the inputs", stage="report")
    written = render_report(paths, _out_dir(args))
    args.y = None
    write_manifest(_out_dir(args), "report", _params(args), DEFAULT_SEED, paths, written)
    print(f"wrote {len(written)} files to {args.out_dir}")


def _is_bundle(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().strip()
    return head == "horizon,variable,point,lo16,hi84"


# ----------------------------------------------------------------------------
# parser

def _data_args(p, frequency=True):
    p.add_argument("--catalog", action="append", required=True, help="catalog CSV (repeatable)")
    p.add_argument("--data-dir", required=True, help="directory with one CSV per country")
    if frequency:
        p.add_argument("--frequency", choices=["M", "Q"], default="M")
    p.add_argument("--start", help="first period kept (YYYY-MM)")
    p.add_argument("--end", help="last period kept (YYYY-MM)")
    p.add_argument("--codes", choices=["LT", "HT"], default="HT", help="transformation column")
    p.add_argument("--em-r", type=int, default=6, help="rank used by the EM imputation")
    p.add_argument("--no-seasonal", action="store_true", help="skip seasonal dummies")
    p.add_argument("--no-outliers", action="store_true", help="skip outlier masking")


def _var_args(p):
    p.add_argument("--y", required=True, help="Y matrix CSV (date + one column per variable)")
    p.add_argument("--p", type=int, default=2, help="lag order")
    p.add_argument("--H", type=int, default=20, help="last IRF horizon")
    p.add_argument("--covid-start", help="first period of the volatility window")
    p.add_argument("--cumulate", nargs="*", default=[], help="columns whose IRFs are cumulated")
    p.add_argument("--policy", help="policy column (defaults to the first)")


def _instr_args(p, multiple=False):
    if multiple:
        p.add_argument("--instrument", action="append", required=True, help="instrument CSV (repeatable)")
    else:
        p.add_argument("--instrument", help="instrument CSV")
    p.add_argument("--column", default="z")
    p.add_argument("--equity-column", default="equity_surprise")
    p.add_argument("--no-filter", action="store_true", help="keep information-shock observations")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macrofactor", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out-dir", default="out", help="output directory (default: out)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "load catalog + CSVs into an aligned monthly panel")
    p.add_argument("--catalog", action="append", required=True)
    p.add_argument("--data-dir", required=True)
    _data_args(add("transform", cmd_transform, "aggregate, transform, deseasonalize, mask outliers"))
    _data_args(add("impute", cmd_impute, "pre-treat and fill missing cells by EM"))

    p = add("nfactors", cmd_nfactors, "number of factors by four criteria")
    _data_args(p, frequency=False)
    p.add_argument("--frequency", choices=["M", "Q", "both"], default="both")
    p.add_argument("--q-start", help="first quarter kept (YYYY-MM of its first month)")
    p.add_argument("--q-end", help="last quarter kept")
    p.add_argument("--rmax", type=int, default=12)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--seed", type=int)

    p = add("factors", cmd_factors, "principal-component factors, loadings, common components")
    _data_args(p)
    p.add_argument("--r", type=int, required=True)

    p = add("ccvar", cmd_ccvar, "full CC-VAR run from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--B", type=int, help="override the bootstrap replications")
    p.set_defaults(out_dir=None)

    p = add("identify-iv", cmd_identify_iv, "external-instrument impact column")
    _var_args(p)
    _instr_args(p, multiple=True)

    p = add("identify-sign", cmd_identify_sign, "sign-restricted impact draws")
    _var_args(p)
    p.add_argument("--signs", required=True, help="JSON list of {variable, horizon, sign}")
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--max-tries", type=int, default=100_000)
    p.add_argument("--seed", type=int)

    p = add("bootstrap", cmd_bootstrap, "moving-block bootstrap bands")
    _var_args(p)
    _instr_args(p)
    p.add_argument("--signs")
    p.add_argument("--B", type=int, default=10_000)
    p.add_argument("--block-len", type=int)
    p.add_argument("--K", type=int, default=30)
    p.add_argument("--max-tries", type=int, default=100_000)
    p.add_argument("--fixed-sigma", action="store_true", help="do not re-estimate the volatility scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)

    p = add("report", cmd_report, "plot data and figures from IRF bundle CSVs")
    p.add_argument("inputs", nargs="+", help="bundle CSVs or directories containing irf*.csv")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)           # usage errors exit with status 2
    level = logging.WARNING - 10 * max(args.verbose, 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MacroFactorError as exc:
        stage = exc.stage or args.command
        print(f"error [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
