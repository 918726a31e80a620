"""Series catalog parsing and raw vintage loading.

A catalog is a CSV with one row per series (columns
``N,ID,Country,Series,Unit,SA,F,Source,LT,HT,Class,StockFlow,FirstObs``).
Data live in one or more CSVs per country, each with a ``date`` column and
one column per series id.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _time
from .errors import (
    BadEnumValue,
    BadTransformCode,
    DuplicateId,
    MissingColumn,
    MissingSeriesFile,
    NonMonotonicDates,
    UnknownColumn,
    UnparseableDate,
)

COLUMNS = ("N", "ID", "Country", "Series", "Unit", "SA", "F", "Source",
           "LT", "HT", "Class", "StockFlow", "FirstObs")
REQUIRED = ("ID", "Country", "SA", "F", "Source", "LT", "HT", "Class")

SEASONAL = ("NSA", "SA", "SCA", "MSA")
SOURCES = ("EUR", "ECB", "OECD", "FRED")
FREQ = {"M": "Monthly", "Q": "Quarterly"}
KLASS = {"R": "Real", "N": "Nominal", "F": "Financial", "C": "Confidence"}
STOCK_FLOW = ("Stock", "Flow")
MISSING_TOKENS = frozenset({"", "nan", "NaN", "NAN", "NA", "N/A"})

_RATE_UNITS = {"percent", "%active", "%change"}


def default_stock_flow(klass: str, unit: str) -> str:
    """Real-activity series measured as levels or counts aggregate as flows."""
    if klass == "Real" and unit.strip().lower() not in _RATE_UNITS:
        return "Flow"
    return "Stock"


@dataclass(frozen=True)
class SeriesMeta:
    id: str
    country: str
    frequency: str
    lt_code: int
    ht_code: int
    klass: str
    seasonal: str = "SA"
    source: str = "EUR"
    name: str = ""
    unit: str = ""
    stock_flow: str = "Stock"
    first_obs: str | None = None
    number: int | None = None

    def __post_init__(self):
        if not self.id:
            raise BadEnumValue("series id must be nonempty")
        for code in (self.lt_code, self.ht_code):
            if code not in range(6):
                raise BadTransformCode(f"{self.key}: transform code {code} outside 0-5")
        checks = [("seasonal", SEASONAL), ("frequency", tuple(FREQ.values())),
                  ("source", SOURCES), ("klass", tuple(KLASS.values())),
                  ("stock_flow", STOCK_FLOW)]
        for attr, allowed in checks:
            if getattr(self, attr) not in allowed:
                raise BadEnumValue(f"{self.key}: {attr}={getattr(self, attr)!r} not in {allowed}")

    @property
    def key(self) -> str:
        """Panel-wide label, e.g. ``UNETOT_DE``."""
        return f"{self.id}_{self.country}"

    def code(self, which: str = "HT") -> int:
        return self.ht_code if which.upper() == "HT" else self.lt_code


@dataclass(frozen=True)
class Catalog:
    entries: tuple[SeriesMeta, ...]
    country: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.country is None:
            object.__setattr__(self, "country", _single_country(self.entries))
        seen = set()
        for e in self.entries:
            if (e.country, e.id) in seen:
                raise DuplicateId(f"duplicate series {e.id!r} for country {e.country!r}")
            seen.add((e.country, e.id))

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[SeriesMeta]:
        return iter(self.entries)

    def get(self, key: str) -> SeriesMeta:
        for e in self.entries:
            if e.key == key:
                return e
        raise KeyError(key)

    def keys(self) -> list[str]:
        return [e.key for e in self.entries]

    def countries(self) -> list[str]:
        return sorted({e.country for e in self.entries})

    def subset(self, keys: Iterable[str] | None = None, *, frequency: str | None = None,
               countries: Iterable[str] | None = None) -> "Catalog":
        keys = set(keys) if keys is not None else None
        countries = set(countries) if countries is not None else None
        out = [e for e in self.entries
               if (keys is None or e.key in keys)
               and (frequency is None or e.frequency == frequency)
               and (countries is None or e.country in countries)]
        return Catalog(out, _single_country(out))

    def with_overrides(self, stock_flow: dict[str, str]) -> "Catalog":
        """Replace the stock/flow tag of the listed series keys."""
        out = [replace(e, stock_flow=stock_flow.get(e.key, e.stock_flow)) for e in self.entries]
        return Catalog(out, self.country)


def _single_country(entries) -> str | None:
    cs = {e.country for e in entries}
    return cs.pop() if len(cs) == 1 else None


def merge_catalogs(*catalogs: Catalog) -> Catalog:
    entries = [e for c in catalogs for e in c.entries]
    return Catalog(entries, _single_country(entries))


def _parse_code(value: str, key: str) -> int:
    try:
        code = int(value.strip())
    except ValueError:
        raise BadTransformCode(f"{key}: transform code {value!r} is not an integer") from None
    if code not in range(6):
        raise BadTransformCode(f"{key}: transform code {code} outside 0-5")
    return code


def _lookup(mapping: dict, value: str, what: str, key: str) -> str:
    v = value.strip()
    if v in mapping:
        return mapping[v]
    if v in mapping.values():
        return v
    raise BadEnumValue(f"{key}: unknown {what} {value!r}")


def parse_catalog(text: str) -> Catalog:
    """Parse catalog CSV content.

    Raises
    ------
    UnknownColumn, MissingColumn
        Header does not match the documented layout.
    BadTransformCode
        An LT/HT entry is not an integer in 0-5.
    DuplicateId
        The same (country, id) pair appears twice.
    """
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames
    if header is None:
        raise MissingColumn("catalog has no header row")
    header = [h.strip() for h in header]
    unknown = [h for h in header if h not in COLUMNS]
    if unknown:
        raise UnknownColumn(f"unknown catalog column(s): {unknown}")
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise MissingColumn(f"catalog lacks required column(s): {missing}")
    entries = []
    for raw in reader:
        row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
        if not any(row.values()):
            continue
        key = f"{row['ID']}_{row['Country']}"
        seasonal = row["SA"].upper().rstrip("*")
        if seasonal not in SEASONAL:
            raise BadEnumValue(f"{key}: unknown seasonal tag {row['SA']!r}")
        klass = _lookup(KLASS, row["Class"], "class", key)
        unit = row.get("Unit", "")
        sf = row.get("StockFlow", "")
        stock_flow = sf.capitalize() if sf else default_stock_flow(klass, unit)
        first = row.get("FirstObs", "")
        entries.append(SeriesMeta(
            id=row["ID"], country=row["Country"],
            frequency=_lookup(FREQ, row["F"], "frequency", key),
            lt_code=_parse_code(row["LT"], key), ht_code=_parse_code(row["HT"], key),
            klass=klass, seasonal=seasonal,
            source=_lookup({s: s for s in SOURCES}, row["Source"].upper(), "source", key),
            name=row.get("Series", ""), unit=unit, stock_flow=stock_flow,
            first_obs=_time.parse_period(first) if first else None,
            number=int(row["N"]) if row.get("N") else None,
        ))
    return Catalog(entries, _single_country(entries))


def serialize_catalog(catalog: Catalog) -> str:
    inv_f = {v: k for k, v in FREQ.items()}
    inv_k = {v: k for k, v in KLASS.items()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for e in catalog:
        w.writerow(["" if e.number is None else e.number, e.id, e.country, e.name, e.unit,
                    e.seasonal, inv_f[e.frequency], e.source, e.lt_code, e.ht_code,
                    inv_k[e.klass], e.stock_flow, e.first_obs or ""])
    return buf.getvalue()


def read_catalog(path) -> Catalog:
    return parse_catalog(Path(path).read_text(encoding="utf-8"))


def bundled_catalog(country: str = "EA") -> Catalog:
    """Replica catalog shipped with the package (EA or a member-country tag)."""
    res = resources.files("macrofactor") / "data" / "catalogs" / f"{country.upper()}.csv"
    return parse_catalog(res.read_text(encoding="utf-8"))


def bundled_countries() -> list[str]:
    root = resources.files("macrofactor") / "data" / "catalogs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".csv"))


@dataclass
class RawPanel:
    """Mixed-frequency panel on a monthly time axis.

    ``values`` is N x T with NaN for missing cells; quarterly series only
    ever hold values in the first month of a quarter.
    """

    periods: list[str]
    metas: list[SeriesMeta]
    values: np.ndarray = field(repr=False)

    @property
    def series(self) -> list[tuple[SeriesMeta, np.ndarray]]:
        return list(zip(self.metas, self.values))

    @property
    def keys(self) -> list[str]:
        return [m.key for m in self.metas]


def _read_data_csv(path: Path) -> tuple[list[str], dict[str, list[float]]]:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], {}
    header = [h.strip() for h in rows[0]]
    if not header or header[0].lower() != "date":
        raise UnparseableDate(f"{path.name}: first column must be 'date'")
    periods = []
    cols: dict[str, list[float]] = {h: [] for h in header[1:]}
    for row in rows[1:]:
        if not row or not any(c.strip() for c in row):
            continue
        periods.append(_time.parse_period(row[0]))
        for h, cell in zip(header[1:], row[1:] + [""] * (len(header) - len(row))):
            cell = cell.strip()
            cols[h].append(np.nan if cell in MISSING_TOKENS else float(cell))
    for a, b in zip(periods, periods[1:]):
        if b <= a:
            raise NonMonotonicDates(f"{path.name}: dates not strictly increasing at {b}")
    return periods, cols


def _country_files(data_dir: Path, country: str) -> list[Path]:
    c = country.lower()
    out = []
    for p in sorted(data_dir.glob("*.csv")):
        stem = p.stem.lower()
        if stem == c or stem.startswith(c + "_") or stem.startswith(c + "-"):
            out.append(p)
    return out


def load_vintage(data_dir, catalog: Catalog) -> RawPanel:
    """Load every catalog series from ``data_dir`` into an aligned panel.

    Files are matched by country tag (``EA.csv``, ``EA_monthly.csv``, ...).
    Observed values pass through untouched; quarterly observations are
    placed on the first month of their quarter.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise MissingSeriesFile(f"data directory {data_dir} does not exist")
    found: dict[str, dict[str, float]] = {}
    for country in catalog.countries():
        files = _country_files(data_dir, country)
        if not files:
            raise MissingSeriesFile(f"no data file for country {country!r} in {data_dir}")
        columns: dict[str, tuple[list[str], list[float]]] = {}
        for f in files:
            periods, cols = _read_data_csv(f)
            for sid, vals in cols.items():
                columns.setdefault(sid, (periods, vals))
        for meta in catalog:
            if meta.country != country:
                continue
            if meta.id not in columns:
                raise MissingSeriesFile(f"series {meta.id!r} ({country}) not found in {[f.name for f in files]}")
            periods, vals = columns[meta.id]
            obs: dict[str, float] = {}
            for p, v in zip(periods, vals):
                if np.isnan(v):
                    continue
                if meta.frequency == "Quarterly":
                    p = _time.quarter_start(p)
                if p in obs:
                    raise NonMonotonicDates(f"{meta.key}: two observations for quarter {p}")
                obs[p] = v
            found[meta.key] = obs
    stamps = [p for obs in found.values() for p in obs]
    if not stamps:
        return RawPanel([], list(catalog), np.empty((len(catalog), 0)))
    periods = _time.month_range(min(stamps), max(stamps))
    pos = {p: i for i, p in enumerate(periods)}
    values = np.full((len(catalog), len(periods)), np.nan)
    for i, meta in enumerate(catalog):
        for p, v in found[meta.key].items():
            values[i, pos[p]] = v
    return RawPanel(periods, list(catalog), values)


def write_raw_panel(panel: RawPanel, path) -> None:
    write_matrix_csv(path, panel.periods, panel.keys, panel.values.T)


def write_matrix_csv(path, periods: Sequence[str], labels: Sequence[str], matrix: np.ndarray) -> None:
    """Write a T x k matrix as ``date,label1,...``; missing cells are empty."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *labels])
        for p, row in zip(periods, np.asarray(matrix)):
            w.writerow([p, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def read_matrix_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    periods, cols = _read_data_csv(Path(path))
    labels = list(cols)
    mat = np.array([cols[k] for k in labels], dtype=float).T if labels else np.empty((len(periods), 0))
    return periods, labels, mat
