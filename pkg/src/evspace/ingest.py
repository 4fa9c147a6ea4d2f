"""Loading and validation of trade flows, firm components and the component taxonomy."""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, RecordError

EV, ICE, UNSPECIFIC = "EV", "ICE", "UNSPECIFIC"
POWERTRAIN_CLASSES = (EV, ICE, UNSPECIFIC)

TRADE_COLUMNS = ("year", "exporter", "importer", "hs6", "value")
FIRM_COLUMNS = ("firm_id", "country", "component_id")
TAXONOMY_COLUMNS = ("component_id", "tier1", "tier2", "tier3", "powertrain_class", "hs6_links")
ALIAS_COLUMNS = ("alias", "iso3")

HS_REVISIONS = ("HS92", "HS96", "HS02", "HS07", "HS12", "HS17", "HS22")

_HS6 = re.compile(r"^\d{6}$")
_ISO3 = re.compile(r"^[A-Z]{3}$")


@dataclass
class IngestReport:
    path: str
    rows_read: int = 0
    rows_kept: int = 0
    dropped_nonpositive: int = 0
    duplicates_merged: int = 0
    unknown_codes: list[str] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["errors"] = [{"line": ln, "message": msg} for ln, msg in self.errors]
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class TradeTable:
    """Aggregated bilateral flows, one row per (year, exporter, importer, hs6).

    ``frame`` is sorted by that key; values are thousand current USD.
    """

    frame: pd.DataFrame
    hs_revision: str
    report: IngestReport

    @property
    def years(self) -> list[int]:
        return sorted(int(y) for y in self.frame["year"].unique())

    def for_year(self, year: int) -> pd.DataFrame:
        return self.frame[self.frame["year"] == year]

    def exports(self, year: int) -> pd.DataFrame:
        """Exporter x product totals for ``year`` in long form."""
        sub = self.for_year(year)
        return sub.groupby(["exporter", "hs6"], sort=True, as_index=False)["value"].sum()

    def __len__(self) -> int:
        return len(self.frame)


def load_aliases(path) -> dict[str, str]:
    """Read an ``alias,iso3`` CSV into a lookup dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ALIAS_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(ALIAS_COLUMNS)}")
        for row in reader:
            if not row:
                continue
            out[row[0].strip()] = row[1].strip().upper()
    return out


def _location(code: str, aliases, known) -> str | None:
    code = code.strip()
    code = aliases.get(code, code).upper() if aliases else code.upper()
    if known is not None:
        return code if code in known else None
    return code if _ISO3.match(code) else None


def _open_rows(path, expected):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        fh.close()
        raise DataError(f"{path}: empty file")
    if tuple(h.strip() for h in header) != expected:
        fh.close()
        raise DataError(f"{path}: header {header!r} does not match {','.join(expected)}")
    return fh, reader


def load_trade(path, hs_revision: str = "HS12", aliases=None, locations=None,
               strict: bool = True) -> TradeTable:
    """Parse a trade CSV, aggregate duplicate keys and drop nonpositive flows.

    Malformed rows raise :class:`RecordError` listing line numbers when
    ``strict``; otherwise they are skipped and listed in the report.
    """
    if hs_revision not in HS_REVISIONS:
        raise DataError(f"unknown HS revision {hs_revision!r}; expected one of {HS_REVISIONS}")
    known = set(locations) if locations is not None else None
    report = IngestReport(path=str(path))
    years, exps, imps, codes, values = [], [], [], [], []
    unknown = set()

    fh, reader = _open_rows(path, TRADE_COLUMNS)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            if len(row) != len(TRADE_COLUMNS):
                report.errors.append((lineno, f"expected {len(TRADE_COLUMNS)} fields, got {len(row)}"))
                continue
            y, e, i, h, v = (c.strip() for c in row)
            try:
                year = int(y)
            except ValueError:
                report.errors.append((lineno, f"bad year {y!r}"))
                continue
            if not _HS6.match(h):
                report.errors.append((lineno, f"bad HS6 code {h!r}"))
                continue
            exp_code = _location(e, aliases, known)
            imp_code = _location(i, aliases, known)
            if exp_code is None or imp_code is None:
                bad = e if exp_code is None else i
                unknown.add(bad)
                report.errors.append((lineno, f"unknown location code {bad!r}"))
                continue
            if exp_code == imp_code:
                report.errors.append((lineno, f"exporter equals importer ({exp_code})"))
                continue
            try:
                value = float(v)
            except ValueError:
                report.errors.append((lineno, f"bad value {v!r}"))
                continue
            if not math.isfinite(value):
                report.errors.append((lineno, f"non-finite value {v!r}"))
                continue
            if value <= 0:
                report.dropped_nonpositive += 1
                continue
            years.append(year)
            exps.append(exp_code)
            imps.append(imp_code)
            codes.append(h)
            values.append(value)

    report.unknown_codes = sorted(unknown)
    if report.rows_read == 0:
        raise DataError(f"{path}: no data rows")
    if report.errors and strict:
        raise RecordError(path, report.errors)

    raw = pd.DataFrame({
        "year": np.asarray(years, dtype=np.int64),
        "exporter": exps,
        "importer": imps,
        "hs6": codes,
        "value": np.asarray(values, dtype=np.float64),
    })
    frame = _aggregate(raw)
    report.duplicates_merged = len(raw) - len(frame)
    report.rows_kept = len(frame)
    return TradeTable(frame=frame, hs_revision=hs_revision, report=report)


def _aggregate(raw: pd.DataFrame) -> pd.DataFrame:
    key = list(TRADE_COLUMNS[:-1])
    raw = raw.sort_values(key, kind="mergesort")
    out = raw.groupby(key, sort=True, as_index=False)["value"].sum()
    return out.reset_index(drop=True)


def write_trade(table: TradeTable, path) -> None:
    """Write the canonical CSV; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADE_COLUMNS)
        for y, e, i, h, v in table.frame.itertuples(index=False, name=None):
            w.writerow([int(y), e, i, h, repr(float(v))])


@dataclass(frozen=True)
class Component:
    component_id: str
    tier_path: tuple[str, str, str]
    powertrain_class: str
    hs6_links: tuple[str, ...]


@dataclass(frozen=True)
class ComponentTaxonomy:
    components: dict[str, Component]

    def __contains__(self, cid) -> bool:
        return cid in self.components

    def __getitem__(self, cid) -> Component:
        return self.components[cid]

    def __len__(self) -> int:
        return len(self.components)

    def ids(self, powertrain_class: str | None = None) -> list[str]:
        return sorted(c for c, comp in self.components.items()
                      if powertrain_class is None or comp.powertrain_class == powertrain_class)

    def interlayer_map(self) -> dict[str, tuple[str, ...]]:
        return {cid: comp.hs6_links for cid, comp in sorted(self.components.items())}


def load_taxonomy(path) -> ComponentTaxonomy:
    comps: dict[str, Component] = {}
    errors = []
    fh, reader = _open_rows(path, TAXONOMY_COLUMNS)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(TAXONOMY_COLUMNS):
                errors.append((lineno, f"expected {len(TAXONOMY_COLUMNS)} fields, got {len(row)}"))
                continue
            cid, t1, t2, t3, cls, links = (c.strip() for c in row)
            if not cid:
                errors.append((lineno, "empty component_id"))
                continue
            if cid in comps:
                errors.append((lineno, f"duplicate component_id {cid!r}"))
                continue
            if not (t1 and t2 and t3):
                errors.append((lineno, f"component {cid!r} needs three tier labels"))
                continue
            cls = cls.upper()
            if cls not in POWERTRAIN_CLASSES:
                errors.append((lineno, f"bad powertrain_class {cls!r} for {cid!r}"))
                continue
            hs = tuple(sorted({c.strip() for c in links.split(";") if c.strip()}))
            bad = [c for c in hs if not _HS6.match(c)]
            if bad:
                errors.append((lineno, f"bad HS6 link(s) {bad} for {cid!r}"))
                continue
            comps[cid] = Component(cid, (t1, t2, t3), cls, hs)
    if errors:
        raise RecordError(path, errors)
    if not comps:
        raise DataError(f"{path}: empty taxonomy")
    return ComponentTaxonomy(dict(sorted(comps.items())))


@dataclass(frozen=True)
class FirmProductTable:
    """Binary firm x component incidence with each firm's location."""

    firms: tuple[str, ...]
    components: tuple[str, ...]
    incidence: np.ndarray
    country: tuple[str, ...]
    report: IngestReport

    def firm_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(self.country).items()))


def load_firm_products(path, taxonomy: ComponentTaxonomy, aliases=None,
                       locations=None) -> FirmProductTable:
    known = set(locations) if locations is not None else None
    report = IngestReport(path=str(path))
    firm_country: dict[str, str] = {}
    produced: dict[str, set[str]] = defaultdict(set)
    unknown = set()

    fh, reader = _open_rows(path, FIRM_COLUMNS)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            if len(row) != len(FIRM_COLUMNS):
                report.errors.append((lineno, f"expected {len(FIRM_COLUMNS)} fields, got {len(row)}"))
                continue
            fid, ctry, cid = (c.strip() for c in row)
            if cid not in taxonomy:
                unknown.add(cid)
                report.errors.append((lineno, f"unknown component_id {cid!r}"))
                continue
            loc = _location(ctry, aliases, known)
            if loc is None:
                report.errors.append((lineno, f"unknown location code {ctry!r}"))
                continue
            prev = firm_country.setdefault(fid, loc)
            if prev != loc:
                raise DataError(f"{path}: line {lineno}: firm {fid!r} listed under {prev} and {loc}")
            if cid in produced[fid]:
                report.duplicates_merged += 1
            produced[fid].add(cid)

    report.unknown_codes = sorted(unknown)
    if report.rows_read == 0:
        raise DataError(f"{path}: no data rows")
    if report.errors:
        raise RecordError(path, report.errors)

    firms = tuple(sorted(f for f in produced if produced[f]))
    comps = tuple(sorted(set().union(*produced.values())))
    col = {c: j for j, c in enumerate(comps)}
    inc = np.zeros((len(firms), len(comps)), dtype=np.int8)
    for i, f in enumerate(firms):
        inc[i, [col[c] for c in produced[f]]] = 1
    report.rows_kept = int(inc.sum())
    return FirmProductTable(firms, comps, inc, tuple(firm_country[f] for f in firms), report)


@dataclass(frozen=True)
class HsClassMap:
    classes: dict[str, str]

    def codes(self, powertrain_class: str) -> list[str]:
        return [h for h, c in self.classes.items() if c == powertrain_class]

    @property
    def n_ev(self) -> int:
        return len(self.codes(EV))

    def get(self, hs6, default=None):
        return self.classes.get(hs6, default)


def classify_hs_codes(taxonomy: ComponentTaxonomy) -> HsClassMap:
    """Majority-vote powertrain class per HS6 code over its linked components.

    A class needs strictly more than half of the links; ties and mixed
    votes fall to UNSPECIFIC. Codes with no linked component are absent.
    """
    votes: dict[str, Counter] = defaultdict(Counter)
    for comp in taxonomy.components.values():
        for h in comp.hs6_links:
            votes[h][comp.powertrain_class] += 1
    classes = {}
    for h in sorted(votes):
        n = sum(votes[h].values())
        if 2 * votes[h][EV] > n:
            classes[h] = EV
        elif 2 * votes[h][ICE] > n:
            classes[h] = ICE
        else:
            classes[h] = UNSPECIFIC
    return HsClassMap(classes)
