"""Revealed comparative advantage (Balassa) matrices and their derived forms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DataError
from .ingest import FirmProductTable, TradeTable

INDUSTRY, FIRM, SECTORAL = "INDUSTRY", "FIRM", "SECTORAL"
SCOPES = (INDUSTRY, FIRM, SECTORAL)


@dataclass(frozen=True)
class SpecializationSet:
    """Aligned location x product matrices for one year and scope.

    ``mask`` marks entries whose row or column total is zero; there R is
    undefined and stored as 0, so M is 0 and sRCA is -1. Downstream code
    excludes masked entries instead of reading them as disadvantages.
    """

    year: int | None
    scope: str
    subset: str | None
    locations: tuple[str, ...]
    products: tuple[str, ...]
    values: np.ndarray | None
    R: np.ndarray
    M: np.ndarray
    srca: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.R.shape

    def loc_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.locations)}

    def prod_index(self) -> dict[str, int]:
        return {p: j for j, p in enumerate(self.products)}

    def row(self, location: str) -> int:
        try:
            return self.locations.index(location)
        except ValueError:
            raise DataError(f"location {location!r} not in specialization set") from None


def balassa(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (R, mask) for a nonnegative location x product matrix."""
    X = np.asarray(X, dtype=np.float64)
    total = X.sum()
    if not total > 0:
        raise DataError("zero world total; RCA undefined")
    row = X.sum(axis=1)
    col = X.sum(axis=0)
    mask = (row == 0)[:, None] | (col == 0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        R = (X / row[:, None]) / (col / total)[None, :]
    R = np.where(mask, 0.0, R)
    return R, mask


def _derive(R: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    M = ((R >= 1.0) & ~mask).astype(np.int8)
    srca = (R - 1.0) / (R + 1.0)
    return M, srca


def from_values(X, locations, products, *, year=None, scope=INDUSTRY, subset=None,
                binary_m: bool = False) -> SpecializationSet:
    X = np.asarray(X, dtype=np.float64)
    R, mask = balassa(X)
    M, srca = _derive(R, mask)
    if binary_m:
        M = (X > 0).astype(np.int8)
    return SpecializationSet(year, scope, subset, tuple(locations), tuple(products),
                             X, R, M, srca, mask)


def export_matrix(table: TradeTable, year: int, products: Iterable[str] | None = None,
                  locations: Iterable[str] | None = None):
    """Exporter x product value matrix for ``year`` (rows/cols sorted unless given)."""
    ex = table.exports(year)
    if ex.empty:
        raise DataError(f"year {year} absent from trade table")
    if products is not None:
        products = list(products)
        ex = ex[ex["hs6"].isin(set(products))]
    else:
        products = sorted(ex["hs6"].unique())
    if locations is not None:
        locations = list(locations)
        ex = ex[ex["exporter"].isin(set(locations))]
    else:
        locations = sorted(ex["exporter"].unique())
    li = pd.Index(locations)
    pi = pd.Index(products)
    X = np.zeros((len(locations), len(products)))
    r = li.get_indexer(ex["exporter"])
    c = pi.get_indexer(ex["hs6"])
    X[r, c] = ex["value"].to_numpy()
    return X, tuple(locations), tuple(products)


def rca_matrix(table: TradeTable, year: int, scope: str = INDUSTRY, chapter: str | None = None,
               products: Iterable[str] | None = None, locations: Iterable[str] | None = None,
               subset: str | None = None) -> SpecializationSet:
    """Balassa RCA over exporters and HS6 products of one year.

    SECTORAL scope restricts products to one HS chapter (or to an explicit
    product list labelled ``subset``) and recomputes every total inside it.
    """
    if scope not in (INDUSTRY, SECTORAL):
        raise DataError(f"rca_matrix scope must be INDUSTRY or SECTORAL, got {scope!r}")
    if year not in table.years:
        raise DataError(f"year {year} absent from trade table")
    if scope == SECTORAL:
        if products is None:
            if chapter is None:
                raise DataError("SECTORAL scope needs a chapter or product list")
            chapter = f"{int(chapter):02d}"
            all_codes = sorted(table.for_year(year)["hs6"].unique())
            products = [h for h in all_codes if h[:2] == chapter]
            if not products:
                raise DataError(f"chapter {chapter} has no products in {year}")
            subset = chapter
        elif subset is None:
            subset = chapter
    X, locs, prods = export_matrix(table, year, products, locations)
    return from_values(X, locs, prods, year=year, scope=scope, subset=subset)


def firm_specialization(firms: FirmProductTable, binary: bool = False) -> SpecializationSet:
    """RCA on the binary firm x component incidence.

    With ``binary=True`` M is the raw incidence rather than the RCA filter.
    """
    if firms.incidence.size == 0 or firms.incidence.sum() == 0:
        raise DataError("empty firm incidence matrix")
    return from_values(firms.incidence, firms.firms, firms.components, scope=FIRM,
                       binary_m=binary)


def diversity(s: SpecializationSet) -> pd.Series:
    return pd.Series(s.M.sum(axis=1).astype(np.int64), index=list(s.locations), name="diversity")


def export_shares(table: TradeTable, members: Iterable[str], year: int) -> dict[str, float]:
    members = sorted(set(members))
    ex = table.for_year(year)
    tot = ex.groupby("exporter")["value"].sum()
    return {m: float(tot.get(m, 0.0)) for m in members}


def eu_weighted_srca(s: SpecializationSet, members: Iterable[str],
                     weights: Mapping[str, float]) -> np.ndarray:
    """Export-share weighted mean of member sRCA rows.

    ``weights`` are raw member export totals (or any nonnegative weights);
    they are renormalised over the member set.
    """
    members = sorted(set(members))
    if not members:
        raise DataError("empty member set")
    idx = s.loc_index()
    missing = [m for m in members if m not in idx]
    if missing:
        raise DataError(f"members absent from specialization set: {missing}")
    w = np.array([float(weights.get(m, 0.0)) for m in members])
    if not w.sum() > 0:
        raise DataError("member weights sum to zero")
    w = w / w.sum()
    rows = s.srca[[idx[m] for m in members]]
    return w @ rows


def save_specialization(s: SpecializationSet, directory, stem: str) -> None:
    """Write R as ``location,product,value`` triplets (nonzero only) plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location", "product", "value"])
        rows, cols = np.nonzero(s.R)
        for i, j in zip(rows, cols):
            w.writerow([s.locations[i], s.products[j], repr(float(s.R[i, j]))])
    zero_rows = [s.locations[i] for i in np.flatnonzero(s.mask.all(axis=1))] if s.mask.size else []
    zero_cols = [s.products[j] for j in np.flatnonzero(s.mask.all(axis=0))] if s.mask.size else []
    meta = {
        "year": s.year,
        "scope": s.scope,
        "subset": s.subset,
        "shape": list(s.shape),
        "locations": list(s.locations),
        "products": list(s.products),
        "masked_locations": zero_rows,
        "masked_products": zero_cols,
    }
    (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_specialization(directory, stem: str) -> SpecializationSet:
    directory = Path(directory)
    meta = json.loads((directory / f"{stem}.json").read_text())
    locs, prods = tuple(meta["locations"]), tuple(meta["products"])
    R = np.zeros((len(locs), len(prods)))
    li = {c: i for i, c in enumerate(locs)}
    pj = {p: j for j, p in enumerate(prods)}
    with open(directory / f"{stem}.csv", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            R[li[rec["location"]], pj[rec["product"]]] = float(rec["value"])
    mask = np.zeros(R.shape, dtype=bool)
    mask[[li[c] for c in meta["masked_locations"]], :] = True
    mask[:, [pj[p] for p in meta["masked_products"]]] = True
    M, srca = _derive(R, mask)
    return SpecializationSet(meta["year"], meta["scope"], meta["subset"], locs, prods,
                             None, R, M, srca, mask)
