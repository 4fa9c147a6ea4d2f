"""Herfindahl-Hirschman import concentration per importer and product."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import DataError
from .ingest import TradeTable

HHI_COLUMNS = ["importer", "hs6", "class", "hhi", "hhi_rel", "n_suppliers", "rca_flag"]


def hhi(values) -> float:
    """Sum of squared supplier shares; NaN when the total is not positive."""
    v = np.asarray(values, dtype=np.float64)
    total = v.sum()
    if not total > 0:
        return float("nan")
    s = v / total
    return math.fsum(s * s)


def _hhi_frame(flows: pd.DataFrame) -> pd.DataFrame:
    flows = flows[flows["value"] > 0]
    rows = []
    for (imp, h), grp in flows.groupby(["importer", "hs6"], sort=True):
        sup = grp.groupby("exporter", sort=True)["value"].sum()
        rows.append((imp, h, hhi(sup.to_numpy()), int((sup > 0).sum())))
    return pd.DataFrame(rows, columns=["importer", "hs6", "hhi", "n_suppliers"])


def hhi_table(trade: TradeTable, year: int, products: Iterable[str] | None = None) -> pd.DataFrame:
    flows = trade.for_year(year)
    if products is not None:
        flows = flows[flows["hs6"].isin(set(products))]
    return _hhi_frame(flows)


def importer_hhi(trade: TradeTable, year: int, importer: str, hs6: str) -> float:
    flows = trade.for_year(year)
    sel = flows[(flows["importer"] == importer) & (flows["hs6"] == hs6)]
    return hhi(sel.groupby("exporter")["value"].sum().to_numpy())


def normalize_hhi(table: pd.DataFrame, mean: float | None = None) -> pd.DataFrame:
    """Divide by the mean HHI over ``table`` (or by a supplied global mean)."""
    if table.empty:
        raise DataError("empty concentration table")
    ref = float(table["hhi"].mean()) if mean is None else float(mean)
    out = table.copy()
    out["hhi_rel"] = out["hhi"] / ref
    return out


def eu_hhi(trade: TradeTable, year: int, members: Iterable[str], products: Iterable[str] | None = None,
           label: str = "EU") -> pd.DataFrame:
    """Member imports pooled as one importer, intra-member flows dropped."""
    members = set(members)
    if not members:
        raise DataError("empty member set")
    flows = trade.for_year(year)
    flows = flows[flows["importer"].isin(members) & ~flows["exporter"].isin(members)]
    if products is not None:
        flows = flows[flows["hs6"].isin(set(products))]
    flows = flows.assign(importer=label)
    return _hhi_frame(flows)
