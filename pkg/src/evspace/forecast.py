"""Expected new EV strengths per country and HS chapter from a fitted closeness model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import NumericalError

# chapters feeding EV supply chains; 87 is motor vehicles
EV_RELEVANT_CHAPTERS = ("87", "85", "84", "73", "72", "76", "74", "29", "28", "38", "39", "40",
                        "90", "88", "71", "48", "94", "70")

GAIN_COLUMNS = ["country", "chapter", "delta_c", "x_std", "delta_p", "n_y", "n_rel_max", "n_rel_avg"]


def delta_closeness(chapter_closeness: Mapping[str, float]) -> dict[str, float]:
    """Deviation of each chapter's closeness from the country's mean over chapters."""
    if not chapter_closeness:
        return {}
    mean = float(np.mean(list(chapter_closeness.values())))
    return {h: float(c - mean) for h, c in chapter_closeness.items()}


def expected_gain(delta_c: float, sigma_c: float, beta: float, intercept: float,
                  n_notheld: float) -> dict[str, float]:
    """Change in switch probability from a closeness shift, scaled by the
    number of target products not yet held."""
    if not sigma_c > 0:
        raise NumericalError("sigma_C must be positive (degenerate closeness model)")
    x_std = delta_c / sigma_c
    delta_p = float(expit(beta * x_std + intercept) - expit(intercept))
    return {"delta_c": float(delta_c), "x_std": float(x_std), "delta_p": delta_p,
            "n_y": delta_p * float(n_notheld)}


def expected_gains(deltas: Mapping[str, Mapping[str, float]], sigma_c: float, beta: float,
                   intercept: float, n_notheld: Mapping[str, float]) -> pd.DataFrame:
    rows = []
    for country in sorted(deltas):
        for ch in sorted(deltas[country]):
            g = expected_gain(deltas[country][ch], sigma_c, beta, intercept, n_notheld[country])
            rows.append({"country": country, "chapter": ch, **g})
    df = pd.DataFrame(rows, columns=GAIN_COLUMNS[:6])
    return df


def normalize_gains(gains: pd.DataFrame, relevant: Sequence[str] = EV_RELEVANT_CHAPTERS) -> pd.DataFrame:
    """Add two relative gains per row.

    ``n_rel_max``: n_y over the country's largest |n_y|.
    ``n_rel_avg``: n_y over the country's mean n_y across the EV-relevant
    chapters present. A zero denominator leaves NaN.
    """
    out = gains.copy()
    out["n_rel_max"] = np.nan
    out["n_rel_avg"] = np.nan
    relevant = set(relevant)
    for country, grp in out.groupby("country", sort=True):
        ny = grp["n_y"].to_numpy()
        peak = np.abs(ny).max() if ny.size else 0.0
        if peak > 0:
            out.loc[grp.index, "n_rel_max"] = ny / peak
        rel = grp[grp["chapter"].isin(relevant)]["n_y"]
        if len(rel):
            avg = float(rel.mean())
            if abs(avg) > 1e-15:
                out.loc[grp.index, "n_rel_avg"] = ny / avg
    return out[GAIN_COLUMNS]
