"""Complexity-potential indicators (EVCP, UCP, ICECP) on either layer."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .productspace import ProductSpace
from .specialization import SpecializationSet

log = logging.getLogger(__name__)

FIRM_THRESHOLD = 150


def basket_proximity(phi_row, basket) -> float:
    """Mean proximity of one product to the products in ``basket`` (indices).

    An empty basket gives 0.
    """
    basket = np.asarray(list(basket), dtype=np.int64)
    if basket.size == 0:
        return 0.0
    return float(np.asarray(phi_row, dtype=np.float64)[basket].mean())


def rho_complement(phi_gc: np.ndarray) -> np.ndarray:
    """Distance of a product to the basket, taken as 1 - basket proximity."""
    return 1.0 - phi_gc


@dataclass(frozen=True)
class PotentialScore:
    target_class: str
    locations: tuple[str, ...]
    raw: np.ndarray
    z: np.ndarray
    n_missing: np.ndarray
    flags: tuple[str, ...]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"location": list(self.locations), "target_class": self.target_class,
                             "raw": self.raw, "z": self.z, "n_missing_targets": self.n_missing})


def standardize(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        return raw.copy()
    sd = raw.std()
    if not sd > 1e-15 * max(1.0, np.abs(raw).max()):
        return np.zeros_like(raw)
    return (raw - raw.mean()) / sd


def _aligned_m(s: SpecializationSet, space: ProductSpace) -> np.ndarray:
    if s.products == space.products:
        return s.M.astype(bool)
    pj = s.prod_index()
    out = np.zeros((len(s.locations), space.n), dtype=bool)
    for k, p in enumerate(space.products):
        j = pj.get(p)
        if j is not None:
            out[:, k] = s.M[:, j].astype(bool)
    return out


def potential_raw(held: np.ndarray, phi: np.ndarray, pci_norm: np.ndarray, target_idx: np.ndarray,
                  rho: Callable[[np.ndarray], np.ndarray] = rho_complement) -> tuple[float, int, str]:
    """Raw potential of one location given its boolean advantage row.

    Returns (score, number of missing targets, flag).
    """
    basket = np.flatnonzero(held)
    missing = target_idx[~held[target_idx]]
    if missing.size == 0:
        return 0.0, 0, "all_targets_held"
    if basket.size == 0:
        return 0.0, int(missing.size), "empty_basket"
    phi_gc = phi[np.ix_(missing, basket)].mean(axis=1)
    w = 1.0 - rho(phi_gc)
    wsum = w.sum()
    if not wsum > 0:
        return 0.0, int(missing.size), "zero_weight"
    return float((w * phi_gc * pci_norm[missing]).sum() / wsum), int(missing.size), ""


def complexity_potential(s: SpecializationSet, space: ProductSpace, targets: Iterable[str],
                         target_class: str = "", rho=rho_complement,
                         locations: Sequence[str] | None = None) -> PotentialScore:
    """Proximity- and complexity-weighted nearness to targets not yet held, standardised."""
    tidx = space.indices(list(targets))
    M = _aligned_m(s, space)
    locs = list(locations) if locations is not None else list(s.locations)
    li = s.loc_index()
    raw, nmiss, flags = [], [], []
    for c in locs:
        if c not in li:
            raise DataError(f"location {c!r} not in specialization set")
        r, n, f = potential_raw(M[li[c]], space.proximity, space.pci_norm, tidx, rho)
        raw.append(r)
        nmiss.append(n)
        flags.append(f)
    raw = np.array(raw)
    return PotentialScore(target_class, tuple(locs), raw, standardize(raw),
                          np.array(nmiss, dtype=np.int64), tuple(flags))


def firm_potential_average(firm_set: SpecializationSet, firm_space: ProductSpace,
                           targets: Iterable[str], firm_country: Mapping[str, str] | Sequence[str],
                           target_class: str = "", threshold: int = FIRM_THRESHOLD,
                           rho=rho_complement) -> PotentialScore:
    """Per-firm potential averaged (unweighted) per country, then standardised.

    Only countries with strictly more than ``threshold`` firms are kept.
    ``n_missing_targets`` reports the country mean, rounded down.
    """
    if not isinstance(firm_country, Mapping):
        firm_country = dict(zip(firm_set.locations, firm_country))
    firm_scores = complexity_potential(firm_set, firm_space, targets, target_class, rho)
    df = pd.DataFrame({"country": [firm_country[f] for f in firm_scores.locations],
                       "raw": firm_scores.raw, "n": firm_scores.n_missing})
    counts = df.groupby("country").size()
    keep = sorted(c for c, n in counts.items() if n > threshold)
    dropped = sorted(set(counts.index) - set(keep))
    if dropped:
        log.info("firm potential: %d countries at or below %d firms excluded", len(dropped), threshold)
    g = df[df["country"].isin(keep)].groupby("country", sort=True)
    raw = g["raw"].mean().reindex(keep).to_numpy()
    nmiss = g["n"].mean().reindex(keep).to_numpy()
    return PotentialScore(target_class, tuple(keep), raw, standardize(raw),
                          np.floor(nmiss).astype(np.int64) if len(keep) else np.zeros(0, np.int64),
                          tuple("" for _ in keep))
