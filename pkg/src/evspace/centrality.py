"""Country-specific product subspaces and closeness centrality on them."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import DataError
from .productspace import ProductSpace
from .specialization import SpecializationSet

REACHABLE, ADVANTAGES = "reachable", "advantages"


@dataclass(frozen=True)
class CountrySubspace:
    """Undirected graph over all products of a space.

    An edge (p, q) with phi > 0 survives iff p or q is an advantage of the
    country; its length is 1 / phi.
    """

    country: str
    products: tuple[str, ...]
    lengths: csr_matrix
    advantages: np.ndarray

    @property
    def n(self) -> int:
        return len(self.products)

    @property
    def n_edges(self) -> int:
        return self.lengths.nnz // 2

    def index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.products)}


def advantage_row(space: ProductSpace, s: SpecializationSet, country: str) -> np.ndarray:
    """Country's binary M row aligned to ``space.products`` (missing products -> 0)."""
    i = s.row(country)
    pj = s.prod_index()
    row = np.zeros(space.n, dtype=bool)
    for k, p in enumerate(space.products):
        j = pj.get(p)
        if j is not None:
            row[k] = bool(s.M[i, j])
    return row


def subspace_from_advantages(space: ProductSpace, adv: np.ndarray, country: str) -> CountrySubspace:
    adv = np.asarray(adv, dtype=bool)
    phi = space.proximity
    keep = (phi > 0) & (adv[:, None] | adv[None, :])
    r, c = np.nonzero(keep)
    lengths = csr_matrix((1.0 / phi[r, c], (r, c)), shape=phi.shape)
    return CountrySubspace(country, space.products, lengths, adv)


def country_subspace(space: ProductSpace, s: SpecializationSet, country: str) -> CountrySubspace:
    return subspace_from_advantages(space, advantage_row(space, s, country), country)


def full_subspace(space: ProductSpace, label: str = "*") -> CountrySubspace:
    """The whole product space viewed as a subspace (every node an advantage)."""
    return subspace_from_advantages(space, np.ones(space.n, dtype=bool), label)


def shortest_paths(sub: CountrySubspace, sources: Sequence[int]) -> np.ndarray:
    """Distances from each source to every node; unreachable entries are inf."""
    return dijkstra(sub.lengths, directed=False, indices=np.asarray(sources, dtype=np.int64))


@dataclass(frozen=True)
class ClosenessTable:
    country: str
    products: tuple[str, ...]
    closeness: np.ndarray
    reachable_n: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"country": self.country, "product": list(self.products),
                             "closeness": self.closeness, "reachable_n": self.reachable_n})

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.products, self.closeness.tolist()))


def _target_indices(sub: CountrySubspace, targets: Iterable[str]) -> tuple[list[str], np.ndarray]:
    targets = list(targets)
    idx = sub.index()
    missing = [t for t in targets if t not in idx]
    if missing:
        raise DataError(f"targets not in node set: {missing[:5]}")
    return targets, np.array([idx[t] for t in targets], dtype=np.int64)


def closeness(sub: CountrySubspace, targets: Iterable[str], mode: str = REACHABLE) -> ClosenessTable:
    """Closeness of each target node inside the subspace.

    ``reachable``: (N - 1) / sum of shortest-path lengths to every node
    reachable from the target, N being the total node count; 0 when
    nothing is reachable.
    ``advantages``: mean inverse shortest-path length from the target to
    the country's advantage nodes (unreachable ones contribute 0).
    """
    targets, tidx = _target_indices(sub, targets)
    out = np.zeros(len(targets))
    reach = np.zeros(len(targets), dtype=np.int64)
    if len(targets) == 0:
        return ClosenessTable(sub.country, (), out, reach)
    D = shortest_paths(sub, tidx)
    n = sub.n
    for k, i in enumerate(tidx):
        d = D[k].copy()
        d[i] = np.inf
        finite = np.isfinite(d)
        reach[k] = int(finite.sum())
        if mode == REACHABLE:
            total = d[finite].sum()
            out[k] = (n - 1) / total if total > 0 else 0.0
        elif mode == ADVANTAGES:
            adv = sub.advantages.copy()
            adv[i] = False
            if adv.any():
                da = d[adv]
                out[k] = np.where(np.isfinite(da), 1.0 / da, 0.0).mean()
        else:
            raise ValueError(f"unknown closeness mode {mode!r}")
    return ClosenessTable(sub.country, tuple(targets), out, reach)


def set_closeness(sub: CountrySubspace, sources: Iterable[str], targets: Iterable[str]) -> ClosenessTable:
    """Closeness of each source node to a target set.

    The node universe of the reachable-set formula is replaced by the
    target set: (|T| - [s in T]) / sum of distances from s to reachable
    targets. With T = all nodes this is exactly :func:`closeness`.
    """
    sources, sidx = _target_indices(sub, sources)
    targets, tidx = _target_indices(sub, targets)
    out = np.zeros(len(sources))
    reach = np.zeros(len(sources), dtype=np.int64)
    if len(tidx) == 0 or len(sidx) == 0:
        return ClosenessTable(sub.country, tuple(sources), out, reach)
    # undirected graph: run Dijkstra from the (usually few) targets
    D = shortest_paths(sub, tidx).T[sidx]
    tset = set(tidx.tolist())
    for k, s in enumerate(sidx):
        d = D[k].copy()
        if s in tset:
            d[tidx == s] = np.inf
        finite = np.isfinite(d)
        reach[k] = int(finite.sum())
        total = d[finite].sum()
        n_t = len(tset) - (1 if s in tset else 0)
        out[k] = n_t / total if total > 0 else 0.0
    return ClosenessTable(sub.country, tuple(sources), out, reach)


def _top_k(n: int, top_quantile: float) -> int:
    if not 0 < top_quantile <= 1:
        raise ValueError("top_quantile must lie in (0, 1]")
    return max(1, math.ceil(top_quantile * n - 1e-9))


def top_mean(values, top_quantile: float = 0.25) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    if v.size == 0:
        raise DataError("empty chapter")
    return float(v[:_top_k(v.size, top_quantile)].mean())


def chapter_closeness(table: ClosenessTable, chapter: str, top_quantile: float = 0.25,
                      chapter_of: Callable[[str], str] | None = None) -> float:
    """Mean closeness over the chapter's products in the top ``top_quantile`` share."""
    chapter_of = chapter_of or (lambda p: p[:2])
    vals = [c for p, c in zip(table.products, table.closeness) if chapter_of(p) == chapter]
    if not vals:
        raise DataError(f"chapter {chapter!r} has no products in closeness table")
    return top_mean(vals, top_quantile)


def contribution_decomposition(sub: CountrySubspace, targets: Iterable[str],
                               chapter_of: Callable[[str], str] | None = None) -> pd.DataFrame:
    """Per-target split of inverse-distance weight across the chapters of reachable nodes.

    Shares sum to 1 for each target with a nonempty reachable set; targets
    that reach nothing contribute no rows.
    """
    chapter_of = chapter_of or (lambda p: p[:2])
    targets, tidx = _target_indices(sub, targets)
    rows = []
    if len(tidx) == 0:
        return pd.DataFrame(columns=["country", "target", "chapter", "share"])
    D = shortest_paths(sub, tidx)
    chapters = [chapter_of(p) for p in sub.products]
    for k, i in enumerate(tidx):
        d = D[k].copy()
        d[i] = np.inf
        finite = np.flatnonzero(np.isfinite(d))
        if finite.size == 0:
            continue
        w = 1.0 / d[finite]
        acc: dict[str, float] = {}
        for j, wj in zip(finite, w):
            acc[chapters[j]] = acc.get(chapters[j], 0.0) + wj
        total = w.sum()
        for ch in sorted(acc):
            rows.append((sub.country, targets[k], ch, acc[ch] / total))
    return pd.DataFrame(rows, columns=["country", "target", "chapter", "share"])


def map_countries(fn: Callable, countries: Sequence[str], jobs: int = 1) -> list:
    """Apply ``fn`` per country, optionally in threads; result order follows ``countries``."""
    if jobs <= 1:
        return [fn(c) for c in countries]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, countries))
