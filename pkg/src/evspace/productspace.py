"""Product-space construction: proximity networks and product complexity."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.sparse import bmat, csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DataError
from .ingest import ComponentTaxonomy, HsClassMap
from .specialization import SpecializationSet

log = logging.getLogger(__name__)

INDUSTRY, FIRM = "INDUSTRY", "FIRM"


def _cooccurrence(M):
    M = np.asarray(M, dtype=np.float64)
    co = M.T @ M
    return co, np.diag(co).copy()


def proximity(M) -> np.ndarray:
    """Co-occurrence of two products normalised by the larger ubiquity.

    Products nobody specialises in get all-zero rows. The diagonal is 0.
    """
    co, u = _cooccurrence(M)
    denom = np.maximum.outer(u, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(denom > 0, co / denom, 0.0)
    np.fill_diagonal(phi, 0.0)
    return phi


def proximity_min_conditional(M) -> np.ndarray:
    """phi[g, i] = min(P(g|i), P(i|g)) with P(g|i) = co(g, i) / ubiquity(i)."""
    co, u = _cooccurrence(M)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_g_given_i = np.where(u[None, :] > 0, co / u[None, :], 0.0)
        p_i_given_g = np.where(u[:, None] > 0, co / u[:, None], 0.0)
    phi = np.minimum(p_g_given_i, p_i_given_g)
    np.fill_diagonal(phi, 0.0)
    return phi


@dataclass(frozen=True)
class PciResult:
    pci: np.ndarray
    pci_norm: np.ndarray
    flagged: np.ndarray
    eigenvalue: float
    iterations: int


def _largest_block(M: np.ndarray):
    nc, npr = M.shape
    adj = bmat([[None, csr_matrix(M)], [csr_matrix(M.T), None]], format="csr")
    _, labels = connected_components(adj, directed=False)
    prod_labels = labels[nc:]
    counts = np.bincount(prod_labels, minlength=labels.max() + 1)
    best = int(np.argmax(counts))  # ties go to the label seen first
    rows = labels[:nc] == best
    cols = prod_labels == best
    return rows, cols


def second_eigenvector(S: np.ndarray, u1: np.ndarray, tol: float = 1e-10,
                       max_iter: int = 20000, seed: int = 0):
    """Power iteration on symmetric PSD ``S`` with ``u1`` (unit) deflated out.

    Returns (vector, eigenvalue, iterations). Falls back to a dense
    eigensolve if the iteration has not settled within ``max_iter``.
    """
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x -= (u1 @ x) * u1
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = S @ x
        y -= (u1 @ y) * u1
        lam = float(np.linalg.norm(y))
        if lam < 1e-14:
            return np.zeros(n), 0.0, it
        y /= lam
        if np.linalg.norm(y - x) < tol:
            return y, lam, it
        x = y
    log.warning("power iteration did not converge in %d steps; using dense eigensolver", max_iter)
    w, V = np.linalg.eigh(S - np.outer(u1, u1))
    v = V[:, -1]
    return v, float(w[-1]), max_iter


def pci(M, tol: float = 1e-10, seed: int = 0) -> PciResult:
    """Product complexity from the second eigenvector of the product-product
    transition matrix M_pp' = sum_c M_cp M_cp' / (k_c k_p).

    Computed on the largest connected block of the bipartite graph; products
    outside it (and zero-ubiquity products) are flagged and get the mean
    value 0. PCI is standardised and its sign chosen so that it correlates
    with negative ubiquity. ``pci_norm`` is the min-max rescaling to [0, 1];
    when every value is equal it is 1 everywhere.
    """
    M = np.asarray(M, dtype=np.float64)
    n_prod = M.shape[1]
    out = np.zeros(n_prod)
    flagged = np.ones(n_prod, dtype=bool)
    lam, iters = 0.0, 0
    keep_c = M.sum(axis=1) > 0
    keep_p = M.sum(axis=0) > 0
    if keep_c.any() and keep_p.any():
        sub = M[np.ix_(keep_c, keep_p)]
        rows, cols = _largest_block(sub)
        block = sub[np.ix_(rows, cols)]
        p_idx = np.flatnonzero(keep_p)[cols]
        flagged[p_idx] = False
        if block.shape[1] >= 2:
            kc = block.sum(axis=1)
            kp = block.sum(axis=0)
            A = block / np.sqrt(kc)[:, None] / np.sqrt(kp)[None, :]
            S = A.T @ A
            u1 = np.sqrt(kp) / np.linalg.norm(np.sqrt(kp))
            vec, lam, iters = second_eigenvector(S, u1, tol=tol, seed=seed)
            v = vec / np.sqrt(kp)
            sd = v.std()
            if sd > 1e-12 * max(1.0, np.abs(v).max()):
                z = (v - v.mean()) / sd
                if np.ptp(kp) > 0 and np.corrcoef(z, -kp)[0, 1] < 0:
                    z = -z
                out[p_idx] = z
        if flagged.any():
            log.info("pci: %d products outside the main block", int(flagged.sum()))
    rng = out.max() - out.min() if n_prod else 0.0
    norm = (out - out.min()) / rng if rng > 0 else np.ones(n_prod)
    return PciResult(out, norm, flagged, lam, iters)


@dataclass(frozen=True)
class ProductSpace:
    layer: str
    products: tuple[str, ...]
    proximity: np.ndarray
    chapter: tuple[str | None, ...]
    pclass: tuple[str | None, ...]
    ubiquity: np.ndarray
    pci: np.ndarray
    pci_norm: np.ndarray
    pci_flagged: np.ndarray

    @property
    def n(self) -> int:
        return len(self.products)

    def index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.products)}

    def indices(self, products) -> np.ndarray:
        idx = self.index()
        missing = [p for p in products if p not in idx]
        if missing:
            raise DataError(f"products not in product space: {missing[:5]}")
        return np.array([idx[p] for p in products], dtype=np.int64)

    def of_class(self, powertrain_class: str) -> list[str]:
        return [p for p, c in zip(self.products, self.pclass) if c == powertrain_class]

    def chapters(self) -> list[str]:
        return sorted({c for c in self.chapter if c is not None})

    def in_chapter(self, chapter: str) -> list[str]:
        return [p for p, c in zip(self.products, self.chapter) if c == chapter]


def build_space(s: SpecializationSet, layer: str,
                classes: Mapping[str, str] | None = None, seed: int = 0) -> ProductSpace:
    if s.M.size == 0 or s.M.shape[1] == 0:
        raise DataError(f"empty {layer} layer")
    classes = classes or {}
    res = pci(s.M, seed=seed)
    chapter = tuple(p[:2] for p in s.products) if layer == INDUSTRY else tuple(None for _ in s.products)
    return ProductSpace(
        layer=layer,
        products=s.products,
        proximity=proximity(s.M),
        chapter=chapter,
        pclass=tuple(classes.get(p) for p in s.products),
        ubiquity=s.M.sum(axis=0).astype(np.int64),
        pci=res.pci,
        pci_norm=res.pci_norm,
        pci_flagged=res.flagged,
    )


@dataclass(frozen=True)
class Layers:
    industry: ProductSpace
    firm: ProductSpace
    interlayer: dict[str, tuple[str, ...]]

    def sizes(self) -> dict:
        def counts(space):
            return {"nodes": space.n,
                    **{c: len(space.of_class(c)) for c in ("EV", "ICE", "UNSPECIFIC")}}
        return {"industry": counts(self.industry), "firm": counts(self.firm),
                "interlayer_links": sum(len(v) for v in self.interlayer.values())}


def build_layers(industry: SpecializationSet, firm: SpecializationSet,
                 taxonomy: ComponentTaxonomy, hs_classes: HsClassMap, seed: int = 0) -> Layers:
    ind = build_space(industry, INDUSTRY, hs_classes.classes, seed=seed)
    comp_classes = {cid: c.powertrain_class for cid, c in taxonomy.components.items()}
    fl = build_space(firm, FIRM, comp_classes, seed=seed)
    return Layers(ind, fl, taxonomy.interlayer_map())


def write_space(space: ProductSpace, directory, stem: str) -> None:
    """Edge list (upper triangle, phi > 0) and node metadata CSVs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{stem}_edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "q", "phi"])
        iu, ju = np.triu_indices(space.n, k=1)
        vals = space.proximity[iu, ju]
        for i, j, v in zip(iu[vals > 0], ju[vals > 0], vals[vals > 0]):
            w.writerow([space.products[i], space.products[j], repr(float(v))])
    with open(directory / f"{stem}_nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["product", "chapter", "class", "ubiquity", "pci", "pci_norm", "pci_flagged"])
        for k, p in enumerate(space.products):
            w.writerow([p, space.chapter[k] or "", space.pclass[k] or "", int(space.ubiquity[k]),
                        repr(float(space.pci[k])), repr(float(space.pci_norm[k])),
                        int(space.pci_flagged[k])])
