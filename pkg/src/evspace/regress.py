"""Switch labelling, relatedness predictors and logistic regression by IRLS."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from . import centrality
from .errors import BoundaryError, DataError, NumericalError, SeparationError, SingularMatrixError
from .ingest import TradeTable
from .productspace import ProductSpace
from .specialization import INDUSTRY, SECTORAL, SpecializationSet, rca_matrix

log = logging.getLogger(__name__)

PREDICTORS = ("C_p", "CP_p", "P_p")
CONTROLS = ("log_export", "diversity")
STRATEGIES = ("random", "top_pci", "bottom_pci")
RESULT_COLUMNS = ["scope", "chapter", "strategy", "predictor", "coef", "se", "p", "n",
                  "converged", "seed"]


@dataclass(frozen=True)
class RegressionResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    intercept: float
    intercept_se: float
    means: np.ndarray
    sds: np.ndarray
    n: int
    iterations: int
    converged: bool
    deviance: float
    score_max: float

    def __getitem__(self, name: str) -> dict:
        k = self.names.index(name)
        return {"coef": float(self.coef[k]), "se": float(self.se[k]), "z": float(self.z[k]),
                "p": float(self.p[k]), "mean": float(self.means[k]), "sd": float(self.sds[k])}


def _log_likelihood(Z, y, beta) -> float:
    eta = Z @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(X, y, names: Sequence[str] | None = None, max_iter: int = 100,
                 tol: float = 1e-8, standardize: bool = True) -> RegressionResult:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    Columns of ``X`` are standardised on the sample (population sd) unless
    ``standardize`` is false; an intercept is added. Coefficients, standard
    errors (inverse Fisher information) and two-sided Wald p-values all
    refer to the standardised columns.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(k))
    if len(names) != k:
        raise ValueError("names do not match design columns")
    if n != y.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y must be binary")
    if n <= k + 1:
        raise SingularMatrixError(f"{n} observations for {k + 1} parameters")
    if y.min() == y.max():
        raise BoundaryError(f"outcome constant at {int(y[0])}; intercept diverges to "
                            f"{'-' if y[0] == 0 else '+'}inf")

    if standardize:
        means = X.mean(axis=0)
        sds = X.std(axis=0)
    else:
        means, sds = np.zeros(k), np.ones(k)
    for j in range(k):
        if not sds[j] > 0:
            raise SingularMatrixError(f"predictor {names[j]!r} has zero variance")
    Z = np.column_stack([np.ones(n), (X - means) / sds])

    pos, neg = y == 1, y == 0
    for j in range(k):
        x = Z[:, j + 1]
        if x[neg].max() < x[pos].min() or x[pos].max() < x[neg].min():
            raise SeparationError(names[j])

    beta = np.zeros(k + 1)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(Z @ beta)
        w = mu * (1.0 - mu)
        H = Z.T @ (w[:, None] * Z)
        g = Z.T @ (y - mu)
        if np.linalg.cond(H) > 1e13:
            if np.abs(beta).max() > 15:
                raise SeparationError(names[int(np.argmax(np.abs(beta[1:])))])
            raise SingularMatrixError("information matrix is singular")
        step = np.linalg.solve(H, g)
        beta = beta + step
        if np.abs(step).max() < tol:
            converged = True
            break

    mu = expit(Z @ beta)
    w = mu * (1.0 - mu)
    H = Z.T @ (w[:, None] * Z)
    score = Z.T @ (y - mu)
    if not converged and np.abs(beta[1:]).max() > 15:
        raise SeparationError(names[int(np.argmax(np.abs(beta[1:])))],
                              f"quasi-separation: coefficients diverging ({names})")
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("information matrix is singular") from exc
    se = np.sqrt(np.diag(cov))
    zstat = beta / se
    pval = np.clip(2.0 * norm.sf(np.abs(zstat)), 0.0, 1.0)
    deviance = -2.0 * _log_likelihood(Z, y, beta)
    return RegressionResult(names, beta[1:], se[1:], zstat[1:], pval[1:], float(beta[0]),
                            float(se[0]), means, sds, n, it, converged, deviance,
                            float(np.abs(score).max()))


def label_switches(t0: SpecializationSet, t1: SpecializationSet,
                   universe: Iterable[str] | None = None) -> pd.DataFrame:
    """Risk set (sRCA <= 0 at t0) with y = 1 iff sRCA > 0 at t1.

    Pairs masked in either year (zero row/column totals) are left out.
    """
    if (t0.scope, t0.subset) != (t1.scope, t1.subset):
        raise DataError(f"mismatched scopes: {(t0.scope, t0.subset)} vs {(t1.scope, t1.subset)}")
    l1, p1 = t1.loc_index(), t1.prod_index()
    uni = set(universe) if universe is not None else None
    locs = [c for c in t0.locations if c in l1]
    prods = [p for p in t0.products if p in p1 and (uni is None or p in uni)]
    if not locs or not prods:
        return pd.DataFrame(columns=["country", "product", "srca_t0", "srca_t1", "y"])
    l0, p0 = t0.loc_index(), t0.prod_index()
    r0 = np.array([l0[c] for c in locs]); c0 = np.array([p0[p] for p in prods])
    r1 = np.array([l1[c] for c in locs]); c1 = np.array([p1[p] for p in prods])
    s0 = t0.srca[np.ix_(r0, c0)]
    s1 = t1.srca[np.ix_(r1, c1)]
    valid = ~t0.mask[np.ix_(r0, c0)] & ~t1.mask[np.ix_(r1, c1)]
    risk = (s0 <= 0) & valid
    ii, jj = np.nonzero(risk)
    return pd.DataFrame({
        "country": [locs[i] for i in ii],
        "product": [prods[j] for j in jj],
        "srca_t0": s0[ii, jj],
        "srca_t1": s1[ii, jj],
        "y": (s1[ii, jj] > 0).astype(np.int64),
    })


class PredictorContext:
    """Relatedness predictors and controls at t0 for (country, product) pairs.

    Closeness per country is computed once over every product of the space
    and cached.
    """

    def __init__(self, space: ProductSpace, s: SpecializationSet, closeness_mode: str = centrality.REACHABLE):
        if s.scope != INDUSTRY:
            raise DataError("predictors need the full-economy (INDUSTRY) specialization set")
        if s.values is None:
            raise DataError("specialization set carries no export values")
        self.space = space
        self.s = s
        self.mode = closeness_mode
        self._held = {}
        self._closeness = {}
        self._pidx = space.index()
        sj = s.prod_index()
        self._s_cols = np.array([sj.get(p, -1) for p in space.products])

    def held(self, country: str) -> np.ndarray:
        if country not in self._held:
            self._held[country] = centrality.advantage_row(self.space, self.s, country)
        return self._held[country]

    def closeness(self, country: str) -> np.ndarray:
        if country not in self._closeness:
            sub = centrality.subspace_from_advantages(self.space, self.held(country), country)
            self._closeness[country] = centrality.closeness(sub, self.space.products, self.mode).closeness
        return self._closeness[country]

    def export_value(self, country: str, products: np.ndarray) -> np.ndarray:
        i = self.s.row(country)
        cols = self._s_cols[products]
        vals = np.where(cols >= 0, self.s.values[i, np.maximum(cols, 0)], 0.0)
        return vals

    def values(self, country: str, products: Sequence[str]) -> dict[str, np.ndarray]:
        idx = self.space.indices(products)
        held = self.held(country)
        basket = np.flatnonzero(held)
        phi = self.space.proximity
        if basket.size:
            prox = phi[np.ix_(idx, basket)].mean(axis=1)
        else:
            prox = np.zeros(idx.size)
        not_held = (~held[idx]).astype(np.float64)
        p_p = prox * not_held
        return {
            "C_p": self.closeness(country)[idx],
            "CP_p": p_p * self.space.pci_norm[idx],
            "P_p": p_p,
            "log_export": np.log1p(self.export_value(country, idx)),
            "diversity": np.full(idx.size, float(held.sum())),
        }

    def design(self, pairs: pd.DataFrame) -> pd.DataFrame:
        """Attach predictor columns to a frame with ``country`` and ``product``; drops
        products absent from the t0 space."""
        present = pairs["product"].isin(self._pidx)
        if (~present).any():
            log.info("dropping %d pairs whose product is absent at t0", int((~present).sum()))
        pairs = pairs[present].reset_index(drop=True)
        cols = {k: np.zeros(len(pairs)) for k in PREDICTORS + CONTROLS}
        for country, grp in pairs.groupby("country", sort=True):
            vals = self.values(country, grp["product"].tolist())
            for k in cols:
                cols[k][grp.index.to_numpy()] = vals[k]
        out = pairs.copy()
        for k, v in cols.items():
            out[k] = v
        return out


def predictors(country: str, product: str, space: ProductSpace, s: SpecializationSet,
               closeness_mode: str = centrality.REACHABLE) -> dict[str, float]:
    ctx = PredictorContext(space, s, closeness_mode)
    return {k: float(v[0]) for k, v in ctx.values(country, [product]).items()}


def derive_seed(base: int, *parts) -> int:
    key = zlib.crc32("|".join(str(p) for p in parts).encode())
    return int(np.random.SeedSequence([int(base), key]).generate_state(1)[0])


def sample_products(products: Sequence[str], pci: Sequence[float], strategy: str,
                    k: int = 12, seed: int = 0) -> list[str]:
    """Draw up to ``k`` distinct products, optionally from a PCI quartile."""
    if len(products) == 0:
        raise DataError("empty chapter")
    order = np.argsort(np.asarray(products))
    prods = np.asarray(products)[order]
    vals = np.asarray(pci, dtype=np.float64)[order]
    if strategy == "random":
        pool = prods
    elif strategy == "top_pci":
        pool = prods[vals >= np.quantile(vals, 0.75)]
    elif strategy == "bottom_pci":
        pool = prods[vals <= np.quantile(vals, 0.25)]
    else:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(pool) <= k:
        return sorted(pool.tolist())
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(pool, size=k, replace=False).tolist())


@dataclass
class ProtocolResult:
    table: pd.DataFrame
    fits: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    skips: list = field(default_factory=list)

    def fit(self, scope, chapter, strategy, predictor) -> RegressionResult | None:
        return self.fits.get((scope, chapter, strategy, predictor))


def _fit_rows(design: pd.DataFrame, key, seed, out: ProtocolResult, rows: list) -> None:
    scope, chapter, strategy = key
    for pred in PREDICTORS:
        row = {"scope": scope, "chapter": chapter, "strategy": strategy, "predictor": pred,
               "coef": float("nan"), "se": float("nan"), "p": float("nan"), "n": len(design),
               "converged": False, "seed": seed}
        try:
            if len(design) == 0:
                raise DataError("empty risk set")
            X = design[[pred, *CONTROLS]].to_numpy()
            res = fit_logistic(X, design["y"].to_numpy(), (pred, *CONTROLS))
            out.fits[(scope, chapter, strategy, pred)] = res
            row.update(coef=float(res.coef[0]), se=float(res.se[0]), p=float(res.p[0]),
                       converged=bool(res.converged))
        except (NumericalError, DataError) as exc:
            out.skips.append({"scope": scope, "chapter": chapter, "strategy": strategy,
                              "predictor": pred, "reason": str(exc)})
        rows.append(row)


def run_protocol(table: TradeTable, t0: int, t1: int, space: ProductSpace, s_t0: SpecializationSet,
                 s_t1: SpecializationSet, ev_codes: Sequence[str], chapters: Sequence[str] | None = None,
                 scope: str = "sectoral", k: int = 12, seed: int = 0,
                 closeness_mode: str = centrality.REACHABLE,
                 context: PredictorContext | None = None) -> ProtocolResult:
    """One model per (chapter, strategy, predictor) plus the EV-only models.

    ``scope='sectoral'`` labels switches from sRCA recomputed within each
    chapter (or within the EV code set); ``scope='full'`` uses the
    economy-wide sRCA. Failed fits keep their row with NaN estimates and
    are listed in ``skips``.
    """
    if scope not in ("sectoral", "full"):
        raise ValueError("scope must be 'sectoral' or 'full'")
    ctx = context or PredictorContext(space, s_t0, closeness_mode)
    chapters = list(chapters) if chapters is not None else space.chapters()
    out = ProtocolResult(pd.DataFrame())
    rows: list = []
    for ch in chapters:
        prods = space.in_chapter(ch)
        if not prods:
            raise DataError(f"chapter {ch} has no products in the t0 product space")
        if scope == "sectoral":
            lab0 = rca_matrix(table, t0, SECTORAL, chapter=ch)
            lab1 = rca_matrix(table, t1, SECTORAL, chapter=ch)
        else:
            lab0, lab1 = s_t0, s_t1
        pci = space.pci[space.indices(prods)]
        for strat in STRATEGIES:
            sd = derive_seed(seed, scope, ch, strat)
            sample = sample_products(prods, pci, strat, k=k, seed=sd)
            out.samples[(scope, ch, strat)] = sample
            pairs = label_switches(lab0, lab1, sample)
            _fit_rows(ctx.design(pairs), (scope, ch, strat), sd, out, rows)

    ev = sorted(ev_codes)
    ev_in = [p for p in ev if p in set(space.products)]
    if scope == "sectoral":
        lab0 = rca_matrix(table, t0, SECTORAL, products=ev, subset="EV")
        lab1 = rca_matrix(table, t1, SECTORAL, products=ev, subset="EV")
    else:
        lab0, lab1 = s_t0, s_t1
    sd = derive_seed(seed, scope, "EV", "all")
    out.samples[(scope, "EV", "all")] = ev_in
    pairs = label_switches(lab0, lab1, ev_in)
    _fit_rows(ctx.design(pairs), (scope, "EV", "all"), sd, out, rows)
    out.table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return out
