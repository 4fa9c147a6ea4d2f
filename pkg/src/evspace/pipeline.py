"""Stage runner with hash-keyed caches and a run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import pickle
import platform
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import scipy

from . import __version__, centrality, concentration, forecast, ingest, potential, productspace, regress
from . import specialization
from .config import PipelineConfig
from .errors import DataError, EvspaceError, NumericalError, StageError

log = logging.getLogger(__name__)

STAGES = ("ingest", "specialization", "productspace", "centrality", "potential", "regress",
          "forecast", "concentration")
CLASSES = (ingest.EV, ingest.UNSPECIFIC, ingest.ICE)
EU = "EU"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_frame(path: Path, df: pd.DataFrame) -> None:
    _write_csv(path, list(df.columns), ([_fmt(v) for v in row] for row in df.itertuples(index=False)))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_fmt) + "\n")


# --------------------------------------------------------------------------- stages

def _ingest(cfg: PipelineConfig, up: dict, out: Path):
    aliases = ingest.load_aliases(cfg.aliases) if cfg.aliases else None
    trade = ingest.load_trade(cfg.trade, cfg.hs_revision, aliases=aliases)
    tax = ingest.load_taxonomy(cfg.taxonomy)
    firms = ingest.load_firm_products(cfg.firms, tax, aliases=aliases)
    classes = ingest.classify_hs_codes(tax)
    for year in {cfg.reference_year, cfg.t0, cfg.t1}:
        if year not in trade.years:
            raise DataError(f"year {year} absent from trade data (have {trade.years})")
    trade.report.write_json(out / "trade_report.json")
    firms.report.write_json(out / "firms_report.json")
    _write_csv(out / "hs_classes.csv", ["hs6", "class"], sorted(classes.classes.items()))
    _write_json(out / "summary.json", {
        "trade_rows": len(trade), "years": trade.years, "hs_revision": trade.hs_revision,
        "firms": len(firms.firms), "components": len(firms.components),
        "taxonomy_components": len(tax),
        "hs_codes_by_class": {c: len(classes.codes(c)) for c in CLASSES},
    })
    return {"trade": trade, "taxonomy": tax, "firms": firms, "classes": classes}


def _specialization(cfg, up, out):
    trade = up["ingest"]["trade"]
    years = sorted({cfg.t0, cfg.t1, cfg.reference_year})
    industry = {y: specialization.rca_matrix(trade, y) for y in years}
    firm = specialization.firm_specialization(up["ingest"]["firms"], binary=cfg.firm_layer_mode == "binary")
    eu = {}
    members = [m for m in cfg.eu_members if m in industry[cfg.reference_year].locations]
    for y in years:
        s = industry[y]
        present = [m for m in members if m in s.locations]
        if present:
            weights = specialization.export_shares(trade, present, cfg.reference_year)
            eu[y] = specialization.eu_weighted_srca(s, present, weights)
    for y, s in industry.items():
        specialization.save_specialization(s, out, f"rca_{y}")
        _write_frame(out / f"diversity_{y}.csv",
                     specialization.diversity(s).rename_axis("location").reset_index())
    specialization.save_specialization(firm, out, "rca_firm")
    classes = up["ingest"]["classes"]
    rows = []
    for y in sorted(eu):
        s = industry[y]
        rows += [(y, p, classes.get(p, ""), _fmt(v)) for p, v in zip(s.products, eu[y])]
    _write_csv(out / "eu_srca.csv", ["year", "product", "class", "srca"], rows)
    return {"industry": industry, "firm": firm, "eu_srca": eu, "eu_members": tuple(members)}


def _productspace(cfg, up, out):
    ing, sp = up["ingest"], up["specialization"]
    layers = productspace.build_layers(sp["industry"][cfg.reference_year], sp["firm"],
                                       ing["taxonomy"], ing["classes"])
    if cfg.t0 == cfg.reference_year:
        space_t0 = layers.industry
    else:
        space_t0 = productspace.build_space(sp["industry"][cfg.t0], productspace.INDUSTRY,
                                            ing["classes"].classes)
    productspace.write_space(layers.industry, out, "industry")
    productspace.write_space(layers.firm, out, "firm")
    productspace.write_space(space_t0, out, f"industry_{cfg.t0}")
    _write_csv(out / "interlayer.csv", ["component_id", "hs6"],
               [(cid, h) for cid, links in layers.interlayer.items() for h in links])
    _write_json(out / "sizes.json", layers.sizes())
    return {"layers": layers, "space_t0": space_t0}


def _eu_advantages(eu_row) -> np.ndarray:
    # weighted sRCA >= 0 is the aggregate's analogue of R >= 1
    return np.asarray(eu_row) >= 0


def _centrality(cfg, up, out):
    ps, sp = up["productspace"], up["specialization"]
    space = ps["layers"].industry
    s = sp["industry"][cfg.reference_year]
    subs = {c: centrality.country_subspace(space, s, c) for c in s.locations}
    if cfg.reference_year in sp["eu_srca"]:
        eu_adv = np.zeros(space.n, dtype=bool)
        pj = s.prod_index()
        row = _eu_advantages(sp["eu_srca"][cfg.reference_year])
        for k, p in enumerate(space.products):
            eu_adv[k] = row[pj[p]]
        subs[EU] = centrality.subspace_from_advantages(space, eu_adv, EU)
    names = sorted(subs)
    result = {}
    for cls in CLASSES:
        targets = space.of_class(cls)
        tables = centrality.map_countries(
            lambda c: centrality.closeness(subs[c], targets, cfg.closeness_mode), names, cfg.jobs)
        frame = pd.concat([t.frame() for t in tables], ignore_index=True) if tables else pd.DataFrame()
        _write_frame(out / f"closeness_{cls}.csv", frame)
        dec = centrality.map_countries(
            lambda c: centrality.contribution_decomposition(subs[c], targets), names, cfg.jobs)
        _write_frame(out / f"decomposition_{cls}.csv", pd.concat(dec, ignore_index=True))
        result[cls] = frame
    return result


def _potential(cfg, up, out):
    ps, sp, ing = up["productspace"], up["specialization"], up["ingest"]
    layers = ps["layers"]
    ind, firm = [], []
    for cls in CLASSES:
        ind.append(potential.complexity_potential(sp["industry"][cfg.reference_year], layers.industry,
                                                  layers.industry.of_class(cls), cls).frame())
        firm.append(potential.firm_potential_average(sp["firm"], layers.firm, layers.firm.of_class(cls),
                                                     ing["firms"].country, cls,
                                                     threshold=cfg.firm_threshold).frame())
    ind, firm = pd.concat(ind, ignore_index=True), pd.concat(firm, ignore_index=True)
    _write_frame(out / "potential_industry.csv", ind)
    _write_frame(out / "potential_firm.csv", firm)
    return {"industry": ind, "firm": firm}


def _regress(cfg, up, out):
    ps, sp, ing = up["productspace"], up["specialization"], up["ingest"]
    space = ps["space_t0"]
    s0, s1 = sp["industry"][cfg.t0], sp["industry"][cfg.t1]
    ev = ing["classes"].codes(ingest.EV)
    ctx = regress.PredictorContext(space, s0, cfg.closeness_mode)
    chapters = list(cfg.protocol_chapters) or None
    results, tables, skips, samples = {}, [], [], []
    for scope in cfg.protocol_scopes:
        res = regress.run_protocol(ing["trade"], cfg.t0, cfg.t1, space, s0, s1, ev, chapters=chapters,
                                   scope=scope, k=cfg.sample_k, seed=cfg.seed,
                                   closeness_mode=cfg.closeness_mode, context=ctx)
        results[scope] = res
        tables.append(res.table)
        skips += res.skips
        samples += [(sc, ch, st, regress.derive_seed(cfg.seed, sc, ch, st), ";".join(ps_))
                    for (sc, ch, st), ps_ in res.samples.items()]
    _write_frame(out / "results.csv", pd.concat(tables, ignore_index=True))
    _write_csv(out / "samples.csv", ["scope", "chapter", "strategy", "seed", "products"], samples)
    _write_json(out / "skips.json", skips)
    ev_models = {}
    for scope, res in results.items():
        fit = res.fit(scope, "EV", "all", "C_p")
        if fit is not None:
            ev_models[scope] = {"beta": fit.coef[0], "intercept": fit.intercept, "sigma_c": fit.sds[0],
                                "mean_c": fit.means[0], "p": fit.p[0], "n": fit.n,
                                "iterations": fit.iterations, "converged": fit.converged}
    _write_json(out / "ev_model.json", ev_models)
    return {"results": results, "ev_models": ev_models}


def _forecast(cfg, up, out):
    ps, sp, ing, rg = up["productspace"], up["specialization"], up["ingest"], up["regress"]
    model = None
    for scope in cfg.protocol_scopes:
        model = rg["ev_models"].get(scope)
        if model is not None:
            break
    if model is None:
        raise NumericalError("no EV-only closeness model available for forecasting")
    space = ps["space_t0"]
    s0 = sp["industry"][cfg.t0]
    ev = [p for p in ing["classes"].codes(ingest.EV) if p in set(space.products)]
    chapters = space.chapters()
    subs = {c: centrality.country_subspace(space, s0, c) for c in s0.locations}
    pidx = s0.prod_index()
    ev_cols = [pidx[p] for p in ev if p in pidx]
    notheld = {c: float(len(ev) - s0.M[s0.row(c), ev_cols].sum()) for c in s0.locations}
    if cfg.t0 in sp["eu_srca"] and sp["eu_members"]:
        row = _eu_advantages(sp["eu_srca"][cfg.t0])
        adv = np.array([row[pidx[p]] for p in space.products])
        subs[EU] = centrality.subspace_from_advantages(space, adv, EU)
        notheld[EU] = float(np.mean([notheld[m] for m in sp["eu_members"] if m in notheld]))

    def chapter_table(c):
        tab = centrality.set_closeness(subs[c], space.products, ev)
        return {h: centrality.chapter_closeness(tab, h, cfg.top_quantile) for h in chapters}

    names = sorted(subs)
    per_country = dict(zip(names, centrality.map_countries(chapter_table, names, cfg.jobs)))
    deltas = {c: forecast.delta_closeness(v) for c, v in per_country.items()}
    gains = forecast.expected_gains(deltas, model["sigma_c"], model["beta"], model["intercept"], notheld)
    gains = forecast.normalize_gains(gains, cfg.ev_relevant_chapters)
    _write_frame(out / "gains.csv", gains)
    _write_csv(out / "chapter_closeness.csv", ["country", "chapter", "closeness"],
               [(c, h, _fmt(v)) for c in names for h, v in sorted(per_country[c].items())])
    return {"gains": gains, "chapter_closeness": per_country}


def _concentration(cfg, up, out):
    ing, sp = up["ingest"], up["specialization"]
    trade, classes = ing["trade"], ing["classes"]
    year = cfg.reference_year
    prods = sorted(classes.classes)
    table = concentration.hhi_table(trade, year, prods)
    if table.empty:
        raise DataError("no imports of classified products in the reference year")
    mean = float(table["hhi"].mean())
    table = concentration.normalize_hhi(table, mean)
    s = sp["industry"][year]
    li, pj = s.loc_index(), s.prod_index()

    def flag(imp, h):
        if imp == EU:
            row = sp["eu_srca"].get(year)
            return row is not None and h in pj and bool(row[pj[h]] >= 0)
        return imp in li and h in pj and bool(s.R[li[imp], pj[h]] >= 1)

    frames = [table]
    if sp["eu_members"]:
        eu = concentration.eu_hhi(trade, year, sp["eu_members"], prods, label=EU)
        if not eu.empty:
            frames.append(concentration.normalize_hhi(eu, mean))
    full = pd.concat(frames, ignore_index=True)
    full["class"] = [classes.get(h, "") for h in full["hs6"]]
    full["rca_flag"] = [int(flag(i, h)) for i, h in zip(full["importer"], full["hs6"])]
    full = full[concentration.HHI_COLUMNS]
    _write_frame(out / "hhi.csv", full)
    return {"hhi": full, "global_mean": mean}


@dataclass(frozen=True)
class Stage:
    name: str
    deps: tuple[str, ...]
    params: tuple[str, ...]
    fn: Callable


REGISTRY = {s.name: s for s in (
    Stage("ingest", (), ("hs_revision", "reference_year", "t0", "t1"), _ingest),
    Stage("specialization", ("ingest",), ("reference_year", "t0", "t1", "eu_members", "firm_layer_mode"),
          _specialization),
    Stage("productspace", ("ingest", "specialization"), ("reference_year", "t0"), _productspace),
    Stage("centrality", ("specialization", "productspace"), ("reference_year", "closeness_mode"),
          _centrality),
    Stage("potential", ("ingest", "specialization", "productspace"), ("reference_year", "firm_threshold"),
          _potential),
    Stage("regress", ("ingest", "specialization", "productspace"),
          ("t0", "t1", "seed", "protocol_scopes", "protocol_chapters", "sample_k", "closeness_mode"),
          _regress),
    Stage("forecast", ("ingest", "specialization", "productspace", "regress"),
          ("t0", "top_quantile", "ev_relevant_chapters", "protocol_scopes"), _forecast),
    Stage("concentration", ("ingest", "specialization"), ("reference_year",), _concentration),
)}


def _closure(name: str) -> list[str]:
    seen: list[str] = []

    def visit(n):
        for d in REGISTRY[n].deps:
            visit(d)
        if n not in seen:
            seen.append(n)
    visit(name)
    return [s for s in STAGES if s in seen]


def input_hashes(cfg: PipelineConfig) -> dict[str, str]:
    files = {"trade": cfg.trade, "firms": cfg.firms, "taxonomy": cfg.taxonomy}
    if cfg.aliases:
        files["aliases"] = cfg.aliases
    return {k: sha256_file(v) for k, v in files.items()}


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.cache = self.out / ".cache"
        self._inputs = None
        self._keys: dict[str, str] = {}
        self.results: dict[str, object] = {}
        self.files: dict[str, dict[str, str]] = {}
        self.reused: list[str] = []

    @property
    def inputs(self) -> dict[str, str]:
        if self._inputs is None:
            self._inputs = input_hashes(self.cfg)
        return self._inputs

    def key(self, name: str) -> str:
        if name not in self._keys:
            st = REGISTRY[name]
            params = self.cfg.params()
            payload = {"stage": name, "version": __version__,
                       "params": {p: params[p] for p in st.params},
                       "deps": {d: self.key(d) for d in st.deps}}
            if name == "ingest":
                payload["inputs"] = self.inputs
            blob = json.dumps(payload, sort_keys=True, default=str).encode()
            self._keys[name] = hashlib.sha256(blob).hexdigest()
        return self._keys[name]

    def _stage_files(self, name: str) -> dict[str, str]:
        d = self.out / name
        return {str(p.relative_to(self.out)): sha256_file(p) for p in sorted(d.rglob("*")) if p.is_file()}

    def load_cached(self, name: str):
        meta_p, pkl = self.cache / f"{name}.json", self.cache / f"{name}.pkl"
        if not (meta_p.is_file() and pkl.is_file() and (self.out / name).is_dir()):
            return None
        try:
            meta = json.loads(meta_p.read_text())
        except json.JSONDecodeError:
            return None
        if meta.get("key") != self.key(name) or meta.get("sha256") != sha256_file(pkl):
            log.info("cache for %s is stale or corrupted; rebuilding", name)
            return None
        if meta.get("files") != self._stage_files(name):
            log.info("outputs of %s changed on disk; rebuilding", name)
            return None
        with open(pkl, "rb") as fh:
            obj = pickle.load(fh)
        self.files[name] = meta["files"]
        return obj

    def build(self, name: str):
        st = REGISTRY[name]
        up = {d: self.results[d] for d in st.deps}
        final = self.out / name
        partial = self.out / f"{name}.partial"
        if partial.exists():
            shutil.rmtree(partial)
        partial.mkdir(parents=True)
        try:
            obj = st.fn(self.cfg, up, partial)
            _write_json(partial / "meta.json", {"stage": name, "seed": self.cfg.seed,
                                                "config_digest": self.cfg.digest(), "key": self.key(name)})
        except EvspaceError as exc:
            shutil.rmtree(partial, ignore_errors=True)
            raise StageError(name, exc) from exc
        except Exception as exc:
            shutil.rmtree(partial, ignore_errors=True)
            err = StageError(name, exc)
            if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError)):
                err.exit_code = NumericalError.exit_code
            raise err from exc
        if final.exists():
            shutil.rmtree(final)
        partial.rename(final)
        self.cache.mkdir(parents=True, exist_ok=True)
        pkl = self.cache / f"{name}.pkl"
        with open(pkl, "wb") as fh:
            pickle.dump(obj, fh, protocol=4)
        self.files[name] = self._stage_files(name)
        _write_json(self.cache / f"{name}.json", {"key": self.key(name), "sha256": sha256_file(pkl),
                                                  "files": self.files[name]})
        return obj

    def ensure(self, name: str, force: bool = False):
        if not force:
            obj = self.load_cached(name)
            if obj is not None:
                self.reused.append(name)
                self.results[name] = obj
                return obj
        log.info("running stage %s", name)
        self.results[name] = self.build(name)
        return self.results[name]

    def run(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        for name in STAGES:
            self.ensure(name)
        self.write_manifest()
        return self.out

    def stage(self, name: str, build_deps: bool = True):
        if name not in REGISTRY:
            raise StageError(name, DataError(f"unknown stage {name!r}; valid stages: {', '.join(STAGES)}"))
        self.out.mkdir(parents=True, exist_ok=True)
        deps = [d for d in _closure(name) if d != name]
        if not build_deps:
            missing = [d for d in deps if self.load_cached(d) is None]
            if missing:
                raise StageError(name, DataError(f"missing cached artifacts: {', '.join(missing)}"))
        for d in deps:
            self.ensure(d)
        return self.ensure(name, force=True)

    def write_manifest(self) -> None:
        manifest = {
            "config_digest": self.cfg.digest(),
            "params": self.cfg.params(),
            "seed": self.cfg.seed,
            "inputs": self.inputs,
            "versions": {"evspace": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__},
            "stages": {n: {"key": self.key(n), "files": self.files.get(n, {})} for n in STAGES},
        }
        blob = json.dumps(manifest, indent=2, sort_keys=True)
        manifest["manifest_hash"] = hashlib.sha256(blob.encode()).hexdigest()
        _write_json(self.out / "manifest.json", manifest)


def run(cfg: PipelineConfig) -> Path:
    return Pipeline(cfg).run()


def stage(name: str, cfg: PipelineConfig, build_deps: bool = True):
    return Pipeline(cfg).stage(name, build_deps)
