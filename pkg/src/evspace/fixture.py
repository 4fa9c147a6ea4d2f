"""Synthetic trade, firm and taxonomy files in the canonical input schemas.

Exports follow a latent-capability model: each product needs a vector of
capabilities and a country exports it in proportion to how well its own
capabilities cover the need. Capabilities drift between the two years so
that some specialisations switch.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import write_config

COUNTRIES = ("DEU", "FRA", "ITA", "ESP", "POL", "CZE", "HUN", "SWE", "AUT", "BEL", "NLD", "SVK",
             "CHN", "USA", "JPN", "KOR", "MEX", "CAN", "GBR", "CHE", "TUR", "IND", "BRA", "THA",
             "VNM", "MYS")
EU_MEMBERS = COUNTRIES[:12]
CHAPTERS = ("28", "29", "38", "39", "40", "48", "61", "62", "70", "71", "72", "73", "74", "76",
            "84", "85", "87", "88", "90", "94")
PRODUCTS_PER_CHAPTER = 12
YEARS = (2012, 2022)
N_CAP = 6
# EV-specific codes: (chapter, slot) pairs inside the generated grid
EV_SLOTS = (("85", 0), ("85", 1), ("85", 2), ("85", 3), ("85", 4), ("85", 5),
            ("87", 0), ("87", 1), ("87", 2), ("84", 0), ("84", 1), ("90", 0))
ICE_SLOTS = (("84", 6), ("84", 7), ("84", 8), ("87", 6), ("87", 7), ("87", 8), ("40", 6), ("73", 6))


def hs_code(chapter: str, slot: int) -> str:
    return f"{chapter}{slot // 4 + 1:02d}{(slot % 4 + 1) * 10:02d}"


def _chapter_profile(rng, n_chapters):
    return rng.uniform(0.0, 1.0, size=(n_chapters, N_CAP))


def generate(seed: int = 7):
    rng = np.random.default_rng(seed)
    products = [hs_code(ch, k) for ch in CHAPTERS for k in range(PRODUCTS_PER_CHAPTER)]
    ch_of = np.repeat(np.arange(len(CHAPTERS)), PRODUCTS_PER_CHAPTER)
    profile = _chapter_profile(rng, len(CHAPTERS))
    need = np.clip(profile[ch_of] + rng.normal(0, 0.18, (len(products), N_CAP)), 0, 1)
    ev = [hs_code(c, k) for c, k in EV_SLOTS]
    ev_idx = [products.index(h) for h in ev]
    need[ev_idx, 0] = np.clip(0.85 + rng.normal(0, 0.05, len(ev_idx)), 0, 1)  # electronics
    base = rng.lognormal(3.0, 1.0, len(products))

    n_c = len(COUNTRIES)
    cap0 = rng.beta(2.0, 2.0, (n_c, N_CAP))
    size = rng.lognormal(2.0, 0.8, n_c)
    drift = rng.normal(0.05, 0.08, (n_c, N_CAP))
    caps = {YEARS[0]: cap0, YEARS[1]: np.clip(cap0 + drift, 0, 1)}

    trade_rows = []
    for year in YEARS:
        gap = np.maximum(need[None, :, :] - caps[year][:, None, :], 0.0)
        fit = np.exp(-8.0 * (gap ** 2).sum(axis=2))
        noise = rng.lognormal(0.0, 0.5, fit.shape)
        X = size[:, None] * base[None, :] * fit * noise
        for i, exp in enumerate(COUNTRIES):
            for j, h in enumerate(products):
                v = X[i, j]
                if v < 0.05:
                    continue
                k = int(rng.integers(1, 5))
                partners = rng.choice([c for c in COUNTRIES if c != exp], size=k, replace=False)
                shares = rng.dirichlet(np.ones(k))
                for imp, sh in zip(partners, shares):
                    val = round(float(v * sh), 3)
                    if val > 0:
                        trade_rows.append((year, exp, str(imp), h, f"{val:.3f}"))
    trade_rows.sort(key=lambda r: r[:4])

    taxonomy_rows, comp_class = _taxonomy(rng, products, ev)
    firm_rows = _firms(rng, comp_class, cap0)
    return trade_rows, taxonomy_rows, firm_rows


def _taxonomy(rng, products, ev):
    ice = [hs_code(c, k) for c, k in ICE_SLOTS]
    other = [p for p in products if p not in set(ev) | set(ice) and p[:2] in
             ("39", "40", "70", "72", "73", "74", "76", "84", "85", "87", "90", "94")]
    rows, comp_class = [], {}

    def add(cid, t1, t2, t3, cls, links):
        rows.append((cid, t1, t2, t3, cls, ";".join(sorted(links))))
        comp_class[cid] = cls

    for i in range(14):
        add(f"ev{i:02d}", "Electrification", "EV Powertrain" if i < 8 else "Battery System",
            f"EV part {i}", "EV", {ev[i % 12], ev[(i + 1) % 12]})
    for i in range(16):
        add(f"ice{i:02d}", "Engine", "Combustion" if i < 8 else "Exhaust & Fuel",
            f"ICE part {i}", "ICE", {ice[i % 8]})
    tiers = ("Chassis", "Body", "Interior", "Electrical")
    for i in range(34):
        t = tiers[i % 4]
        k = int(rng.integers(0, 3))
        links = set(rng.choice(other, size=k, replace=False).tolist()) if k else set()
        if i == 0:
            links.add(ev[0])  # EV code with a non-EV vote that stays EV by majority
        add(f"gen{i:02d}", t, f"{t} group {i % 3}", f"{t} part {i}", "UNSPECIFIC", links)
    return rows, comp_class


FIRM_COUNTS = {"CHN": 40, "DEU": 32, "JPN": 30, "USA": 26, "KOR": 20, "MEX": 16, "FRA": 14,
               "ITA": 14, "ESP": 12, "CZE": 10, "POL": 10, "IND": 12, "GBR": 10, "CAN": 8,
               "HUN": 8, "SWE": 8, "THA": 8, "BRA": 8, "TUR": 8, "SVK": 6, "AUT": 6, "BEL": 4,
               "NLD": 4, "CHE": 4, "VNM": 4, "MYS": 4}


def _firms(rng, comp_class, cap0):
    groups = {
        "EV": [c for c, k in comp_class.items() if k == "EV"],
        "ICE": [c for c, k in comp_class.items() if k == "ICE"],
    }
    gen = [c for c, k in comp_class.items() if k == "UNSPECIFIC"]
    for t in range(4):
        groups[f"G{t}"] = gen[t::4]
    names = list(groups)
    rows = []
    fid = 0
    for ci, country in enumerate(COUNTRIES):
        ev_pref = cap0[ci, 0]
        for _ in range(FIRM_COUNTS[country]):
            w = np.array([0.5 + 2 * ev_pref, 1.5 - ev_pref, 1.0, 1.0, 1.0, 1.0])
            main = names[int(rng.choice(len(names), p=w / w.sum()))]
            pool = groups[main]
            n_main = int(rng.integers(2, min(7, len(pool)) + 1))
            picks = set(rng.choice(pool, size=n_main, replace=False).tolist())
            for _ in range(int(rng.integers(0, 3))):
                other = names[int(rng.integers(0, len(names)))]
                picks.add(str(rng.choice(groups[other])))
            for c in sorted(picks):
                rows.append((f"F{fid:04d}", country, c))
            fid += 1
    return rows


def write_fixture(directory, seed: int = 7, firm_threshold: int = 10) -> Path:
    """Write trade.csv, firms.csv, taxonomy.csv and fixture.cfg; return the config path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    trade, taxonomy, firms = generate(seed)
    with open(d / "trade.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "exporter", "importer", "hs6", "value"])
        w.writerows(trade)
    with open(d / "taxonomy.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component_id", "tier1", "tier2", "tier3", "powertrain_class", "hs6_links"])
        w.writerows(taxonomy)
    with open(d / "firms.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "country", "component_id"])
        w.writerows(firms)
    cfg = d / "fixture.cfg"
    write_config({
        "trade": "trade.csv",
        "firms": "firms.csv",
        "taxonomy": "taxonomy.csv",
        "hs_revision": "HS12",
        "reference_year": YEARS[1],
        "t0": YEARS[0],
        "t1": YEARS[1],
        "top_quantile": 0.25,
        "firm_threshold": firm_threshold,
        "eu_members": EU_MEMBERS,
        "seed": 20240611,
        "out": "out",
        "protocol_scopes": ("sectoral",),
        "sample_k": 12,
    }, cfg)
    return cfg
