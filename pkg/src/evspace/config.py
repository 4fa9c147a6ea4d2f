"""Pipeline configuration: one ``[pipeline]`` section of ``key = value`` lines."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .forecast import EV_RELEVANT_CHAPTERS
from .ingest import HS_REVISIONS

EU27 = ("AUT", "BEL", "BGR", "HRV", "CYP", "CZE", "DNK", "EST", "FIN", "FRA", "DEU", "GRC", "HUN",
        "IRL", "ITA", "LVA", "LTU", "LUX", "MLT", "NLD", "POL", "PRT", "ROU", "SVK", "SVN", "ESP",
        "SWE")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.replace("\n", ",").split(",") if x.strip())


@dataclass(frozen=True)
class PipelineConfig:
    trade: Path
    firms: Path
    taxonomy: Path
    aliases: Path | None = None
    hs_revision: str = "HS12"
    reference_year: int = 2022
    t0: int = 2012
    t1: int = 2022
    top_quantile: float = 0.25
    firm_threshold: int = 150
    ev_relevant_chapters: tuple[str, ...] = EV_RELEVANT_CHAPTERS
    eu_members: tuple[str, ...] = EU27
    seed: int = 0
    out: Path = Path("out")
    protocol_scopes: tuple[str, ...] = ("sectoral",)
    protocol_chapters: tuple[str, ...] = ()
    sample_k: int = 12
    firm_layer_mode: str = "rca"
    closeness_mode: str = "reachable"
    jobs: int = 1
    source: Path | None = field(default=None, compare=False)

    def validate(self) -> "PipelineConfig":
        if not self.t0 < self.t1:
            raise ConfigError(f"switch horizon needs t0 < t1 (got {self.t0} >= {self.t1})")
        if not 0 < self.top_quantile <= 1:
            raise ConfigError(f"top_quantile must lie in (0, 1], got {self.top_quantile}")
        if self.hs_revision not in HS_REVISIONS:
            raise ConfigError(f"unknown hs_revision {self.hs_revision!r}")
        if self.firm_threshold < 0:
            raise ConfigError("firm_threshold must be nonnegative")
        if self.sample_k < 1:
            raise ConfigError("sample_k must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        bad = [s for s in self.protocol_scopes if s not in ("sectoral", "full")]
        if bad or not self.protocol_scopes:
            raise ConfigError(f"protocol_scopes must be drawn from sectoral, full (got {bad})")
        if self.firm_layer_mode not in ("rca", "binary"):
            raise ConfigError("firm_layer_mode must be 'rca' or 'binary'")
        if self.closeness_mode not in ("reachable", "advantages"):
            raise ConfigError("closeness_mode must be 'reachable' or 'advantages'")
        for ch in self.ev_relevant_chapters + self.protocol_chapters:
            if not (len(ch) == 2 and ch.isdigit()):
                raise ConfigError(f"bad HS chapter {ch!r}")
        for p in (self.trade, self.firms, self.taxonomy) + ((self.aliases,) if self.aliases else ()):
            if not Path(p).is_file():
                raise ConfigError(f"input file not found: {p}")
        return self

    def params(self) -> dict:
        """Settings that affect results (paths and job count excluded)."""
        d = asdict(self)
        for k in ("trade", "firms", "taxonomy", "aliases", "out", "jobs", "source"):
            d.pop(k)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.params(), sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


_INT = ("reference_year", "t0", "t1", "firm_threshold", "seed", "sample_k", "jobs")
_FLOAT = ("top_quantile",)
_LIST = ("ev_relevant_chapters", "eu_members", "protocol_scopes", "protocol_chapters")
_PATH = ("trade", "firms", "taxonomy", "aliases", "out")
_STR = ("hs_revision", "firm_layer_mode", "closeness_mode")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "pipeline" not in cp:
        raise ConfigError(f"{path}: missing [pipeline] section")
    sec = cp["pipeline"]
    known = set(_INT + _FLOAT + _LIST + _PATH + _STR)
    unknown = sorted(set(sec) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    for req in ("trade", "firms", "taxonomy"):
        if not sec.get(req, "").strip():
            raise ConfigError(f"{path}: missing required key {req!r}")
    base = path.parent
    kw: dict = {"source": path}
    try:
        for k in sec:
            raw = sec[k].strip()
            if k in _INT:
                kw[k] = int(raw)
            elif k in _FLOAT:
                kw[k] = float(raw)
            elif k in _LIST:
                kw[k] = _csv_list(raw)
            elif k in _PATH:
                if raw:
                    p = Path(raw)
                    kw[k] = p if p.is_absolute() else base / p
            else:
                kw[k] = raw
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "ev_relevant_chapters" in kw:
        kw["ev_relevant_chapters"] = tuple(f"{int(c):02d}" if c.isdigit() else c
                                           for c in kw["ev_relevant_chapters"])
    return PipelineConfig(**kw)


def write_config(cfg_values: dict, path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp["pipeline"] = {k: (", ".join(v) if isinstance(v, (list, tuple)) else str(v))
                      for k, v in cfg_values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
