import json
import re
import shutil
import subprocess
import sys
from dataclasses import replace

import pandas as pd
import pytest

from evspace import pipeline
from evspace.cli import main
from evspace.config import load_config
from evspace.errors import ConfigError, StageError


@pytest.fixture(scope="module")
def built(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = load_config(fixture_dir / "fixture.cfg").with_overrides(out=out)
    p = pipeline.Pipeline(cfg.validate())
    p.run()
    return cfg, out


def test_run_writes_every_stage(built):
    cfg, out = built
    for name in pipeline.STAGES:
        assert (out / name / "meta.json").is_file()
        assert not (out / f"{name}.partial").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == cfg.seed
    assert set(manifest["stages"]) == set(pipeline.STAGES)
    gains = pd.read_csv(out / "forecast" / "gains.csv")
    assert list(gains.columns) == ["country", "chapter", "delta_c", "x_std", "delta_p", "n_y",
                                   "n_rel_max", "n_rel_avg"]


def test_output_schemas(built):
    _, out = built
    heads = {
        "regress/results.csv": "scope,chapter,strategy,predictor,coef,se,p,n,converged,seed",
        "concentration/hhi.csv": "importer,hs6,class,hhi,hhi_rel,n_suppliers,rca_flag",
        "potential/potential_industry.csv": "location,target_class,raw,z,n_missing_targets",
    }
    for rel, header in heads.items():
        assert (out / rel).read_text().splitlines()[0] == header
    hhi = pd.read_csv(out / "concentration" / "hhi.csv", dtype={"hs6": str})
    assert "EU" in set(hhi["importer"])


def test_stage_reuses_upstream_caches(built):
    cfg, _ = built
    p = pipeline.Pipeline(cfg)
    p.stage("regress")
    assert {"ingest", "specialization", "productspace"} <= set(p.reused)
    assert "regress" not in p.reused


def test_corrupted_cache_is_rebuilt(built, tmp_path):
    cfg, out = built
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    c2 = cfg.with_overrides(out=copy)
    (copy / ".cache" / "specialization.pkl").write_bytes(b"garbage")
    p = pipeline.Pipeline(c2)
    p.stage("productspace")
    assert "ingest" in p.reused and "specialization" not in p.reused


def test_failed_stage_leaves_no_partial(built, tmp_path, monkeypatch):
    cfg, _ = built
    c2 = cfg.with_overrides(out=tmp_path / "o")

    def boom(cfg, up, out):
        raise ZeroDivisionError("boom")

    st = pipeline.REGISTRY["ingest"]
    monkeypatch.setitem(pipeline.REGISTRY, "ingest", replace(st, fn=boom))
    with pytest.raises(StageError) as ei:
        pipeline.Pipeline(c2).stage("ingest")
    assert ei.value.exit_code == 4
    assert not (tmp_path / "o" / "ingest.partial").exists()
    assert not (tmp_path / "o" / "ingest").exists()


def test_manifest_hash_depends_only_on_content(built, tmp_path):
    cfg, out = built
    m1 = json.loads((out / "manifest.json").read_text())["manifest_hash"]
    p = pipeline.Pipeline(cfg)
    p.run()
    assert set(p.reused) == set(pipeline.STAGES)
    assert json.loads((out / "manifest.json").read_text())["manifest_hash"] == m1


def test_validate_config_rejects_bad_horizon(fixture_dir, tmp_path, capsys):
    text = (fixture_dir / "fixture.cfg").read_text()
    bad = tmp_path / "bad.cfg"
    bad.write_text(re.sub(r"(?m)^t0 = .*$", "t0 = 2030", text).replace("= trade.csv", f"= {fixture_dir}/trade.csv")
                   .replace("= firms.csv", f"= {fixture_dir}/firms.csv")
                   .replace("= taxonomy.csv", f"= {fixture_dir}/taxonomy.csv"))
    assert main(["validate-config", "--config", str(bad)]) == 2
    assert "t0 < t1" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("[pipeline]\ntrade = a\nfirms = b\ntaxonomy = c\ncolour = red\n")
    with pytest.raises(ConfigError, match="colour"):
        load_config(p)
    assert main(["validate-config", "--config", str(p)]) == 2


def test_validate_config_ok(fixture_dir, capsys):
    assert main(["validate-config", "--config", str(fixture_dir / "fixture.cfg")]) == 0
    assert capsys.readouterr().out.startswith("ok ")


def test_unknown_stage(fixture_dir, tmp_path, capsys):
    rc = main(["stage", "plotting", "--config", str(fixture_dir / "fixture.cfg"), "--out", str(tmp_path)])
    assert rc == 3
    assert "valid stages" in capsys.readouterr().err


def test_no_build_deps_without_caches(fixture_dir, tmp_path, capsys):
    rc = main(["stage", "regress", "--no-build-deps", "--config", str(fixture_dir / "fixture.cfg"),
               "--out", str(tmp_path)])
    assert rc == 3
    assert "missing cached artifacts" in capsys.readouterr().err


def test_fixture_subcommand(tmp_path):
    assert main(["fixture", str(tmp_path / "fx")]) == 0
    for f in ("trade.csv", "firms.csv", "taxonomy.csv", "fixture.cfg"):
        assert (tmp_path / "fx" / f).is_file()
    load_config(tmp_path / "fx" / "fixture.cfg").validate()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "evspace", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "validate-config" in r.stdout


def test_inline_comments_in_config(fixture_dir, tmp_path):
    for f in ("trade.csv", "firms.csv", "taxonomy.csv"):
        shutil.copy(fixture_dir / f, tmp_path / f)
    p = tmp_path / "c.cfg"
    p.write_text("[pipeline]\ntrade = trade.csv   ; flows\nfirms = firms.csv\ntaxonomy = taxonomy.csv\n"
                 "closeness_mode = advantages  ; prose variant\n")
    cfg = load_config(p).validate()
    assert cfg.trade == tmp_path / "trade.csv" and cfg.closeness_mode == "advantages"
