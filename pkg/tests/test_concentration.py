import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from evspace.concentration import eu_hhi, hhi, hhi_table, importer_hhi, normalize_hhi
from evspace.errors import DataError
from evspace.ingest import IngestReport, TradeTable


def table(rows, year=2022):
    df = pd.DataFrame([(year, *r) for r in rows], columns=["year", "exporter", "importer", "hs6", "value"])
    return TradeTable(df, "HS12", IngestReport("mem"))


@pytest.mark.parametrize("values, expected", [([7.0], 1.0), ([3.0, 3.0], 0.5), ([0.5, 0.3, 0.2], 0.38),
                                              ([60.0, 40.0], 0.52)])
def test_hand_values(values, expected):
    assert hhi(values) == expected


def test_zero_total_is_nan():
    assert math.isnan(hhi([0.0, 0.0]))


def test_importer_lookup():
    t = table([("CHN", "DEU", "850760", 5.0), ("KOR", "DEU", "850760", 5.0), ("CHN", "FRA", "850760", 1.0)])
    assert importer_hhi(t, 2022, "DEU", "850760") == 0.5
    out = hhi_table(t, 2022)
    assert out[["importer", "n_suppliers"]].values.tolist() == [["DEU", 2], ["FRA", 1]]


def test_normalization():
    rel = normalize_hhi(pd.DataFrame({"hhi": [0.4, 0.8]}))["hhi_rel"]
    assert rel.tolist() == pytest.approx([2 / 3, 4 / 3], abs=1e-15)
    assert (normalize_hhi(pd.DataFrame({"hhi": [0.3] * 4}))["hhi_rel"] == 1.0).all()
    with pytest.raises(DataError):
        normalize_hhi(pd.DataFrame({"hhi": []}))


def test_normalized_mean_is_one():
    rng = np.random.default_rng(0)
    rel = normalize_hhi(pd.DataFrame({"hhi": rng.random(50)}))["hhi_rel"]
    assert rel.mean() == pytest.approx(1.0, abs=1e-12)


def test_eu_cases():
    members = ["DEU", "FRA"]
    same = table([("CHN", "DEU", "850760", 50.0), ("CHN", "FRA", "850760", 50.0)])
    assert eu_hhi(same, 2022, members)["hhi"].tolist() == [1.0]
    internal = table([("DEU", "FRA", "850760", 50.0), ("FRA", "DEU", "850760", 20.0)])
    assert eu_hhi(internal, 2022, members).empty
    pooled = table([("CHN", "DEU", "850760", 60.0), ("USA", "FRA", "850760", 40.0),
                    ("FRA", "DEU", "850760", 999.0)])
    out = eu_hhi(pooled, 2022, members)
    assert out["importer"].tolist() == ["EU"]
    assert out["hhi"].tolist() == [0.52]
    with pytest.raises(DataError):
        eu_hhi(pooled, 2022, [])


def test_single_member_equals_external_hhi():
    t = table([("CHN", "DEU", "850760", 6.0), ("USA", "DEU", "850760", 3.0), ("KOR", "DEU", "850760", 1.0)])
    assert eu_hhi(t, 2022, ["DEU"])["hhi"].iloc[0] == importer_hhi(t, 2022, "DEU", "850760")


shares = st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=30)


@settings(max_examples=300, deadline=None)
@given(shares)
def test_bounds(v):
    h = hhi(v)
    assert 1 / len(v) - 1e-12 <= h <= 1 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=30), st.data())
def test_merge_monotone(v, data):
    i, j = data.draw(st.lists(st.integers(0, len(v) - 1), min_size=2, max_size=2, unique=True))
    merged = [x for k, x in enumerate(v) if k not in (i, j)] + [v[i] + v[j]]
    assert hhi(merged) >= hhi(v) - 1e-12


@settings(max_examples=200, deadline=None)
@given(shares, st.floats(1e-3, 1e3))
def test_scaling(v, k):
    assert hhi(np.array(v) * k) == pytest.approx(hhi(v), abs=1e-12)
