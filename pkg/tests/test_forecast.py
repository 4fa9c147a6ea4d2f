import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from evspace.errors import NumericalError
from evspace.forecast import (EV_RELEVANT_CHAPTERS, GAIN_COLUMNS, delta_closeness, expected_gain,
                              expected_gains, normalize_gains)


def test_delta_closeness_cases():
    assert delta_closeness({"85": 2.0, "87": 4.0}) == {"85": -1.0, "87": 1.0}
    assert delta_closeness({"87": 3.0}) == {"87": 0.0}
    d = delta_closeness({"40": 0.3, "85": 1.7, "87": 0.9, "76": 2.2})
    assert sum(d.values()) == pytest.approx(0.0, abs=1e-15)
    assert delta_closeness({}) == {}


def test_zero_shift_gives_zero_gain():
    g = expected_gain(0.0, 0.7, 0.418, -1.3, 9)
    assert g["delta_p"] == 0.0 and g["n_y"] == 0.0


def test_closed_form_at_one_sigma():
    sigma, b0 = 0.23, -1.7
    g = expected_gain(sigma, sigma, 0.418, b0, 10)
    direct = 1 / (1 + np.exp(-(0.418 + b0))) - 1 / (1 + np.exp(-b0))
    assert g["x_std"] == 1.0
    assert g["delta_p"] == pytest.approx(direct, abs=1e-15)
    assert g["n_y"] == pytest.approx(10 * direct, abs=1e-14)


def test_degenerate_sigma_is_fatal():
    with pytest.raises(NumericalError):
        expected_gain(0.1, 0.0, 0.4, 0.0, 3)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 3), st.floats(-4, 4), st.floats(-2, 2), st.floats(0.001, 2))
def test_monotone_in_delta_c(beta, b0, dc, step):
    a = expected_gain(dc, 1.0, beta, b0, 5)["n_y"]
    b = expected_gain(dc + step, 1.0, beta, b0, 5)["n_y"]
    assert b > a or np.isclose(a, b, rtol=0, atol=1e-15)


@pytest.mark.parametrize("x", [1e-4, -5e-4, 9e-4])
def test_small_shift_linearization(x):
    beta, b0 = 0.418, -1.2
    dp = expected_gain(x, 1.0, beta, b0, 1)["delta_p"]
    lin = expit(b0) * (1 - expit(b0)) * beta * x
    assert abs(dp - lin) / abs(lin) < 0.01


def test_normalizations():
    gains = expected_gains({"A": {"87": 2.0, "85": -1.0, "71": -1.0}}, 1.0, 0.5, -1.0, {"A": 6})
    out = normalize_gains(gains)
    assert list(out.columns) == GAIN_COLUMNS
    assert np.abs(out["n_rel_max"]).max() == 1.0
    rel = out[out["chapter"].isin(EV_RELEVANT_CHAPTERS)]
    avg = rel["n_y"].mean()
    assert np.allclose(out["n_rel_avg"], out["n_y"] / avg, rtol=0, atol=1e-15)


def test_single_chapter_and_uniform_gains():
    one = normalize_gains(pd.DataFrame({"country": ["A"], "chapter": ["87"], "delta_c": [1.0], "x_std": [1.0],
                                        "delta_p": [0.1], "n_y": [0.4]}))
    assert one["n_rel_max"].tolist() == [1.0]
    flat = normalize_gains(pd.DataFrame({"country": ["A"] * 3, "chapter": ["87", "85", "40"],
                                         "delta_c": [1.0] * 3, "x_std": [1.0] * 3,
                                         "delta_p": [0.1] * 3, "n_y": [0.3] * 3}))
    assert flat["n_rel_avg"].tolist() == [1.0, 1.0, 1.0]


def test_zero_denominators_leave_nan():
    zero = normalize_gains(pd.DataFrame({"country": ["A", "A"], "chapter": ["87", "85"], "delta_c": [0.0, 0.0],
                                         "x_std": [0.0, 0.0], "delta_p": [0.0, 0.0], "n_y": [0.0, 0.0]}))
    assert zero["n_rel_max"].isna().all() and zero["n_rel_avg"].isna().all()


def test_vehicles_chapter_is_in_list():
    assert "87" in EV_RELEVANT_CHAPTERS and "78" not in EV_RELEVANT_CHAPTERS
    assert len(EV_RELEVANT_CHAPTERS) == 18
