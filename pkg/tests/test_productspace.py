import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from evspace.errors import DataError
from evspace.ingest import classify_hs_codes, load_firm_products, load_taxonomy, load_trade
from evspace.productspace import (FIRM, INDUSTRY, build_layers, build_space, pci, proximity,
                                  proximity_min_conditional, write_space)
from evspace.specialization import firm_specialization, from_values, rca_matrix


def test_three_by_three_proximity(three_by_three):
    phi = proximity(three_by_three)
    # ubiquities (2, 3, 2); co(p1,p2)=2, co(p2,p3)=2, co(p1,p3)=1
    assert phi[0, 1] == pytest.approx(2 / 3, abs=1e-15)
    assert phi[1, 2] == pytest.approx(2 / 3, abs=1e-15)
    assert phi[0, 2] == pytest.approx(1 / 2, abs=1e-15)
    assert np.array_equal(phi, phi.T)
    assert (np.diag(phi) == 0).all()


def test_identical_and_disjoint_columns():
    M = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    phi = proximity(M)
    assert phi[0, 1] == 1.0
    assert phi[0, 2] == 0.0 and phi[1, 2] == 0.0


def test_zero_ubiquity_product_has_no_edges():
    M = np.array([[1, 0, 1], [1, 0, 0]])
    phi = proximity(M)
    assert (phi[1] == 0).all() and (phi[:, 1] == 0).all()


binary = arrays(np.int8, st.tuples(st.integers(1, 30), st.integers(1, 40)), elements=st.integers(0, 1))


@settings(max_examples=100, deadline=None)
@given(binary)
def test_two_proximity_formulas_agree(M):
    assert np.allclose(proximity(M), proximity_min_conditional(M), rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(binary, st.randoms(use_true_random=False))
def test_permutation_equivariance(M, rnd):
    rows = list(range(M.shape[0]))
    cols = list(range(M.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    phi = proximity(M)
    phi_perm = proximity(M[np.ix_(rows, cols)])
    assert np.array_equal(phi_perm, phi[np.ix_(cols, cols)])


def _eig_oracle(M):
    """Second eigenvector of M_pp by brute force, standardised with the ubiquity sign rule."""
    M = np.asarray(M, dtype=float)
    kc, kp = M.sum(axis=1), M.sum(axis=0)
    Mpp = ((M / kc[:, None]).T @ M) / kp[:, None]
    w, V = np.linalg.eig(Mpp)
    R = np.real(V[:, np.argsort(-np.real(w))[1]])
    z = (R - R.mean()) / R.std()
    if np.corrcoef(z, -kp)[0, 1] < 0:
        z = -z
    return z


def test_nested_matrix_ranks_by_ubiquity():
    M = np.array([[1, 1, 1, 1],
                  [1, 1, 1, 0],
                  [1, 1, 0, 0],
                  [1, 0, 0, 0]])
    res = pci(M)
    assert (np.diff(res.pci) > 0).all()
    assert np.allclose(res.pci, _eig_oracle(M), rtol=0, atol=1e-8)
    assert res.pci_norm.min() == 0.0 and res.pci_norm.max() == 1.0
    assert not res.flagged.any()


def test_random_block_matches_oracle():
    rng = np.random.default_rng(3)
    M = (rng.random((15, 10)) < 0.45).astype(int)
    M[:, 0] = 1  # connected
    M[0, :] = 1
    assert np.allclose(pci(M).pci, _eig_oracle(M), rtol=0, atol=1e-8)


def test_identical_columns_get_equal_pci():
    M = np.array([[1, 1, 0, 1], [1, 1, 1, 0], [0, 0, 1, 1], [1, 1, 1, 1]])
    r = pci(M)
    assert r.pci[0] == pytest.approx(r.pci[1], abs=1e-9)


def test_identity_matrix_is_degenerate():
    r = pci(np.eye(4))
    assert (r.pci == 0).all()
    assert (r.pci_norm == 1).all()


def test_disconnected_products_are_flagged():
    M = np.array([[1, 1, 0, 0, 0],
                  [1, 0, 0, 0, 0],
                  [0, 1, 1, 0, 0],
                  [0, 0, 0, 1, 0]])
    r = pci(M)
    assert r.flagged.tolist() == [False, False, False, True, True]
    assert r.pci[3] == 0 and r.pci[4] == 0


def test_whole_set_duplication_leaves_pci_unchanged():
    rng = np.random.default_rng(11)
    M = (rng.random((12, 8)) < 0.5).astype(int)
    M[:, 0] = 1
    M[0, :] = 1
    assert np.allclose(pci(M).pci, pci(np.vstack([M, M])).pci, rtol=0, atol=1e-8)


def test_pci_is_seed_independent():
    rng = np.random.default_rng(5)
    M = (rng.random((20, 12)) < 0.4).astype(int)
    M[:, 0] = 1
    assert np.allclose(pci(M, seed=0).pci, pci(M, seed=99).pci, rtol=0, atol=1e-8)


def test_build_space_metadata():
    s = from_values([[5, 1, 0], [1, 5, 2], [2, 2, 9]], ["A", "B", "C"], ["870110", "850110", "870120"])
    sp = build_space(s, INDUSTRY, {"870110": "EV"})
    assert sp.chapter == ("87", "85", "87")
    assert sp.of_class("EV") == ["870110"]
    assert sp.in_chapter("87") == ["870110", "870120"]
    assert sp.chapters() == ["85", "87"]
    with pytest.raises(DataError):
        sp.indices(["999999"])


def test_build_layers_on_fixture(fixture_dir):
    tax = load_taxonomy(fixture_dir / "taxonomy.csv")
    trade = load_trade(fixture_dir / "trade.csv")
    firms = load_firm_products(fixture_dir / "firms.csv", tax)
    layers = build_layers(rca_matrix(trade, 2022), firm_specialization(firms), tax, classify_hs_codes(tax))
    sizes = layers.sizes()
    assert sizes["industry"]["nodes"] >= 200
    assert sizes["industry"]["EV"] == 12
    assert sizes["firm"]["nodes"] == len(tax.components)
    assert sizes["interlayer_links"] == sum(len(c.hs6_links) for c in tax.components.values())
    assert layers.firm.layer == FIRM and layers.firm.chapter[0] is None


def test_write_space(tmp_path, three_by_three):
    s = from_values(three_by_three, ["a", "b", "c"], ["p1", "p2", "p3"], binary_m=True)
    sp = build_space(s, INDUSTRY)
    write_space(sp, tmp_path, "ind")
    with open(tmp_path / "ind_edges.csv", newline="") as fh:
        edges = list(csv.DictReader(fh))
    assert len(edges) == 3
    got = {(e["p"], e["q"]): float(e["phi"]) for e in edges}
    assert got[("p1", "p3")] == 0.5
    with open(tmp_path / "ind_nodes.csv", newline="") as fh:
        assert [r["product"] for r in csv.DictReader(fh)] == ["p1", "p2", "p3"]
