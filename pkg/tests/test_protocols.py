import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import parallel_network
from swapdyn.network import NetworkError, build_network
from swapdyn.protocols import (
    ProtocolError,
    ProtocolParams,
    Variant,
    candidate_set,
    npsd_block,
    npsd_rate,
    pap_block,
    pap_kappa_he,
    pap_rate_fixed,
    route_candidates,
    smith_wisten_kappa_bound,
    swap_matrix,
)

# 0.5 * (1 - exp(-0.5)) and 0.5 * (1 - exp(-0.4)), evaluated with mpmath at 40 digits
NPSD_HALF_OF_05 = 0.196734670143683288198100232504409773279
NPSD_HALF_OF_04 = 0.1648399769821803496277835374260869640315

cost_vectors = st.lists(st.floats(0.0, 200.0), min_size=1, max_size=9).map(np.array)
thetas = st.floats(1e-6, 50.0)


def one_od(n, demand=90.0):
    links = [(f"l{i}", 1.0, 10.0) for i in range(n)]
    routes = [(f"r{i}", "w", [f"l{i}"]) for i in range(n)]
    return build_network(links, [("w", demand)], routes)


# candidate sets


def test_candidates_of_unique_minimum_empty():
    assert candidate_set(1, np.array([10.0, 8.0, 9.0])).size == 0


def test_candidates_strictly_cheaper():
    assert list(candidate_set(0, np.array([10.0, 8.0, 8.0, 12.0]))) == [1, 2]


def test_equal_cost_is_not_a_candidate():
    assert candidate_set(0, np.array([10.0, 10.0])).size == 0


def test_candidates_epsilon():
    c = np.array([10.0, 10.0 - 1e-12, 9.0])
    assert list(candidate_set(0, c)) == [1, 2]
    assert list(candidate_set(0, c, epsilon=1e-9)) == [2]


def test_candidates_bad_index():
    with pytest.raises(IndexError):
        candidate_set(3, np.array([1.0, 2.0]))


def test_route_candidates_by_id(example):
    costs = np.array([10.0, 8.0, 8.0, 12.0, 1.0, 1.0, 1.0, 1.0])
    assert route_candidates(example, "1", costs) == {"2", "3"}
    # routes of the other OD pair are never candidates
    assert route_candidates(example, "4", costs) == {"1", "2", "3"}
    with pytest.raises(NetworkError):
        route_candidates(example, "99", costs)


# rates


def test_npsd_rate_zero_when_not_cheaper():
    c = np.array([10.0, 12.0])
    assert npsd_rate(0, 1, c, 0.1) == 0.0
    assert npsd_rate(0, 0, c, 0.1) == 0.0


def test_npsd_rate_value():
    # two candidates, so |R_k| = 2
    c = np.array([15.0, 10.0, 10.0])
    assert math.isclose(npsd_rate(0, 1, c, 0.1), NPSD_HALF_OF_05, rel_tol=1e-15)


def test_npsd_rate_large_theta_saturates():
    c = np.array([20.0, 10.0])
    assert npsd_rate(0, 1, c, 1e6) == 1.0
    assert npsd_rate(0, 1, c, 1e3) <= 1.0


def test_npsd_rate_rejects_bad_theta():
    with pytest.raises(ProtocolError):
        npsd_rate(0, 1, np.array([2.0, 1.0]), 0.0)


def test_pap_fixed_values():
    c = np.array([15.0, 10.0])
    assert pap_rate_fixed(1, 0, c, 0.01) == 0.0
    assert math.isclose(pap_rate_fixed(0, 1, c, 0.01), 0.05, rel_tol=1e-15)
    assert pap_rate_fixed(0, 1, c, 0.5) == 2.5
    with pytest.raises(ProtocolError):
        pap_rate_fixed(0, 1, c, -1.0)


def test_smith_wisten_bound(example):
    assert smith_wisten_kappa_bound(example, 20.0) == 1 / 160
    assert smith_wisten_kappa_bound(1, 1.0) == 1.0
    assert smith_wisten_kappa_bound(16, 20.0) == smith_wisten_kappa_bound(8, 20.0) / 2
    with pytest.raises(ProtocolError):
        smith_wisten_kappa_bound(example, 0.0)


def test_he_kappa():
    assert pap_kappa_he(np.array([7.0, 7.0, 7.0]), 2.0) == 0.5
    assert pap_kappa_he(np.array([10.0, 8.0]), 2.0) == 0.25
    c = np.array([10.0, 8.0, 13.0])
    assert pap_kappa_he(c, 3.0) < pap_kappa_he(c, 2.0)
    with pytest.raises(ProtocolError):
        pap_kappa_he(c, 0.0)


# params


def test_params_invariants():
    with pytest.raises(ProtocolError):
        ProtocolParams(theta=0.0)
    with pytest.raises(ProtocolError):
        ProtocolParams(theta={"a": 0.1, "b": -1})
    with pytest.raises(ProtocolError):
        ProtocolParams(variant="pap_fixed")
    with pytest.raises(ProtocolError):
        ProtocolParams(variant="pap_he", reluctance=0.0)
    with pytest.raises(ProtocolError):
        ProtocolParams(cost_epsilon=-1.0)
    with pytest.raises(ValueError):
        ProtocolParams(variant="bnn")


def test_params_round_trip():
    for p in (
        ProtocolParams(theta={"1-11": 0.2, "2-12": 0.3}),
        ProtocolParams(variant=Variant.PAP_FIXED, kappa=0.01),
        ProtocolParams(variant=Variant.PAP_HE, reluctance=2.0, cost_epsilon=1e-9),
    ):
        assert ProtocolParams.from_dict(p.to_dict()) == p


def test_theta_per_od():
    p = ProtocolParams(theta={"w": 0.3})
    assert p.theta_for("w") == 0.3
    with pytest.raises(ProtocolError):
        p.theta_for("other")


# swap matrices


def test_swap_matrix_three_routes():
    rho = swap_matrix(one_od(3), np.array([12.0, 10.0, 10.0]), ProtocolParams(theta=0.2))
    blk = rho.block("w")
    assert blk[0, 0] == 0.0
    for p in (1, 2):
        assert math.isclose(blk[0, p], NPSD_HALF_OF_04, rel_tol=1e-15)
    assert np.all(blk[1:] == 0.0)
    assert math.isclose(rho.outflow[0], 2 * NPSD_HALF_OF_04, rel_tol=1e-14)
    assert rho.violations(np.array([12.0, 10.0, 10.0])) == []


@pytest.mark.parametrize(
    "params",
    [
        ProtocolParams(theta=0.3),
        ProtocolParams(variant="pap_fixed", kappa=0.01),
        ProtocolParams(variant="pap_he", reluctance=1.0),
    ],
)
def test_equal_costs_give_zero_block(params, example):
    rho = swap_matrix(example, np.full(8, 12.0), params)
    assert np.all(rho.dense() == 0.0)
    assert np.all(rho.outflow == 0.0)


def test_pap_over_swapping_flagged_not_clamped():
    net = parallel_network()
    costs = np.array([15.0, 10.0])
    rho = swap_matrix(net, costs, ProtocolParams(variant="pap_fixed", kappa=0.5))
    assert rho.block("w")[0, 1] == 2.5
    assert rho.over_swapping_routes() == ["r1"]
    assert any("over-swapping" in v for v in rho.violations(costs))


def test_swap_matrix_is_block_diagonal(example, reference):
    costs = np.array([14.0, 12.0, 11.0, 13.0, 9.0, 15.0, 10.0, 10.5])
    rho = swap_matrix(example, costs, ProtocolParams(theta=0.1))
    dense = rho.dense()
    assert np.all(dense[:4, 4:] == 0.0) and np.all(dense[4:, :4] == 0.0)
    np.testing.assert_allclose(dense.sum(axis=1), rho.outflow, rtol=1e-14, atol=1e-17)


def test_swap_matrix_checks_shape(example):
    with pytest.raises(NetworkError):
        swap_matrix(example, np.ones(3), ProtocolParams())


def test_swap_matrix_is_read_only(example):
    rho = swap_matrix(example, np.arange(8.0), ProtocolParams())
    with pytest.raises(ValueError):
        rho.blocks[0][0, 0] = 1.0


# properties


@settings(max_examples=300, deadline=None)
@given(c=cost_vectors, theta=thetas)
def test_npsd_rows_never_over_swap(c, theta):
    blk, out = npsd_block(c, theta)
    assert np.all(blk >= 0) and np.all(blk <= 1)
    assert np.all(np.diag(blk) == 0)
    assert np.all(out >= 0) and np.all(out <= 1)
    assert np.all(blk.sum(axis=1) <= 1 + 1e-15)


@settings(max_examples=300, deadline=None)
@given(c=cost_vectors, theta=thetas)
def test_npsd_contrary_sign(c, theta):
    blk, _ = npsd_block(c, theta)
    assert np.all(blk * (c[:, None] - c[None, :]) >= 0)


@settings(max_examples=200, deadline=None)
@given(base=st.floats(1, 100), d1=st.floats(0.01, 40), extra=st.floats(0.01, 40), theta=thetas)
def test_npsd_rate_increasing_in_cost_gap(base, d1, extra, theta):
    small = npsd_rate(0, 1, np.array([base + d1, base]), theta)
    large = npsd_rate(0, 1, np.array([base + d1 + extra, base]), theta)
    assert large >= small
    if theta * (d1 + extra) < 30:
        assert large > small


@settings(max_examples=200, deadline=None)
@given(dc=st.floats(0.01, 40), t1=st.floats(1e-4, 5), factor=st.floats(1.01, 10))
def test_npsd_rate_increasing_in_theta(dc, t1, factor):
    c = np.array([10.0 + dc, 10.0])
    lo, hi = npsd_rate(0, 1, c, t1), npsd_rate(0, 1, c, t1 * factor)
    assert hi >= lo
    if t1 * factor * dc < 30:
        assert hi > lo


@settings(max_examples=300, deadline=None)
@given(data=st.data(), bound=st.floats(1.0, 100.0), m=st.integers(1, 9))
def test_pap_with_smith_wisten_kappa_never_over_swaps(data, bound, m):
    c = np.array(data.draw(st.lists(st.floats(1e-6, bound), min_size=m, max_size=m)))
    kappa = smith_wisten_kappa_bound(m, bound)
    blk, out = pap_block(c, kappa)
    assert np.all(out <= 1.0)
    assert np.all(blk * (c[:, None] - c[None, :]) >= 0)
