import math
from itertools import combinations

import numpy as np
import pytest

from eonblock.approx import (
    AcceptanceModel, LinkModels, departure_rates, fixed_point, network_blocking,
    p_accept_ees, p_accept_route, p_accept_soc, p_accept_uniform_link_sc,
    p_accept_uniform_route, reduced_gbe_solve, setup_rates, soc_array, uniform_overlap_pmf,
    valid_occupancies, _ratio_arrays,
)
from eonblock.spectrum import largest_free_block
from oracles import nested_oracle
from eonblock.statecount import binom, ff_count_table, rf_count_table
from eonblock.topologies import single_link, two_link

RF7 = rf_count_table(7, (3, 4))


def test_ees_examples():
    assert p_accept_ees(RF7, 3, 1) == pytest.approx(2 / 5)
    assert p_accept_ees(RF7, 3, 0) == pytest.approx(4 / 5)
    assert p_accept_ees(RF7, 0, 1) == 1.0
    assert p_accept_ees(ff_count_table(7, (3, 4)), 3, 1) == pytest.approx(2 / 3)


def test_soc_examples():
    assert p_accept_soc(RF7, 3, 1, 3.0) == pytest.approx(1.0)
    assert p_accept_soc(RF7, 0, 1, 2.5) == 1.0
    assert p_accept_soc(RF7, 4, 1, 2.5) == 0.0
    assert p_accept_soc(RF7, 6, 0, 2.5) == 0.0
    # below the mean the fragmented share is discounted less than far above it
    low = p_accept_soc(RF7, 3, 1, 3.5)
    assert 2 / 5 < low < 1


def test_soc_equals_ees_without_fragmentation():
    table = rf_count_table(6, (6,))
    nb, fb = _ratio_arrays(table)
    assert np.array_equal(soc_array(nb, fb, 2.0), nb)


def test_departure_rate_examples():
    g = departure_rates(10, (3, 4), (1.0, 2.0))
    assert g[0, 6] == 2.0 and g[1, 6] == 0.0
    assert g[0, 7] == 1.0 and g[1, 7] == 2.0
    g = departure_rates(12, (3, 4), (1.0, 1.0))
    assert g[0, 12] == pytest.approx(2.0)
    assert g[1, 12] == pytest.approx(1.5)


def test_gbe_balance_at_three_slices():
    lam1, lam2, mu1, mu2 = 0.7, 0.4, 1.0, 1.3
    C, widths = 7, (3, 4)
    alpha = np.array([[lam1 * p_accept_ees(RF7, x, 0) for x in range(C + 1)],
                      [lam2 * p_accept_ees(RF7, x, 1) for x in range(C + 1)]])
    gamma = departure_rates(C, widths, (mu1, mu2))
    pi = reduced_gbe_solve(alpha, gamma, widths)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    lhs = (4 / 5 * lam1 + 2 / 5 * lam2 + mu1) * pi[3]
    rhs = lam1 * pi[0] + 2 * mu1 * pi[6] + mu2 * pi[7]
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert valid_occupancies(C, widths) == [0, 3, 4, 6, 7]
    assert pi[[1, 2, 5]].sum() == 0.0


def test_gbe_zero_load():
    widths = (3, 4)
    pi = reduced_gbe_solve(np.zeros((2, 8)), departure_rates(7, widths, (1, 1)), widths)
    assert pi[0] == pytest.approx(1.0)


def test_uniform_link_against_brute_force():
    C, d = 7, 3
    for x in range(C + 1):
        good = sum(
            largest_free_block([1 if i in occ else 0 for i in range(C)]) >= d
            for occ in combinations(range(C), x)
        )
        assert p_accept_uniform_link_sc(x, 0, C, (d,)) == pytest.approx(good / math.comb(C, x))
    assert p_accept_uniform_link_sc(0, 0, C, (d,)) == 1.0
    assert p_accept_uniform_link_sc(C, 0, C, (d,)) == 0.0


def test_overlap_pmf():
    C = 7
    pmf = uniform_overlap_pmf([3], C)
    assert pmf[4] == 1.0 and pmf.sum() == 1.0
    for y in range(C + 1):
        pmf = uniform_overlap_pmf([0, y], C)
        assert pmf[C - y] == pytest.approx(1.0)
    for x, y in [(2, 3), (4, 1), (5, 5)]:
        pmf = uniform_overlap_pmf([x, y], C)
        direct = [binom(C - x, n) * binom(x, C - y - n) / binom(C, C - y) for n in range(C + 1)]
        assert np.allclose(pmf, direct, atol=1e-14)
    pmf = uniform_overlap_pmf([2, 5, 1, 3], 10)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_uniform_route_single_hop_matches_link_form():
    for x in range(11):
        assert p_accept_uniform_route([x], 1, 10, (3, 4)) == pytest.approx(
            p_accept_uniform_link_sc(x, 1, 10, (3, 4)), abs=1e-14)


def test_route_products():
    assert p_accept_route([3], [2.0], 1, "ees", False, RF7) == pytest.approx(2 / 5)
    assert p_accept_route([0, 0], [2.0, 2.0], 1, "ees", False, RF7) == 1.0
    assert p_accept_route([0, 0], [2.0, 2.0], 1, "soc", True, RF7) == 1.0
    assert p_accept_route([3, 3], [2.0, 2.0], 1, "ees", False, RF7) == pytest.approx(0.0256)
    assert p_accept_route([3, 3], [2.0, 2.0], 1, "ees", True, RF7) == pytest.approx(0.16)


def test_single_link_setup_rates():
    cfg = single_link(7, (3, 4), 1.0)
    model = AcceptanceModel(cfg, "ees")
    pi = np.full((1, 8), 1 / 8)
    alpha = setup_rates(model, LinkModels(pi, np.array([3.0])))
    lam1, lam2 = cfg.od_pairs[0].arrival_rates
    assert alpha[0, 0, 3] == pytest.approx(4 / 5 * lam1)
    assert alpha[0, 1, 3] == pytest.approx(2 / 5 * lam2)
    assert np.all(alpha[0, 1, 4:] == 0) and np.all(alpha[0, 0, 5:] == 0)


@pytest.mark.parametrize("variant", ["ees", "soc", "uniform"])
@pytest.mark.parametrize("mode", ["rf", "rf-sc", "ff", "ff-sc"])
@pytest.mark.parametrize("C, widths", [(7, (3, 4)), (10, (2, 3, 5))])
def test_factorized_matches_nested_sum(variant, mode, C, widths):
    cfg = two_link(C, widths, 0.8, mode)
    model = AcceptanceModel(cfg, variant)
    rng = np.random.default_rng(C + len(widths))
    pi = rng.random((2, C + 1))
    pi /= pi.sum(axis=1, keepdims=True)
    links = LinkModels(pi, pi @ np.arange(C + 1))
    alpha, bp = nested_oracle(model, links)
    assert np.abs(setup_rates(model, links) - alpha).max() < 1e-12
    assert np.abs(network_blocking(model, links)[0] - bp).max() < 1e-12


def test_zero_load_fixed_point():
    for variant in ("ees", "soc", "uniform"):
        rep = fixed_point(two_link(10, (3, 4), 0.0), variant)
        assert rep.converged and rep.iterations <= 2
        assert rep.overall == 0.0
        assert np.all(np.asarray(rep.bp) == 0.0)


def test_fixed_point_invariants():
    rep = fixed_point(two_link(10, (3, 4), 1.5, "rf"), "soc")
    assert rep.converged and rep.max_delta < 1e-6
    assert np.allclose(rep.pi.sum(axis=1), 1.0, atol=1e-10)
    assert np.all((rep.xbar >= 0) & (rep.xbar <= 10))
    again = fixed_point(two_link(10, (3, 4), 1.5, "rf"), "soc")
    assert again.bp == rep.bp


def test_single_link_ees_and_soc_at_low_load():
    cfg = single_link(10, (3, 4), 0.1)
    assert fixed_point(cfg, "ees").overall == pytest.approx(6.8e-3, abs=1e-4)
    assert fixed_point(cfg, "soc").overall == pytest.approx(2.7e-3, abs=1e-4)
