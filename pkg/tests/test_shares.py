import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demand_forge.errors import DomainError
from demand_forge.shares import (
    MarketSnapshot, UtilityParams, invert_shares, quantity_shares, share_price_jacobian, shares_from_utilities,
    stacked_shares, utility_jacobian
)

from conftest import random_market
from oracles import central_jacobian, logit_shares, nested_logit_shares


def snapshot(delta, groups=None, prices=None, firms=None):
    n = len(delta)
    return MarketSnapshot([f'P{j}' for j in range(n)], np.ones(n) if prices is None else np.asarray(prices, float),
                          np.asarray(delta, float), groups or ['g'] * n, firms or [f'f{j}' for j in range(n)])


def test_single_product_symmetric_point():
    result = shares_from_utilities(snapshot([0.0]), UtilityParams(-1.0, 0.0))
    assert result.shares[0] == pytest.approx(0.5, abs=1e-15)
    assert result.outside[0] == pytest.approx(0.5, abs=1e-15)


def test_two_products_logit():
    result = shares_from_utilities(snapshot([0.0, 0.0]), UtilityParams(-1.0, 0.0))
    np.testing.assert_allclose(result.shares, [1 / 3, 1 / 3], atol=1e-15)


def test_two_products_nested():
    result = shares_from_utilities(snapshot([0.0, 0.0]), UtilityParams(-1.0, 0.5))
    np.testing.assert_allclose(result.within, [0.5, 0.5], atol=1e-15)
    assert result.group[0] == pytest.approx(2 ** 0.5 / (1 + 2 ** 0.5), abs=1e-12)
    assert result.group[0] == pytest.approx(0.585786, abs=1e-6)
    np.testing.assert_allclose(result.shares, 0.292893, atol=1e-6)
    np.testing.assert_allclose(invert_shares(result.shares, result.within, result.outside[0], 0.5), 0, atol=1e-10)


def test_inversion_closed_form():
    assert invert_shares([0.25], [1.0], 0.5, 0.0)[0] == pytest.approx(np.log(0.5), abs=1e-12)


@pytest.mark.parametrize('shares, within, outside', [([0.0], [1.0], 0.5), ([0.5], [1.0], 0.0), ([0.5], [0.0], 0.5)])
def test_inversion_domain(shares, within, outside):
    with pytest.raises(DomainError):
        invert_shares(shares, within, outside, 0.3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8), st.integers(1, 3), st.floats(0.0, 0.95))
def test_matches_direct_formula_and_inverts(seed, n, n_groups, sigma):
    rng = np.random.default_rng(seed)
    groups = [f'g{rng.integers(n_groups)}' for _ in range(n)]
    delta = rng.normal(-1, 1, n)
    result = shares_from_utilities(snapshot(delta, groups), UtilityParams(-1.0, sigma))
    shares, within, outside = nested_logit_shares(delta, groups, sigma)
    np.testing.assert_allclose(result.shares, shares, rtol=1e-10)
    np.testing.assert_allclose(result.within, within, rtol=1e-10)
    assert result.outside[0] == pytest.approx(outside, rel=1e-10)
    assert result.shares.sum() + result.outside[0] == pytest.approx(1.0, abs=1e-12)
    recovered = invert_shares(result.shares, result.within, result.outside[0], sigma)
    np.testing.assert_allclose(recovered, delta, atol=1e-10 * max(1, np.abs(delta).max()))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.9))
def test_utility_shift_leaves_shares_monotone(seed, sigma):
    rng = np.random.default_rng(seed)
    groups, _, _, delta = random_market(rng)
    params = UtilityParams(-1.0, sigma)
    before = shares_from_utilities(snapshot(delta, list(groups)), params)
    bumped = delta.copy()
    bumped[0] += 0.1
    after = shares_from_utilities(snapshot(bumped, list(groups)), params)
    assert after.shares[0] > before.shares[0]
    assert (after.shares[1:] < before.shares[1:]).all()
    assert after.outside[0] < before.outside[0]


def test_extreme_utilities_do_not_overflow():
    result = shares_from_utilities(snapshot([700.0, 650.0], ['a', 'b']), UtilityParams(-1.0, 0.9))
    assert np.isfinite(result.shares).all()
    assert result.shares.sum() + result.outside[0] == pytest.approx(1.0)


def test_sigma_near_one_is_clamped():
    result = shares_from_utilities(snapshot([0.0, 0.1]), UtilityParams(-1.0, 1.0))
    assert np.isfinite(result.shares).all()
    assert result.within[1] == pytest.approx(1.0, abs=1e-6)


def test_stacked_markets_are_independent():
    rng = np.random.default_rng(4)
    delta = rng.normal(size=6)
    stacked = stacked_shares(delta, np.array([0, 1, 0, 0, 1, 1]), 0.6, np.array([0, 0, 0, 1, 1, 1]))
    first = nested_logit_shares(delta[:3], [0, 1, 0], 0.6)[0]
    second = nested_logit_shares(delta[3:], [0, 1, 1], 0.6)[0]
    np.testing.assert_allclose(stacked.shares, np.concatenate([first, second]), rtol=1e-12)


def test_logit_derivative_single_product():
    snap = snapshot([0.3], prices=[1.5])
    params = UtilityParams(-2.0, 0.0)
    s = shares_from_utilities(snap, params).shares[0]
    assert share_price_jacobian(snap, params)[0, 0] == pytest.approx(-2.0 * s * (1 - s), rel=1e-12)


def test_cross_group_entry():
    snap = snapshot([0.1, -0.4, 0.2], ['a', 'a', 'b'], prices=[1.0, 1.3, 0.8])
    params = UtilityParams(-1.5, 0.8)
    s = shares_from_utilities(snap, params).shares
    jacobian = share_price_jacobian(snap, params)
    assert jacobian[0, 2] == pytest.approx(-params.alpha * s[0] * s[2], rel=1e-12)


def _price_share_map(snap, params, quantity):
    def function(prices):
        moved = snap.with_delta(snap.delta + params.price_term(prices) - params.price_term(snap.prices), prices)
        return quantity_shares(moved, params) if quantity else shares_from_utilities(moved, params).shares
    return function


@pytest.mark.parametrize('model_kind, sigma', [('nested_logit', 0.0), ('nested_logit', 0.8), ('cenl', 0.6)])
def test_price_jacobian_matches_central_differences(model_kind, sigma):
    rng = np.random.default_rng(7)
    groups, firms, prices, delta = random_market(rng, n_products=4)
    snap = MarketSnapshot(['a', 'b', 'c', 'd'], prices, delta, list(groups), list(firms))
    params = UtilityParams(-1.2, sigma, model_kind=model_kind)
    numeric = central_jacobian(_price_share_map(snap, params, quantity=True), prices)
    assert np.abs(share_price_jacobian(snap, params) - numeric).max() < 1e-6


def test_jacobian_columns_balance_outside_good():
    rng = np.random.default_rng(8)
    groups, _, _, delta = random_market(rng)
    result = stacked_shares(delta, np.unique(groups, return_inverse=True)[1], 0.7)
    dsdu = utility_jacobian(result.shares, result.within, groups, 0.7)

    def outside(d):
        return stacked_shares(d, np.unique(groups, return_inverse=True)[1], 0.7).outside
    d_outside = central_jacobian(outside, delta)[0]
    assert np.abs(dsdu.sum(axis=0) + d_outside).max() < 1e-8
    np.testing.assert_allclose(dsdu, dsdu.T, atol=1e-15)
