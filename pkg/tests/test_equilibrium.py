import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idlecourier.equilibrium import (
    EXISTENCE,
    OK,
    ElementaryVars,
    check_existence,
    conservation_check,
    evaluate,
    evaluate_batch,
    profit,
)
from idlecourier.errors import DegenerateSupplyError, InfeasibleRegionError, InfeasibleSupplyError
from idlecourier.model import MarketParams, Network, driver_supply
from idlecourier.optimizer import initial_guess


def symmetric_market():
    t = np.array([[5.0, 10.0], [10.0, 5.0]])
    net = Network(t=t, L=np.full(2, 20.0), tg=np.full(2, 2.0))
    params = MarketParams(
        lambda_r0=np.array([[6.0, 4.0], [4.0, 6.0]]), lambda_d0=np.array([[2.0, 3.0], [3.0, 2.0]]),
        c_r0=1.3 * t, c_d0=0.3 * t, N0=2000.0,
    )
    v = ElementaryVars(r_r=[1.5, 1.5], c_df=np.full((2, 2), 12.0), N_I=[80.0, 80.0])
    return net, params, v


def city_vars(city, seed):
    return initial_guess(city, np.random.default_rng(seed)).with_(N_bar=None, w_dg=None)


def test_pure_ride_market_when_no_parcels(city):
    sc = city.without_parcels()
    v = city_vars(sc, 0)
    s = evaluate(v, sc.net, sc.params)
    assert np.all(s.lambda_df == 0) and np.all(s.lambda_do == 0)
    rev = np.sum(v.r_r[:, None] * sc.net.t * s.lambda_r)
    assert s.profit == pytest.approx(rev - s.required_drivers * s.q / 60, rel=1e-12)


def test_symmetric_market_gives_equal_zones():
    net, params, v = symmetric_market()
    for mode in ("approx", "exact"):
        s = evaluate(v, net, params, mode=mode)
        for a in (s.w_r, s.w_I, s.w_df, s.N_bar, s.w_dg, s.N_Ig):
            assert a[0] == pytest.approx(a[1], rel=1e-10)
        np.testing.assert_allclose(s.ctmc.pi[0], s.ctmc.pi[1], rtol=1e-10)
        np.testing.assert_allclose(np.diag(s.t_df)[0], np.diag(s.t_df)[1], rtol=1e-10)


def test_evaluation_is_bitwise_deterministic(city):
    v = city_vars(city, 1)
    a = evaluate(v, city.net, city.params, mode="exact")
    b = evaluate(v, city.net, city.params, mode="exact")
    for k in ("lambda_r", "lambda_df", "t_df", "r_df", "N_bar", "w_dg", "q", "profit"):
        assert np.array_equal(getattr(a, k), getattr(b, k))


def test_recovered_flexible_fare_round_trip(city):
    s = evaluate(city_vars(city, 2), city.net, city.params, mode="exact")
    p = city.params
    rebuilt = s.r_df + p.alpha_d * s.w_df[:, None] + p.pd(s.t_df)
    mask = s.lambda_df > 0
    np.testing.assert_allclose(rebuilt[mask], s.vars.c_df[mask], rtol=0, atol=1e-9)


def test_profit_matches_parts(city):
    s = evaluate(city_vars(city, 3), city.net, city.params, mode="exact")
    ride = np.sum(s.vars.r_r[:, None] * city.net.t * (s.lambda_r + s.lambda_do))
    flex = np.sum(s.r_df * s.lambda_df)
    labor = driver_supply(s.q, city.params.q0, city.params.sigma, city.params.N0) * s.q / 60
    assert profit(s) == pytest.approx(ride + flex - labor, rel=1e-9)
    assert s.profit == pytest.approx(ride + flex - labor, rel=1e-9)


def test_single_od_profit_by_hand(toy):
    sc = toy.without_parcels()
    s = evaluate(ElementaryVars(r_r=[1.0], c_df=[[np.inf]], N_I=[40.0]), sc.net, sc.params)
    lam = s.lambda_r[0, 0]
    N = lam * (8.0 + 12 / np.sqrt(40.0)) + 40.0
    q = sc.params.q0 + np.log(N / (1000 - N)) / sc.params.sigma
    assert s.profit == pytest.approx(1.0 * 8.0 * lam - N * q / 60, rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_conservation_holds_by_construction(city, seed):
    s = evaluate(city_vars(city, seed), city.net, city.params, mode="exact")
    assert abs(conservation_check(s)) <= 1e-6


def test_existence_margin_without_flexible_demand(city):
    sc = city.without_parcels()
    s = evaluate(city_vars(sc, 0), sc.net, sc.params)
    holds, margin = check_existence(s)
    assert holds.all()
    np.testing.assert_allclose(margin, s.vars.N_I)


def test_existence_fails_with_long_drop_offs(toy):
    net = Network(t=toy.net.t, L=toy.net.L, tg=np.array([1e5]))
    v = ElementaryVars(r_r=[1.2], c_df=[[20.0]], N_I=[60.0])
    s = evaluate_batch(net, toy.params, v.r_r, v.c_df, v.N_I, mode="exact")
    assert not check_existence(s)[0].all() and s.code == EXISTENCE
    with pytest.raises(InfeasibleRegionError) as err:
        evaluate(v, net, toy.params, mode="exact")
    assert err.value.zone == 0


def test_existence_holds_on_city_starts(city):
    for seed in range(5):
        s = evaluate(city_vars(city, seed), city.net, city.params, mode="exact")
        assert check_existence(s)[0].all()
        assert max(np.abs(s.residual_idle).max(), np.abs(s.residual_wait).max()) <= 1e-8


def test_errors_carry_context(toy):
    with pytest.raises(DegenerateSupplyError):
        evaluate(ElementaryVars(r_r=[1.0], c_df=[[10.0]], N_I=[0.0]), toy.net, toy.params)
    with pytest.raises(InfeasibleSupplyError):
        evaluate(ElementaryVars(r_r=[1.0], c_df=[[10.0]], N_I=[5000.0]), toy.net, toy.params)


def test_batch_matches_single_points(city):
    vs = [city_vars(city, s) for s in range(3)]
    b = evaluate_batch(city.net, city.params, np.stack([v.r_r for v in vs]), np.stack([v.c_df for v in vs]),
                       np.stack([v.N_I for v in vs]), mode="exact")
    for i, v in enumerate(vs):
        s = evaluate(v, city.net, city.params, mode="exact")
        assert b.code[i] == OK
        assert b.profit[i] == pytest.approx(s.profit, rel=1e-10)


def test_given_mode_reports_residuals_without_enforcing(city):
    v = city_vars(city, 4)
    ex = evaluate(v, city.net, city.params, mode="exact")
    s = evaluate(v.with_(N_bar=ex.N_bar * 0.9, w_dg=ex.w_dg), city.net, city.params)
    assert np.abs(s.residual_idle).max() > 1e-3
    s = evaluate(ex.vars, city.net, city.params)
    assert np.abs(s.residual_idle).max() <= 1e-8


def test_no_flexible_option_removes_flexible_flow(city):
    s = evaluate(city_vars(city, 0), city.net, city.params, flexible=False)
    assert np.all(s.lambda_df == 0) and s.lambda_do.sum() > 0


@given(seed=st.integers(0, 2**32 - 1), zone=st.integers(0, 10), bump=st.floats(0.01, 2.0))
def test_raising_a_fare_lowers_that_zone_ride_demand(city, seed, zone, bump):
    v = city_vars(city, seed)
    a = evaluate_batch(city.net, city.params, v.r_r, v.c_df, v.N_I)
    r = v.r_r.copy()
    r[zone] += bump
    b = evaluate_batch(city.net, city.params, r, v.c_df, v.N_I)
    assert b.lambda_r[zone].sum() <= a.lambda_r[zone].sum()


@given(seed=st.integers(0, 2**32 - 1))
def test_rates_within_potential(city, seed):
    v = city_vars(city, seed)
    s = evaluate_batch(city.net, city.params, v.r_r, v.c_df, v.N_I)
    p = city.params
    assert np.all((s.lambda_r >= 0) & (s.lambda_r <= p.lambda_r0))
    assert np.all(s.lambda_df + s.lambda_do <= p.lambda_d0 + 1e-12)
