import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idlecourier.errors import InfeasibleSupplyError
from idlecourier.model import (
    DisutilityParams,
    DistributionSpec,
    MarketParams,
    Network,
    delivery_costs,
    delivery_split,
    driver_supply,
    invert_wage,
    network_from_dict,
    network_to_dict,
    outside_costs,
    params_from_dict,
    params_to_dict,
    ride_cost,
    ride_demand,
)

costs = st.floats(-200, 200)
pos = st.floats(0.01, 100)


def test_ride_cost_examples():
    assert ride_cost(0, 0, 10, 3.2) == 0
    assert ride_cost(1, 2, 5, 3.2) == pytest.approx(13.2)
    assert ride_cost(4.3, 1.0, 10, 3.2) == pytest.approx(23.76)


def test_outside_costs_proportional():
    t = np.array([[2.0, 4.0], [6.0, 8.0]])
    np.testing.assert_allclose(outside_costs(t, 1.5), 1.5 * t)


def test_delivery_costs_examples():
    pd = DisutilityParams()
    c_df, c_do = delivery_costs(0, 0, 0, 0, 0, 0, 0.7, pd)
    assert c_df == pytest.approx(pd(0)) and c_do == pytest.approx(pd(0))
    assert pd(1000) == pytest.approx(25.0)
    c_df, _ = delivery_costs(10, 1000, 9, 0, 0, 0, 0.7, pd)
    assert c_df == pytest.approx(41.0)


def test_ride_demand_examples():
    assert ride_demand(10, 5, 5, 0.12) == pytest.approx(5.0)
    assert ride_demand(10, 1e6, 0, 0.12) == pytest.approx(0.0)
    # hand evaluation of the binary logit
    assert ride_demand(10, 10, 0, 0.12) == pytest.approx(10 / (1 + np.exp(1.2)), rel=1e-12)
    assert ride_demand(10, 10, 0, 0.12) == pytest.approx(2.3147, abs=1e-4)


def test_delivery_split_examples():
    f, o = delivery_split(9.0, 3.0, 3.0, 3.0, 0.16)
    assert f == pytest.approx(3.0) and o == pytest.approx(3.0)
    f, o = delivery_split(9.0, np.inf, 5.0, 8.0, 0.16)
    assert f == 0.0
    assert o == pytest.approx(ride_demand(9.0, 5.0, 8.0, 0.16))
    f, o = delivery_split(9.0, 10.0, 15.0, 15.0, 0.16)
    e = np.exp
    d = e(-1.6) + 2 * e(-2.4)
    assert f == pytest.approx(9 * e(-1.6) / d, rel=1e-12)
    assert o == pytest.approx(9 * e(-2.4) / d, rel=1e-12)
    assert (f, o) == (pytest.approx(4.7402, abs=1e-4), pytest.approx(2.1299, abs=1e-4))


def test_driver_supply_examples():
    assert driver_supply(29.0, 29.0, 0.18, 1e4) == pytest.approx(5000.0)
    assert driver_supply(-1e4, 29.0, 0.18, 1e4) == pytest.approx(0.0)
    assert driver_supply(29.0 - 3.223, 29.0, 0.18, 1e4) == pytest.approx(3589, abs=1.0)


def test_invert_wage_examples():
    assert invert_wage(5000.0, 1e4, 0.18, 29.0) == pytest.approx(29.0)
    assert invert_wage(3589.0, 1e4, 0.18, 29.0) == pytest.approx(29 + np.log(3589 / 6411) / 0.18, rel=1e-12)
    assert invert_wage(3589.0, 1e4, 0.18, 29.0) == pytest.approx(25.77, abs=1e-2)


@pytest.mark.parametrize("N", [0.0, 1e4, 2e4, -1.0])
def test_invert_wage_outside_range_raises(N):
    with pytest.raises(InfeasibleSupplyError):
        invert_wage(N, 1e4, 0.18, 29.0)


@given(c=costs, c0=costs, lam=pos, eps=st.floats(0.01, 1))
def test_ride_demand_bounded_and_decreasing(c, c0, lam, eps):
    v = ride_demand(lam, c, c0, eps)
    assert 0 <= v <= lam
    assert ride_demand(lam, c + 1e-3, c0, eps) <= v


@given(cf=costs, co=costs, c0=costs, lam=pos, eta=st.floats(0.01, 1))
def test_delivery_shares_below_potential_and_monotone(cf, co, c0, lam, eta):
    f, o = delivery_split(lam, cf, co, c0, eta)
    assert 0 <= f and 0 <= o
    assert f + o < lam or np.isclose(f + o, lam, rtol=1e-12)
    f2, o2 = delivery_split(lam, cf + 1e-3, co, c0, eta)
    assert f2 <= f and o2 >= o
    f3, o3 = delivery_split(lam, cf, co + 1e-3, c0, eta)
    assert o3 <= o and f3 >= f


@given(cf=st.floats(-30, 30), co=st.floats(-30, 30), c0=st.floats(-30, 30))
def test_delivery_shares_sum_strictly_below_one(cf, co, c0):
    f, o = delivery_split(1.0, cf, co, c0, 0.16)
    assert f + o < 1.0


@given(N=st.floats(1e-3, 1e4 - 1e-3))
def test_invert_wage_round_trip(N):
    q = invert_wage(N, 1e4, 0.18, 29.0)
    assert driver_supply(q, 29.0, 0.18, 1e4) == pytest.approx(N, rel=1e-9)


def test_disutility_monotone_bounded_on_grid():
    pd = DisutilityParams()
    t = np.sort(np.random.default_rng(0).uniform(0, 5000, 1000))
    v = pd(t)
    assert np.all((v >= 0) & (v <= 2 * pd.a))
    h = 1e-4
    assert np.all((pd(t + h) - pd(t)) / h >= 0)


def test_distribution_spec_validation():
    with pytest.raises(ValueError):
        DistributionSpec(family="weibull")
    with pytest.raises(ValueError):
        DistributionSpec(sigma_wI=-1)
    with pytest.raises(ValueError):
        DistributionSpec(rho_w=1.5)


def test_market_params_validation():
    z = np.zeros((1, 1))
    with pytest.raises(ValueError):
        MarketParams(lambda_r0=-np.ones((1, 1)), lambda_d0=z, c_r0=z, c_d0=z)
    with pytest.raises(ValueError):
        MarketParams(lambda_r0=z, lambda_d0=z, c_r0=z, c_d0=z, Ca=0)


def test_serialisation_round_trip(toy):
    p = toy.params
    q = params_from_dict(params_to_dict(p))
    for name in ("lambda_r0", "lambda_d0", "c_r0", "c_d0"):
        np.testing.assert_array_equal(getattr(p, name), getattr(q, name))
    assert q.dist == p.dist and q.Ca == p.Ca
    net = network_from_dict(network_to_dict(toy.net))
    np.testing.assert_array_equal(net.t, toy.net.t)


def test_network_declared_size_checked(toy):
    d = network_to_dict(toy.net)
    d["M"] = 3
    with pytest.raises(ValueError):
        network_from_dict(d)


def test_network_arrays_read_only():
    net = Network(t=np.ones((2, 2)), L=np.ones(2), tg=np.ones(2))
    with pytest.raises(ValueError):
        net.t[0, 0] = 5.0
