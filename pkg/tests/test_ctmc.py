import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import root

from idlecourier.ctmc import (
    balance_residual,
    build_transitions,
    damped_fixed_point,
    flexible_pickup_supply,
    holding_times,
    idle_supply_rhs,
    limiting_probabilities,
    solve_ctmc,
)
from idlecourier.equilibrium import ElementaryVars, evaluate
from idlecourier.errors import InvalidRatesError
from idlecourier.matching import p_flex, pick_drop_by_count, pickup_wait, square_root_time
from idlecourier.oracle import SimConfig, simulate_ctmc


def random_rates(rng, M, Ca):
    pf = p_flex(rng.uniform(0.1, 0.9, M)[:, None], np.arange(Ca + 1))
    return pick_drop_by_count(rng.uniform(0, 0.6, M), rng.uniform(0, 1, M), pf, Ca)


def random_zone_matrix(rng, M):
    P = rng.uniform(0.05, 1, (M, M))
    return P / P.sum(axis=1, keepdims=True)


def test_two_zone_two_parcel_edge_structure():
    P = np.array([[0.3, 0.7], [0.6, 0.4]])
    pick = np.array([[0.2, 0.2, 0.0], [0.1, 0.1, 0.0]])
    drop = np.array([[0.0, 0.5, 0.5], [0.0, 0.3, 0.3]])
    Pc = build_transitions(P, pick, drop)
    assert Pc.shape == (6, 6)
    K = 3
    expect = np.zeros((6, 6))
    for z in range(2):
        for n in range(K):
            s = z * K + n
            stay = 1 - pick[z, n] - drop[z, n]
            for z2 in range(2):
                expect[s, z2 * K + n] = stay * P[z, z2]
            if n < K - 1:
                expect[s, s + 1] = pick[z, n]
            if n > 0:
                expect[s, s - 1] = drop[z, n]
    np.testing.assert_allclose(Pc, expect, atol=1e-15)
    np.testing.assert_allclose(Pc.sum(axis=1), 1.0, atol=1e-12)


def test_no_parcel_events_gives_block_copies():
    P = random_zone_matrix(np.random.default_rng(0), 3)
    Pc = build_transitions(P, np.zeros((3, 3)), np.zeros((3, 3)))
    for n in range(3):
        np.testing.assert_allclose(Pc[n::3, n::3], P)


def test_single_zone_single_parcel_rows():
    Pc = build_transitions(np.ones((1, 1)), np.array([[0.4, 0.0]]), np.array([[0.0, 0.5]]))
    np.testing.assert_allclose(Pc, [[0.6, 0.4], [0.5, 0.5]])


def test_overfull_rates_raise():
    with pytest.raises(InvalidRatesError):
        build_transitions(np.ones((1, 1)), np.array([[0.7, 0.0]]), np.array([[0.0, 1.2]]))


def test_holding_time_examples():
    assert holding_times(np.zeros((1, 2)), np.zeros((1, 2)), [3.0], [2.0], [4.0], [5.0])[0, 0] == pytest.approx(3.0)
    assert holding_times(np.zeros((1, 2)), np.array([[0.0, 1.0]]), [3.0], [4.0], [2.0], [2.0])[0, 1] == pytest.approx(4.0)
    h = holding_times(np.array([[0.25, 0.0]]), np.array([[0.5, 0.0]]), [8.0], [4.0], [2.0], [2.0])
    assert h[0, 0] == pytest.approx(5.0)


def test_limiting_probability_hand_values():
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    pi, res, red = limiting_probabilities(swap, np.ones(2))
    np.testing.assert_allclose(pi, [0.5, 0.5])
    pi, res, red = limiting_probabilities(swap, 1 / np.array([1.0, 2.0]))
    np.testing.assert_allclose(pi, [2 / 3, 1 / 3])
    assert res <= 1e-12 and not red


def test_single_state_chain():
    pi, _, _ = limiting_probabilities(np.ones((1, 1)), np.array([3.0]))
    assert pi[0] == 1.0


def test_unreachable_states_get_zero_mass():
    # state 2 is never entered from states 0 and 1
    Pc = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    pi, res, red = limiting_probabilities(Pc, np.ones(3))
    assert pi[2] == 0.0 and red
    assert pi.sum() == pytest.approx(1.0) and res <= 1e-12


def test_limiting_probabilities_match_monte_carlo():
    rng = np.random.default_rng(2)
    pick, drop = random_rates(rng, 2, 2)
    Pc = build_transitions(random_zone_matrix(rng, 2), pick, drop)
    hold = rng.uniform(1, 10, 6)
    pi, _, _ = limiting_probabilities(Pc, hold)
    est = simulate_ctmc(Pc, hold, SimConfig(seed=9, horizon=1_000_000))
    assert np.abs(est.mean - pi).sum() <= 0.02
    assert np.max(np.abs(est.mean - pi)) <= 0.01


def test_pickup_supply_examples():
    pi = np.full((1, 4), 0.25)
    pick = np.array([[0.3, 0.3, 0.3, 0.0]])
    assert flexible_pickup_supply(np.array([100.0]), pi, pick)[0] == pytest.approx(100 * 0.75 * 0.3)
    assert flexible_pickup_supply(np.array([100.0]), pi, np.zeros((1, 4)))[0] == 0.0
    # one zone, one slot: compose with the hand-solved chain
    sol = solve_ctmc(np.ones((1, 1)), np.array([[0.4, 0.0]]), np.array([[0.0, 0.5]]), np.array([[2.0, 3.0]]), [50.0])
    # jump chain stationary (5/9, 4/9), time-weighted by the holding times 2 and 3
    w = np.array([5 / 9 * 2, 4 / 9 * 3])
    np.testing.assert_allclose(sol.pi[0], w / w.sum())
    assert flexible_pickup_supply([50.0], sol.pi, np.array([[0.4, 0.0]]))[0] == pytest.approx(50 * 0.4 * w[0] / w.sum())


def test_idle_supply_without_flexible_demand_is_all_idle():
    pi = np.array([[0.7, 0.2, 0.1]])
    assert idle_supply_rhs(np.array([80.0]), 2.0, np.array([0.0]), pi, np.array([1.0]))[0] == pytest.approx(80.0)
    assert idle_supply_rhs(np.array([80.0]), 2.0, np.array([3.0]), np.array([[0.9, 0.1, 0.0]]), np.array([0.2]))[0] == pytest.approx(74.0)


def test_exact_idle_supply_matches_root_finder(toy):
    sc = toy
    v = ElementaryVars(r_r=[1.2], c_df=[[20.0]], N_I=[60.0])
    exact = evaluate(v, sc.net, sc.params, mode="exact")
    assert abs(exact.residual_idle).max() <= 1e-8
    ref = evaluate(v, sc.net, sc.params, mode="approx")
    out = ref.lambda_df.sum(axis=-1)

    def gap(nb):
        wait = pickup_wait(nb, out, ref.w_I, square_root_time(sc.net.L, nb), sc.params.dist)
        return evaluate(v.with_(N_bar=nb, w_dg=wait), sc.net, sc.params, mode="given").residual_idle

    sol = root(gap, exact.N_bar * 0.9, tol=1e-12)
    assert sol.success
    np.testing.assert_allclose(exact.N_bar, sol.x, rtol=1e-7)


def test_damped_fixed_point_falls_back_to_bisection():
    # x = 3 - 2x oscillates under plain Picard with damping 1 but bisection recovers x = 1
    x, r, ok = damped_fixed_point(lambda x: 3 - 2 * x, np.array([[0.0]]), 0.0, 5.0, damping=1.0, max_iter=20)
    assert ok.all() and x[0, 0] == pytest.approx(1.0, abs=1e-8)


def test_damped_fixed_point_ignores_inactive_items():
    # the second item, x -> x + 1, has no fixed point inside the box
    calls = []

    def F(x):
        calls.append(1)
        return np.where(np.arange(2)[:, None] == 0, 0.5 * x + 1, x + 1)

    x, r, ok = damped_fixed_point(F, np.zeros((2, 1)), 0.0, 5.0, active=np.array([True, False]))
    assert ok.tolist() == [True, False] and x[0, 0] == pytest.approx(2.0, abs=1e-7)
    assert len(calls) < 100


def test_large_capacity_converges_to_truncated_supply(toy):
    sc = toy
    v = ElementaryVars(r_r=[1.2], c_df=[[20.0]], N_I=[60.0])
    gaps = []
    for Ca in (1, 3, 8):
        p = sc.params.replace(Ca=Ca)
        ex = evaluate(v, sc.net, p, mode="exact")
        trunc = ex.vars.N_I - sc.net.tg * ex.lambda_df.sum(axis=-2)
        gaps.append(abs(ex.N_bar - trunc).max())
    assert gaps[-1] < 1e-6
    assert gaps[0] >= gaps[1] >= gaps[2]


states = st.builds(
    lambda seed, M, Ca: (np.random.default_rng(seed), M, Ca),
    st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4),
)


@given(s=states)
def test_chain_rows_stochastic_and_balanced(s):
    rng, M, Ca = s
    pick, drop = random_rates(rng, M, Ca)
    Pc = build_transitions(random_zone_matrix(rng, M), pick, drop)
    np.testing.assert_allclose(Pc.sum(axis=1), 1.0, atol=1e-12)
    hold = rng.uniform(0.5, 20, M * (Ca + 1))
    pi, res, _ = limiting_probabilities(Pc, hold)
    assert np.all(pi >= 0) and abs(pi.sum() - 1) <= 1e-10
    assert balance_residual(Pc, hold, pi) <= 1e-8


@given(s=states)
def test_pickup_supply_below_idle_drivers(s):
    rng, M, Ca = s
    pick, drop = random_rates(rng, M, Ca)
    hold = rng.uniform(0.5, 20, (M, Ca + 1))
    N_I = rng.uniform(1, 200, M)
    sol = solve_ctmc(random_zone_matrix(rng, M), pick, drop, hold, N_I)
    assert np.all(flexible_pickup_supply(N_I, sol.pi, pick) <= N_I + 1e-9)
    np.testing.assert_allclose(sol.N_state.sum(axis=-1), N_I, rtol=1e-12)
