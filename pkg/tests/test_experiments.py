import numpy as np
import pytest

from idlecourier.experiments import (
    benchmark_integrated,
    benchmark_ondemand_only,
    benchmark_ride_only,
    benchmark_separate,
    benchmarks,
    effective_reservation_wage,
    sweep,
    trend_flags,
)
from idlecourier.model import driver_supply
from idlecourier.optimizer import SolverConfig

CFG = SolverConfig(starts=2)


def test_effective_reservation_wage_reproduces_three_way_logit():
    q, q_other, q0, sigma, N0 = 24.0, 27.0, 29.0, 0.18, 1e4
    e = np.exp
    three_way = N0 * e(sigma * q) / (e(sigma * q) + e(sigma * q_other) + e(sigma * q0))
    eff = effective_reservation_wage(q_other, q0, sigma)
    assert driver_supply(q, eff, sigma, N0) == pytest.approx(three_way, rel=1e-12)
    assert effective_reservation_wage(-np.inf, q0, sigma) == pytest.approx(q0)


def test_trend_flags():
    rows = [dict(profit=1, drivers=10, passengers=5.0), dict(profit=2, drivers=11, passengers=4.99)]
    assert trend_flags(rows) == dict(profit_nondecreasing=True, drivers_nondecreasing=True,
                                     passengers_nondecreasing=True)
    rows[1]["passengers"] = 4.9
    rows[1]["profit"] = 0.5
    f = trend_flags(rows)
    assert not f["passengers_nondecreasing"] and not f["profit_nondecreasing"]


def test_sweep_level_zero_is_ride_only(toy):
    res = sweep(toy, CFG, levels=[0.0, 0.2, 0.4])
    ride = benchmark_ride_only(toy, CFG)
    assert res.rows[0]["profit"] == pytest.approx(ride["profit"], rel=1e-6)
    assert set(res.flags) == {"profit_nondecreasing", "drivers_nondecreasing", "passengers_nondecreasing"}
    assert len(res.zonal) == 3


def test_sweep_rejects_bad_levels(toy):
    with pytest.raises(ValueError):
        sweep(toy, CFG, levels=[])
    with pytest.raises(ValueError):
        sweep(toy, CFG, levels=[0.4, 0.2])


def test_sweep_workers_do_not_change_results(toy):
    a = sweep(toy, CFG, levels=[0.1, 0.3])
    b = sweep(toy, CFG, levels=[0.1, 0.3], workers=2)
    assert a.rows == b.rows


def test_ondemand_only_at_level_zero_is_ride_only(toy):
    s = toy.at_level(0.0)
    assert benchmark_ondemand_only(s, CFG)["profit"] == pytest.approx(benchmark_ride_only(s, CFG)["profit"], rel=1e-9)


def test_separate_without_parcels_is_ride_only(toy):
    sep = benchmark_separate(toy.without_parcels(), CFG)
    ride = benchmark_ride_only(toy, CFG)
    assert sep["delivery_profit"] == 0.0 and sep["ondemand_parcels"] == 0.0
    assert sep["ride_profit"] == pytest.approx(ride["profit"], rel=1e-9)
    assert not sep["cycled"]


def test_separate_reports_cycling_when_rounds_run_out(toy):
    sep = benchmark_separate(toy, CFG, tol=0.0, max_rounds=2)
    assert sep["cycled"] and sep["rounds"] == 2


def test_toy_benchmark_orderings(toy):
    rows = {r["structure"]: r for r in benchmarks(toy, CFG)}
    integ = rows["integrated"]
    assert integ["profit"] >= rows["ondemand_only"]["profit"] * 0.99
    assert integ["profit"] >= rows["separate"]["profit"]
    assert integ["flexible_fare"] < integ["ondemand_fare"]
    assert benchmark_integrated(toy, CFG)["profit"] == integ["profit"]
