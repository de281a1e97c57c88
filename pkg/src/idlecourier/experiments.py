"""Demand-level sweeps and benchmark market structures.

Every market is solved with ``algorithm1`` (best of seeded multistarts) and
summarised by ``market_metrics``. Benchmarks:

* ``ride_only``: no parcel demand at all.
* ``ondemand_only``: parcels served only on demand (flexible channel removed).
* ``separate``: a ride-only platform and an on-demand delivery platform compete
  for one driver pool; the pair of wages is found by iterated best response.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .equilibrium import ElementaryVars, evaluate
from .model import driver_supply
from .optimizer import OptReport, SolverConfig, algorithm1, best_of, multistart
from .scenario import Scenario

log = logging.getLogger(__name__)

#: relative slack allowed on the passenger-rate trend between consecutive levels
PASSENGER_TREND_TOL = 0.005


def solve_market(sc: Scenario, cfg: SolverConfig, starts: int | None = None, warm: ElementaryVars | None = None) -> OptReport:
    """Best of ``starts`` seeded algorithm1 runs, or a single run from ``warm``."""
    if warm is not None:
        return algorithm1(sc, cfg, start=warm)
    return best_of(multistart(sc, cfg, n=starts))


def market_metrics(sc: Scenario, rep: OptReport, flexible: bool = True) -> dict:
    """Headline quantities of an optimised market (rates per minute, fares per order)."""
    st = evaluate(rep.vars, sc.net, sc.params, mode="given", flexible=flexible)
    fare = st.vars.r_r[:, None] * sc.net.t
    lr, ldf, ldo = st.lambda_r, st.lambda_df, st.lambda_do
    div = lambda a, b: float(a / b) if b > 0 else float("nan")
    return {
        "profit": float(st.profit),
        "drivers": float(driver_supply(st.q, sc.params.q0, sc.params.sigma, sc.params.N0)),
        "wage": float(st.q),
        "idle_drivers": float(np.sum(st.vars.N_I)),
        "passengers": float(lr.sum()),
        "flexible_parcels": float(ldf.sum()),
        "ondemand_parcels": float(ldo.sum()),
        "customers": float(lr.sum() + ldf.sum() + ldo.sum()),
        "ride_fare": div(np.sum(fare * lr), lr.sum()),
        "flexible_fare": div(np.sum(np.where(ldf > 0, st.r_df * ldf, 0.0)), ldf.sum()),
        "ondemand_fare": div(np.sum(fare * ldo), ldo.sum()),
        "max_residual": float(max(rep.residuals.values())) if rep.residuals else 0.0,
    }


def zonal_metrics(sc: Scenario, rep: OptReport, flexible: bool = True) -> dict:
    """Per-zone idle drivers and parcel attraction (orders/min arriving) by service."""
    st = evaluate(rep.vars, sc.net, sc.params, mode="given", flexible=flexible)
    return {
        "idle_drivers": np.asarray(st.vars.N_I, dtype=float),
        "flexible_in": st.lambda_df.sum(axis=0),
        "ondemand_in": st.lambda_do.sum(axis=0),
    }


# ---------------------------------------------------------------- sweep

@dataclass
class SweepResult:
    levels: list
    rows: list
    reports: list = field(repr=False)
    flags: dict = field(default_factory=dict)
    zonal: list = field(default_factory=list, repr=False)


def trend_flags(rows) -> dict:
    profit = [r["profit"] for r in rows]
    drivers = [r["drivers"] for r in rows]
    pax = [r["passengers"] for r in rows]
    return {
        "profit_nondecreasing": all(b >= a for a, b in zip(profit, profit[1:])),
        "drivers_nondecreasing": all(b >= a for a, b in zip(drivers, drivers[1:])),
        "passengers_nondecreasing": all(b >= a * (1 - PASSENGER_TREND_TOL) for a, b in zip(pax, pax[1:])),
    }


def _solve_level(args):
    sc, cfg, level, starts = args
    s = sc.at_level(level)
    rep = solve_market(s, cfg, starts)
    return rep, market_metrics(s, rep, cfg.flexible), zonal_metrics(s, rep, cfg.flexible)


def sweep(sc: Scenario, cfg: SolverConfig, levels=None, starts: int | None = None, workers: int = 1) -> SweepResult:
    """Solve the market at each demand level; levels are independent and may run in parallel.

    Each level uses the same seeded starts, so results do not depend on ``workers``.
    """
    levels = list(sc.sweep if levels is None else levels)
    if not levels:
        raise ValueError("no sweep levels")
    if list(levels) != sorted(levels):
        raise ValueError("sweep levels must be sorted ascending")
    jobs = [(sc, cfg, float(lv), starts) for lv in levels]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_solve_level, jobs))
    else:
        out = [_solve_level(j) for j in jobs]
    rows = [{"level": float(lv), **m} for lv, (_, m, _) in zip(levels, out)]
    return SweepResult(levels=levels, rows=rows, reports=[o[0] for o in out], flags=trend_flags(rows),
                       zonal=[o[2] for o in out])


# ---------------------------------------------------------------- benchmarks

def benchmark_ride_only(sc: Scenario, cfg: SolverConfig, starts: int | None = None) -> dict:
    s = sc.without_parcels()
    rep = solve_market(s, cfg, starts)
    return {"structure": "ride_only", **market_metrics(s, rep, cfg.flexible)}


def benchmark_ondemand_only(sc: Scenario, cfg: SolverConfig, starts: int | None = None) -> dict:
    """Integrated platform with the flexible channel removed."""
    c = replace(cfg, flexible=False)
    rep = solve_market(sc, c, starts)
    return {"structure": "ondemand_only", **market_metrics(sc, rep, flexible=False)}


def benchmark_integrated(sc: Scenario, cfg: SolverConfig, starts: int | None = None) -> dict:
    rep = solve_market(sc, cfg, starts)
    return {"structure": "integrated", **market_metrics(sc, rep, cfg.flexible)}


def effective_reservation_wage(q_other, q0, sigma):
    """Reservation wage that folds a rival platform's wage into the outside option of a 3-way logit."""
    return float(np.logaddexp(sigma * q_other, sigma * q0) / sigma)


def _empty_platform() -> dict:
    """Metrics of a platform with no demand: no drivers, no customers, wage at minus infinity."""
    zero = dict.fromkeys(("profit", "drivers", "idle_drivers", "passengers", "flexible_parcels", "ondemand_parcels",
                          "customers", "max_residual"), 0.0)
    return {**zero, "wage": -np.inf, "ride_fare": float("nan"), "flexible_fare": float("nan"),
            "ondemand_fare": float("nan")}


def benchmark_separate(sc: Scenario, cfg: SolverConfig, starts: int | None = None, tol: float = 1e-4,
                       max_rounds: int = 50) -> dict:
    """Ride-only and on-demand-delivery-only platforms sharing one driver pool.

    Drivers choose among the two platforms and staying out by a logit over
    wages, so each platform faces its rival's wage as part of its outside
    option. Platforms alternate best responses (warm-started from their
    previous solution) until both wages move less than ``tol``. If the cap is
    hit, the last two iterates are averaged and ``cycled`` is set.
    """
    p = sc.params
    ride = sc.without_parcels()
    deliv = sc.without_rides()
    dcfg = replace(cfg, flexible=False)

    def respond(base, c, q_other, warm):
        s = replace(base, params=base.params.replace(q0=effective_reservation_wage(q_other, p.q0, p.sigma)))
        rep = solve_market(s, c, starts if warm is None else None, warm)
        return s, rep, market_metrics(s, rep, c.flexible)

    q_r, q_d = -np.inf, -np.inf
    warm_r = warm_d = None
    history = []
    converged = False
    has_r, has_d = ride.params.lambda_r0.sum() > 0, deliv.params.lambda_d0.sum() > 0
    if not (has_r or has_d):
        raise ValueError("scenario has neither ride nor parcel demand")
    if not (has_r and has_d):
        # a platform without demand hires nobody, so its rival faces the plain outside option
        m_r = respond(ride, cfg, -np.inf, None)[2] if has_r else _empty_platform()
        m_d = respond(deliv, dcfg, -np.inf, None)[2] if has_d else _empty_platform()
        history.append((m_r, m_d))
        converged = True
    else:
        for _ in range(max_rounds):
            _, rep_r, m_r = respond(ride, cfg, q_d, warm_r)
            _, rep_d, m_d = respond(deliv, dcfg, m_r["wage"], warm_d)
            warm_r, warm_d = rep_r.vars, rep_d.vars
            history.append((m_r, m_d))
            step = max(abs(m_r["wage"] - q_r), abs(m_d["wage"] - q_d))
            q_r, q_d = m_r["wage"], m_d["wage"]
            if step <= tol:
                converged = True
                break
    if not converged and len(history) >= 2:
        log.warning("best response did not settle in %d rounds; averaging the last two iterates", max_rounds)
        (a_r, a_d), (b_r, b_d) = history[-2:]
        m_r = {k: 0.5 * (a_r[k] + b_r[k]) for k in a_r}
        m_d = {k: 0.5 * (a_d[k] + b_d[k]) for k in a_d}
    combined = {k: m_r[k] + m_d[k] for k in ("profit", "drivers", "idle_drivers", "passengers", "flexible_parcels",
                                           "ondemand_parcels", "customers")}
    return {
        "structure": "separate", **combined, "wage": float("nan"),
        "ride_fare": m_r["ride_fare"], "flexible_fare": float("nan"), "ondemand_fare": m_d["ondemand_fare"],
        "max_residual": max(m_r["max_residual"], m_d["max_residual"]),
        "ride_profit": m_r["profit"], "delivery_profit": m_d["profit"],
        "ride_wage": m_r["wage"], "delivery_wage": m_d["wage"],
        "rounds": len(history), "cycled": not converged,
    }


def benchmarks(sc: Scenario, cfg: SolverConfig, starts: int | None = None, which=None) -> list:
    """Rows for the requested market structures (default: all four)."""
    fns = {
        "integrated": benchmark_integrated, "separate": benchmark_separate,
        "ondemand_only": benchmark_ondemand_only, "ride_only": benchmark_ride_only,
    }
    which = list(fns) if which is None else list(which)
    return [fns[w](sc, cfg, starts) for w in which]
