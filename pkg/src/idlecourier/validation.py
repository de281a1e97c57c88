"""Simulation cross-checks of the analytic pieces at one equilibrium of a scenario."""

from __future__ import annotations

import numpy as np

from .equilibrium import evaluate
from .oracle import SimConfig, simulate_ctmc, simulate_delivery, simulate_first_passage, simulate_race
from .optimizer import SolverConfig, initial_guess, start_seeds
from .scenario import Scenario

#: relative tolerance for simulated mean times
TIME_TOL = 0.02
#: L1 tolerance for simulated chain occupancy
OCCUPANCY_TOL = 0.02
#: standard errors allowed for simulated race probabilities
RACE_SE = 3.0


def validate_scenario(sc: Scenario, cfg: SolverConfig, horizon: int = 100_000, pairs: int = 3) -> list:
    """Compare passage times, delivery times, chain occupancy and races against simulation.

    The equilibrium is evaluated at the seeded random start point (truncated idle
    supply), so no optimisation is needed. Returns one row per check.
    """
    v = initial_guess(sc, np.random.default_rng(start_seeds(cfg.seed, 1)[0])).with_(N_bar=None, w_dg=None)
    st = evaluate(v, sc.net, sc.params, mode="approx", flexible=cfg.flexible)
    sim = SimConfig(seed=cfg.seed, horizon=horizon)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    zc = st.zone_chain
    M = sc.M
    rows = []

    def rel_row(name, a, est):
        err = abs(est.mean - a) / abs(a)
        rows.append({"check": name, "analytic": float(a), "simulated": float(est.mean), "se": float(est.se),
                     "error": float(err), "tolerance": TIME_TOL, "pass": bool(err <= TIME_TOL)})

    od = rng.integers(0, M, size=(pairs, 2))
    for i, j in od:
        rel_row(f"passage {i}->{j}", zc.ET[i, j], simulate_first_passage(zc.P, zc.S, int(i), int(j), sim))
    # intra-zone deliveries have near-zero means dominated by rare retries; relative error is meaningless there
    flex = np.argwhere((st.lambda_df > 0) & ~np.eye(M, dtype=bool))
    if flex.size:
        for i, j in flex[rng.choice(len(flex), size=min(pairs, len(flex)), replace=False)]:
            rel_row(f"delivery {i}->{j}", st.t_df[i, j],
                    simulate_delivery(zc.P, zc.S, st.rates.p_drop_succ, int(i), int(j), sim))
    K = st.ctmc.pi.shape[-1]
    # occupancy needs long walks; use at least a million jumps
    est = simulate_ctmc(st.ctmc.Pc, st.ctmc.hold.reshape(-1), SimConfig(seed=cfg.seed, horizon=max(horizon, 1_000_000)))
    l1 = float(np.abs(est.mean - st.ctmc.pi.reshape(-1) * 1.0).sum())
    rows.append({"check": f"chain occupancy ({M * K} states, L1)", "analytic": 0.0, "simulated": l1, "se": float("nan"),
                 "error": l1, "tolerance": OCCUPANCY_TOL, "pass": bool(l1 <= OCCUPANCY_TOL)})
    z = int(rng.integers(0, M))
    means = {"w_I": st.w_I[z], "t_g": sc.net.tg[z], "tbar_g": st.tbar_g[z],
             "w_dg": st.w_dg[z] if np.isfinite(st.w_dg[z]) else 1.0}
    races = simulate_race(sc.params.dist, means, sim)
    analytic = {"drop": st.rates.p_drop_succ[z], "pick_w": st.rates.p_pick_succ_w[z], "pick_t": st.rates.p_pick_succ_t[z]}
    for k, e in races.items():
        a = float(analytic[k])
        # binomial floor keeps near-certain races from dividing by a zero spread
        se = max(float(e.se), np.sqrt(max(a * (1 - a), 1.0 / e.n) / e.n))
        dev = abs(float(e.mean) - a) / se
        rows.append({"check": f"race {k} zone {z}", "analytic": a, "simulated": float(e.mean), "se": float(e.se),
                     "error": dev, "tolerance": RACE_SE, "pass": bool(dev <= RACE_SE)})
    return rows
