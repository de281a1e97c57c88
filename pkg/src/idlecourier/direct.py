"""Baseline: the full pricing problem with every endogenous quantity as a decision variable.

Demand, waiting times, first-passage times, delivery times, the driver chain and
the driver balance all enter as equality constraints, handled by the same
augmented-Lagrangian and projected quasi-Newton machinery as the two-stage
method. It exists for comparison and is expected to be slower and to stall at
infeasible points from poor starts.
"""

from __future__ import annotations

import time

import numpy as np

from . import ctmc as _ctmc
from .equilibrium import ElementaryVars, evaluate
from .matching import success_drop, success_rates, square_root_time
from .model import delivery_split, driver_supply, ride_demand
from .optimizer import OptReport, SolverConfig, minimize_box, start_seeds
from .scenario import Scenario


class DirectLayout:
    """Flat layout of all decision variables of the full problem."""

    def __init__(self, sc: Scenario, cfg: SolverConfig):
        p, net = sc.params, sc.net
        M = self.M = sc.M
        self.K = p.Ca + 1
        self.flex = np.flatnonzero(p.lambda_d0.ravel() > 0) if cfg.flexible else np.array([], int)
        nf = self.flex.size
        # loose cap on passage and delivery times; a wider box only worsens the scaling
        big_t = 10.0 * M * float(np.max(net.t))
        N_min = (net.L / p.w_max) ** 2
        spec = [
            ("r", M, cfg.r_bounds[0], cfg.r_bounds[1]),
            ("r_df", nf, 0.0, cfg.cdf_bounds[1]),
            ("q", 1, 0.0, 80.0),
            ("lam_r", M * M, 0.0, p.lambda_r0.ravel()),
            ("lam_df", nf, 0.0, p.lambda_d0.ravel()[self.flex]),
            ("lam_do", M * M, 0.0, p.lambda_d0.ravel()),
            ("N_I", M, N_min, cfg.N_I_max),
            ("w_I", M, cfg.floor, cfg.w_dg_max),
            ("t_df", nf, 0.0, big_t),
            ("ET", M * M, 0.0, big_t),
            ("N_bar", M, cfg.floor, cfg.N_I_max),
            ("w_dg", M, cfg.floor, cfg.w_dg_max),
            ("pi", M * self.K, 0.0, 1.0),
            ("N_Ig", M, 0.0, cfg.N_I_max),
        ]
        self.slices, lo, hi = {}, [], []
        k = 0
        for name, n, a, b in spec:
            self.slices[name] = slice(k, k + n)
            lo.append(np.broadcast_to(np.asarray(a, dtype=float), (n,)))
            hi.append(np.broadcast_to(np.asarray(b, dtype=float), (n,)))
            k += n
        self.n = k
        self.lo, self.hi = np.concatenate(lo), np.concatenate(hi)

    def get(self, X, name):
        return X[..., self.slices[name]]

    def full(self, X, name, fill=0.0):
        """Scatter a flexible-pair block back into an M x M matrix."""
        M = self.M
        out = np.full(X.shape[:-1] + (M * M,), fill)
        out[..., self.flex] = self.get(X, name)
        return out.reshape(X.shape[:-1] + (M, M))


def _parts(sc: Scenario, lay: DirectLayout, X):
    p, net = sc.params, sc.net
    M, K = lay.M, lay.K
    B = X.shape[:-1]
    g = lambda n: lay.get(X, n)
    r, q, N_I, w_I = g("r"), g("q")[..., 0], g("N_I"), g("w_I")
    N_bar, w_dg, N_Ig = g("N_bar"), g("w_dg"), g("N_Ig")
    lam_r = g("lam_r").reshape(B + (M, M))
    lam_do = g("lam_do").reshape(B + (M, M))
    ET = g("ET").reshape(B + (M, M))
    lam_df = lay.full(X, "lam_df")
    r_df = lay.full(X, "r_df")
    t_df = lay.full(X, "t_df")
    pi = g("pi").reshape(B + (M, K))
    t = net.t
    w_r = net.L / np.sqrt(N_I)
    fare = r[..., :, None] * t
    flow = lam_r + lam_do
    out = flow.sum(-1)
    res = {}
    lam_r0 = p.lambda_r0
    res["ride_demand"] = (lam_r - ride_demand(lam_r0, p.alpha_r * w_r[..., :, None] + fare, p.c_r0, p.eps)) / np.maximum(lam_r0, 1e-9)
    w_df = square_root_time(net.L, N_Ig)
    flex_mask = np.isin(np.arange(M * M), lay.flex).reshape(M, M)
    c_df = np.where(flex_mask, p.alpha_d * w_df[..., :, None] + p.pd(t_df) + r_df, np.inf)
    c_do = p.alpha_d * w_r[..., :, None] + p.pd(t) + fare
    f_df, f_do = delivery_split(p.lambda_d0, c_df, c_do, p.c_d0, p.eta)
    scale_d = np.maximum(p.lambda_d0, 1e-9)
    res["flex_demand"] = ((lam_df - np.nan_to_num(f_df)) / scale_d).reshape(B + (M * M,))[..., lay.flex]
    res["ondemand_demand"] = (lam_do - f_do) / scale_d
    res["idle_time"] = (w_I * out - N_I) / N_I
    # first-passage equations: ET_ij = m_i + sum_{k != j} P_ik ET_kj
    with np.errstate(invalid="ignore", divide="ignore"):
        P = flow / out[..., None]
    P = np.nan_to_num(P)
    S = w_I[..., :, None] + t
    m = np.sum(P * S, axis=-1)
    off = ET * (1.0 - np.eye(M))
    res["passage"] = (ET - m[..., :, None] - P @ off) / S.mean(axis=(-1, -2))[..., None, None]
    p_drop = success_drop(net.tg, w_I, p.dist)
    ps = np.maximum(p_drop, 1e-6)
    ret = np.diagonal(ET, axis1=-2, axis2=-1)
    t_model = np.where(np.eye(M, dtype=bool), 0.0, ET) + ((1 - ps) / ps * ret)[..., None, :]
    res["delivery_time"] = ((t_df - t_model) / (1.0 + t_model)).reshape(B + (M * M,))[..., lay.flex]
    tbar = square_root_time(net.L, N_bar)
    rates = success_rates(net.tg, w_I, tbar, w_dg, lam_df, p.Ca, p.dist)
    hold = _ctmc.holding_times(rates.p_pick_n, rates.p_drop_n, w_I, net.tg, w_dg, tbar)
    Pc = _ctmc.build_transitions(P, rates.p_pick_n, rates.p_drop_n, check=False)
    x = (pi / hold).reshape(B + (M * K,))
    bal = (x - np.einsum("...s,...st->...t", x, Pc)) * hold.reshape(B + (M * K,)).mean(-1, keepdims=True)
    # balance rows sum to zero; drop one so the constraint Jacobian can have full rank
    res["balance"] = bal[..., 1:]
    res["normalisation"] = pi.sum(axis=(-1, -2))[..., None] - 1.0
    supply_pick = _ctmc.flexible_pickup_supply(N_I, pi, rates.p_pick_n)
    res["pickup_supply"] = (N_Ig - supply_pick) / N_I
    inbound = lam_df.sum(-2)
    out_flex = lam_df.sum(-1)
    rhs = _ctmc.idle_supply_rhs(N_I, net.tg, inbound, pi, rates.p_flex_n[..., -1])
    res["idle_supply"] = (N_bar - rhs) / N_I
    with np.errstate(invalid="ignore", divide="ignore"):
        wait_t = rates.p_pick_succ * N_bar / out_flex
    res["pickup_wait"] = np.where(out_flex > 0, (w_dg - wait_t) / np.maximum(w_dg, 1.0), 0.0)
    need = np.sum(flow * (t + w_r[..., :, None] + w_I[..., :, None]), axis=(-1, -2))
    supplied = driver_supply(q, p.q0, p.sigma, p.N0)
    res["conservation"] = ((supplied - need) / p.N0)[..., None]
    revenue = np.sum(fare * flow, axis=(-1, -2)) + np.sum(r_df * lam_df, axis=(-1, -2))
    profit = revenue - supplied * q / 60.0
    h = np.concatenate([v.reshape(B + (-1,)) for v in res.values()], axis=-1)
    return profit, h, res


def direct_residuals(sc: Scenario, cfg: SolverConfig, X):
    """Named scaled constraint residuals (max norm) at a full variable vector."""
    lay = DirectLayout(sc, cfg)
    _, _, res = _parts(sc, lay, np.asarray(X, dtype=float)[None])
    return {k: float(np.max(np.abs(v))) for k, v in res.items()}


def direct_start(sc: Scenario, cfg: SolverConfig, rng: np.random.Generator):
    """Random start from the published initial-guess box; the remaining variables are filled consistently."""
    from .passage import first_passage_times, flexible_delivery_time, transit_times, zone_transition_matrix

    lay = DirectLayout(sc, cfg)
    p, net = sc.params, sc.net
    M, K = lay.M, lay.K
    r = rng.uniform(1.0, 2.0, M)
    rng.uniform(10.0, 20.0, (M, M))  # flexible generalized costs are not decisions here
    N_I = rng.uniform(150.0, 250.0, M)
    N_bar = rng.uniform(50.0, 150.0, M)
    w_dg = rng.uniform(5.0, 15.0, M)
    r_df = rng.uniform(5.0, 15.0, (M, M))
    q = rng.uniform(20.0, 30.0)
    lam_r = rng.uniform(0.15, 0.25, (M, M)) * p.lambda_r0
    lam_df = rng.uniform(0.1, 0.2, (M, M)) * p.lambda_d0
    lam_do = rng.uniform(0.1, 0.2, (M, M)) * p.lambda_d0
    if not cfg.flexible:
        lam_df[:] = 0.0
    flow = lam_r + lam_do
    w_I = N_I / flow.sum(-1)
    P = zone_transition_matrix(lam_r, lam_do)
    ET = first_passage_times(P, transit_times(w_I, net.t), check=False)
    rates = success_rates(net.tg, w_I, square_root_time(net.L, N_bar), w_dg, lam_df, p.Ca, p.dist)
    t_df = flexible_delivery_time(ET, rates.p_drop_succ)
    hold = _ctmc.holding_times(rates.p_pick_n, rates.p_drop_n, w_I, net.tg, w_dg, square_root_time(net.L, N_bar))
    sol = _ctmc.solve_ctmc(P, rates.p_pick_n, rates.p_drop_n, hold, N_I)
    N_Ig = _ctmc.flexible_pickup_supply(N_I, sol.pi, rates.p_pick_n)
    X = np.zeros(lay.n)
    vals = dict(r=r, r_df=r_df.ravel()[lay.flex], q=[q], lam_r=lam_r.ravel(), lam_df=lam_df.ravel()[lay.flex],
                lam_do=lam_do.ravel(), N_I=N_I, w_I=w_I, t_df=t_df.ravel()[lay.flex], ET=ET.ravel(),
                N_bar=N_bar, w_dg=w_dg, pi=sol.pi.ravel(), N_Ig=N_Ig)
    for k, v in vals.items():
        X[lay.slices[k]] = v
    return np.clip(X, lay.lo, lay.hi)


def vector_from_state(sc: Scenario, cfg: SolverConfig, st) -> np.ndarray:
    """Full variable vector of an evaluated equilibrium, e.g. to warm-start the baseline."""
    lay = DirectLayout(sc, cfg)
    g = lambda a: np.asarray(a, dtype=float)
    vals = dict(
        r=g(st.vars.r_r), r_df=g(st.r_df).ravel()[lay.flex], q=[float(st.q)], lam_r=g(st.lambda_r).ravel(),
        lam_df=g(st.lambda_df).ravel()[lay.flex], lam_do=g(st.lambda_do).ravel(), N_I=g(st.vars.N_I),
        w_I=g(st.w_I), t_df=g(st.t_df).ravel()[lay.flex], ET=g(st.zone_chain.ET).ravel(), N_bar=g(st.N_bar),
        w_dg=np.where(np.isfinite(st.w_dg), st.w_dg, 1.0), pi=g(st.ctmc.pi).ravel(), N_Ig=g(st.N_Ig),
    )
    X = np.zeros(lay.n)
    for k, v in vals.items():
        X[lay.slices[k]] = v
    return np.clip(X, lay.lo, lay.hi)


def direct_solve(sc: Scenario, cfg: SolverConfig, start=None, start_index: int = 0) -> OptReport:
    """Augmented-Lagrangian solve of the full problem from ``start`` (a full vector or ``None`` for a seeded draw).

    The reported profit is the objective at the final iterate; ``feasible`` means
    every scaled residual is within ``cfg.residual_tol``.
    """
    t0 = time.perf_counter()
    lay = DirectLayout(sc, cfg)
    if start is None or isinstance(start, ElementaryVars):
        rng = np.random.default_rng(start_seeds(cfg.seed, start_index + 1)[start_index])
        X = direct_start(sc, cfg, rng)
    else:
        X = np.clip(np.asarray(start, dtype=float), lay.lo, lay.hi)

    def parts(Xb):
        with np.errstate(all="ignore"):
            return _parts(sc, lay, Xb)

    prof, h, _ = parts(X[None])
    h = h[0]
    nh = h.size
    mult = np.zeros(nh)
    traj = [float(prof[0])]
    inner = 0
    outer = 0
    best_X, best_p = None, -np.inf
    pscale = max(abs(float(prof[0])), 1.0)
    # typical magnitudes from the start point; box widths differ by orders of magnitude here
    scale = np.minimum(np.maximum(np.abs(X), 1e-2), lay.hi - lay.lo)
    h_prev = float(np.max(np.abs(h)))
    mu = cfg.direct_mu0
    last_p = np.inf
    settled = False
    for outer in range(1, cfg.direct_max_outer + 1):

        def fun(Xb, mult=mult, mu=mu):
            pr, hh, _ = parts(Xb)
            v = -pr / pscale + hh @ mult + 0.5 * mu * np.sum(hh**2, axis=-1)
            return np.where(np.isfinite(v), v, np.inf)

        cap = min(cfg.direct_inner_iter, cfg.direct_budget - inner)
        if cap <= 0:
            break
        res = minimize_box(fun, X, lay.lo, lay.hi, cfg.fd_step, cap, cfg.grad_tol, cfg.ftol, cfg.memory,
                           scale=scale)
        inner += res.iterations
        X = res.x
        pr, hb, _ = parts(X[None])
        h = hb[0]
        if not np.all(np.isfinite(h)):
            break
        p_now = float(pr[0])
        traj.append(p_now)
        hn = float(np.max(np.abs(h)))
        if hn <= cfg.residual_tol and p_now > best_p:
            best_X, best_p = X.copy(), p_now
        if hn <= cfg.residual_tol and abs(p_now - last_p) <= 1e-8 * max(abs(p_now), 1.0):
            settled = True
            break
        last_p = p_now
        mult = mult + mu * h
        # tighten the penalty only when feasibility stalls
        if hn > max(0.25 * h_prev, cfg.residual_tol):
            mu *= cfg.direct_mu_growth
        h_prev = min(h_prev, hn)
    final_X = best_X if best_X is not None else X
    pr, hb, res = parts(final_X[None])
    residuals = {k: float(np.max(np.abs(v))) for k, v in res.items()}
    feasible = max(residuals.values()) <= cfg.residual_tol
    v = ElementaryVars(
        r_r=lay.get(final_X, "r"), c_df=None, N_I=lay.get(final_X, "N_I"),
        N_bar=lay.get(final_X, "N_bar"), w_dg=lay.get(final_X, "w_dg"),
    )
    rep = OptReport(
        vars=v, profit=float(pr[0]), approx_profit=np.nan, refined_profit=float(pr[0]),
        iterations={"outer": outer, "inner": inner}, wall_time=time.perf_counter() - t0, trajectory=traj,
        residuals=residuals, converged=settled and feasible, diverged=not np.isfinite(pr[0]), feasible=feasible,
        start=start_index, method="direct",
    )
    rep.x = final_X
    return rep
