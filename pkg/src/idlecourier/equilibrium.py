"""Market equilibrium from the elementary decision variables.

Given ride fares, flexible generalized costs and idle-driver counts (plus, in
the constrained formulation, effective idle supply and pick-up waits), every
other endogenous quantity follows in one pass. ``evaluate_batch`` runs that
pass over a leading batch axis and never raises; ``evaluate`` is the
single-point version that raises a ``ModelError`` on infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import ctmc as _ctmc
from .errors import (
    DegenerateSupplyError,
    DegenerateZoneError,
    InfeasibleRegionError,
    InfeasibleSupplyError,
    ModelError,
    SingularChainError,
)
from .matching import (
    destination_shares,
    pickup_wait,
    square_root_time,
    success_rates,
)
from .model import MarketParams, Network, delivery_split, ride_demand
from .passage import (
    ZoneChain,
    first_passage_check,
    first_passage_times,
    flexible_delivery_time,
    transit_times,
    zone_transition_matrix,
)

Mode = Literal["approx", "given", "exact"]

# floor on the truncated effective idle supply so the square-root law stays finite
N_BAR_FLOOR = 1e-6

# failure codes reported per batch item, in pipeline order
OK, NONPOSITIVE_IDLE, EMPTY_ZONE, SINGULAR_CHAIN, EXISTENCE, NO_PICKUP, SUPPLY = range(7)
_ERRORS = {
    NONPOSITIVE_IDLE: DegenerateSupplyError,
    EMPTY_ZONE: DegenerateZoneError,
    SINGULAR_CHAIN: SingularChainError,
    EXISTENCE: InfeasibleRegionError,
    NO_PICKUP: DegenerateSupplyError,
    SUPPLY: InfeasibleSupplyError,
}
_MESSAGES = {
    NONPOSITIVE_IDLE: "idle drivers must be positive in every zone",
    EMPTY_ZONE: "a zone has no on-demand outflow",
    SINGULAR_CHAIN: "zone chain is (nearly) reducible",
    EXISTENCE: "effective idle supply has no feasible solution (existence margin < 0)",
    NO_PICKUP: "no driver can pick up flexible parcels in a zone that has flexible demand",
    SUPPLY: "required drivers outside (0, N0)",
}


@dataclass(frozen=True)
class ElementaryVars:
    """Decision vector. ``N_bar`` and ``w_dg`` may be None when they are derived."""

    r_r: np.ndarray
    c_df: np.ndarray
    N_I: np.ndarray
    N_bar: np.ndarray | None = None
    w_dg: np.ndarray | None = None

    def __post_init__(self):
        for k in ("r_r", "c_df", "N_I", "N_bar", "w_dg"):
            v = getattr(self, k)
            if v is not None:
                object.__setattr__(self, k, np.asarray(v, dtype=float))

    def with_(self, **kw) -> "ElementaryVars":
        d = {k: getattr(self, k) for k in ("r_r", "c_df", "N_I", "N_bar", "w_dg")}
        d.update(kw)
        return ElementaryVars(**d)


@dataclass
class EquilibriumState:
    """Every endogenous quantity. Arrays may carry leading batch axes."""

    vars: ElementaryVars
    lambda_r: np.ndarray
    lambda_df: np.ndarray
    lambda_do: np.ndarray
    c_r: np.ndarray
    c_do: np.ndarray
    w_r: np.ndarray
    w_I: np.ndarray
    w_df: np.ndarray
    t_df: np.ndarray
    r_df: np.ndarray
    N_bar: np.ndarray
    w_dg: np.ndarray
    tbar_g: np.ndarray
    rates: object
    ctmc: _ctmc.CtmcSolution
    zone_chain: ZoneChain
    N_Ig: np.ndarray
    required_drivers: np.ndarray
    q: np.ndarray
    revenue: np.ndarray
    labor_cost: np.ndarray
    profit: np.ndarray
    residual_idle: np.ndarray
    residual_wait: np.ndarray
    margin: np.ndarray
    ok: np.ndarray
    code: np.ndarray
    t: np.ndarray = field(repr=False, default=None)
    params: MarketParams = field(repr=False, default=None)

    @property
    def residuals(self) -> dict:
        """Named constraint residuals in max norm."""
        return {
            "idle_supply_fixed_point": np.max(np.abs(self.residual_idle), axis=-1),
            "pickup_wait": np.max(np.abs(self.residual_wait), axis=-1),
            "balance": self.ctmc.residual,
            "conservation": conservation_check(self),
        }


def _rhs_pieces(net, params, up, N_bar, w_dg, solve_wait):
    """Part of the pipeline that depends on the effective idle supply.

    ``up`` holds upstream arrays; ``N_bar`` may carry one more axis than they do
    (batched trial points), in which case upstream per-zone arrays are expanded.
    """
    extra = N_bar.ndim - up["N_I"].ndim
    def x(a, core):
        a = np.asarray(a)
        if extra == 0:
            return a
        b = a.shape[: a.ndim - core]
        return a.reshape(b + (1,) * extra + a.shape[a.ndim - core:])
    N_I, w_I, out_flex = x(up["N_I"], 1), x(up["w_I"], 1), x(up["out_flex"], 1)
    inbound, lam_df, P = x(up["inbound"], 1), x(up["lambda_df"], 2), x(up["P"], 2)
    tbar = square_root_time(net.L, N_bar)
    if solve_wait:
        w_dg = pickup_wait(N_bar, out_flex, w_I, tbar, params.dist)
    else:
        w_dg = np.where(out_flex > 0, w_dg, np.inf)
    rates = success_rates(net.tg, w_I, tbar, w_dg, lam_df, params.Ca, params.dist)
    hold = _ctmc.holding_times(rates.p_pick_n, rates.p_drop_n, w_I, net.tg, w_dg, tbar)
    sol = _ctmc.solve_ctmc(P, rates.p_pick_n, rates.p_drop_n, hold, N_I)
    rhs = _ctmc.idle_supply_rhs(N_I, net.tg, inbound, sol.pi, rates.p_flex_n[..., -1])
    return dict(tbar=tbar, w_dg=w_dg, rates=rates, ctmc=sol, rhs=rhs)


def evaluate_batch(
    net: Network,
    params: MarketParams,
    r_r,
    c_df,
    N_I,
    N_bar=None,
    w_dg=None,
    mode: Mode = "approx",
    flexible: bool = True,
) -> EquilibriumState:
    """Run the equilibrium pipeline over a batch.

    ``mode`` selects how the effective idle supply and the pick-up wait are obtained:
    ``"approx"`` truncates the idle-supply relation and solves the wait by bisection,
    ``"given"`` takes both from the arguments, ``"exact"`` solves the idle-supply
    fixed point with the wait re-solved at every iterate. ``flexible=False`` removes
    the flexible alternative from the delivery choice set.
    """
    t = net.t
    r_r = np.asarray(r_r, dtype=float)
    N_I = np.asarray(N_I, dtype=float)
    batch = np.broadcast_shapes(r_r.shape[:-1], N_I.shape[:-1], np.shape(c_df)[:-2])
    M = net.M
    r_r = np.broadcast_to(r_r, batch + (M,))
    N_I = np.broadcast_to(N_I, batch + (M,))
    c_df = np.broadcast_to(np.asarray(c_df, dtype=float), batch + (M, M))
    if not flexible:
        c_df = np.full(batch + (M, M), np.inf)
    code = np.zeros(batch, dtype=int)

    def fail(mask, c):
        code[...] = np.where((code == OK) & mask, c, code)

    fail(~np.all(N_I > 0, axis=-1), NONPOSITIVE_IDLE)
    N_Is = np.where(N_I > 0, N_I, 1.0)
    w_r = net.L / np.sqrt(N_Is)

    fare = r_r[..., :, None] * t
    c_r = params.alpha_r * w_r[..., :, None] + fare
    lambda_r = ride_demand(params.lambda_r0, c_r, params.c_r0, params.eps)
    c_do = params.alpha_d * w_r[..., :, None] + params.pd(t) + fare
    lambda_df, lambda_do = delivery_split(params.lambda_d0, c_df, c_do, params.c_d0, params.eta)

    flow = lambda_r + lambda_do
    out = flow.sum(axis=-1)
    fail(~np.all(out > 0, axis=-1), EMPTY_ZONE)
    w_I = N_Is / np.where(out > 0, out, 1.0)
    P = zone_transition_matrix(lambda_r, lambda_do, allow_empty=True)
    S = transit_times(w_I, t)
    ET = first_passage_times(P, S, check=False)
    fail(~first_passage_check(ET, S), SINGULAR_CHAIN)
    ET = np.where(np.isfinite(ET), ET, np.inf)
    chain = ZoneChain(P, S, ET)

    inbound = lambda_df.sum(axis=-2)
    out_flex = lambda_df.sum(axis=-1)
    up = dict(N_I=N_Is, w_I=w_I, out_flex=out_flex, inbound=inbound, lambda_df=lambda_df, P=P)

    # with no effective idle supply nobody can pick up, so no driver ever carries a parcel
    # and the idle-supply right-hand side reduces to this margin
    margin = N_Is - net.tg * inbound

    if mode == "approx":
        Nb = np.maximum(N_Is - net.tg * inbound, N_BAR_FLOOR)
        pieces = _rhs_pieces(net, params, up, Nb, None, True)
    elif mode == "given":
        if N_bar is None or w_dg is None:
            raise ValueError("mode 'given' needs N_bar and w_dg")
        Nb = np.broadcast_to(np.asarray(N_bar, dtype=float), batch + (M,))
        wd = np.broadcast_to(np.asarray(w_dg, dtype=float), batch + (M,))
        pieces = _rhs_pieces(net, params, up, Nb, wd, False)
    elif mode == "exact":
        fail(~np.all(margin >= 0, axis=-1), EXISTENCE)
        x0 = np.clip(N_Is - net.tg * inbound, 0.0, N_Is) if N_bar is None else N_bar
        # points failing the existence condition have no fixed point; don't wait on them
        Nb, _, _ = _ctmc.damped_fixed_point(
            lambda xx: _rhs_pieces(net, params, up, xx, None, True)["rhs"], x0, 0.0, N_Is,
            active=np.all(margin >= 0, axis=-1),
        )
        pieces = _rhs_pieces(net, params, up, Nb, None, True)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    rates, sol, tbar, wd = pieces["rates"], pieces["ctmc"], pieces["tbar"], pieces["w_dg"]
    residual_idle = Nb - pieces["rhs"]
    with np.errstate(invalid="ignore", divide="ignore"):
        target = rates.p_pick_succ * Nb / out_flex
    residual_wait = np.where(out_flex > 0, wd - target, 0.0)

    t_df = flexible_delivery_time(ET, rates.p_drop_succ)
    N_Ig = _ctmc.flexible_pickup_supply(N_Is, sol.pi, rates.p_pick_n)
    w_df = square_root_time(net.L, N_Ig)
    has_flex = lambda_df > 0
    fail(np.any(has_flex & ~np.isfinite(w_df)[..., :, None], axis=(-1, -2)), NO_PICKUP)
    with np.errstate(invalid="ignore"):
        r_df = c_df - params.alpha_d * w_df[..., :, None] - params.pd(t_df)

    required = np.sum(flow * (t + w_r[..., :, None]), axis=(-1, -2)) + N_Is.sum(axis=-1)
    fail(~((required > 0) & (required < params.N0)), SUPPLY)
    Nreq = np.clip(required, 1e-300, params.N0 * (1 - 1e-16))
    q = params.q0 + np.log(Nreq / (params.N0 - Nreq)) / params.sigma

    ok = code == OK
    state = EquilibriumState(
        vars=ElementaryVars(r_r, c_df, N_I, Nb, wd),
        lambda_r=lambda_r, lambda_df=lambda_df, lambda_do=lambda_do, c_r=c_r, c_do=c_do,
        w_r=w_r, w_I=w_I, w_df=w_df, t_df=t_df, r_df=r_df, N_bar=Nb, w_dg=wd, tbar_g=tbar,
        rates=rates, ctmc=sol, zone_chain=chain, N_Ig=N_Ig, required_drivers=required, q=q,
        revenue=None, labor_cost=None, profit=None,
        residual_idle=residual_idle, residual_wait=residual_wait, margin=margin,
        ok=ok, code=code, t=t, params=params,
    )
    state.revenue, state.labor_cost = _profit_parts(state)
    state.profit = np.where(ok, state.revenue - state.labor_cost, -np.inf)
    return state


def _profit_parts(state):
    flow = state.lambda_r + state.lambda_do
    ride = np.sum(state.vars.r_r[..., :, None] * state.t * flow, axis=(-1, -2))
    with np.errstate(invalid="ignore"):
        flex = np.sum(np.where(state.lambda_df > 0, state.r_df * state.lambda_df, 0.0), axis=(-1, -2))
    labor = state.required_drivers * state.q / 60.0
    return ride + flex, labor


def profit(state: EquilibriumState):
    """Platform profit in $/min: fares from rides and parcels minus wages paid to all working drivers."""
    rev, labor = _profit_parts(state)
    return rev - labor


def conservation_check(state: EquilibriumState):
    """Working drivers implied by the wage minus drivers needed to serve the flows."""
    from .model import driver_supply

    flow = state.lambda_r + state.lambda_do
    need = np.sum(flow * (state.t + state.w_r[..., :, None] + state.w_I[..., :, None]), axis=(-1, -2))
    # wage is only meaningful where the state is feasible; elsewhere report NaN
    p = state.params
    supplied = driver_supply(state.q, p.q0, p.sigma, p.N0)
    return np.where(state.ok, supplied - need, np.nan)


def check_existence(state: EquilibriumState):
    """Per-zone existence margin of the effective idle supply and whether it holds."""
    return state.margin >= 0, state.margin


def raise_for(state: EquilibriumState):
    """Raise the ``ModelError`` matching the first failure of an unbatched state."""
    c = int(state.code)
    if c == OK:
        return
    zone = None
    if c == NONPOSITIVE_IDLE:
        zone = int(np.argmin(state.vars.N_I))
    elif c == EXISTENCE:
        zone = int(np.argmin(state.margin))
    elif c == EMPTY_ZONE:
        zone = int(np.argmin((state.lambda_r + state.lambda_do).sum(axis=-1)))
    elif c == NO_PICKUP:
        zone = int(np.argmin(state.N_Ig))
    raise _ERRORS[c](_MESSAGES[c], zone=zone)


def evaluate(vars: ElementaryVars, net: Network, params: MarketParams, mode: Mode | None = None,
             flexible: bool = True) -> EquilibriumState:
    """Single-point equilibrium. Uses ``mode='given'`` when both N_bar and w_dg are supplied."""
    if mode is None:
        mode = "given" if vars.N_bar is not None and vars.w_dg is not None else "approx"
    st = evaluate_batch(net, params, vars.r_r, vars.c_df, vars.N_I, vars.N_bar, vars.w_dg, mode=mode,
                        flexible=flexible)
    raise_for(st)
    return st
