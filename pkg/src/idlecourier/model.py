"""Exogenous data model plus the demand, supply and cost functions of the market.

Units: times in minutes, money in dollars, arrival rates in orders per minute,
wages in dollars per hour. All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Literal

import numpy as np
from scipy.special import expit

from .errors import InfeasibleSupplyError


@dataclass(frozen=True)
class DisutilityParams:
    """Delivery-time disutility p_d(t) = a * (tanh(t / s - b) + 1)."""

    a: float = 25.0
    s: float = 200.0
    b: float = 5.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * (np.tanh(t / self.s - self.b) + 1.0)


@dataclass(frozen=True)
class DistributionSpec:
    """Distribution family of the races that decide flexible pick-up/drop-off success.

    For the log-normal family each ``sigma_*`` is the std. dev. of the log of
    the corresponding time; ``rho_w`` correlates log W^I with log W^dg and
    ``rho_t`` correlates log W^I with log of the pick-up travel time.
    """

    family: Literal["lognormal", "exponential"] = "lognormal"
    sigma_wI: float = 0.5
    sigma_tg: float = 0.5
    sigma_wdg: float = 0.5
    sigma_tbar: float = 0.5
    rho_w: float = 0.0
    rho_t: float = 0.0

    def __post_init__(self):
        if self.family not in ("lognormal", "exponential"):
            raise ValueError(f"unknown distribution family {self.family!r}")
        if self.family == "lognormal":
            for name in ("sigma_wI", "sigma_tg", "sigma_wdg", "sigma_tbar"):
                if getattr(self, name) <= 0:
                    raise ValueError(f"{name} must be positive")
            for name in ("rho_w", "rho_t"):
                if abs(getattr(self, name)) > 1:
                    raise ValueError(f"{name} must lie in [-1, 1]")
            for sa, sb, rho in (
                (self.sigma_wdg, self.sigma_wI, self.rho_w),
                (self.sigma_tbar, self.sigma_wI, self.rho_t),
            ):
                if sa**2 + sb**2 - 2 * rho * sa * sb <= 0:
                    raise ValueError("degenerate log-normal race: zero variance of the log difference")


@dataclass(frozen=True)
class Network:
    """Zone network: travel times ``t`` (M x M), matching constants ``L`` and drop-off times ``tg``."""

    t: np.ndarray
    L: np.ndarray
    tg: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        M = t.shape[0]
        L = np.broadcast_to(np.asarray(self.L, dtype=float), (M,)).copy()
        tg = np.broadcast_to(np.asarray(self.tg, dtype=float), (M,)).copy()
        if t.ndim != 2 or t.shape != (M, M) or M < 1:
            raise ValueError("t must be a square matrix with M >= 1")
        if np.any(t <= 0) or np.any(L <= 0) or np.any(tg <= 0):
            raise ValueError("travel times, L and tg must all be positive")
        for arr in (t, L, tg):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "tg", tg)
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i + 1) for i in range(M)))

    @property
    def M(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class MarketParams:
    """All exogenous market parameters. Matrices are M x M, row = origin."""

    lambda_r0: np.ndarray
    lambda_d0: np.ndarray
    c_r0: np.ndarray
    c_d0: np.ndarray
    N0: float = 10000.0
    eps: float = 0.12
    eta: float = 0.16
    sigma: float = 0.18
    q0: float = 29.0
    alpha_r: float = 3.2
    alpha_d: float = 0.7
    w_max: float = 6.0
    Ca: int = 3
    dist: DistributionSpec = field(default_factory=DistributionSpec)
    pd: DisutilityParams = field(default_factory=DisutilityParams)

    def __post_init__(self):
        for name in ("lambda_r0", "lambda_d0", "c_r0", "c_d0"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.lambda_r0 < 0) or np.any(self.lambda_d0 < 0):
            raise ValueError("potential arrival rates must be non-negative")
        if min(self.eps, self.eta, self.sigma) <= 0:
            raise ValueError("logit sensitivities must be positive")
        if not self.alpha_d < self.alpha_r:
            raise ValueError("delivery value of time must be below the passenger one")
        if int(self.Ca) != self.Ca or self.Ca < 1:
            raise ValueError("vehicle parcel capacity Ca must be an integer >= 1")
        if self.N0 <= 0 or self.w_max <= 0:
            raise ValueError("N0 and w_max must be positive")

    def replace(self, **changes) -> "MarketParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return MarketParams(**d)


def outside_costs(t, kappa):
    """Outside-option costs proportional to travel time."""
    return kappa * np.asarray(t, dtype=float)


def ride_cost(w_r, r_r, t, alpha_r):
    """Generalized passenger cost: value of waiting time plus fare."""
    return alpha_r * np.asarray(w_r) + np.asarray(r_r) * np.asarray(t)


def delivery_costs(w_df, t_df, r_df, w_r, t, r_r, alpha_d, pd):
    """Generalized costs of (flexible, on-demand) delivery.

    ``r_df`` is a per-parcel fare, ``r_r`` the per-minute fare shared with rides.
    """
    c_df = alpha_d * np.asarray(w_df) + pd(t_df) + np.asarray(r_df)
    c_do = alpha_d * np.asarray(w_r) + pd(t) + np.asarray(r_r) * np.asarray(t)
    return c_df, c_do


def ride_demand(lambda0, c, c0, eps):
    """Binary logit demand for rides against the outside option."""
    return np.asarray(lambda0) * expit(-eps * (np.asarray(c) - np.asarray(c0)))


def delivery_split(lambda0, c_df, c_do, c_d0, eta):
    """Three-way logit over (flexible, on-demand, outside).

    Returns the (flexible, on-demand) arrival rates. An infinite ``c_df``
    removes the flexible alternative.
    """
    u = -eta * np.stack(np.broadcast_arrays(c_df, c_do, c_d0)).astype(float)
    u_max = np.max(np.where(np.isfinite(u), u, -np.inf), axis=0)
    e = np.exp(u - u_max)
    share = e / e.sum(axis=0)
    lam0 = np.asarray(lambda0)
    return lam0 * share[0], lam0 * share[1]


def driver_supply(q, q0, sigma, N0):
    """Logit driver supply N0 * F_d(q)."""
    return N0 * expit(sigma * (np.asarray(q) - q0))


def invert_wage(N_required, N0, sigma, q0):
    """Wage ($/hr) at which exactly ``N_required`` drivers choose to work."""
    N = np.asarray(N_required, dtype=float)
    if np.any(~(N > 0)) or np.any(~(N < N0)):
        raise InfeasibleSupplyError(
            f"required drivers {np.min(N):.6g}..{np.max(N):.6g} outside (0, {N0})"
        )
    return q0 + np.log(N / (N0 - N)) / sigma


def params_to_dict(params: MarketParams) -> dict:
    out = {}
    for k in params.__dataclass_fields__:
        v = getattr(params, k)
        if isinstance(v, np.ndarray):
            out[k] = v.tolist()
        elif isinstance(v, (DistributionSpec, DisutilityParams)):
            out[k] = asdict(v)
        else:
            out[k] = v
    return out


def params_from_dict(d: dict) -> MarketParams:
    d = dict(d)
    if "dist" in d:
        d["dist"] = DistributionSpec(**d["dist"])
    if "pd" in d:
        d["pd"] = DisutilityParams(**d["pd"])
    return MarketParams(**d)


def network_to_dict(net: Network) -> dict:
    return {"M": net.M, "names": list(net.names), "t": net.t.tolist(), "L": net.L.tolist(), "tg": net.tg.tolist()}


def network_from_dict(d: dict) -> Network:
    net = Network(t=np.array(d["t"], dtype=float), L=d["L"], tg=d["tg"], names=tuple(d.get("names", ())))
    if "M" in d and d["M"] != net.M:
        raise ValueError(f"declared M={d['M']} does not match matrix size {net.M}")
    return net
