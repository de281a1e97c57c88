"""Scenario files and demand synthesis.

A scenario bundles a ``Network``, ``MarketParams`` and the inputs needed to
regenerate parcel demand at any demand level (delivery-to-ride potential ratio).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np

from .model import (
    MarketParams,
    Network,
    network_from_dict,
    network_to_dict,
    params_from_dict,
    params_to_dict,
)

DemandMode = Literal["explicit", "gravity", "opposite"]


def synthesize_gravity(pop, reg, t, ratio, lambda_r0):
    """Parcel OD potentials from a doubly-weighted gravity model with friction ``1 / t``.

    Orders go from businesses (origin, weight ``reg``) to homes (destination,
    weight ``pop``). The production and attraction coefficients cancel in the
    normalisation, which fixes the total at ``ratio`` times the total ride potential.
    """
    pop = np.asarray(pop, dtype=float)
    reg = np.asarray(reg, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(pop <= 0) or np.any(reg <= 0) or np.any(t <= 0):
        raise ValueError("population, registered businesses and travel times must be positive")
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    F = 1.0 / t
    lam = pop[None, :] * reg[:, None] * F / np.sum(reg[:, None] * F, axis=0, keepdims=True)
    return lam * (ratio * np.sum(lambda_r0) / lam.sum())


def reshuffle_opposite(lambda_r0, ratio):
    """Assign the ride potentials in reverse rank order, scaled to ``ratio`` times the ride total.

    The busiest ride OD pair gets the smallest parcel potential. Ties are broken
    by flat OD index so the map is deterministic.
    """
    lam = np.asarray(lambda_r0, dtype=float)
    flat = lam.ravel()
    order = np.lexsort((np.arange(flat.size), flat))
    out = np.empty_like(flat)
    out[order] = flat[order[::-1]]
    total = flat.sum()
    scale = ratio if total == 0 else ratio * total / out.sum()
    return (out * scale).reshape(lam.shape)


@dataclass(frozen=True)
class Scenario:
    """Network, market parameters and demand-synthesis inputs."""

    net: Network
    params: MarketParams
    name: str = "scenario"
    demand_mode: DemandMode = "explicit"
    ratio: float = 0.0
    pop: np.ndarray | None = None
    reg: np.ndarray | None = None
    kappa_r: float | None = None
    kappa_d: float | None = None
    sweep: tuple = ()
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError("ratio must be non-negative")
        if list(self.sweep) != sorted(self.sweep):
            raise ValueError("sweep levels must be sorted ascending")
        if self.demand_mode == "gravity" and (self.pop is None or self.reg is None):
            raise ValueError("gravity mode needs pop and reg")
        if np.shape(self.params.lambda_r0) != (self.net.M, self.net.M):
            raise ValueError("potential ride demand must be M x M")

    @property
    def M(self) -> int:
        return self.net.M

    def parcel_potential(self, ratio: float):
        if self.demand_mode == "gravity":
            return synthesize_gravity(self.pop, self.reg, self.net.t, ratio, self.params.lambda_r0)
        if self.demand_mode == "opposite":
            return reshuffle_opposite(self.params.lambda_r0, ratio)
        base = self.params.lambda_d0
        s = base.sum()
        if s == 0:
            if ratio > 0:
                raise ValueError("explicit scenario without parcel demand cannot be rescaled")
            return base
        return base * (ratio * self.params.lambda_r0.sum() / s)

    def at_level(self, ratio: float) -> "Scenario":
        """Copy with parcel potentials regenerated at the given demand level."""
        lam = self.parcel_potential(ratio)
        return replace(self, params=self.params.replace(lambda_d0=lam), ratio=float(ratio))

    def with_mode(self, mode: DemandMode) -> "Scenario":
        return replace(self, demand_mode=mode).at_level(self.ratio)

    def without_rides(self) -> "Scenario":
        return replace(self, params=self.params.replace(lambda_r0=np.zeros_like(self.params.lambda_r0)))

    def without_parcels(self) -> "Scenario":
        return replace(self, params=self.params.replace(lambda_d0=np.zeros_like(self.params.lambda_d0)), ratio=0.0)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "network": network_to_dict(self.net),
            "params": params_to_dict(self.params),
            "demand_mode": self.demand_mode,
            "ratio": self.ratio,
            "sweep": list(self.sweep),
            "solver": dict(self.solver),
        }
        if self.pop is not None:
            d["pop"] = np.asarray(self.pop).tolist()
            d["reg"] = np.asarray(self.reg).tolist()
        if self.kappa_r is not None:
            d["kappa_r"] = self.kappa_r
            d["kappa_d"] = self.kappa_d
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        net = network_from_dict(d["network"])
        p = dict(d["params"])
        M = net.M
        kr, kd = d.get("kappa_r"), d.get("kappa_d")
        # outside-option costs may be given as a proportionality constant on travel time
        if "c_r0" not in p:
            if kr is None:
                raise ValueError("need c_r0 or kappa_r")
            p["c_r0"] = kr * net.t
        if "c_d0" not in p:
            if kd is None:
                raise ValueError("need c_d0 or kappa_d")
            p["c_d0"] = kd * net.t
        if "lambda_d0" not in p:
            p["lambda_d0"] = np.zeros((M, M))
        params = params_from_dict(p)
        sc = cls(
            net=net, params=params, name=d.get("name", "scenario"),
            demand_mode=d.get("demand_mode", "explicit"), ratio=float(d.get("ratio", 0.0)),
            pop=None if d.get("pop") is None else np.asarray(d["pop"], dtype=float),
            reg=None if d.get("reg") is None else np.asarray(d["reg"], dtype=float),
            kappa_r=kr, kappa_d=kd, sweep=tuple(d.get("sweep", ())), solver=dict(d.get("solver", {})),
        )
        if sc.demand_mode != "explicit" and "lambda_d0" not in d["params"]:
            sc = sc.at_level(sc.ratio)
        return sc


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return Scenario.from_dict(json.load(f))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(sc.to_dict(), indent=1, sort_keys=True) + "\n")


def default_scenario_path():
    return resources.files("idlecourier") / "data" / "sf11.json"


def default_scenario() -> Scenario:
    """The shipped synthetic 11-zone scenario (gravity parcel demand, level 0.4)."""
    with resources.as_file(default_scenario_path()) as p:
        return load_scenario(p)


def toy_scenario(ratio: float = 0.4, Ca: int = 1, family: str = "lognormal") -> Scenario:
    """Single-zone market, small enough for exhaustive grid checks."""
    from .model import DistributionSpec

    net = Network(t=np.array([[8.0]]), L=np.array([12.0]), tg=np.array([2.0]))
    lam_r0 = np.array([[20.0]])
    params = MarketParams(
        lambda_r0=lam_r0, lambda_d0=np.array([[ratio * 20.0]]), c_r0=1.0 * net.t, c_d0=1.2 * net.t,
        N0=1000.0, Ca=Ca, dist=DistributionSpec(family=family),
    )
    return Scenario(net=net, params=params, name="toy", demand_mode="explicit", ratio=ratio,
                    kappa_r=1.0, kappa_d=1.2)
