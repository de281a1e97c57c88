"""Synthetic 11-zone city used as the shipped case-study scenario.

Zone centroids, trip-generation weights, residents and registered businesses
are made up to resemble a dense downtown with residential periphery; none of
it is real data. Travel times come from detoured Euclidean distances at a fixed
speed plus a terminal time. ``build_city`` regenerates the shipped JSON.
"""

from __future__ import annotations

import numpy as np

from .model import DistributionSpec, MarketParams, Network
from .scenario import Scenario

ZONES = (
    # name, x (km), y (km), ride trip weight, residents (k), businesses (k)
    ("Financial District", 6.5, 6.0, 10.0, 30.0, 18.0),
    ("SoMa", 6.0, 4.8, 9.0, 40.0, 14.0),
    ("Mission", 5.0, 2.8, 7.0, 60.0, 9.0),
    ("Marina", 3.5, 6.8, 4.0, 45.0, 6.0),
    ("Richmond", 0.8, 5.5, 3.0, 75.0, 5.0),
    ("Sunset", 0.8, 3.0, 3.0, 110.0, 5.0),
    ("Castro", 3.8, 2.8, 4.0, 55.0, 5.0),
    ("Bayview", 6.8, 0.8, 2.0, 40.0, 4.0),
    ("Excelsior", 3.8, 0.3, 2.0, 85.0, 3.0),
    ("Western Addition", 3.5, 4.5, 4.0, 65.0, 6.0),
    ("Nob Hill", 5.5, 6.2, 6.0, 55.0, 8.0),
)


def travel_times(terminal=3.0, min_per_km=2.2, detour=1.3, intra=5.0):
    xy = np.array([(z[1], z[2]) for z in ZONES])
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    t = terminal + min_per_km * detour * d
    np.fill_diagonal(t, intra)
    return t


def ride_potential(t, total):
    """Gravity-style ride potentials ``w_i w_j / t_ij^2`` scaled to ``total`` orders/min."""
    w = np.array([z[3] for z in ZONES])
    lam = w[:, None] * w[None, :] / t**2
    return lam * (total / lam.sum())


def build_city(kappa_r=1.3115, kappa_d=0.3, ride_total=1291.56, ratio=0.4, Ca=3, tg=2.0, L=43.0) -> Scenario:
    t = travel_times()
    M = t.shape[0]
    lam_r0 = ride_potential(t, ride_total)
    params = MarketParams(
        lambda_r0=lam_r0, lambda_d0=np.zeros((M, M)), c_r0=kappa_r * t, c_d0=kappa_d * t,
        N0=10000.0, eps=0.12, eta=0.16, sigma=0.18, q0=29.0, alpha_r=3.2, alpha_d=0.7,
        w_max=6.0, Ca=Ca, dist=DistributionSpec(),
    )
    net = Network(t=t, L=np.full(M, L), tg=np.full(M, tg), names=tuple(z[0] for z in ZONES))
    sc = Scenario(
        net=net, params=params, name="synthetic-city-11", demand_mode="gravity", ratio=ratio,
        pop=np.array([z[4] for z in ZONES]), reg=np.array([z[5] for z in ZONES]),
        kappa_r=kappa_r, kappa_d=kappa_d, sweep=tuple(np.round(np.arange(0, 0.81, 0.1), 10)),
    )
    return sc.at_level(ratio)
