"""Matching frictions: square-root waiting times and flexible pick-up/drop-off success rates.

Every function broadcasts over leading batch axes. Per-zone quantities live on the
last axis; per-(zone, carried count) tables on the last two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateSupplyError
from .model import DistributionSpec


def waiting_time_ondemand(L, N_I):
    """Square-root law ``L / sqrt(N_I)``; raises on non-positive supply."""
    N_I = np.asarray(N_I, dtype=float)
    bad = ~(N_I > 0)
    if np.any(bad):
        zone = int(np.flatnonzero(bad.ravel())[0] % N_I.shape[-1]) if N_I.ndim else None
        raise DegenerateSupplyError(f"idle supply must be positive, got {N_I.ravel()[bad.ravel()][0]}", zone=zone)
    return np.asarray(L) / np.sqrt(N_I)


def square_root_time(L, N):
    """Square-root law that maps non-positive supply to an infinite time instead of raising."""
    N = np.asarray(N, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray(L) / np.sqrt(np.maximum(N, 0.0))
    return np.where(N > 0, out, np.inf)


def _lognormal_race(fast, slow, s_fast, s_slow, rho=0.0):
    """P(X < Y) for log-normals with means ``fast`` (X) and ``slow`` (Y)."""
    fast = np.asarray(fast, dtype=float)
    slow = np.asarray(slow, dtype=float)
    scale = np.sqrt(s_fast**2 + s_slow**2 - 2.0 * rho * s_fast * s_slow)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (np.log(slow) - 0.5 * s_slow**2 - np.log(fast) + 0.5 * s_fast**2) / scale
    # inf - inf only occurs when both times are infinite or both zero; call that a coin flip
    z = np.where(np.isnan(z), 0.0, z)
    return ndtr(z)


def _exp_race(fast, slow):
    """P(X < Y) for independent exponentials with means ``fast`` and ``slow``."""
    fast = np.asarray(fast, dtype=float)
    slow = np.asarray(slow, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = slow / (fast + slow)
    p = np.where(np.isinf(slow) & np.isfinite(fast), 1.0, p)
    p = np.where(np.isinf(fast) & np.isfinite(slow), 0.0, p)
    return np.where(np.isnan(p), 0.5, p)


def success_drop(t_g, w_I, dist: DistributionSpec):
    """Probability that a drop-off (mean ``t_g``) finishes before the next on-demand match (mean ``w_I``)."""
    if dist.family == "exponential":
        return _exp_race(t_g, w_I)
    return _lognormal_race(t_g, w_I, dist.sigma_tg, dist.sigma_wI)


def success_pick(tbar_g, w_dg, w_I, dist: DistributionSpec):
    """Pick-up success as ``(p_total, p_w, p_t)``.

    ``p_w`` is the chance the parcel assignment wait beats the on-demand match,
    ``p_t`` the chance the trip to the parcel does. The total is their product.
    """
    if dist.family == "exponential":
        p_w = _exp_race(w_dg, w_I)
        p_t = _exp_race(tbar_g, w_I)
    else:
        p_w = _lognormal_race(w_dg, w_I, dist.sigma_wdg, dist.sigma_wI, dist.rho_w)
        p_t = _lognormal_race(tbar_g, w_I, dist.sigma_tbar, dist.sigma_wI, dist.rho_t)
    return p_w * p_t, p_w, p_t


def p_flex(dest_share, n):
    """Chance that at least one of ``n`` carried parcels is bound for the current zone."""
    return 1.0 - (1.0 - np.asarray(dest_share, dtype=float)) ** np.asarray(n)


def destination_shares(lambda_df):
    """Share of flexible parcels destined to each zone; zero everywhere if there are none."""
    lambda_df = np.asarray(lambda_df, dtype=float)
    inbound = lambda_df.sum(axis=-2)
    total = inbound.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = inbound / total
    return np.where(total > 0, share, 0.0)


@dataclass(frozen=True)
class SuccessRates:
    """Per-zone success probabilities and per-(zone, count) event probabilities."""

    p_drop_succ: np.ndarray
    p_pick_succ_w: np.ndarray
    p_pick_succ_t: np.ndarray
    p_pick_n: np.ndarray
    p_drop_n: np.ndarray
    p_flex_n: np.ndarray

    @property
    def p_pick_succ(self):
        return self.p_pick_succ_w * self.p_pick_succ_t

    @property
    def Ca(self) -> int:
        return self.p_pick_n.shape[-1] - 1


def pick_drop_by_count(p_pick_succ, p_drop_succ, p_flex_n, Ca: int):
    """Tables of pick-up and drop-off probabilities by carried count.

    ``p_flex_n`` has trailing length ``Ca + 1``; the per-zone inputs broadcast
    against its leading axes. Returns ``(p_pick_n, p_drop_n)``.
    """
    p_flex_n = np.asarray(p_flex_n, dtype=float)
    if p_flex_n.shape[-1] != Ca + 1:
        raise ValueError(f"p_flex_n needs trailing length {Ca + 1}")
    pick = np.asarray(p_pick_succ, dtype=float)[..., None] * (1.0 - p_flex_n)
    pick[..., 0] = np.broadcast_to(p_pick_succ, pick.shape[:-1])
    pick[..., Ca] = 0.0
    drop = np.asarray(p_drop_succ, dtype=float)[..., None] * p_flex_n
    drop[..., 0] = 0.0
    return pick, drop


def success_rates(t_g, w_I, tbar_g, w_dg, lambda_df, Ca: int, dist: DistributionSpec) -> SuccessRates:
    """Assemble every success probability for one market state."""
    p_drop = success_drop(t_g, w_I, dist)
    p_tot, p_w, p_t = success_pick(tbar_g, w_dg, w_I, dist)
    share = destination_shares(lambda_df)
    pf = p_flex(share[..., None], np.arange(Ca + 1))
    pick_n, drop_n = pick_drop_by_count(p_tot, p_drop, pf, Ca)
    return SuccessRates(p_drop, p_w, p_t, pick_n, drop_n, pf)


def pickup_gap(w, N_bar, lambda_out, w_I, tbar_g, dist: DistributionSpec):
    """Little's-law gap ``w - p_pick(w) * N_bar / lambda_out``; strictly increasing in ``w``."""
    p, _, _ = success_pick(tbar_g, w, w_I, dist)
    with np.errstate(divide="ignore", invalid="ignore"):
        return w - p * np.asarray(N_bar) / np.asarray(lambda_out)


def pickup_wait(N_bar, lambda_out, w_I, tbar_g, dist: DistributionSpec, iters: int = 200):
    """Mean wait of an assigned driver before the parcel pick-up, by vectorised bisection.

    Solves ``w = p_pick(w) * N_bar / lambda_out`` per zone. Zones without
    flexible outflow get ``inf``.
    """
    N_bar, lambda_out, w_I, tbar_g = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (N_bar, lambda_out, w_I, tbar_g))
    )
    active = lambda_out > 0
    lam = np.where(active, lambda_out, 1.0)
    nb = np.where(active, np.maximum(N_bar, 0.0), 0.0)
    # p_pick <= p_t, so the root lies in [0, p_t * N_bar / lambda]
    _, _, p_t = success_pick(tbar_g, np.zeros_like(tbar_g), w_I, dist)
    lo = np.zeros_like(nb)
    hi = p_t * nb / lam
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = pickup_gap(mid, nb, lam, w_I, tbar_g, dist)
        pos = g > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(hi, 1.0)):
            break
    return np.where(active, 0.5 * (lo + hi), np.inf)
