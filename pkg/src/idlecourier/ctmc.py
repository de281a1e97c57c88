"""Driver state chain over (zone, carried flexible parcels) and the flexible pick-up supply it implies.

State ``(z, n)`` has flat index ``z * (Ca + 1) + n``. All routines accept leading
batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRatesError

BALANCE_TOL = 1e-8


@dataclass(frozen=True)
class CtmcSolution:
    """Solved driver chain. ``pi`` and ``N_state`` have shape (..., M, Ca + 1)."""

    Pc: np.ndarray
    hold: np.ndarray
    pi: np.ndarray
    N_state: np.ndarray
    residual: np.ndarray
    reducible: np.ndarray

    @property
    def states(self):
        M, K = self.pi.shape[-2:]
        return [(z, n) for z in range(M) for n in range(K)]

    @property
    def rate(self):
        return 1.0 / self.hold


def build_transitions(P_zone, p_pick_n, p_drop_n, check: bool = True):
    """Jump-chain transition matrix of the driver CTMC.

    From ``(z, n)``: pick up to ``(z, n+1)``, drop off to ``(z, n-1)``, otherwise
    take an on-demand order and move to zone ``z'`` with ``P_zone[z, z']``.
    """
    P_zone = np.asarray(P_zone, dtype=float)
    pick = np.asarray(p_pick_n, dtype=float)
    drop = np.asarray(p_drop_n, dtype=float)
    stay = 1.0 - pick - drop
    if check and np.any(stay < -1e-12):
        z, n = np.argwhere(stay < -1e-12)[0][-2:]
        raise InvalidRatesError(f"pick + drop exceeds one in state ({z}, {n})", zone=int(z))
    stay = np.maximum(stay, 0.0)
    M, K = pick.shape[-2:]
    eyeM, eyeK = np.eye(M), np.eye(K)
    T = stay[..., :, :, None, None] * P_zone[..., :, None, :, None] * eyeK[None, :, None, :]
    T = T + pick[..., :, :, None, None] * eyeM[:, None, :, None] * np.eye(K, k=1)[None, :, None, :]
    T = T + drop[..., :, :, None, None] * eyeM[:, None, :, None] * np.eye(K, k=-1)[None, :, None, :]
    return T.reshape(T.shape[:-4] + (M * K, M * K))


def holding_times(p_pick_n, p_drop_n, w_I, t_g, w_dg, tbar_g):
    """Mean sojourn per state: drop-off, pick-up (wait plus trip) or cruise for an order."""
    pick = np.asarray(p_pick_n, dtype=float)
    drop = np.asarray(p_drop_n, dtype=float)
    move = np.maximum(1.0 - pick - drop, 0.0)
    pick_time = (np.asarray(w_dg, dtype=float) + np.asarray(tbar_g, dtype=float))[..., None]
    with np.errstate(invalid="ignore"):
        pick_term = np.where(pick > 0, pick * pick_time, 0.0)
    return drop * np.asarray(t_g)[..., None] + pick_term + move * np.asarray(w_I)[..., None]


def reachable_from(Pc, start):
    """Boolean mask of states reachable from any ``start`` state along positive edges."""
    A = (np.asarray(Pc) > 0).astype(float)
    reach = np.broadcast_to(np.asarray(start, dtype=bool), A.shape[:-1]).copy()
    for _ in range(A.shape[-1]):
        new = reach | (np.einsum("...s,...st->...t", reach.astype(float), A) > 0)
        if np.array_equal(new, reach):
            break
        reach = new
    return reach


def balance_residual(Pc, hold, pi):
    """Max-norm residual of ``nu_s pi_s = sum_s' nu_s' pi_s' Pc[s', s]``."""
    x = np.asarray(pi) / np.asarray(hold)
    return np.max(np.abs(x - np.einsum("...s,...st->...t", x, Pc)), axis=-1)


def limiting_probabilities(Pc, hold, start=None):
    """Long-run fraction of time in each state.

    States unreachable from ``start`` (default: every empty-vehicle state) get
    zero mass. Returns ``(pi, residual, reducible)``.
    """
    Pc = np.asarray(Pc, dtype=float)
    hold = np.asarray(hold, dtype=float)
    S = Pc.shape[-1]
    if start is None:
        start = np.zeros(S, dtype=bool)
        start[0] = True
    reach = reachable_from(Pc, start)
    nu = 1.0 / hold
    G = (np.eye(S) - np.swapaxes(Pc, -1, -2)) * nu[..., None, :]
    G = np.where(reach[..., :, None], G, np.eye(S))
    G[..., 0, :] = np.where(reach, 1.0, 0.0)
    b = np.zeros(G.shape[:-1])
    b[..., 0] = 1.0
    try:
        pi = np.linalg.solve(G, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        pi = np.stack([np.linalg.lstsq(g, bb, rcond=None)[0] for g, bb in zip(G.reshape(-1, S, S), b.reshape(-1, S))])
        pi = pi.reshape(b.shape)
    pi = np.where(reach, np.maximum(pi, 0.0), 0.0)
    pi = pi / pi.sum(axis=-1, keepdims=True)
    residual = balance_residual(Pc, hold, pi)
    reducible = ~np.all(reach, axis=-1)
    return pi, residual, reducible


def zone_conditional(pi):
    """``pi[z, n] / sum_n pi[z, n]``, with zero rows left at zero."""
    tot = pi.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = pi / tot
    return np.where(tot > 0, c, 0.0)


def solve_ctmc(P_zone, p_pick_n, p_drop_n, hold, N_I) -> CtmcSolution:
    """Build, solve and distribute idle drivers over states."""
    M, K = np.shape(p_pick_n)[-2:]
    Pc = build_transitions(P_zone, p_pick_n, p_drop_n)
    hold_flat = np.asarray(hold).reshape(np.shape(hold)[:-2] + (M * K,))
    start = np.zeros(M * K, dtype=bool)
    start[::K] = True
    pi, res, red = limiting_probabilities(Pc, hold_flat, start)
    pi = pi.reshape(pi.shape[:-1] + (M, K))
    N_state = np.asarray(N_I)[..., None] * zone_conditional(pi)
    return CtmcSolution(Pc, np.asarray(hold), pi, N_state, res, red)


def flexible_pickup_supply(N_I, pi, p_pick_n):
    """Idle drivers per zone who can successfully take a flexible pick-up."""
    return np.sum(np.asarray(N_I)[..., None] * zone_conditional(np.asarray(pi)) * p_pick_n, axis=-1)


def idle_supply_rhs(N_I, t_g, inbound_flex, pi, p_flex_Ca):
    """Idle drivers minus those busy dropping off and those full with no local drop-off."""
    full = zone_conditional(np.asarray(pi))[..., -1]
    return N_I - t_g * inbound_flex - N_I * full * (1.0 - p_flex_Ca)


def damped_fixed_point(F, x0, lo, hi, damping=0.5, tol=1e-8, max_iter=500, bisect_sweeps=40, active=None):
    """Solve ``x = F(x)`` over a batch of vectors kept in ``[lo, hi]``.

    Damped Picard iteration first. Batch items that fail to converge fall back to
    simultaneous per-coordinate bisection on ``x_i - F(x)_i`` followed by another
    Picard pass. Returns ``(x, residual, converged)`` with residual in max norm.
    ``active`` (batch-shaped bool) limits the stopping test to items known to have
    a fixed point; the others are iterated along but never hold up the batch.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    active = np.ones(x.shape[:-1], dtype=bool) if active is None else np.broadcast_to(active, x.shape[:-1])

    def done(r):
        return np.all((r <= tol) | ~active)

    for _ in range(max_iter):
        fx = F(x)
        r = np.max(np.abs(x - fx), axis=-1)
        if done(r):
            return x, r, r <= tol
        x = np.clip((1.0 - damping) * x + damping * fx, lo, hi)
    r = np.max(np.abs(x - F(x)), axis=-1)
    if done(r):
        return x, r, r <= tol
    M = x.shape[-1]
    eye = np.eye(M, dtype=bool)
    a = np.broadcast_to(lo, x.shape).copy()
    b = np.broadcast_to(hi, x.shape).copy()
    for _ in range(bisect_sweeps):
        mid = 0.5 * (a + b)
        # row i of the trial batch swaps coordinate i for its midpoint
        trial = np.where(eye, mid[..., None, :], x[..., None, :])
        g = np.diagonal(trial - F(trial), axis1=-2, axis2=-1)
        b = np.where(g > 0, mid, b)
        a = np.where(g > 0, a, mid)
        x = 0.5 * (a + b)
    for _ in range(max_iter):
        fx = F(x)
        r = np.max(np.abs(x - fx), axis=-1)
        if done(r):
            break
        x = np.clip((1.0 - damping) * x + damping * fx, lo, hi)
    r = np.max(np.abs(x - F(x)), axis=-1)
    return x, r, r <= tol
