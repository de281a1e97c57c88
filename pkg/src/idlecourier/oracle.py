"""Seeded Monte Carlo counterparts of the analytic chain, passage and race quantities.

Each replication draws from its own ``PCG64`` stream spawned from one
``SeedSequence``, so results are a pure function of inputs and seed. Within a
replication many walkers advance in lock-step as numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DistributionSpec


@dataclass(frozen=True)
class SimConfig:
    """``horizon`` is the total number of events (chain) or walks (passage, delivery, race)."""

    seed: int = 0
    horizon: int = 100_000
    replications: int = 8
    warmup: float = 0.1
    walkers: int = 1000

    def __post_init__(self):
        if self.horizon <= 0 or self.replications < 1:
            raise ValueError("horizon must be positive and replications >= 1")
        if not 0 <= self.warmup < 1:
            raise ValueError("warmup must be a fraction in [0, 1)")

    def streams(self):
        return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(self.seed).spawn(self.replications)]


@dataclass
class Estimate:
    mean: np.ndarray
    se: np.ndarray
    n: int


def _combine(per_rep, weights=None):
    per_rep = np.asarray(per_rep, dtype=float)
    R = per_rep.shape[0]
    mean = per_rep.mean(axis=0) if weights is None else np.average(per_rep, axis=0, weights=weights)
    se = per_rep.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full(mean.shape, np.nan)
    return mean, se


def _next_index(rng, cum, rows):
    """Sample a column from each selected row of a cumulative-probability matrix."""
    u = rng.random(rows.shape[0])
    return np.minimum((u[:, None] > cum[rows]).sum(axis=1), cum.shape[1] - 1)


def simulate_ctmc(Pc, hold, cfg: SimConfig, start=0, min_steps: int = 2000) -> Estimate:
    """Time-weighted occupancy of a CTMC given its jump matrix and mean holding times.

    Walkers are capped so that each one makes at least ``min_steps`` jumps;
    short walks from a fixed start state would not forget it.
    """
    Pc = np.asarray(Pc, dtype=float)
    hold = np.asarray(hold, dtype=float)
    S = Pc.shape[0]
    cum = np.cumsum(Pc, axis=1)
    per_rep = []
    events_per_rep = max(cfg.horizon // cfg.replications, 1)
    W = int(np.clip(events_per_rep // min_steps, 1, cfg.walkers))
    steps = max(events_per_rep // W, 1)
    burn = int(cfg.warmup * steps)
    for rng in cfg.streams():
        state = np.full(W, start)
        occ = np.zeros(S)
        for k in range(steps):
            dur = rng.exponential(hold[state])
            if k >= burn:
                occ += np.bincount(state, weights=dur, minlength=S)
            state = _next_index(rng, cum, state)
        per_rep.append(occ / occ.sum())
    mean, se = _combine(per_rep)
    return Estimate(mean, se, W * steps * cfg.replications)


def _walk(P, S, origin, dest, cfg: SimConfig, p_drop=None, max_steps=100_000):
    """Shared walker loop; with ``p_drop`` arrivals at ``dest`` succeed only with that probability."""
    P = np.asarray(P, dtype=float)
    S = np.asarray(S, dtype=float)
    cum = np.cumsum(P, axis=1)
    n = max(cfg.horizon // cfg.replications, 1)
    per_rep = []
    for rng in cfg.streams():
        z = np.full(n, origin)
        t = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        if p_drop is not None and origin == dest:
            # the parcel is already in its destination zone: first attempt at pick-up time
            alive &= rng.random(n) >= p_drop
        for _ in range(max_steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            zi = z[idx]
            nxt = _next_index(rng, cum, zi)
            t[idx] += rng.exponential(S[zi, nxt])
            z[idx] = nxt
            arrived = nxt == dest
            if p_drop is not None:
                arrived &= rng.random(idx.size) < p_drop
            alive[idx[arrived]] = False
        else:
            raise RuntimeError("walkers did not reach the destination; is it reachable?")
        per_rep.append(t.mean())
    mean, se = _combine(per_rep)
    return Estimate(mean, se, n * cfg.replications)


def simulate_first_passage(P, S, origin: int, dest: int, cfg: SimConfig) -> Estimate:
    """Mean first-arrival time at ``dest`` (first return when ``origin == dest``)."""
    return _walk(P, S, origin, dest, cfg)


def simulate_delivery(P, S, p_drop, origin: int, dest: int, cfg: SimConfig) -> Estimate:
    """Mean pick-up-to-delivery time with a Bernoulli drop-off attempt at every visit to ``dest``."""
    p = float(np.asarray(p_drop)[dest]) if np.ndim(p_drop) else float(p_drop)
    if not p > 0:
        raise ValueError("drop-off probability at the destination must be positive")
    return _walk(P, S, origin, dest, cfg, p_drop=p)


def simulate_race(dist: DistributionSpec, means: dict, cfg: SimConfig) -> dict:
    """Empirical probabilities of the three races against the on-demand match time.

    ``means`` holds ``w_I``, ``t_g``, ``tbar_g`` and ``w_dg``. Returns estimates for
    ``drop`` (drop-off first), ``pick_w`` (parcel assignment first) and ``pick_t``
    (pick-up trip first).
    """
    n = max(cfg.horizon // cfg.replications, 1)
    wI, tg, tb, wd = (float(means[k]) for k in ("w_I", "t_g", "tbar_g", "w_dg"))
    per_rep = []
    for rng in cfg.streams():
        if dist.family == "exponential":
            WI = rng.exponential(wI, n)
            Tg = rng.exponential(tg, n)
            Tb = rng.exponential(tb, n)
            Wd = rng.exponential(wd, n)
        else:
            sI, sd, sb = dist.sigma_wI, dist.sigma_wdg, dist.sigma_tbar
            rw, rt = dist.rho_w, dist.rho_t
            # log W_dg and log T_bar are conditionally independent given log W_I
            C = np.array([[1.0, rw, rt], [rw, 1.0, rw * rt], [rt, rw * rt, 1.0]])
            Z = rng.multivariate_normal(np.zeros(3), C, size=n, method="cholesky" if np.all(np.linalg.eigvalsh(C) > 0) else "eigh")
            WI = np.exp(np.log(wI) - sI**2 / 2 + sI * Z[:, 0])
            Wd = np.exp(np.log(wd) - sd**2 / 2 + sd * Z[:, 1])
            Tb = np.exp(np.log(tb) - sb**2 / 2 + sb * Z[:, 2])
            Tg = np.exp(np.log(tg) - dist.sigma_tg**2 / 2 + dist.sigma_tg * rng.standard_normal(n))
        per_rep.append([np.mean(Tg < WI), np.mean(Wd < WI), np.mean(Tb < WI)])
    mean, se = _combine(per_rep)
    if cfg.replications == 1:
        se = np.sqrt(mean * (1 - mean) / n)
    return {k: Estimate(mean[i], se[i], n * cfg.replications) for i, k in enumerate(("drop", "pick_w", "pick_t"))}
