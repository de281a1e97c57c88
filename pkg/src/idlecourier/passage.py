"""Idle-driver movement between zones: transition matrix, first-passage times, flexible delivery time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateZoneError, SingularChainError

# drop-off success below this is treated as "never delivers"
P_DROP_FLOOR = 1e-6
# first-passage times beyond this multiple of the largest transit time mean the chain is near-reducible
_BLOWUP = 1e10


@dataclass(frozen=True)
class ZoneChain:
    """One-step zone chain, mean transit times and expected first-passage times."""

    P: np.ndarray
    S: np.ndarray
    ET: np.ndarray


def zone_transition_matrix(lambda_r, lambda_do, allow_empty: bool = False):
    """Row-normalised on-demand flows: where an idle driver's next order takes them.

    Zones without outflow raise ``DegenerateZoneError`` unless ``allow_empty``,
    in which case they get a self-loop.
    """
    flow = np.asarray(lambda_r, dtype=float) + np.asarray(lambda_do, dtype=float)
    out = flow.sum(axis=-1, keepdims=True)
    empty = ~(out > 0)
    if np.any(empty):
        if not allow_empty:
            zone = int(np.flatnonzero(empty.ravel())[0] % flow.shape[-1])
            raise DegenerateZoneError(f"zone {zone} has no on-demand outflow", zone=zone)
        eye = np.broadcast_to(np.eye(flow.shape[-1]), flow.shape)
        flow = np.where(empty, eye, flow)
        out = flow.sum(axis=-1, keepdims=True)
    return flow / out


def transit_times(w_I, t):
    """Mean time from becoming idle in zone i to becoming idle in zone j."""
    return np.asarray(w_I, dtype=float)[..., :, None] + np.asarray(t, dtype=float)


def _solve_passage(P, S):
    M = P.shape[-1]
    m = np.einsum("...ik,...ik->...i", P, S)
    # for destination j, column j of P is removed: A_j = I - P diag(1 - e_j)
    keep = 1.0 - np.eye(M)
    A = np.eye(M) - P[..., None, :, :] * keep[:, None, :]
    rhs = np.broadcast_to(m[..., None, :, None], A.shape[:-1] + (1,))
    try:
        h = np.linalg.solve(A, rhs)[..., 0]
    except np.linalg.LinAlgError:
        flatA = A.reshape((-1, M, M, M))
        flatr = rhs.reshape((-1, M, M, 1))
        h = np.full(flatA.shape[:-1], np.inf)
        for b in range(flatA.shape[0]):
            try:
                h[b] = np.linalg.solve(flatA[b], flatr[b])[..., 0]
            except np.linalg.LinAlgError:
                pass
        h = h.reshape(A.shape[:-1])
    # h[..., j, i] is the expected time from i to first reach j
    return np.swapaxes(h, -1, -2)


def first_passage_check(ET, S):
    """Boolean mask over the batch: True where ET is finite, non-negative and not blown up."""
    scale = np.max(S, axis=(-1, -2))
    ok = np.all(np.isfinite(ET), axis=(-1, -2))
    ok &= np.all(ET >= 0, axis=(-1, -2))
    with np.errstate(invalid="ignore"):
        ok &= np.max(np.where(np.isfinite(ET), ET, np.inf), axis=(-1, -2)) < _BLOWUP * scale
    return ok


def first_passage_times(P, S, check: bool = True):
    """Expected first-passage times ``ET[i, j]`` from i to j; the diagonal holds first-return times.

    Each destination j is one linear solve ``(I - P_{-j}) h = m`` where ``P_{-j}``
    zeroes column j and ``m_i`` is the mean one-step transit time out of i.
    """
    P = np.asarray(P, dtype=float)
    S = np.asarray(S, dtype=float)
    ET = _solve_passage(P, S)
    if check:
        ok = first_passage_check(ET, S)
        if not np.all(ok):
            raise SingularChainError("zone chain is (nearly) reducible; first-passage times diverge")
    return ET


def flexible_delivery_time(ET, p_drop, floor: float = P_DROP_FLOOR):
    """Expected pick-up-to-drop-off time of a flexible parcel with geometric retries.

    Off-diagonal: first passage to the destination plus ``(1 - p) / p`` return
    trips. A parcel picked up in its destination zone gets its first attempt in
    place, so only the retry term remains. Destinations with ``p < floor`` map
    to ``inf``.
    """
    ET = np.asarray(ET, dtype=float)
    p = np.asarray(p_drop, dtype=float)
    ok = p >= floor
    ps = np.where(ok, p, 1.0)
    ret = np.diagonal(ET, axis1=-2, axis2=-1)
    retry = (1.0 - ps) / ps * ret
    M = ET.shape[-1]
    t = np.where(np.eye(M, dtype=bool), 0.0, ET) + retry[..., None, :]
    return np.where(ok[..., None, :], t, np.inf)


def zone_chain(lambda_r, lambda_do, w_I, t, allow_empty: bool = False) -> ZoneChain:
    P = zone_transition_matrix(lambda_r, lambda_do, allow_empty=allow_empty)
    S = transit_times(w_I, t)
    return ZoneChain(P, S, first_passage_times(P, S))
