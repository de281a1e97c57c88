"""Profit maximisation over the elementary variables.

Two stages: a box-constrained ascent on the truncated problem (effective idle
supply approximated, pick-up wait by bisection), then an augmented-Lagrangian
refinement that adds effective idle supply and pick-up wait as decisions tied
by their equilibrium relations. All objective values come from
``equilibrium.evaluate_batch``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .equilibrium import ElementaryVars, evaluate, evaluate_batch
from .errors import ModelError
from .scenario import Scenario


class NoFeasibleStartError(ModelError):
    """Every candidate start point is infeasible."""


@dataclass(frozen=True)
class SolverConfig:
    """Bounds, tolerances and schedules for both optimisation stages."""

    r_bounds: tuple = (0.2, 5.0)
    cdf_bounds: tuple = (0.0, 80.0)
    N_I_max: float = 2000.0
    w_dg_max: float = 200.0
    fd_step: float = 1e-5
    grad_tol: float = 1e-7
    ftol: float = 1e-11
    max_iter: int = 300
    memory: int = 10
    mu0: float = 10.0
    mu_growth: float = 10.0
    max_outer: int = 8
    inner_iter: int = 80
    residual_tol: float = 1e-6
    # schedule for the full-problem baseline, whose subproblems are far worse conditioned
    direct_max_outer: int = 40
    direct_inner_iter: int = 2000
    # total inner-iteration budget of the baseline across all rounds
    direct_budget: int = 20000
    direct_mu0: float = 100.0
    direct_mu_growth: float = 4.0
    bisect_tol: float = 1e-8
    starts: int = 10
    seed: int = 0
    flexible: bool = True
    # lower bound on effective idle supply and pick-up wait during refinement
    floor: float = 1e-3

    def __post_init__(self):
        for lo, hi in (self.r_bounds, self.cdf_bounds):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError("bounds must be finite and ordered")
        if min(self.fd_step, self.grad_tol, self.residual_tol, self.bisect_tol) <= 0:
            raise ValueError("tolerances must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass
class OptReport:
    vars: ElementaryVars
    profit: float
    approx_profit: float
    refined_profit: float
    iterations: dict
    wall_time: float
    trajectory: list
    residuals: dict
    converged: bool = True
    diverged: bool = False
    feasible: bool = True
    start: int = 0
    method: str = "algorithm1"

    def summary(self) -> dict:
        return {
            "method": self.method, "start": self.start, "profit": self.profit,
            "approx_profit": self.approx_profit, "refined_profit": self.refined_profit,
            "wall_time": self.wall_time, "feasible": self.feasible, "converged": self.converged,
            "max_residual": max(float(v) for v in self.residuals.values()) if self.residuals else 0.0,
        }


# ---------------------------------------------------------------- numerics

def gradient(f, x, config: SolverConfig | None = None, step=None, scheme: str = "central", lo=None, hi=None):
    """Finite-difference gradient of a batched scalar function.

    ``f`` maps an (B, n) array to B values. The step is relative,
    ``h_i = step * max(|x_i|, 1)``. Central differences fall back to a one-sided
    formula where one neighbour is not finite or would leave the box ``[lo, hi]``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if step is None:
        step = config.fd_step if config is not None else 1e-5
    h = np.broadcast_to(step, (n,)) * np.maximum(np.abs(x), 1.0)
    E = np.diag(h)
    if scheme == "forward":
        vals = f(np.vstack([x[None, :], x + E]))
        return (vals[1:] - vals[0]) / h
    vals = f(np.vstack([x[None, :], x + E, x - E]))
    f0, fp, fm = vals[0], vals[1:n + 1], vals[n + 1:]
    if lo is not None:
        fm = np.where(x - h < lo, np.nan, fm)
    if hi is not None:
        fp = np.where(x + h > hi, np.nan, fp)
    g = (fp - fm) / (2 * h)
    g = np.where(np.isfinite(fp) & ~np.isfinite(fm), (fp - f0) / h, g)
    g = np.where(~np.isfinite(fp) & np.isfinite(fm), (f0 - fm) / h, g)
    return np.where(np.isfinite(g), g, 0.0)


@dataclass
class _MinResult:
    x: np.ndarray
    f: float
    iterations: int
    evaluations: int
    converged: bool
    history: list


def minimize_box(fun, x0, lo, hi, step, max_iter=300, grad_tol=1e-7, ftol=1e-11, memory=10, scale=None):
    """Projected limited-memory BFGS with batched backtracking for ``min fun`` on a box.

    ``fun`` is batched; non-finite values count as infeasible and are rejected by
    the line search. Variables at a bound with the gradient pushing outward are
    frozen for the step. The quasi-Newton model works in coordinates divided by
    ``scale`` (default: the box widths).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), lo.shape)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = float(fun(x[None])[0])
    nev = 1
    if not np.isfinite(fx):
        return _MinResult(x, fx, 0, nev, False, [fx])
    S, Y = [], []
    hist = [fx]
    alphas = 0.5 ** np.arange(40)
    stall = 0
    converged = False
    it = 0
    g = gradient(fun, x, step=step, lo=lo, hi=hi)
    nev += 2 * x.size + 1
    for it in range(1, max_iter + 1):
        pg = x - np.clip(x - g * width**2, lo, hi)
        if np.max(np.abs(pg / width)) <= grad_tol:
            converged = True
            break
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        # two-loop recursion in box-scaled coordinates
        q = np.where(free, g * width, 0.0)
        rho_a = []
        for s, y in reversed(list(zip(S, Y))):
            rho = 1.0 / np.dot(y, s)
            a = rho * np.dot(s, q)
            q = q - a * y
            rho_a.append((rho, a))
        if S:
            gamma = np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
        else:
            gamma = 0.1 / max(np.max(np.abs(q)), 1e-300)
        r = gamma * q
        for (s, y), (rho, a) in zip(zip(S, Y), reversed(rho_a)):
            b = rho * np.dot(y, r)
            r = r + s * (a - b)
        d = -np.where(free, r, 0.0) * width
        if np.dot(d, g) >= 0:
            S, Y = [], []
            d = -np.where(free, g, 0.0) * width**2
            d *= 0.1 / max(np.max(np.abs(d / width)), 1e-300)
        cand = np.clip(x[None, :] + alphas[:, None] * d[None, :], lo, hi)
        fc = fun(cand)
        nev += len(alphas)
        armijo = fc <= fx + 1e-4 * ((cand - x) @ g)
        armijo &= np.isfinite(fc)
        if not np.any(armijo):
            if S:
                S, Y = [], []
                continue
            break
        k = int(np.argmax(armijo))
        x_new, f_new = cand[k], float(fc[k])
        g_new = gradient(fun, x_new, step=step, lo=lo, hi=hi)
        nev += 2 * x.size + 1
        s = (x_new - x) / width
        y = (g_new - g) * width
        if np.dot(s, y) > 1e-12 * np.dot(y, y):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        rel = (fx - f_new) / max(abs(fx), 1.0)
        x, fx, g = x_new, f_new, g_new
        hist.append(fx)
        stall = stall + 1 if rel < ftol else 0
        if stall >= 3:
            converged = True
            break
    return _MinResult(x, fx, it, nev, converged, hist)


# ---------------------------------------------------------------- variable layout

class Layout:
    """Packs elementary variables into one flat vector with per-entry bounds."""

    def __init__(self, sc: Scenario, cfg: SolverConfig, with_constrained: bool = False):
        self.M = M = sc.M
        self.flexible = cfg.flexible and sc.params.lambda_d0.sum() > 0
        self.cdf_idx = np.flatnonzero(sc.params.lambda_d0.ravel() > 0) if self.flexible else np.array([], int)
        self.n_c = self.cdf_idx.size
        self.with_constrained = with_constrained
        self.N_min = (sc.net.L / sc.params.w_max) ** 2
        lo = [np.full(M, cfg.r_bounds[0]), np.full(self.n_c, cfg.cdf_bounds[0]), self.N_min]
        hi = [np.full(M, cfg.r_bounds[1]), np.full(self.n_c, cfg.cdf_bounds[1]), np.full(M, cfg.N_I_max)]
        if with_constrained:
            lo += [np.full(M, cfg.floor), np.full(M, cfg.floor)]
            hi += [np.full(M, cfg.N_I_max), np.full(M, cfg.w_dg_max)]
        self.lo = np.concatenate(lo)
        self.hi = np.concatenate(hi)
        self.n = self.lo.size

    def unpack(self, X):
        X = np.atleast_2d(X)
        M, nc = self.M, self.n_c
        r = X[:, :M]
        c = np.full((X.shape[0], M * M), np.inf)
        c[:, self.cdf_idx] = X[:, M:M + nc]
        c = c.reshape(-1, M, M)
        N = X[:, M + nc:2 * M + nc]
        if self.with_constrained:
            return r, c, N, X[:, 2 * M + nc:3 * M + nc], X[:, 3 * M + nc:]
        return r, c, N, None, None

    def pack(self, v: ElementaryVars):
        parts = [v.r_r, np.asarray(v.c_df).ravel()[self.cdf_idx], v.N_I]
        if self.with_constrained:
            parts += [v.N_bar, np.where(np.isfinite(v.w_dg), v.w_dg, 1.0)]
        return np.concatenate(parts)

    def vars(self, x) -> ElementaryVars:
        r, c, N, Nb, w = (None if a is None else a[0] for a in self.unpack(x))
        return ElementaryVars(r, c, N, Nb, w)


def initial_guess(sc: Scenario, rng: np.random.Generator) -> ElementaryVars:
    """Random start inside the published initial-guess box."""
    M = sc.M
    return ElementaryVars(
        r_r=rng.uniform(1.0, 2.0, M),
        c_df=rng.uniform(10.0, 20.0, (M, M)),
        N_I=rng.uniform(150.0, 250.0, M),
        N_bar=rng.uniform(50.0, 150.0, M),
        w_dg=rng.uniform(5.0, 15.0, M),
    )


def start_seeds(seed: int, n: int):
    return np.random.SeedSequence(seed).spawn(n)


# ---------------------------------------------------------------- stages

def _approx_objective(sc, lay, cfg):
    def fun(X):
        r, c, N, _, _ = lay.unpack(X)
        st = evaluate_batch(sc.net, sc.params, r, c, N, mode="approx", flexible=lay.flexible)
        return -st.profit
    return fun


def solve_approx(sc: Scenario, cfg: SolverConfig, start: ElementaryVars):
    """Maximise profit over fares, flexible costs and idle drivers with the truncated idle supply.

    Returns ``(vars, profit, result)`` where ``vars`` carries no effective idle
    supply or pick-up wait.
    """
    lay = Layout(sc, cfg)
    fun = _approx_objective(sc, lay, cfg)
    x0 = np.clip(lay.pack(start), lay.lo, lay.hi)
    if not np.isfinite(fun(x0[None])[0]):
        raise NoFeasibleStartError("start point is infeasible for the truncated problem")
    res = minimize_box(fun, x0, lay.lo, lay.hi, cfg.fd_step, cfg.max_iter, cfg.grad_tol, cfg.ftol, cfg.memory)
    return lay.vars(res.x), -res.f, res


def exact_completion(sc: Scenario, v: ElementaryVars, flexible: bool = True):
    """Effective idle supply from its fixed point and the matching pick-up wait, given the other variables."""
    st = evaluate_batch(sc.net, sc.params, v.r_r, v.c_df, v.N_I, N_bar=v.N_bar, mode="exact", flexible=flexible)
    return v.with_(N_bar=st.N_bar, w_dg=st.w_dg), st


def warm_start(sc: Scenario, v: ElementaryVars, flexible: bool = True) -> ElementaryVars:
    """Truncated effective idle supply plus bisection pick-up wait at the given variables."""
    st = evaluate_batch(sc.net, sc.params, v.r_r, v.c_df, v.N_I, mode="approx", flexible=flexible)
    return v.with_(N_bar=st.N_bar, w_dg=st.w_dg)


def _residual_vector(st, lay):
    res = np.concatenate([st.residual_idle, np.where(np.isfinite(st.residual_wait), st.residual_wait, 0.0)],
                         axis=-1)
    return np.where(st.ok[..., None], res, np.inf)


def refine_constrained(sc: Scenario, cfg: SolverConfig, warm: ElementaryVars) -> OptReport:
    """Augmented-Lagrangian ascent with effective idle supply and pick-up wait as decisions.

    Each outer round minimises ``-profit + mult . h + mu/2 |h|^2`` over the box,
    where ``h`` stacks the idle-supply fixed-point and pick-up-wait residuals.
    Every iterate is then restored onto the constraint set by solving the two
    relations exactly for the current fares, costs and idle drivers, and the best
    restored point is kept, including the warm start itself.
    """
    t0 = time.perf_counter()
    lay = Layout(sc, cfg, with_constrained=True)
    flexible = lay.flexible

    def evaluate_x(X):
        r, c, N, Nb, w = lay.unpack(X)
        return evaluate_batch(sc.net, sc.params, r, c, N, Nb, w, mode="given", flexible=flexible)

    def restore(x):
        v, st = exact_completion(sc, lay.vars(x), flexible)
        return v, st

    def fix_warm(v):
        w = np.where(np.isfinite(v.w_dg), v.w_dg, 1.0)
        return v.with_(w_dg=w)

    x = np.clip(lay.pack(fix_warm(warm)), lay.lo, lay.hi)
    best_v, best_st = restore(x)
    best = float(best_st.profit) if best_st.ok else -np.inf
    if np.isfinite(best):
        # start the multiplier rounds from the feasible restoration of the warm start
        x = np.clip(lay.pack(fix_warm(best_v)), lay.lo, lay.hi)
    traj = [best]
    mult = np.zeros(2 * lay.M)
    mu = cfg.mu0
    diverged = False
    inner_total = 0
    outer = 0
    h = _residual_vector(evaluate_x(x[None]), lay)[0]
    stale = 0
    for outer in range(1, cfg.max_outer + 1):

        def fun(X, mult=mult, mu=mu):
            st = evaluate_x(X)
            hh = np.where(st.ok[:, None], _residual_vector(st, lay), 0.0)
            val = -st.profit + hh @ mult + 0.5 * mu * np.sum(hh**2, axis=-1)
            return np.where(st.ok & np.isfinite(val), val, np.inf)

        res = minimize_box(fun, x, lay.lo, lay.hi, cfg.fd_step, cfg.inner_iter, cfg.grad_tol, cfg.ftol, cfg.memory)
        inner_total += res.iterations
        if not np.isfinite(res.f):
            diverged = True
            break
        x = res.x
        h = _residual_vector(evaluate_x(x[None]), lay)[0]
        if not np.all(np.isfinite(h)):
            diverged = True
            break
        mult = mult + mu * h
        mu *= cfg.mu_growth
        v, st = restore(x)
        p = float(st.profit) if st.ok else -np.inf
        traj.append(p)
        if p > best + 1e-9 * max(abs(best), 1.0):
            stale = 0
        else:
            stale += 1
        if p > best:
            best, best_v, best_st = p, v, st
        # stop once the restored profit has stopped improving
        if stale >= 2:
            break
    st = evaluate(best_v, sc.net, sc.params, mode="given", flexible=flexible) if np.isfinite(best) else best_st
    residuals = {
        "idle_supply_fixed_point": float(np.max(np.abs(st.residual_idle))),
        "pickup_wait": float(np.max(np.abs(np.where(np.isfinite(st.residual_wait), st.residual_wait, 0.0)))),
    }
    return OptReport(
        vars=best_v, profit=best, approx_profit=np.nan, refined_profit=best,
        iterations={"outer": outer, "inner": inner_total}, wall_time=time.perf_counter() - t0,
        trajectory=traj, residuals=residuals, converged=not diverged, diverged=diverged,
        feasible=bool(np.isfinite(best)), method="refine",
    )


def algorithm1(sc: Scenario, cfg: SolverConfig, start: ElementaryVars | None = None, start_index: int = 0) -> OptReport:
    """Two-stage solve: truncated problem, warm start, constrained refinement, final evaluation."""
    t0 = time.perf_counter()
    if start is None:
        start = initial_guess(sc, np.random.default_rng(start_seeds(cfg.seed, 1)[0]))
    v_approx, p_approx, res = solve_approx(sc, cfg, start)
    warm = warm_start(sc, v_approx, cfg.flexible)
    rep = refine_constrained(sc, cfg, warm)
    rep.approx_profit = p_approx
    rep.iterations = {"approx": res.iterations, **rep.iterations}
    rep.trajectory = res.history and [-f for f in res.history] + rep.trajectory
    rep.wall_time = time.perf_counter() - t0
    rep.method = "algorithm1"
    rep.start = start_index
    return rep


def _run_start(job):
    sc, cfg, solver, k, ss = job
    start = initial_guess(sc, np.random.default_rng(ss))
    try:
        return solver(sc, cfg, start=start, start_index=k)
    except NoFeasibleStartError:
        return OptReport(start, -np.inf, -np.inf, -np.inf, {}, 0.0, [], {}, False, False, False, k,
                         getattr(solver, "__name__", "solver"))


def multistart(sc: Scenario, cfg: SolverConfig, solver=None, n: int | None = None, workers: int = 1):
    """Run ``solver`` (default ``algorithm1``) from ``n`` seeded random starts; returns all reports in start order.

    Starts are independent, so ``workers > 1`` runs them in separate processes
    with identical results.
    """
    solver = solver or algorithm1
    n = cfg.starts if n is None else n
    jobs = [(sc, cfg, solver, k, ss) for k, ss in enumerate(start_seeds(cfg.seed, n))]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_start, jobs))
    return [_run_start(j) for j in jobs]


def best_of(reports):
    """Highest-profit feasible report; merge is order-independent (ties go to the lowest start index)."""
    feas = [r for r in reports if r.feasible and np.isfinite(r.profit)]
    if not feas:
        raise NoFeasibleStartError("no start produced a feasible solution")
    return max(feas, key=lambda r: (r.profit, -r.start))
