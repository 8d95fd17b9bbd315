"""Exact dispatch solutions and the centralized projected primal-dual baseline.

The exact optimum is found by bisection on the scalar multiplier: each
agent's optimal response p_i(lam) = clamp((f_i')^{-1}(xi*(nhat/n)*lam)) is
monotone nondecreasing in lam, so the total-generation curve crosses the
demand exactly once over an instance-derived bracket.

lambda* is reported in the scaled convention (the fixed point shared by
the distributed iterations); rescaling by n/(xi*nhat) recovers the raw
multiplier of the balance constraint, and the dispatch p* is the same in
both conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InfeasibleInstanceError, InvalidCostError, InvalidInstanceError
from .metrics import RunTrace, flag_no_progress
from .problem import (
    AlgorithmParams,
    GeneralCost,
    ProblemInstance,
    QuadraticCost,
    kkt_residual,
    project_box,
)

# Inner vectorized bisection for inverting f' on the box (general costs).
_INVERSE_ITERATIONS = 80


@dataclass(frozen=True)
class DispatchSolution:
    """Exact optimum: dispatch, scaled multiplier, KKT multipliers, residual."""

    p_star: np.ndarray
    lambda_star: float
    mu_star: np.ndarray
    nu_star: np.ndarray
    kkt_residual: float
    iterations: int
    bracket: tuple[float, float]


def clamped_best_response(inst: ProblemInstance, scale: float, lam) -> np.ndarray:
    """p(lam): componentwise clamp of (f')^{-1}(scale * lam) onto the box.

    ``lam`` may be a scalar or a vector of multiplier values; a vector
    returns one dispatch row per value.
    """
    lam = np.asarray(lam, dtype=float)
    t = scale * lam
    cost = inst.cost
    if isinstance(cost, QuadraticCost):
        raw = (t[..., None] - cost.b) / (2.0 * cost.a) if lam.ndim else cost.grad_inverse(t)
        return np.clip(raw, inst.p_lo, inst.p_hi)
    if lam.ndim:
        return np.stack([clamped_best_response(inst, scale, float(x)) for x in lam])
    # monotone f' (f'' >= m > 0): bisect within the box, then clamp is implicit
    lo = inst.p_lo.copy()
    hi = inst.p_hi.copy()
    g_lo = cost.grad(lo) - t
    g_hi = cost.grad(hi) - t
    out = np.empty(inst.n)
    at_lo = g_lo >= 0.0
    at_hi = g_hi <= 0.0
    out[at_lo] = lo[at_lo]
    out[at_hi] = hi[at_hi]
    interior = ~(at_lo | at_hi)
    if np.any(interior):
        a = lo.copy()
        b = hi.copy()
        for _ in range(_INVERSE_ITERATIONS):
            mid = 0.5 * (a + b)
            pos = cost.grad(mid) - t > 0.0
            b = np.where(pos, mid, b)
            a = np.where(pos, a, mid)
        out[interior] = (0.5 * (a + b))[interior]
    return out


def solve_bisection(
    inst: ProblemInstance,
    xi: float = 1.0,
    nhat: float | None = None,
    tol: float = 1e-12,
) -> DispatchSolution:
    """Exact optimum of the dispatch problem by bisection on the multiplier.

    Bisects lam until |1'p(lam) - 1'load| <= tol (or the bracket reaches
    machine resolution). The initial bracket is instance-derived and
    guaranteed to straddle the optimum by monotonicity.
    """
    if nhat is None:
        nhat = float(inst.n)
    if xi <= 0 or nhat <= 0:
        raise InvalidInstanceError("xi and nhat must be positive")
    if inst.cost.strong_convexity <= 0:
        raise InvalidCostError("cost must be strongly convex (m > 0)")
    scale = xi * nhat / inst.n
    total = inst.total_load
    lo_sum = float(inst.p_lo.sum())
    hi_sum = float(inst.p_hi.sum())
    if lo_sum > total:
        raise InfeasibleInstanceError(f"1'p_lo = {lo_sum:.6g} > 1'load = {total:.6g}")
    if total > hi_sum:
        raise InfeasibleInstanceError(f"1'load = {total:.6g} > 1'p_hi = {hi_sum:.6g}")

    g_lo = inst.cost.grad(inst.p_lo)
    g_hi = inst.cost.grad(inst.p_hi)
    lam_lo = float(g_lo.min()) / scale - 1.0
    lam_hi = float(g_hi.max()) / scale + 1.0
    bracket = (lam_lo, lam_hi)

    lam = 0.5 * (lam_lo + lam_hi)
    p = clamped_best_response(inst, scale, lam)
    best = (abs(float(p.sum()) - total), lam, p)
    iterations = 0
    width_floor = 4.0 * np.finfo(float).eps * max(1.0, abs(lam_lo), abs(lam_hi))
    while True:
        iterations += 1
        lam = 0.5 * (lam_lo + lam_hi)
        p = clamped_best_response(inst, scale, lam)
        gap = float(p.sum()) - total
        if abs(gap) < best[0]:
            best = (abs(gap), lam, p)
        if abs(gap) <= tol or (lam_hi - lam_lo) <= width_floor:
            break
        if gap < 0.0:
            lam_lo = lam
        else:
            lam_hi = lam

    _, lam_star, p_star = best
    grad = inst.cost.grad(p_star)
    stat_gap = scale * lam_star - grad
    mu = np.where(p_star >= inst.p_hi, np.maximum(stat_gap, 0.0), 0.0)
    nu = np.where(p_star <= inst.p_lo, np.maximum(-stat_gap, 0.0), 0.0)
    res = kkt_residual(inst, p_star, lam_star, xi, nhat)
    return DispatchSolution(
        p_star=p_star,
        lambda_star=float(lam_star),
        mu_star=mu,
        nu_star=nu,
        kkt_residual=res,
        iterations=iterations,
        bracket=bracket,
    )


def centralized_pd_run(
    inst: ProblemInstance,
    params: AlgorithmParams,
    p0=None,
    lam0: float = 0.0,
) -> RunTrace:
    """Projected primal-dual iteration with the exact total imbalance.

    p[k+1] = clamp(p[k] - s f'(p[k]) + s xi lam[k]),
    lam[k+1] = lam[k] - s 1'(p[k] - load);
    both updates read step-k values. Serves as the single-multiplier
    baseline the distributed algorithms emulate.
    """
    n = inst.n
    if p0 is None:
        p = project_box(np.zeros(n), inst.p_lo, inst.p_hi)
    else:
        p = np.asarray(p0, dtype=float).copy()
        if p.shape != (n,):
            raise InvalidInstanceError(f"p0 must have shape ({n},)")
        if np.any(p < inst.p_lo) or np.any(p > inst.p_hi):
            raise InvalidInstanceError("p0 must lie within the capacity box")
    lam = float(lam0)
    K = params.horizon
    p_hist = np.empty((K + 1, n))
    lam_hist = np.empty((K + 1, 1))
    imbalance = np.empty(K + 1)
    p_hist[0] = p
    lam_hist[0, 0] = lam
    imbalance[0] = abs(float(np.sum(p - inst.loads)))
    for k in range(K):
        s = params.stepsize(k)
        p_new = project_box(
            p - s * inst.cost.grad(p) + s * params.xi * lam, inst.p_lo, inst.p_hi
        )
        lam = lam - s * float(np.sum(p - inst.loads))
        p = p_new
        if not (np.all(np.isfinite(p)) and np.isfinite(lam)):
            raise DivergenceError(k + 1, "centralized iterate")
        p_hist[k + 1] = p
        lam_hist[k + 1, 0] = lam
        imbalance[k + 1] = abs(float(np.sum(p - inst.loads)))
    warnings = params.configuration_warnings(n)
    if flag_no_progress(imbalance):
        warnings.append("no-progress: imbalance did not decay (stepsize too large?)")
    return RunTrace(
        algorithm="centralized",
        p=p_hist,
        consensus=lam_hist,
        residuals={"imbalance": imbalance},
        params=params,
        warnings=warnings,
    )
