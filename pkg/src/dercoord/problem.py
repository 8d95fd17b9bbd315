"""Dispatch problem definition: costs, capacity box, feasibility, KKT residual.

The problem is: minimize sum_i f_i(p_i) subject to 1'p = 1'load and
lo <= p <= hi, with every f_i twice differentiable and strongly convex on
its box. All powers are in MW; cost units are abstract (the source problem
never fixes them).

The stationarity convention used throughout the package is the scaled one,
f_i'(p_i) = xi*(nhat/n)*lambda, which is the fixed point shared by the
centralized and distributed iterations. It differs from the raw multiplier
of the balance constraint only by a constant rescaling of lambda; the
optimal dispatch is identical.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InfeasibleInstanceError,
    InvalidCostError,
    InvalidInstanceError,
)

# Grid resolution of the best-effort strong-convexity check for general
# (callable) cost models. Quadratic models are checked exactly.
CONVEXITY_GRID_POINTS = 1000


def _as_vector(x, name: str, n: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise InvalidInstanceError(f"{name} must be a 1-D vector")
    if n is not None and v.shape[0] != n:
        raise DimensionMismatchError(name, n, v.shape[0])
    return v


@dataclass(frozen=True)
class QuadraticCost:
    """Per-agent quadratic costs f_i(p) = a_i*p^2 + b_i*p + c_i with a_i > 0."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __init__(self, a, b=None, c=None):
        a = _as_vector(a, "a")
        n = a.shape[0]
        b = np.zeros(n) if b is None else _as_vector(b, "b", n)
        c = np.zeros(n) if c is None else _as_vector(c, "c", n)
        if np.any(a <= 0):
            raise InvalidCostError("quadratic coefficients a_i must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def strong_convexity(self) -> float:
        return float(2.0 * self.a.min())

    def value(self, p: np.ndarray) -> np.ndarray:
        return self.a * p * p + self.b * p + self.c

    def grad(self, p: np.ndarray) -> np.ndarray:
        return 2.0 * self.a * p + self.b

    def hess(self, p: np.ndarray) -> np.ndarray:
        return 2.0 * self.a * np.ones_like(p)

    def grad_inverse(self, t: np.ndarray) -> np.ndarray:
        """Solve f_i'(p) = t_i for p, componentwise."""
        return (t - self.b) / (2.0 * self.a)


@dataclass(frozen=True)
class GeneralCost:
    """General convex hook: user-supplied vectorized evaluators.

    ``value``/``grad``/``hess`` map a length-n vector to per-agent values.
    The user declares the strong-convexity parameter m > 0; it is verified
    on a sampled grid when the cost is attached to an instance (best
    effort, see `validate_on_box`). Derivatives are never approximated
    numerically inside iteration loops.
    """

    value_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    hess_fn: Callable[[np.ndarray], np.ndarray]
    m: float
    n: int

    def __post_init__(self):
        if self.m <= 0:
            raise InvalidCostError("declared strong convexity m must be > 0")
        if self.n < 1:
            raise InvalidCostError("agent count must be >= 1")

    @property
    def strong_convexity(self) -> float:
        return self.m

    def value(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(self.value_fn(p), dtype=float)

    def grad(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad_fn(p), dtype=float)

    def hess(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(self.hess_fn(p), dtype=float)

    def validate_on_box(self, lo: np.ndarray, hi: np.ndarray) -> None:
        """Sampled check that f'' >= m on [lo, hi] (grid of 1000 points/agent)."""
        ts = np.linspace(0.0, 1.0, CONVEXITY_GRID_POINTS)
        grid = lo[None, :] + ts[:, None] * (hi - lo)[None, :]
        h = np.vstack([self.hess(row) for row in grid])
        slack = 1e-9 * max(1.0, abs(self.m))
        if np.any(h < self.m - slack):
            bad = np.unravel_index(int(np.argmin(h)), h.shape)
            raise InvalidCostError(
                f"second derivative {h[bad]:.6g} below declared m={self.m:.6g} "
                f"at agent {bad[1]}"
            )


CostModel = QuadraticCost | GeneralCost


@dataclass(frozen=True)
class ProblemInstance:
    """A dispatch problem: n agents with costs, per-agent box, fixed loads."""

    loads: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    cost: CostModel

    def __init__(self, loads, p_lo, p_hi, cost: CostModel):
        loads = _as_vector(loads, "loads")
        n = loads.shape[0]
        p_lo = _as_vector(p_lo, "p_lo", n)
        p_hi = _as_vector(p_hi, "p_hi", n)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "p_lo", p_lo)
        object.__setattr__(self, "p_hi", p_hi)
        object.__setattr__(self, "cost", cost)
        self._validate()

    @property
    def n(self) -> int:
        return self.loads.shape[0]

    def _validate(self) -> None:
        n = self.n
        if self.cost.n != n:
            raise DimensionMismatchError("cost model", n, self.cost.n)
        if not (
            np.all(np.isfinite(self.loads))
            and np.all(np.isfinite(self.p_lo))
            and np.all(np.isfinite(self.p_hi))
        ):
            raise InvalidInstanceError("loads and capacity bounds must be finite")
        bad = np.nonzero(self.p_lo > self.p_hi)[0]
        if bad.size:
            i = int(bad[0])
            raise InvalidInstanceError(
                f"agent {i}: p_lo={self.p_lo[i]:.6g} > p_hi={self.p_hi[i]:.6g}"
            )
        total = float(self.loads.sum())
        lo_sum = float(self.p_lo.sum())
        hi_sum = float(self.p_hi.sum())
        if lo_sum > total:
            raise InfeasibleInstanceError(
                f"1'p_lo = {lo_sum:.6g} > 1'load = {total:.6g}"
            )
        if total > hi_sum:
            raise InfeasibleInstanceError(
                f"1'load = {total:.6g} > 1'p_hi = {hi_sum:.6g}"
            )
        if isinstance(self.cost, GeneralCost):
            self.cost.validate_on_box(self.p_lo, self.p_hi)

    @property
    def total_load(self) -> float:
        return float(self.loads.sum())


@dataclass(frozen=True)
class ConstantStep:
    """Constant stepsize s > 0."""

    s: float

    def __post_init__(self):
        if self.s <= 0:
            raise InvalidInstanceError("stepsize must be positive")

    def at(self, k: int) -> float:
        return self.s


@dataclass(frozen=True)
class DiminishingStep:
    """Diminishing schedule s[k] = a / (k + b)."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise InvalidInstanceError("schedule parameters a, b must be positive")

    def at(self, k: int) -> float:
        return self.a / (k + self.b)


Stepsize = ConstantStep | DiminishingStep


@dataclass(frozen=True)
class AlgorithmParams:
    """Shared knobs of the dispatch iterations.

    ``step`` is either a constant stepsize or an a/(k+b) schedule. ``xi``
    scales the multiplier feedback into the primal step; ``nhat`` is each
    agent's estimate of the network size; ``gamma`` is the retention mix of
    the running-sum protocol; ``horizon`` is the default number of steps.
    """

    step: Stepsize
    xi: float = 1.0
    nhat: float = 1.0
    gamma: float = 0.9
    horizon: int = 1000

    def __post_init__(self):
        if self.xi <= 0:
            raise InvalidInstanceError("xi must be positive")
        if self.nhat <= 0:
            raise InvalidInstanceError("nhat must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise InvalidInstanceError("gamma must lie in (0, 1)")
        if self.horizon < 0:
            raise InvalidInstanceError("horizon must be nonnegative")

    def stepsize(self, k: int) -> float:
        return self.step.at(k)

    def configuration_warnings(self, n: int) -> list[str]:
        """Range checks that flag but do not abort a run."""
        out = []
        if self.xi * self.nhat > n:
            out.append(
                f"xi*nhat = {self.xi * self.nhat:.6g} exceeds n = {n}; "
                "the multiplier scaling lies outside the supported range"
            )
        return out

    def multiplier_scale(self, n: int) -> float:
        """The stationarity scale xi*nhat/n relating f' to lambda."""
        return self.xi * self.nhat / n


def cost_grad(cost: CostModel, p) -> np.ndarray:
    """Per-agent marginal cost f_i'(p_i)."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    if p.shape[0] != cost.n:
        raise DimensionMismatchError("p", cost.n, p.shape[0])
    if not np.all(np.isfinite(p)):
        raise InvalidInstanceError("p must be finite")
    return cost.grad(p)


def project_box(p, lo, hi) -> np.ndarray:
    """Componentwise clamp of p onto [lo, hi]. Idempotent and non-expansive."""
    p = np.asarray(p, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        i = int(np.nonzero(lo > hi)[0][0])
        raise InvalidInstanceError(
            f"agent {i}: p_lo={lo.flat[i]:.6g} > p_hi={hi.flat[i]:.6g}"
        )
    return np.clip(p, lo, hi)


def kkt_residual(inst: ProblemInstance, p, lam: float, xi: float, nhat: float) -> float:
    """Residual of the scaled KKT system at (p, lam).

    Returns the max of the balance violation |1'(p - load)| and the worst
    per-agent stationarity violation |f_i'(p_i) - xi*(nhat/n)*lam|, where
    agents sitting at a bound are charged only for the part a nonnegative
    bound multiplier cannot absorb. Zero iff (p, lam) solves the KKT
    system in the scaled convention.
    """
    p = _as_vector(p, "p", inst.n)
    c = xi * nhat / inst.n
    g = inst.cost.grad(p)
    gap = g - c * float(lam)
    viol = np.abs(gap)
    at_hi = p >= inst.p_hi
    at_lo = p <= inst.p_lo
    # At the upper bound mu >= 0 absorbs c*lam - f' >= 0; symmetric below.
    viol = np.where(at_hi, np.maximum(gap, 0.0), viol)
    viol = np.where(at_lo, np.maximum(-gap, 0.0), viol)
    viol = np.where(at_hi & at_lo, 0.0, viol)
    balance = abs(float(np.sum(p - inst.loads)))
    return max(balance, float(viol.max()))
