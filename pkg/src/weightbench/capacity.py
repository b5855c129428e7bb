"""Weighted Riesz capacity: the ball tail-integral formula, a discrete
variational solver, the measure-to-capacity ratio table (k2) and the
capacity-growth condition check.

The variational problem minimizes sum f_i^p w_i h^n over f >= 0 subject
to (K f)_j >= 1 at the constraint points, K the discretized kernel
|x - y|^{alpha - n} with an inscribed-ball correction on the diagonal.
The solver runs multiplicative (entropic) ascent on the constraint
multipliers with the stationarity recovery
f_i = (sum_j K_{ji} lam_j / (p w_i h^n))^{1/(p-1)}, then rescales f so
the worst constraint is tight; the reported value is therefore always
feasible up to 1e-6.

Capacity test sets are balls: the supremum over arbitrary sets of small
diameter is not computable, so every ratio table is a lower bound for
the corresponding set supremum and is labeled as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fitting import FitResult, fit_loglog
from .geometry import Ball
from .measures import (Params, QuadResult, _power_ball, _power_box,
                       power_cube_integrals, unit_sphere_area)


@dataclass
class CapacityEstimate:
    """Ball-formula and variational values for one test set."""
    formula_value: float
    variational_value: float
    feasibility_gap: float
    scaling_slope: float = math.nan
    converged: bool = True


# ---------------------------------------------------------------------------
# tail-integral ball formula
# ---------------------------------------------------------------------------

def ball_capacity_formula(center: Sequence[float], delta: float, params: Params,
                          order: Optional[float] = None, rtol: float = 1e-8) -> float:
    """(\int_delta^inf sigma(B(x0,t)) / t^{(n-alpha)p'+1} dt)^{1-p}.

    `order` overrides params.alpha (used for integer-smoothness capacities).
    """
    alpha = params.alpha if order is None else order
    n, p, pd = params.n, params.p, params.p_dual
    if alpha is None or not alpha < n / p:
        raise ValueError(f"ball formula needs order < n/p = {n / p}")
    e_s = params.sigma_exponent
    beta_exp = (n - alpha) * pd + 1.0
    gap = beta_exp - 1.0 - (n + e_s)
    if not gap > 0:
        raise ValueError("tail integral diverges for these exponents")
    if not delta > 0:
        raise ValueError("delta must be positive")
    c_norm = math.sqrt(sum(ci * ci for ci in center))

    def sigma_ball(t: float) -> float:
        return _power_ball(e_s, center, t, rtol).value

    area = unit_sphere_area(n)
    total = 0.0
    lo = delta
    T_asym = max(1024.0 * delta, 1024.0 * c_norm, 1.0)
    while lo < T_asym:
        hi = min(2.0 * lo, T_asym)
        xs_n = 24
        prev = None
        val = 0.0
        for _ in range(5):
            ts = np.linspace(lo, hi, xs_n)
            ys = np.array([sigma_ball(float(t)) / float(t) ** beta_exp for t in ts])
            val = float(np.trapezoid(ys, ts))
            if prev is not None and abs(val - prev) <= 0.1 * rtol * abs(val):
                break
            prev = val
            xs_n = 2 * xs_n - 1
        total += val
        lo = hi
    # asymptotic tail: sigma(B(x0,t)) = area/(n+e_s) t^{n+e_s} (1 + O(|x0|/t))
    c_sigma = area / (n + e_s)
    tail = c_sigma * T_asym ** (-gap) / gap
    total += tail
    return total ** (1.0 - p)


# ---------------------------------------------------------------------------
# discrete variational solver
# ---------------------------------------------------------------------------

def _kernel_matrix(points: np.ndarray, centers: np.ndarray, h: float,
                   alpha: float, n: int) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        K = d ** (alpha - n) * h ** n
    sing = d < 0.5 * h
    if sing.any():
        K[sing] = unit_sphere_area(n) * (0.5 * h) ** alpha / alpha
    return K


def variational_capacity(E: Sequence[Ball], params: Params,
                         grid_cells: int = 48, extent: float = 4.0,
                         iter_budget: int = 5000, rtol: float = 1e-8) -> CapacityEstimate:
    """Discrete minimization of the weighted p-energy covering E at level 1."""
    params.check_capacity()
    n, p, alpha = params.n, params.p, params.alpha
    if not E:
        return CapacityEstimate(0.0, 0.0, 0.0)
    r_max = max(b.radius for b in E)
    reach = max(b.center_norm() + b.radius for b in E)
    L = max(extent * r_max, 1.25 * reach)
    h = 2.0 * L / grid_cells
    ax = [-L + h * (np.arange(grid_cells) + 0.5) for _ in range(n)]
    grids = np.meshgrid(*ax, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=-1)
    wbar = power_cube_integrals(params.theta, n, h, centers, rtol) / h ** n

    pts = [np.asarray(b.center, float) for b in E]
    for b in E:
        c = np.asarray(b.center, float)
        inside = np.linalg.norm(centers - c[None, :], axis=1) <= b.radius
        pts.extend(centers[inside])
    points = np.unique(np.array(pts), axis=0)
    K = _kernel_matrix(points, centers, h, alpha, n)

    scale = p * wbar * h ** n
    lam = np.ones(points.shape[0])
    expo = 1.0 / (p - 1.0)
    best_obj = math.inf
    converged = False
    eta = 0.5
    for it in range(iter_budget):
        u = (K.T @ lam) / scale
        f = u ** expo
        Kf = K @ f
        g = 1.0 - Kf
        lam *= np.exp(np.clip(eta * g, -4.0, 4.0))
        if (it + 1) % 25 == 0:
            m = float(Kf.min())
            if m > 0:
                lam *= m ** (-(p - 1.0))
                obj = float((f / m) ** p @ wbar) * h ** n
                if abs(obj - best_obj) <= 1e-4 * abs(obj):
                    best_obj = min(best_obj, obj)
                    converged = True
                    break
                best_obj = min(best_obj, obj)
    u = (K.T @ lam) / scale
    f = u ** expo
    Kf = K @ f
    m = float(Kf.min())
    if m <= 0:
        return CapacityEstimate(math.nan, math.inf, -1.0, converged=False)
    f = f / m
    value = float(f ** p @ wbar) * h ** n
    gap = float((K @ f).min()) - 1.0
    formula = math.nan
    if len(E) == 1:
        formula = ball_capacity_formula(E[0].center, E[0].radius, params, rtol=rtol)
    return CapacityEstimate(formula, value, gap, converged=converged or gap >= -1e-3)


# ---------------------------------------------------------------------------
# measure-to-capacity ratio table
# ---------------------------------------------------------------------------

@dataclass
class K2Row:
    delta: float
    best_ratio: float
    best_center_norm: float
    n_sets: int


@dataclass
class K2Report:
    """Lower bound for the small-diameter measure/capacity supremum,
    evaluated over ball test sets only."""
    rows: List[K2Row]
    slope: Optional[FitResult]
    lower_bound_only: bool = True


def capacity_ratio_k2(delta_list: Sequence[float], params: Params,
                      offset_norms: Sequence[float] = (0.0,),
                      rtol: float = 1e-8) -> K2Report:
    """Per delta, sup over test balls of diameter delta of
    mu_w(B) / ball-capacity(B)."""
    params.check_capacity()
    n = params.n
    e_mu = params.muw_exponent
    if not e_mu > -n:
        raise ValueError("potential density is not locally integrable")
    rows = []
    for delta in delta_list:
        best = -math.inf
        best_c = math.nan
        count = 0
        for off in offset_norms:
            center = (off,) + (0.0,) * (n - 1)
            ball = Ball(center, delta / 2.0)
            muw = _power_ball(e_mu, center, ball.radius, rtol).value
            cap = ball_capacity_formula(center, ball.radius, params, rtol=rtol)
            count += 1
            ratio = muw / cap
            if ratio > best:
                best = ratio
                best_c = off
        rows.append(K2Row(delta, best, best_c, count))
    slope = None
    centered = [(r.delta, r.best_ratio) for r in rows]
    if len(centered) >= 2:
        ds, vs = zip(*centered)
        slope = fit_loglog(ds, vs)
    return K2Report(rows, slope)


# ---------------------------------------------------------------------------
# capacity-growth condition for the power-growth remainder regime
# ---------------------------------------------------------------------------

@dataclass
class GrowthCheckRow:
    delta: float
    v_ball: float
    cap_ball: float
    bound_ratio: float


@dataclass
class GrowthCheckReport:
    q: float
    rows: List[GrowthCheckRow]
    slope_ratio: float          # fitted slope of log v vs log cap^{q/p}
    sup_ratio: float
    sup_at_edge: bool
    passes: bool


def derived_integrability_exponent(p: float, m: int, beta: float, n: int, a: float) -> float:
    """q with 1/p - 1/q = m / ((beta+1)(n+a))."""
    denom = 1.0 / p - m / ((beta + 1.0) * (n + a))
    if denom <= 0:
        raise ValueError("exponent relation unsatisfiable: need p < (beta+1)(n+a)/m")
    return 1.0 / denom


def capacity_growth_check(params: Params, beta: float, v_exponent: float,
                          delta_list: Sequence[float], rtol: float = 1e-8,
                          slope_tol: float = 0.05) -> GrowthCheckReport:
    """Evaluate v(B)/cap(B)^{q/p} on a centered ball schedule, where
    dv = |V|^q w dx with V = |x|^{v_exponent} and w = |x|^a (1-n < a <= 0).

    Passes when the fitted slope of log v against log cap^{q/p} is at
    least 1 - slope_tol at small radii, i.e. v does not outgrow the
    capacity power.
    """
    n, p, m = params.n, params.p, params.m
    a = params.a
    if m is None or not m < n:
        raise ValueError("growth check needs integer m < n")
    if not (1.0 - n) < a <= 0.0:
        raise ValueError(f"weight exponent must lie in (1-n, 0], got {a}")
    if not p < (beta + 1.0) * (n + a) / m:
        raise ValueError("need 1 < p < (beta+1)(n+a)/m")
    q = derived_integrability_exponent(p, m, beta, n, a)
    pw = Params(n=n, p=p, alpha=params.alpha, m=m, theta=a, depth=params.depth)
    e_v = v_exponent * q + a
    if not e_v > -n:
        raise ValueError("v density is not locally integrable")
    rows = []
    for delta in delta_list:
        v_ball = _power_ball(e_v, (0.0,) * n, delta, rtol).value
        cap = ball_capacity_formula((0.0,) * n, delta, pw, order=float(m), rtol=rtol)
        rows.append(GrowthCheckRow(delta, v_ball, cap, v_ball / cap ** (q / p)))
    ratios = [r.bound_ratio for r in rows]
    sup_ratio = max(ratios)
    sup_at_edge = ratios.index(sup_ratio) in (0, len(ratios) - 1)
    caps_pow = [r.cap_ball ** (q / p) for r in rows]
    vs = [r.v_ball for r in rows]
    fit = fit_loglog(caps_pow, vs)
    passes = fit.slope >= 1.0 - slope_tol
    return GrowthCheckReport(q, rows, fit.slope, sup_ratio, sup_at_edge, passes)
