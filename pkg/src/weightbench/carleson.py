"""Weighted Carleson tree sums on shifted dyadic grids.

The profile of a root cube collects, for every cube Q of its depth-D
subtree,

    Xi(Q) = (1/mu_w(Q)) * sum over tree descendants Q' of Q of
            |Q'|^{p'(alpha/n - 1)} mu_w(Q')^{p'} sigma(Q'),

computed by one bottom-up pass: S(Q) = a_Q + sum of S over children,
cost linear in the cube count.  All per-level integrals of the power
densities come from a single vectorized leaf pass rolled up by exact
child sums, so additivity holds to rounding.  Trees hanging off the
origin-cornered unshifted cube are self-similar: their integral tables
are cached once per exponent and rescaled by 2^{-k(n+e)} per level.

On top of the profiles sit the resolvent-scale supremum c1(lam) (over
all shifts and cubes of side <= 6/lam meeting a region) and the
power-weight threshold scan, whose per-row statistic is the profile
value of scanned root cubes at the largest dyadic scale <= delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fitting import FitResult, fit_loglog, is_stable
from .geometry import Ball, Cube, descendant, locate
from .measures import Params, power_cube_integrals
from .sparse import _child_sum

MAX_TREE_LEAVES = 1 << 22


# ---------------------------------------------------------------------------
# per-level integral tables
# ---------------------------------------------------------------------------

@lru_cache(maxsize=128)
def _canonical_pyramid(exponent: float, n: int, depth: int, rtol: float) -> Tuple[np.ndarray, ...]:
    """Per-level integrals of |x|^exponent over the tree under the level-0,
    index-0, unshifted cube.  Scale-covariant: the same tree hung at level
    k has tables 2^{-k(n+exponent)} times these."""
    m = 1 << depth
    if m ** n > MAX_TREE_LEAVES:
        raise ValueError("tree too large; reduce depth")
    h = 1.0 / m
    ax = [h * (np.arange(m) + 0.5) for _ in range(n)]
    grids = np.meshgrid(*ax, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=-1)
    leaves = power_cube_integrals(exponent, n, h, centers, rtol).reshape((m,) * n)
    levels = [None] * (depth + 1)
    levels[depth] = leaves
    for j in range(depth - 1, -1, -1):
        levels[j] = _child_sum(levels[j + 1], n)
    return tuple(levels)


def _is_origin_cornered(root: Cube) -> Optional[Tuple[bool, ...]]:
    """If the root is an unshifted cube with a corner at the origin,
    return which axes are mirrored (index -1); else None."""
    if any(root.shift):
        return None
    if all(i in (0, -1) for i in root.index):
        return tuple(i == -1 for i in root.index)
    return None


def tree_tables(root: Cube, exponent: float, depth: int, rtol: float = 1e-8) -> List[np.ndarray]:
    """Integrals of |x|^exponent over every cube of root's depth-D subtree,
    one array of shape (2^j,)*n per relative level j."""
    n = root.n
    if (1 << (depth * n)) > MAX_TREE_LEAVES:
        raise ValueError("tree too large; reduce depth")
    if exponent == 0.0:
        return [np.full((1 << j,) * n, (root.side / (1 << j)) ** n)
                for j in range(depth + 1)]
    mirror = _is_origin_cornered(root)
    if mirror is not None:
        base = _canonical_pyramid(exponent, n, depth, rtol)
        scale = 2.0 ** (-root.level * (n + exponent))
        axes = tuple(i for i, flip in enumerate(mirror) if flip)
        out = []
        for arr in base:
            a = arr * scale
            if axes:
                a = np.flip(a, axis=axes)
            out.append(a)
        return out
    m = 1 << depth
    h = root.side / m
    lo = np.asarray(root.lo())
    ax = [lo[i] + h * (np.arange(m) + 0.5) for i in range(n)]
    grids = np.meshgrid(*ax, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=-1)
    leaves = power_cube_integrals(exponent, n, h, centers, rtol).reshape((m,) * n)
    levels = [None] * (depth + 1)
    levels[depth] = leaves
    for j in range(depth - 1, -1, -1):
        levels[j] = _child_sum(levels[j + 1], n)
    return levels


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass
class CarlesonReport:
    """Xi over the subtree of one root, with sup, argmax and stability."""

    root: Cube
    params: Params
    depth: int
    sup_value: float
    argmax: Optional[Cube]
    depth_stable: bool
    xi_levels: List[np.ndarray]
    mu_levels: List[np.ndarray]
    sigma_levels: List[np.ndarray]
    skipped: int

    @property
    def root_value(self) -> float:
        return float(self.xi_levels[0].ravel()[0])

    def xi(self, rel_level: int, rel_index: Tuple[int, ...]) -> float:
        return float(self.xi_levels[rel_level][rel_index])

    def per_cube(self, max_cubes: int = 1 << 18) -> Dict[Cube, float]:
        total = sum(a.size for a in self.xi_levels)
        if total > max_cubes:
            raise ValueError(f"{total} cubes exceed the materialization cap {max_cubes}")
        out: Dict[Cube, float] = {}
        for j, arr in enumerate(self.xi_levels):
            it = np.nditer(arr, flags=["multi_index"])
            for v in it:
                out[descendant(self.root, j, it.multi_index)] = float(v)
        return out


def _s_recursion(a_levels: List[np.ndarray], n: int, depth: int) -> List[np.ndarray]:
    S = [None] * (depth + 1)
    S[depth] = a_levels[depth].copy()
    for j in range(depth - 1, -1, -1):
        S[j] = a_levels[j] + _child_sum(S[j + 1], n)
    return S


def carleson_profile(root: Cube, params: Params, depth: Optional[int] = None,
                     rtol: float = 1e-8) -> CarlesonReport:
    """Bottom-up Xi profile of one root cube."""
    D = params.depth if depth is None else depth
    n = root.n
    pd = params.p_dual
    if not math.isfinite(pd):
        raise ValueError("profiles need p > 1")
    if params.alpha is None:
        raise ValueError("profiles need alpha")
    mu_lv = tree_tables(root, params.muw_exponent, D, rtol)
    sg_lv = tree_tables(root, params.sigma_exponent, D, rtol)
    exp_vol = pd * (params.alpha / n - 1.0)
    a_lv = []
    for j in range(D + 1):
        vol = (root.side / (1 << j)) ** n
        a_lv.append(vol ** exp_vol * mu_lv[j] ** pd * sg_lv[j])
    S = _s_recursion(a_lv, n, D)
    xi_lv = []
    skipped = 0
    sup_val = -math.inf
    arg = None
    for j in range(D + 1):
        mu = mu_lv[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = np.where(mu > 0.0, S[j] / mu, np.nan)
        skipped += int(np.count_nonzero(~(mu > 0.0)))
        xi_lv.append(xi)
        flat = np.nanargmax(xi) if np.isfinite(xi).any() else None
        if flat is not None:
            v = float(xi.ravel()[flat])
            if v > sup_val:
                sup_val = v
                arg = descendant(root, j, tuple(np.unravel_index(flat, xi.shape)))
    # stability against two fewer generations of the same tree
    stable = True
    if D >= 2:
        S2 = _s_recursion(a_lv[:D - 1], n, D - 2)
        sup2 = -math.inf
        for j in range(D - 1):
            mu = mu_lv[j]
            with np.errstate(divide="ignore", invalid="ignore"):
                xi2 = np.where(mu > 0.0, S2[j] / mu, np.nan)
            if np.isfinite(xi2).any():
                sup2 = max(sup2, float(np.nanmax(xi2)))
        stable = is_stable(sup_val, sup2)
    return CarlesonReport(root, params, D, sup_val, arg, stable,
                          xi_lv, mu_lv, sg_lv, skipped)


# ---------------------------------------------------------------------------
# resolvent-scale supremum over a region
# ---------------------------------------------------------------------------

@dataclass
class C1Result:
    lam: float
    value: float
    argmax: Optional[Cube]
    empty: bool
    depth_stable: bool
    per_shift: Dict[Tuple[int, ...], float]


def _level_for_cap(cap: float) -> int:
    """Largest dyadic side 2^{-k} <= cap; returns k."""
    k = math.ceil(-math.log2(cap))
    while 2.0 ** (-k) > cap:
        k += 1
    while 2.0 ** (-(k - 1)) <= cap:
        k -= 1
    return k


def _roots_in_region(level: int, shift: Tuple[int, ...],
                     region: Tuple[Sequence[float], Sequence[float]]) -> List[Cube]:
    lo, hi = region
    n = len(lo)
    lo_cube = locate(lo, level, shift)
    hi_cube = locate(hi, level, shift)
    ranges = [range(a, b + 1) for a, b in zip(lo_cube.index, hi_cube.index)]
    out = []
    import itertools
    for idx in itertools.product(*ranges):
        out.append(Cube(shift, level, tuple(idx)))
    return out


def c1_of_lambda(lam: float, region: Tuple[Sequence[float], Sequence[float]],
                 params: Params, depth: Optional[int] = None, rtol: float = 1e-8,
                 max_roots: int = 512) -> C1Result:
    """Sup of Xi over all shifts and cubes of side <= 6/lam meeting the region."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    D = params.depth if depth is None else depth
    n = params.n
    k = _level_for_cap(6.0 / lam)
    best = -math.inf
    arg = None
    stable = True
    per_shift: Dict[Tuple[int, ...], float] = {}
    total_roots = 0
    import itertools
    for shift in itertools.product((0, 1, 2), repeat=n):
        roots = _roots_in_region(k, shift, region)
        total_roots += len(roots)
        if total_roots > max_roots:
            raise ValueError("region/scale pair needs too many roots; shrink the region")
        s_best = -math.inf
        for root in roots:
            rep = carleson_profile(root, params, D, rtol)
            stable = stable and rep.depth_stable
            if rep.sup_value > s_best:
                s_best = rep.sup_value
            if rep.sup_value > best:
                best = rep.sup_value
                arg = rep.argmax
        per_shift[shift] = s_best
    empty = not math.isfinite(best)
    return C1Result(lam, best if not empty else math.nan, arg, empty, stable, per_shift)


# ---------------------------------------------------------------------------
# power-weight threshold scan
# ---------------------------------------------------------------------------

@dataclass
class ThresholdRow:
    a: float
    delta: float
    sup_xi: float
    argmax_side: float
    argmax_center_norm: float
    origin_xi: float
    stable: bool


@dataclass
class ThresholdReport:
    params: Params
    rows: List[ThresholdRow]
    origin_slopes: Dict[float, FitResult]      # per a: log sup at origin vs log delta
    center_slopes: Dict[float, FitResult]      # per a: log Xi at rings vs log |center|
    rejected: List[Tuple[float, str]]
    far_ring_radii: Tuple[float, ...]

    def rows_for(self, a: float) -> List[ThresholdRow]:
        return [r for r in self.rows if r.a == a]


def _origin_root(n: int, level: int) -> Cube:
    return Cube((0,) * n, level, (0,) * n)


def _ring_root(n: int, level: int, ring: float) -> Cube:
    side = 2.0 ** (-level)
    m0 = int(round(ring / side))
    idx = (m0,) + (0,) * (n - 1)
    return Cube((0,) * n, level, idx)


def threshold_scan(params: Params, a_list: Sequence[float], delta_list: Sequence[float],
                   depth: Optional[int] = None, rings: Sequence[float] = (1.0, 2.0, 4.0, 8.0, 16.0),
                   ring_depth: int = 6, rtol: float = 1e-8) -> ThresholdReport:
    """Decay/divergence table of the small-scale Carleson supremum for the
    power weight |x|^theta and potentials |x|^a.

    Per (a, delta) the scan reports the profile value at scanned root
    cubes of the largest dyadic side <= delta: the origin-cornered cube
    and far cubes centered near |x| = ring.  Each root carries its own
    depth-stability flag.  Origin rows feed a delta-slope fit; the ring
    values at the smallest delta feed a |center|-slope fit.
    """
    D = params.depth if depth is None else depth
    n = params.n
    if any(d <= 0 or d > 1.0 for d in delta_list):
        raise ValueError("delta schedule must lie in (0, 1]")
    rows: List[ThresholdRow] = []
    rejected: List[Tuple[float, str]] = []
    origin_slopes: Dict[float, FitResult] = {}
    center_slopes: Dict[float, FitResult] = {}
    delta_min = min(delta_list)
    for a in a_list:
        pa = Params(n=params.n, p=params.p, alpha=params.alpha, theta=params.theta,
                    a=a, depth=D)
        try:
            pa.check_threshold()
        except ValueError as exc:
            rejected.append((a, str(exc)))
            continue
        origin_vals: List[Tuple[float, float]] = []
        ring_vals_at_min: List[Tuple[float, float]] = []
        for delta in delta_list:
            k = _level_for_cap(delta)
            rep0 = carleson_profile(_origin_root(n, k), pa, D, rtol)
            xi0 = rep0.root_value
            stable = rep0.depth_stable
            best = xi0
            best_center = _origin_root(n, k).center_norm()
            side = 2.0 ** (-k)
            for ring in rings:
                root = _ring_root(n, k, ring)
                rep = carleson_profile(root, pa, min(ring_depth, D), rtol)
                stable = stable and rep.depth_stable
                v = rep.root_value
                if delta == delta_min:
                    ring_vals_at_min.append((root.center_norm(), v))
                if v > best:
                    best = v
                    best_center = root.center_norm()
            rows.append(ThresholdRow(a, delta, best, side, best_center, xi0, stable))
            origin_vals.append((side ** n, xi0))
        if len(origin_vals) >= 2:
            vols, vals = zip(*origin_vals)
            origin_slopes[a] = fit_loglog(vols, vals)
        if len(ring_vals_at_min) >= 2:
            cs, vs = zip(*ring_vals_at_min)
            center_slopes[a] = fit_loglog(cs, vs)
    return ThresholdReport(params, rows, origin_slopes, center_slopes,
                           rejected, tuple(rings))
