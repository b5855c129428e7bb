"""Power-weight quadrature over cubes, balls and spheres.

Everything here integrates |x|^e with a locally integrable exponent
(e > -n), or a caller-supplied bounded density.  Boxes whose closure
avoids the origin are smooth tensor Gauss-Legendre jobs.  A box whose
closure touches the origin is reduced, by splitting along the
coordinate hyperplanes and reflecting, to corner boxes [0, b], and the
corner cube [0, h]^n is evaluated through the self-similar identity

    I([0,h]^n) = I(shell) / (1 - 2^{-(n+e)}),
    shell = [0,h]^n \\ [0,h/2]^n,

whose shell splits into n origin-free boxes.  The singular part
therefore carries an analytic geometric tail with no truncation error.

Also here: the analytic parameter record, dual/potential weight
exponents, per-cube measure triples with a memo table, Muckenhoupt
constants, and spherical averages / the spherical maximal operator.
All functions are pure; the memo table is a single-writer-per-key dict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import betainc
from scipy.special import gamma as _gamma_fn

from .geometry import Ball, Cube

TOL_MIN, TOL_MAX = 1e-12, 1e-2

_SPLIT_GUARD = 40000  # hard cap on adaptive subdivisions per integral


def unit_sphere_area(n: int) -> float:
    """Surface measure of S^{n-1}."""
    return 2.0 * math.pi ** (n / 2.0) / _gamma_fn(n / 2.0)


def unit_ball_volume(n: int) -> float:
    return unit_sphere_area(n) / n


# ---------------------------------------------------------------------------
# parameters and weight specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Params:
    """Analytic parameter record shared by all experiments.

    n      dimension, >= 1
    p      Lebesgue exponent; p = 1 is allowed only for localization probes
    alpha  fractional order in (0, n), used by kernel/capacity/Carleson runs
    m      integer smoothness order (< n), used by localization runs
    theta  weight exponent, w(x) = |x|^theta
    a      potential exponent, V(x) = |x|^a
    lam    resolvent scale > 0
    delta  localization scale > 0
    beta   growth exponent for the power-type remainder term
    depth  dyadic tree truncation depth >= 0
    """

    n: int
    p: float = 2.0
    alpha: Optional[float] = None
    m: Optional[int] = None
    theta: float = 0.0
    a: float = 0.0
    lam: float = 1.0
    delta: float = 1.0
    beta: Optional[float] = None
    depth: int = 8

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be >= 1")
        if not self.p >= 1.0:
            raise ValueError("p must satisfy p >= 1")
        if self.alpha is not None and not 0.0 < self.alpha < self.n:
            raise ValueError(f"alpha must lie in (0, n), got {self.alpha}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    @property
    def p_dual(self) -> float:
        if self.p == 1.0:
            return math.inf
        return self.p / (self.p - 1.0)

    @property
    def sigma_exponent(self) -> float:
        """Exponent of the dual weight sigma = w^{1-p'}."""
        return self.theta * (1.0 - self.p_dual)

    @property
    def muw_exponent(self) -> float:
        """Exponent of the density of d(mu w) = |V|^p w dx."""
        return self.a * self.p + self.theta

    def check_threshold(self) -> None:
        """Admissibility for the power-weight threshold experiments."""
        if not self.p > 1:
            raise ValueError("threshold runs need p > 1")
        if self.alpha is None:
            raise ValueError("threshold runs need alpha")
        if not 0.0 <= self.theta < (self.n - 1) * (self.p - 1):
            raise ValueError(
                f"theta must satisfy 0 <= theta < (n-1)(p-1) = "
                f"{(self.n - 1) * (self.p - 1)}, got {self.theta}")
        a_min = -self.n / self.p + (self.p_dual - 1.0) * self.theta / self.p
        if not self.a > a_min:
            raise ValueError(f"a must exceed -n/p + (p'-1)theta/p = {a_min}, got {self.a}")

    def check_localization(self) -> None:
        if self.m is None or not 1 <= self.m < self.n:
            raise ValueError("localization runs need integer m with 1 <= m < n")
        if not (1.0 - self.n) < self.theta <= 0.0:
            raise ValueError(f"theta must lie in (1-n, 0], got {self.theta}")

    def check_capacity(self) -> None:
        if not self.p > 1:
            raise ValueError("capacity runs need p > 1")
        if self.alpha is None or not self.alpha < self.n / self.p:
            raise ValueError(f"capacity runs need alpha < n/p = {self.n / self.p}")


@dataclass(frozen=True)
class WeightSpec:
    """A pointwise density to integrate: |x|^exponent, or a caller evaluator.

    The kinds `weight`, `dual` and `potential_density` are the three
    power exponents theta, theta(1-p') and a*p + theta derived from a
    Params record.  Custom evaluators must be bounded on the regions
    they are integrated over; no singular handling is attempted.
    """

    n: int
    kind: str = "power"
    exponent: Optional[float] = None
    evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind == "power":
            if self.exponent is None:
                raise ValueError("power weight needs an exponent")
            if not self.exponent > -self.n:
                raise ValueError(
                    f"exponent must exceed -n for local integrability, got {self.exponent}")
        elif self.kind == "custom":
            if self.evaluator is None:
                raise ValueError("custom weight needs an evaluator")
        else:
            raise ValueError(f"unknown weight kind {self.kind!r}")

    @staticmethod
    def power(n: int, exponent: float) -> "WeightSpec":
        return WeightSpec(n=n, kind="power", exponent=exponent)

    @staticmethod
    def weight(params: Params) -> "WeightSpec":
        return WeightSpec.power(params.n, params.theta)

    @staticmethod
    def dual(params: Params) -> "WeightSpec":
        return WeightSpec.power(params.n, params.sigma_exponent)

    @staticmethod
    def potential_density(params: Params) -> "WeightSpec":
        return WeightSpec.power(params.n, params.muw_exponent)

    @staticmethod
    def custom(n: int, evaluator: Callable[[np.ndarray], np.ndarray]) -> "WeightSpec":
        return WeightSpec(n=n, kind="custom", evaluator=evaluator)


@dataclass(frozen=True)
class QuadResult:
    value: float
    rel_err: float
    converged: bool


@dataclass(frozen=True)
class MeasureTriple:
    """Per-cube integrals (w(Q), sigma(Q), mu_w(Q)) with achieved tolerance."""
    w: float
    sigma: float
    muw: float
    rel_tol: float


# ---------------------------------------------------------------------------
# Gauss-Legendre machinery
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gl(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * x, 0.5 * w  # nodes on [-1/2, 1/2], weights summing to 1


@lru_cache(maxsize=None)
def _gl_tensor(order: int, n: int):
    """Tensor offsets (order^n, n) and weights (order^n,) on [-1/2,1/2]^n."""
    x, w = _gl(order)
    grids = np.meshgrid(*([x] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * n), indexing="ij")
    wts = wgrids[0].ravel().copy()
    for g in wgrids[1:]:
        wts *= g.ravel()
    return pts, wts


def _power_gl_box(e: float, lo: np.ndarray, hi: np.ndarray, order: int) -> float:
    """Tensor GL of |x|^e over the box [lo, hi]."""
    n = lo.size
    pts, wts = _gl_tensor(order, n)
    c = 0.5 * (lo + hi)
    s = hi - lo
    xy = c[None, :] + pts * s[None, :]
    r2 = np.einsum("ij,ij->i", xy, xy)
    vals = np.ones_like(r2) if e == 0.0 else r2 ** (0.5 * e)
    return float(vals @ wts) * float(np.prod(s))


def _callable_gl_box(f, lo: np.ndarray, hi: np.ndarray, order: int) -> float:
    n = lo.size
    pts, wts = _gl_tensor(order, n)
    c = 0.5 * (lo + hi)
    s = hi - lo
    xy = c[None, :] + pts * s[None, :]
    vals = np.asarray(f(xy), dtype=float)
    return float(vals @ wts) * float(np.prod(s))


def _adaptive_box(eval_pair, lo, hi, rtol, abs_floor=0.0):
    """Generic adaptive bisection driver over boxes.

    eval_pair(lo, hi) -> (coarse, fine).  A piece is accepted when the
    order difference is below rtol relative to the piece or below the
    absolute floor; otherwise it splits along its widest axis.  The
    integrand is assumed nonnegative, so per-piece relative errors
    compose into a global relative error.
    """
    total = 0.0
    worst = 0.0
    converged = True
    stack = [(np.asarray(lo, float), np.asarray(hi, float))]
    splits = 0
    while stack:
        lo1, hi1 = stack.pop()
        a, b = eval_pair(lo1, hi1)
        d = abs(b - a)
        if d <= rtol * abs(b) or d <= abs_floor:
            total += b
            if abs(b) > 0:
                worst = max(worst, d / abs(b))
            continue
        splits += 1
        if splits > _SPLIT_GUARD:
            total += b
            worst = max(worst, d / max(abs(b), 1e-300))
            converged = False
            continue
        axis = int(np.argmax(hi1 - lo1))
        mid = 0.5 * (lo1[axis] + hi1[axis])
        l2, h2 = lo1.copy(), hi1.copy()
        l2[axis], h2[axis] = lo1[axis], mid
        stack.append((l2.copy(), h2.copy()))
        l2[axis], h2[axis] = mid, hi1[axis]
        stack.append((l2, h2))
    return total, worst, converged


def _power_box_regular(e: float, lo, hi, rtol: float) -> QuadResult:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)

    def pair(l, h):
        return _power_gl_box(e, l, h, 8), _power_gl_box(e, l, h, 16)

    rough = _power_gl_box(e, lo, hi, 16)
    total, worst, ok = _adaptive_box(pair, lo, hi, rtol, abs_floor=0.01 * rtol * abs(rough))
    return QuadResult(total, worst, ok)


def _power_corner_cube(e: float, h: float, n: int, rtol: float) -> QuadResult:
    """Exact-tail integral of |x|^e over [0, h]^n via one dyadic shell."""
    if h == 0.0:
        return QuadResult(0.0, 0.0, True)
    shell = 0.0
    worst = 0.0
    ok = True
    for j in range(n):
        lo = np.zeros(n)
        hi = np.full(n, h)
        hi[:j] = h / 2.0
        lo[j] = h / 2.0
        r = _power_box_regular(e, lo, hi, rtol)
        shell += r.value
        worst = max(worst, r.rel_err)
        ok = ok and r.converged
    factor = 1.0 / (1.0 - 2.0 ** (-(n + e)))
    return QuadResult(shell * factor, worst, ok)


def _power_corner_box(e: float, b: np.ndarray, rtol: float) -> QuadResult:
    """|x|^e over [0, b] with the origin at the corner."""
    n = b.size
    c = float(b.min())
    if c == 0.0:
        return QuadResult(0.0, 0.0, True)
    core = _power_corner_cube(e, c, n, rtol)
    total, worst, ok = core.value, core.rel_err, core.converged
    for j in range(n):
        if b[j] <= c:
            continue
        lo = np.zeros(n)
        hi = b.astype(float).copy()
        hi[:j] = np.minimum(hi[:j], c)
        lo[j] = c
        r = _power_box_regular(e, lo, hi, rtol)
        total += r.value
        worst = max(worst, r.rel_err)
        ok = ok and r.converged
    return QuadResult(total, worst, ok)


def _power_box(e: float, lo, hi, rtol: float, n: Optional[int] = None) -> QuadResult:
    """|x|^e over an arbitrary box, singularities handled exactly."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    dim = lo.size
    if not e > -dim:
        raise ValueError(f"exponent {e} is not locally integrable in dimension {dim}")
    if np.any(hi < lo):
        raise ValueError("empty box")
    if np.any(hi == lo):
        return QuadResult(0.0, 0.0, True)
    touches = np.all((lo <= 0.0) & (0.0 <= hi))
    if not touches:
        # reflect axes that are fully negative; |x|^e is even per axis
        lo2, hi2 = lo.copy(), hi.copy()
        for i in range(dim):
            if hi2[i] <= 0.0:
                lo2[i], hi2[i] = -hi[i], -lo[i]
        return _power_box_regular(e, lo2, hi2, rtol)
    total = 0.0
    worst = 0.0
    ok = True
    segs = []
    for i in range(dim):
        s = []
        if lo[i] < 0.0:
            s.append(-lo[i])
        if hi[i] > 0.0:
            s.append(hi[i])
        segs.append(s)
    import itertools as _it
    for combo in _it.product(*segs):
        r = _power_corner_box(e, np.asarray(combo, float), rtol)
        total += r.value
        worst = max(worst, r.rel_err)
        ok = ok and r.converged
    return QuadResult(total, worst, ok)


# ---------------------------------------------------------------------------
# 1-d adaptive quadrature for radial and angular reductions
# ---------------------------------------------------------------------------

def _quad_1d(fvec, a: float, b: float, rtol: float) -> QuadResult:
    """Adaptive GL of a nonnegative vectorizable integrand on [a, b]."""
    if b <= a:
        return QuadResult(0.0, 0.0, True)
    x16, w16 = _gl(16)
    x32, w32 = _gl(32)

    def eval_order(l, h, x, w):
        c, s = 0.5 * (l + h), h - l
        return float(np.asarray(fvec(c + x * s)) @ w) * s

    rough = eval_order(a, b, x32, w32)

    def pair(l, h):
        l0, h0 = float(l[0]), float(h[0])
        return (eval_order(l0, h0, x16, w16), eval_order(l0, h0, x32, w32))

    total, worst, ok = _adaptive_box(pair, np.array([a]), np.array([b]),
                                     rtol, abs_floor=0.01 * rtol * abs(rough))
    return QuadResult(total, worst, ok)


def _cap_fraction(u, n: int):
    """Fraction of S^{n-1} within polar angle arccos(u) of the axis."""
    u = np.clip(np.asarray(u, float), -1.0, 1.0)
    s2 = np.clip(1.0 - u * u, 0.0, 1.0)
    half = 0.5 * betainc((n - 1) / 2.0, 0.5, s2)
    return np.where(u >= 0.0, half, 1.0 - half)


def _power_ball(e: float, center: Sequence[float], radius: float, rtol: float) -> QuadResult:
    n = len(center)
    if not e > -n:
        raise ValueError(f"exponent {e} is not locally integrable in dimension {n}")
    c = math.sqrt(sum(ci * ci for ci in center))
    if n == 1:
        return _power_box(e, [center[0] - radius], [center[0] + radius], rtol)
    area = unit_sphere_area(n)
    total = 0.0
    worst = 0.0
    ok = True
    if c == 0.0:
        r = _power_box(n + e - 1.0, [0.0], [radius], rtol)
        return QuadResult(area * r.value, r.rel_err, r.converged)
    if c < radius:
        r = _power_box(n + e - 1.0, [0.0], [radius - c], rtol)
        total += area * r.value
        worst = max(worst, r.rel_err)
        ok = ok and r.converged
        lo_rho = radius - c
    else:
        lo_rho = c - radius

    def f(rho):
        rho = np.asarray(rho, float)
        u = (rho * rho + c * c - radius * radius) / (2.0 * rho * c)
        return rho ** (n + e - 1.0) * _cap_fraction(u, n)

    r2 = _quad_1d(f, lo_rho, c + radius, rtol)
    total += area * r2.value
    worst = max(worst, r2.rel_err)
    ok = ok and r2.converged
    return QuadResult(total, worst, ok)


# ---------------------------------------------------------------------------
# public integration API
# ---------------------------------------------------------------------------

def integrate_weight_detailed(spec: WeightSpec, region: Union[Cube, Ball],
                              tol: float = 1e-8) -> QuadResult:
    if not TOL_MIN <= tol <= TOL_MAX:
        raise ValueError(f"tolerance must lie in [{TOL_MIN}, {TOL_MAX}]")
    if spec.kind == "custom":
        if isinstance(region, Cube):
            lo = np.asarray(region.lo())
            hi = np.asarray(region.hi())

            def pair(l, h):
                return (_callable_gl_box(spec.evaluator, l, h, 8),
                        _callable_gl_box(spec.evaluator, l, h, 16))

            rough = _callable_gl_box(spec.evaluator, lo, hi, 16)
            total, worst, okf = _adaptive_box(pair, lo, hi, tol,
                                              abs_floor=0.01 * tol * abs(rough))
            return QuadResult(total, worst, okf)
        raise ValueError("custom weights are integrated over cubes only")
    e = spec.exponent
    if isinstance(region, Cube):
        return _power_box(e, region.lo(), region.hi(), tol)
    if isinstance(region, Ball):
        return _power_ball(e, region.center, region.radius, tol)
    raise TypeError(f"unsupported region type {type(region)!r}")


def integrate_weight(spec: WeightSpec, region: Union[Cube, Ball], tol: float = 1e-8) -> float:
    return integrate_weight_detailed(spec, region, tol).value


def measure_triple(params: Params, cube: Cube, tol: float = 1e-8) -> MeasureTriple:
    """w(Q), sigma(Q), mu_w(Q) for the power weight/potential in `params`."""
    e_sigma = params.sigma_exponent
    e_muw = params.muw_exponent
    if not e_sigma > -params.n:
        raise ValueError(f"dual exponent {e_sigma} not locally integrable")
    if not e_muw > -params.n:
        raise ValueError(f"potential density exponent {e_muw} not locally integrable")
    rw = _power_box(params.theta, cube.lo(), cube.hi(), tol)
    rs = _power_box(e_sigma, cube.lo(), cube.hi(), tol)
    rm = _power_box(e_muw, cube.lo(), cube.hi(), tol)
    return MeasureTriple(rw.value, rs.value, rm.value,
                         max(rw.rel_err, rs.rel_err, rm.rel_err))


class MeasureCache:
    """Memo table of power-weight cube integrals keyed by (exponent, cube).

    Writes happen once per key; CPython dict assignment is atomic, so
    concurrent workers sharing the table see either a miss or the final
    value (single-writer-per-key discipline).
    """

    def __init__(self, tol: float = 1e-8):
        self.tol = tol
        self._table: Dict[Tuple[float, Cube], float] = {}

    def cube_integral(self, exponent: float, cube: Cube) -> float:
        key = (exponent, cube)
        v = self._table.get(key)
        if v is None:
            v = _power_box(exponent, cube.lo(), cube.hi(), self.tol).value
            self._table[key] = v
        return v

    def triple(self, params: Params, cube: Cube) -> MeasureTriple:
        return MeasureTriple(
            self.cube_integral(params.theta, cube),
            self.cube_integral(params.sigma_exponent, cube),
            self.cube_integral(params.muw_exponent, cube),
            self.tol,
        )

    def __len__(self):
        return len(self._table)


# ---------------------------------------------------------------------------
# vectorized cube-grid integrals (the dyadic tree engine's workhorse)
# ---------------------------------------------------------------------------

_CHUNK_POINTS = 4_000_000


def _gl_batch(e: float, centers: np.ndarray, side: float, order: int) -> np.ndarray:
    n = centers.shape[1]
    pts, wts = _gl_tensor(order, n)
    vol = side ** n
    out = np.empty(centers.shape[0])
    block = max(1, _CHUNK_POINTS // pts.shape[0])
    for s in range(0, centers.shape[0], block):
        cs = centers[s:s + block]
        xy = cs[:, None, :] + side * pts[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", xy, xy)
        vals = r2 ** (0.5 * e)
        out[s:s + block] = vals @ wts
    return out * vol


def power_cube_integrals(exponent: float, n: int, side: float,
                         centers: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Integrals of |x|^exponent over axis-aligned cubes of equal side.

    `centers` has shape (N, n).  Cubes far from the origin get a single
    tensor GL pass; cubes in a near band are checked with two orders and
    fall back to the exact scalar path on disagreement; cubes touching
    the origin always take the scalar path.
    """
    centers = np.asarray(centers, float)
    if centers.ndim == 1:
        centers = centers[:, None]
    N = centers.shape[0]
    out = np.empty(N)
    if exponent == 0.0:
        out.fill(side ** n)
        return out
    half = 0.5 * side
    gap = np.maximum(np.abs(centers) - half, 0.0)
    dist = np.sqrt(np.einsum("ij,ij->i", gap, gap))
    touching = np.all(np.abs(centers) <= half, axis=1)
    far = (~touching) & (dist >= 2.0 * math.sqrt(n) * side)
    near = (~touching) & (~far)
    if far.any():
        out[far] = _gl_batch(exponent, centers[far], side, 8)
    if near.any():
        a = _gl_batch(exponent, centers[near], side, 24)
        b = _gl_batch(exponent, centers[near], side, 32)
        bad = np.abs(b - a) > rtol * np.abs(b)
        vals = b
        if bad.any():
            idx = np.flatnonzero(near)[bad]
            for i in idx:
                lo = centers[i] - half
                hi = centers[i] + half
                vals_i = _power_box(exponent, lo, hi, rtol).value
                out[i] = vals_i
            vals = vals[~bad]
            keep = np.flatnonzero(near)[~bad]
            out[keep] = vals
        else:
            out[near] = vals
    if touching.any():
        for i in np.flatnonzero(touching):
            lo = centers[i] - half
            hi = centers[i] + half
            out[i] = _power_box(exponent, lo, hi, rtol).value
    return out


# ---------------------------------------------------------------------------
# spherical averages and the spherical maximal operator
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _sin_power_mass(n: int) -> float:
    # \int_0^pi sin^{n-2} phi dphi
    return math.sqrt(math.pi) * _gamma_fn((n - 1) / 2.0) / _gamma_fn(n / 2.0)


def sphere_average_power(exponent: float, center_norm: float, t: float,
                         n: int, rtol: float = 1e-6) -> float:
    """Average of |y|^exponent over the sphere {|y - x| = t}, |x| = center_norm."""
    if t <= 0:
        raise ValueError("sphere radius must be positive")
    c = float(center_norm)
    if n == 1:
        lo, hi = abs(c - t), c + t
        if lo == 0.0 and exponent < 0:
            raise ValueError("non-integrable sphere configuration (t = |x|)")
        return 0.5 * (lo ** exponent + hi ** exponent)
    if c == 0.0:
        return t ** exponent
    if t == c and exponent <= -(n - 1):
        raise ValueError("non-integrable sphere configuration (t = |x|)")

    def f(phi):
        phi = np.asarray(phi, float)
        r2 = c * c + t * t - 2.0 * c * t * np.cos(phi)
        r2 = np.maximum(r2, 0.0)
        vals = r2 ** (0.5 * exponent)
        return vals * np.sin(phi) ** (n - 2)

    q = _quad_1d(f, 0.0, math.pi, rtol)
    return q.value / _sin_power_mass(n)


def spherical_maximal(spec: WeightSpec, x: Sequence[float], t_grid: Sequence[float],
                      rtol: float = 1e-6) -> Tuple[np.ndarray, float]:
    """Sphere averages A_t of the weight at x over t_grid, and their sup."""
    if spec.kind != "power":
        raise ValueError("spherical averages are implemented for power weights")
    e = spec.exponent
    c = math.sqrt(sum(xi * xi for xi in x))
    if c == 0.0 and e < 0:
        raise ValueError("x must be nonzero for negative exponents")
    vals = np.array([sphere_average_power(e, c, t, spec.n, rtol) for t in t_grid])
    return vals, float(vals.max())


@lru_cache(maxsize=None)
def spherical_maximal_constant(n: int, theta: float) -> float:
    """C with M_S |x|^theta = C |x|^theta, for 1-n < theta <= 0.

    By scaling, the sphere average of |y|^theta at |x| = 1 and radius s
    is a single function g(s); the maximal operator multiplies the
    weight by sup_s g(s).
    """
    if theta == 0.0:
        return 1.0
    if not (1.0 - n) < theta <= 0.0:
        raise ValueError(f"power weight is admissible only for 1-n < theta <= 0, got {theta}")
    grid = np.concatenate([
        np.geomspace(1e-4, 0.5, 40),
        np.linspace(0.5, 1.5, 161),
        np.geomspace(1.5, 1e4, 40),
    ])
    best = 1.0
    for s in grid:
        try:
            v = sphere_average_power(theta, 1.0, float(s), n, rtol=1e-7)
        except ValueError:
            continue
        best = max(best, v)
    return best


# ---------------------------------------------------------------------------
# Muckenhoupt constants
# ---------------------------------------------------------------------------

def _box_norm_range(cube: Cube) -> Tuple[float, float]:
    """Exact min/max of |x| over the closed cube."""
    lo = np.asarray(cube.lo())
    hi = np.asarray(cube.hi())
    nearest = np.clip(0.0, lo, hi)
    farthest = np.where(np.abs(lo) > np.abs(hi), lo, hi)
    return float(np.linalg.norm(nearest)), float(np.linalg.norm(farthest))


def _power_essinf(exponent: float, cube: Cube) -> float:
    rmin, rmax = _box_norm_range(cube)
    if exponent >= 0:
        return rmin ** exponent
    if rmin == 0.0:
        return math.inf if exponent < 0 and rmax == 0.0 else rmax ** exponent
    return rmax ** exponent


def muckenhoupt_constant(spec: WeightSpec, p: float, q: Optional[float],
                         kind: str, cube_family: Sequence[Cube],
                         tol: float = 1e-8, grid_levels: int = 6) -> float:
    """Sup over the cube family of the defining weight-class quotient.

    kind: 'Ap' (p-class quotient), 'Apq' (two-exponent quotient with q),
    or 'AinfFW' (Fujii-Wilson quotient with the maximal function sampled
    on a hierarchical sub-grid; qualitative use only, n <= 2).
    A non-integrable dual part makes the quotient infinite for that
    cube; the sup is then inf as well.
    """
    cubes = list(cube_family)
    if not cubes:
        raise ValueError("empty cube family")
    if spec.kind != "power":
        raise ValueError("Muckenhoupt quotients are implemented for power weights")
    e = spec.exponent
    best = 0.0
    for Q in cubes:
        vol = Q.volume
        if kind == "Ap":
            avg_w = _power_box(e, Q.lo(), Q.hi(), tol).value / vol
            if p == 1.0:
                ess = _power_essinf(e, Q)
                quot = math.inf if ess == 0.0 else avg_w / ess
            else:
                e_dual = e * (1.0 - p / (p - 1.0))
                if not e_dual > -spec.n:
                    quot = math.inf
                else:
                    avg_s = _power_box(e_dual, Q.lo(), Q.hi(), tol).value / vol
                    quot = avg_w * avg_s ** (p - 1.0)
        elif kind == "Apq":
            if q is None:
                raise ValueError("Apq needs q")
            pd = p / (p - 1.0)
            e_q = e * q
            e_d = -e * pd
            if not (e_q > -spec.n and e_d > -spec.n):
                quot = math.inf
            else:
                avg_q = _power_box(e_q, Q.lo(), Q.hi(), tol).value / vol
                avg_d = _power_box(e_d, Q.lo(), Q.hi(), tol).value / vol
                quot = avg_q * avg_d ** (q / pd)
        elif kind == "AinfFW":
            if spec.n > 2:
                raise ValueError("Fujii-Wilson estimator supports n <= 2 only")
            quot = _fujii_wilson_quotient(e, Q, tol, grid_levels)
        else:
            raise ValueError(f"unknown Muckenhoupt kind {kind!r}")
        best = max(best, quot)
    return best


def _fujii_wilson_quotient(e: float, Q: Cube, tol: float, levels: int) -> float:
    n = Q.n
    m = 1 << levels
    side = Q.side / m
    lo = np.asarray(Q.lo())
    ax = [lo[i] + side * (np.arange(m) + 0.5) for i in range(n)]
    grids = np.meshgrid(*ax, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=-1)
    cell = power_cube_integrals(e, n, side, centers, tol).reshape((m,) * n)
    wQ = float(cell.sum())
    if wQ <= 0:
        return math.inf
    # dyadic maximal function over sub-cubes of Q, evaluated per finest cell
    maxavg = cell / side ** n
    level_arr = cell
    size = m
    while size > 1:
        shape = []
        for _ in range(n):
            shape.extend([size // 2, 2])
        level_arr = level_arr.reshape(shape).sum(axis=tuple(range(1, 2 * n, 2)))
        size //= 2
        avg = level_arr / (Q.side / size) ** n
        expand = avg
        for axis in range(n):
            expand = np.repeat(expand, m // size, axis=axis)
        maxavg = np.maximum(maxavg, expand)
    integral_M = float((maxavg * side ** n).sum())
    return integral_M / wQ
