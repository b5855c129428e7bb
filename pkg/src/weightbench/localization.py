"""Localization toolkit: bump dictionary, lattice partitions of unity,
weighted Poincare and Gagliardo-Nirenberg ratios, and the power-growth
remainder probe on shrinking balls.

Test functions are drawn from a small fixed dictionary of smooth bumps
supported in the unit ball and rescaled to B(center, radius); every
supremum over smooth compactly supported functions reported here is a
dictionary supremum and therefore a lower bound for the continuum one.
Derivatives up to order two are analytic (chain rule on the radial
profiles); higher orders fall back to nested central differences with
Richardson extrapolation.

Weighted norms are midpoint sums in the smooth factor against exact
per-cell integrals of the power weight, so the |x|^theta singularity
never meets a sampled value.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fitting import FitResult, fit_loglog
from .measures import Params, power_cube_integrals, spherical_maximal_constant

# ---------------------------------------------------------------------------
# bump profiles on the unit ball
# ---------------------------------------------------------------------------

BUMP_PROFILES = ("radial", "off_x", "off_diag", "linear")

_OFFSETS = {
    # (center_direction, inner_scale): support |z - c| < s stays in |z| < 1
    "off_x": (0.35, 0.60),
    "off_diag": (-0.30, 0.55),
}


def _radial_parts(z: np.ndarray):
    """g(|z|^2), g', g'' for g(rho) = exp(1 - 1/(1 - rho)), support rho < 1."""
    r2 = np.einsum("ij,ij->i", z, z)
    inside = r2 < 1.0 - 1e-12
    g = np.zeros_like(r2)
    gp = np.zeros_like(r2)
    gpp = np.zeros_like(r2)
    q = 1.0 - r2[inside]
    val = np.exp(1.0 - 1.0 / q)
    g[inside] = val
    gp[inside] = -val / q ** 2
    gpp[inside] = val / q ** 4 - 2.0 * val / q ** 3
    return r2, g, gp, gpp


def _bump_fields(z: np.ndarray):
    """(u, grad, hess) of the classical bump at points z (N, n)."""
    n = z.shape[1]
    _, g, gp, gpp = _radial_parts(z)
    u = g
    grad = 2.0 * gp[:, None] * z
    eye = np.eye(n)
    hess = 2.0 * gp[:, None, None] * eye[None, :, :] \
        + 4.0 * gpp[:, None, None] * z[:, :, None] * z[:, None, :]
    return u, grad, hess


def _profile_fields(profile: str, z: np.ndarray):
    """Fields of the named unit-ball profile, with analytic order <= 2."""
    n = z.shape[1]
    if profile == "radial":
        return _bump_fields(z)
    if profile in ("off_x", "off_diag"):
        c1, s = _OFFSETS[profile]
        c = np.zeros(n)
        c[0] = c1
        if profile == "off_diag" and n >= 2:
            c[1] = 0.20
        u, grad, hess = _bump_fields((z - c[None, :]) / s)
        return u, grad / s, hess / s ** 2
    if profile == "linear":
        u, grad, hess = _bump_fields(z)
        v = z[:, 0] * u
        gv = grad * z[:, 0:1]
        gv[:, 0] += u
        hv = hess * z[:, 0:1, None]
        hv[:, 0, :] += grad
        hv[:, :, 0] += grad
        return v, gv, hv
    raise ValueError(f"unknown profile {profile!r}")


@dataclass(frozen=True)
class TestFunction:
    """A dictionary profile rescaled to live on B(center, radius)."""

    profile: str
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.profile not in BUMP_PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def n(self) -> int:
        return len(self.center)

    def _z(self, points: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, float)
        return (np.asarray(points, float) - c[None, :]) / self.radius

    def value(self, points: np.ndarray) -> np.ndarray:
        u, _, _ = _profile_fields(self.profile, self._z(points))
        return u

    def grad(self, points: np.ndarray) -> np.ndarray:
        _, g, _ = _profile_fields(self.profile, self._z(points))
        return g / self.radius

    def hess(self, points: np.ndarray) -> np.ndarray:
        _, _, h = _profile_fields(self.profile, self._z(points))
        return h / self.radius ** 2

    def deriv_norm(self, points: np.ndarray, order: int) -> np.ndarray:
        """Pointwise |nabla^k u|: Euclidean for k=1, Frobenius for k=2,
        nested central differences with Richardson for k >= 3."""
        if order == 0:
            return np.abs(self.value(points))
        if order == 1:
            return np.linalg.norm(self.grad(points), axis=1)
        if order == 2:
            h = self.hess(points)
            return np.sqrt(np.einsum("ijk,ijk->i", h, h))
        return self._fd_deriv_norm(points, order)

    def _fd_deriv_norm(self, points: np.ndarray, order: int) -> np.ndarray:
        h0 = self.radius * 2.0 ** -10

        def tensor_sq(pts, step, k):
            if k == 2:
                hh = self.hess(pts)
                return np.einsum("ijk,ijk->i", hh, hh)
            total = np.zeros(pts.shape[0])
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = step
                up = self._fd_component(pts + e, step, k - 1)
                dn = self._fd_component(pts - e, step, k - 1)
                total += ((up - dn) / (2.0 * step)) ** 2
            return total

        # Richardson on the squared tensor norm
        c1 = tensor_sq(points, h0, order)
        c2 = tensor_sq(points, h0 / 2.0, order)
        return np.sqrt(np.maximum((4.0 * c2 - c1) / 3.0, 0.0))

    def _fd_component(self, pts, step, k):
        if k == 2:
            hh = self.hess(pts)
            return np.sqrt(np.einsum("ijk,ijk->i", hh, hh))
        out = np.zeros(pts.shape[0])
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = step
            up = self._fd_component(pts + e, step, k - 1)
            dn = self._fd_component(pts - e, step, k - 1)
            out += ((up - dn) / (2.0 * step)) ** 2
        return np.sqrt(out)


def dictionary_test_functions(center: Sequence[float], radius: float, n: int
                              ) -> List[TestFunction]:
    c = tuple(float(v) for v in center)
    return [TestFunction(p, c, radius) for p in BUMP_PROFILES]


# ---------------------------------------------------------------------------
# weighted norms on balls
# ---------------------------------------------------------------------------

def _default_cells(n: int) -> int:
    return 48 if n <= 2 else 32


def _ball_cells(center: Sequence[float], radius: float, n: int, cells: int):
    c = np.asarray(center, float)
    h = 2.0 * radius / cells
    ax = [c[i] - radius + h * (np.arange(cells) + 0.5) for i in range(n)]
    grids = np.meshgrid(*ax, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    inside = np.linalg.norm(pts - c[None, :], axis=1) <= radius
    return pts[inside], h


def weighted_seminorm(u: TestFunction, order: int, p: float, weight_exponent: float,
                      cells: Optional[int] = None, weight_scale: float = 1.0) -> float:
    """|| |nabla^k u| ||_{L^p(w)} over u's support ball, w = scale*|x|^e."""
    n = u.n
    cells = cells or _default_cells(n)
    pts, h = _ball_cells(u.center, u.radius, n, cells)
    wints = power_cube_integrals(weight_exponent, n, h, pts)
    vals = u.deriv_norm(pts, order)
    return float(weight_scale * np.dot(vals ** p, wints)) ** (1.0 / p)


# ---------------------------------------------------------------------------
# lattice partition of unity
# ---------------------------------------------------------------------------

def _plateau_parts(r: np.ndarray):
    """h, h', h'' for the smoothstep bump: 1 on r<=1/2, 0 on r>=1."""
    r = np.asarray(r, float)
    h = np.zeros_like(r)
    hp = np.zeros_like(r)
    hpp = np.zeros_like(r)
    h[r <= 0.5] = 1.0
    mid = (r > 0.5) & (r < 1.0)
    if mid.any():
        rm = r[mid]
        s1 = 2.0 - 2.0 * rm
        s2 = 2.0 * rm - 1.0
        F1 = np.exp(-1.0 / s1)
        F2 = np.exp(-1.0 / s2)
        dF1 = F1 / s1 ** 2
        dF2 = F2 / s2 ** 2
        ddF1 = F1 * (1.0 - 2.0 * s1) / s1 ** 4
        ddF2 = F2 * (1.0 - 2.0 * s2) / s2 ** 4
        u, v = F1, F2
        up, vp = -2.0 * dF1, 2.0 * dF2
        upp, vpp = 4.0 * ddF1, 4.0 * ddF2
        w = u + v
        wp = up + vp
        wpp = upp + vpp
        h[mid] = u / w
        hp[mid] = up / w - u * wp / w ** 2
        hpp[mid] = (upp / w - 2.0 * up * wp / w ** 2
                    - u * wpp / w ** 2 + 2.0 * u * wp ** 2 / w ** 3)
    return h, hp, hpp


@dataclass
class PartitionDiagnostics:
    identity_error: float
    phi_min: float
    phi_max: float
    overlap_max: int
    sup_tau_grad: float
    sup_tau_hess: float


@dataclass
class Partition:
    """Lattice bump quotients tau_i = eta_i / Phi with plateau profiles.

    Lattice spacing is delta/(2 sqrt(n)), so every point sits inside
    some plateau and Phi >= 1 on the covered ball; the member count at
    any point is bounded by a dimensional constant independent of delta.
    """

    n: int
    R: float
    delta: float
    spacing: float
    lattice_cap: float
    diagnostics: Optional[PartitionDiagnostics] = None

    def _neighbor_offsets(self):
        W = int(math.ceil(self.delta / self.spacing)) + 1
        return list(itertools.product(range(-W, W + 1), repeat=self.n))

    def _lattice_points(self, base_idx: np.ndarray, offset) -> np.ndarray:
        idx = base_idx + np.asarray(offset)[None, :]
        return idx * self.spacing

    def _eta_fields(self, pts: np.ndarray, xi: np.ndarray):
        y = pts - xi
        dist = np.linalg.norm(y, axis=1)
        r = dist / self.delta
        h, hp, hpp = _plateau_parts(r)
        live = np.linalg.norm(xi, axis=1) <= self.lattice_cap + 1e-12
        h = np.where(live, h, 0.0)
        hp = np.where(live, hp, 0.0)
        hpp = np.where(live, hpp, 0.0)
        safe = np.maximum(dist, 1e-300)
        yhat = y / safe[:, None]
        grad = (hp / self.delta)[:, None] * yhat
        eye = np.eye(self.n)
        proj = yhat[:, :, None] * yhat[:, None, :]
        radial_zero = (r <= 0.5) | (r >= 1.0)
        tang = np.where(radial_zero, 0.0, hp / (self.delta * safe))
        hess = (hpp / self.delta ** 2)[:, None, None] * proj \
            + tang[:, None, None] * (eye[None, :, :] - proj)
        return h, grad, hess

    def phi_fields(self, pts: np.ndarray):
        """Phi = sum eta_i and its first two derivative fields."""
        pts = np.asarray(pts, float)
        base = np.floor(pts / self.spacing).astype(int)
        phi = np.zeros(pts.shape[0])
        gphi = np.zeros((pts.shape[0], self.n))
        hphi = np.zeros((pts.shape[0], self.n, self.n))
        count = np.zeros(pts.shape[0], dtype=int)
        for off in self._neighbor_offsets():
            xi = self._lattice_points(base, off)
            h, g, hh = self._eta_fields(pts, xi)
            phi += h
            gphi += g
            hphi += hh
            count += (h > 0.0).astype(int)
        return phi, gphi, hphi, count

    def tau_sum(self, pts: np.ndarray) -> np.ndarray:
        """sum_i tau_i at the points (1 wherever Phi > 0)."""
        pts = np.asarray(pts, float)
        base = np.floor(pts / self.spacing).astype(int)
        phi, _, _, _ = self.phi_fields(pts)
        total = np.zeros(pts.shape[0])
        for off in self._neighbor_offsets():
            xi = self._lattice_points(base, off)
            h, _, _ = self._eta_fields(pts, xi)
            total += np.where(phi > 0.0, h / np.maximum(phi, 1e-300), 0.0)
        return total

    def tau_derivative_sups(self, pts: np.ndarray) -> Tuple[float, float]:
        """max over members and points of |grad tau_i| and |hess tau_i|_F."""
        pts = np.asarray(pts, float)
        base = np.floor(pts / self.spacing).astype(int)
        phi, gphi, hphi, _ = self.phi_fields(pts)
        phi = np.maximum(phi, 1e-300)
        best_g = 0.0
        best_h = 0.0
        for off in self._neighbor_offsets():
            xi = self._lattice_points(base, off)
            h, g, hh = self._eta_fields(pts, xi)
            gt = g / phi[:, None] - (h / phi ** 2)[:, None] * gphi
            cross = g[:, :, None] * gphi[:, None, :]
            ht = (hh / phi[:, None, None]
                  - (cross + np.transpose(cross, (0, 2, 1))) / (phi ** 2)[:, None, None]
                  - (h / phi ** 2)[:, None, None] * hphi
                  + 2.0 * (h / phi ** 3)[:, None, None]
                  * gphi[:, :, None] * gphi[:, None, :])
            best_g = max(best_g, float(np.linalg.norm(gt, axis=1).max()))
            best_h = max(best_h, float(np.sqrt(np.einsum("ijk,ijk->i", ht, ht)).max()))
        return best_g, best_h


def build_partition_of_unity(R: float, delta: float, n: int,
                             n_samples: int = 10_000, seed: int = 0) -> Partition:
    """Lattice partition covering B(0, R), with sampled diagnostics."""
    if not 0 < delta <= R:
        raise ValueError("need 0 < delta <= R")
    spacing = delta / (2.0 * math.sqrt(n))
    part = Partition(n, R, delta, spacing, lattice_cap=2.0 * R + delta)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-R, R, size=(4 * n_samples, n))
    pts = pts[np.linalg.norm(pts, axis=1) <= R][:n_samples]
    tau = part.tau_sum(pts)
    identity_err = float(np.abs(tau - 1.0).max())
    pts2 = rng.uniform(-2.0 * R, 2.0 * R, size=(4 * n_samples, n))
    pts2 = pts2[np.linalg.norm(pts2, axis=1) <= 2.0 * R][:n_samples]
    phi, _, _, count = part.phi_fields(pts2)
    # derivative sups on one interior lattice cell; by lattice periodicity
    # the interior sup is attained there, and the sampling is
    # delta-covariant so fitted slopes carry no sampling drift
    cell_base = np.full(n, 3.0) * spacing
    grid = np.linspace(0.0, 1.0, 9, endpoint=False) + 0.05
    offs = np.meshgrid(*([grid * spacing] * n), indexing="ij")
    cell_pts = cell_base[None, :] + np.stack([g.ravel() for g in offs], axis=-1)
    sg, sh = part.tau_derivative_sups(cell_pts)
    part.diagnostics = PartitionDiagnostics(
        identity_error=identity_err,
        phi_min=float(phi.min()),
        phi_max=float(phi.max()),
        overlap_max=int(count.max()),
        sup_tau_grad=sg,
        sup_tau_hess=sh,
    )
    return part


# ---------------------------------------------------------------------------
# Poincare / Gagliardo-Nirenberg ratios
# ---------------------------------------------------------------------------

def poincare_ratio(u: TestFunction, x0: Sequence[float], delta: float,
                   params: Params, cells: Optional[int] = None) -> float:
    """||u||_{L^p(B,w)} / (delta^m ||nabla^m u||_{L^p(B, M_S w)})."""
    params.check_localization()
    n, p, m = params.n, params.p, params.m
    d = math.sqrt(sum((a - b) ** 2 for a, b in zip(u.center, x0)))
    if d + u.radius > delta * (1.0 + 1e-9):
        raise ValueError("test function support must lie inside B(x0, delta)")
    ms_const = spherical_maximal_constant(n, params.theta)
    num = weighted_seminorm(u, 0, p, params.theta, cells)
    den = weighted_seminorm(u, m, p, params.theta, cells, weight_scale=ms_const)
    if den == 0.0:
        raise ValueError("vanishing m-th derivative norm")
    return num / (delta ** m * den)


def gagliardo_nirenberg_ratio(u: TestFunction, k: int, m: int, params: Params,
                              cells: Optional[int] = None) -> float:
    """||nabla^k u|| / (||nabla^m u||^{k/m} ||u||^{1-k/m}), all in L^p(w)."""
    if not 0 <= k <= m:
        raise ValueError("need 0 <= k <= m")
    p = params.p
    nk = weighted_seminorm(u, k, p, params.theta, cells)
    nm = weighted_seminorm(u, m, p, params.theta, cells)
    n0 = weighted_seminorm(u, 0, p, params.theta, cells)
    if nm == 0.0 or n0 == 0.0:
        raise ValueError("degenerate test function")
    return nk / (nm ** (k / m) * n0 ** (1.0 - k / m))


# ---------------------------------------------------------------------------
# shrinking-ball probes
# ---------------------------------------------------------------------------

@dataclass
class ProbeRow:
    delta: float
    center_norm: float
    value: float


@dataclass
class TrudingerReport:
    betas: np.ndarray
    required_exponents: np.ndarray
    fitted_exponent: float
    passes: np.ndarray
    measured_min_beta: float
    ratios: List[ProbeRow]


def _potential_ratio(x0: Sequence[float], delta: float, params: Params,
                     v_scale: float, cells: Optional[int], power: float) -> float:
    """sup over the dictionary of (||V phi|| / ||nabla^m phi||)^power."""
    n, p, m = params.n, params.p, params.m
    e_num = params.a * p + params.theta
    if not e_num > -n:
        raise ValueError("potential-weight exponent not locally integrable")
    best = 0.0
    for u in dictionary_test_functions(x0, delta, n):
        num = weighted_seminorm(u, 0, p, e_num, cells, weight_scale=v_scale ** p)
        den = weighted_seminorm(u, m, p, params.theta, cells)
        if den == 0.0:
            continue
        best = max(best, (num / den) ** power)
    return best


def trudinger_probe(params: Params, beta_grid: Sequence[float],
                    delta_list: Sequence[float], cells: Optional[int] = None,
                    slack: float = 0.05) -> TrudingerReport:
    """Smallest beta in the grid for which
    sup_phi ||V phi||^p / ||nabla^m phi||^p <= C delta^{pm/(beta+1)}
    holds with a delta-stable constant, fitted over the delta schedule."""
    params.check_localization()
    if not -params.m < params.a <= 0.0:
        raise ValueError(f"probe needs -m < a <= 0, got a={params.a}")
    p, m = params.p, params.m
    rows = []
    for delta in delta_list:
        val = _potential_ratio((0.0,) * params.n, delta, params, 1.0, cells, power=p)
        rows.append(ProbeRow(delta, 0.0, val))
    ds = [r.delta for r in rows]
    vs = [r.value for r in rows]
    fit = fit_loglog(ds, vs)
    betas = np.asarray(sorted(beta_grid), float)
    required = p * m / (betas + 1.0)
    passes = required <= fit.slope + slack * abs(fit.slope) + 1e-12
    measured = float(betas[passes][0]) if passes.any() else math.nan
    return TrudingerReport(betas, required, fit.slope, passes, measured, rows)


def local_boundedness_probe(params: Params, delta_list: Sequence[float],
                            centers: Sequence[Sequence[float]],
                            v_scale: float = 1.0,
                            cells: Optional[int] = None) -> List[ProbeRow]:
    """Dictionary sup of ||V phi||_{L^p(w)} over phi normalized by
    ||nabla^m phi||_{L^p(w)}, per (delta, center)."""
    params.check_localization()
    rows = []
    for delta in delta_list:
        for c in centers:
            val = _potential_ratio(c, delta, params, v_scale, cells, power=1.0)
            cn = math.sqrt(sum(x * x for x in c))
            rows.append(ProbeRow(delta, cn, val))
    return rows
