"""Stopping-time sparse families on truncated dyadic trees.

A TreeMeasure carries the integrals of a nonnegative density over every
cube of the depth-D tree below one root, stored as per-level arrays
rolled up exactly from the leaf cells.  Sparse families are built by
the usual stopping-time recursion: from a selected cube, the maximal
strict descendants whose average exceeds thresholdFactor times the
selected cube's average become the next generation.  Maximality makes
the stopping children of one cube disjoint, so with threshold T the
witness set E_Q = Q minus its stopping children has measure at least
(1 - 1/T)|Q|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import Cube, descendant
from .measures import power_cube_integrals


def _child_sum(arr: np.ndarray, n: int) -> np.ndarray:
    m = arr.shape[0] // 2
    shape = []
    for _ in range(n):
        shape.extend([m, 2])
    return arr.reshape(shape).sum(axis=tuple(range(1, 2 * n, 2)))


@dataclass
class TreeMeasure:
    """Integrals of a nonnegative density over every cube of a truncated tree."""

    root: Cube
    depth: int
    levels: List[np.ndarray]  # levels[j] has shape (2^j,)*n

    @property
    def n(self) -> int:
        return self.root.n

    @staticmethod
    def from_leaf_integrals(root: Cube, leaves: np.ndarray) -> "TreeMeasure":
        n = root.n
        depth = int(round(math.log2(leaves.shape[0])))
        if leaves.shape != (1 << depth,) * n:
            raise ValueError("leaf array must be a (2^D,)*n hypercube")
        if np.any(leaves < 0):
            raise ValueError("leaf integrals must be nonnegative")
        levels = [None] * (depth + 1)
        levels[depth] = np.asarray(leaves, float)
        for j in range(depth - 1, -1, -1):
            levels[j] = _child_sum(levels[j + 1], n)
        return TreeMeasure(root, depth, levels)

    @staticmethod
    def from_callable(f, root: Cube, depth: int) -> "TreeMeasure":
        """Midpoint cell integrals of a pointwise density."""
        n = root.n
        m = 1 << depth
        h = root.side / m
        lo = np.asarray(root.lo())
        ax = [lo[i] + h * (np.arange(m) + 0.5) for i in range(n)]
        grids = np.meshgrid(*ax, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        vals = np.asarray(f(pts), float)
        if np.any(vals < 0):
            raise ValueError("density must be nonnegative")
        return TreeMeasure.from_leaf_integrals(root, (vals * h ** n).reshape((m,) * n))

    @staticmethod
    def from_exponent(exponent: float, root: Cube, depth: int,
                      rtol: float = 1e-8) -> "TreeMeasure":
        """Leaf integrals of |x|^exponent by quadrature, exact rollup above."""
        n = root.n
        m = 1 << depth
        h = root.side / m
        lo = np.asarray(root.lo())
        ax = [lo[i] + h * (np.arange(m) + 0.5) for i in range(n)]
        grids = np.meshgrid(*ax, indexing="ij")
        centers = np.stack([g.ravel() for g in grids], axis=-1)
        leaves = power_cube_integrals(exponent, n, h, centers, rtol).reshape((m,) * n)
        return TreeMeasure.from_leaf_integrals(root, leaves)

    def integral(self, rel_level: int, rel_index: Tuple[int, ...]) -> float:
        return float(self.levels[rel_level][rel_index])

    def volume(self, rel_level: int) -> float:
        return (self.root.side / (1 << rel_level)) ** self.n

    def average(self, rel_level: int, rel_index: Tuple[int, ...]) -> float:
        return self.integral(rel_level, rel_index) / self.volume(rel_level)

    def cube(self, rel_level: int, rel_index: Tuple[int, ...]) -> Cube:
        return descendant(self.root, rel_level, rel_index)

    def rel_index_of_point(self, x: Sequence[float], rel_level: int) -> Optional[Tuple[int, ...]]:
        m = 1 << rel_level
        h = self.root.side / m
        lo = self.root.lo()
        idx = []
        for xi, li in zip(x, lo):
            j = int(math.floor((xi - li) / h))
            if not 0 <= j < m:
                return None
            idx.append(j)
        return tuple(idx)


Node = Tuple[int, Tuple[int, ...]]


@dataclass
class SparseFamily:
    """A stopping-time family with its disjoint witness-measure accounting."""

    shift: Tuple[int, ...]
    root: Cube
    depth: int
    members: List[Node]                      # (rel_level, rel_index), selection order
    stopping: Dict[Node, List[Node]]         # selected cube -> its stopping children
    witness_measure: Dict[Node, float]       # |E_Q| = |Q| - sum of stopping children
    threshold_factor: float

    def cubes(self) -> List[Cube]:
        return [descendant(self.root, j, idx) for j, idx in self.members]

    def cube_of(self, node: Node) -> Cube:
        return descendant(self.root, node[0], node[1])

    def __len__(self):
        return len(self.members)


def _children_nodes(node: Node) -> List[Node]:
    j, idx = node
    out = []
    n = len(idx)
    for e in range(1 << n):
        child = tuple(2 * idx[i] + ((e >> i) & 1) for i in range(n))
        out.append((j + 1, child))
    return out


def build_sparse_family(g: TreeMeasure, threshold_factor: float = 2.0,
                        depth: Optional[int] = None) -> SparseFamily:
    """Stopping-time selection from the root of `g`'s tree.

    From each selected cube Q, the maximal strict descendants Q' with
    average(Q') > threshold_factor * average(Q) are selected next; the
    recursion stops at the tree depth.
    """
    if threshold_factor < 2.0:
        raise ValueError("threshold_factor must be >= 2 to guarantee 1/2-sparseness")
    D = g.depth if depth is None else min(depth, g.depth)
    if D > 24:
        raise ValueError("depth must be <= 24")
    vol = [g.volume(j) for j in range(D + 1)]
    root_node: Node = (0, (0,) * g.n)
    members: List[Node] = []
    stopping: Dict[Node, List[Node]] = {}
    witness: Dict[Node, float] = {}
    queue = [root_node]
    while queue:
        node = queue.pop(0)
        j0, idx0 = node
        avg0 = g.average(j0, idx0)
        stops: List[Node] = []
        if avg0 > 0.0 and j0 < D:
            scan = _children_nodes(node)
            while scan:
                cand = scan.pop(0)
                jc, ic = cand
                if g.average(jc, ic) > threshold_factor * avg0:
                    stops.append(cand)
                elif jc < D:
                    scan.extend(_children_nodes(cand))
        members.append(node)
        stopping[node] = stops
        witness[node] = vol[j0] - sum(vol[jc] for jc, _ in stops)
        queue.extend(stops)
    return SparseFamily(g.root.shift, g.root, D, members, stopping, witness,
                        threshold_factor)


# ---------------------------------------------------------------------------
# local dyadic / sparse Riesz operators
# ---------------------------------------------------------------------------

def local_riesz_apply(mode: str, g: TreeMeasure, alpha: float, lam: float,
                      x: Sequence[float], family: Optional[SparseFamily] = None) -> float:
    """Sum of |Q|^{alpha/n - 1} \int_Q g over cubes containing x with
    side(Q) <= 6/lam, over the full truncated grid ('dyadic') or over a
    sparse family ('sparse')."""
    n = g.n
    cap = 6.0 / lam
    total = 0.0
    if mode == "dyadic":
        for j in range(g.depth + 1):
            side = g.root.side / (1 << j)
            if side > cap:
                continue
            idx = g.rel_index_of_point(x, j)
            if idx is None:
                break
            total += (side ** n) ** (alpha / n - 1.0) * g.integral(j, idx)
        return total
    if mode == "sparse":
        if family is None:
            raise ValueError("sparse mode needs a family")
        for j, idx in family.members:
            side = g.root.side / (1 << j)
            if side > cap:
                continue
            pt_idx = g.rel_index_of_point(x, j)
            if pt_idx == idx:
                total += (side ** n) ** (alpha / n - 1.0) * g.integral(j, idx)
        return total
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# quantitative checks on sparse families
# ---------------------------------------------------------------------------

@dataclass
class SparseBoundsReport:
    """Ratios probing the nested-sum and overlap-norm bounds.

    nested_ratios[Q-node]: sum over family descendants of
    |Q'|^{a1} mu(Q')^{a2}, divided by |Q|^{a1} mu(Q)^{a2}.
    overlap_ratio: ||sum lam_Q chi_Q||_{L^p(sigma)}^p / sum lam_Q^p sigma(Q).
    """
    nested_ratios: Dict[Node, float]
    max_nested_ratio: float
    overlap_ratio: float
    skipped: int


def check_sparse_bounds(family: SparseFamily, mu: TreeMeasure,
                        alpha1: float, alpha2: float,
                        sigma: TreeMeasure, p: float,
                        lam_weights: Optional[Union[Dict[Node, float], Callable[[Node], float]]] = None,
                        ) -> SparseBoundsReport:
    if not (alpha1 > 0 and alpha2 >= 0 and alpha1 + alpha2 >= 1):
        raise ValueError("need alpha1 > 0, alpha2 >= 0, alpha1 + alpha2 >= 1")
    n = family.root.n

    def lam_of(node: Node) -> float:
        if lam_weights is None:
            return 1.0
        if callable(lam_weights):
            return float(lam_weights(node))
        return float(lam_weights.get(node, 0.0))

    # weights of the nested sum per member
    terms: Dict[Node, float] = {}
    skipped = 0
    for node in family.members:
        j, idx = node
        vol = family.root.volume / (1 << (j * n))
        muv = mu.integral(j, idx)
        if muv == 0.0 and alpha2 > 0:
            skipped += 1
            terms[node] = None
            continue
        terms[node] = vol ** alpha1 * (muv ** alpha2 if alpha2 > 0 else 1.0)

    # descendant sums by one pass in decreasing selection order
    desc: Dict[Node, float] = {node: (terms[node] or 0.0) for node in family.members}
    for node in reversed(family.members):
        for ch in family.stopping[node]:
            desc[node] += desc[ch]
    ratios: Dict[Node, float] = {}
    for node in family.members:
        if terms[node] is None or terms[node] == 0.0:
            continue
        ratios[node] = desc[node] / terms[node]
    max_ratio = max(ratios.values()) if ratios else math.nan

    # overlap norm on the leaf cells: F = sum lam_Q chi_Q is constant per cell
    D = mu.depth
    F = np.zeros((1 << D,) * n)
    denom = 0.0
    for node in family.members:
        j, idx = node
        lamq = lam_of(node)
        if lamq == 0.0:
            continue
        f = 1 << (D - j)
        sl = tuple(slice(i * f, (i + 1) * f) for i in idx)
        F[sl] += lamq
        denom += lamq ** p * sigma.integral(j, idx)
    numer = float((F ** p * sigma.levels[D]).sum())
    overlap = numer / denom if denom > 0 else math.nan
    return SparseBoundsReport(ratios, max_ratio, overlap, skipped)


@dataclass
class DominationReport:
    """Empirical constant for sparse domination of the local dyadic sum."""
    constant: float
    ratios: np.ndarray
    depth: int


def sparse_domination_report(g: TreeMeasure, alpha: float, lam: float,
                             points: np.ndarray, threshold_factor: float = 2.0,
                             ) -> DominationReport:
    """Max over sample points of dyadic / sparse local Riesz values, with
    the family built from g itself."""
    fam = build_sparse_family(g, threshold_factor)
    ratios = []
    for x in points:
        dy = local_riesz_apply("dyadic", g, alpha, lam, x)
        sp = local_riesz_apply("sparse", g, alpha, lam, x, family=fam)
        if sp > 0:
            ratios.append(dy / sp)
    arr = np.asarray(ratios)
    return DominationReport(float(arr.max()) if arr.size else math.nan, arr, g.depth)
