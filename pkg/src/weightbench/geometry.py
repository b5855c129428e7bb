"""Shifted dyadic grids and exact cube arithmetic.

Cubes live in one of the 3^n translated dyadic systems indexed by a
shift vector t in {0,1,2}^n.  The cube with level k and integer index
m realizes the half-open box

    2^{-k} ( [0,1)^n + m + (-1)^k t/3 ).

Corners are held as scaled integers (3*m + (-1)^k*t over the common
denominator 3*2^k), so nesting, disjointness and tiling checks are
exact integer comparisons rather than float ones.  Within one shift,
the grid is closed under refinement: the children of (k, m) sit at
(k+1, 2m + (-1)^k t + e) for e in {0,1}^n.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Tuple

MAX_LEVEL = 40


class LevelRangeError(ValueError):
    """Cube level outside the supported |k| <= MAX_LEVEL window."""


def _check_level(level: int) -> None:
    if not isinstance(level, int) or abs(level) > MAX_LEVEL:
        raise LevelRangeError(f"level {level} outside supported |k| <= {MAX_LEVEL}")


@dataclass(frozen=True)
class Cube:
    """One cube of a shifted dyadic grid, identified by (shift, level, index)."""

    shift: Tuple[int, ...]
    level: int
    index: Tuple[int, ...]

    def __post_init__(self):
        if len(self.shift) != len(self.index):
            raise ValueError("shift and index dimension mismatch")
        if any(t not in (0, 1, 2) for t in self.shift):
            raise ValueError(f"shift entries must lie in {{0,1,2}}, got {self.shift}")
        _check_level(self.level)

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def sign(self) -> int:
        """(-1)^level, the alternating orientation of the shift offset."""
        return -1 if self.level % 2 else 1

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.level * self.n)

    def corner_scaled(self) -> Tuple[int, ...]:
        """Lower corner times 3*2^level; exact integers."""
        s = self.sign
        return tuple(3 * m + s * t for m, t in zip(self.index, self.shift))

    def lo(self) -> Tuple[float, ...]:
        d = 3.0 * 2.0 ** self.level
        return tuple(c / d for c in self.corner_scaled())

    def hi(self) -> Tuple[float, ...]:
        d = 3.0 * 2.0 ** self.level
        return tuple((c + 3) / d for c in self.corner_scaled())

    def center(self) -> Tuple[float, ...]:
        d = 3.0 * 2.0 ** self.level
        return tuple((c + 1.5) / d for c in self.corner_scaled())

    def center_norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.center()))

    def contains_point(self, x: Sequence[float]) -> bool:
        if len(x) != self.n:
            raise ValueError("point dimension mismatch")
        scale = 3.0 * 2.0 ** self.level
        return all(c <= xi * scale < c + 3 for c, xi in zip(self.corner_scaled(), x))


@dataclass(frozen=True)
class Ball:
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @property
    def n(self) -> int:
        return len(self.center)

    def center_norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.center))


def make_cube(shift: Sequence[int], level: int, index: Sequence[int]) -> Cube:
    return Cube(tuple(shift), level, tuple(index))


def children(cube: Cube) -> Tuple[Cube, ...]:
    """The 2^n next-level cubes of the same grid that tile `cube` exactly."""
    _check_level(cube.level + 1)
    s = cube.sign
    base = tuple(2 * m + s * t for m, t in zip(cube.index, cube.shift))
    out = []
    for e in itertools.product((0, 1), repeat=cube.n):
        out.append(Cube(cube.shift, cube.level + 1, tuple(b + ei for b, ei in zip(base, e))))
    return tuple(out)


def parent(cube: Cube) -> Cube:
    """The unique cube of the same grid one level up containing `cube`."""
    _check_level(cube.level - 1)
    sp = -cube.sign  # (-1)^(level-1)
    idx = []
    for m, t in zip(cube.index, cube.shift):
        r = m - sp * t
        idx.append((r - (r % 2)) // 2)
    return Cube(cube.shift, cube.level - 1, tuple(idx))


def descendant(root: Cube, rel_level: int, rel_index: Sequence[int]) -> Cube:
    """Cube at `rel_level` generations below `root`, at in-tree position
    `rel_index` (each coordinate in [0, 2^rel_level))."""
    if rel_level == 0:
        return root
    _check_level(root.level + rel_level)
    f = 1 << rel_level
    sj = -1 if (root.level + rel_level) % 2 else 1
    lo3 = root.corner_scaled()
    idx = []
    for c, q, t in zip(lo3, rel_index, root.shift):
        if not 0 <= q < f:
            raise ValueError("relative index out of range")
        num = c * f + 3 * q - sj * t
        if num % 3:
            raise AssertionError("relative index arithmetic broke grid membership")
        idx.append(num // 3)
    return Cube(root.shift, root.level + rel_level, tuple(idx))


def relative_index(root: Cube, cube: Cube) -> Tuple[int, Tuple[int, ...]]:
    """(rel_level, rel_index) of `cube` inside `root`; raises if not nested."""
    if cube.shift != root.shift or cube.level < root.level:
        raise ValueError("cube is not a descendant of root")
    j = cube.level - root.level
    f = 1 << j
    rel = []
    for cr, cc in zip(root.corner_scaled(), cube.corner_scaled()):
        num = cc - cr * f
        if num % 3 or not 0 <= num // 3 < f:
            raise ValueError("cube is not a descendant of root")
        rel.append(num // 3)
    return j, tuple(rel)


def cube_contains_cube(outer: Cube, inner: Cube) -> bool:
    """Exact nesting test for two cubes of the same shift."""
    if outer.shift != inner.shift:
        raise ValueError("containment is only defined within one shifted grid")
    if outer.level > inner.level:
        return False
    f = 1 << (inner.level - outer.level)
    for ol, il in zip(outer.corner_scaled(), inner.corner_scaled()):
        if not (ol * f <= il and il + 3 <= (ol + 3) * f):
            return False
    return True


def cubes_disjoint(a: Cube, b: Cube) -> bool:
    """Exact disjointness of the realized half-open boxes (same shift)."""
    if a.shift != b.shift:
        raise ValueError("disjointness test is only defined within one shifted grid")
    k = max(a.level, b.level)
    fa, fb = 1 << (k - a.level), 1 << (k - b.level)
    for al, bl in zip(a.corner_scaled(), b.corner_scaled()):
        lo_a, hi_a = al * fa, (al + 3) * fa
        lo_b, hi_b = bl * fb, (bl + 3) * fb
        if hi_a <= lo_b or hi_b <= lo_a:
            return True
    return False


def _locate_axis(x: float, level: int, s: int, t: int) -> int:
    m = math.floor(x * 2.0 ** level - s * t / 3.0)
    # fix up float rounding so the half-open membership is self-consistent
    scale = 3.0 * 2.0 ** level
    u = x * scale
    for _ in range(3):
        lo3 = 3 * m + s * t
        if u < lo3:
            m -= 1
        elif u >= lo3 + 3:
            m += 1
        else:
            break
    return m


def locate(point: Sequence[float], level: int, shift: Sequence[int]) -> Cube:
    """The unique cube of grid `shift` at `level` containing `point`."""
    _check_level(level)
    if any(not math.isfinite(x) for x in point):
        raise ValueError("point coordinates must be finite")
    s = -1 if level % 2 else 1
    idx = tuple(_locate_axis(x, level, s, t) for x, t in zip(point, shift))
    return Cube(tuple(shift), level, idx)


def one_third_cover(ball: Ball) -> Tuple[Tuple[int, ...], Cube]:
    """A shift t and cube Q of grid t with ball ⊆ Q and side(Q) <= 6*radius.

    Works at the level k with 2^{-k} in [3r, 6r).  At that level the
    endpoints of the three per-axis grids form a lattice of spacing
    2^{-k}/3 >= 2r, covering the residues mod 3 once each, so per axis
    at most two of the three shifts can have an endpoint inside the
    ball's coordinate span and some shift survives.  Shifts are scanned
    in order 0,1,2 per axis, so the returned shift is the
    lexicographically first valid one.
    """
    r = ball.radius
    k = math.floor(-math.log2(3.0 * r))
    while 2.0 ** (-k) < 3.0 * r:
        k -= 1
    while 2.0 ** (-k) >= 6.0 * r:
        k += 1
    _check_level(k)
    s = -1 if k % 2 else 1
    side = 2.0 ** (-k)
    scale = 3.0 * 2.0 ** k
    shift = []
    index = []
    for c in ball.center:
        found = False
        for t in (0, 1, 2):
            m = _locate_axis(c, k, s, t)
            lo = (3 * m + s * t) / scale
            if lo <= c - r and c + r <= lo + side:
                shift.append(t)
                index.append(m)
                found = True
                break
        if not found:
            raise AssertionError(f"one-third cover failed on axis with center {c}, r={r}")
    cube = Cube(tuple(shift), k, tuple(index))
    return cube.shift, cube
