"""Log-log slope fits with plain OLS confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    ci95: float


def fit_loglog(xs: Sequence[float], ys: Sequence[float]) -> FitResult:
    """OLS fit of log(y) against log(x); all entries must be positive."""
    x = np.log(np.asarray(xs, float))
    y = np.log(np.asarray(ys, float))
    if x.size < 2:
        raise ValueError("need at least two points to fit a slope")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    if x.size > 2:
        dof = x.size - 2
        sse = float(res[0]) if res.size else float(((A @ coef - y) ** 2).sum())
        var = sse / dof / float(((x - x.mean()) ** 2).sum())
        se = math.sqrt(max(var, 0.0))
    else:
        se = 0.0
    return FitResult(slope, intercept, se, 1.96 * se)


def relative_change(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale == 0.0:
        return 0.0
    return abs(a - b) / scale


def is_stable(a: float, b: float, tol: float = 0.01) -> bool:
    """Depth/grid stability policy: values agree within 1 percent."""
    return relative_change(a, b) < tol
