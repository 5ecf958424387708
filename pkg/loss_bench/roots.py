"""
Safeguarded Newton-Raphson with bisection fallback, vectorised over
independent problems. Each problem keeps its own bracket; Newton steps that
leave the bracket or do not shrink the step fast enough are replaced by
bisection steps.
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

STEP_TOLERANCE = 1e-12
MAX_ITERATIONS = 200


@dataclass
class RootResult:
    root: np.ndarray
    residual: np.ndarray
    iterations: int
    converged: np.ndarray


def newton_bisection(
    func: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
    lo,
    hi,
    tol: float = STEP_TOLERANCE,
    maxit: int = MAX_ITERATIONS,
) -> RootResult:
    """
    Find roots of func bracketed elementwise by [lo, hi].

    Args:
        func: returns (f, df) for an array of abscissae
        lo, hi: bracket ends, f(lo) and f(hi) of opposite sign
        tol: absolute step tolerance
        maxit: iteration cap
    Returns:
        RootResult, converged False where the bracket was invalid, the
        iteration cap was hit or func is not finite at the final abscissa
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.copy(), hi.copy()
    f_lo, _ = func(lo)
    f_hi, _ = func(hi)
    valid = np.sign(f_lo) * np.sign(f_hi) <= 0
    # orient so that f < 0 at lo
    orient = np.where(f_hi >= f_lo, 1.0, -1.0)

    def oriented(x):
        f, df = func(x)
        return orient * f, orient * df

    x = np.where(f_lo == 0, lo, np.where(f_hi == 0, hi, 0.5 * (lo + hi)))
    dx_old = np.abs(hi - lo)
    dx = dx_old.copy()
    f, df = oriented(x)
    active = valid & (f != 0) & (f_lo != 0) & (f_hi != 0)
    iterations = 0
    for iterations in range(1, maxit + 1):
        if not active.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - f / df
            bisect = (
                ~np.isfinite(newton)
                | ((newton - lo) * (newton - hi) >= 0)
                | (np.abs(2 * f) > np.abs(dx_old * df))
            )
        dx_old = np.where(active, dx, dx_old)
        step = np.where(bisect, 0.5 * (hi - lo), f / np.where(df == 0, 1.0, df))
        x_new = np.where(bisect, lo + 0.5 * (hi - lo), newton)
        # the first bisection lands on the starting midpoint
        stalled = (x_new == x) & ~(bisect & (x > lo) & (x < hi))
        dx = np.where(active, np.abs(step), dx)
        x = np.where(active, x_new, x)
        f_new, df_new = oriented(x)
        f = np.where(active, f_new, f)
        df = np.where(active, df_new, df)
        lo = np.where(active & (f < 0), x, lo)
        hi = np.where(active & (f >= 0), x, hi)
        active &= ~((dx < tol) | (f == 0) | stalled)
    residual, _ = func(x)
    root = np.where(valid, x, np.nan)
    return RootResult(
        root=root,
        residual=np.where(valid, residual, np.nan),
        iterations=iterations,
        converged=valid & ~active & np.isfinite(residual),
    )
