"""
Loss densities in the limit of infinitely many obligors.

For K -> infinity the conditional Gaussians collapse to delta functions at
the conditional mean losses. The remaining integrals over (z, u) are done by
solving the mean-loss equations for u (and z) and weighting with the inverse
Jacobian at the roots.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats

from .errors import (
    DomainError,
    MultipleRootsError,
    NearSingularWarning,
    NoRootError,
    RootAnomalyWarning,
)
from .market_params import DEFAULT_QUADRATURE
from .model import (
    MarketParams,
    SubordinationSpec,
    junior_mean,
    junior_mean_gradient,
    moment_plain,
    moment_senior,
    plain_mean_gradient,
    senior_mean_gradient,
)
from .quadrature import QuadratureSpec, integrate_chi2
from .roots import newton_bisection

logger = logging.getLogger(__name__)

U_BRACKET = 12.0
Z_FLOOR = 1e-6
Z_TAIL = 1e-10
Z_SCAN_POINTS = 128
SINGULAR_JACOBIAN = 1e-14
RESIDUAL_TOLERANCE = 1e-8


def u_bracket(n_fluct: float):
    half = U_BRACKET / math.sqrt(n_fluct)
    return -half, half


def z_bracket(n_fluct: float):
    return Z_FLOOR, float(stats.chi2.ppf(1 - Z_TAIL, n_fluct))


def common_factor_density(u, n_fluct: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return math.sqrt(n_fluct / (2 * math.pi)) * np.exp(-n_fluct * u * u / 2)


def _solve_u(target, z, mean, gradient, n_fluct: float):
    """
    Roots u of mean(z, u) = target, NaN where the target lies outside the
    range attained on the u bracket.
    """
    target, z = np.broadcast_arrays(
        np.asarray(target, dtype=float), np.asarray(z, dtype=float)
    )
    lo, hi = u_bracket(n_fluct)

    def residual(u):
        return mean(z, u) - target, gradient(z, u)[1]

    result = newton_bisection(residual, np.full(z.shape, lo), np.full(z.shape, hi))
    return result


def _attainable(z, mean, n_fluct: float):
    lo, hi = u_bracket(n_fluct)
    return float(mean(z, lo)), float(mean(z, hi))


def _scalar_solve(target, z, mean, gradient, n_fluct, what: str) -> float:
    if not z > 0:
        raise DomainError(f"z must be positive, got {z}")
    result = _solve_u(target, z, mean, gradient, n_fluct)
    if not result.converged:
        raise NoRootError(
            f"{what} loss {target} not attainable at z = {z}",
            target,
            _attainable(z, mean, n_fluct),
        )
    return float(result.root)


def _senior(spec, params):
    return (
        lambda z, u: np.asarray(moment_senior(1, z, u, spec, params)),
        lambda z, u: senior_mean_gradient(z, u, spec, params),
    )


def _junior(spec, params):
    return (
        lambda z, u: np.asarray(junior_mean(z, u, spec, params)),
        lambda z, u: junior_mean_gradient(z, u, spec, params),
    )


def _plain(face, params):
    return (
        lambda z, u: np.asarray(moment_plain(1, z, u, face, params)),
        lambda z, u: plain_mean_gradient(z, u, face, params),
    )


def solve_u_senior(l_senior: float, z: float, spec: SubordinationSpec, params: MarketParams) -> float:
    """Common factor u at which the expected senior loss equals l_senior."""
    return _scalar_solve(l_senior, z, *_senior(spec, params), params.n_fluct, "senior")


def solve_u_junior(l_junior: float, z: float, spec: SubordinationSpec, params: MarketParams) -> float:
    """Common factor u at which the expected junior loss equals l_junior."""
    return _scalar_solve(l_junior, z, *_junior(spec, params), params.n_fluct, "junior")


@dataclass
class ImplicitSolve:
    targets: tuple
    z0: List[float] = field(default_factory=list)
    u0: List[float] = field(default_factory=list)
    residuals: List[tuple] = field(default_factory=list)
    iterations: int = 0
    density: float = 0.0
    near_singular: bool = False

    @property
    def anomalous(self) -> bool:
        return len(self.z0) > 1


def _u_difference(l_senior, l_junior, spec, params):
    senior, senior_grad = _senior(spec, params)
    junior, junior_grad = _junior(spec, params)
    n = params.n_fluct

    def difference(z):
        z = np.asarray(z, dtype=float)
        u_s = _solve_u(l_senior, z, senior, senior_grad, n).root
        u_j = _solve_u(l_junior, z, junior, junior_grad, n).root
        with np.errstate(invalid="ignore", divide="ignore"):
            s_z, s_u = senior_grad(z, np.nan_to_num(u_s))
            j_z, j_u = junior_grad(z, np.nan_to_num(u_j))
            slope = -s_z / s_u + j_z / j_u
        return u_s - u_j, slope

    return difference


def implicit_solve(
    l_senior: float, l_junior: float, spec: SubordinationSpec, params: MarketParams
) -> ImplicitSolve:
    """
    Find every z0 with u_senior(l_senior, z0) = u_junior(l_junior, z0) by
    scanning the z bracket for sign changes and refining each one.
    """
    solve = ImplicitSolve(targets=(l_senior, l_junior))
    if not (0 < l_senior < 1 and 0 < l_junior < 1):
        return solve
    difference = _u_difference(l_senior, l_junior, spec, params)
    z_lo, z_hi = z_bracket(params.n_fluct)
    scan = np.geomspace(z_lo, z_hi, Z_SCAN_POINTS)
    gap, _ = difference(scan)
    finite = np.isfinite(gap)
    left = np.flatnonzero(
        finite[:-1] & finite[1:] & (np.sign(gap[:-1]) * np.sign(gap[1:]) <= 0)
    )
    # a root exactly on a scan point shows up in two neighbouring intervals
    left = [i for i in left if not (gap[i] == 0 and i > 0 and i - 1 in left)]
    if not len(left):
        return solve
    result = newton_bisection(difference, scan[left], scan[np.asarray(left) + 1])
    solve.iterations = result.iterations
    senior, senior_grad = _senior(spec, params)
    junior, junior_grad = _junior(spec, params)
    for z0 in result.root[result.converged]:
        u0 = float(_solve_u(l_senior, z0, senior, senior_grad, params.n_fluct).root)
        residuals = (float(senior(z0, u0)) - l_senior, float(junior(z0, u0)) - l_junior)
        if not all(
            abs(r) <= RESIDUAL_TOLERANCE * target
            for r, target in zip(residuals, (l_senior, l_junior))
        ):
            logger.debug("rejected z0 = %g with residuals %s", z0, residuals)
            continue
        solve.z0.append(float(z0))
        solve.u0.append(u0)
        solve.residuals.append(residuals)
    if solve.anomalous:
        message = f"{len(solve.z0)} roots z0 at (lS, lJ) = ({l_senior}, {l_junior})"
        logger.warning(message)
        warnings.warn(message, RootAnomalyWarning)
    return solve


def solve_z0(l_senior: float, l_junior: float, spec: SubordinationSpec, params: MarketParams) -> float:
    """
    The unique z0 for (l_senior, l_junior). Several roots raise
    MultipleRootsError; implicit_solve returns all of them.
    """
    solve = implicit_solve(l_senior, l_junior, spec, params)
    if not solve.z0:
        raise NoRootError(
            f"no z0 matches senior loss {l_senior} with junior loss {l_junior}",
            (l_senior, l_junior),
            z_bracket(params.n_fluct),
        )
    if solve.anomalous:
        raise MultipleRootsError(
            f"{len(solve.z0)} roots z0 at (lS, lJ) = ({l_senior}, {l_junior})", solve.z0
        )
    return solve.z0[0]


def limit_subordinated_point(
    l_senior: float, l_junior: float, spec: SubordinationSpec, params: MarketParams
) -> ImplicitSolve:
    """Limit density at one point together with the roots and quality flags."""
    solve = implicit_solve(l_senior, l_junior, spec, params)
    total = 0.0
    for z0, u0 in zip(solve.z0, solve.u0):
        s_z, s_u = senior_mean_gradient(z0, u0, spec, params)
        j_z, j_u = junior_mean_gradient(z0, u0, spec, params)
        jacobian = abs(float(s_z * j_u - s_u * j_z))
        if jacobian < SINGULAR_JACOBIAN:
            solve.near_singular = True
            warnings.warn(
                f"Jacobian {jacobian:.3g} at (lS, lJ) = ({l_senior}, {l_junior})",
                NearSingularWarning,
            )
            jacobian = SINGULAR_JACOBIAN
        total += (
            float(stats.chi2.pdf(z0, params.n_fluct))
            * float(common_factor_density(u0, params.n_fluct))
            / jacobian
        )
    solve.density = total
    return solve


def density_limit_subordinated(
    l_senior: float, l_junior: float, spec: SubordinationSpec, params: MarketParams
) -> float:
    return limit_subordinated_point(l_senior, l_junior, spec, params).density


def _delta_weight(target, z, face, params):
    """phi_N(u0) / |d m1 / du| at the root u0(target, z), zero where unattainable."""
    mean, gradient = _plain(face, params)
    result = _solve_u(target, z, mean, gradient, params.n_fluct)
    u0 = np.nan_to_num(result.root)
    slope = np.abs(gradient(z, u0)[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = common_factor_density(u0, params.n_fluct) / slope
    return np.where(result.converged & (slope > 0), weight, 0.0), u0


def density_limit_equal_infinite(
    loss: float,
    face: float,
    params: MarketParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """
    Density of the common loss of infinite portfolios in one market. The
    bivariate law sits entirely on the line l1 = l2 whatever the overlap, so
    this univariate curve describes it completely.
    """
    if not 0 < loss < 1:
        return 0.0
    return integrate_chi2(
        lambda z: _delta_weight(loss, z, face, params)[0], params.n_fluct, quad
    )


def density_limit_finite_vs_infinite(
    l_finite: float,
    l_infinite: float,
    r1: int,
    face: float,
    params: MarketParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """
    Joint density of a portfolio of r1 obligors and a disjoint infinite
    portfolio in the same market. Given the infinite portfolio's loss the
    finite one is Gaussian with variance (m2 - m1^2) / r1.
    """
    if r1 < 2:
        raise DomainError(f"finite portfolio needs at least 2 obligors, got {r1}")
    if not 0 < l_infinite < 1:
        return 0.0

    def integrand(z):
        weight, u0 = _delta_weight(l_infinite, z, face, params)
        variance = (np.asarray(moment_plain(2, z, u0, face, params)) - l_infinite**2) / r1
        variance = np.maximum(variance, 1e-300)
        gaussian = np.exp(-((l_finite - l_infinite) ** 2) / (2 * variance)) / np.sqrt(
            2 * math.pi * variance
        )
        return np.where(weight > 0, weight * gaussian, 0.0)

    return integrate_chi2(integrand, params.n_fluct, quad)


def density_limit_two_markets(
    l1: float,
    l2: float,
    params1: MarketParams,
    params2: MarketParams,
    face: float,
    n_fluct: Optional[float] = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Infinite portfolios in two markets linked only through the shared scale z."""
    shared = {params1.n_fluct, params2.n_fluct} | ({n_fluct} if n_fluct is not None else set())
    if len(shared) != 1:
        raise DomainError(f"both markets must share one N, got {sorted(shared)}")
    if not (0 < l1 < 1 and 0 < l2 < 1):
        return 0.0
    return integrate_chi2(
        lambda z: _delta_weight(l1, z, face, params1)[0] * _delta_weight(l2, z, face, params2)[0],
        params1.n_fluct,
        quad,
    )
