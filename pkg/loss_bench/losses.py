"""
Average loss distributions of finite portfolios.

Conditional on (z, u) the obligors are independent, so the vector of
portfolio losses has an exactly known conditional mean M1(z, u) and
covariance M2(z, u). In second order approximation the conditional law is
the Gaussian with these moments and the average loss density is a mixture
of Gaussians over the quadrature nodes. The mixture only describes the
absolutely continuous part; the delta peaks at the origin and on the lines
of zero or atomic losses are accounted for separately.
"""

import enum
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special, stats

from .errors import (
    AccuracyWarning,
    DomainError,
    SingularCovarianceError,
    UndefinedCorrelationError,
)
from .grid import DensityGrid, cell_centers
from .market_params import DEFAULT_QUADRATURE
from .model import (
    MarketParams,
    MultiMarketParams,
    OverlapSpec,
    SubordinationSpec,
    Tranche,
    as_multimarket,
    moment_junior,
    moment_plain,
    moment_senior,
    threshold,
)
from .oracle.estimate import McConfig, estimate
from .quadrature import CompoundRule, QuadratureSpec, refine

logger = logging.getLogger(__name__)

SMALL_PORTFOLIO = 8
DEGENERATE_VARIANCE = 1e-300
SINGULAR_RATIO = 1e-12
UNDEFINED_VARIANCE = 1e-14
CHUNK_ELEMENTS = 1 << 21
MAX_CREDITORS_ON_GRID = 2


class CorrelationMethod(enum.Enum):
    MC = "mc"
    ANALYTIC = "analytic"


def _warn_small(k_obligors: int):
    if k_obligors < SMALL_PORTFOLIO:
        warnings.warn(
            f"second order approximation with only K = {k_obligors} obligors",
            AccuracyWarning,
        )


@dataclass(frozen=True)
class SubordinatedScenario:
    """Homogeneous portfolio whose obligors all carry senior and junior debt."""

    k_obligors: int
    spec: SubordinationSpec
    params: MarketParams

    def __post_init__(self):
        if self.k_obligors < 1:
            raise DomainError(f"at least one obligor required, got {self.k_obligors}")
        _warn_small(self.k_obligors)

    @property
    def flags(self) -> List[str]:
        return ["small_portfolio"] if self.k_obligors < SMALL_PORTFOLIO else []

    @property
    def n_creditors(self) -> int:
        return 2

    @property
    def structure(self) -> SubordinationSpec:
        return self.spec


@dataclass(frozen=True)
class NoSubScenario:
    """
    B creditors lending to K obligors without subordination. Either an
    OverlapSpec (two creditors, homogeneous faces) or a K x B face matrix
    describes who lent how much to whom.
    """

    k_obligors: int
    params: Union[MarketParams, MultiMarketParams]
    overlap: Optional[OverlapSpec] = None
    faces: Optional[Tuple[Tuple[float, ...], ...]] = None

    def __post_init__(self):
        if self.k_obligors < 1:
            raise DomainError(f"at least one obligor required, got {self.k_obligors}")
        if (self.overlap is None) == (self.faces is None):
            raise DomainError("give exactly one of overlap or a face matrix")
        if self.faces is not None:
            object.__setattr__(
                self, "faces", tuple(tuple(float(f) for f in row) for row in np.atleast_2d(self.faces))
            )
        as_multimarket(self.params, self.k_obligors)
        faces = self.face_matrix()
        if np.any(faces < 0):
            raise DomainError("face values must be nonnegative")
        if np.any(faces.sum(axis=1) <= 0):
            raise DomainError("every obligor needs a positive total face value")
        if np.any(faces.sum(axis=0) <= 0):
            raise DomainError("every creditor needs a positive total face value")
        _warn_small(self.k_obligors)

    def face_matrix(self) -> np.ndarray:
        if self.overlap is not None:
            return self.overlap.face_matrix(self.k_obligors)
        faces = np.asarray(self.faces, dtype=float)
        if faces.shape[0] != self.k_obligors:
            raise DomainError(
                f"face matrix has {faces.shape[0]} rows for {self.k_obligors} obligors"
            )
        return faces

    @property
    def market(self) -> MultiMarketParams:
        return as_multimarket(self.params, self.k_obligors)

    @property
    def n_creditors(self) -> int:
        return self.face_matrix().shape[1]

    @property
    def flags(self) -> List[str]:
        return ["small_portfolio"] if self.k_obligors < SMALL_PORTFOLIO else []

    @property
    def structure(self):
        return self.overlap if self.overlap is not None else self.face_matrix()


Scenario = Union[SubordinatedScenario, NoSubScenario]


class GaussianTerms(NamedTuple):
    """
    Conditional moments of the senior and junior portfolio losses.
    n_senior is the conditional covariance of the two, the sum over obligors
    of f_S f_J N_S with N_S = m1_S (1 - m0_S - m1_J).
    """

    m1_senior: np.ndarray
    m2_senior: np.ndarray
    m1_junior: np.ndarray
    m2_junior: np.ndarray
    n_senior: np.ndarray


def gaussian_moment_terms(z, u, scenario: SubordinatedScenario) -> GaussianTerms:
    spec, params, k = scenario.spec, scenario.params, scenario.k_obligors
    m0s, m1s, m2s = (np.asarray(moment_senior(j, z, u, spec, params)) for j in range(3))
    m1j = np.asarray(moment_junior(1, z, u, spec, params))
    m2j = np.asarray(moment_junior(2, z, u, spec, params))
    # the junior creditor loses everything whenever the senior one loses anything
    mean_junior = m0s + m1j
    return GaussianTerms(
        m1_senior=m1s,
        m2_senior=(m2s - m1s**2) / k,
        m1_junior=mean_junior,
        m2_junior=(m0s + m2j - mean_junior**2) / k,
        n_senior=m1s * (1 - mean_junior) / k,
    )


def alphas(overlap: OverlapSpec) -> Tuple[float, float, float]:
    """Coefficients of K M2 / (m2 - m1^2) for two homogeneous overlapping portfolios."""
    r1, r12, gamma = overlap.r1, overlap.r12, overlap.gamma
    one = r1 + gamma * r12
    two = 1 - r1 - gamma * r12
    if not (one > 0 and two > 0):
        raise DomainError("a creditor with zero total face value has no loss fraction")
    return (
        (r1 + gamma**2 * r12) / one**2,
        gamma * (1 - gamma) * r12 / (one * two),
        (1 - r1 - gamma * (2 - gamma) * r12) / two**2,
    )


@dataclass(frozen=True)
class _Group:
    face: float
    block: int
    mean: np.ndarray
    dyad: np.ndarray


def _check_dyads(total: np.ndarray):
    eigenvalues = np.linalg.eigvalsh(total)
    if eigenvalues[0] <= SINGULAR_RATIO * eigenvalues[-1]:
        raise SingularCovarianceError(
            "the conditional covariance of the creditor losses is singular; "
            "portfolios with proportional loss fractions always lose the same, "
            "use the equal loss parametrisation (density_limit_equal_infinite "
            "or a single creditor) instead"
        )


def nosub_groups(scenario: NoSubScenario) -> List[_Group]:
    """
    Obligors sharing total face value and market block share their moments;
    their fractional face vectors are summed into one mean coefficient and
    one sum of dyads f_k f_k^T.
    """
    market = scenario.market
    if scenario.overlap is not None and market.beta == 1:
        a1, a12, a2 = alphas(scenario.overlap)
        dyad = np.array([[a1, a12], [a12, a2]]) / scenario.k_obligors
        _check_dyads(dyad)
        return [_Group(scenario.overlap.f0, 0, np.ones(2), dyad)]
    faces = scenario.face_matrix()
    fractions = faces / faces.sum(axis=0)
    keys = np.stack([faces.sum(axis=1), market.block_index()], axis=1)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    groups = []
    for g, (face, block) in enumerate(unique):
        rows = fractions[inverse == g]
        groups.append(_Group(float(face), int(block), rows.sum(axis=0), rows.T @ rows))
    _check_dyads(sum(group.dyad for group in groups))
    return groups


def _node_tables(scenario: Scenario, rule: CompoundRule):
    """Conditional mean (nodes, B) and covariance (nodes, B, B) with weights."""
    weights = (rule.z_weights[:, None] * rule.u_weights[None, :]).ravel()
    z = rule.z[:, None]
    if isinstance(scenario, SubordinatedScenario):
        t = gaussian_moment_terms(z, rule.u[None, :, 0], scenario)
        m1 = np.stack([t.m1_senior, t.m1_junior], axis=-1)
        m2 = np.stack(
            [
                np.stack([t.m2_senior, t.n_senior], axis=-1),
                np.stack([t.n_senior, t.m2_junior], axis=-1),
            ],
            axis=-2,
        )
    else:
        market = scenario.market
        b = scenario.n_creditors
        shape = (len(rule.z), len(rule.u_weights))
        m1 = np.zeros(shape + (b,))
        m2 = np.zeros(shape + (b, b))
        for group in nosub_groups(scenario):
            params = market.blocks[group.block].params
            u = rule.u[None, :, group.block]
            first = np.asarray(moment_plain(1, z, u, group.face, params))
            second = np.asarray(moment_plain(2, z, u, group.face, params))
            m1 += first[..., None] * group.mean
            m2 += (second - first**2)[..., None, None] * group.dyad
    b = m1.shape[-1]
    return m1.reshape(-1, b), m2.reshape(-1, b, b), weights


def conditional_moments(scenario: Scenario, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> pd.DataFrame:
    """Node table of weights and conditional loss moments for diagnostics."""
    rule = CompoundRule.build(scenario.params.n_fluct, quad, _beta(scenario))
    m1, m2, weights = _node_tables(scenario, rule)
    columns = {"z": np.repeat(rule.z, len(rule.u_weights)), "weight": weights}
    for l in range(rule.u.shape[1]):
        columns[f"u{l + 1}"] = np.tile(rule.u[:, l], len(rule.z))
    for i in range(m1.shape[1]):
        columns[f"mean{i + 1}"] = m1[:, i]
        for j in range(i, m1.shape[1]):
            columns[f"cov{i + 1}{j + 1}"] = m2[:, i, j]
    return pd.DataFrame(columns)


def _map_chunks(kernel: Callable, points: np.ndarray, n_nodes: int, workers: int) -> np.ndarray:
    size = max(1, CHUNK_ELEMENTS // max(n_nodes, 1))
    chunks = [points[i : i + size] for i in range(0, len(points), size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(kernel, chunks))
    else:
        parts = [kernel(chunk) for chunk in chunks]
    logger.debug("evaluated %d points in %d chunks over %d nodes", len(points), len(chunks), n_nodes)
    return np.concatenate(parts) if parts else np.zeros(0)


def _mixture(points: np.ndarray, m1, m2, weights, workers: int = 1) -> np.ndarray:
    """Gaussian mixture density at points (P, B), skipping degenerate nodes."""
    b = m1.shape[1]
    sign, logdet = np.linalg.slogdet(m2)
    diagonal = np.diagonal(m2, axis1=1, axis2=2)
    keep = (weights > 0) & (sign > 0) & np.all(diagonal > DEGENERATE_VARIANCE, axis=1)
    m1, m2, logdet, weights = m1[keep], m2[keep], logdet[keep], weights[keep]
    inverse = np.linalg.inv(m2) if len(m2) else m2
    offset = logdet + b * math.log(2 * math.pi)

    def kernel(chunk):
        d = chunk[:, None, :] - m1[None, :, :]
        quadratic = np.einsum("cnb,nbd,cnd->cn", d, inverse, d)
        return np.exp(-0.5 * (quadratic + offset)) @ weights

    return _map_chunks(kernel, points, len(weights), workers)


def _subordinated_mixture(points, terms: GaussianTerms, weights, workers: int = 1):
    """
    Senior Gaussian times the junior Gaussian conditioned on the senior loss:
    mean M1_J + NS (l_S - M1_S) / M2_S, variance M2_J - NS^2 / M2_S.
    """
    m1s, m2s, m1j, m2j, ns = (np.ravel(t) for t in terms)
    with np.errstate(divide="ignore", invalid="ignore"):
        conditional = m2j - ns**2 / m2s
    keep = (weights > 0) & (m2s > DEGENERATE_VARIANCE) & (conditional > DEGENERATE_VARIANCE)
    m1s, m2s, m1j, ns, conditional, weights = (
        a[keep] for a in (m1s, m2s, m1j, ns, conditional, weights)
    )
    scale_s, scale_c = np.sqrt(m2s), np.sqrt(conditional)
    slope = ns / m2s

    def kernel(chunk):
        ls, lj = chunk[:, :1], chunk[:, 1:]
        log = stats.norm.logpdf(ls, m1s, scale_s) + stats.norm.logpdf(
            lj, m1j + slope * (ls - m1s), scale_c
        )
        return np.exp(log) @ weights

    return _map_chunks(kernel, points, len(weights), workers)


def _check_points(points: np.ndarray, b: int) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != b:
        raise DomainError(f"loss vectors must have {b} components, got {points.shape[1]}")
    if np.any((points < 0) | (points > 1)):
        raise DomainError("losses must lie in [0, 1]")
    return points


def _beta(scenario: Scenario) -> int:
    return 1 if isinstance(scenario, SubordinatedScenario) else scenario.market.beta


def _resolved(scenario: Scenario, quad: QuadratureSpec) -> QuadratureSpec:
    return quad.resolved_for(scenario.k_obligors, _beta(scenario))


def evaluate_density(
    points, scenario: Scenario, quad: QuadratureSpec = DEFAULT_QUADRATURE, workers: int = 1
) -> np.ndarray:
    """Continuous part of the average loss density at points of shape (P, B)."""
    points = _check_points(points, scenario.n_creditors)
    n_fluct = scenario.params.n_fluct

    def evaluate(spec: QuadratureSpec) -> np.ndarray:
        rule = CompoundRule.build(n_fluct, spec, _beta(scenario))
        if isinstance(scenario, SubordinatedScenario):
            weights = (rule.z_weights[:, None] * rule.u_weights[None, :]).ravel()
            terms = gaussian_moment_terms(rule.z[:, None], rule.u[None, :, 0], scenario)
            return _subordinated_mixture(points, terms, weights, workers)
        return _mixture(points, *_node_tables(scenario, rule), workers)

    return refine(evaluate, _resolved(scenario, quad))


def _scalar(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def density_subordinated(
    l_senior, l_junior, scenario: SubordinatedScenario, quad: QuadratureSpec = DEFAULT_QUADRATURE, workers: int = 1
):
    l_senior, l_junior = np.broadcast_arrays(np.asarray(l_senior, float), np.asarray(l_junior, float))
    points = np.stack([l_senior.ravel(), l_junior.ravel()], axis=1)
    values = evaluate_density(points, scenario, quad, workers)
    return float(values[0]) if l_senior.ndim == 0 else values.reshape(l_senior.shape)


def density_nosub(l, scenario: NoSubScenario, quad: QuadratureSpec = DEFAULT_QUADRATURE, workers: int = 1):
    """Loss density of B creditors in a single market at one loss vector or rows of them."""
    if scenario.market.beta != 1:
        raise DomainError("several market blocks: use density_nosub_multimarket")
    return density_nosub_multimarket(l, scenario, quad, workers)


def density_nosub_multimarket(
    l, scenario: NoSubScenario, quad: QuadratureSpec = DEFAULT_QUADRATURE, workers: int = 1
):
    single = np.ndim(l) == 0 or (np.ndim(l) == 1 and np.shape(l)[0] == scenario.n_creditors)
    points = np.reshape(np.asarray(l, dtype=float), (-1, scenario.n_creditors))
    return _scalar(evaluate_density(points, scenario, quad, workers), single)


def no_default_probability(
    k_obligors: int, face_total: float, params: MarketParams, quad: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """Weight of the delta peak at zero loss: no obligor defaults."""
    if k_obligors < 1:
        raise DomainError(f"at least one obligor required, got {k_obligors}")
    if not face_total > 0:
        raise DomainError(f"face value must be positive, got {face_total}")

    def evaluate(spec: QuadratureSpec) -> float:
        rule = CompoundRule.build(params.n_fluct, spec)
        z, u = rule.z[:, None], rule.u[None, :, 0]
        a = (threshold(face_total, params, z) + params.factor_loading * u) / params.residual_scale
        survival = np.exp(k_obligors * special.log_ndtr(-a))
        return float(rule.z_weights @ survival @ rule.u_weights)

    return float(refine(evaluate, quad.resolved_for(k_obligors)))


def _creditor(which, scenario: Scenario) -> int:
    if isinstance(which, Tranche):
        if not isinstance(scenario, SubordinatedScenario):
            raise DomainError("tranches only exist in subordinated scenarios")
        return 0 if which is Tranche.SENIOR else 1
    if not 0 <= int(which) < scenario.n_creditors:
        raise DomainError(f"creditor {which} out of range")
    return int(which)


def _marginal_tables(scenario: Scenario, spec: QuadratureSpec, index: int):
    rule = CompoundRule.build(scenario.params.n_fluct, spec, _beta(scenario))
    m1, m2, weights = _node_tables(scenario, rule)
    return m1[:, index], m2[:, index, index], weights


def marginal_density(
    which,
    scenario: Scenario,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    points: int = 101,
    integration_points: int = 201,
    method: str = "integrate",
    workers: int = 1,
) -> DensityGrid:
    """
    Marginal density of one creditor on a cell centred curve over [0, 1].
    method "integrate" sums the bivariate density over the other loss on
    [0, 1]; "closed" evaluates the marginal Gaussian mixture directly.
    """
    index = _creditor(which, scenario)
    loss = cell_centers(points)
    if method == "closed" or scenario.n_creditors == 1:

        def evaluate(spec):
            mean, variance, weights = _marginal_tables(scenario, spec, index)
            return _mixture(loss[:, None], mean[:, None], variance[:, None, None], weights, workers)

        values = refine(evaluate, _resolved(scenario, quad))
    elif method == "integrate":
        if scenario.n_creditors != 2:
            raise DomainError("numerical marginals are only provided for two creditors")
        other = cell_centers(integration_points)
        mesh = np.meshgrid(loss, other, indexing="ij")
        if index == 1:
            mesh = mesh[::-1]
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        values = evaluate_density(pts, scenario, quad, workers).reshape(points, integration_points)
        values = values.sum(axis=1) / integration_points
    else:
        raise DomainError(f"unknown marginal method {method!r}")
    return DensityGrid(
        axes=[loss],
        values=values,
        axis_names=("l",),
        metadata={"creditor": index, "method": method},
        flags=scenario.flags,
    )


def tail_probability(
    scenario: Scenario, creditor, threshold_loss: float, quad: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """P(L > x) for one creditor from the marginal Gaussian mixture."""
    index = _creditor(creditor, scenario)

    def evaluate(spec):
        mean, variance, weights = _marginal_tables(scenario, spec, index)
        with np.errstate(divide="ignore", invalid="ignore"):
            above = np.where(
                variance > DEGENERATE_VARIANCE,
                special.ndtr((mean - threshold_loss) / np.sqrt(variance)),
                (mean > threshold_loss).astype(float),
            )
        return float(weights @ above)

    return float(refine(evaluate, _resolved(scenario, quad)))


def loss_moments(scenario: Scenario, quad: QuadratureSpec = DEFAULT_QUADRATURE):
    """
    Exact mean vector and covariance matrix of the creditor losses by the
    law of total covariance: E[L] = E[M1], Cov L = E[M2] + Cov(M1).
    """
    def evaluate(spec):
        rule = CompoundRule.build(scenario.params.n_fluct, spec, _beta(scenario))
        m1, m2, weights = _node_tables(scenario, rule)
        mean = weights @ m1
        second = np.einsum("n,nij->ij", weights, m2) + np.einsum("n,ni,nj->ij", weights, m1, m1)
        return np.concatenate([mean, (second - np.outer(mean, mean)).ravel()])

    flat = refine(evaluate, quad)
    b = scenario.n_creditors
    return flat[:b], flat[b:].reshape(b, b)


def loss_correlation(
    scenario: Scenario,
    method: CorrelationMethod = CorrelationMethod.MC,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    mc: McConfig = McConfig(),
) -> float:
    """Pearson correlation of the first two creditor losses."""
    method = CorrelationMethod(method)
    if scenario.n_creditors < 2:
        raise DomainError("loss correlation needs two creditors")
    if method is CorrelationMethod.MC:
        run = estimate(scenario.params, scenario.structure, scenario.k_obligors, mc)
        return run.correlation()
    _, covariance = loss_moments(scenario, quad)
    if min(covariance[0, 0], covariance[1, 1]) < UNDEFINED_VARIANCE:
        raise UndefinedCorrelationError(
            f"loss variances {covariance[0, 0]:.3g}, {covariance[1, 1]:.3g} vanish"
        )
    return float(covariance[0, 1] / math.sqrt(covariance[0, 0] * covariance[1, 1]))


def density_grid(
    scenario: Scenario,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    points: int = 101,
    workers: int = 1,
) -> DensityGrid:
    """Cell centred density grid over [0, 1]^B for B <= 2 creditors."""
    b = scenario.n_creditors
    if b > MAX_CREDITORS_ON_GRID:
        raise DomainError(f"grids are produced for at most two creditors, got {b}")
    axes = [cell_centers(points)] * b
    mesh = np.meshgrid(*axes, indexing="ij")
    values = evaluate_density(np.stack([m.ravel() for m in mesh], axis=1), scenario, quad, workers)
    names = ("l_senior", "l_junior") if isinstance(scenario, SubordinatedScenario) else ("l1", "l2")
    return DensityGrid(
        axes=axes,
        values=values.reshape(mesh[0].shape),
        axis_names=names if b == 2 else ("l",),
        metadata={"quadrature": _resolved(scenario, quad).as_dict()},
        flags=scenario.flags,
    )
