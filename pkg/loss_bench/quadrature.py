"""
Integration rules for the compound structure of the model: a chi^2_N weight
on the scale variable z and a Gaussian weight of variance 1/N on each common
factor u.
"""

import dataclasses
import enum
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import integrate, special

from .errors import (
    BudgetExceededError,
    ConvergenceError,
    DomainError,
    UnsupportedDimensionError,
)

logger = logging.getLogger(__name__)

MAX_TENSOR_DIMENSION = 4
MAX_U_NODES = 512
MAX_Z_NODES = 256
MAX_TENSOR_NODES = 500_000
MAX_REFINEMENTS = 3
MIN_NODES = 8


class QuadratureMode(enum.Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class QuadratureSpec:
    z_nodes: int = 64
    u_nodes: int = 64
    mode: QuadratureMode = QuadratureMode.FIXED
    rel_tol: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.mode, QuadratureMode):
            object.__setattr__(self, "mode", QuadratureMode(self.mode))
        if self.z_nodes < MIN_NODES or self.u_nodes < MIN_NODES:
            raise DomainError(
                f"at least {MIN_NODES} nodes per axis required, got z={self.z_nodes}, u={self.u_nodes}"
            )
        if not 0 < self.rel_tol <= 1e-3:
            raise DomainError(f"rel_tol must lie in (0, 1e-3], got {self.rel_tol}")

    def resolved_for(self, k_obligors: int, beta: int = 1) -> "QuadratureSpec":
        """
        Raise node counts so that the conditional Gaussians, whose width
        shrinks like 1/sqrt(K), are still resolved. Tensor rules give up u
        nodes, down to MIN_NODES, to stay within MAX_TENSOR_NODES.
        """
        root_k = math.sqrt(max(k_obligors, 1))
        u_nodes = min(max(self.u_nodes, math.ceil(24 * root_k)), MAX_U_NODES)
        z_nodes = min(max(self.z_nodes, math.ceil(12 * root_k)), MAX_Z_NODES)
        if beta > 1:
            while z_nodes * u_nodes**beta > MAX_TENSOR_NODES and u_nodes > MIN_NODES:
                u_nodes -= 1
        return dataclasses.replace(self, z_nodes=z_nodes, u_nodes=u_nodes)

    def node_count(self, beta: int = 1) -> int:
        return self.z_nodes * self.u_nodes**beta

    def doubled(self) -> "QuadratureSpec":
        return dataclasses.replace(self, z_nodes=2 * self.z_nodes, u_nodes=2 * self.u_nodes)

    def as_dict(self) -> dict:
        return {
            "z_nodes": self.z_nodes,
            "u_nodes": self.u_nodes,
            "mode": self.mode.value,
            "rel_tol": self.rel_tol,
        }


def chi2_rule(n_fluct: float, n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalised Gauss-Laguerre rule for the normalised chi^2_N density.

    Args:
        n_fluct: degrees of freedom N
        n_nodes: number of nodes
    Returns:
        nodes z and weights summing to one
    """
    t, w = special.roots_genlaguerre(n_nodes, n_fluct / 2 - 1)
    return 2 * t, w / w.sum()


def gauss_rule(n_fluct: float, n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite rule for the weight sqrt(N/2pi) exp(-N u^2 / 2)."""
    x, w = special.roots_hermite(n_nodes)
    return x * math.sqrt(2 / n_fluct), w / math.sqrt(math.pi)


def tensor_gauss_rule(
    n_fluct: float, n_nodes: int, beta: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Product rule over beta independent factors, nodes of shape (n^beta, beta)."""
    if not 1 <= beta <= MAX_TENSOR_DIMENSION:
        raise UnsupportedDimensionError(
            f"tensor quadrature supports 1 to {MAX_TENSOR_DIMENSION} market blocks, "
            f"got {beta}; use the Monte Carlo oracle instead"
        )
    u, w = gauss_rule(n_fluct, n_nodes)
    grids = np.meshgrid(*([u] * beta), indexing="ij")
    weights = np.meshgrid(*([w] * beta), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    return nodes, np.prod(np.stack([g.ravel() for g in weights], axis=-1), axis=-1)


def _check_adaptive(value: float, error: float, rel_tol: float, what: str) -> float:
    if not np.isfinite(value) or error > max(rel_tol * abs(value), 1e-12):
        raise ConvergenceError(f"adaptive {what} integral did not converge", value, error)
    return value


def integrate_chi2(f: Callable, n_fluct: float, spec: QuadratureSpec) -> float:
    """Integral of f(z) against the chi^2_N density. f must accept arrays."""
    if spec.mode is QuadratureMode.FIXED:
        z, w = chi2_rule(n_fluct, spec.z_nodes)
        return float(np.dot(w, np.broadcast_to(f(z), z.shape)))
    alpha = n_fluct / 2 - 1
    log_norm = math.log(2) - (n_fluct / 2) * math.log(2) - special.gammaln(n_fluct / 2)

    def mapped(s):
        # z = -2 ln s sends (0, inf) to (0, 1); the exponential factor becomes s
        z = -2 * math.log(s)
        return math.exp(alpha * math.log(z) + log_norm) * float(f(z))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, error = integrate.quad(
            mapped, 0.0, 1.0, epsrel=spec.rel_tol, epsabs=1e-14, limit=200
        )
    return _check_adaptive(value, error, spec.rel_tol, "chi^2")


def integrate_gauss(g: Callable, n_fluct: float, spec: QuadratureSpec) -> float:
    """Integral of g(u) against the Gaussian of variance 1/N. g must accept arrays."""
    if spec.mode is QuadratureMode.FIXED:
        u, w = gauss_rule(n_fluct, spec.u_nodes)
        return float(np.dot(w, np.broadcast_to(g(u), u.shape)))
    norm = math.sqrt(n_fluct / (2 * math.pi))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, error = integrate.quad(
            lambda u: norm * math.exp(-n_fluct * u * u / 2) * float(g(u)),
            -np.inf,
            np.inf,
            epsrel=spec.rel_tol,
            epsabs=1e-14,
            limit=200,
        )
    return _check_adaptive(value, error, spec.rel_tol, "Gaussian")


def integrate_gauss_multi(
    g: Callable, beta: int, n_fluct: float, spec: QuadratureSpec
) -> float:
    """
    beta-fold product of integrate_gauss. g receives an array of shape
    (nodes, beta) and returns one value per node.
    """
    def evaluate(s: QuadratureSpec) -> float:
        nodes, w = tensor_gauss_rule(n_fluct, s.u_nodes, beta)
        return float(np.dot(w, np.broadcast_to(g(nodes), w.shape)))

    return float(refine(evaluate, spec))


def refine(evaluate: Callable[[QuadratureSpec], np.ndarray], spec: QuadratureSpec):
    """
    Run a fixed rule evaluation, or in adaptive mode double the node counts
    until two successive results agree to rel_tol.
    """
    if spec.mode is QuadratureMode.FIXED:
        return evaluate(spec)
    fixed = dataclasses.replace(spec, mode=QuadratureMode.FIXED)
    previous = np.asarray(evaluate(fixed))
    for _ in range(MAX_REFINEMENTS):
        fixed = fixed.doubled()
        current = np.asarray(evaluate(fixed))
        scale = max(float(np.max(np.abs(current), initial=0.0)), 1e-300)
        change = float(np.max(np.abs(current - previous), initial=0.0))
        logger.debug(
            "refined to %d x %d nodes, change %.3g", fixed.z_nodes, fixed.u_nodes, change
        )
        if change <= spec.rel_tol * scale:
            return current
        previous = current
    raise ConvergenceError(
        f"no agreement to rel_tol {spec.rel_tol} after {MAX_REFINEMENTS} node doublings",
        float(np.max(np.abs(current))),
        change,
    )


@dataclass(frozen=True)
class CompoundRule:
    """Nodes and weights of the product rule over (z, u_1, ..., u_beta)."""

    z: np.ndarray
    z_weights: np.ndarray
    u: np.ndarray
    u_weights: np.ndarray

    @classmethod
    def build(cls, n_fluct: float, spec: QuadratureSpec, beta: int = 1) -> "CompoundRule":
        if beta > 1 and spec.node_count(beta) > MAX_TENSOR_NODES:
            raise BudgetExceededError(
                f"{spec.z_nodes} x {spec.u_nodes}^{beta} quadrature nodes exceed the budget "
                f"of {MAX_TENSOR_NODES}; lower quadrature.u_nodes or use fixed mode"
            )
        z, wz = chi2_rule(n_fluct, spec.z_nodes)
        if beta == 1:
            u, wu = gauss_rule(n_fluct, spec.u_nodes)
            u = u[:, None]
        else:
            u, wu = tensor_gauss_rule(n_fluct, spec.u_nodes, beta)
        return cls(z=z, z_weights=wz, u=u, u_weights=wu)

    @property
    def size(self) -> int:
        return len(self.z) * len(self.u_weights)
