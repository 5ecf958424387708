"""
Ensemble averaged return density and the fit of the fluctuation strength N.

Averaging a multivariate Gaussian over Wishart distributed covariance
matrices with mean Sigma gives a density that depends on r only through
x = sqrt(N r^T Sigma^-1 r) and involves the modified Bessel function of
the second kind of order (K - N) / 2.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, optimize, special

from .errors import DomainError, InconclusiveFitError
from .tool import load_returns

logger = logging.getLogger(__name__)

SMALL_ARGUMENT = 1e-10
DEFAULT_N_GRID = tuple(np.geomspace(0.5, 200.0, 48))
FLAT_PROFILE = 1e-9


def _geometry(sigma: np.ndarray, pseudo: bool = False) -> Tuple[np.ndarray, float, int]:
    """Precision matrix, log determinant and rank of a covariance matrix."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape[0] != sigma.shape[1] or not np.allclose(sigma, sigma.T):
        raise DomainError("covariance must be a symmetric square matrix")
    if pseudo:
        eigenvalues = linalg.eigvalsh(sigma)
        positive = eigenvalues > eigenvalues.max() * 1e-12
        return linalg.pinvh(sigma), float(np.log(eigenvalues[positive]).sum()), int(positive.sum())
    try:
        factor = linalg.cho_factor(sigma, lower=True)
    except linalg.LinAlgError:
        raise DomainError("covariance matrix is not positive definite")
    precision = linalg.cho_solve(factor, np.eye(len(sigma)))
    return precision, 2 * float(np.log(np.diag(factor[0])).sum()), len(sigma)


def _log_density(r: np.ndarray, precision, logdet: float, k_dim: int, n_fluct: float) -> np.ndarray:
    nu = (k_dim - n_fluct) / 2
    q = np.einsum("mi,ij,mj->m", r, precision, r)
    x = np.sqrt(n_fluct * np.maximum(q, 0.0))
    log_norm = (
        k_dim / 2 * math.log(n_fluct)
        - (n_fluct / 2 - 1) * math.log(2)
        - special.gammaln(n_fluct / 2)
        - 0.5 * (k_dim * math.log(2 * math.pi) + logdet)
    )
    with np.errstate(divide="ignore"):
        safe = np.maximum(x, SMALL_ARGUMENT)
        log_bessel = np.log(special.kve(nu, safe)) - safe - nu * np.log(safe)
    if nu < 0:
        # removable singularity: x^-nu K_nu(x) -> Gamma(|nu|) 2^(|nu| - 1)
        limit = special.gammaln(-nu) + (-nu - 1) * math.log(2)
        log_bessel = np.where(x < SMALL_ARGUMENT, limit, log_bessel)
    else:
        log_bessel = np.where(x < SMALL_ARGUMENT, np.inf, log_bessel)
    return log_norm + log_bessel


def return_density(r, sigma, n_fluct: float, k_dim: Optional[int] = None):
    """
    Density of K returns averaged over the Wishart ensemble with mean
    covariance sigma and fluctuation strength N. Rows of r are evaluated
    independently.
    """
    if not n_fluct > 0:
        raise DomainError(f"N must be positive, got {n_fluct}")
    precision, logdet, k = _geometry(sigma)
    if k_dim is not None and k_dim != k:
        raise DomainError(f"k_dim {k_dim} does not match covariance of size {k}")
    r = np.asarray(r, dtype=float)
    rows = np.atleast_2d(r) if k > 1 or r.ndim > 1 else r.reshape(-1, 1)
    if not np.all(np.isfinite(rows)):
        raise DomainError("returns must be finite")
    values = np.exp(_log_density(rows, precision, logdet, k, n_fluct))
    single = r.ndim == (1 if k > 1 else 0)
    return float(values[0]) if single else values


@dataclass
class ReturnSample:
    """M observations (rows) of K return series (columns)."""

    returns: np.ndarray
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        self.returns = returns[:, None] if returns.ndim == 1 else returns
        if not np.all(np.isfinite(self.returns)):
            raise DomainError("return sample contains non finite values")
        if self.m_observations < 2:
            raise DomainError("at least two observations required")

    @classmethod
    def from_csv(cls, path) -> "ReturnSample":
        frame = load_returns(path)
        return cls(frame.to_numpy(dtype=float), [str(c) for c in frame.columns])

    @property
    def m_observations(self) -> int:
        return self.returns.shape[0]

    @property
    def k_dim(self) -> int:
        return self.returns.shape[1]

    @property
    def full_rank(self) -> bool:
        return self.m_observations > self.k_dim

    @property
    def sample_covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.returns, rowvar=False))


@dataclass
class FitResult:
    n_hat: float
    log_likelihood: float
    profile: pd.DataFrame
    converged: bool
    boundary: bool
    flags: List[str] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "n_hat": self.n_hat,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "boundary": self.boundary,
            "flags": list(self.flags),
            "profile": {
                "n": self.profile["n"].tolist(),
                "log_likelihood": self.profile["log_likelihood"].tolist(),
            },
        }


def log_likelihood(sample: ReturnSample, n_fluct: float, sigma: Optional[np.ndarray] = None) -> float:
    sigma = sample.sample_covariance if sigma is None else sigma
    precision, logdet, rank = _geometry(sigma, pseudo=not sample.full_rank)
    return float(_log_density(sample.returns, precision, logdet, rank, n_fluct).sum())


def fit_n(sample: ReturnSample, grid: Sequence[float] = DEFAULT_N_GRID, refine: bool = True) -> FitResult:
    """
    Maximum likelihood estimate of N with Sigma fixed at the sample
    covariance: a grid profile, then a bounded scalar search around the
    best grid point.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    if len(grid) < 3 or np.any(grid <= 0):
        raise DomainError("the N grid needs at least three positive values")
    sigma = sample.sample_covariance
    flags = [] if sample.full_rank else ["pseudo_inverse_covariance"]
    profile = np.array([log_likelihood(sample, n, sigma) for n in grid])
    spread = np.max(profile) - np.min(profile)
    if not np.isfinite(spread) or spread <= FLAT_PROFILE * max(abs(np.max(profile)), 1.0):
        raise InconclusiveFitError("log likelihood profile over N is flat")
    best = int(np.argmax(profile))
    frame = pd.DataFrame({"n": grid, "log_likelihood": profile})
    if best in (0, len(grid) - 1):
        logger.info("likelihood maximal at the grid boundary N = %g", grid[best])
        flags.append("boundary_solution")
        return FitResult(float(grid[best]), float(profile[best]), frame, False, True, flags)
    if not refine:
        return FitResult(float(grid[best]), float(profile[best]), frame, True, False, flags)
    result = optimize.minimize_scalar(
        lambda n: -log_likelihood(sample, n, sigma),
        bounds=(grid[best - 1], grid[best + 1]),
        method="bounded",
        options={"xatol": 1e-6},
    )
    return FitResult(float(result.x), float(-result.fun), frame, bool(result.success), False, flags)


def effective_correlation(sigma_hat) -> float:
    """Mean off-diagonal correlation: projection onto (1 - c) 1 + c e e^T."""
    sigma_hat = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    k = sigma_hat.shape[0]
    if k < 2:
        raise DomainError("a single asset has no off-diagonal correlations")
    scale = np.sqrt(np.diag(sigma_hat))
    if np.any(scale <= 0):
        raise DomainError("variances must be positive")
    corr = sigma_hat / np.outer(scale, scale)
    return float((corr.sum() - np.trace(corr)) / (k * (k - 1)))
