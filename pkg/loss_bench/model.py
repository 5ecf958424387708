"""
Merton model with fluctuating asset correlations: domain types and the closed
form conditional moments every loss density is built on.

Conditional on the compound variables (z, u) the transformed asset value

    V_hat = (ln(V/V0) - (mu - rho^2/2) T) / sqrt(z)

is Gaussian with mean -sqrt(cT) rho u and variance (1-c) T rho^2 / N. All
moments below are truncated moments of a loss payoff under this Gaussian.
"""

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import special

from .errors import DomainError

ArrayLike = Union[float, np.ndarray]

SQRT_2PI = math.sqrt(2 * math.pi)


class Tranche(enum.Enum):
    SENIOR = "senior"
    JUNIOR = "junior"


@dataclass(frozen=True)
class MarketParams:
    mu: float
    rho: float
    c: float
    n_fluct: float
    t_mat: float = 1.0
    v0: float = 100.0

    def __post_init__(self):
        if not self.rho > 0:
            raise DomainError(f"volatility rho must be positive, got {self.rho}")
        if not 0 <= self.c < 1:
            raise DomainError(f"average correlation c must lie in [0, 1), got {self.c}")
        if not self.n_fluct > 0:
            raise DomainError(f"fluctuation strength N must be positive, got {self.n_fluct}")
        if not self.t_mat > 0:
            raise DomainError(f"maturity T must be positive, got {self.t_mat}")
        if not self.v0 > 0:
            raise DomainError(f"initial asset value V0 must be positive, got {self.v0}")

    @property
    def drift(self) -> float:
        """Ito corrected log drift over the horizon, (mu - rho^2/2) T."""
        return (self.mu - self.rho**2 / 2) * self.t_mat

    @property
    def residual_scale(self) -> float:
        """Standard deviation of V_hat given (z, u)."""
        return math.sqrt((1 - self.c) * self.t_mat * self.rho**2 / self.n_fluct)

    @property
    def factor_loading(self) -> float:
        return math.sqrt(self.c * self.t_mat) * self.rho

    def replace(self, **changes) -> "MarketParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class MarketBlock:
    params: MarketParams
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise DomainError(f"market block needs at least one obligor, got {self.size}")


@dataclass(frozen=True)
class MultiMarketParams:
    """Block diagonal average correlation: markets uncorrelated on average."""

    blocks: Tuple[MarketBlock, ...]

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise DomainError("at least one market block is required")
        n_values = {b.params.n_fluct for b in self.blocks}
        if len(n_values) != 1:
            raise DomainError(
                f"all market blocks share one fluctuation strength N, got {sorted(n_values)}"
            )

    @classmethod
    def identical(cls, params: MarketParams, sizes) -> "MultiMarketParams":
        return cls(tuple(MarketBlock(params, int(s)) for s in sizes))

    @property
    def n_fluct(self) -> float:
        return self.blocks[0].params.n_fluct

    @property
    def beta(self) -> int:
        return len(self.blocks)

    @property
    def k_obligors(self) -> int:
        return sum(b.size for b in self.blocks)

    def block_index(self) -> np.ndarray:
        """Market block of every obligor, obligors ordered block by block."""
        return np.repeat(np.arange(self.beta), [b.size for b in self.blocks])


def as_multimarket(params, k_obligors: int) -> MultiMarketParams:
    if isinstance(params, MultiMarketParams):
        if params.k_obligors != k_obligors:
            raise DomainError(
                f"market blocks hold {params.k_obligors} obligors, scenario has {k_obligors}"
            )
        return params
    return MultiMarketParams((MarketBlock(params, k_obligors),))


@dataclass(frozen=True)
class SubordinationSpec:
    f_senior: float
    f_junior: float

    def __post_init__(self):
        if not self.f_senior >= 0:
            raise DomainError(f"senior face value must be nonnegative, got {self.f_senior}")
        if not self.f_junior > 0:
            raise DomainError(f"junior face value must be positive, got {self.f_junior}")

    @property
    def total(self) -> float:
        return self.f_senior + self.f_junior


@dataclass(frozen=True)
class OverlapSpec:
    """
    Two creditors on K obligors. A fraction r1 borrows from creditor one only,
    r12 from both (creditor one holding gamma of the face value), the rest
    from creditor two only.
    """

    r1: float
    r12: float
    gamma: float = 0.5
    f0: float = 75.0

    def __post_init__(self):
        if self.r1 < 0 or self.r12 < 0:
            raise DomainError(f"overlap fractions must be nonnegative, got {self.r1}, {self.r12}")
        if self.r1 + self.r12 > 1 + 1e-12:
            raise DomainError(
                f"overlap fractions exceed 1: r1 + r12 = {self.r1 + self.r12}"
            )
        if not 0 <= self.gamma <= 1:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.f0 > 0:
            raise DomainError(f"face value must be positive, got {self.f0}")
        if not self.r1 + self.gamma * self.r12 > 0:
            raise DomainError("creditor one holds no face value")
        if not 1 - self.r1 - self.gamma * self.r12 > 0:
            raise DomainError("creditor two holds no face value")

    @classmethod
    def disjoint(cls, r1: float, f0: float = 75.0) -> "OverlapSpec":
        return cls(r1=r1, r12=0.0, gamma=0.5, f0=f0)

    def counts(self, k_obligors: int) -> Tuple[int, int, int]:
        """Obligor counts (R1, R12, R2) for a market of size K."""
        r1 = self.r1 * k_obligors
        r12 = self.r12 * k_obligors
        if abs(r1 - round(r1)) > 1e-9 or abs(r12 - round(r12)) > 1e-9:
            raise DomainError(
                f"r1 K = {r1} and r12 K = {r12} must be integers for K = {k_obligors}"
            )
        n1, n12 = int(round(r1)), int(round(r12))
        return n1, n12, k_obligors - n1 - n12

    def face_matrix(self, k_obligors: int) -> np.ndarray:
        """K x 2 matrix of face values held by each creditor."""
        n1, n12, n2 = self.counts(k_obligors)
        faces = np.zeros((k_obligors, 2))
        faces[:n1, 0] = self.f0
        faces[n1 : n1 + n12, 0] = self.gamma * self.f0
        faces[n1 : n1 + n12, 1] = (1 - self.gamma) * self.f0
        faces[n1 + n12 :, 1] = self.f0
        return faces


@dataclass(frozen=True)
class DefaultThreshold:
    f_hat: float
    face: float
    params: MarketParams
    z: float


def _out(x: np.ndarray) -> ArrayLike:
    return float(x) if np.ndim(x) == 0 else x


def phi(x: ArrayLike) -> ArrayLike:
    """Standard normal CDF."""
    return _out(special.ndtr(np.asarray(x, dtype=float)))


def normal_pdf(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def threshold(face: ArrayLike, params: MarketParams, z: ArrayLike) -> np.ndarray:
    return (np.log(np.asarray(face, dtype=float) / params.v0) - params.drift) / np.sqrt(z)


def default_threshold(face: float, params: MarketParams, z: float) -> DefaultThreshold:
    if not face > 0:
        raise DomainError(f"face value must be positive, got {face}")
    if not z > 0:
        raise DomainError(f"z must be positive, got {z}")
    return DefaultThreshold(
        f_hat=float(threshold(face, params, z)), face=face, params=params, z=z
    )


def _check_node(z: np.ndarray, j: int = 0):
    if j not in (0, 1, 2):
        raise DomainError(f"only moments j = 0, 1, 2 have closed forms, got {j}")
    if np.any(~(z > 0)):
        raise DomainError("z must be positive at every node")


def _standardised(limit: float, z, u, params: MarketParams):
    """The Phi argument a and the shift b of the closed forms."""
    s = params.residual_scale
    a = (threshold(limit, params, z) + params.factor_loading * u) / s
    b = np.sqrt(z) * s
    return a, b


def truncated_moment(
    j: int, level: float, divisor: float, limit: float, z, u, params: MarketParams
) -> ArrayLike:
    """
    E[(level - V/divisor)^j ; V < limit | z, u] in closed form.

    Terms carrying exp(sqrt(z) V_hat) are assembled in log space so that
    deep tails neither overflow nor lose the Phi factor.
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_node(z, j)
    if limit <= 0:
        return _out(np.zeros(np.broadcast(z, u).shape))
    a, b = _standardised(limit, z, u, params)
    tau0 = special.ndtr(a)
    if j == 0:
        return _out(tau0)
    log_scale = math.log(params.v0 / divisor)
    sqrt_z_gu = np.sqrt(z) * params.factor_loading * u
    first = np.exp(
        log_scale + b * b / 2 - sqrt_z_gu + params.drift + special.log_ndtr(a - b)
    )
    if j == 1:
        return _out(level * tau0 - first)
    second = np.exp(
        2 * log_scale
        + 2 * b * b
        - 2 * sqrt_z_gu
        + 2 * params.drift
        + special.log_ndtr(a - 2 * b)
    )
    return _out(level * level * tau0 - 2 * level * first + second)


def truncated_moment_gradient(
    j: int, level: float, divisor: float, limit: float, z, u, params: MarketParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Partial derivatives (d/dz, d/du) of truncated_moment for j = 0, 1."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_node(z, j)
    if j == 2:
        raise DomainError("gradients are only available for j = 0, 1")
    shape = np.broadcast(z, u).shape
    if limit <= 0:
        return np.zeros(shape), np.zeros(shape)
    s = params.residual_scale
    g = params.factor_loading
    h = math.log(limit / params.v0) - params.drift
    a, b = _standardised(limit, z, u, params)
    sqrt_z = np.sqrt(z)
    da_dz = -h / (2 * s * z * sqrt_z)
    da_du = np.full(shape, g / s)
    density_a = normal_pdf(a)
    if j == 0:
        return density_a * da_dz, density_a * da_du
    db_dz = s / (2 * sqrt_z)
    first = np.exp(
        math.log(params.v0 / divisor)
        + b * b / 2
        - sqrt_z * g * u
        + params.drift
        + special.log_ndtr(a - b)
    )
    # E[exp(sqrt(z) V_hat)] phi(a - b) collapses to (limit / V0) phi(a)
    kernel = (limit / divisor) * density_a
    d_first_dz = first * (s * s / 2 - g * u / (2 * sqrt_z)) + kernel * (da_dz - db_dz)
    d_first_du = first * (-sqrt_z * g) + kernel * da_du
    return (
        level * density_a * da_dz - d_first_dz,
        level * density_a * da_du - d_first_du,
    )


def _tau_arguments(iota: Tranche, lam: Tranche, faces: SubordinationSpec):
    if iota is Tranche.SENIOR:
        level, divisor = 1.0, faces.f_senior
    else:
        level, divisor = faces.total / faces.f_junior, faces.f_junior
    limit = faces.f_senior if lam is Tranche.SENIOR else faces.total
    return level, divisor, limit


def tau(
    j: int,
    iota: Tranche,
    lam: Tranche,
    z,
    u,
    faces: SubordinationSpec,
    params: MarketParams,
) -> ArrayLike:
    """
    Building block of the subordinated moments: iota picks the payoff
    normalisation (senior: 1 - V/F_S, junior: (F - V)/F_J), lam the upper
    limit of the default region (senior: F_S, junior: total face F).
    """
    level, divisor = _tau_arguments(iota, lam, faces)[:2]
    if divisor <= 0:
        z = np.asarray(z, dtype=float)
        _check_node(z, j)
        return _out(np.zeros(np.broadcast(z, np.asarray(u)).shape))
    return truncated_moment(j, *_tau_arguments(iota, lam, faces), z, u, params)


def moment_senior(j: int, z, u, spec: SubordinationSpec, params: MarketParams) -> ArrayLike:
    return tau(j, Tranche.SENIOR, Tranche.SENIOR, z, u, spec, params)


def moment_junior(j: int, z, u, spec: SubordinationSpec, params: MarketParams) -> ArrayLike:
    """Moments of the junior loss over the junior-only band F_S < V < F."""
    upper = tau(j, Tranche.JUNIOR, Tranche.JUNIOR, z, u, spec, params)
    lower = tau(j, Tranche.JUNIOR, Tranche.SENIOR, z, u, spec, params)
    return _out(np.asarray(upper) - np.asarray(lower))


def moment_plain(j: int, z, u, face: float, params: MarketParams) -> ArrayLike:
    """Moments of the undivided loss 1 - V/F on V < F."""
    if not face > 0:
        raise DomainError(f"face value must be positive, got {face}")
    return truncated_moment(j, 1.0, face, face, z, u, params)


def junior_mean(z, u, spec: SubordinationSpec, params: MarketParams) -> ArrayLike:
    """Conditional expected junior loss: total loss below F_S plus the band."""
    return _out(
        np.asarray(moment_senior(0, z, u, spec, params))
        + np.asarray(moment_junior(1, z, u, spec, params))
    )


def senior_mean_gradient(z, u, spec: SubordinationSpec, params: MarketParams):
    if spec.f_senior <= 0:
        shape = np.broadcast(np.asarray(z), np.asarray(u)).shape
        return np.zeros(shape), np.zeros(shape)
    return truncated_moment_gradient(
        1, *_tau_arguments(Tranche.SENIOR, Tranche.SENIOR, spec), z, u, params
    )


def junior_mean_gradient(z, u, spec: SubordinationSpec, params: MarketParams):
    d0 = truncated_moment_gradient(
        0, *_tau_arguments(Tranche.SENIOR, Tranche.SENIOR, spec), z, u, params
    ) if spec.f_senior > 0 else (0.0, 0.0)
    upper = truncated_moment_gradient(
        1, *_tau_arguments(Tranche.JUNIOR, Tranche.JUNIOR, spec), z, u, params
    )
    lower = truncated_moment_gradient(
        1, *_tau_arguments(Tranche.JUNIOR, Tranche.SENIOR, spec), z, u, params
    )
    return (
        np.asarray(d0[0] + upper[0] - lower[0]),
        np.asarray(d0[1] + upper[1] - lower[1]),
    )


def plain_mean_gradient(z, u, face: float, params: MarketParams):
    return truncated_moment_gradient(1, 1.0, face, face, z, u, params)
