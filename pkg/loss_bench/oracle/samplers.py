"""
Samplers for asset values at maturity under fluctuating correlations.

Two equivalent representations are offered: the explicit Wishart ensemble
of covariance matrices W W^T, and the compound representation mixing a
chi^2_N scale z with one Gaussian common factor per market block.
"""

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from ..errors import BudgetExceededError, DomainError
from ..market_params import WISHART_OBLIGOR_BUDGET
from ..model import MarketParams, MultiMarketParams, as_multimarket

WISHART_BATCH = 4096


class SamplerKind(enum.Enum):
    COMPOUND = "compound"
    WISHART = "wishart"


@dataclass(frozen=True)
class ObligorTable:
    """Per obligor parameters flattened out of the market blocks."""

    block: np.ndarray
    rho: np.ndarray
    c: np.ndarray
    drift: np.ndarray
    t_mat: np.ndarray
    v0: np.ndarray
    n_fluct: float

    @classmethod
    def build(cls, params, k_obligors: Optional[int] = None) -> "ObligorTable":
        if isinstance(params, MarketParams) and k_obligors is None:
            raise DomainError("obligor count required for a single market")
        market = as_multimarket(
            params, params.k_obligors if k_obligors is None else k_obligors
        )
        block = market.block_index()
        pick = lambda attr: np.array([getattr(b.params, attr) for b in market.blocks])[block]
        return cls(
            block=block,
            rho=pick("rho"),
            c=pick("c"),
            drift=pick("drift"),
            t_mat=pick("t_mat"),
            v0=pick("v0"),
            n_fluct=market.n_fluct,
        )

    @property
    def k_obligors(self) -> int:
        return len(self.block)

    @property
    def beta(self) -> int:
        return int(self.block.max()) + 1

    def correlation(self) -> np.ndarray:
        """Block diagonal average correlation matrix."""
        same = self.block[:, None] == self.block[None, :]
        corr = np.where(same, np.sqrt(self.c[:, None] * self.c[None, :]), 0.0)
        np.fill_diagonal(corr, 1.0)
        return corr

    def covariance(self) -> np.ndarray:
        sigma = self.rho * np.sqrt(self.t_mat)
        return sigma[:, None] * self.correlation() * sigma[None, :]


def _antithetic(draw, n: int, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return draw(n)
    half = draw((n + 1) // 2)
    return np.concatenate([half, -half])[:n]


def sample_compound_returns(
    params: Union[MarketParams, MultiMarketParams],
    n: int,
    rng: np.random.Generator,
    k_obligors: Optional[int] = None,
    antithetic: bool = False,
) -> np.ndarray:
    """
    Log return residuals ln(V/V0) - (mu - rho^2/2) T, shape (n, K). The
    antithetic half flips the Gaussian parts and keeps the scale z.
    """
    table = ObligorTable.build(params, k_obligors)
    scale = table.rho * np.sqrt(table.t_mat)

    def draw(m):
        z = rng.chisquare(table.n_fluct, size=m)
        u = rng.standard_normal((m, table.beta)) * np.sqrt(z / table.n_fluct)[:, None]
        eps = rng.standard_normal((m, table.k_obligors))
        common = -np.sqrt(table.c) * scale * u[:, table.block]
        residual = np.sqrt(z / table.n_fluct)[:, None] * np.sqrt(1 - table.c) * scale * eps
        return common + residual

    return _antithetic(draw, n, antithetic)


def to_asset_values(returns: np.ndarray, params, k_obligors: Optional[int] = None) -> np.ndarray:
    table = ObligorTable.build(params, k_obligors or returns.shape[-1])
    return table.v0 * np.exp(table.drift + returns)


def sample_compound(
    params: Union[MarketParams, MultiMarketParams],
    n: int,
    rng: np.random.Generator,
    k_obligors: Optional[int] = None,
    antithetic: bool = False,
) -> np.ndarray:
    """Asset values V(T) of shape (n, K) from the compound representation."""
    returns = sample_compound_returns(params, n, rng, k_obligors, antithetic)
    return to_asset_values(returns, params, returns.shape[1])


def _wishart_table(params, k_obligors):
    table = ObligorTable.build(params, k_obligors)
    if table.k_obligors > WISHART_OBLIGOR_BUDGET:
        raise BudgetExceededError(
            f"Wishart sampling of {table.k_obligors} obligors exceeds the budget of "
            f"{WISHART_OBLIGOR_BUDGET}; use the compound sampler instead"
        )
    n_fluct = table.n_fluct
    if abs(n_fluct - round(n_fluct)) > 1e-12:
        raise DomainError(
            f"the Wishart ensemble needs an integer N, got {n_fluct}; "
            "use the compound sampler instead"
        )
    root = linalg.cholesky(table.covariance(), lower=True)
    return table, int(round(n_fluct)), root


def wishart_covariances(
    params: Union[MarketParams, MultiMarketParams],
    n: int,
    rng: np.random.Generator,
    k_obligors: Optional[int] = None,
) -> np.ndarray:
    """n random covariance matrices W W^T, W = Sigma^(1/2) G / sqrt(N)."""
    table, n_fluct, root = _wishart_table(params, k_obligors)
    g = rng.standard_normal((n, table.k_obligors, n_fluct))
    w = np.einsum("ij,njk->nik", root, g) / math.sqrt(n_fluct)
    return np.einsum("nik,njk->nij", w, w)


def sample_wishart(
    params: Union[MarketParams, MultiMarketParams],
    n: int,
    rng: np.random.Generator,
    k_obligors: Optional[int] = None,
    antithetic: bool = False,
) -> np.ndarray:
    """
    Asset values V(T) of shape (n, K): draw W, then Gaussian returns with
    covariance W W^T, then exponentiate with the Ito drift.
    """
    table, n_fluct, root = _wishart_table(params, k_obligors)

    def draw(m):
        out = np.empty((m, table.k_obligors))
        for start in range(0, m, WISHART_BATCH):
            b = min(WISHART_BATCH, m - start)
            g = rng.standard_normal((b, table.k_obligors, n_fluct))
            xi = rng.standard_normal((b, n_fluct))
            out[start : start + b] = np.einsum("nkj,nj->nk", g, xi) @ root.T / math.sqrt(n_fluct)
        return out

    returns = _antithetic(draw, n, antithetic)
    return to_asset_values(returns, params, table.k_obligors)


def sample(kind: SamplerKind, params, n: int, rng, k_obligors=None, antithetic=False) -> np.ndarray:
    if kind is SamplerKind.WISHART:
        return sample_wishart(params, n, rng, k_obligors, antithetic)
    return sample_compound(params, n, rng, k_obligors, antithetic)
