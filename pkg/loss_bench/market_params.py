"""
Default parameters estimated from daily S&P 500 returns
"""

from .model import MarketParams, SubordinationSpec
from .quadrature import QuadratureSpec

EMPIRICAL_MARKET_PARAMETERS = MarketParams(
    mu=0.17,
    rho=0.35,
    c=0.28,
    n_fluct=6,
    t_mat=1.0,
    v0=100.0,
)

DEFAULT_FACE_VALUE = 75.0

DEFAULT_SUBORDINATION = SubordinationSpec(f_senior=37.0, f_junior=38.0)

DEFAULT_QUADRATURE = QuadratureSpec(z_nodes=64, u_nodes=64, mode="fixed", rel_tol=1e-6)

DEFAULT_MC_SAMPLES = 200_000
DEFAULT_MC_PARTITION = 50_000
DEFAULT_SEED = 20130701

DEFAULT_GRID_POINTS = 101
WISHART_OBLIGOR_BUDGET = 500
