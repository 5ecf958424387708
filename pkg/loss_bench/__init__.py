from .calibration import ReturnSample, effective_correlation, fit_n, return_density
from .errors import (
    AccuracyWarning,
    BudgetExceededError,
    ConvergenceError,
    DomainError,
    InconclusiveFitError,
    LossBenchError,
    MultipleRootsError,
    NearSingularWarning,
    NoRootError,
    RootAnomalyWarning,
    ScenarioError,
    SingularCovarianceError,
    UndefinedCorrelationError,
    UnsupportedDimensionError,
)
from .losses import (
    CorrelationMethod,
    NoSubScenario,
    SubordinatedScenario,
    density_nosub,
    density_nosub_multimarket,
    density_subordinated,
    loss_correlation,
    marginal_density,
    no_default_probability,
)
from .market_params import EMPIRICAL_MARKET_PARAMETERS
from .model import MarketParams, MultiMarketParams, OverlapSpec, SubordinationSpec, Tranche
from .quadrature import QuadratureSpec
