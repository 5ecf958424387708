from .estimate import (
    AgreementReport,
    McConfig,
    McRun,
    agreement,
    estimate,
    evaluate_losses,
    pair_order,
)
from .samplers import (
    SamplerKind,
    sample_compound,
    sample_compound_returns,
    sample_wishart,
    wishart_covariances,
)
