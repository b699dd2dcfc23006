"""FDR-controlled variable selection with outcome randomisation and mirror statistics."""

from .datagen import (
    BetaSpec,
    CovarianceSpec,
    Dataset,
    build_covariance,
    generate_betas,
    generate_outcome,
    make_dataset,
    sample_covariates,
)
from .fdrctl import (
    MdsResult,
    MirrorResult,
    RandomisedOutcomes,
    ds_select,
    fdp_threshold,
    mds_select,
    mirror_statistic,
    null_symmetry_diagnostic,
    randms_select,
    randomise,
)
from .fitters import LassoFit, OlsFit, estimate_sigma2, kkt_check, lasso_cv, lasso_fit, ols_fit
from .metrics import SelectionScore, aggregate_scores, score_selection

__version__ = "0.1.0"
