"""Validation of area-level small-area models by Gaussian data thinning."""

from .model import (
    DesignMatrixSpec,
    DirectEstimateSet,
    FayHerriotFit,
    GibbsConfig,
    blup,
    gibbs_fit,
    gibbs_fit_many,
    shrinkage_factor,
    wls_beta,
)
from .thinning import (
    MultiFoldSplit,
    RepeatPlan,
    ThinnedSplit,
    esim_replicate,
    fission,
    fold_train_test,
    multifold_thin,
    thin,
)
from .validation import (
    ValidationScore,
    dic,
    esim_score,
    mse_estimate,
    nll_score,
    repeated_validate,
    select_model,
    waic,
)

__version__ = "0.1.0"
