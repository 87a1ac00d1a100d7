"""Mixtures of probabilistic PCA with sample-wise heteroscedastic noise.

The main entry point is :func:`fit`, a generalised EM algorithm that
estimates per-mixture factors and means, per-noise-group variances and
mixing proportions.  K-Planes and classical MPPCA are provided as baselines.
"""

from .baselines import kmeanspp_seed, kplanes, mppca_fit
from .driver import FitOptions, fit, init_from_kmeanspp, init_from_mppca
from .estep import posterior_gram, posterior_mean, posterior_second_moment
from .evaluation import (
    classify,
    factor_error,
    misclassification_rate,
    predict,
    run_v1_sweep,
)
from .likelihood import (
    log_pdf_component,
    observed_log_likelihood,
    responsibilities,
)
from .model import (
    Dataset,
    DegenerateFitError,
    EmptyComponentError,
    FitReport,
    Hyper,
    InvalidParamsError,
    KPlanesState,
    ModelFormatError,
    ModelParams,
    MppcaParams,
    RankDeficientMomentsError,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    validate_params,
)
from .mstep import gem_sweep, update_F, update_mu, update_pi, update_v
from .synth import SynthConfig, generate, paper_config, random_stiefel

__version__ = "0.1.0"
