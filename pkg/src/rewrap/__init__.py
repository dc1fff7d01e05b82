"""Robust linear regression with iteratively adjusted priors."""
from .core import (
    DatasetMeta,
    FitReport,
    GramSolver,
    PriorSpec,
    RegressionDataset,
    TraceRecord,
    ols_fit,
    read_dataset,
    residuals,
    ridge_with_prior,
    write_dataset,
)
from .corruption import AttackSpec, GenConfig, apply_aaa, apply_attack, apply_oaa, generate_clean, l2_error
from .estimators import (
    InnerConfig,
    RhoSpec,
    crr_fit,
    f_corals_gradient,
    f_crr_gradient,
    mest_fit,
    momentum_decomposition,
    torrent_inner,
    trip_fit,
)
from .framework import (
    RewrapConfig,
    andrews_plus_fit,
    corals_fit,
    rewrap_fit,
    simple_normal_update,
    torrent_plus_fit,
    tukey_plus_fit,
)
from .thresholding import hard_threshold, ht_support

__version__ = "0.1.0"
