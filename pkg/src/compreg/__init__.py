"""Regression of a compositional outcome on a compositional predictor.

The main entry points are :func:`fit` (EM estimate of the row-stochastic
coefficient matrix), :func:`permutation_test` and :func:`bootstrap_rows`.
"""

__version__ = "0.1.0"

from .direct import (
    FitResult,
    aggregate_outcome_cols,
    aggregate_predictor_rows,
    contrast,
    e_step,
    fit,
    m_step,
    predict,
    quasi_loglik,
)
from .errors import CompregError
from .inference import (
    BootstrapResult,
    IndependenceTestResult,
    bootstrap_rows,
    fit_null,
    lambda_statistic,
    permutation_test,
    region_coordinates,
)
from .simplex import CompositionDataset, closure, ilr, ilr_inverse, kld, pivot

__all__ = [
    "BootstrapResult",
    "CompositionDataset",
    "CompregError",
    "FitResult",
    "IndependenceTestResult",
    "aggregate_outcome_cols",
    "aggregate_predictor_rows",
    "bootstrap_rows",
    "closure",
    "contrast",
    "e_step",
    "fit",
    "fit_null",
    "ilr",
    "ilr_inverse",
    "kld",
    "lambda_statistic",
    "m_step",
    "permutation_test",
    "pivot",
    "predict",
    "quasi_loglik",
    "region_coordinates",
]
