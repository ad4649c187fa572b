"""Blind separation of finite-alphabet sources from linear mixtures.

Observations follow ``Y = F @ omega + Z`` with an ``n x m`` source matrix
``F`` over a known finite alphabet, simplex-column mixing weights ``omega``
and Gaussian noise ``Z``.
"""

__version__ = "0.1.0"

from .constructions import (
    asb_limit_constants,
    asb_upper_bound,
    calibrate_asb,
    hyperrectangle_bound,
    hyperrectangle_perturbation,
    lemma_delta,
    omega_extend,
    omega_star_quadratic,
)
from .core import (
    Alphabet,
    Instance,
    SeparabilityReport,
    SeparationParams,
    alphabet_gaps,
    asb,
    build_design_matrix,
    estimation_metric,
    is_delta_separable,
    is_separable,
    lambda_separation,
    mixture,
    normalize_alphabet,
    unit_labels,
    wsb,
)
from .estimation import (
    EstimationResult,
    classification_flag,
    estimate,
    estimation_error,
    exact_lse_enumerate,
    exact_lse_grid,
    feasible_intervals,
    fit_weights_simplex,
    lloyd_lse,
    prediction_error,
)
from .estimators import FiniteAlphabetSeparator
from .recovery import RecoveryResult, decode_rows, recover
from .simulation import (
    SweepConfig,
    fit_decay,
    run_sweep,
    sample_assignment,
    sample_weights_uniform,
    simulate_instance,
)
