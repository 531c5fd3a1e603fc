"""Coupled-tensor automatic detection by mean-field variational inference."""

from .als import AlsResult, als_fit
from .elbo import compute_elbo, elbo_terms
from .engine import CtadReport, Schedule, component_power, prune, run_ctad, sweep_once
from .state import (
    CoupledData,
    GammaParam,
    NumericalError,
    VariationalState,
    hermitian_inverse,
    init_state,
)
from .updates import (
    expected_PG_gram,
    expected_residuals,
    update_beta,
    update_eta,
    update_G,
    update_gamma,
    update_X,
    update_xi,
)
