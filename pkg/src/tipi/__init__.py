"""Time-local predictive information (TiPI) maximisation for closed sensorimotor loops."""
from .errors import ConfigError, ContractError, NumericalError, PlantInstabilityError
from .sml_core import (TANH, Activation, ControllerParams, ForwardModel, LoopState,
                       controller_forward, loop_jacobian, model_predict, model_update,
                       psi, psi_iterate)
from .tipi_estimator import (NoiseModel, TipiWindow, linear_stationary_sigma,
                             propagate_deltas, sigma_from_jacobians, tipi_gaussian,
                             tipi_mc_oracle, whitened_tipi)
from .exploration import (CovTracker, ExplorationConfig, GradientAux, cov_update,
                          exploration_step, gamma_for_activation, grad_general, grad_tau2,
                          onedim_step)

__version__ = "0.1.0"
