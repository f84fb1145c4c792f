"""Stochastic Becker-Doring cluster dynamics and their large-N fluctuations.

Submodules
----------
operators      flux map ``s``, stoichiometry ``tau``, Jacobians, weighted norms
deterministic  mean-field ODE integrator and equilibrium profile
ssa            exact stochastic simulation with per-channel bookkeeping
fluctuation    Gaussian fluctuation SDE, covariance ODE, stationary covariance
harness        replica ensembles and statistical checks of the large-N limits
cli            command line entry point (``bdfluct``)
"""
from .deterministic import EquilibriumProfile, OdeTrajectory, equilibrium_density, integrate_bd
from .errors import (BDError, ConfigError, DimensionError, DomainError, InfeasibleProfileError,
                     InstabilityError, InvariantViolation, NoFixedPointError, NumericalError,
                     StiffnessError)
from .operators import (RateKernel, WeightSequence, apply_tau, diffusion_matrix, drift_matrix,
                        eval_s, gamma_drift, gamma_tau, jacobian_apply, weighted_norm)

__version__ = "0.1.0"

__all__ = [
    "RateKernel", "WeightSequence", "eval_s", "apply_tau", "jacobian_apply", "drift_matrix",
    "diffusion_matrix", "weighted_norm", "gamma_tau", "gamma_drift", "integrate_bd",
    "equilibrium_density", "OdeTrajectory", "EquilibriumProfile", "BDError", "ConfigError",
    "DimensionError", "DomainError", "InfeasibleProfileError", "InstabilityError",
    "InvariantViolation", "NoFixedPointError", "NumericalError", "StiffnessError",
]
