"""Residual energy network: parameters, forward pass, exact gradients, spectral norm."""

from .network import (
    assemble_input,
    batch_weighted_grad,
    energy,
    energy_batch,
    grad_input,
    grad_input_batch,
    grad_params,
)
from .params import Architecture, EnergyParams, init_params, param_count, zero_params
from .spectral import power_iteration_sigma, spectral_normalize_all

__all__ = [
    "Architecture",
    "EnergyParams",
    "assemble_input",
    "batch_weighted_grad",
    "energy",
    "energy_batch",
    "grad_input",
    "grad_input_batch",
    "grad_params",
    "init_params",
    "param_count",
    "power_iteration_sigma",
    "spectral_normalize_all",
    "zero_params",
]
