"""Energy-based image prior and under-sampled MRI reconstruction toolkit.

Train a scalar energy network on complex-valued images by maximum likelihood
with Langevin negative sampling, then reconstruct under-sampled k-space
measurements by alternating annealed Langevin prior steps with a closed-form
(or conjugate-gradient) data-consistency projection.
"""

from .energy import Architecture, EnergyParams, energy, grad_input, init_params
from .kspace import (
    CoilSensitivities,
    KSpaceMeasurement,
    SamplingMask,
    dc_project_calibfree,
    dc_project_multicoil,
    dc_project_single,
    forward,
    make_mask,
    zero_filled,
)
from .metrics import MetricsReport, psnr, ssim
from .numerics import RandomStream, fft2, ifft2
from .phantom import PhantomSpec, make_dataset, make_phantom, simulate_sensitivities
from .recon import ReconConfig, ReconReport, reconstruct
from .sampler import NoiseSchedule, ReplayBuffer, langevin_step, run_chain
from .trainer import AdamState, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "AdamState",
    "CoilSensitivities",
    "EnergyParams",
    "KSpaceMeasurement",
    "MetricsReport",
    "NoiseSchedule",
    "PhantomSpec",
    "RandomStream",
    "ReconConfig",
    "ReconReport",
    "ReplayBuffer",
    "SamplingMask",
    "TrainConfig",
    "dc_project_calibfree",
    "dc_project_multicoil",
    "dc_project_single",
    "energy",
    "fft2",
    "forward",
    "grad_input",
    "ifft2",
    "init_params",
    "langevin_step",
    "make_dataset",
    "make_mask",
    "make_phantom",
    "psnr",
    "reconstruct",
    "run_chain",
    "simulate_sensitivities",
    "ssim",
    "train",
    "zero_filled",
]
