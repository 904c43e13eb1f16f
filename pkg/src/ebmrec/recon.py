"""Reconstruction loop: annealed Langevin prior steps alternated with data consistency.

For each noise level ``sigma_i`` (largest to smallest) the step size anneals as
``base_step * (sigma_i / sigma_last)**2``; every inner iteration applies one
Langevin update on the 2-channel real representation, then projects the
complex image back onto agreement with the measured k-space (the projection
can instead run once per level via ``dc_every_step=False``).  Three modes
share the loop: single-coil, parallel imaging with known sensitivities (CG
projection), and calibration-free per-coil reconstruction combined by
root-sum-of-squares magnitude.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyParams, grad_input
from .kspace import (
    CoilSensitivities,
    KSpaceMeasurement,
    dc_project_calibfree,
    dc_project_multicoil,
    dc_project_single,
    zero_filled,
)
from .metrics import MetricsReport, evaluate_pair, psnr
from .numerics import RandomStream, channels_to_complex, complex_to_channels, ifft2, uniform
from .sampler import ChainDivergedError, NoiseSchedule, langevin_step

__all__ = ["ReconConfig", "ReconReport", "init_state", "reconstruct", "evaluate"]

MODES = ("single_coil", "parallel_sens", "calib_free")
INITS = ("uniform_noise", "zero_filled")


@dataclass(frozen=True)
class ReconConfig:
    """Mode, consistency weight, schedule and initialization of one reconstruction."""

    mode: str = "single_coil"
    lam: float = 0.1
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.geometric)
    init: str = "zero_filled"
    dc_every_step: bool = True
    cg_tol: float = 1e-8
    cg_max_iter: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.mode == "parallel_sens" and self.lam == 0:
            raise ValueError("parallel_sens needs lam > 0 (CG system must be well-posed)")


@dataclass
class ReconReport:
    """Final image plus the per-iteration PSNR trace and timing."""

    image: np.ndarray
    psnr_trace: list[float]
    wallclock_s: float
    config: ReconConfig

    @property
    def final_psnr(self) -> float | None:
        return self.psnr_trace[-1] if self.psnr_trace else None


def init_state(
    config: ReconConfig,
    y: KSpaceMeasurement,
    stream: RandomStream,
    coils: CoilSensitivities | None = None,
) -> np.ndarray:
    """Starting image(s): uniform noise on [-1, 1) per channel, or zero-filled."""
    h, w = y.mask.shape
    per_coil = config.mode == "calib_free"
    if config.init == "uniform_noise":
        n = y.n_coils if per_coil else 1
        chans = uniform(stream, (n, 2, h, w), -1.0, 1.0)
        imgs = chans[:, 0] + 1j * chans[:, 1]
        return imgs if per_coil else imgs[0]
    if per_coil:
        return ifft2(y.data)
    return zero_filled(y, coils if config.mode == "parallel_sens" else None)


def _combine_calibfree(per_coil: np.ndarray) -> np.ndarray:
    mag = np.sqrt(np.sum(np.abs(per_coil) ** 2, axis=0))
    return mag * np.exp(1j * np.angle(per_coil[0]))


def reconstruct(
    y: KSpaceMeasurement,
    params: EnergyParams,
    config: ReconConfig,
    stream: RandomStream,
    coils: CoilSensitivities | None = None,
    reference: np.ndarray | None = None,
    grad_fn=None,
) -> ReconReport:
    """Run the annealed Langevin + data-consistency loop on one measurement.

    With a ``reference`` image the report carries a PSNR value per inner
    iteration (``len(sigmas) * inner_steps`` entries).  A non-finite state
    aborts with the offending level and step in the error message.
    ``grad_fn`` swaps the trained prior for an analytic one (diagnostics).
    """
    if config.mode == "parallel_sens" and coils is None:
        raise ValueError("parallel_sens mode needs coil sensitivities")
    if config.mode == "calib_free" and y.n_coils < 2:
        raise ValueError("calib_free mode needs at least 2 coils")
    if config.mode == "single_coil" and y.n_coils != 1:
        raise ValueError("single_coil mode needs a 1-coil measurement")
    h, w = y.mask.shape
    params.arch.check_input_shape(h, w)

    sched = config.schedule
    per_coil = config.mode == "calib_free"
    state = init_state(config, y, stream, coils)
    conditional = params.arch.conditional
    if grad_fn is None:
        grad_fn = lambda x, s: grad_input(params, x, s)

    def project(x):
        if config.mode == "single_coil":
            return dc_project_single(x, y, config.lam)
        if config.mode == "parallel_sens":
            return dc_project_multicoil(
                x, y, coils, config.lam, tol=config.cg_tol, max_iter=config.cg_max_iter
            )
        return dc_project_calibfree(x, y, config.lam)

    def langevin(x, step, sigma):
        sig = sigma if conditional else None
        if per_coil:
            return np.stack(
                [
                    channels_to_complex(
                        langevin_step(grad_fn, complex_to_channels(x[c]), step, sig, stream)
                    )
                    for c in range(x.shape[0])
                ]
            )
        return channels_to_complex(
            langevin_step(grad_fn, complex_to_channels(x), step, sig, stream)
        )

    trace: list[float] = []
    t0 = time.monotonic()
    for i, sigma in enumerate(sched.sigmas):
        step = sched.step_size(i)
        for t in range(sched.inner_steps):
            try:
                state = langevin(state, step, sigma)
            except ChainDivergedError as exc:
                raise RuntimeError(f"{exc} (level {i}, step {t})") from exc
            if config.dc_every_step:
                state = project(state)
            if not np.all(np.isfinite(state)):
                raise RuntimeError(
                    f"reconstruction diverged (non-finite state) at level {i}, step {t}"
                )
            if reference is not None:
                current = _combine_calibfree(state) if per_coil else state
                trace.append(psnr(reference, current))
        if not config.dc_every_step:
            state = project(state)

    image = _combine_calibfree(state) if per_coil else state
    return ReconReport(
        image=image,
        psnr_trace=trace,
        wallclock_s=time.monotonic() - t0,
        config=config,
    )


def evaluate(result: np.ndarray, reference: np.ndarray) -> MetricsReport:
    """PSNR and SSIM of a reconstruction against its reference."""
    return evaluate_pair(reference, result)
