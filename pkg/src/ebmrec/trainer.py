"""Maximum-likelihood training of the energy network with Langevin negatives.

Each iteration contrasts a batch of noise-perturbed data samples against
negatives drawn from the replay buffer and refined by a short Langevin chain
under the current model.  The surrogate objective per batch is

    (1/N) sum_n  beta * (E(x_n+)^2 + E(x_n-)^2) + E(x_n+) - E(x_n-)

whose parameter gradient weights each sample's energy gradient by
``(2 * beta * E + 1) / N`` (positives) or ``(2 * beta * E - 1) / N``
(negatives).  Updates go through bias-corrected Adam followed by one warm
spectral-normalization power iteration; gradients are clipped at a global
norm before the step.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energy import (
    EnergyParams,
    batch_weighted_grad,
    grad_input,
    spectral_normalize_all,
)
from .numerics import RandomStream, complex_to_channels, gaussian
from .sampler import ReplayBuffer, langevin_step

__all__ = [
    "AdamState",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "adam_update",
    "contrastive_grad",
    "normalize_image",
    "perturb_positives",
    "train",
]

LOG_COLUMNS = ("iter", "mean_E_pos", "mean_E_neg", "gap", "grad_norm", "wallclock_s")


class TrainingDivergedError(RuntimeError):
    """Raised when the negative-sample energies blow past the divergence guard."""


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators, one per parameter tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: EnergyParams, lr: float = 0.0003) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.tensors.items()},
            v={k: np.zeros_like(v) for k, v in params.tensors.items()},
            lr=lr,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    iterations: int = 500
    batch_size: int = 16
    beta: float = 1.0
    lr: float = 0.0003
    noise_amplitudes: tuple[float, ...] = (0.5, 0.27, 0.14, 0.07, 0.04, 0.02, 0.01)
    langevin_steps: int = 10
    langevin_step_size: float = 1e-2
    clip_grad_norm: float = 100.0
    buffer_capacity: int = 10_000
    reuse_probability: float = 0.95
    crop: int | None = None  # train on random square crops of this size
    augment: bool = True  # random flips / 90-degree rotations
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if len(self.noise_amplitudes) == 0:
            raise ValueError("need at least one noise amplitude")


@dataclass
class TrainResult:
    params: EnergyParams
    adam: AdamState
    buffer: ReplayBuffer
    log: list[dict]
    iterations_done: int


def adam_update(
    state: AdamState, params: EnergyParams, grads: dict[str, np.ndarray]
) -> tuple[EnergyParams, AdamState]:
    """One bias-corrected Adam step; a NaN gradient refuses the update."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            logging.getLogger(__name__).warning(
                "non-finite gradient for %s; update refused", k
            )
            return params, state
    state.t += 1
    t = state.t
    new = params.copy()
    for k in params.tensors:
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        m_hat = state.m[k] / (1 - state.beta1**t)
        v_hat = state.v[k] / (1 - state.beta2**t)
        new.tensors[k] = params.tensors[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, state


def perturb_positives(
    batch: np.ndarray, amplitudes, stream: RandomStream
) -> tuple[np.ndarray, np.ndarray]:
    """Add per-sample Gaussian noise with amplitude chosen uniformly from the list.

    Returns the perturbed batch and the chosen amplitudes (for conditioning).
    """
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    if amplitudes.size == 0:
        raise ValueError("need a nonempty amplitude list")
    if np.any(amplitudes < 0):
        raise ValueError("amplitudes must be >= 0")
    batch = np.asarray(batch, dtype=np.float64)
    gen = stream.generator
    sigmas = amplitudes[gen.integers(0, amplitudes.size, size=len(batch))]
    out = np.empty_like(batch)
    for n in range(len(batch)):
        out[n] = batch[n] + gaussian(stream, batch[n].shape, float(sigmas[n]))
    return out, sigmas


def contrastive_grad(
    params: EnergyParams,
    positives: np.ndarray,
    negatives: np.ndarray,
    beta: float,
    sigmas_pos=None,
    sigmas_neg=None,
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Parameter gradient of the contrastive objective plus energy diagnostics."""
    positives = np.asarray(positives, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if len(positives) != len(negatives) or len(positives) == 0:
        raise ValueError("positive and negative batches must have equal size >= 1")
    n = len(positives)

    e_pos, g_pos = batch_weighted_grad(
        params, positives, sigmas_pos, lambda e: (2.0 * beta * e + 1.0) / n
    )
    e_neg, g_neg = batch_weighted_grad(
        params, negatives, sigmas_neg, lambda e: (2.0 * beta * e - 1.0) / n
    )
    grads = {k: g_pos[k] + g_neg[k] for k in g_pos}
    diag = {
        "mean_E_pos": float(e_pos.mean()),
        "mean_E_neg": float(e_neg.mean()),
        "gap": float(e_pos.mean() - e_neg.mean()),
    }
    return grads, diag


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def normalize_image(img: np.ndarray) -> np.ndarray:
    """Complex image -> 2-channel tensor scaled so both channels lie in [-1, 1]."""
    ch = complex_to_channels(img)
    peak = np.abs(ch).max()
    return ch / peak if peak > 0 else ch


def _augment(x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    k = int(gen.integers(0, 4))
    x = np.rot90(x, k, axes=(1, 2))
    if gen.integers(0, 2):
        x = x[:, :, ::-1]
    return np.ascontiguousarray(x)


def _crop(x: np.ndarray, size: int, gen: np.random.Generator) -> np.ndarray:
    _, h, w = x.shape
    if size >= h and size >= w:
        return x
    i = int(gen.integers(0, h - size + 1))
    j = int(gen.integers(0, w - size + 1))
    return np.ascontiguousarray(x[:, i:i + size, j:j + size])


def sample_negatives(
    params: EnergyParams,
    buffer: ReplayBuffer,
    batch_size: int,
    shape: tuple,
    sigma: float,
    config: TrainConfig,
    stream: RandomStream,
) -> np.ndarray:
    """Short-run Langevin chains from buffer/noise starts, clipped to [-1, 1]."""
    starts = buffer.sample_init(batch_size, shape, stream)
    sig = sigma if params.arch.conditional else None
    grad_fn = lambda x, s: grad_input(params, x, s)
    out = np.empty((batch_size, *shape))
    for n in range(batch_size):
        x = starts[n]
        for _ in range(config.langevin_steps):
            x = langevin_step(grad_fn, x, config.langevin_step_size, sig, stream)
            np.clip(x, -1.0, 1.0, out=x)
        out[n] = x
    return out


def train(
    dataset: list[np.ndarray],
    config: TrainConfig,
    stream: RandomStream,
    params: EnergyParams,
    adam: AdamState | None = None,
    buffer: ReplayBuffer | None = None,
    start_iteration: int = 0,
    log_path: Path | None = None,
) -> TrainResult:
    """Run the training loop; returns updated params, optimizer state and log.

    ``dataset`` holds complex images; each is normalized once so its channels
    lie in [-1, 1].  The log is appended to ``log_path`` as CSV while training
    runs (header written only when starting fresh).
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    if adam is None:
        adam = AdamState.for_params(params, lr=config.lr)
    if buffer is None:
        buffer = ReplayBuffer(
            capacity=config.buffer_capacity, reuse_probability=config.reuse_probability
        )

    data = [normalize_image(img) for img in dataset]
    gen = stream.generator
    log: list[dict] = []
    t_start = time.monotonic()

    writer = None
    log_file = None
    if log_path is not None:
        fresh = start_iteration == 0 or not Path(log_path).exists()
        log_file = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_file)
        if fresh:
            writer.writerow(LOG_COLUMNS)

    try:
        for it in range(start_iteration, start_iteration + config.iterations):
            idx = gen.integers(0, len(data), size=config.batch_size)
            batch = []
            for i in idx:
                x = data[int(i)]
                if config.augment:
                    x = _augment(x, gen)
                if config.crop is not None:
                    x = _crop(x, config.crop, gen)
                batch.append(x)
            positives = np.stack(batch)
            shape = positives.shape[1:]

            positives, sigmas_pos = perturb_positives(
                positives, config.noise_amplitudes, stream
            )
            sigma_neg = float(
                config.noise_amplitudes[int(gen.integers(0, len(config.noise_amplitudes)))]
            )
            negatives = sample_negatives(
                params, buffer, config.batch_size, shape, sigma_neg, config, stream
            )

            sp = sigmas_pos if params.arch.conditional else None
            sn = sigma_neg if params.arch.conditional else None
            grads, diag = contrastive_grad(
                params, positives, negatives, config.beta, sp, sn
            )
            if abs(diag["mean_E_neg"]) > config.divergence_limit:
                raise TrainingDivergedError(
                    f"|mean E-| = {abs(diag['mean_E_neg']):.3e} exceeds "
                    f"{config.divergence_limit:.1e} at iteration {it}"
                )
            grads, norm = clip_grads(grads, config.clip_grad_norm)
            params, adam = adam_update(adam, params, grads)
            params = spectral_normalize_all(params, iterations=1)
            buffer.push(list(negatives))

            row = {
                "iter": it,
                "mean_E_pos": diag["mean_E_pos"],
                "mean_E_neg": diag["mean_E_neg"],
                "gap": diag["gap"],
                "grad_norm": norm,
                "wallclock_s": time.monotonic() - t_start,
            }
            log.append(row)
            if writer is not None:
                writer.writerow(
                    [row["iter"]]
                    + [f"{row[c]:.12g}" for c in LOG_COLUMNS[1:-1]]
                    + [f"{row['wallclock_s']:.3f}"]
                )
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(
        params=params,
        adam=adam,
        buffer=buffer,
        log=log,
        iterations_done=start_iteration + config.iterations,
    )
