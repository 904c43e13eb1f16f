"""Langevin dynamics, the annealed noise schedule, and the sample replay buffer.

A single update moves a 2-channel state ``x`` by

    x <- x - (step / 2) * grad(x, sigma) + N(0, step)

so the injected noise has variance equal to the step size per coordinate.  The
gradient is supplied as a callable ``grad_fn(x, sigma)`` (use
:func:`make_grad_fn` for a trained network; analytic test energies plug in the
same way).  Each chain is strictly sequential; independent chains take
independent random streams.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import RandomStream, gaussian, uniform

__all__ = [
    "ChainDivergedError",
    "NoiseSchedule",
    "ReplayBuffer",
    "anneal_step_size",
    "langevin_step",
    "make_grad_fn",
    "run_chain",
]

GradFn = Callable[[np.ndarray, float], np.ndarray]


class ChainDivergedError(RuntimeError):
    """Raised when a Langevin chain produces a non-finite gradient or state."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Descending noise levels with a base step size and per-level step count."""

    sigmas: tuple[float, ...]
    base_step: float = 2e-5
    inner_steps: int = 20

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "sigmas", sig)
        if len(sig) == 0:
            raise ValueError("schedule needs at least one noise level")
        if any(s <= 0 for s in sig):
            raise ValueError("noise levels must be positive")
        if any(nxt >= cur for cur, nxt in zip(sig, sig[1:])):
            raise ValueError("noise levels must be strictly decreasing")
        if self.base_step <= 0:
            raise ValueError("base_step must be positive")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")

    @classmethod
    def geometric(
        cls,
        n_levels: int = 10,
        sigma_start: float = 0.5,
        sigma_end: float = 0.01,
        base_step: float = 2e-5,
        inner_steps: int = 20,
    ) -> "NoiseSchedule":
        sig = np.geomspace(sigma_start, sigma_end, n_levels)
        return cls(sigmas=tuple(sig), base_step=base_step, inner_steps=inner_steps)

    def step_size(self, level: int) -> float:
        return anneal_step_size(self.base_step, self.sigmas[level], self.sigmas[-1])


def anneal_step_size(base_step: float, sigma_i: float, sigma_last: float) -> float:
    """Step size at one noise level: ``base_step * (sigma_i / sigma_last)**2``.

    Equal to ``base_step`` at the final (smallest) level and monotone
    non-increasing along a valid schedule.
    """
    ratio = (sigma_i * sigma_i) / (sigma_last * sigma_last)
    return base_step * ratio


def langevin_step(
    grad_fn: GradFn,
    x: np.ndarray,
    step_size: float,
    sigma: float,
    stream: RandomStream,
) -> np.ndarray:
    """One Langevin update; exactly one gradient evaluation."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    g = grad_fn(x, sigma)
    if not np.all(np.isfinite(g)):
        raise ChainDivergedError("non-finite energy gradient; chain aborted")
    return x - 0.5 * step_size * g + gaussian(stream, x.shape, math.sqrt(step_size))


def run_chain(
    grad_fn: GradFn,
    x0: np.ndarray,
    n_steps: int,
    step_size: float,
    sigma: float,
    stream: RandomStream,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Compose ``n_steps`` Langevin updates; ``on_step`` observes each state."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x0, dtype=np.float64)
    for t in range(n_steps):
        x = langevin_step(grad_fn, x, step_size, sigma, stream)
        if on_step is not None:
            on_step(t, x)
    return x


def make_grad_fn(params) -> GradFn:
    """Wrap trained network parameters as a ``grad_fn(x, sigma)`` callable."""
    from .energy import grad_input

    return lambda x, sigma: grad_input(params, x, sigma)


@dataclass
class ReplayBuffer:
    """Bounded FIFO store of past negative samples.

    ``sample_init`` draws each chain start from the buffer with probability
    ``reuse_probability`` (uniformly over entries) and from fresh uniform noise
    on [-1, 1) otherwise; an empty buffer always yields noise.
    """

    capacity: int = 10_000
    reuse_probability: float = 0.95
    _entries: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= self.reuse_probability <= 1.0:
            raise ValueError("reuse_probability must be in [0, 1]")
        self._entries = deque(self._entries, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, samples: Sequence[np.ndarray]) -> None:
        """Append samples, evicting the oldest entries beyond capacity."""
        for s in samples:
            s = np.asarray(s, dtype=np.float64)
            if self._entries and s.shape != self._entries[0].shape:
                raise ValueError(
                    f"sample shape {s.shape} does not match buffered {self._entries[0].shape}"
                )
            self._entries.append(s.copy())

    def sample_init(self, batch_size: int, shape: tuple, stream: RandomStream) -> list[np.ndarray]:
        """Draw chain initializations for a batch of negative samples."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        out = []
        gen = stream.generator
        for _ in range(batch_size):
            if self._entries and gen.uniform() < self.reuse_probability:
                idx = int(gen.integers(0, len(self._entries)))
                out.append(self._entries[idx].copy())
            else:
                out.append(uniform(stream, shape, -1.0, 1.0))
        return out
