"""Synthetic complex-valued phantoms and coil-sensitivity maps for desk-scale runs.

Phantoms are sums of randomly placed soft-edged ellipses (or Gaussian blobs),
magnitude-normalized to [0, 1] and modulated by a smooth band-limited phase,
so they exercise the full complex-valued reconstruction path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kspace import CoilSensitivities
from .numerics import RandomStream, ifft2

__all__ = ["PhantomSpec", "make_phantom", "make_dataset", "simulate_sensitivities"]


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a family of random phantoms."""

    kind: str = "ellipses"  # "ellipses" or "blobs"
    height: int = 64
    width: int = 64
    min_shapes: int = 4
    max_shapes: int = 9
    intensity_lo: float = 0.3
    intensity_hi: float = 1.0
    phase_amplitude: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ellipses", "blobs"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.min_shapes < 0 or self.max_shapes < self.min_shapes:
            raise ValueError("need 0 <= min_shapes <= max_shapes")
        if not self.intensity_lo <= self.intensity_hi:
            raise ValueError("need intensity_lo <= intensity_hi")
        if self.phase_amplitude < 0:
            raise ValueError("phase_amplitude must be >= 0")


def _smooth_phase(h: int, w: int, amplitude: float, stream: RandomStream) -> np.ndarray:
    """Band-limited random phase field with peak |phase| == amplitude."""
    if amplitude == 0:
        return np.zeros((h, w))
    gen = stream.generator
    spec = np.zeros((h, w), dtype=np.complex128)
    for ky in (-2, -1, 0, 1, 2):
        for kx in (-2, -1, 0, 1, 2):
            if ky == 0 and kx == 0:
                continue
            spec[ky % h, kx % w] = gen.normal() + 1j * gen.normal()
    field = ifft2(spec).real
    peak = np.abs(field).max()
    return field * (amplitude / peak) if peak > 0 else field


def make_phantom(spec: PhantomSpec, stream: RandomStream | None = None) -> np.ndarray:
    """One random complex phantom; identical streams reproduce identical images."""
    if stream is None:
        stream = RandomStream(spec.seed)
    gen = stream.generator
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w]
    yy = (yy - h / 2 + 0.5) / (h / 2)
    xx = (xx - w / 2 + 0.5) / (w / 2)

    n_shapes = int(gen.integers(spec.min_shapes, spec.max_shapes + 1))
    mag = np.zeros((h, w))
    for _ in range(n_shapes):
        cy, cx = gen.uniform(-0.55, 0.55, size=2)
        a, b = gen.uniform(0.10, 0.50, size=2)
        theta = gen.uniform(0.0, np.pi)
        amp = gen.uniform(spec.intensity_lo, spec.intensity_hi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        q = (u / a) ** 2 + (v / b) ** 2
        if spec.kind == "ellipses":
            # soft edge keeps the boundary anti-aliased
            mag += amp * 0.5 * (1.0 - np.tanh((q - 1.0) / 0.15))
        else:
            mag += amp * np.exp(-q)

    peak = mag.max()
    if peak > 0:
        mag /= peak
    phase = _smooth_phase(h, w, spec.phase_amplitude, stream)
    return mag * np.exp(1j * phase)


def make_dataset(
    spec: PhantomSpec, count: int, stream: RandomStream | None = None
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """``count`` reproducible phantoms with a deterministic 90/10 train/test split.

    Image ``i`` always comes from substream ``i``, so the dataset is stable
    under changes in iteration order or parallel generation.
    """
    if count < 2:
        raise ValueError("need count >= 2 to split")
    if stream is None:
        stream = RandomStream(spec.seed)
    images = [make_phantom(spec, stream.child(i)) for i in range(count)]
    n_test = max(1, count // 10)
    return images[: count - n_test], images[count - n_test:]


def simulate_sensitivities(n_coils: int, dims: tuple[int, int]) -> CoilSensitivities:
    """Smooth Gaussian-lobe coil maps, sum-of-squares normalized to 1 everywhere."""
    if n_coils < 1:
        raise ValueError("need at least one coil")
    h, w = dims
    if n_coils == 1:
        return CoilSensitivities(np.ones((1, h, w), dtype=np.complex128))
    yy, xx = np.mgrid[0:h, 0:w]
    maps = np.empty((n_coils, h, w), dtype=np.complex128)
    radius = 0.5 * min(h, w)
    width = 0.7 * min(h, w)
    for c in range(n_coils):
        ang = 2.0 * np.pi * c / n_coils
        cy, cx = h / 2 + radius * np.sin(ang), w / 2 + radius * np.cos(ang)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        lobe = np.exp(-d2 / (2.0 * width**2))
        ramp = 0.5 * np.pi * ((xx / w) * np.cos(ang) + (yy / h) * np.sin(ang))
        maps[c] = lobe * np.exp(1j * ramp)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilSensitivities(maps / sos[None])
