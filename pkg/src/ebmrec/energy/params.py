"""Architecture descriptor and parameter container for the energy network.

The network maps a 2- or 3-channel image (real part, imaginary part, optional
constant noise-level channel) to a scalar energy:

    stem 3x3 conv -> stage 0 residual blocks -> downsampling stages
    -> activation -> global sum pool -> dense(1)

Stage 0 keeps the spatial size; every later stage starts with a downsampling
residual block (2x2 mean pool after the residual add), so inputs must have
spatial dims divisible by ``2 ** (len(widths) - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import RandomStream

__all__ = ["Architecture", "EnergyParams", "init_params", "zero_params", "param_count"]


@dataclass(frozen=True)
class Architecture:
    """Channel widths and residual-block counts per stage, plus conditioning mode.

    ``conditional=True`` adds a third input channel holding the noise level the
    sample was drawn at, so one network covers a whole annealing schedule.
    """

    widths: tuple[int, ...] = (64, 128, 256)
    blocks: tuple[int, ...] = (1, 1, 1)
    conditional: bool = True

    def __post_init__(self):
        if len(self.widths) == 0:
            raise ValueError("need at least one stage")
        if len(self.blocks) != len(self.widths):
            raise ValueError("blocks and widths must have the same length")
        if any(w < 1 for w in self.widths) or any(b < 1 for b in self.blocks):
            raise ValueError("widths and blocks must be positive")

    @property
    def in_channels(self) -> int:
        return 3 if self.conditional else 2

    @property
    def n_down(self) -> int:
        return len(self.widths) - 1

    @property
    def spatial_divisor(self) -> int:
        return 2 ** self.n_down

    def check_input_shape(self, h: int, w: int) -> None:
        d = self.spatial_divisor
        if h < 4 or w < 4 or h % d or w % d:
            raise ValueError(
                f"input {h}x{w} incompatible: dims must be >= 4 and divisible by {d}"
            )


@dataclass
class EnergyParams:
    """All weights of the energy network plus spectral-norm auxiliary vectors.

    ``tensors`` is insertion-ordered (construction order defines the canonical
    parameter order used by checkpoints, gradients and the optimizer).
    ``sn_u`` holds one persistent power-iteration vector per weight matrix.
    """

    arch: Architecture
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    sn_u: dict[str, np.ndarray] = field(default_factory=dict)

    def weight_names(self) -> list[str]:
        return [n for n in self.tensors if n.endswith(".w")]

    def copy(self) -> "EnergyParams":
        return EnergyParams(
            self.arch,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.sn_u.items()},
        )

    def n_parameters(self) -> int:
        return sum(int(v.size) for v in self.tensors.values())


def _layer_manifest(arch: Architecture):
    """Yield (name, shape, fan_in) for every tensor in canonical order."""
    w0 = arch.widths[0]
    yield "stem.w", (w0, arch.in_channels, 3, 3), arch.in_channels * 9
    yield "stem.b", (w0,), 0
    for i, width in enumerate(arch.widths):
        prev = arch.widths[i - 1] if i > 0 else w0
        for j in range(arch.blocks[i]):
            tag = f"s{i}b{j}"
            cin = prev if (i > 0 and j == 0) else width
            yield f"{tag}.conv1.w", (width, cin, 3, 3), cin * 9
            yield f"{tag}.conv1.b", (width,), 0
            yield f"{tag}.conv2.w", (width, width, 3, 3), width * 9
            yield f"{tag}.conv2.b", (width,), 0
            if i > 0 and j == 0:
                yield f"{tag}.skip.w", (width, cin, 1, 1), cin
    yield "dense.w", (1, arch.widths[-1]), arch.widths[-1]
    yield "dense.b", (1,), 0


def param_count(arch: Architecture) -> int:
    """Total parameter count; a pure function of the architecture descriptor."""
    return sum(int(np.prod(shape)) for _, shape, _ in _layer_manifest(arch))


def init_params(arch: Architecture, stream: RandomStream, sn_iterations: int = 50) -> EnergyParams:
    """Initialize weights N(0, 1/sqrt(fan_in)), zero biases, then spectral-normalize.

    The power-iteration vectors are drawn once and kept as persistent state; the
    initial normalization runs ``sn_iterations`` rounds so every weight matrix
    starts with largest singular value ~1.
    """
    from .spectral import spectral_normalize_all

    gen = stream.generator
    tensors: dict[str, np.ndarray] = {}
    sn_u: dict[str, np.ndarray] = {}
    for name, shape, fan_in in _layer_manifest(arch):
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            tensors[name] = gen.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
            u = gen.normal(0.0, 1.0, size=shape[0])
            sn_u[name] = u / np.linalg.norm(u)
    params = EnergyParams(arch, tensors, sn_u)
    if sn_iterations > 0:
        params = spectral_normalize_all(params, sn_iterations)
    return params


def zero_params(arch: Architecture) -> EnergyParams:
    """All-zero weights and biases (the zero network has energy 0 everywhere)."""
    tensors = {
        name: np.zeros(shape, dtype=np.float64) for name, shape, _ in _layer_manifest(arch)
    }
    sn_u = {n: np.ones(tensors[n].shape[0]) for n in tensors if n.endswith(".w")}
    return EnergyParams(arch, tensors, sn_u)
