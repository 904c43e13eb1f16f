"""Deterministic tensor/complex arithmetic, unitary 2D FFT, and seeded random streams.

All arithmetic is double precision.  Complex images are ``complex128`` arrays of
shape ``(H, W)`` or ``(coils, H, W)``; the network-facing real representation is
a 2-channel ``float64`` array ``(2, H, W)`` holding (real, imaginary).

The FFT pair is unitary (``1/sqrt(H*W)`` scaling in both directions), so the
adjoint of the forward transform equals its inverse and k-space projections
stay norm-preserving.  Sizes are restricted to powers of two.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "RandomStream",
    "fft2",
    "ifft2",
    "gaussian",
    "uniform",
    "complex_to_channels",
    "channels_to_complex",
]


class DimensionError(ValueError):
    """Raised when an array's spatial dimensions violate an operation's contract."""


def _is_pow2(n: int) -> bool:
    return n >= 4 and (n & (n - 1)) == 0


def _check_fft_dims(a: np.ndarray) -> None:
    if a.ndim not in (2, 3):
        raise DimensionError(f"expected (H, W) or (coils, H, W), got shape {a.shape}")
    h, w = a.shape[-2], a.shape[-1]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise DimensionError(f"spatial dims must be powers of two >= 4, got {h}x{w}")


def fft2(img: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the last two axes (per coil for 3-D input).

    Preserves the l2 norm; the zero-frequency coefficient sits at index (0, 0).
    """
    _check_fft_dims(img)
    return np.fft.fft2(np.asarray(img, dtype=np.complex128), norm="ortho")


def ifft2(k: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`fft2` (equal to its adjoint under unitary scaling)."""
    _check_fft_dims(k)
    return np.fft.ifft2(np.asarray(k, dtype=np.complex128), norm="ortho")


class RandomStream:
    """Counter-based random stream keyed by (seed, stream id).

    Identical ``(seed, stream)`` pairs reproduce identical draw sequences across
    runs and thread counts (the generator is Philox, a counter-based RNG).
    ``child(i)`` derives an independent, equally reproducible substream, so
    parallel chains and per-image work can each own a stream without any
    cross-talk in draw order.
    """

    def __init__(self, seed: int, stream: int = 0, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = int(stream)
        self._path = tuple(int(p) for p in _path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self._path))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "RandomStream":
        """Derive the ``index``-th independent substream of this stream."""
        return RandomStream(self.seed, self.stream, (*self._path, int(index)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self) -> str:  # pragma: no cover
        return f"RandomStream(seed={self.seed}, stream={self.stream}, path={self._path})"


def gaussian(stream: RandomStream, shape, std: float) -> np.ndarray:
    """I.i.d. zero-mean normal draws with standard deviation ``std``.

    ``std = 0`` returns an all-zeros tensor; negative ``std`` is rejected.
    """
    std = float(std)
    if not np.isfinite(std):
        raise ValueError(f"std must be finite, got {std}")
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return stream.generator.normal(loc=0.0, scale=std, size=shape)


def uniform(stream: RandomStream, shape, lo: float, hi: float) -> np.ndarray:
    """I.i.d. uniform draws on ``[lo, hi)``; requires ``lo < hi``."""
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"require lo < hi, got lo={lo}, hi={hi}")
    return stream.generator.uniform(lo, hi, size=shape)


def complex_to_channels(img: np.ndarray) -> np.ndarray:
    """Map an (H, W) complex image to its lossless 2-channel (2, H, W) real form."""
    img = np.asarray(img, dtype=np.complex128)
    if img.ndim != 2:
        raise DimensionError(f"expected (H, W) complex image, got shape {img.shape}")
    return np.stack([img.real, img.imag]).astype(np.float64)


def channels_to_complex(ch: np.ndarray) -> np.ndarray:
    """Inverse of :func:`complex_to_channels`."""
    ch = np.asarray(ch, dtype=np.float64)
    if ch.ndim != 3 or ch.shape[0] != 2:
        raise DimensionError(f"expected (2, H, W) channel tensor, got shape {ch.shape}")
    return ch[0] + 1j * ch[1]
