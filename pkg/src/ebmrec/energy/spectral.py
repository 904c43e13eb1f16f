"""Spectral normalization of every weight matrix via power iteration.

Each convolution kernel is reshaped to (out_channels, -1) and divided by the
power-iteration estimate of its largest singular value; the left vector ``u``
persists inside the parameters, so one iteration per training step keeps the
estimate warm.  Normalizing an already-normalized matrix divides by ~1, which
makes the operation idempotent once the iteration has converged.
"""

from __future__ import annotations

import numpy as np

from .params import EnergyParams

__all__ = ["spectral_normalize_all", "power_iteration_sigma"]

_TINY = 1e-12


def power_iteration_sigma(mat: np.ndarray, u: np.ndarray, iterations: int):
    """Estimate the largest singular value of ``mat``; returns (sigma, u').

    A zero matrix reports sigma 0 and leaves ``u`` untouched.
    """
    v = None
    for _ in range(iterations):
        v = mat.T @ u
        nv = np.linalg.norm(v)
        if nv < _TINY:
            return 0.0, u
        v /= nv
        u = mat @ v
        nu = np.linalg.norm(u)
        if nu < _TINY:
            return 0.0, u
        u /= nu
    sigma = float(u @ (mat @ v))
    return sigma, u


def spectral_normalize_all(params: EnergyParams, iterations: int = 1) -> EnergyParams:
    """Divide every weight matrix by its estimated largest singular value.

    Biases are untouched; zero matrices pass through unchanged.  The returned
    params carry the updated power-iteration vectors.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    tensors = dict(params.tensors)
    sn_u = dict(params.sn_u)
    for name in params.weight_names():
        w = tensors[name]
        mat = w.reshape(w.shape[0], -1)
        sigma, u = power_iteration_sigma(mat, sn_u[name], iterations)
        sn_u[name] = u
        if sigma > _TINY:
            tensors[name] = w / sigma
    return EnergyParams(params.arch, tensors, sn_u)
