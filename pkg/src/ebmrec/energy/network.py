"""Forward evaluation and exact reverse-mode gradients of the energy network.

Only this fixed architecture family is differentiated; every backward formula
is the closed-form transpose of its forward op, so gradients are exact to
floating-point rounding.  Batched entry points process samples one at a time
in index order, which makes per-sample results independent of batch
composition and keeps all reductions deterministic.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .params import Architecture, EnergyParams

__all__ = [
    "assemble_input",
    "batch_weighted_grad",
    "energy",
    "energy_batch",
    "grad_input",
    "grad_input_batch",
    "grad_params",
]


def assemble_input(arch: Architecture, x: np.ndarray, sigma: float | None) -> np.ndarray:
    """Stack the 2 image channels with the constant noise-level channel (if any)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 2:
        raise ValueError(f"expected (2, H, W) input, got shape {x.shape}")
    arch.check_input_shape(x.shape[1], x.shape[2])
    if not arch.conditional:
        return x
    if sigma is None:
        raise ValueError("conditional network needs a noise level sigma")
    cond = np.full((1, x.shape[1], x.shape[2]), float(sigma))
    return np.concatenate([x, cond], axis=0)


def _block_names(arch: Architecture):
    for i in range(len(arch.widths)):
        for j in range(arch.blocks[i]):
            yield f"s{i}b{j}", (i > 0 and j == 0)


def _forward(params: EnergyParams, xin: np.ndarray):
    """Run the net on an assembled input; returns (energy, cache for backward)."""
    t = params.tensors
    cache: dict = {}
    h, cache["stem.cols"] = L.conv3x3(xin, t["stem.w"], t["stem.b"])
    for tag, down in _block_names(params.arch):
        x = h
        a1 = L.swish(x)
        h1, cols1 = L.conv3x3(a1, t[f"{tag}.conv1.w"], t[f"{tag}.conv1.b"])
        a2 = L.swish(h1)
        h2, cols2 = L.conv3x3(a2, t[f"{tag}.conv2.w"], t[f"{tag}.conv2.b"])
        if down:
            sk = L.conv1x1(x, t[f"{tag}.skip.w"])
            h = L.mean_pool2(sk + h2)
        else:
            h = x + h2
        cache[tag] = (x, cols1, h1, cols2)
    feat = h
    act = L.swish(feat)
    pooled = L.global_sum_pool(act)
    e = float(t["dense.w"][0] @ pooled + t["dense.b"][0])
    cache["head"] = (feat, pooled)
    return e, cache


def _backward(params: EnergyParams, cache: dict, want_param_grads: bool):
    """Propagate d(energy)=1 back to the input (and optionally all parameters)."""
    t = params.tensors
    grads: dict[str, np.ndarray] = {} if want_param_grads else None

    feat, pooled = cache["head"]
    if want_param_grads:
        grads["dense.w"] = pooled[None, :].copy()
        grads["dense.b"] = np.ones(1)
    da = L.global_sum_pool_backward(t["dense.w"][0], feat.shape[1], feat.shape[2])
    dh = L.swish_backward(feat, da)

    for tag, down in reversed(list(_block_names(params.arch))):
        x, cols1, h1, cols2 = cache[tag]
        if down:
            dpre = L.mean_pool2_backward(dh)
            dh2 = dpre
            dx_skip = L.conv1x1_grad_input(dpre, t[f"{tag}.skip.w"])
            if want_param_grads:
                grads[f"{tag}.skip.w"] = L.conv1x1_grad_weight(x, dpre)
        else:
            dh2 = dh
            dx_skip = dh
        da2 = L.conv3x3_grad_input(dh2, t[f"{tag}.conv2.w"])
        if want_param_grads:
            grads[f"{tag}.conv2.w"] = L.conv3x3_grad_weight(cols2, dh2)
            grads[f"{tag}.conv2.b"] = dh2.sum(axis=(1, 2))
        dh1 = L.swish_backward(h1, da2)
        da1 = L.conv3x3_grad_input(dh1, t[f"{tag}.conv1.w"])
        if want_param_grads:
            grads[f"{tag}.conv1.w"] = L.conv3x3_grad_weight(cols1, dh1)
            grads[f"{tag}.conv1.b"] = dh1.sum(axis=(1, 2))
        dh = dx_skip + L.swish_backward(x, da1)

    dxin = L.conv3x3_grad_input(dh, t["stem.w"])
    if want_param_grads:
        grads["stem.w"] = L.conv3x3_grad_weight(cache["stem.cols"], dh)
        grads["stem.b"] = dh.sum(axis=(1, 2))
    return dxin, grads


def energy(params: EnergyParams, x: np.ndarray, sigma: float | None = None) -> float:
    """Scalar energy of one 2-channel image (lower = more probable)."""
    e, _ = _forward(params, assemble_input(params.arch, x, sigma))
    return e


def energy_batch(params: EnergyParams, xs: np.ndarray, sigmas=None) -> np.ndarray:
    """Per-sample energies for a (B, 2, H, W) batch; identical to one-by-one calls."""
    xs = np.asarray(xs, dtype=np.float64)
    sig = _per_sample_sigmas(params.arch, len(xs), sigmas)
    return np.array([energy(params, xs[n], sig[n]) for n in range(len(xs))])


def grad_input(params: EnergyParams, x: np.ndarray, sigma: float | None = None) -> np.ndarray:
    """Exact gradient of the energy w.r.t. the 2 image channels.

    The constant noise-level channel receives no gradient.
    """
    e_in = assemble_input(params.arch, x, sigma)
    _, cache = _forward(params, e_in)
    dxin, _ = _backward(params, cache, want_param_grads=False)
    return dxin[:2]


def grad_input_batch(params: EnergyParams, xs: np.ndarray, sigmas=None) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    sig = _per_sample_sigmas(params.arch, len(xs), sigmas)
    return np.stack([grad_input(params, xs[n], sig[n]) for n in range(len(xs))])


def grad_params(
    params: EnergyParams,
    batch: np.ndarray,
    weights,
    sigmas=None,
) -> dict[str, np.ndarray]:
    """Gradient of ``sum_n weights[n] * energy(params, batch[n])`` w.r.t. all parameters.

    Samples are accumulated in batch order, so the reduction is deterministic.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or len(batch) == 0:
        raise ValueError("batch must be a nonempty (B, 2, H, W) array")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(batch),):
        raise ValueError("weights must have one entry per batch sample")
    sig = _per_sample_sigmas(params.arch, len(batch), sigmas)

    total = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    for n in range(len(batch)):
        if weights[n] == 0.0:
            continue
        _, cache = _forward(params, assemble_input(params.arch, batch[n], sig[n]))
        _, g = _backward(params, cache, want_param_grads=True)
        for k in g:
            total[k] += weights[n] * g[k]
    return total


def batch_weighted_grad(
    params: EnergyParams,
    batch: np.ndarray,
    sigmas,
    weight_from_energy,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Energies plus ``sum_n weight_from_energy(e_n) * dE_n/dtheta`` in one pass.

    One forward per sample (the weight may depend on that sample's energy, so
    no second pass is needed).  Accumulation follows batch order.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or len(batch) == 0:
        raise ValueError("batch must be a nonempty (B, 2, H, W) array")
    sig = _per_sample_sigmas(params.arch, len(batch), sigmas)
    energies = np.empty(len(batch))
    total = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    for n in range(len(batch)):
        e, cache = _forward(params, assemble_input(params.arch, batch[n], sig[n]))
        energies[n] = e
        wn = float(weight_from_energy(e))
        if wn == 0.0:
            continue
        _, g = _backward(params, cache, want_param_grads=True)
        for k in g:
            total[k] += wn * g[k]
    return energies, total


def _per_sample_sigmas(arch: Architecture, n: int, sigmas) -> list[float | None]:
    if sigmas is None:
        if arch.conditional:
            raise ValueError("conditional network needs per-sample sigmas")
        return [None] * n
    if np.isscalar(sigmas):
        return [float(sigmas)] * n
    sigmas = list(np.asarray(sigmas, dtype=np.float64))
    if len(sigmas) != n:
        raise ValueError("sigmas must be a scalar or one value per sample")
    return sigmas
