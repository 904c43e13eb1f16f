"""Under-sampling masks, the k-space measurement operator, and data-consistency solvers.

Masks are boolean keep-patterns stored in FFT layout (zero frequency at index
``[0, 0]``, matching :func:`ebmrec.numerics.fft2`); generation happens in
centered coordinates and is ifftshifted at the end.  Every pattern keeps a
fully-sampled central region and lands within +-15% of the nominal ``1/R``
kept fraction.

The single-coil consistency projection is the closed-form minimizer of

    min_x  ||P F x - y||^2 + lam ||x - xt||^2

(kept coefficients become ``(y + lam * F xt) / (1 + lam)``, unmeasured ones are
untouched, because ``F`` is unitary so the system is diagonal in k-space).
With coil sensitivities in the operator the system is no longer diagonal in
any single domain, so the multi-coil projection solves the normal equations by
conjugate gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import RandomStream, fft2, gaussian, ifft2

__all__ = [
    "PATTERNS",
    "SamplingMask",
    "CoilSensitivities",
    "KSpaceMeasurement",
    "ConvergenceError",
    "make_mask",
    "forward",
    "zero_filled",
    "dc_project_single",
    "dc_project_multicoil",
    "dc_project_calibfree",
]

PATTERNS = ("cartesian1d", "pseudo_radial", "random2d", "poisson_disk")

_FRACTION_SLACK = 0.15


class ConvergenceError(RuntimeError):
    """Raised when the multi-coil conjugate-gradient solve misses its tolerance."""


@dataclass(frozen=True)
class SamplingMask:
    """Boolean k-space keep-pattern with its family name and nominal acceleration."""

    keep: np.ndarray
    pattern: str
    accel: float

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        object.__setattr__(self, "keep", keep)
        if keep.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {keep.shape}")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.accel < 1:
            raise ValueError(f"acceleration must be >= 1, got {self.accel}")
        if not keep.any():
            raise ValueError("mask keeps no k-space locations")
        if self.pattern == "cartesian1d":
            rows = keep.any(axis=1)
            if not np.array_equal(keep, np.broadcast_to(rows[:, None], keep.shape)):
                raise ValueError("cartesian1d mask must keep entire rows")
        target = 1.0 / self.accel
        if abs(self.kept_fraction - target) > _FRACTION_SLACK * target:
            raise ValueError(
                f"kept fraction {self.kept_fraction:.4f} outside +-15% of 1/R={target:.4f}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def kept_fraction(self) -> float:
        return float(self.keep.mean())


@dataclass(frozen=True)
class CoilSensitivities:
    """Per-coil complex maps normalized so the sum of squares is 1 on the support."""

    maps: np.ndarray  # (n_coils, H, W) complex

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.complex128)
        object.__setattr__(self, "maps", maps)
        if maps.ndim != 3:
            raise ValueError(f"expected (coils, H, W) maps, got shape {maps.shape}")
        sos = np.sum(np.abs(maps) ** 2, axis=0)
        if not np.all((np.abs(sos - 1.0) < 1e-6) | (sos < 1e-12)):
            raise ValueError("sensitivity sum-of-squares must be 1 on the support, 0 outside")

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]


@dataclass(frozen=True)
class KSpaceMeasurement:
    """Measured k-space on the full grid (zeros at unmeasured locations)."""

    data: np.ndarray  # (n_coils, H, W) complex
    mask: SamplingMask
    noise_std: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim == 2:
            data = data[None]
        object.__setattr__(self, "data", data)
        if data.ndim != 3 or data.shape[1:] != self.mask.shape:
            raise ValueError(
                f"data shape {data.shape} does not match mask {self.mask.shape}"
            )
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if np.any(data[:, ~self.mask.keep] != 0):
            raise ValueError("measurement has nonzero values at unmeasured locations")

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# Mask generation (centered coordinates, ifftshifted on return)


def _center_disk(h: int, w: int, center_fraction: float) -> np.ndarray:
    """Central disk whose area matches ``center_fraction`` of the full grid."""
    disk = np.zeros((h, w), dtype=bool)
    if center_fraction <= 0:
        return disk
    radius = math.sqrt(center_fraction * h * w / math.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - h / 2 + 0.5) ** 2 + (xx - w / 2 + 0.5) ** 2 <= radius**2


def _center_rows(h: int, center_fraction: float) -> np.ndarray:
    rows = np.zeros(h, dtype=bool)
    n = int(round(center_fraction * h))
    if n > 0:
        lo = (h - n) // 2
        rows[lo:lo + n] = True
    return rows


def _cartesian1d(h, w, r, cf, stream: RandomStream) -> np.ndarray:
    rows = _center_rows(h, cf)
    n_total = max(1, int(round(h / r)))
    n_extra = n_total - int(rows.sum())
    rest = np.flatnonzero(~rows)
    if n_extra > 0:
        pick = stream.generator.choice(rest, size=min(n_extra, rest.size), replace=False)
        rows[pick] = True
    return np.broadcast_to(rows[:, None], (h, w)).copy()


def _spoke_mask(h: int, w: int, n_spokes: int, theta0: float) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    cy, cx = h / 2 - 0.5, w / 2 - 0.5
    half = math.hypot(h, w) / 2
    golden = math.pi * (3.0 - math.sqrt(5.0))
    ts = np.arange(-half, half, 0.5)
    for k in range(n_spokes):
        ang = theta0 + k * golden
        ys = np.rint(cy + ts * math.sin(ang)).astype(int)
        xs = np.rint(cx + ts * math.cos(ang)).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = True
    return mask


def _pseudo_radial(h, w, r, cf, stream: RandomStream) -> np.ndarray:
    theta0 = float(stream.generator.uniform(0.0, math.pi))
    center = _center_disk(h, w, cf)
    target = h * w / r

    def count(n: int) -> int:
        return int((_spoke_mask(h, w, n, theta0) | center).sum())

    lo, hi = 1, 4 * max(h, w)
    while lo < hi:  # smallest spoke count reaching the target
        mid = (lo + hi) // 2
        if count(mid) < target:
            lo = mid + 1
        else:
            hi = mid
    best = min((lo - 1, lo), key=lambda n: abs(count(n) - target) if n >= 1 else np.inf)
    return _spoke_mask(h, w, best, theta0) | center


def _random2d(h, w, r, cf, stream: RandomStream) -> np.ndarray:
    mask = _center_disk(h, w, cf)
    n_total = max(1, int(round(h * w / r)))
    n_extra = n_total - int(mask.sum())
    rest = np.flatnonzero(~mask.ravel())
    if n_extra > 0:
        pick = stream.generator.choice(rest, size=min(n_extra, rest.size), replace=False)
        mask.ravel()[pick] = True
    return mask


def _poisson_darts(h, w, radius, center, candidates) -> np.ndarray:
    """Greedy dart throwing: accept candidates at least ``radius`` apart."""
    mask = center.copy()
    cell = radius / math.sqrt(2.0) if radius > 0 else 1.0
    grid: dict[tuple[int, int], list[tuple[float, float]]] = {}
    r2 = radius * radius
    for y, x in candidates:
        gy, gx = int(y / cell), int(x / cell)
        ok = True
        for ny in range(gy - 2, gy + 3):
            for nx in range(gx - 2, gx + 3):
                for py, px in grid.get((ny, nx), ()):
                    if (y - py) ** 2 + (x - px) ** 2 < r2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            grid.setdefault((gy, gx), []).append((y, x))
            mask[int(y), int(x)] = True
    return mask


def _poisson_disk(h, w, r, cf, stream: RandomStream) -> np.ndarray:
    center = _center_disk(h, w, cf)
    target = h * w / r
    n_cand = int(12 * target) + 256
    ys = stream.generator.uniform(0, h, size=n_cand)
    xs = stream.generator.uniform(0, w, size=n_cand)
    candidates = list(zip(ys, xs))

    # kept count decreases monotonically with the dart radius; bisect it
    lo, hi = 0.25, float(max(h, w))
    best = None
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        m = _poisson_darts(h, w, mid, center, candidates)
        got = int(m.sum())
        if best is None or abs(got - target) < abs(best[1] - target):
            best = (m, got)
        if got > target:
            lo = mid
        else:
            hi = mid
    return best[0]


_GENERATORS = {
    "cartesian1d": _cartesian1d,
    "pseudo_radial": _pseudo_radial,
    "random2d": _random2d,
    "poisson_disk": _poisson_disk,
}


def make_mask(
    pattern: str,
    accel: float,
    height: int,
    width: int,
    center_fraction: float = 0.08,
    stream: RandomStream | None = None,
) -> SamplingMask:
    """Generate an under-sampling mask of the requested family.

    The central region (``center_fraction`` of rows for cartesian1d, a disk of
    equivalent area otherwise) is always fully sampled, and the overall kept
    fraction lands within +-15% of ``1/accel``.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {PATTERNS}")
    if accel < 1:
        raise ValueError(f"acceleration must be >= 1, got {accel}")
    if not 0 <= center_fraction < 1:
        raise ValueError(f"center_fraction must be in [0, 1), got {center_fraction}")
    if center_fraction > 1.0 / accel:
        raise ValueError(
            f"infeasible: center_fraction {center_fraction} exceeds 1/R = {1.0 / accel:.4f}"
        )
    if accel == 1:
        keep = np.ones((height, width), dtype=bool)
    else:
        if stream is None:
            raise ValueError("under-sampled masks need a random stream")
        keep = np.fft.ifftshift(_GENERATORS[pattern](height, width, accel, center_fraction, stream))
    return SamplingMask(keep=keep, pattern=pattern, accel=float(accel))


# ---------------------------------------------------------------------------
# Measurement operator and reconstruction primitives


def forward(
    x: np.ndarray,
    mask: SamplingMask,
    coils: CoilSensitivities | None = None,
    noise_std: float = 0.0,
    stream: RandomStream | None = None,
) -> KSpaceMeasurement:
    """Measure ``y_c = P F (S_c * x) + n`` on the kept locations (zeros elsewhere).

    Noise is circularly-symmetric complex Gaussian: independent real/imaginary
    parts of standard deviation ``noise_std / sqrt(2)``.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ValueError(f"expected a single (H, W) image, got shape {x.shape}")
    if x.shape != mask.shape:
        raise ValueError(f"image {x.shape} does not match mask {mask.shape}")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if noise_std > 0 and stream is None:
        raise ValueError("noisy measurements need a random stream")

    coil_images = x[None] if coils is None else coils.maps * x[None]
    if coils is not None and coils.maps.shape[1:] != x.shape:
        raise ValueError("sensitivity maps do not match image shape")
    data = fft2(coil_images)
    if noise_std > 0:
        s = noise_std / math.sqrt(2.0)
        noise = gaussian(stream, data.shape, s) + 1j * gaussian(stream, data.shape, s)
        data = data + noise
    data = data * mask.keep[None]
    return KSpaceMeasurement(data=data, mask=mask, noise_std=float(noise_std))


def zero_filled(y: KSpaceMeasurement, coils: CoilSensitivities | None = None) -> np.ndarray:
    """Inverse FFT of the measured k-space: the trivial reconstruction baseline.

    Multi-coil data is combined with conjugate sensitivities when maps are
    given, otherwise by root-sum-of-squares magnitude with the first coil's
    phase (calibration-free).
    """
    imgs = ifft2(y.data)
    if coils is not None:
        if coils.n_coils != y.n_coils:
            raise ValueError("coil count mismatch between maps and measurement")
        return np.sum(np.conj(coils.maps) * imgs, axis=0)
    if y.n_coils == 1:
        return imgs[0]
    mag = np.sqrt(np.sum(np.abs(imgs) ** 2, axis=0))
    return mag * np.exp(1j * np.angle(imgs[0]))


def dc_project_single(xt: np.ndarray, y: KSpaceMeasurement, lam: float) -> np.ndarray:
    """Closed-form consistency projection for single-coil measurements.

    Kept k-space coefficients become ``(y + lam * F xt) / (1 + lam)``; unmeasured
    coefficients pass through untouched.  ``lam = 0`` is hard data consistency
    (kept coefficients replaced by the measurements) and is idempotent.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if y.n_coils != 1:
        raise ValueError("single-coil projection needs a 1-coil measurement")
    kx = fft2(np.asarray(xt, dtype=np.complex128))
    merged = np.where(y.mask.keep, (y.data[0] + lam * kx) / (1.0 + lam), kx)
    return ifft2(merged)


def dc_project_multicoil(
    xt: np.ndarray,
    y: KSpaceMeasurement,
    coils: CoilSensitivities,
    lam: float,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve ``(E^H E + lam I) x = E^H y + lam xt`` by conjugate gradients.

    ``E`` applies sensitivities, the unitary FFT and the mask per coil.  The
    returned solution satisfies a relative residual <= ``tol``; exceeding
    ``max_iter`` raises :class:`ConvergenceError` with the final residual.
    """
    if lam <= 0:
        raise ValueError("multi-coil projection needs lam > 0 (well-posed system)")
    if coils.n_coils != y.n_coils:
        raise ValueError("coil count mismatch between maps and measurement")
    xt = np.asarray(xt, dtype=np.complex128)
    keep = y.mask.keep[None]

    def normal_op(v: np.ndarray) -> np.ndarray:
        coil_k = fft2(coils.maps * v[None]) * keep
        return np.sum(np.conj(coils.maps) * ifft2(coil_k), axis=0) + lam * v

    b = np.sum(np.conj(coils.maps) * ifft2(y.data * keep), axis=0) + lam * xt
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return np.zeros_like(xt)

    x = xt.copy()
    r = b - normal_op(x)
    p = r.copy()
    rs = np.vdot(r, r).real
    for _ in range(max_iter):
        if np.sqrt(rs) / b_norm <= tol:
            return x
        ap = normal_op(p)
        alpha = rs / np.vdot(p, ap).real
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = np.vdot(r, r).real
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) / b_norm <= tol:
        return x
    raise ConvergenceError(
        f"CG did not reach tol={tol} in {max_iter} iterations "
        f"(relative residual {np.sqrt(rs) / b_norm:.3e})"
    )


def dc_project_calibfree(xt_percoil: np.ndarray, y: KSpaceMeasurement, lam: float) -> np.ndarray:
    """Apply the single-coil projection independently to every coil channel."""
    xt_percoil = np.asarray(xt_percoil, dtype=np.complex128)
    if xt_percoil.ndim == 2:
        xt_percoil = xt_percoil[None]
    if xt_percoil.shape[0] != y.n_coils:
        raise ValueError(
            f"coil count mismatch: estimates {xt_percoil.shape[0]}, data {y.n_coils}"
        )
    out = np.empty_like(xt_percoil)
    for c in range(y.n_coils):
        yc = KSpaceMeasurement(data=y.data[c][None], mask=y.mask, noise_std=y.noise_std)
        out[c] = dc_project_single(xt_percoil[c], yc, lam)
    return out
