"""Binary file formats and atomic output writing.

CIMG (complex images / k-space)
    magic "CIMG1", u32 height, u32 width, u32 coils, u8 dtype (1 = f64), then
    little-endian interleaved (re, im) float64 per pixel, coil-major then
    row-major.  Save/load roundtrips are lossless (bit-exact).

MASK1 (sampling masks)
    magic "MASK1", u32 height, u32 width, u8 pattern code, f64 acceleration R,
    then row-major u8 (0/1) keep flags.

EBMW1 (network checkpoints)
    magic "EBMW1", architecture descriptor (u8 conditional, u32 stage count,
    per stage u32 width and u32 block count), u32 tensor count, then each
    tensor as u16 name length, name bytes, u8 rank, u32 dims, little-endian
    float64 values.  Spectral-norm vectors are stored under "sn_u." names and
    optional extras (optimizer state, counters) under their own names.

All headers are little-endian.  Writers go through :func:`atomic_write` /
:class:`OutputSet` (write to a temp file in the target directory, then
rename), so a failed command never leaves partial outputs behind.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .energy import Architecture, EnergyParams
from .kspace import PATTERNS, SamplingMask

__all__ = [
    "FormatError",
    "OutputSet",
    "atomic_write",
    "load_checkpoint",
    "load_image",
    "load_mask",
    "save_checkpoint",
    "save_image",
    "save_mask",
    "write_error_png",
    "write_magnitude_png",
]

CIMG_MAGIC = b"CIMG1"
MASK_MAGIC = b"MASK1"
CKPT_MAGIC = b"EBMW1"

_PATTERN_CODE = {name: i + 1 for i, name in enumerate(PATTERNS)}
_CODE_PATTERN = {v: k for k, v in _PATTERN_CODE.items()}

ERROR_MAP_SCALE = 5.0


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


# ---------------------------------------------------------------------------
# Atomic writes


@contextmanager
def atomic_write(path: Path):
    """Yield a temp file handle; rename onto ``path`` only if the block succeeds."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class OutputSet:
    """Two-phase writer for a group of files: all plan, then all commit.

    Files are staged as temp siblings and renamed into place together, so an
    error while producing any output leaves none of them behind.
    """

    def __init__(self):
        self._staged: list[tuple[str, Path]] = []

    def stage(self, path: Path, data: bytes) -> None:
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        self._staged.append((tmp, path))

    def commit(self) -> None:
        for tmp, path in self._staged:
            os.replace(tmp, path)
        self._staged.clear()

    def abort(self) -> None:
        for tmp, _ in self._staged:
            try:
                os.unlink(tmp)
            except OSError:
                pass
        self._staged.clear()

    def __enter__(self) -> "OutputSet":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.commit()
        else:
            self.abort()


# ---------------------------------------------------------------------------
# CIMG


def image_to_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.complex128)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValueError(f"expected (H, W) or (coils, H, W), got shape {img.shape}")
    coils, h, w = img.shape
    header = CIMG_MAGIC + struct.pack("<IIIB", h, w, coils, 1)
    inter = np.empty((coils, h, w, 2), dtype="<f8")
    inter[..., 0] = img.real
    inter[..., 1] = img.imag
    return header + inter.tobytes()


def bytes_to_image(blob: bytes) -> np.ndarray:
    if blob[:5] != CIMG_MAGIC:
        raise FormatError("not a CIMG file (bad magic)")
    h, w, coils, dtype = struct.unpack_from("<IIIB", blob, 5)
    if dtype != 1:
        raise FormatError(f"unsupported CIMG dtype code {dtype}")
    need = 5 + 13 + coils * h * w * 16
    if len(blob) != need:
        raise FormatError(f"CIMG payload length {len(blob)} != expected {need}")
    inter = np.frombuffer(blob, dtype="<f8", offset=18).reshape(coils, h, w, 2)
    img = inter[..., 0] + 1j * inter[..., 1]
    return img[0] if coils == 1 else img


def save_image(path: Path, img: np.ndarray) -> None:
    with atomic_write(path) as fh:
        fh.write(image_to_bytes(img))


def load_image(path: Path) -> np.ndarray:
    return bytes_to_image(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# MASK1


def mask_to_bytes(mask: SamplingMask) -> bytes:
    h, w = mask.shape
    header = MASK_MAGIC + struct.pack(
        "<IIBd", h, w, _PATTERN_CODE[mask.pattern], float(mask.accel)
    )
    return header + mask.keep.astype(np.uint8).tobytes()


def bytes_to_mask(blob: bytes) -> SamplingMask:
    if blob[:5] != MASK_MAGIC:
        raise FormatError("not a MASK1 file (bad magic)")
    h, w, code, accel = struct.unpack_from("<IIBd", blob, 5)
    if code not in _CODE_PATTERN:
        raise FormatError(f"unknown pattern code {code}")
    need = 5 + 17 + h * w
    if len(blob) != need:
        raise FormatError(f"MASK1 payload length {len(blob)} != expected {need}")
    keep = np.frombuffer(blob, dtype=np.uint8, offset=22).reshape(h, w).astype(bool)
    return SamplingMask(keep=keep, pattern=_CODE_PATTERN[code], accel=accel)


def save_mask(path: Path, mask: SamplingMask) -> None:
    with atomic_write(path) as fh:
        fh.write(mask_to_bytes(mask))


def load_mask(path: Path) -> SamplingMask:
    return bytes_to_mask(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# EBMW1 checkpoints


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    nm = name.encode("utf-8")
    arr = np.asarray(arr, dtype=np.float64)
    out = struct.pack("<H", len(nm)) + nm + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return out + arr.astype("<f8").tobytes()


def checkpoint_to_bytes(params: EnergyParams, extras: dict[str, np.ndarray] | None = None) -> bytes:
    arch = params.arch
    head = CKPT_MAGIC + struct.pack("<BI", int(arch.conditional), len(arch.widths))
    for wdt, blk in zip(arch.widths, arch.blocks):
        head += struct.pack("<II", wdt, blk)
    items: list[tuple[str, np.ndarray]] = list(params.tensors.items())
    items += [(f"sn_u.{k}", v) for k, v in params.sn_u.items()]
    if extras:
        items += [(f"extra.{k}", v) for k, v in extras.items()]
    body = struct.pack("<I", len(items)) + b"".join(_pack_tensor(n, a) for n, a in items)
    return head + body


def bytes_to_checkpoint(blob: bytes) -> tuple[EnergyParams, dict[str, np.ndarray]]:
    if blob[:5] != CKPT_MAGIC:
        raise FormatError("not an EBMW1 checkpoint (bad magic)")
    off = 5
    conditional, n_stages = struct.unpack_from("<BI", blob, off)
    off += 5
    widths, blocks = [], []
    for _ in range(n_stages):
        wdt, blk = struct.unpack_from("<II", blob, off)
        widths.append(wdt)
        blocks.append(blk)
        off += 8
    arch = Architecture(tuple(widths), tuple(blocks), bool(conditional))
    (n_items,) = struct.unpack_from("<I", blob, off)
    off += 4

    tensors: dict[str, np.ndarray] = {}
    sn_u: dict[str, np.ndarray] = {}
    extras: dict[str, np.ndarray] = {}
    for _ in range(n_items):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        count = int(math.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", offset=off, count=count).reshape(shape).copy()
        off += 8 * count
        if name.startswith("sn_u."):
            sn_u[name[5:]] = arr
        elif name.startswith("extra."):
            extras[name[6:]] = arr
        else:
            tensors[name] = arr
    if off != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    return EnergyParams(arch, tensors, sn_u), extras


def save_checkpoint(path: Path, params: EnergyParams, extras: dict[str, np.ndarray] | None = None) -> None:
    with atomic_write(path) as fh:
        fh.write(checkpoint_to_bytes(params, extras))


def load_checkpoint(path: Path) -> tuple[EnergyParams, dict[str, np.ndarray]]:
    return bytes_to_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PNG export (magnitude and 5x error maps)


def _to_png_bytes(gray: np.ndarray, text: dict[str, str]) -> bytes:
    from io import BytesIO

    from PIL import Image
    from PIL.PngImagePlugin import PngInfo

    info = PngInfo()
    for k, v in text.items():
        info.add_text(k, v)
    img = Image.fromarray(gray, mode="L")
    buf = BytesIO()
    img.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def magnitude_png_bytes(img: np.ndarray, peak: float | None = None) -> bytes:
    """8-bit magnitude rendering; ``peak`` (default: image max) maps to white."""
    mag = np.abs(np.asarray(img))
    if peak is None:
        peak = float(mag.max()) or 1.0
    gray = np.clip(mag / peak * 255.0, 0, 255).astype(np.uint8)
    return _to_png_bytes(gray, {"peak": f"{peak:.17g}"})


def error_png_bytes(img: np.ndarray, reference: np.ndarray) -> bytes:
    """Error-map rendering: |img - ref| magnified 5x, reference peak as white."""
    err = np.abs(np.abs(np.asarray(img)) - np.abs(np.asarray(reference)))
    peak = float(np.abs(reference).max()) or 1.0
    gray = np.clip(err * ERROR_MAP_SCALE / peak * 255.0, 0, 255).astype(np.uint8)
    return _to_png_bytes(gray, {"peak": f"{peak:.17g}", "error_scale": f"{ERROR_MAP_SCALE:g}"})


def write_magnitude_png(path: Path, img: np.ndarray, peak: float | None = None) -> None:
    with atomic_write(path) as fh:
        fh.write(magnitude_png_bytes(img, peak))


def write_error_png(path: Path, img: np.ndarray, reference: np.ndarray) -> None:
    with atomic_write(path) as fh:
        fh.write(error_png_bytes(img, reference))
