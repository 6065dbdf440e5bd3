"""Post-projection enhancement and pre-projection slice upsampling.

Three image modes: ``original`` (identity), ``clahe`` (tile-based adaptive
equalization followed by unsharp masking), and ``calc_focused`` (gamma,
then CLAHE, then unsharp) meant to make small dense calcium pop against
soft tissue.  Note the ``clahe`` mode deliberately includes the unsharp
stage; set ``clahe_includes_unsharp=False`` for bare equalization.

All kernels keep pixels in [0, 1], preserve shape, and are deterministic.
"""

from __future__ import annotations

import math
import struct
import subprocess
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .ingest import Volume
from .projector import DrrImage

MODE_ORIGINAL = "original"
MODE_CLAHE = "clahe"
MODE_CALC_FOCUSED = "calc_focused"
MODES = (MODE_ORIGINAL, MODE_CLAHE, MODE_CALC_FOCUSED)


@dataclass(frozen=True)
class EnhanceConfig:
    mode: str = MODE_ORIGINAL
    clahe_tiles: tuple[int, int] = (8, 8)  # (rows, cols)
    clahe_clip: float = 2.0
    unsharp_size: int = 5
    unsharp_sigma: float = 1.0
    unsharp_gain: float = 1.5
    gamma: float = 1.5
    clahe_includes_unsharp: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.clahe_clip <= 1.0:
            raise ValueError("clahe_clip must exceed 1.0")
        if self.unsharp_sigma <= 0 or self.gamma <= 0:
            raise ValueError("sigma and gamma must be positive")
        if self.unsharp_gain < 0:
            raise ValueError("unsharp gain must be non-negative")
        if min(self.clahe_tiles) < 1:
            raise ValueError("tile grid must be at least 1x1")


@dataclass(frozen=True)
class UpsampleConfig:
    factor: int = 4
    method: str = "bicubic_baseline"  # or "external_model"
    command: tuple[str, ...] = ()  # external per-slice command; {factor} substituted
    timeout: float = 60.0

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if self.method not in ("bicubic_baseline", "external_model"):
            raise ValueError("method must be bicubic_baseline or external_model")
        if self.method == "external_model" and not self.command:
            raise ValueError("external_model requires a command")


class UpsampleError(RuntimeError):
    """External upsampling command failed, timed out, or returned bad data."""


def gamma_array(img: np.ndarray, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.power(img, gamma)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized separable Gaussian sampled at integer offsets."""
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def unsharp_array(img: np.ndarray, size: int = 5, sigma: float = 1.0, gain: float = 1.5) -> np.ndarray:
    """out = clamp(img + gain * (img - gaussian_blur(img)), 0, 1).

    Borders are handled by edge replication.
    """
    blur = ndimage.correlate(img.astype(np.float64), gaussian_kernel(size, sigma), mode="nearest")
    return np.clip(img + gain * (img - blur), 0.0, 1.0)


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.array([(i * n) // tiles for i in range(tiles + 1)], dtype=np.int64)


def _tile_mapping(hist: np.ndarray, n_pixels: int, clip: float) -> np.ndarray:
    """Clipped-CDF mapping of one tile, as float levels in [0, 255].

    The clip limit follows 8-bit tooling convention: floor(clip * N / 256),
    never below 1.  Excess is redistributed uniformly in a single pass; the
    integer remainder goes to the lowest bins in index order.
    """
    limit = max(1, math.floor(clip * n_pixels / 256.0))
    clipped = np.minimum(hist, limit)
    excess = int(n_pixels - clipped.sum())
    bonus, rem = divmod(excess, 256)
    clipped = clipped + bonus
    clipped[:rem] += 1
    cdf = np.cumsum(clipped)
    return cdf * (255.0 / n_pixels)


def clahe_array(img: np.ndarray, tiles: tuple[int, int] = (8, 8), clip: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on a [0, 1] image.

    Pixels are quantized to 256 levels; each tile gets a clipped-CDF
    mapping; per-pixel output bilinearly blends the four surrounding tile
    mappings (edge tiles clamp).  Result is back in [0, 1].
    """
    h, w = img.shape
    ty, tx = tiles
    if h < ty or w < tx:
        raise ValueError(f"image {h}x{w} smaller than tile grid {ty}x{tx}")

    q = np.minimum((img * 256.0).astype(np.int64), 255)
    row_edges = _tile_edges(h, ty)
    col_edges = _tile_edges(w, tx)

    mappings = np.empty((ty, tx, 256), dtype=np.float64)
    for r in range(ty):
        for c in range(tx):
            block = q[row_edges[r] : row_edges[r + 1], col_edges[c] : col_edges[c + 1]]
            hist = np.bincount(block.ravel(), minlength=256)
            mappings[r, c] = _tile_mapping(hist, block.size, clip)

    centers_r = (row_edges[:-1] + row_edges[1:] - 1) / 2.0
    centers_c = (col_edges[:-1] + col_edges[1:] - 1) / 2.0

    def axis_blend(coords: np.ndarray, centers: np.ndarray):
        i0 = np.searchsorted(centers, coords, side="right") - 1
        i0 = np.clip(i0, 0, len(centers) - 1)
        i1 = np.minimum(i0 + 1, len(centers) - 1)
        span = centers[i1] - centers[i0]
        frac = np.where(span > 0, (coords - centers[i0]) / np.where(span > 0, span, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        return i0, i1, frac

    r0, r1, fy = axis_blend(np.arange(h, dtype=np.float64), centers_r)
    c0, c1, fx = axis_blend(np.arange(w, dtype=np.float64), centers_c)

    rows0 = r0[:, None]
    rows1 = r1[:, None]
    cols0 = c0[None, :]
    cols1 = c1[None, :]
    m00 = mappings[rows0, cols0, q]
    m01 = mappings[rows0, cols1, q]
    m10 = mappings[rows1, cols0, q]
    m11 = mappings[rows1, cols1, q]
    fy2 = fy[:, None]
    fx2 = fx[None, :]
    blended = (1.0 - fy2) * ((1.0 - fx2) * m00 + fx2 * m01) + fy2 * ((1.0 - fx2) * m10 + fx2 * m11)
    return blended / 255.0


def _with_chain(img: DrrImage, pixels: np.ndarray, stage: str) -> DrrImage:
    prov = dict(img.provenance)
    chain = prov.get("enhancement_chain", "none")
    prov["enhancement_chain"] = stage if chain in ("", "none") else f"{chain}>{stage}"
    return DrrImage(pixels=pixels.astype(np.float32), provenance=prov)


def apply_gamma(img: DrrImage, gamma: float) -> DrrImage:
    return _with_chain(img, gamma_array(img.pixels.astype(np.float64), gamma), f"gamma({gamma:g})")


def apply_clahe(img: DrrImage, cfg: EnhanceConfig) -> DrrImage:
    ty, tx = cfg.clahe_tiles
    out = clahe_array(img.pixels.astype(np.float64), cfg.clahe_tiles, cfg.clahe_clip)
    return _with_chain(img, out, f"clahe({ty}x{tx},{cfg.clahe_clip:g})")


def apply_unsharp(img: DrrImage, cfg: EnhanceConfig) -> DrrImage:
    out = unsharp_array(
        img.pixels.astype(np.float64), cfg.unsharp_size, cfg.unsharp_sigma, cfg.unsharp_gain
    )
    stage = f"unsharp({cfg.unsharp_size}x{cfg.unsharp_size},{cfg.unsharp_sigma:g},{cfg.unsharp_gain:g})"
    return _with_chain(img, out, stage)


def apply_mode(img: DrrImage, cfg: EnhanceConfig) -> DrrImage:
    """Run the configured enhancement chain; provenance records each stage."""
    if cfg.mode == MODE_ORIGINAL:
        return DrrImage(pixels=img.pixels.copy(), provenance=dict(img.provenance))
    if cfg.mode == MODE_CLAHE:
        out = apply_clahe(img, cfg)
        return apply_unsharp(out, cfg) if cfg.clahe_includes_unsharp else out
    out = apply_gamma(img, cfg.gamma)
    out = apply_clahe(out, cfg)
    return apply_unsharp(out, cfg)


def _bicubic_slice(sl: np.ndarray, factor: int) -> np.ndarray:
    ny, nz = sl.shape
    ys = (np.arange(ny * factor, dtype=np.float64) + 0.5) / factor - 0.5
    zs = (np.arange(nz * factor, dtype=np.float64) + 0.5) / factor - 0.5
    grid = np.meshgrid(ys, zs, indexing="ij")
    return ndimage.map_coordinates(sl.astype(np.float64), grid, order=3, mode="nearest")


def _external_slice(sl: np.ndarray, cfg: UpsampleConfig) -> np.ndarray:
    """Stream one slice through the configured command.

    Protocol: stdin gets two little-endian uint32 dims then float32 row-major
    payload; stdout must return the same framing at factor-scaled dims.
    """
    ny, nz = sl.shape
    payload = struct.pack("<II", ny, nz) + sl.astype("<f4").tobytes()
    argv = [a.replace("{factor}", str(cfg.factor)) for a in cfg.command]
    try:
        proc = subprocess.run(
            argv, input=payload, capture_output=True, timeout=cfg.timeout, check=False
        )
    except subprocess.TimeoutExpired as exc:
        raise UpsampleError(f"upsample command timed out after {cfg.timeout}s") from exc
    except OSError as exc:
        raise UpsampleError(f"upsample command failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise UpsampleError(f"upsample command exited {proc.returncode}: {proc.stderr[:200]!r}")
    data = proc.stdout
    if len(data) < 8:
        raise UpsampleError("upsample command returned truncated output")
    oy, oz = struct.unpack("<II", data[:8])
    if (oy, oz) != (ny * cfg.factor, nz * cfg.factor):
        raise UpsampleError(f"upsample command returned dims {(oy, oz)}, expected factor {cfg.factor}")
    expected = 8 + oy * oz * 4
    if len(data) != expected:
        raise UpsampleError(f"upsample payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(oy, oz).astype(np.float64)


def upsample_sagittal(v: Volume, cfg: UpsampleConfig) -> Volume:
    """Upsample every sagittal (x = const) slice by cfg.factor per axis.

    Slices are reassembled into a volume with in-slice spacing divided by
    the factor; callers re-run isotropic resampling before projecting so
    the downstream pipeline is unchanged.
    """
    if cfg.factor == 1:
        return Volume(
            voxels=v.voxels.copy(),
            spacing=v.spacing,
            patient_id=v.patient_id,
            source_dtype="f32",
        )
    nx, ny, nz = v.shape
    if max(ny, nz) * cfg.factor > 65536:
        raise UpsampleError("upsampled slice would exceed 65536 pixels per axis")
    out = np.empty((nx, ny * cfg.factor, nz * cfg.factor), dtype=np.float32)
    for i in range(nx):
        sl = v.voxels[i]
        if cfg.method == "bicubic_baseline":
            up = _bicubic_slice(sl, cfg.factor)
        else:
            up = _external_slice(sl, cfg)
        out[i] = up.astype(np.float32)
    dx, dy, dz = v.spacing
    return Volume(
        voxels=out,
        spacing=(dx, dy / cfg.factor, dz / cfg.factor),
        patient_id=v.patient_id,
        source_dtype="f32",
    )
