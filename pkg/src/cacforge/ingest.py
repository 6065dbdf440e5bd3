"""CT volume ingestion: loading, quality gating, resampling, calcium scoring.

Volumes are kept in Hounsfield units as float32 arrays indexed [x, y, z]
(axial slices are z = const).  Calcium masks carry integer artery labels on
the same grid.  Scoring follows the clinical convention: per artery, per
axial slice, 8-connected lesions of voxels >= 130 HU are weighted by their
peak density and in-plane area; totals binarize at > 100.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bundles import BundleError, read_bundle, write_bundle

HU_THRESHOLD = 130.0
CAC_BINARY_CUTOFF = 100.0
MIN_LESION_AREA_MM2 = 1.0
DEFAULT_MIN_SLICES = 30

NEGATIVE = "negative"
POSITIVE = "positive"


@dataclass
class Volume:
    """A 3-D HU grid with anisotropic spacing (mm) and patient identity."""

    voxels: np.ndarray  # float32, [x, y, z]
    spacing: tuple[float, float, float]
    patient_id: str = ""
    source_dtype: str = "f32"  # dtype of the on-disk payload

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def is_isotropic(self, rel_tol: float = 1e-9) -> bool:
        dx, dy, dz = self.spacing
        return math.isclose(dx, dy, rel_tol=rel_tol) and math.isclose(dx, dz, rel_tol=rel_tol)


@dataclass
class CalciumMask:
    """Integer artery labels co-registered to a Volume; 0 is background."""

    labels: np.ndarray  # uint16, [x, y, z]
    spacing: tuple[float, float, float]
    patient_id: str = ""
    artery_names: dict[int, str] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class CacLabel:
    agatston: float
    binary: str  # NEGATIVE or POSITIVE

    def __post_init__(self):
        expected = binary_from_score(self.agatston)
        if self.binary != expected:
            raise ValueError(f"binary label {self.binary!r} inconsistent with score {self.agatston}")


def binary_from_score(agatston: float) -> str:
    """Clinical cutoff: > 100 is positive, <= 100 (boundary included) negative."""
    return POSITIVE if agatston > CAC_BINARY_CUTOFF else NEGATIVE


def load_volume(path: Path) -> Volume:
    meta, arr = read_bundle(path)
    if len(meta["shape"]) != 3:
        raise BundleError(f"{path}: volume bundles must be 3-D")
    if meta["dtype"] not in ("i16", "f32"):
        raise BundleError(f"{path}: volume dtype must be i16 or f32")
    return Volume(
        voxels=np.ascontiguousarray(arr, dtype=np.float32),
        spacing=meta["spacing"],
        patient_id=meta.get("patient_id", ""),
        source_dtype=meta["dtype"],
    )


def write_volume(v: Volume, path: Path) -> None:
    arr = v.voxels
    if v.source_dtype == "i16":
        arr = np.rint(arr)
    write_bundle(
        path,
        {"spacing": v.spacing, "dtype": v.source_dtype, "patient_id": v.patient_id},
        arr,
    )


def load_mask(path: Path) -> CalciumMask:
    meta, arr = read_bundle(path)
    if len(meta["shape"]) != 3:
        raise BundleError(f"{path}: mask bundles must be 3-D")
    if meta["dtype"] != "u16":
        raise BundleError(f"{path}: mask dtype must be u16")
    names = meta.get("artery_names", {})
    present = set(np.unique(arr)) - {0}
    missing = sorted(int(l) for l in present if int(l) not in names)
    if missing:
        raise BundleError(f"{path}: labels {missing} not listed in artery_names")
    return CalciumMask(
        labels=np.ascontiguousarray(arr, dtype=np.uint16),
        spacing=meta["spacing"],
        patient_id=meta.get("patient_id", ""),
        artery_names=names,
    )


def write_mask(m: CalciumMask, path: Path) -> None:
    write_bundle(
        path,
        {
            "spacing": m.spacing,
            "dtype": "u16",
            "patient_id": m.patient_id,
            "artery_names": m.artery_names,
        },
        m.labels,
    )


def gate_slice_coverage(v: Volume, min_slices: int = DEFAULT_MIN_SLICES) -> bool:
    """True when the scan keeps enough axial slices; exclusion is strict <.

    Applied to the native (pre-resampling) axial count.
    """
    if min_slices < 1:
        raise ValueError("min_slices must be >= 1")
    return v.shape[2] >= min_slices


def _resample_grid(shape, spacing, target: float):
    """Cell-centered output grid anchored at the input's physical origin.

    Output shape is ceil(extent / target), so the field of view is preserved
    to within one voxel.  Returns fractional input indices per axis; edge
    centers that fall outside the input center hull are clamped by the
    interpolators (mode='nearest').
    """
    if target <= 0:
        raise ValueError("target spacing must be positive")
    out_shape = tuple(max(1, math.ceil(n * s / target)) for n, s in zip(shape, spacing))
    coords = [
        ((np.arange(m, dtype=np.float64) + 0.5) * target) / s - 0.5
        for m, s in zip(out_shape, spacing)
    ]
    return out_shape, coords


def resample_isotropic(v: Volume, target: float | None = None) -> Volume:
    """Trilinear resample onto an isotropic grid (default: in-plane spacing)."""
    if target is None:
        target = v.spacing[0]
    out_shape, coords = _resample_grid(v.shape, v.spacing, target)
    grid = np.meshgrid(*coords, indexing="ij")
    out = ndimage.map_coordinates(
        v.voxels.astype(np.float64), grid, order=1, mode="nearest"
    )
    return Volume(
        voxels=out.astype(np.float32),
        spacing=(target, target, target),
        patient_id=v.patient_id,
        source_dtype="f32",
    )


def resample_mask(m: CalciumMask, target: float | None = None) -> CalciumMask:
    """Nearest-neighbor resample; labels are categorical, never blended."""
    if target is None:
        target = m.spacing[0]
    out_shape, coords = _resample_grid(m.shape, m.spacing, target)
    grid = np.meshgrid(*coords, indexing="ij")
    out = ndimage.map_coordinates(m.labels, grid, order=0, mode="nearest")
    return CalciumMask(
        labels=out.astype(np.uint16),
        spacing=(target, target, target),
        patient_id=m.patient_id,
        artery_names=dict(m.artery_names),
    )


_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def _density_weight(peak_hu: float) -> int:
    if peak_hu < 130:
        return 0
    if peak_hu < 200:
        return 1
    if peak_hu < 300:
        return 2
    if peak_hu < 400:
        return 3
    return 4


def agatston_score(v: Volume, m: CalciumMask) -> CacLabel:
    """Total Agatston score over all artery labels, slices, and lesions.

    A lesion is a 2-D 8-connected component of masked voxels >= 130 HU within
    one axial slice; its score is in-plane area (mm^2) times the density
    weight of its peak HU.  Lesions under 1 mm^2 are discarded.  The 130 HU
    threshold is re-applied here even if the mask was already thresholded.
    """
    if v.shape != m.shape:
        raise ValueError(f"volume shape {v.shape} != mask shape {m.shape}")
    dx, dy, _ = v.spacing
    pixel_area = dx * dy

    total = 0.0
    labels_present = sorted(int(l) for l in np.unique(m.labels) if l != 0)
    for artery in labels_present:
        in_artery = m.labels == artery
        for k in range(v.shape[2]):
            candidate = in_artery[:, :, k] & (v.voxels[:, :, k] >= HU_THRESHOLD)
            if not candidate.any():
                continue
            comps, n_comps = ndimage.label(candidate, structure=_EIGHT_CONNECTED)
            hu_slice = v.voxels[:, :, k]
            for c in range(1, n_comps + 1):
                lesion = comps == c
                area = int(lesion.sum()) * pixel_area
                if area < MIN_LESION_AREA_MM2:
                    continue
                total += area * _density_weight(float(hu_slice[lesion].max()))

    return CacLabel(agatston=total, binary=binary_from_score(total))
