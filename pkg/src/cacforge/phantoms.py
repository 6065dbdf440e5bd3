"""Synthetic chest-like phantoms for demos and end-to-end testing.

Each phantom is a soft-tissue ellipsoid in air with a few dense spherical
inserts standing in for calcified plaque; the paired mask labels each
insert as its own artery.  Deterministic in (patient index, seed), so
cohorts regenerate byte-identically.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import rng
from .ingest import CalciumMask, Volume, write_mask, write_volume

_PHANTOM_STREAM = 0x50AA


def make_phantom(
    patient_id: str,
    index: int = 0,
    seed: int = 0,
    shape: tuple[int, int, int] = (48, 40, 36),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.2),
    n_inserts: int | None = None,
) -> tuple[Volume, CalciumMask]:
    """A soft-tissue body; odd indices carry heavy calcium, even ones none.

    The even/odd rule keeps any cohort slice class-balanced enough for
    stratified splitting.
    """
    nx, ny, nz = shape
    x, y, z = np.meshgrid(
        np.arange(nx, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nz, dtype=np.float64),
        indexing="ij",
    )
    cx, cy, cz = (nx - 1) / 2, (ny - 1) / 2, (nz - 1) / 2
    body = ((x - cx) / (nx * 0.42)) ** 2 + ((y - cy) / (ny * 0.38)) ** 2 + (
        (z - cz) / (nz * 0.48)
    ) ** 2 <= 1.0

    hu = np.full(shape, -1000.0, dtype=np.float32)
    hu[body] = 40.0

    if n_inserts is None:
        n_inserts = 0 if index % 2 == 0 else 3
    labels = np.zeros(shape, dtype=np.uint16)
    names: dict[int, str] = {}
    draw = 0
    for k in range(n_inserts):
        label = k + 1
        # place inserts well inside the body; sizes/densities keep the
        # per-insert score comfortably above the binary cutoff
        px = cx + (rng.uniform(seed, _PHANTOM_STREAM + index, draw) - 0.5) * nx * 0.4
        py = cy + (rng.uniform(seed, _PHANTOM_STREAM + index, draw + 1) - 0.5) * ny * 0.35
        pz = cz + (rng.uniform(seed, _PHANTOM_STREAM + index, draw + 2) - 0.5) * nz * 0.4
        radius = 2.0 + rng.uniform(seed, _PHANTOM_STREAM + index, draw + 3) * 1.5
        peak = 350.0 + rng.uniform(seed, _PHANTOM_STREAM + index, draw + 4) * 200.0
        draw += 5
        sphere = (x - px) ** 2 + (y - py) ** 2 + (z - pz) ** 2 <= radius**2
        sphere &= body
        hu[sphere] = peak
        labels[sphere] = label
        names[label] = f"A{label}"

    present = set(int(v) for v in np.unique(labels)) - {0}
    names = {k: v for k, v in names.items() if k in present}
    vol = Volume(voxels=hu, spacing=spacing, patient_id=patient_id, source_dtype="f32")
    mask = CalciumMask(labels=labels, spacing=spacing, patient_id=patient_id, artery_names=names)
    return vol, mask


def write_cohort(root: Path, n_patients: int = 5, seed: int = 0, **phantom_kwargs) -> list[str]:
    """Write n phantom patients as volume/mask bundle pairs under root."""
    root = Path(root)
    ids = []
    for i in range(n_patients):
        pid = f"P{i:03d}"
        vol, mask = make_phantom(pid, index=i, seed=seed, **phantom_kwargs)
        write_volume(vol, root / pid / "volume")
        write_mask(mask, root / pid / "mask")
        ids.append(pid)
    return ids
