"""Raw scan/raster bundle format.

A bundle is a directory holding a UTF-8 ``header`` file of ``key: value``
lines plus a ``voxels.raw`` payload (little-endian, x-fastest).  Volumes are
3-D, masks are 3-D with a label-name map, DRR rasters reuse the same layout
in 2-D.  Writing is canonical (fixed key order, fixed number formatting) so
load/write round-trips are byte-identical.

Clinical formats (DICOM, NIfTI, ...) are out of scope here; an external
converter command can emit this layout instead (see README).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

HEADER_NAME = "header"
PAYLOAD_NAME = "voxels.raw"

_DTYPES = {
    "i16": np.dtype("<i2"),
    "u16": np.dtype("<u2"),
    "f32": np.dtype("<f4"),
}

# Canonical header key order; unknown keys are rejected on read.
_KEY_ORDER = ("shape", "spacing", "dtype", "axis_order", "patient_id", "artery_names")


class BundleError(ValueError):
    """Missing/corrupt header, payload size mismatch, or bad metadata."""


def _fmt_float(x: float) -> str:
    # repr round-trips doubles exactly and is stable, so byte-identity holds
    return repr(float(x))


def read_header(path: Path) -> dict:
    header_path = Path(path) / HEADER_NAME
    if not header_path.is_file():
        raise BundleError(f"{path}: missing bundle header")
    meta: dict = {}
    for lineno, line in enumerate(header_path.read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if ":" not in line:
            raise BundleError(f"{header_path}:{lineno}: expected 'key: value'")
        key, value = line.split(":", 1)
        key = key.strip()
        if key not in _KEY_ORDER:
            raise BundleError(f"{header_path}:{lineno}: unknown key {key!r}")
        meta[key] = value.strip()

    for required in ("shape", "spacing", "dtype", "axis_order"):
        if required not in meta:
            raise BundleError(f"{header_path}: missing key {required!r}")
    try:
        meta["shape"] = tuple(int(s) for s in meta["shape"].split())
        meta["spacing"] = tuple(float(s) for s in meta["spacing"].split())
    except ValueError as exc:
        raise BundleError(f"{header_path}: bad shape/spacing: {exc}") from exc
    if len(meta["shape"]) != len(meta["spacing"]):
        raise BundleError(f"{header_path}: shape/spacing rank mismatch")
    if any(n < 1 for n in meta["shape"]):
        raise BundleError(f"{header_path}: shape components must be >= 1")
    if any(s <= 0 for s in meta["spacing"]):
        raise BundleError(f"{header_path}: spacing must be positive")
    if meta["dtype"] not in _DTYPES:
        raise BundleError(f"{header_path}: dtype must be one of {sorted(_DTYPES)}")
    if meta["axis_order"] != "x-fastest":
        raise BundleError(f"{header_path}: unsupported axis order {meta['axis_order']!r}")
    if "artery_names" in meta:
        meta["artery_names"] = _parse_artery_names(meta["artery_names"], header_path)
    return meta


def _parse_artery_names(text: str, where: Path) -> dict[int, str]:
    names: dict[int, str] = {}
    for item in text.split():
        label, _, name = item.partition(":")
        if not name:
            raise BundleError(f"{where}: artery_names entries must be 'label:name'")
        names[int(label)] = name
    return names


def read_bundle(path: Path) -> tuple[dict, np.ndarray]:
    """Load a bundle; the array is indexed [x, y(, z)] matching the header shape."""
    path = Path(path)
    meta = read_header(path)
    payload = path / PAYLOAD_NAME
    if not payload.is_file():
        raise BundleError(f"{path}: missing {PAYLOAD_NAME}")
    dtype = _DTYPES[meta["dtype"]]
    shape = meta["shape"]
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(payload)
    if actual != expected:
        raise BundleError(
            f"{payload}: payload is {actual} bytes, header shape {shape} needs {expected}"
        )
    flat = np.fromfile(payload, dtype=dtype)
    # file is x-fastest: reshape reversed, then transpose to [x, y(, z)]
    arr = flat.reshape(shape[::-1]).transpose(tuple(reversed(range(len(shape)))))
    return meta, arr


def write_bundle(path: Path, meta: dict, arr: np.ndarray) -> None:
    """Write a bundle canonically; ``arr`` must be indexed [x, y(, z)]."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dtype = _DTYPES[meta["dtype"]]
    shape = tuple(int(n) for n in arr.shape)

    lines = [
        "shape: " + " ".join(str(n) for n in shape),
        "spacing: " + " ".join(_fmt_float(s) for s in meta["spacing"]),
        f"dtype: {meta['dtype']}",
        "axis_order: x-fastest",
    ]
    if meta.get("patient_id"):
        lines.append(f"patient_id: {meta['patient_id']}")
    if meta.get("artery_names"):
        entries = " ".join(f"{k}:{v}" for k, v in sorted(meta["artery_names"].items()))
        lines.append(f"artery_names: {entries}")
    (path / HEADER_NAME).write_text("\n".join(lines) + "\n", "utf-8")

    out = arr.transpose(tuple(reversed(range(arr.ndim)))).astype(dtype, copy=False)
    (path / PAYLOAD_NAME).write_bytes(out.tobytes())


def write_keyvalue(path: Path, entries: dict) -> None:
    """Provenance/sidecar text: one 'key: value' per line, insertion order."""
    lines = [f"{k}: {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def read_keyvalue(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        entries[key.strip()] = value.strip()
    return entries
