"""Dataset assembly: manifests, stratified splits, curriculum, augmentation.

Splits are patient-level and stratified by the binary calcium label: within
each class, patients are shuffled by a deterministic counter-based RNG and
dealt round-robin into k folds, so per-fold class counts differ from perfect
stratification by at most one.  Curriculum ordering presents extreme scores
first and borderline ones last.  Augmentation parameters are drawn from the
same counter-based RNG keyed by (seed, sample index), making any parallel
schedule reproduce identical transforms - including reimplementations in
other languages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .ingest import NEGATIVE, POSITIVE, binary_from_score
from .projector import DrrImage

# RNG stream namespaces: class shuffles use streams 0/1, augmentation draws
# live above 2^32 so the two can never collide for one seed.
_AUGMENT_STREAM_BASE = 2**32

ROTATION_RANGE = (-5.0, 5.0)  # degrees
TRANSLATION_RANGE = (-0.05, 0.05)  # fraction of image size, per axis
SCALE_RANGE = (0.9, 1.1)
SHEAR_RANGE = (-10.0, 10.0)  # degrees, both axes share one draw

MANIFEST_COLUMNS = (
    "patient_id",
    "agatston",
    "binary",
    "mode",
    "curriculum_rank",
    "curriculum_phase",
    "drr_pa",
    "drr_la",
)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    agatston: float
    binary: str
    mode: str = "original"
    drr_paths: dict = field(default_factory=dict)  # view -> relative path

    def __post_init__(self):
        if self.binary != binary_from_score(self.agatston):
            raise ValueError(
                f"{self.patient_id}: binary {self.binary!r} inconsistent with score {self.agatston}"
            )


@dataclass
class Manifest:
    records: list[PatientRecord]

    def class_counts(self) -> tuple[int, int]:
        neg = sum(1 for r in self.records if r.binary == NEGATIVE)
        return neg, len(self.records) - neg

    def by_id(self) -> dict[str, PatientRecord]:
        return {r.patient_id: r for r in self.records}


@dataclass
class SplitPlan:
    n_folds: int
    seeds: list[int]
    # (seed, fold) -> (train ids, val ids), both sorted tuples
    assignments: dict


@dataclass(frozen=True)
class AugmentParams:
    rotation: float
    translate_x: float
    translate_y: float
    scale: float
    shear: float
    seed: int
    index: int


def build_manifest(records: list[PatientRecord], root: Path | None = None) -> Manifest:
    """Validate and deterministically order patient records.

    When ``root`` is given, every referenced DRR path must exist under it.
    """
    seen = set()
    for r in records:
        if r.patient_id in seen:
            raise ValueError(f"duplicate patient_id {r.patient_id!r}")
        seen.add(r.patient_id)
    if root is not None:
        for r in records:
            for view, rel in r.drr_paths.items():
                if not (Path(root) / rel).exists():
                    raise FileNotFoundError(f"{r.patient_id}/{view}: missing DRR {rel}")
    return Manifest(records=sorted(records, key=lambda r: r.patient_id))


def curriculum_order(m: Manifest) -> list[tuple[str, int]]:
    """(patient_id, phase) pairs, extremes first.

    Difficulty is the distance of the score from the binary cutoff; larger
    distance means easier.  Ties break by patient_id ascending.  Phase 1 is
    the easier (extreme) half, rounded up; phase 2 is the borderline rest.
    """
    ranked = sorted(m.records, key=lambda r: (-abs(r.agatston - 100.0), r.patient_id))
    cut = math.ceil(len(ranked) / 2)
    return [(r.patient_id, 1 if i < cut else 2) for i, r in enumerate(ranked)]


def write_manifest(m: Manifest, path: Path) -> None:
    order = {pid: (rank, phase) for rank, (pid, phase) in enumerate(curriculum_order(m))}
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for r in m.records:
        rank, phase = order[r.patient_id]
        lines.append(
            "\t".join(
                [
                    r.patient_id,
                    repr(float(r.agatston)),
                    r.binary,
                    r.mode,
                    str(rank),
                    str(phase),
                    r.drr_paths.get("pa", ""),
                    r.drr_paths.get("la", ""),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def read_manifest(path: Path) -> Manifest:
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise ValueError(f"{path}: bad manifest header")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        pid, score, binary, mode, _rank, _phase, pa, la = line.split("\t")
        paths = {}
        if pa:
            paths["pa"] = pa
        if la:
            paths["la"] = la
        records.append(
            PatientRecord(
                patient_id=pid, agatston=float(score), binary=binary, mode=mode, drr_paths=paths
            )
        )
    return Manifest(records=records)


def stratified_kfold(m: Manifest, k: int = 5, seed: int = 0) -> dict:
    """One seed's worth of folds: (seed, fold) -> (train ids, val ids).

    Within each class, the id-sorted patients are shuffled deterministically
    (class index selects the RNG stream) and dealt round-robin, which bounds
    the per-fold class imbalance at one patient.
    """
    classes = {NEGATIVE: [], POSITIVE: []}
    for r in m.records:
        classes[r.binary].append(r.patient_id)
    for name, members in classes.items():
        if len(members) < k:
            raise ValueError(f"class {name!r} has {len(members)} patients, needs >= {k}")

    val_folds: list[set] = [set() for _ in range(k)]
    for class_index, name in enumerate((NEGATIVE, POSITIVE)):
        members = rng.shuffled(sorted(classes[name]), seed, class_index)
        for i, pid in enumerate(members):
            val_folds[i % k].add(pid)

    everyone = {r.patient_id for r in m.records}
    out = {}
    for fold in range(k):
        val = tuple(sorted(val_folds[fold]))
        train = tuple(sorted(everyone - val_folds[fold]))
        out[(seed, fold)] = (train, val)
    return out


def build_split_plan(m: Manifest, k: int = 5, seeds: list[int] | None = None) -> SplitPlan:
    seeds = list(seeds) if seeds is not None else [0, 1, 2, 3, 4]
    assignments = {}
    for seed in seeds:
        assignments.update(stratified_kfold(m, k, seed))
    return SplitPlan(n_folds=k, seeds=seeds, assignments=assignments)


def write_split(plan: SplitPlan, seed: int, fold: int, path: Path) -> None:
    train, val = plan.assignments[(seed, fold)]
    lines = ["seed\tfold\tpatient_id\trole"]
    for pid in train:
        lines.append(f"{seed}\t{fold}\t{pid}\ttrain")
    for pid in val:
        lines.append(f"{seed}\t{fold}\t{pid}\tval")
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def read_split(path: Path) -> tuple[int, int, tuple, tuple]:
    """Returns (seed, fold, train ids, val ids) from one split file."""
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines or lines[0] != "seed\tfold\tpatient_id\trole":
        raise ValueError(f"{path}: bad split header")
    seed = fold = None
    train, val = [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        s, f, pid, role = line.split("\t")
        s, f = int(s), int(f)
        if seed is None:
            seed, fold = s, f
        elif (s, f) != (seed, fold):
            raise ValueError(f"{path}: mixed (seed, fold) keys")
        (train if role == "train" else val).append(pid)
    return seed, fold, tuple(train), tuple(val)


def sample_augment(seed: int, index: int) -> AugmentParams:
    """Draw one sample's affine parameters from the (seed, index) stream.

    Draw order is fixed (rotation, tx, ty, scale, shear) and horizontal
    flips do not exist, preserving anatomical left/right.
    """
    stream = _AUGMENT_STREAM_BASE + index
    return AugmentParams(
        rotation=rng.uniform(seed, stream, 0, *ROTATION_RANGE),
        translate_x=rng.uniform(seed, stream, 1, *TRANSLATION_RANGE),
        translate_y=rng.uniform(seed, stream, 2, *TRANSLATION_RANGE),
        scale=rng.uniform(seed, stream, 3, *SCALE_RANGE),
        shear=rng.uniform(seed, stream, 4, *SHEAR_RANGE),
        seed=seed,
        index=index,
    )


def augment_matrix(p: AugmentParams) -> np.ndarray:
    """Forward pixel-space map: scale, then shear, then rotate (2x2 part)."""
    th = math.radians(p.rotation)
    sh = math.tan(math.radians(p.shear))
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, sh], [sh, 1.0]])
    scale = np.array([[p.scale, 0.0], [0.0, p.scale]])
    return rot @ shear @ scale


def warp_affine(img: np.ndarray, p: AugmentParams) -> np.ndarray:
    """Apply scale -> shear -> rotate -> translate about the image center.

    Bilinear resampling, zero fill outside.  Written as plain elementwise
    arithmetic so independent reimplementations can match it closely.
    """
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx, ty = p.translate_x * w, p.translate_y * h

    m = augment_matrix(p)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det == 0:
        raise ValueError("augmentation matrix is singular")
    inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det

    xs = np.arange(w, dtype=np.float64)[None, :] - cx - tx
    ys = np.arange(h, dtype=np.float64)[:, None] - cy - ty
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + cx
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + cy

    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    fx = src_x - x0
    fy = src_y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def sample(yi, xi):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)].astype(np.float64)
        return np.where(valid, vals, 0.0)

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    out = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
    return np.clip(out, 0.0, 1.0)


def apply_augment(img: DrrImage, p: AugmentParams) -> DrrImage:
    out = warp_affine(img.pixels.astype(np.float64), p)
    prov = dict(img.provenance)
    prov["augment"] = (
        f"seed={p.seed} index={p.index} rot={p.rotation!r} tx={p.translate_x!r} "
        f"ty={p.translate_y!r} scale={p.scale!r} shear={p.shear!r}"
    )
    return DrrImage(pixels=out.astype(np.float32), provenance=prov)
