#!/usr/bin/env python3
"""Regenerate the loader package's test fixtures from the primary pipeline.

Produces a tiny manifest + split plan + rasters plus augmentation parameter
and output snapshots, so the TypeScript loader can assert byte- and
value-level parity against this implementation.

Usage: python3 scripts/make_loader_fixtures.py [dest]
"""

import json
import shutil
import sys
from pathlib import Path

import numpy as np

from cacforge.bundles import write_bundle
from cacforge.dataset import (
    PatientRecord,
    apply_augment,
    build_manifest,
    build_split_plan,
    sample_augment,
    write_manifest,
    write_split,
)
from cacforge.ingest import binary_from_score
from cacforge.projector import DrrImage

DEST = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("loader/tests/fixtures")

SCORES = {"p000": 0.0, "p950": 950.0, "p99": 99.0, "p101": 101.0}
SIZE = 32


def main() -> None:
    if DEST.exists():
        shutil.rmtree(DEST)
    DEST.mkdir(parents=True)

    rng = np.random.default_rng(2718)
    records = []
    for pid, score in sorted(SCORES.items()):
        for view in ("pa", "la"):
            pixels = rng.random((SIZE, SIZE)).astype(np.float32)
            write_bundle(
                DEST / "drr" / pid / view,
                {"spacing": (1.0, 1.0), "dtype": "f32", "patient_id": pid},
                pixels.T,
            )
        records.append(
            PatientRecord(
                patient_id=pid,
                agatston=score,
                binary=binary_from_score(score),
                mode="original",
                drr_paths={"pa": f"{pid}/pa", "la": f"{pid}/la"},
            )
        )

    manifest = build_manifest(records, root=DEST / "drr")
    write_manifest(manifest, DEST / "manifest.tsv")
    plan = build_split_plan(manifest, k=2, seeds=[0, 1])
    (DEST / "splits").mkdir()
    for seed in plan.seeds:
        for fold in range(plan.n_folds):
            write_split(plan, seed, fold, DEST / "splits" / f"seed{seed}_fold{fold}.tsv")

    # augmentation parity: 20 (seed, index) draws on one raster
    base = rng.random((SIZE, SIZE)).astype(np.float32)
    write_bundle(
        DEST / "augment" / "input",
        {"spacing": (1.0, 1.0), "dtype": "f32", "patient_id": "aug"},
        base.T,
    )
    draws = []
    for i in range(20):
        seed = int(rng.integers(0, 1000))
        index = int(rng.integers(0, 100000))
        p = sample_augment(seed, index)
        out = apply_augment(DrrImage(pixels=base), p)
        write_bundle(
            DEST / "augment" / f"out_{i:02d}",
            {"spacing": (1.0, 1.0), "dtype": "f32", "patient_id": "aug"},
            out.pixels.T,
        )
        draws.append(
            {
                "seed": seed,
                "index": index,
                "rotation": p.rotation,
                "translate_x": p.translate_x,
                "translate_y": p.translate_y,
                "scale": p.scale,
                "shear": p.shear,
                "raster": f"out_{i:02d}",
            }
        )
    (DEST / "augment" / "draws.json").write_text(json.dumps(draws, indent=1), "utf-8")

    # split assignments as plain JSON for direct assertions
    assignments = {
        f"{seed}:{fold}": {"train": list(train), "val": list(val)}
        for (seed, fold), (train, val) in plan.assignments.items()
    }
    (DEST / "expected.json").write_text(
        json.dumps(
            {
                "assignments": assignments,
                "curriculum": ["p950", "p000", "p101", "p99"],
                "phases": {"p950": 1, "p000": 1, "p101": 2, "p99": 2},
            },
            indent=1,
        ),
        "utf-8",
    )
    print(f"fixtures written to {DEST}")


if __name__ == "__main__":
    main()
