import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cacforge.ingest import CalciumMask, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_volume(voxels, spacing=(1.0, 1.0, 1.0), patient_id="T", dtype="f32"):
    return Volume(
        voxels=np.asarray(voxels, dtype=np.float32),
        spacing=spacing,
        patient_id=patient_id,
        source_dtype=dtype,
    )


def make_mask(labels, spacing=(1.0, 1.0, 1.0), patient_id="T", names=None):
    labels = np.asarray(labels, dtype=np.uint16)
    if names is None:
        names = {int(l): f"A{int(l)}" for l in np.unique(labels) if l != 0}
    return CalciumMask(labels=labels, spacing=spacing, patient_id=patient_id, artery_names=names)


def air_volume(shape, spacing=(1.0, 1.0, 1.0), patient_id="T"):
    """All-air volume (zero attenuation everywhere)."""
    return make_volume(np.full(shape, -1000.0), spacing, patient_id)
