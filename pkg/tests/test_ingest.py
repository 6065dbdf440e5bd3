import numpy as np
import pytest

from cacforge.bundles import BundleError, read_bundle, write_bundle
from cacforge.ingest import (
    CacLabel,
    NEGATIVE,
    POSITIVE,
    agatston_score,
    binary_from_score,
    gate_slice_coverage,
    load_mask,
    load_volume,
    resample_isotropic,
    resample_mask,
    write_mask,
    write_volume,
)

from conftest import air_volume, make_mask, make_volume
from oracles import naive_agatston


# ---------------------------------------------------------------------------
# bundle IO


def test_bundle_identity_roundtrip(tmp_path):
    v = make_volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2), (0.5, 0.7, 1.0), "P1")
    write_volume(v, tmp_path / "b")
    loaded = load_volume(tmp_path / "b")
    assert loaded.shape == (2, 2, 2)
    assert loaded.spacing == (0.5, 0.7, 1.0)
    assert loaded.patient_id == "P1"
    np.testing.assert_array_equal(loaded.voxels, v.voxels)


def test_bundle_payload_size_mismatch(tmp_path):
    v = make_volume(np.zeros((2, 2, 2)))
    write_volume(v, tmp_path / "b")
    payload = tmp_path / "b" / "voxels.raw"
    payload.write_bytes(payload.read_bytes()[:-4])  # drop one f32 value
    with pytest.raises(BundleError, match="payload"):
        load_volume(tmp_path / "b")


def test_bundle_missing_header(tmp_path):
    with pytest.raises(BundleError, match="header"):
        load_volume(tmp_path / "nope")


def test_bundle_rejects_nonpositive_spacing(tmp_path):
    v = make_volume(np.zeros((2, 2, 2)))
    write_volume(v, tmp_path / "b")
    header = tmp_path / "b" / "header"
    header.write_text(header.read_text().replace("spacing: 1.0 1.0 1.0", "spacing: 1.0 0.0 1.0"))
    with pytest.raises(BundleError, match="spacing"):
        load_volume(tmp_path / "b")


def test_bundle_roundtrip_byte_identical_randomized(tmp_path, rng):
    for trial in range(20):
        shape = tuple(rng.integers(1, 6, size=3))
        dtype = rng.choice(["i16", "f32"])
        if dtype == "i16":
            vox = rng.integers(-1000, 2000, size=shape).astype(np.float32)
        else:
            vox = rng.normal(0, 500, size=shape).astype(np.float32)
        spacing = tuple(float(s) for s in rng.uniform(0.3, 2.5, size=3))
        v = make_volume(vox, spacing, f"R{trial}", dtype=dtype)
        first = tmp_path / f"a{trial}"
        second = tmp_path / f"b{trial}"
        write_volume(v, first)
        write_volume(load_volume(first), second)
        assert (first / "header").read_bytes() == (second / "header").read_bytes()
        assert (first / "voxels.raw").read_bytes() == (second / "voxels.raw").read_bytes()


def test_bundle_x_fastest_payload_order(tmp_path):
    # value encodes (x, y, z); payload must advance x first
    vox = np.zeros((2, 3, 4), dtype=np.float32)
    for x in range(2):
        for y in range(3):
            for z in range(4):
                vox[x, y, z] = x + 10 * y + 100 * z
    write_bundle(tmp_path / "b", {"spacing": (1, 1, 1), "dtype": "f32"}, vox)
    flat = np.frombuffer((tmp_path / "b" / "voxels.raw").read_bytes(), dtype="<f4")
    assert flat[0] == 0 and flat[1] == 1  # x advances first
    assert flat[2] == 10  # then y
    assert flat[6] == 100  # then z
    _, back = read_bundle(tmp_path / "b")
    np.testing.assert_array_equal(back, vox)


def test_mask_roundtrip_and_unknown_label(tmp_path):
    labels = np.zeros((3, 3, 3), dtype=np.uint16)
    labels[1, 1, 1] = 2
    m = make_mask(labels, names={2: "LAD"})
    write_mask(m, tmp_path / "m")
    loaded = load_mask(tmp_path / "m")
    assert loaded.artery_names == {2: "LAD"}
    np.testing.assert_array_equal(loaded.labels, labels)

    header = tmp_path / "m" / "header"
    header.write_text(header.read_text().replace("artery_names: 2:LAD", "artery_names: 3:LCX"))
    with pytest.raises(BundleError, match="artery_names"):
        load_mask(tmp_path / "m")


# ---------------------------------------------------------------------------
# gating


def test_gate_threshold_boundary():
    assert not gate_slice_coverage(air_volume((4, 4, 29)), 30)  # strict <
    assert gate_slice_coverage(air_volume((4, 4, 30)), 30)
    assert gate_slice_coverage(air_volume((4, 4, 1)), 1)


def test_gate_monotone(rng):
    for _ in range(20):
        nz = int(rng.integers(1, 60))
        t = int(rng.integers(1, 60))
        v = air_volume((2, 2, nz))
        if gate_slice_coverage(v, t):
            for lower in range(1, t + 1):
                assert gate_slice_coverage(v, lower)


# ---------------------------------------------------------------------------
# resampling


def test_resample_identity_when_isotropic():
    vox = np.random.default_rng(0).normal(0, 100, (5, 5, 5))
    v = make_volume(vox)
    out = resample_isotropic(v, 1.0)
    assert out.shape == v.shape
    assert out.spacing == (1.0, 1.0, 1.0)
    np.testing.assert_allclose(out.voxels, v.voxels, atol=1e-6)


def test_resample_constant_volume():
    v = make_volume(np.full((4, 6, 8), 100.0), (0.8, 1.0, 2.5))
    out = resample_isotropic(v, 0.8)
    np.testing.assert_allclose(out.voxels, 100.0, atol=1e-6)
    assert out.is_isotropic()


def test_resample_affine_field_exact_at_interior_centers():
    # f(x, y, z) = 2x + 3y - z sampled at cell centers; trilinear is exact
    # for affine fields wherever the new centers stay inside the old center
    # hull (edge centers clamp by design).
    spacing = (1.0, 1.2, 2.0)
    shape = (8, 7, 6)
    idx = np.indices(shape, dtype=np.float64)
    xs = (idx[0] + 0.5) * spacing[0]
    ys = (idx[1] + 0.5) * spacing[1]
    zs = (idx[2] + 0.5) * spacing[2]
    v = make_volume(2 * xs + 3 * ys - zs, spacing)

    target = 0.9
    out = resample_isotropic(v, target)
    oidx = np.indices(out.shape, dtype=np.float64)
    ox = (oidx[0] + 0.5) * target
    oy = (oidx[1] + 0.5) * target
    oz = (oidx[2] + 0.5) * target
    expected = 2 * ox + 3 * oy - oz

    interior = (
        (ox >= 0.5 * spacing[0]) & (ox <= (shape[0] - 0.5) * spacing[0])
        & (oy >= 0.5 * spacing[1]) & (oy <= (shape[1] - 0.5) * spacing[1])
        & (oz >= 0.5 * spacing[2]) & (oz <= (shape[2] - 0.5) * spacing[2])
    )
    assert interior.sum() > 100  # the check must cover a meaningful region
    np.testing.assert_allclose(out.voxels[interior], expected[interior], atol=1e-6)


def test_resample_preserves_extent_within_one_voxel(rng):
    for _ in range(10):
        shape = tuple(int(n) for n in rng.integers(2, 9, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.4, 2.0, size=3))
        target = float(rng.uniform(0.3, 2.0))
        v = make_volume(rng.normal(size=shape), spacing)
        out = resample_isotropic(v, target)
        for n_in, s_in, n_out in zip(shape, spacing, out.shape):
            extent_in = n_in * s_in
            extent_out = n_out * target
            assert extent_out >= extent_in - 1e-9
            assert extent_out < extent_in + target + 1e-9


def test_resample_bounded_by_input_range(rng):
    for _ in range(10):
        v = make_volume(rng.normal(0, 300, (6, 5, 4)), (1.0, 1.3, 1.7))
        out = resample_isotropic(v, 0.6)
        assert out.voxels.min() >= v.voxels.min() - 1e-4
        assert out.voxels.max() <= v.voxels.max() + 1e-4


def test_resample_rejects_bad_target():
    with pytest.raises(ValueError):
        resample_isotropic(air_volume((2, 2, 2)), 0.0)


def test_resample_mask_identity_and_constant():
    labels = np.full((3, 4, 5), 7, dtype=np.uint16)
    m = make_mask(labels)
    out = resample_mask(m, 1.0)
    np.testing.assert_array_equal(out.labels, labels)
    out2 = resample_mask(make_mask(labels, (1.0, 2.0, 0.7)), 0.9)
    assert set(np.unique(out2.labels)) == {7}


def test_resample_mask_labels_from_input_set(rng):
    for _ in range(10):
        labels = rng.integers(0, 4, size=(5, 6, 7)).astype(np.uint16)
        m = make_mask(labels, (1.0, 1.5, 2.0))
        out = resample_mask(m, 0.8)
        assert set(np.unique(out.labels)) <= set(np.unique(labels))
        assert out.artery_names == m.artery_names


# ---------------------------------------------------------------------------
# Agatston scoring


def test_binary_rule_boundary():
    assert binary_from_score(100.0) == NEGATIVE
    assert binary_from_score(100.0000001) == POSITIVE
    with pytest.raises(ValueError):
        CacLabel(agatston=101.0, binary=NEGATIVE)


def test_agatston_empty_mask():
    v = make_volume(np.full((4, 4, 3), 500.0))
    m = make_mask(np.zeros((4, 4, 3), dtype=np.uint16))
    label = agatston_score(v, m)
    assert label.agatston == 0.0
    assert label.binary == NEGATIVE


def test_agatston_hand_case_four_voxels():
    # 4 voxels at 0.5 x 0.5 mm in-plane: area exactly 1 mm^2 (kept), peak
    # 250 HU sits in the weight-2 band, so the lesion scores 2.0.
    vox = np.full((4, 4, 1), 0.0, dtype=np.float32)
    labels = np.zeros((4, 4, 1), dtype=np.uint16)
    for i, j in [(1, 1), (1, 2), (2, 1), (2, 2)]:
        vox[i, j, 0] = 200.0
        labels[i, j, 0] = 1
    vox[1, 1, 0] = 250.0
    spacing = (0.5, 0.5, 3.0)
    label = agatston_score(make_volume(vox, spacing), make_mask(labels, spacing))
    assert label.agatston == pytest.approx(2.0)


def test_agatston_sub_area_lesion_discarded():
    # one voxel at 0.5 x 0.5 mm = 0.25 mm^2 < 1 mm^2
    vox = np.zeros((4, 4, 1), dtype=np.float32)
    labels = np.zeros((4, 4, 1), dtype=np.uint16)
    vox[2, 2, 0] = 400.0
    labels[2, 2, 0] = 1
    spacing = (0.5, 0.5, 3.0)
    label = agatston_score(make_volume(vox, spacing), make_mask(labels, spacing))
    assert label.agatston == 0.0


def test_agatston_two_arteries_sum_and_positive_boundary():
    # artery 1: 30 voxels at 1 mm^2, peak 250 -> 30 * 2 = 60
    # artery 2: 41 voxels, peak 150 -> 41 * 1 = 41; total 101 -> positive
    vox = np.zeros((10, 10, 2), dtype=np.float32)
    labels = np.zeros((10, 10, 2), dtype=np.uint16)
    count = 0
    for i in range(10):
        for j in range(10):
            if count < 30:
                vox[i, j, 0] = 250.0
                labels[i, j, 0] = 1
                count += 1
    count = 0
    for i in range(10):
        for j in range(10):
            if count < 41:
                vox[i, j, 1] = 150.0
                labels[i, j, 1] = 2
                count += 1
    label = agatston_score(make_volume(vox), make_mask(labels))
    assert label.agatston == pytest.approx(101.0)
    assert label.binary == POSITIVE

    # trim one weight-1 voxel: exactly 100 -> negative per the <= rule
    labels2 = labels.copy()
    vox2 = vox.copy()
    took = np.argwhere(labels2[:, :, 1] == 2)[-1]
    labels2[took[0], took[1], 1] = 0
    vox2[took[0], took[1], 1] = 0.0
    label2 = agatston_score(make_volume(vox2), make_mask(labels2))
    assert label2.agatston == pytest.approx(100.0)
    assert label2.binary == NEGATIVE


def test_agatston_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        agatston_score(air_volume((2, 2, 2)), make_mask(np.zeros((3, 3, 3), dtype=np.uint16)))


def test_agatston_below_threshold_scores_zero(rng):
    vox = rng.uniform(-1000, 129.99, size=(6, 6, 4)).astype(np.float32)
    labels = rng.integers(0, 3, size=(6, 6, 4)).astype(np.uint16)
    label = agatston_score(make_volume(vox), make_mask(labels))
    assert label.agatston == 0.0


def _random_pair(rng, shape=(8, 8, 4), spacing=None):
    if spacing is None:
        spacing = tuple(float(s) for s in rng.uniform(0.4, 1.6, size=3))
    vox = rng.uniform(-200, 800, size=shape).astype(np.float32)
    labels = (rng.random(size=shape) < 0.25).astype(np.uint16) * rng.integers(
        1, 4, size=shape
    ).astype(np.uint16)
    return make_volume(vox, spacing), make_mask(labels, spacing)


def test_agatston_matches_naive_oracle(rng):
    for _ in range(25):
        v, m = _random_pair(rng)
        got = agatston_score(v, m).agatston
        want = naive_agatston(v.voxels, m.labels, v.spacing)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_agatston_additive_over_disjoint_arteries(rng):
    v, m = _random_pair(rng)
    only1 = m.labels.copy()
    only1[only1 != 1] = 0
    only_rest = m.labels.copy()
    only_rest[only_rest == 1] = 0
    combined = agatston_score(v, m).agatston
    part1 = agatston_score(v, make_mask(only1, m.spacing)).agatston
    part2 = agatston_score(v, make_mask(only_rest, m.spacing)).agatston
    assert combined == pytest.approx(part1 + part2, rel=1e-9, abs=1e-9)


def test_agatston_invariant_under_relabeling(rng):
    v, m = _random_pair(rng)
    perm = {0: 0, 1: 3, 2: 1, 3: 2}
    relabeled = np.vectorize(perm.get)(m.labels).astype(np.uint16)
    a = agatston_score(v, m).agatston
    b = agatston_score(v, make_mask(relabeled, m.spacing)).agatston
    assert a == pytest.approx(b, rel=1e-12)
