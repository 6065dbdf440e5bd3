import math

import numpy as np
import pytest
from scipy import ndimage

from cacforge.projector import (
    LA,
    PA,
    DrrImage,
    ProjectionGeometry,
    ViewPose,
    hu_to_mu,
    pose_transform,
    render_drr,
    siddon_path_integral,
)

from conftest import air_volume, make_volume
from oracles import box_chord_length, quadrature_path_integral

SMALL_GEOM = ProjectionGeometry(
    sdd=200.0, det_cols=65, det_rows=65, det_spacing=1.0, source_to_isocenter=100.0, output_size=65
)


def mu_volume(mu, spacing=(1.0, 1.0, 1.0)):
    """Build a Volume whose attenuation field equals mu exactly."""
    hu = np.asarray(mu, dtype=np.float64) * 1000.0 - 1000.0
    return make_volume(hu, spacing)


# ---------------------------------------------------------------------------
# path integrals


def test_segment_outside_volume_is_zero():
    v = mu_volume(np.ones((4, 4, 4)))
    assert siddon_path_integral(v, (10.0, 10.0, 10.0), (20.0, 10.0, 10.0)) == 0.0


def test_axis_aligned_constant_row():
    # segment hugging the middle of a voxel row: N voxels, constant mu, spacing h
    v = mu_volume(np.full((5, 3, 3), 2.0), (0.7, 1.0, 1.0))
    got = siddon_path_integral(v, (-1.0, 1.5, 1.5), (5 * 0.7 + 1.0, 1.5, 1.5))
    assert got == pytest.approx(5 * 2.0 * 0.7, rel=1e-9)


def test_partial_segment_inside_voxels():
    v = mu_volume(np.full((4, 1, 1), 3.0))
    # segment starts midway through voxel 1 and ends midway through voxel 2
    got = siddon_path_integral(v, (1.5, 0.5, 0.5), (2.5, 0.5, 0.5))
    assert got == pytest.approx(3.0 * 1.0, rel=1e-9)


def test_rejects_bad_endpoints():
    v = mu_volume(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        siddon_path_integral(v, (np.nan, 0, 0), (1, 1, 1))
    with pytest.raises(ValueError):
        siddon_path_integral(v, (1, 1, 1), (1, 1, 1))


def test_constant_volume_matches_analytic_chord(rng):
    for _ in range(50):
        shape = tuple(int(n) for n in rng.integers(2, 7, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 1.8, size=3))
        # dyadic mu survives the float32 HU round-trip exactly
        c = float(rng.integers(1, 13)) / 4.0
        v = mu_volume(np.full(shape, c), spacing)
        hi = [n * s for n, s in zip(shape, spacing)]
        src = rng.uniform(-5, 5, size=3) + np.array([0, 0, -8.0])
        dst = rng.uniform(-5, 5, size=3) + np.array(hi) + np.array([0, 0, 8.0])
        chord = box_chord_length((0.0, 0.0, 0.0), hi, src, dst)
        got = siddon_path_integral(v, src, dst)
        assert got == pytest.approx(chord * c, rel=1e-9, abs=1e-12)


def test_oblique_rays_match_quadrature_oracle(rng):
    v_shape = (4, 4, 4)
    for _ in range(20):
        mu = rng.uniform(0.0, 2.0, size=v_shape)
        spacing = tuple(float(s) for s in rng.uniform(0.6, 1.5, size=3))
        v = mu_volume(mu, spacing)
        hi = np.array(v_shape) * np.array(spacing)
        for _ in range(10):
            src = rng.uniform(-1.5, 1.0, size=3) * hi
            dst = rng.uniform(1.0, 2.0, size=3) * hi * rng.choice([-1, 1], size=3)
            if np.allclose(src, dst):
                continue
            got = siddon_path_integral(v, src, dst)
            want = quadrature_path_integral(mu, spacing, src, dst, steps=100_000)
            assert got == pytest.approx(want, rel=1e-3, abs=1e-6)


def test_integral_monotone_in_attenuation(rng):
    mu = rng.uniform(0.1, 1.0, size=(4, 4, 4))
    spacing = (1.0, 1.0, 1.0)
    rays = [(rng.uniform(-2, 6, size=3), rng.uniform(-2, 6, size=3)) for _ in range(30)]
    before = [siddon_path_integral(mu_volume(mu, spacing), s, d) for s, d in rays]
    bumped = mu.copy()
    bumped[2, 1, 3] += 5.0
    after = [siddon_path_integral(mu_volume(bumped, spacing), s, d) for s, d in rays]
    for lo, hiv in zip(before, after):
        assert hiv >= lo - 1e-12


def test_scale_covariance(rng):
    # dyadic values keep the float32 HU round-trip exact
    mu = rng.integers(1, 13, size=(4, 4, 4)) / 8.0
    k = 2.0
    src, dst = (-3.0, 1.8, 2.2), (7.0, 2.1, 1.7)
    a = siddon_path_integral(mu_volume(mu), src, dst)
    b = siddon_path_integral(mu_volume(k * mu), src, dst)
    assert b == pytest.approx(k * a, rel=1e-12)


# ---------------------------------------------------------------------------
# poses


def test_pose_pa_is_identity():
    np.testing.assert_array_equal(pose_transform(ViewPose.pa()), np.eye(3))


def test_pose_la_twice_is_half_turn():
    la = pose_transform(ViewPose.la())
    np.testing.assert_allclose(la @ la, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)


def test_pose_validation():
    with pytest.raises(ValueError):
        ViewPose(PA, 90.0)
    with pytest.raises(ValueError):
        ViewPose(LA, 0.0)
    with pytest.raises(ValueError):
        ViewPose("oblique", 45.0)


def _bright_pixel(img: DrrImage):
    return np.unravel_index(np.argmax(img.pixels), img.pixels.shape)


def _expected_pixel(g: ProjectionGeometry, point, rotation_deg=0.0):
    """Closed-form central projection of a world point onto the detector."""
    th = math.radians(rotation_deg)
    c, s = math.cos(th), math.sin(th)
    # counter-rotate the point instead of the assembly (same projection)
    x, y, z = point
    x, y = c * x - s * y, s * x + c * y
    src = np.array([0.0, g.source_to_isocenter, 0.0])
    det_y = g.source_to_isocenter - g.sdd
    t = (det_y - src[1]) / (y - src[1])
    u = src[0] + t * (x - src[0])
    w = src[2] + t * (z - src[2])
    col = u / g.det_spacing + (g.det_cols - 1) / 2.0
    row = (g.det_rows - 1) / 2.0 - w / g.det_spacing
    return row, col


def test_single_voxel_projects_to_closed_form_pixel():
    shape = (9, 9, 9)
    hu = np.full(shape, -1000.0, dtype=np.float32)
    hu[6, 4, 3] = 4000.0
    v = make_volume(hu, (2.0, 2.0, 2.0))
    img = render_drr(v, SMALL_GEOM, ViewPose.pa())
    # voxel center in isocenter frame: origin = -extent/2
    center = (np.array([6, 4, 3]) + 0.5) * 2.0 - np.array(shape) * 2.0 / 2
    row, col = _expected_pixel(SMALL_GEOM, center)
    br, bc = _bright_pixel(img)
    assert abs(br - row) <= 1.0 and abs(bc - col) <= 1.0
    # exactly one connected bright region
    binary = img.pixels > 0.5
    _, n = ndimage.label(binary, structure=np.ones((3, 3)))
    assert n == 1


def test_la_maps_plus_x_to_pa_plus_y_column():
    shape = (11, 11, 11)
    base = np.full(shape, -1000.0, dtype=np.float32)
    vx = base.copy()
    vx[8, 5, 5] = 4000.0  # offset +x from center
    vy = base.copy()
    vy[5, 8, 5] = 4000.0  # offset +y from center
    img_la = render_drr(make_volume(vx, (2.0, 2.0, 2.0)), SMALL_GEOM, ViewPose.la())
    img_pa = render_drr(make_volume(vy, (2.0, 2.0, 2.0)), SMALL_GEOM, ViewPose.pa())
    assert _bright_pixel(img_la)[1] == _bright_pixel(img_pa)[1]


# ---------------------------------------------------------------------------
# rendering


def test_all_air_volume_renders_zero():
    img = render_drr(air_volume((8, 8, 8)), SMALL_GEOM, ViewPose.pa())
    assert img.pixels.shape == (65, 65)
    np.testing.assert_array_equal(img.pixels, 0.0)


def test_pixels_normalized_to_unit_interval(rng):
    v = make_volume(rng.uniform(-1000, 1500, size=(8, 8, 8)), (2.0, 2.0, 2.0))
    img = render_drr(v, SMALL_GEOM, ViewPose.pa())
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
    assert img.pixels.max() == pytest.approx(1.0)


def test_homogeneous_cube_central_ray_chord():
    # cube of water-equivalent tissue (mu = 1): central ray chord is the
    # full y extent of the cube
    shape = (10, 10, 10)
    v = make_volume(np.zeros(shape), (2.0, 2.0, 2.0))
    geom = ProjectionGeometry(
        sdd=400.0, det_cols=1, det_rows=1, det_spacing=1.0,
        source_to_isocenter=200.0, output_size=1,
    )
    src = np.array([0.0, 200.0, 0.0])
    pixel = np.array([0.0, -200.0, 0.0])
    integral = siddon_path_integral(
        make_volume(np.zeros(shape), (2.0, 2.0, 2.0)),
        src + np.array(shape) * 2.0 / 2,  # shift into volume-local frame
        pixel + np.array(shape) * 2.0 / 2,
    )
    assert integral == pytest.approx(20.0 * 1.0, rel=1e-9)
    img = render_drr(v, geom, ViewPose.pa())
    assert img.pixels.shape == (1, 1)


def test_mirror_symmetry_about_pa_ray_plane():
    rng = np.random.default_rng(7)
    v = make_volume(rng.uniform(-1000, 1000, size=(10, 8, 6)), (2.0, 2.0, 2.0))
    mirrored = make_volume(v.voxels[::-1].copy(), (2.0, 2.0, 2.0))
    geom = ProjectionGeometry(
        sdd=300.0, det_cols=32, det_rows=16, det_spacing=2.0,
        source_to_isocenter=150.0, output_size=32,
    )
    a = render_drr(v, geom, ViewPose.pa())
    b = render_drr(mirrored, geom, ViewPose.pa())
    np.testing.assert_array_equal(b.pixels, a.pixels[:, ::-1])


def test_render_deterministic_across_workers():
    rng = np.random.default_rng(3)
    v = make_volume(rng.uniform(-1000, 1200, size=(16, 16, 16)), (2.0, 2.0, 2.0))
    imgs = [render_drr(v, SMALL_GEOM, ViewPose.pa(), workers=w) for w in (1, 4, 16)]
    assert np.array_equal(imgs[0].pixels, imgs[1].pixels)
    assert np.array_equal(imgs[0].pixels, imgs[2].pixels)


def test_render_rejects_source_inside_volume():
    v = air_volume((60, 60, 60))  # 60 mm cube at 1 mm spacing
    geom = ProjectionGeometry(
        sdd=50.0, det_cols=8, det_rows=8, det_spacing=1.0,
        source_to_isocenter=25.0, output_size=8,
    )
    with pytest.raises(ValueError, match="degenerate"):
        render_drr(v, geom, ViewPose.pa())


def test_render_resizes_to_output_size(rng):
    v = make_volume(rng.uniform(-500, 500, (6, 6, 6)), (3.0, 3.0, 3.0))
    geom = ProjectionGeometry(
        sdd=200.0, det_cols=32, det_rows=32, det_spacing=1.5,
        source_to_isocenter=100.0, output_size=48,
    )
    img = render_drr(v, geom, ViewPose.pa())
    assert img.pixels.shape == (48, 48)
    assert img.provenance["geometry_hash"] == geom.hash()


def test_normalized_image_invariant_under_mu_scaling(rng):
    hu = rng.uniform(-1000, 1000, size=(8, 8, 8))
    k = 3.0
    v1 = make_volume(hu, (2.0, 2.0, 2.0))
    v2 = make_volume((hu + 1000.0) * k - 1000.0, (2.0, 2.0, 2.0))
    a = render_drr(v1, SMALL_GEOM, ViewPose.pa())
    b = render_drr(v2, SMALL_GEOM, ViewPose.pa())
    np.testing.assert_allclose(a.pixels, b.pixels, atol=1e-6)


def test_hu_to_mu_clamps_air():
    assert hu_to_mu(np.array([-2000.0]))[0] == 0.0
    assert hu_to_mu(np.array([0.0]))[0] == 1.0
    assert hu_to_mu(np.array([1000.0]))[0] == 2.0
