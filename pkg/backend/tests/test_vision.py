from __future__ import annotations

import numpy as np
import pytest

from common.errors import FieldFormatError, HeatmapError
from common.fileio import read_pgm
from stages.vision.camera import back_project, detect_landmarks, look_at, make_camera, project, project_points
from stages.vision.formats import export_heatmap_pgm, read_pkhm, write_pkhm
from stages.vision.heatmaps import encode_visual, gaussian_heatmap, sample_visual
from stages.vision.models import Camera, Heatmap2D
from stages.voxel.models import VoxelGrid


@pytest.fixture
def cam() -> Camera:
    return Camera(fx=500, fy=500, cx=320, cy=240)


@pytest.fixture
def room_cam() -> Camera:
    return make_camera(eye=(1.0, -1.5, 1.2), target=(1.0, 1.0, 0.8), focal_px=60.0, width=80, height=60)


@pytest.fixture
def grid() -> VoxelGrid:
    return VoxelGrid(origin=(0.0, 0.0, 0.0), cell_m=0.1, dims=(20, 20, 16))


# -------------------------
# Projection
# -------------------------
def test_optical_axis_projects_to_principal_point(cam):
    assert project(cam, (0.0, 0.0, 2.0)) == (320.0, 240.0)


def test_behind_camera_is_none(cam):
    assert project(cam, (0.0, 0.0, -1.0)) is None
    assert project(cam, (1.0, 1.0, 0.0)) is None


def test_hand_computed_projection(cam):
    u, v = project(cam, (0.5, -0.25, 2.0))
    assert u == pytest.approx(445.0)
    assert v == pytest.approx(177.5)


def test_vectorized_projection_agrees(room_cam, rng):
    pts = rng.uniform(-1.0, 3.0, size=(50, 3))
    uv, valid = project_points(room_cam, pts)
    for p, q, ok in zip(pts, uv, valid):
        single = project(room_cam, p)
        assert (single is not None) == bool(ok)
        if single is not None:
            np.testing.assert_allclose(q, single, atol=1e-9)


def test_back_projection_round_trip(room_cam, rng):
    for X in rng.uniform(0.2, 2.0, size=(20, 3)):
        depth = float((room_cam.R @ X + room_cam.t)[2])
        px = project(room_cam, X)
        np.testing.assert_allclose(back_project(room_cam, px, depth), X, atol=1e-9)


def test_look_at_points_the_camera_at_the_target(room_cam):
    u, v = project(room_cam, (1.0, 1.0, 0.8))
    assert u == pytest.approx(room_cam.cx)
    assert v == pytest.approx(room_cam.cy)
    np.testing.assert_allclose(room_cam.position, [1.0, -1.5, 1.2], atol=1e-12)
    # world up shows as image up (smaller v)
    _, v_above = project(room_cam, (1.0, 1.0, 1.2))
    assert v_above < room_cam.cy


def test_look_at_degenerate_views():
    with pytest.raises(HeatmapError):
        look_at((0, 0, 0), (0, 0, 0))
    with pytest.raises(HeatmapError):
        look_at((0, 0, 0), (0, 0, 5))


def test_camera_rejects_non_orthonormal_rotation():
    with pytest.raises(ValueError):
        Camera(fx=1, fy=1, cx=0, cy=0, rotation=((1, 0, 0), (0, 2, 0), (0, 0, 1)))
    with pytest.raises(ValueError):
        Camera(fx=0, fy=1, cx=0, cy=0)


def test_detect_landmarks(room_cam):
    pts = [(1.0, 1.0, 0.8), (1.0, -3.0, 1.2)]
    clean = detect_landmarks(room_cam, pts)
    assert clean[0] == project(room_cam, pts[0])
    assert clean[1] is None
    noisy = detect_landmarks(room_cam, pts, noise_px=2.0, rng=np.random.default_rng(5))
    assert noisy[0] != clean[0]
    assert noisy[1] is None


# -------------------------
# Heatmaps
# -------------------------
def test_gaussian_peak_and_sigma():
    hm = gaussian_heatmap([(20.0, 15.0)], sigma_px=3.0, width=40, height=30)
    assert hm.values.shape == (1, 30, 40)
    assert hm.values[0, 15, 20] == 1.0
    assert hm.values[0, 15, 23] == pytest.approx(np.exp(-0.5))
    assert hm.values[0, 18, 20] == pytest.approx(0.6065, abs=1e-4)


def test_gaussian_mass_matches_closed_form():
    sigma = 3.0
    hm = gaussian_heatmap([(40.0, 40.0)], sigma_px=sigma, width=81, height=81)
    ys, xs = np.mgrid[0:81, 0:81]
    disc = (xs - 40) ** 2 + (ys - 40) ** 2 <= (7 * sigma) ** 2
    assert hm.values[0][disc].sum() == pytest.approx(2 * np.pi * sigma**2, rel=0.02)


def test_missing_landmark_gives_zero_channel():
    hm = gaussian_heatmap([None, (5.0, 5.0)], sigma_px=1.0, width=10, height=10)
    assert hm.n_landmarks == 2
    assert not np.any(hm.values[0])


def test_heatmap_arguments():
    with pytest.raises(HeatmapError):
        gaussian_heatmap([(1.0, 1.0)], sigma_px=0.0, width=4, height=4)
    with pytest.raises(HeatmapError):
        gaussian_heatmap([], sigma_px=1.0, width=4, height=4)
    with pytest.raises(ValueError):
        Heatmap2D(values=np.full((1, 2, 2), 1.5))


# -------------------------
# Visual encoding
# -------------------------
def _padded_weight(px, cam: Camera) -> float:
    """Bilinear weight a constant image keeps at px once zero-padded."""
    if px is None:
        return 0.0
    wx = np.clip(1.0 - max(0.0, -px[0], px[0] - (cam.width - 1)), 0.0, 1.0)
    wy = np.clip(1.0 - max(0.0, -px[1], px[1] - (cam.height - 1)), 0.0, 1.0)
    return float(wx * wy)


def test_uniform_heatmap_fills_the_frustum(room_cam, grid):
    hm = Heatmap2D(values=np.full((1, room_cam.height, room_cam.width), 0.7))
    field = encode_visual(hm, room_cam, grid)
    assert field.metadata["kind"] == "visual"
    centers = grid.centers().reshape(-1, 3)
    got = field.values[0].reshape(-1)
    for X, value in zip(centers, got):
        px = project(room_cam, X)
        assert value == pytest.approx(0.7 * _padded_weight(px, room_cam))
    assert np.any(got == 0.0) and np.any(got > 0.0)


def test_border_projections_fade_into_the_padding(cam):
    hm = Heatmap2D(values=np.ones((1, 4, 6)))
    # pixel (u, v) = (x / z · 500 + 320, y / z · 500 + 240); camera looks down +z
    pixels = [(2.0, 1.0), (5.0, 3.0), (5.25, 1.0), (5.75, 3.5), (-0.5, 1.0), (6.5, 1.0), (2.0, -2.0)]
    points = np.array([[(u - 320) / 500, (v - 240) / 500, 1.0] for u, v in pixels])
    values = sample_visual(hm, cam, points)[0]
    np.testing.assert_allclose(values, [1.0, 1.0, 0.75, 0.25 * 0.5, 0.5, 0.0, 0.0], atol=1e-9)


def test_zero_heatmap_gives_zero_field(room_cam, grid):
    hm = Heatmap2D(values=np.zeros((2, room_cam.height, room_cam.width)))
    field = encode_visual(hm, room_cam, grid)
    assert field.n_channels == 2
    assert not np.any(field.values)


def test_single_landmark_lifts_to_a_cone(room_cam, grid):
    sigma = 4.0
    landmark = project(room_cam, (1.0, 1.2, 0.9))
    hm = gaussian_heatmap([landmark], sigma, room_cam.width, room_cam.height)
    field = encode_visual(hm, room_cam, grid)
    hot = field.values[0] > 0.5
    assert hot.any()
    for X in grid.centers()[hot]:
        u, v = project(room_cam, X)
        assert np.hypot(u - landmark[0], v - landmark[1]) <= 1.18 * sigma + 0.5


def test_visual_channel_cannot_resolve_depth(room_cam):
    landmark = project(room_cam, (1.0, 1.2, 0.9))
    hm = gaussian_heatmap([landmark], 3.0, room_cam.width, room_cam.height)
    for pixel in [(30.3, 20.7), landmark, (51.0, 40.25)]:
        ray = np.stack([back_project(room_cam, pixel, d) for d in (0.5, 1.0, 2.0, 3.5)])
        values = sample_visual(hm, room_cam, ray)[0]
        np.testing.assert_allclose(values, values[0], atol=1e-6)


def test_encoding_is_monotone_in_the_heatmap(room_cam, grid, rng):
    base = rng.uniform(0.0, 0.8, size=(1, room_cam.height, room_cam.width))
    raised = base.copy()
    raised[0, 20:30, 30:50] += 0.2
    lo = encode_visual(Heatmap2D(values=base), room_cam, grid).values
    hi = encode_visual(Heatmap2D(values=raised), room_cam, grid).values
    assert np.all(hi >= lo - 1e-12)
    assert np.any(hi > lo)


# -------------------------
# Files
# -------------------------
def test_pkhm_round_trip(tmp_path, rng):
    hm = Heatmap2D(values=rng.uniform(size=(3, 6, 9)).astype(np.float32))
    path = write_pkhm(tmp_path / "hm.pkhm", hm)
    raw = path.read_bytes()
    assert raw[:4] == b"PKHM"
    assert len(raw) == 16 + 3 * 6 * 9 * 4
    back = read_pkhm(path)
    np.testing.assert_array_equal(back.values, hm.values)


def test_pkhm_rejects_bad_files(tmp_path):
    raw = write_pkhm(tmp_path / "hm.pkhm", Heatmap2D(values=np.zeros((1, 2, 2)))).read_bytes()
    (tmp_path / "bad.pkhm").write_bytes(b"PKVX" + raw[4:])
    (tmp_path / "short.pkhm").write_bytes(raw[:-1])
    for name in ("bad.pkhm", "short.pkhm"):
        with pytest.raises(FieldFormatError):
            read_pkhm(tmp_path / name)


def test_heatmap_pgm_export(tmp_path):
    hm = gaussian_heatmap([(2.0, 1.0), None], sigma_px=1.0, width=5, height=4)
    paths = export_heatmap_pgm(hm, tmp_path)
    assert [p.name for p in paths] == ["heatmap_00.pgm", "heatmap_01.pgm"]
    img = read_pgm(paths[0])
    assert img.shape == (4, 5)
    assert img[1, 2] == 255
