import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpfc import geometry as G
from vpfc.errors import ZeroNorm
from vpfc.geometry import GazeAngle, TileGrid, Viewport

from oracles import dense_tiles, gaze_matrix, haversine_deg, matrix_to_quat, rot_y, rot_z

C45 = math.cos(math.radians(45))
lats = st.floats(-89.0, 89.0)
lons = st.floats(-179.9, 179.9)
quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3)


# -- normalize -------------------------------------------------------------------

@pytest.mark.parametrize("q, expected", [
    ((1, 0, 0, 0), (1, 0, 0, 0)),
    ((-2, 0, 0, 0), (1, 0, 0, 0)),
    ((0.5, 0.5, 0.5, 0.5), (0.5, 0.5, 0.5, 0.5)),
])
def test_normalize_examples(q, expected):
    np.testing.assert_allclose(G.normalize(np.array(q, float)), expected, atol=1e-15)


def test_normalize_zero_raises():
    with pytest.raises(ZeroNorm):
        G.normalize(np.zeros(4))


def test_canonical_sign_when_w_is_zero():
    np.testing.assert_array_equal(G.canonicalize(np.array([0.0, -1.0, 0.0, 0.0])), [0, 1, 0, 0])
    np.testing.assert_array_equal(G.canonicalize(np.array([0.0, 0.0, -0.6, 0.8])), [0, 0, 0.6, -0.8])


@given(quats)
def test_normalize_is_unit_and_canonical(q):
    u = G.normalize(np.array(q))
    assert abs(np.linalg.norm(u) - 1) < 1e-12
    assert u[0] >= 0


# -- quaternion <-> gaze ---------------------------------------------------------

def test_quat_to_gaze_identity():
    g = G.quat_to_gaze(np.array([1.0, 0, 0, 0]))
    assert (g.lat, g.lon) == (0.0, 0.0)


def test_quat_to_gaze_yaw_matches_matrix_oracle():
    q = np.array([C45, 0, 0, C45])
    fwd = rot_z(90) @ [1, 0, 0]
    g = G.quat_to_gaze(q)
    assert g.lat == pytest.approx(math.degrees(math.asin(fwd[2])), abs=1e-12)
    assert g.lon == pytest.approx(math.degrees(math.atan2(fwd[1], fwd[0])), abs=1e-12)
    assert g.lon == pytest.approx(90.0)


def test_quat_to_gaze_pitch_up_matches_matrix_oracle():
    q = np.array([C45, 0, -C45, 0])
    fwd = rot_y(-90) @ [1, 0, 0]
    assert fwd[2] == pytest.approx(1.0)
    assert G.quat_to_gaze(q).lat == pytest.approx(90.0, abs=1e-6)


def test_gaze_to_quat_examples():
    np.testing.assert_allclose(G.gaze_to_quat(GazeAngle(0.0, 0.0)), [1, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(G.gaze_to_quat(GazeAngle(0.0, 90.0)), matrix_to_quat(rot_z(90)), atol=1e-12)
    np.testing.assert_allclose(G.gaze_to_quat(GazeAngle(0.0, 90.0)), [C45, 0, 0, C45], atol=1e-12)


def test_gaze_round_trip_example():
    g = G.quat_to_gaze(G.gaze_to_quat(GazeAngle(37.2, -114.5)))
    assert g.lat == pytest.approx(37.2, abs=1e-6)
    assert g.lon == pytest.approx(-114.5, abs=1e-6)


@given(lats, lons)
def test_gaze_to_quat_matches_matrix_oracle(lat, lon):
    expected = matrix_to_quat(gaze_matrix(lat, lon))
    np.testing.assert_allclose(G.gaze_to_quat(GazeAngle(lat, lon)), expected, atol=1e-9)


@given(lats, lons)
def test_gaze_round_trip(lat, lon):
    g = G.quat_to_gaze(G.gaze_to_quat(GazeAngle(lat, lon)))
    assert haversine_deg(lat, lon, g.lat, g.lon) < 1e-6


@given(quats)
def test_quat_to_matrix_is_rotation(q):
    m = G.quat_to_matrix(G.normalize(np.array(q)))
    np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(m) == pytest.approx(1.0)


@given(quats, quats)
def test_quat_multiply_composes_rotations(a, b):
    a, b = G.normalize(np.array(a)), G.normalize(np.array(b))
    np.testing.assert_allclose(G.quat_to_matrix(G.quat_multiply(a, b)),
                               G.quat_to_matrix(a) @ G.quat_to_matrix(b), atol=1e-12)


def test_gaze_ignores_roll():
    roll = np.array([math.cos(0.3), math.sin(0.3), 0, 0])
    q = G.quat_multiply(G.gaze_to_quat(GazeAngle(20.0, 40.0)), roll)
    g = G.quat_to_gaze(q)
    assert g.lat == pytest.approx(20.0)
    assert g.lon == pytest.approx(40.0)


# -- angle error -----------------------------------------------------------------

@pytest.mark.parametrize("a, b, expected", [
    ((0, 0), (0, 0), 0.0),
    ((0, 0), (0, 180), 180.0),
    ((0, 0), (0, 90), 90.0),
])
def test_angle_error_examples(a, b, expected):
    assert G.angle_error(GazeAngle(*a), GazeAngle(*b)) == pytest.approx(expected, abs=1e-12)


def test_angle_error_against_haversine_example():
    got = G.angle_error(GazeAngle(30, 10), GazeAngle(40, 50))
    assert got == pytest.approx(haversine_deg(30, 10, 40, 50), rel=1e-9)
    assert got == pytest.approx(33.94, abs=5e-3)


def test_angle_error_agrees_with_haversine_on_random_pairs():
    rng = np.random.default_rng(1)
    lat = rng.uniform(-90, 90, (2, 2000))
    lon = rng.uniform(-180, 180, (2, 2000))
    got = G.angle_error(GazeAngle(lat[0], lon[0]), GazeAngle(lat[1], lon[1]))
    ref = np.array([haversine_deg(lat[0, i], lon[0, i], lat[1, i], lon[1, i]) for i in range(2000)])
    # Away from 0 the arccos form is well conditioned.
    ok = ref > 1e-3
    np.testing.assert_allclose(got[ok], ref[ok], rtol=1e-9)


@given(lats, lons, lats, lons)
def test_angle_error_symmetric_and_bounded(a, b, c, d):
    e1 = G.angle_error(GazeAngle(a, b), GazeAngle(c, d))
    e2 = G.angle_error(GazeAngle(c, d), GazeAngle(a, b))
    assert e1 == pytest.approx(e2, abs=1e-9)
    assert 0.0 <= e1 <= 180.0


def test_angle_error_clamps_rounding_overshoot():
    assert not math.isnan(G.angle_error(GazeAngle(45.0, 10.0), GazeAngle(45.0, 10.0 + 1e-13)))


# -- slerp -----------------------------------------------------------------------

def test_slerp_examples():
    q = G.gaze_to_quat(GazeAngle(10.0, 20.0))
    np.testing.assert_allclose(G.slerp(q, q, 0.5), q, atol=1e-12)
    a, b = G.IDENTITY, G.gaze_to_quat(GazeAngle(-30.0, 100.0))
    np.testing.assert_allclose(G.slerp(a, b, 0.0), a, atol=1e-12)
    np.testing.assert_allclose(G.slerp(a, -b, 1.0), G.canonicalize(b), atol=1e-12)
    yaw90 = matrix_to_quat(rot_z(90))
    np.testing.assert_allclose(G.slerp(G.IDENTITY, yaw90, 0.5), matrix_to_quat(rot_z(45)), atol=1e-12)


@given(quats, quats, st.floats(0, 1))
def test_slerp_is_unit_and_between(a, b, t):
    a, b = G.normalize(np.array(a)), G.normalize(np.array(b))
    q = G.slerp(a, b, t)
    assert abs(np.linalg.norm(q) - 1) < 1e-9
    # rotation angle splits as t : 1 - t along the short arc
    total = 2 * math.degrees(math.acos(min(1.0, abs(float(a @ b)))))
    part = 2 * math.degrees(math.acos(min(1.0, abs(float(a @ q)))))
    assert part == pytest.approx(t * total, abs=1e-5)


# -- tiles -----------------------------------------------------------------------

def test_tiles_whole_sphere():
    g = TileGrid(4, 8)
    assert G.tiles_covered(Viewport(GazeAngle(12.0, -40.0), 360.0, 180.0), g) == frozenset(range(32))


def test_tiles_point_viewport_is_centre_pixel_tile():
    g = TileGrid(4, 8)
    px, py = g.frame_width // 2, g.frame_height // 2
    expected = (py * g.rows // g.frame_height) * g.cols + px * g.cols // g.frame_width
    assert G.tiles_covered(Viewport(GazeAngle(0.0, 0.0), 0.1, 0.1), g) == {expected}


def test_tiles_default_viewport_matches_dense_oracle():
    g = TileGrid(4, 8)
    assert G.tiles_covered(Viewport(GazeAngle(0.0, 0.0), 110.0, 90.0), g) == dense_tiles(0, 0, 110, 90, 4, 8)


def test_tiles_match_dense_oracle_on_random_viewports():
    rng = np.random.default_rng(3)
    for _ in range(10):
        lat, lon = rng.uniform(-80, 80), rng.uniform(-180, 180)
        h, v = rng.uniform(20, 150), rng.uniform(20, 120)
        rows, cols = int(rng.integers(2, 9)), int(rng.integers(2, 13))
        got = G.tiles_covered(Viewport(GazeAngle(lat, lon), h, v), TileGrid(rows, cols))
        assert got == dense_tiles(lat, lon, h, v, rows, cols, n=512)


@settings(max_examples=30)
@given(lats, lons, st.floats(10, 180), st.floats(10, 120), st.floats(0.5, 30))
def test_tiles_monotone_in_fov(lat, lon, h, v, extra):
    g = TileGrid(4, 8)
    small = G.tiles_covered(Viewport(GazeAngle(lat, lon), h, v), g)
    big = G.tiles_covered(Viewport(GazeAngle(lat, lon), h + extra, v + extra), g)
    assert small <= big


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    q = G.normalize(rng.standard_normal((7, 4)))
    g = G.quat_to_gaze(q)
    for i in range(7):
        gi = G.quat_to_gaze(q[i])
        assert (g.lat[i], g.lon[i]) == pytest.approx((gi.lat, gi.lon), abs=1e-12)
