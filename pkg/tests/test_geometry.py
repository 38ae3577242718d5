import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from utils.errors import GeometryError, NumericalWarning
from utils.geometry import (CurveLocator, PolyCurve, Tube, build_frame, circle_curve, drop_collinear, helix_curve,
                            length_in_domain, smooth_corners, straight_curve, transversality, turning_angles,
                            weighted_length)
from utils.grid import ScalarField
from utils.isoflux import extend_curve


def test_polycurve_validation():
    with pytest.raises(GeometryError):
        PolyCurve([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(GeometryError):
        PolyCurve([[0, 0, 0]])
    with pytest.raises(GeometryError):
        PolyCurve([[0, 0], [1, 0]])
    closed = PolyCurve([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0]], closed=True)
    assert len(closed) == 3
    assert closed.length == pytest.approx(2.0 + np.sqrt(2.0))


def test_arc_length_parametrization():
    curve = straight_curve((0, 0, 0), (0, 0, 2), 8)
    assert curve.length == pytest.approx(2.0)
    np.testing.assert_allclose(curve.point_at(np.array([0.5, 1.7])), [[0, 0, 0.5], [0, 0, 1.7]])
    pts, arc, parent = curve.refine(0.1)
    assert arc[-1] == pytest.approx(2.0)
    assert np.max(np.diff(arc)) <= 0.1 + 1e-12
    assert parent.max() == curve.n_segments - 1
    np.testing.assert_allclose(curve.reversed().point_at(np.array(0.0)), [0.0, 0.0, 2.0])


@given(n=st.integers(64, 400), radius=st.floats(0.5, 2.0))
@settings(max_examples=15, deadline=None)
def test_planar_circle_frame(n, radius):
    framed = build_frame(circle_curve((0.0, 0.0, 0.0), radius, n))
    assert framed.orthonormality_residual() <= 1e-12
    assert abs(framed.closure_defect_deg) <= 1e-6
    assert framed.max_curvature == pytest.approx(1.0 / radius, rel=0.01)


def test_helix_frame_is_orthonormal():
    framed = build_frame(helix_curve())
    assert framed.orthonormality_residual() <= 1e-12
    assert framed.max_step_deg <= 10.0


def test_coarse_polygon_cannot_be_framed():
    square = PolyCurve([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], closed=True)
    with pytest.raises(GeometryError):
        build_frame(square)


def test_circle_reach_and_tube():
    framed = build_frame(circle_curve((0.0, 0.0, 0.0), 1.0, 256))
    assert framed.reach == pytest.approx(1.0, rel=0.05)
    with pytest.raises(GeometryError):
        Tube(framed, 1.5)
    tube = Tube(framed, 0.3)
    mid = framed.curve.vertices[:2].mean(axis=0)
    target = mid + 0.1 * mid / np.linalg.norm(mid)
    s, v, w = tube.tubular_coords(target)
    assert np.hypot(v, w) == pytest.approx(0.1, abs=1e-9)
    assert tube.tubular_coords([1.5, 0.0, 0.0]) is None
    np.testing.assert_allclose(tube.point(np.array([s]), np.array([v]), np.array([w]))[0], target, atol=1e-9)


def figure_eight(n=400):
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return PolyCurve(np.stack([np.sin(t), np.sin(t) * np.cos(t), np.zeros(n)], axis=1), closed=True,
                     name="figure-eight")


def test_self_crossing_curve_is_rejected(ball):
    eight = figure_eight()
    assert not eight.is_simple(0.05)
    assert circle_curve((0.0, 0.0, 0.0), 1.0, 400).is_simple(0.05)
    assert straight_curve((0.0, 0.0, -1.5), (0.0, 0.0, 1.5), 24).is_simple(0.05)
    framed = build_frame(eight)
    assert framed.reach <= 1e-9
    with pytest.raises(GeometryError):
        Tube(framed, 0.1)
    with pytest.raises(GeometryError):
        extend_curve(eight, ball, 0.2)


def test_locator_distances():
    framed = build_frame(straight_curve((0, 0, -1), (0, 0, 1), 16))
    points = np.array([[0.3, 0.0, 0.0], [0.0, 0.4, 0.5], [0.0, 0.0, 1.5]])
    np.testing.assert_allclose(CurveLocator(framed).distance(points), [0.3, 0.4, 0.5], atol=1e-12)


def test_weighted_length_of_a_diameter(ball):
    line = straight_curve((0.0, 0.0, -1.5), (0.0, 0.0, 1.5), 12)
    assert length_in_domain(line, ball) == pytest.approx(2.0, abs=1e-9)
    rho = ScalarField(ball.grid, np.full(ball.grid.dims, 0.8))
    assert weighted_length(line, rho, ball) == pytest.approx(1.28, abs=1e-9)
    assert weighted_length(line.reversed(), rho, ball) == pytest.approx(1.28, abs=1e-9)


def test_weighted_length_outside_warns(ball):
    far = straight_curve((3.0, 0.0, 0.0), (3.0, 0.0, 1.0), 4)
    with pytest.warns(NumericalWarning):
        assert weighted_length(far, None, ball) == 0.0


def test_transversality(ball):
    crossings = transversality(straight_curve((0.0, 0.0, -1.5), (0.0, 0.0, 1.5), 12), ball)
    assert len(crossings) == 2
    assert crossings[0].entering and not crossings[1].entering
    assert all(c.angle_deg == pytest.approx(90.0) and not c.flagged for c in crossings)
    with pytest.raises(GeometryError):
        transversality(straight_curve((1.0, 0.0, -1.0), (1.0, 0.0, 1.0), 40), ball)


def test_smooth_corners_keeps_endpoints():
    corner = PolyCurve([[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    smooth = smooth_corners(corner, 5.0)
    assert np.max(turning_angles(smooth)) <= 5.0
    np.testing.assert_allclose(smooth.endpoints[0], [0, 0, 0])
    np.testing.assert_allclose(smooth.endpoints[1], [1, 1, 0])
    with pytest.raises(GeometryError):
        smooth_corners(corner, 5.0, max_passes=1)


def test_drop_collinear():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [2, 1, 0]], dtype=float)
    np.testing.assert_allclose(drop_collinear(pts), pts[[0, 2, 3]])


def test_extended_diameter_stays_outside(ball, r_eps):
    source, framed = extend_curve(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 32), ball, r_eps)
    assert framed.closed
    assert length_in_domain(framed.curve, ball) == pytest.approx(2.0, abs=1e-6)
    assert np.max(turning_angles(framed.curve)) <= 5.0 + 1e-6
    assert np.max(np.linalg.norm(np.diff(framed.curve.vertices, axis=0), axis=1)) <= 0.25 * r_eps * (1.0 + 1e-8)
    assert source.length == pytest.approx(2.0)
