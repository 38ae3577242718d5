import numpy as np
import pytest

from utils.biot_savart import BiotSavartField, c_omega, eval_X, near_split, segment_field, solve_jA
from utils.construction import tube_radius
from utils.errors import ConvergenceError, GeometryError, SolverError
from utils.geometry import Tube, build_frame, circle_curve, straight_curve
from utils.grid import Grid, make_ball_domain
from utils.isoflux import extend_curve

from conftest import ALPHA, EPSILON, N_EXPONENT


def square_loop(center, half):
    loop = np.array([[-1, 0, -1], [1, 0, -1], [1, 0, 1], [-1, 0, 1]], dtype=float) * half
    return loop + np.asarray(center, dtype=float)


@pytest.fixture(scope="module")
def circle():
    return build_frame(circle_curve((0.0, 0.0, 0.0), 1.0, 256))


@pytest.mark.parametrize("n", [64, 256])
def test_polygon_centre_value(n):
    field = BiotSavartField(build_frame(circle_curve((0.0, 0.0, 0.0), 1.0, n)))
    value = field(np.zeros((1, 3)))[0]
    assert value[2] == pytest.approx(n * np.tan(np.pi / n), abs=1e-10)
    np.testing.assert_allclose(value[:2], 0.0, atol=1e-10)


def test_circulation_counts_linking(circle):
    field = BiotSavartField(circle)
    assert abs(field.circulation(square_loop((1.0, 0.0, 0.0), 0.2))) == pytest.approx(2.0 * np.pi, rel=0.02)
    assert abs(field.circulation(square_loop((2.0, 0.0, 0.0), 0.2))) <= 0.02


def test_singular_and_open_curves(circle):
    with pytest.raises(SolverError):
        segment_field(np.array([0.5, 0.0, 0.0]), np.zeros(3), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(GeometryError):
        BiotSavartField(build_frame(straight_curve((0, 0, -1), (0, 0, 1), 8)))
    collinear = segment_field(np.array([2.0, 0.0, 0.0]), np.zeros(3), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(collinear, 0.0)


def test_near_split_isolates_the_singular_part(circle):
    tube = Tube(circle, 0.1)
    mid = circle.curve.vertices[:2].mean(axis=0)
    outward = mid / np.linalg.norm(mid)
    for d in (1e-2, 1e-3):
        point = (mid + d * outward)[None, :]
        y, h = near_split(point, tube)
        assert np.linalg.norm(y[0]) * d == pytest.approx(1.0, rel=1e-6)
        assert np.linalg.norm(h[0]) <= 20.0
        np.testing.assert_allclose(y + h, BiotSavartField(circle)(point), rtol=1e-10)
    with pytest.raises(GeometryError):
        near_split(np.zeros((1, 3)), tube)


def test_corrected_fields(fields, diameter):
    assert fields.defects == []
    assert fields.curve is diameter[1]
    assert fields.representation_residual <= 1e-10
    assert fields.flux_residual <= 1e-6
    assert fields.iterations == len(fields.history) >= 1
    assert fields.history[-1] < 1e-8
    assert set(fields.summary()) >= {"flux_residual", "div_A", "defects"}


def test_c_omega_rejects_bad_radii(ball, diameter, fields):
    h = ball.grid.spacing
    with pytest.raises(ConvergenceError):
        c_omega(diameter[1], ball, fields, [3.0 * h, 4.0 * h])
    with pytest.raises(ConvergenceError):
        c_omega(diameter[1], ball, fields, [4.0 * h, 2.0 * h])


def test_eval_x_matches_field_object():
    framed = build_frame(circle_curve((0.0, 0.0, 0.0), 1.0, 64))
    points = np.array([[0.0, 0.0, 0.0], [0.2, 0.1, 0.3]])
    np.testing.assert_allclose(eval_X(points, framed), BiotSavartField(framed)(points), rtol=0, atol=1e-14)
    assert eval_X(points[:1], framed)[0, 2] == pytest.approx(64 * np.tan(np.pi / 64), rel=1e-10)


def test_fields_depend_only_on_the_curve_inside(ball, diameter, fields, r_eps):
    source, framed = diameter
    _, wider = extend_curve(source, ball, 1.5 * r_eps, max_step=0.25 * r_eps)
    assert wider.curve.length > framed.curve.length
    other = solve_jA(wider, ball)
    for mine, theirs in ((fields.j, other.j), (fields.A, other.A)):
        assert (mine - theirs).max_abs() <= 1e-5 * mine.max_abs()


def diameter_fields(spacing):
    grid = Grid.around_ball((0.0, 0.0, 0.0), 1.0, spacing, pad=4)
    domain = make_ball_domain((0.0, 0.0, 0.0), 1.0, grid)
    r_eps = tube_radius(EPSILON, N_EXPONENT, ALPHA)
    _, framed = extend_curve(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 32, "diameter"), domain, r_eps)
    return framed, domain, solve_jA(framed, domain)


@pytest.mark.slow
def test_c_omega_is_stable_under_refinement():
    radii = np.linspace(0.6, 0.4, 9)
    coarse, fine = (c_omega(*diameter_fields(h), tube_radii=radii) for h in (0.125, 0.0625))
    assert abs(fine.value - coarse.value) <= 0.05 * max(abs(fine.value), 1.0)
    assert fine.length_in_domain == pytest.approx(coarse.length_in_domain, abs=1e-9)
