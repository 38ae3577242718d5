import numpy as np
import pytest

from utils.errors import ConfigurationError, NumericalWarning
from utils.grid import Placement, VectorField, div
from utils.meissner import (AppliedField, check_epsilon_stability, curl_l4_norm, meissner_energy, solve_B0,
                            uniform_applied_field)
from utils.pinning import unit_weight

from conftest import EPSILON


def test_meissner_state_residuals(meissner):
    assert meissner.defects == []
    residuals = meissner.residuals()
    assert residuals["relation"] <= 1e-6
    assert residuals["div_B0"] <= 1e-6
    assert residuals["tangential_trace"] == 0.0
    assert set(residuals) == {"relation", "div_B0", "tangential_trace", "surface_trace", "exterior_gradient"}


def test_energy_coefficient_is_below_the_zero_potential(ball, meissner):
    faces = sum(int(np.prod(ball.grid.shape(Placement.FACE, a))) for a in range(3))
    assert 0.0 < meissner.energy_coefficient <= 0.5 * ball.grid.cell_volume * faces
    assert meissner_energy(meissner, None, 2.0) == pytest.approx(4.0 * meissner.energy_coefficient)


def test_coulomb_gauge(ball, meissner):
    interior = div(meissner.A0_coulomb).values[1:-1, 1:-1, 1:-1]
    scale = max(meissner.A0.max_abs(), 1e-300)
    assert np.max(np.abs(interior)) * ball.grid.spacing / scale <= 1e-8
    np.testing.assert_allclose(meissner.current.flat(), meissner.A0.flat(), atol=1e-10 * scale)


def test_curl_norm_is_positive(ball, meissner):
    norm = curl_l4_norm(meissner, ball)
    assert np.isfinite(norm) and norm > 0.0


def test_epsilon_stability():
    assert check_epsilon_stability([1.0, 1.05, 1.08])
    assert check_epsilon_stability([2.0])
    with pytest.warns(NumericalWarning):
        assert not check_epsilon_stability([1.0, 1.5])


def test_applied_field_validation(ball):
    grid = ball.grid
    edges = VectorField.zeros(grid, Placement.EDGE)
    with pytest.raises(ConfigurationError):
        AppliedField(edges)
    x = grid.points(Placement.FACE, 0)[..., 0]
    comps = (x, np.zeros(grid.shape(Placement.FACE, 1)), np.zeros(grid.shape(Placement.FACE, 2)))
    with pytest.raises(ConfigurationError):
        AppliedField(VectorField(grid, comps, Placement.FACE))
    tilted = uniform_applied_field(grid, (1.0, 1.0, 0.0), h_ex=2.0)
    assert tilted.scaled().max_abs() == pytest.approx(np.sqrt(2.0))


def test_grids_must_agree(ball, meissner):
    from utils.grid import Grid, make_ball_domain
    coarse = make_ball_domain((0.0, 0.0, 0.0), 1.0, Grid.around_ball((0.0, 0.0, 0.0), 1.0, 0.25, pad=4))
    with pytest.raises(ConfigurationError):
        solve_B0(unit_weight(coarse, EPSILON), uniform_applied_field(ball.grid), ball)
