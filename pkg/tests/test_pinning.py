import numpy as np
import pytest

from utils.errors import ConfigurationError, NumericalWarning
from utils.grid import Placement, ScalarField
from utils.pinning import (PinningModel, constant_pinning, holder_report, interior_gap, link_density, make_model,
                           solve_rho, unit_weight)

from conftest import EPSILON

pytestmark = pytest.mark.filterwarnings("ignore::utils.errors.NumericalWarning")


def test_constant_pinning_gives_square_root(ball):
    weight = solve_rho(make_model(ball, "constant", 0.5, EPSILON, value=0.64), ball)
    np.testing.assert_allclose(weight.rho.values[ball.active], 0.8, atol=1e-10)
    assert weight.iterations == 0
    assert weight.defects == []
    assert interior_gap(weight, ball, 0.25) <= 1e-10


def test_bump_pinning_converges_within_bounds(ball):
    model = make_model(ball, "bump", 0.5, EPSILON, centers=[[0.2, 0.0, 0.0]], sigma=0.3)
    weight = solve_rho(model, ball)
    assert weight.residual <= 1e-8
    assert weight.iterations >= 1
    assert weight.history[-1] <= 1e-10
    rho2 = weight.rho_squared[ball.active]
    assert rho2.min() >= 0.5 - 1e-8
    assert rho2.max() <= 1.0 + 1e-8
    assert weight.defects == []
    summary = weight.summary(ball)
    assert summary["generator"] == "bump"
    assert summary["holder"] is None


def test_under_resolved_epsilon_warns(ball):
    model = make_model(ball, "constant", 0.5, 0.2)
    with pytest.warns(NumericalWarning):
        solve_rho(model, ball)


def test_model_validation(ball):
    with pytest.raises(ConfigurationError):
        make_model(ball, "stripes", 0.5, EPSILON)
    with pytest.raises(ConfigurationError):
        make_model(ball, "constant", 0.5, EPSILON, value=0.3)
    with pytest.raises(ConfigurationError):
        PinningModel(constant_pinning(ball), 1.0, EPSILON)
    with pytest.raises(ConfigurationError):
        PinningModel(constant_pinning(ball), 0.5, 1.5)


def test_generators_respect_lower_bound(ball):
    for generator, params in (("bump", {"sigma": 0.2}), ("periodic", {"wavelength": 0.5})):
        values = make_model(ball, generator, 0.3, EPSILON, **params).a.values
        assert values.min() >= 0.3 - 1e-12
        assert values.max() <= 1.0 + 1e-12


def test_holder_report_of_constant_weight(ball):
    weight = unit_weight(ball, EPSILON)
    report = holder_report(weight.rho, 0.5, active=ball.active, c1=1.0, n_exponent=0.1, epsilon=EPSILON)
    assert report.estimate == 0.0
    assert report.passes is True
    assert report.label.startswith("hypothesis holds")
    assert report.to_dict()["C1"] == 1.0


def test_holder_report_of_linear_weight(ball):
    x = ball.grid.points()[..., 0]
    rho = ScalarField(ball.grid, 0.75 + 0.1 * x, Placement.NODE)
    report = holder_report(rho, 0.5, sample_pairs=5000, active=ball.active)
    diameter = 2.0 * ball.bounding_radius + 2.0 * ball.grid.spacing
    assert 0.0 < report.estimate <= 0.1 * np.sqrt(2.0 * diameter)
    assert report.passes is None
    assert report.label == "unverified hypothesis"
    with pytest.raises(ConfigurationError):
        holder_report(rho, 1.0)


def test_violated_holder_bound(ball):
    x = ball.grid.points()[..., 0]
    rho = ScalarField(ball.grid, np.where(x > 0.0, 1.0, 0.75), Placement.NODE)
    report = holder_report(rho, 0.5, active=ball.active, c1=0.1, n_exponent=0.0, epsilon=EPSILON)
    assert report.passes is False
    assert report.implied_n > 0.0


def test_link_density_of_unit_weight(ball):
    density = link_density(unit_weight(ball, EPSILON), ball)
    assert density.size == ball.neumann.link_weight.size
    np.testing.assert_allclose(density, 1.0)
