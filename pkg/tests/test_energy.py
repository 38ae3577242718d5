import numpy as np
import pytest

from utils.energy import (build_test_fields, dual_norm, exterior_estimate, free_energy, free_energy_terms, full_gl,
                          remainder_bound, split_energy, tube_estimate, upper_bound, vorticity)
from utils.errors import ConfigurationError
from utils.profile import gamma_constant

from conftest import ALPHA, EPSILON, N_EXPONENT


def test_free_energy(ball, weight, configuration):
    report = free_energy(configuration, weight, ball)
    assert report.total > 0.0
    assert report.total == pytest.approx(report.tube["total"] + report.exterior["total"])
    assert report.kinetic > 0.0 and report.potential > 0.0
    assert 0.0 <= report.truncation <= 1.0
    assert report.r_eps == configuration.r_eps


def test_split_is_exact_without_applied_field(ball, weight, meissner, configuration):
    split = split_energy(configuration, weight, meissner, 0.0, ball)
    assert split.defect <= 1e-9 * max(1.0, abs(split.left))
    assert split.field_term == 0.0 and split.remainder == 0.0


def test_split_with_applied_field(ball, weight, meissner, configuration):
    split = split_energy(configuration, weight, meissner, 1.0, ball)
    assert split.relative_defect <= 5.0 * ball.grid.h ** 2
    assert split.terms["meissner_quadratic"] == pytest.approx(meissner.energy_coefficient)
    bound = remainder_bound(meissner, configuration, weight, 1.0, ball)
    assert bound["holds"]
    assert bound["remainder"] == pytest.approx(split.remainder)


def test_vorticity_counts_the_piercings(ball, configuration):
    mu = vorticity(configuration.u, configuration.A, ball)
    assert mu.total_winding > 0
    assert mu.indeterminate == 0
    assert mu.mode == "winding"
    with pytest.raises(ConfigurationError):
        vorticity(configuration.u, configuration.A, ball, mode="flux")


def test_dual_norm(ball, configuration):
    mu = vorticity(configuration.u, configuration.A, ball)
    library = build_test_fields(ball, size=8)
    assert all(f.sup > 0.0 for f in library)
    estimate = dual_norm(mu, configuration.source, 0.5, library, ball)
    assert np.isfinite(estimate.value) and estimate.value >= 0.0
    assert estimate.fields == 8
    with pytest.raises(ConfigurationError):
        dual_norm(mu, configuration.source, 1.5, library, ball)
    with pytest.raises(ConfigurationError):
        dual_norm(mu, configuration.source, 0.5, [], ball)


def test_estimates(ball, weight, profile, configuration):
    gamma = gamma_constant(profile).value
    tube = tube_estimate(configuration, weight, profile, gamma, ball)
    assert tube["weighted_length"] == pytest.approx(2.0, abs=1e-6)
    assert tube["prediction"] > 0.0
    R = configuration.r_eps / configuration.epsilon
    assert tube["leading"] == pytest.approx(2.0 * (np.pi * np.log(R) + gamma), rel=1e-6)
    exterior = exterior_estimate(configuration, 1.0, weight, ball)
    assert exterior["weight_factor"] == pytest.approx(1.0)
    assert exterior["prediction"] == pytest.approx(1.0 - 2.0 * np.pi * np.log(configuration.r_eps), rel=1e-6)


def test_upper_bound_formula():
    log_eps = np.log(5.0)
    expected = 2.0 * np.pi * log_eps + 1.2 * np.pi * np.log(log_eps) + 1.0
    assert upper_bound(0.2, 0.1, 0.5, 2.0, 1.0) == pytest.approx(expected)


def _gauge_pair(grid, chi):
    from utils.grid import ComplexField, ScalarField, grad
    phase = ScalarField(grid, chi)
    return ComplexField(grid, np.exp(1j * chi), "u"), grad(phase)


def test_full_gl_vanishes_on_pure_gauge(ball):
    from utils.grid import ScalarField
    grid = ball.grid
    pts = grid.points()
    u, A = _gauge_pair(grid, 0.7 * pts[..., 0] - 0.3 * pts[..., 1] * pts[..., 2])
    report = full_gl(u, A, ScalarField(grid, np.ones(grid.dims)), 0.2, ball)
    assert abs(report.kinetic) <= 1e-18
    assert abs(report.potential) <= 1e-18
    assert abs(report.magnetic) <= 1e-18


def test_full_gl_terms(ball):
    from utils.grid import ComplexField, ScalarField, VectorField
    from utils.meissner import uniform_applied_field
    grid = ball.grid
    u = ComplexField(grid, np.ones(grid.dims))
    A = VectorField.zeros(grid)
    a = ScalarField(grid, np.full(grid.dims, 0.64))
    coarse, fine = full_gl(u, A, a, 0.2, ball), full_gl(u, A, a, 0.1, ball)
    assert coarse.kinetic == pytest.approx(0.0, abs=1e-20)
    assert coarse.potential > 0.0
    assert fine.potential == pytest.approx(4.0 * coarse.potential)
    applied = uniform_applied_field(grid).H0
    assert full_gl(u, A, a, 0.2, ball, applied).magnetic > 0.0


def test_free_energy_and_vorticity_are_gauge_invariant(ball, weight, configuration):
    from utils.grid import ComplexField, ScalarField, grad
    grid = ball.grid
    pts = grid.points()
    chi = 0.3 * np.sin(pts[..., 0]) + 0.2 * pts[..., 1] * pts[..., 2]
    u = ComplexField(grid, configuration.u.values * np.exp(1j * chi), "u")
    A = configuration.A + grad(ScalarField(grid, chi))
    before = free_energy(configuration, weight, ball)
    after = free_energy_terms(u, A, weight, EPSILON, ball, configuration.node_distance, configuration.r_eps)
    assert abs(after.total - before.total) <= 1e-10 * max(1.0, abs(before.total))
    mu, nu = vorticity(configuration.u, configuration.A, ball), vorticity(u, A, ball)
    for a in range(3):
        assert np.max(np.abs(nu.values.components[a] - mu.values.components[a])) <= 1e-10 * grid.spacing ** -2


# (field, integral of its z-component along the z-diameter)
CURVE_INTEGRALS = [
    (lambda p: np.stack([0.0 * p[:, 0], 0.0 * p[:, 0], np.ones(len(p))], axis=1), 2.0),
    (lambda p: np.stack([0.0 * p[:, 0], 0.0 * p[:, 0], np.cos(p[:, 2])], axis=1), 2.0 * np.sin(1.0)),
    (lambda p: np.stack([p[:, 1], -p[:, 0], 1.0 + p[:, 2] ** 2], axis=1), 8.0 / 3.0),
    (lambda p: np.stack([0.0 * p[:, 0], 0.0 * p[:, 0], (1.0 - p[:, 2] ** 2) * (1.0 + p[:, 0])], axis=1), 4.0 / 3.0),
    (lambda p: np.stack([p[:, 0] * p[:, 2], 0.0 * p[:, 0], np.exp(p[:, 2])], axis=1), np.exp(1.0) - np.exp(-1.0)),
]


def pairing_errors(mu):
    return [abs(abs(mu.pairing(field)) - 2.0 * np.pi * integral) / (2.0 * np.pi * integral)
            for field, integral in CURVE_INTEGRALS]


def test_vorticity_pairing_matches_the_curve_integral(ball, configuration):
    errors = pairing_errors(vorticity(configuration.u, configuration.A, ball))
    assert max(errors) <= 0.05


def diameter_configuration(spacing, epsilon, profile):
    from utils.biot_savart import solve_jA
    from utils.construction import assemble, tube_radius
    from utils.geometry import straight_curve
    from utils.grid import Grid, make_ball_domain
    from utils.isoflux import extend_curve
    from utils.pinning import unit_weight
    grid = Grid.around_ball((0.0, 0.0, 0.0), 1.0, spacing, pad=4)
    domain = make_ball_domain((0.0, 0.0, 0.0), 1.0, grid)
    weight = unit_weight(domain, epsilon)
    r_eps = tube_radius(epsilon, N_EXPONENT, ALPHA)
    source, framed = extend_curve(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 32, "diameter"), domain, r_eps)
    fields = solve_jA(framed, domain)
    cfg = assemble(source, framed, epsilon, weight, profile, fields, domain, N_EXPONENT, ALPHA)
    return domain, cfg


@pytest.mark.slow
def test_vorticity_pairing_improves_as_epsilon_halves(profile):
    errors = []
    for spacing, epsilon in ((0.25, 0.3), (0.125, 0.15)):
        domain, cfg = diameter_configuration(spacing, epsilon, profile)
        errors.append(pairing_errors(vorticity(cfg.u, cfg.A, domain)))
    coarse, fine = errors
    assert max(fine) <= 0.05
    assert all(f <= c for f, c in zip(fine, coarse))
