import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from utils.errors import ConfigurationError, PlacementError
from utils.grid import (DiscreteOperators, Grid, Placement, ScalarField, VectorField, curl, dirichlet_poisson, div,
                        grad, integrate, make_ball_domain)

dims = st.tuples(st.integers(4, 7), st.integers(4, 7), st.integers(4, 7))


def random_vector(grid, placement, rng):
    return VectorField(grid, tuple(rng.normal(size=grid.shape(placement, a)) for a in range(3)), placement)


@given(dims=dims, seed=st.integers(0, 2 ** 16))
@settings(max_examples=25, deadline=None)
def test_primal_identities(dims, seed):
    rng = np.random.default_rng(seed)
    grid = Grid((0.0, 0.0, 0.0), 0.1, dims, 1)
    f = ScalarField(grid, rng.normal(size=dims))
    v = random_vector(grid, Placement.EDGE, rng)
    assert curl(grad(f)).max_abs() <= 1e-12 / grid.h ** 2
    assert np.max(np.abs(div(curl(v)).values)) <= 1e-12 / grid.h ** 2


@given(dims=dims, seed=st.integers(0, 2 ** 16))
@settings(max_examples=25, deadline=None)
def test_dual_identities(dims, seed):
    rng = np.random.default_rng(seed)
    grid = Grid((0.0, 0.0, 0.0), 0.1, dims, 1)
    g = ScalarField(grid, rng.normal(size=grid.shape(Placement.CELL)), Placement.CELL)
    w = random_vector(grid, Placement.FACE, rng)
    assert grad(g).placement == Placement.FACE
    assert curl(grad(g)).max_abs() <= 1e-12 / grid.h ** 2
    assert div(curl(w)).placement == Placement.NODE
    assert np.max(np.abs(div(curl(w)).values)) <= 1e-12 / grid.h ** 2


def test_sparse_operators_match_array_operators(rng):
    grid = Grid((0.0, 0.0, 0.0), 0.2, (5, 6, 7), 1)
    f = ScalarField(grid, rng.normal(size=grid.dims))
    v = random_vector(grid, Placement.EDGE, rng)
    w = random_vector(grid, Placement.FACE, rng)
    ops = DiscreteOperators(grid)
    np.testing.assert_allclose(ops.grad @ f.values.ravel(), grad(f).flat(), atol=1e-12)
    np.testing.assert_allclose(ops.curl @ v.flat(), curl(v).flat(), atol=1e-12)
    np.testing.assert_allclose(ops.div @ w.flat(), div(w).values.ravel(), atol=1e-12)


def test_placements_and_shapes():
    grid = Grid((0.0, 0.0, 0.0), 0.5, (4, 5, 6), 1)
    assert grid.shape(Placement.EDGE, 1) == (4, 4, 6)
    assert grid.shape(Placement.FACE, 1) == (3, 5, 5)
    assert grid.shape(Placement.CELL) == (3, 4, 5)
    np.testing.assert_allclose(grid.points(Placement.EDGE, 0)[0, 0, 0], [0.25, 0.0, 0.0])
    np.testing.assert_allclose(grid.points(Placement.FACE, 2)[0, 0, 0], [0.25, 0.25, 0.0])
    with pytest.raises(PlacementError):
        grid.shape(Placement.EDGE)


def test_field_validation():
    grid = Grid((0.0, 0.0, 0.0), 0.5, (4, 4, 4), 1)
    with pytest.raises(PlacementError):
        ScalarField(grid, np.zeros((3, 4, 4)))
    with pytest.raises(PlacementError):
        ScalarField(grid, np.zeros((4, 4, 4)), Placement.EDGE)
    with pytest.raises(PlacementError):
        VectorField(grid, (np.zeros((4, 4, 4)),) * 3)
    other = Grid((0.0, 0.0, 0.0), 0.25, (4, 4, 4), 1)
    with pytest.raises(PlacementError):
        VectorField.zeros(grid) + VectorField.zeros(other)
    with pytest.raises(ConfigurationError):
        Grid((0.0, 0.0, 0.0), 0.5, (3, 4, 4), 1)
    with pytest.raises(ConfigurationError):
        Grid((0.0, 0.0, 0.0), 0.0, (4, 4, 4), 1)


def test_fields_are_read_only():
    grid = Grid((0.0, 0.0, 0.0), 0.5, (4, 4, 4), 1)
    f = ScalarField(grid, np.zeros(grid.dims))
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


def test_ball_centre_sits_at_a_cell_centre():
    grid = Grid.around_ball((0.1, -0.2, 0.3), 1.0, 0.125, pad=4)
    offset = (np.array([0.1, -0.2, 0.3]) - np.array(grid.origin)) / grid.h - 0.5
    np.testing.assert_allclose(offset, np.round(offset), atol=1e-9)


def test_ball_must_fit_with_margin():
    grid = Grid((0.0, 0.0, 0.0), 0.125, (10, 10, 10), 4)
    with pytest.raises(ConfigurationError):
        make_ball_domain((0.5, 0.5, 0.5), 1.0, grid)


def test_ball_volume_and_fractions(ball):
    fractions = ball.node_fraction
    assert fractions.min() >= 0.0 and fractions.max() <= 1.0
    volume = float(np.sum(ball.node_mass)) * ball.grid.cell_volume
    assert volume == pytest.approx(4.0 * np.pi / 3.0, rel=0.05)
    assert not ball.active[0, 0, 0]


def test_box_quadrature_is_exact_for_constants():
    domain = make_ball_domain((0.75, 0.75, 0.75), 0.25, Grid((0.0, 0.0, 0.0), 0.25, (7, 7, 7), 1))
    ones = ScalarField(domain.grid, np.ones(domain.grid.dims))
    assert integrate(ones, domain, "box") == pytest.approx(6 ** 3 * 0.25 ** 3)
    with pytest.raises(ConfigurationError):
        integrate(ones, domain, "tube")


def test_neumann_laplacian_annihilates_constants(ball):
    op = ball.neumann
    assert np.max(np.abs(op.laplacian @ np.ones(op.size))) <= 1e-10
    assert abs(op.laplacian - op.laplacian.T).max() <= 1e-10
    assert op.link_tails.size == op.link_weight.size == op.link_heads.size


def test_dirichlet_poisson_is_exact_for_quadratics():
    grid = Grid((0.0, 0.0, 0.0), 0.1, (9, 10, 11), 1)
    p = grid.points()
    u = p[..., 0] ** 2 + 2.0 * p[..., 1] ** 2 - 3.0 * p[..., 2] ** 2 + p[..., 0] * p[..., 2]
    source = np.zeros(grid.dims)
    np.testing.assert_allclose(dirichlet_poisson(source, u, grid.h), u, atol=1e-10)
    v = p[..., 0] ** 2
    np.testing.assert_allclose(dirichlet_poisson(np.full(grid.dims, -2.0), v, grid.h), v, atol=1e-10)
