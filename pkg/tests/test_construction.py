import numpy as np
import pytest

from utils.construction import (assemble, build_modulus, build_phase, pierce_counts, tube_exponent, tube_radius,
                                wrap)
from utils.errors import ConfigurationError, ConstructionError, NumericalWarning
from utils.geometry import straight_curve

from conftest import ALPHA, EPSILON, N_EXPONENT


def test_tube_radius():
    q = tube_exponent(N_EXPONENT, ALPHA)
    assert q == pytest.approx(1.2)
    with pytest.warns(NumericalWarning):
        radius = tube_radius(EPSILON, N_EXPONENT, ALPHA)
    assert radius == pytest.approx(abs(np.log(EPSILON)) ** -q)
    with pytest.raises(ConfigurationError):
        tube_radius(0.5, N_EXPONENT, ALPHA)
    with pytest.raises(ConfigurationError):
        tube_radius(EPSILON, N_EXPONENT, 1.0)
    with pytest.raises(ConfigurationError):
        tube_radius(EPSILON, 0.0, ALPHA)


def test_wrap():
    np.testing.assert_allclose(wrap(np.array([0.0, 3.5 * np.pi, -np.pi])), [0.0, -0.5 * np.pi, -np.pi])


def test_pierce_counts_of_a_diameter(ball):
    counts = pierce_counts(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 3), ball)
    assert counts[0].sum() == 0 and counts[1].sum() == 0
    assert counts[2].min() == 0
    assert counts[2].sum() == 16


def test_modulus_needs_a_resolved_tube(profile):
    with pytest.raises(ConstructionError):
        build_modulus(np.zeros((4, 4, 4)), EPSILON, 0.1, profile, 0.125)
    d = np.array([0.0, 0.01, 0.3, 2.0])
    modulus = build_modulus(d, EPSILON, 0.6, profile, 0.125)
    assert modulus[0] == 0.0 and modulus[1] == 0.0
    assert 0.0 < modulus[2] < 1.0
    assert modulus[3] == 1.0


def test_configuration(ball, configuration, r_eps):
    cfg = configuration
    modulus = cfg.u.modulus[ball.active]
    assert modulus.max() <= 1.0 + 1e-12
    assert modulus.min() < 0.5
    assert cfg.r_eps == pytest.approx(r_eps)
    assert cfg.q == pytest.approx(1.2)
    assert 0.0 < cfg.normalization < 1.0
    assert cfg.core_nodes == 0
    assert cfg.closure_residual <= 1e-3
    summary = cfg.summary()
    assert summary["pierced_faces"] > 0
    assert summary["tree"] == "bfs"
    assert summary["faces_checked"] > 0
    assert cfg.A is not None and cfg.source.length == pytest.approx(2.0)


def test_depth_first_tree_gives_the_same_windings(ball, weight, profile, diameter, fields, configuration):
    source, framed = diameter
    other = assemble(source, framed, EPSILON, weight, profile, fields, ball, N_EXPONENT, ALPHA, tree="dfs")
    for a in range(3):
        np.testing.assert_array_equal(np.nan_to_num(other.windings[a]).round(),
                                      np.nan_to_num(configuration.windings[a]).round())


def test_under_resolved_curve_is_rejected(ball, weight, profile, diameter, fields):
    source, framed = diameter
    with pytest.raises(ConstructionError):
        assemble(source, framed, EPSILON, weight, profile, fields, ball, r_eps=0.1)


def test_build_phase_closes(ball, fields):
    bfs = build_phase(fields, ball, "bfs")
    dfs = build_phase(fields, ball, "dfs")
    assert bfs.closure_residual <= 1e-3 and dfs.closure_residual <= 1e-3
    op = ball.neumann
    assert bfs.phase.shape == (op.size,)
    assert len(bfs.increments) == len(op.link_tails)
