import numpy as np
import pytest

from utils.errors import ConfigurationError
from utils.profile import (ProfileSolver, core_remainder, far_field, gamma_constant, normalized_modulus, radial_energy,
                           solve_profile)


def test_profile_solution(profile):
    assert profile.residual <= 1e-8
    assert abs(profile.f[0]) <= 1e-10
    assert np.all(np.diff(profile.f) >= -1e-10)
    assert profile.f.max() <= 1.0
    assert profile.slope == pytest.approx(0.5832, abs=1e-3)
    assert profile(profile.r_max) == pytest.approx(far_field(profile.r_max), abs=1e-8)


def test_profile_outside_mesh_uses_far_field(profile):
    r = np.array([150.0, 400.0])
    np.testing.assert_allclose(profile(r), far_field(r))
    assert profile.derivative(np.array([0.0]))[0] == profile.slope
    assert profile(-2.0) == pytest.approx(profile(2.0))


def test_profile_rejects_coarse_setups():
    with pytest.raises(ConfigurationError):
        solve_profile(10.0, 4000)
    with pytest.raises(ConfigurationError):
        solve_profile(100.0, 500)


def test_gamma_and_core_remainder(profile):
    gamma = gamma_constant(profile)
    assert gamma.converged
    assert gamma.uncertainty <= 1e-4
    assert len(gamma.table) == 5
    assert set(gamma.to_dict()) == {"gamma", "uncertainty", "converged", "table"}
    assert abs(core_remainder(profile, 50.0, gamma.value)) <= 1e-3
    with pytest.raises(ConfigurationError):
        radial_energy(profile, 2.0 * profile.r_max)


@pytest.mark.slow
def test_gamma_is_resolution_independent(profile):
    coarse = gamma_constant(solve_profile(100.0, 2000)).value
    assert coarse == pytest.approx(gamma_constant(profile).value, rel=5e-5)


def test_normalized_modulus(profile):
    d = np.array([0.0, 0.05, 0.1, 0.2, 0.5])
    values = normalized_modulus(profile, d, 0.2, 0.2)
    assert abs(values[0]) <= 1e-10
    assert values[-1] == 1.0
    assert values[3] == pytest.approx(1.0)
    assert np.all(np.diff(values) >= 0.0)


def test_default_solve(profile):
    assert profile.r_max == 100.0
    assert profile.residual <= 1e-10
    assert np.all(np.diff(profile.f) >= -1e-10)
    assert profile.f.max() < 1.0
    assert profile.slope == pytest.approx(profile.derivative(np.array([1e-9]))[0], abs=1e-6)
    quarter = profile.r[:-1] + 0.25 * np.diff(profile.r)
    assert ProfileSolver._equation_residual(profile.solution, quarter[quarter > 1e-6]) <= 1e-6


def test_profile_matches_linearization_near_axis(profile):
    r = np.array([1e-3, 2e-3])
    np.testing.assert_allclose(profile(r), profile.slope * r, rtol=1e-5)


@pytest.mark.parametrize("r_max, n", [(20.0, 2000), (40.0, 2000)])
def test_short_domains_converge(r_max, n):
    short = solve_profile(r_max, n)
    assert short.residual <= 1e-10
    assert short.f.max() < 1.0
    assert short.slope == pytest.approx(0.5832, abs=2e-3)
