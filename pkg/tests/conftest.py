import numpy as np
import pytest

from utils.biot_savart import solve_jA
from utils.construction import assemble, tube_radius
from utils.geometry import straight_curve
from utils.grid import Grid, make_ball_domain
from utils.isoflux import extend_curve
from utils.meissner import solve_B0, uniform_applied_field
from utils.pinning import unit_weight
from utils.profile import solve_profile

EPSILON = 0.2
N_EXPONENT = 0.1
ALPHA = 0.5


@pytest.fixture(scope="session")
def ball():
    """Unit ball at h = 1/8 with a four-cell margin"""
    grid = Grid.around_ball((0.0, 0.0, 0.0), 1.0, 0.125, pad=4)
    return make_ball_domain((0.0, 0.0, 0.0), 1.0, grid)


@pytest.fixture(scope="session")
def profile():
    return solve_profile()


@pytest.fixture(scope="session")
def weight(ball):
    return unit_weight(ball, EPSILON)


@pytest.fixture(scope="session")
def r_eps():
    return tube_radius(EPSILON, N_EXPONENT, ALPHA)


@pytest.fixture(scope="session")
def diameter(ball, r_eps):
    """The z-diameter of the ball and its closed, framed extension"""
    return extend_curve(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 32, "diameter"), ball, r_eps)


@pytest.fixture(scope="session")
def fields(ball, diameter):
    return solve_jA(diameter[1], ball)


@pytest.fixture(scope="session")
def meissner(ball, weight):
    return solve_B0(weight, uniform_applied_field(ball.grid), ball)


@pytest.fixture(scope="session")
def configuration(ball, weight, profile, diameter, fields):
    source, framed = diameter
    return assemble(source, framed, EPSILON, weight, profile, fields, ball, N_EXPONENT, ALPHA)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
