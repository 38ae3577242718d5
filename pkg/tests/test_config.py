import pytest

from utils.config import RunConfig, builtin_config, load_config
from utils.errors import ConfigurationError, NumericalWarning

DESK_TOML = """
name = "desk"
seed = 3

[grid]
spacing = 0.125
pad = 4

[pinning]
epsilon = [0.2]
n_exponent = 0.1
alpha = 0.5

[curve]
source = "diameter"
"""


def test_builtin_config_is_valid():
    config = load_config("ball-rho1")
    assert config.name == "ball-rho1"
    assert config.epsilon == pytest.approx(0.1)
    assert config.admissible_epsilons() == [0.2, 0.14, 0.1]
    assert config.tube_radius(0.1) >= 4.0 * config.grid.spacing
    with pytest.raises(ConfigurationError):
        builtin_config("ball-rho2")


def test_toml_loading(tmp_path):
    path = tmp_path / "desk.toml"
    path.write_text(DESK_TOML)
    config = load_config(str(path))
    assert config.name == "desk" and config.seed == 3
    assert config.grid.spacing == 0.125
    assert config.pinning.epsilon == (0.2,)
    assert config.curve.source == "diameter"
    assert config.isoflux.stride == 2


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "absent.toml"))
    broken = tmp_path / "broken.toml"
    broken.write_text("[grid\nspacing = ")
    with pytest.raises(ConfigurationError):
        load_config(str(broken))


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"grids": {}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"grid": {"spacing": 0.1, "step": 2}})
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"grid": 0.1})


@pytest.mark.parametrize("section, changes", [
    ("grid", {"spacing": -0.1}),
    ("pinning", {"b": 1.5}),
    ("pinning", {"generator": "stripes"}),
    ("pinning", {"value": 0.2}),
    ("pinning", {"epsilon": (0.5,)}),
    ("pinning", {"epsilon": ()}),
    ("applied", {"eta": 0.6}),
    ("applied", {"h_ex": (1.0, 0.5)}),
    ("applied", {"h_ex": (0.0, 100.0)}),
    ("curve", {"source": "spline"}),
    ("curve", {"source": "file"}),
    ("construction", {"tree": "random"}),
    ("tolerances", {"pinning": 0.0}),
])
def test_validation_errors(section, changes):
    with pytest.raises(ConfigurationError):
        builtin_config("ball-rho1").with_section(section, **changes).validate()


def test_bad_override():
    with pytest.raises(ConfigurationError):
        builtin_config("ball-rho1").with_section("grid", step=1)
    with pytest.raises(ConfigurationError):
        builtin_config("ball-rho1").with_section("plots", dpi=100)


def test_under_resolved_epsilon():
    config = builtin_config("ball-rho1").with_section("pinning", epsilon=(0.2, 0.14, 0.05))
    with pytest.raises(ConfigurationError):
        config.validate()
    with pytest.warns(NumericalWarning):
        assert config.admissible_epsilons(sweep=True) == [0.2, 0.14]
    assert "1.5h" in config.resolution_problem(0.05)
    assert config.resolution_problem(0.2) is None


def test_config_hash():
    a = builtin_config("ball-rho1")
    assert a.config_hash == builtin_config("ball-rho1").config_hash
    assert len(a.config_hash) == 64
    assert a.with_section("grid", spacing=0.125).config_hash != a.config_hash
    assert RunConfig.from_dict(a.to_dict()).config_hash == a.config_hash
