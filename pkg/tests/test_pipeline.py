import numpy as np
import pytest

from components.pipeline import Lab, build_domain, epsilon_sweep, run_pipeline, stage_key
from utils.config import load_config
from utils.errors import ConfigurationError
from utils.metrics_calculator import MetricsCalculator

DESK_TOML = """
name = "desk"

[grid]
spacing = 0.125
pad = 4

[pinning]
epsilon = [0.2]
n_exponent = 0.1
alpha = 0.5

[curve]
source = "diameter"

[isoflux]
polish = false

[construction]
test_fields = 8
"""


@pytest.fixture
def desk(tmp_path):
    path = tmp_path / "desk.toml"
    path.write_text(DESK_TOML)
    return load_config(str(path))


def test_build_domain(desk):
    domain = build_domain(desk)
    assert domain.grid.spacing == 0.125
    assert domain.grid.pad == 4
    assert domain.name == "ball"


def test_stage_keys():
    assert stage_key("profile") == "profile"
    assert stage_key("pinning", 0.2) == "pinning/eps-0.2"


def test_pinning_stage_is_cached(desk, tmp_path):
    out = str(tmp_path / "run")
    first = Lab(desk, out).pinning(0.2)
    assert first.residual <= 1e-10
    np.testing.assert_allclose(first.rho.values[build_domain(desk).active], 1.0)

    lab = Lab(desk, out)
    second = lab.pinning(0.2)
    assert lab.manifest.stages["pinning/eps-0.2"].status == "cached"
    np.testing.assert_array_equal(second.rho.values, first.rho.values)
    assert second.iterations == first.iterations
    assert second.holder is not None and second.holder.alpha == first.holder.alpha


def test_other_config_starts_fresh(desk, tmp_path):
    out = str(tmp_path / "run")
    Lab(desk, out).pinning(0.2)
    other = desk.with_section("pinning", value=0.81)
    lab = Lab(other, out)
    assert lab.manifest.stages == {}
    weight = lab.pinning(0.2)
    np.testing.assert_allclose(weight.rho.values[lab.domain.active], 0.9, atol=1e-10)


def test_diameter_curve(desk, tmp_path):
    lab = Lab(desk, str(tmp_path))
    source, framed = lab.curve(None, 0.2)
    assert not source.closed and framed.curve.closed
    radius = desk.tube_radius(0.2)
    assert np.max(source.segment_lengths) <= 0.25 * radius + 1e-12
    np.testing.assert_allclose(source.vertices[[0, -1]], [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])


def test_sweep_needs_three_epsilons(desk, tmp_path):
    with pytest.raises(ConfigurationError):
        epsilon_sweep(desk, [0.2, 0.19], str(tmp_path))


@pytest.mark.slow
def test_full_desk_run(desk, tmp_path):
    manifest = run_pipeline(desk, str(tmp_path), plot=False)
    assert manifest.ok, manifest.failed_stages
    keys = set(manifest.stages)
    assert {"profile", "pinning/eps-0.2", "construct/eps-0.2", "energy/eps-0.2", "onset/eps-0.2"} <= keys
    assert (tmp_path / "manifest.json").is_file()
    assert "construct/eps-0.2/u.glf" in manifest.output_hashes()

    again = run_pipeline(desk, str(tmp_path), plot=False)
    assert again.stages["profile"].status == "cached"
    assert again.stages["meissner/eps-0.2"].status == "cached"


@pytest.mark.slow
def test_sweep_slope_scales_with_the_pinning_value(desk, tmp_path):
    epsilons = [0.3, 0.25, 0.2]
    unit = epsilon_sweep(desk, epsilons, str(tmp_path / "unit"))
    pinned = epsilon_sweep(desk.with_section("pinning", value=0.64), epsilons, str(tmp_path / "pinned"))
    assert unit.attrs["slope"] > 0.0
    assert MetricsCalculator().slope_ratio(unit, pinned) == pytest.approx(0.64, rel=0.25)
