import json

import numpy as np
import pytest

from utils.cache_manager import CacheManager, RunManifest, StageRecord
from utils.grid import Grid, ScalarField


@pytest.fixture
def grid():
    return Grid((0.0, 0.0, 0.0), 0.5, (4, 4, 4), 1)


@pytest.fixture
def cache(tmp_path):
    return CacheManager.open(str(tmp_path), "abc", "desk", 1, {"name": "desk"})


def test_store_and_fetch(cache, grid):
    cache.start("pinning")
    cache.store("pinning", fields={"rho": ScalarField(grid, np.ones(grid.dims))},
                report={"residual": 1e-12}, arrays={"history": np.array([1.0, 0.1])},
                text={"table.csv": "a,b\n1,2\n"})
    assert not cache.is_current("pinning")
    cache.finish("pinning", {"residual": 1e-12})
    assert cache.is_current("pinning")
    assert set(cache.manifest.output_hashes()) == {
        "pinning/rho.glf", "pinning/report.json", "pinning/history.npy", "pinning/table.csv"}
    artifacts = cache.fetch("pinning", grid)
    assert cache.manifest.stages["pinning"].status == "cached"
    np.testing.assert_array_equal(artifacts.fields["rho"].values, np.ones(grid.dims))
    np.testing.assert_array_equal(artifacts.arrays["history"], [1.0, 0.1])
    assert artifacts.report == {"residual": 1e-12}
    assert artifacts.text["table.csv"] == "a,b\n1,2\n"
    assert cache.manifest.ok


def test_changed_output_invalidates(cache, grid, tmp_path):
    cache.start("profile")
    cache.store("profile", text={"profile.csv": "r,f\n0,0\n"})
    cache.finish("profile")
    (tmp_path / "profile" / "profile.csv").write_text("r,f\n0,1\n")
    assert not cache.is_current("profile")
    assert cache.fetch("profile") is None
    assert not cache.is_current("energy")


def test_failed_stage(cache):
    cache.start("bs")
    cache.fail("bs", RuntimeError("boom"))
    assert cache.manifest.failed_stages == ["bs"]
    assert not cache.manifest.ok
    record = cache.manifest.stages["bs"]
    assert record.error == "boom" and record.error_type == "RuntimeError"


def test_manifest_resume(cache, tmp_path):
    cache.start("pinning")
    cache.store("pinning", report={"iterations": 3})
    cache.finish("pinning")
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["config_hash"] == "abc" and saved["stages"]["pinning"]["status"] == "ok"

    resumed = CacheManager.open(str(tmp_path), "abc", "desk", 1)
    assert resumed.is_current("pinning")
    assert resumed.manifest.created == cache.manifest.created
    fresh = CacheManager.open(str(tmp_path), "other", "desk", 1)
    assert fresh.manifest.stages == {}

    (tmp_path / "manifest.json").write_text("{not json")
    assert CacheManager.open(str(tmp_path), "abc", "desk", 1).manifest.stages == {}


def test_manifest_round_trip():
    manifest = RunManifest("h", "run", 2, stages={"onset": StageRecord(status="skipped")})
    back = RunManifest.from_dict(manifest.to_dict())
    assert back.stages["onset"].status == "skipped"
    assert back.version == manifest.version
    assert not back.ok
