import io

import numpy as np
import pandas as pd
import pytest

from utils.data_exporter import HEADER, DataExporter, file_hash
from utils.errors import ConfigurationError
from utils.geometry import PolyCurve
from utils.grid import ComplexField, Grid, Placement, ScalarField, VectorField


@pytest.fixture
def grid():
    return Grid((0.0, -1.0, 0.5), 0.25, (4, 5, 6), 2)


@pytest.fixture
def exporter():
    return DataExporter()


def test_field_files(tmp_path, grid, exporter, rng):
    scalar = ScalarField(grid, rng.normal(size=grid.dims))
    faces = VectorField(grid, tuple(rng.normal(size=grid.shape(Placement.FACE, a)) for a in range(3)),
                        Placement.FACE)
    complex_ = ComplexField(grid, rng.normal(size=grid.dims) + 1j * rng.normal(size=grid.dims))
    for name, field in (("s", scalar), ("b", faces), ("u", complex_)):
        path = tmp_path / f"{name}.glf"
        digest = exporter.write_field(field, path)
        assert digest == file_hash(path)
        back = exporter.read_field(path, grid)
        assert back.placement == field.placement
        assert back.name == name
        if isinstance(field, VectorField):
            for a in range(3):
                np.testing.assert_array_equal(back.components[a], field.components[a])
        else:
            np.testing.assert_array_equal(back.values, field.values)


def test_glf_layout_is_x_fastest(grid, exporter):
    values = np.arange(np.prod(grid.dims), dtype=float).reshape(grid.dims)
    payload = exporter.encode_field(ScalarField(grid, values))
    body = np.frombuffer(payload, dtype="<f8", offset=HEADER.size)
    assert body[1] == values[1, 0, 0]
    assert body[grid.dims[0]] == values[0, 1, 0]
    assert len(payload) == HEADER.size + 8 * values.size


def test_corrupt_field_files(grid, exporter):
    payload = exporter.encode_field(ScalarField(grid, np.zeros(grid.dims)))
    with pytest.raises(ConfigurationError):
        exporter.decode_field(b"XXXX" + payload[4:])
    with pytest.raises(ConfigurationError):
        exporter.decode_field(payload[:HEADER.size + 16])
    with pytest.raises(ConfigurationError):
        exporter.decode_field(payload[:10])
    other = Grid((0.0, 0.0, 0.0), 0.25, (4, 5, 6), 2)
    with pytest.raises(ConfigurationError):
        exporter.decode_field(payload, other)
    decoded = exporter.decode_field(payload)
    assert decoded.grid.dims == grid.dims and decoded.grid.origin == grid.origin


def test_curve_csv(tmp_path, exporter):
    square = PolyCurve([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], closed=True, name="square")
    text = exporter.curve_to_csv(square)
    assert text.startswith("# closed=true")
    path = tmp_path / "square.csv"
    path.write_text(text)
    back = exporter.read_curve(path)
    assert back.closed and back.name == "square"
    np.testing.assert_allclose(back.vertices, square.vertices)
    plain = exporter.curve_from_csv("x,y,z\n0,0,0\n0,0,1\n")
    assert not plain.closed and len(plain) == 2
    with pytest.raises(ConfigurationError):
        exporter.curve_from_csv("x,y\n0,0\n1,1\n")
    with pytest.raises(ConfigurationError):
        exporter.read_curve(tmp_path / "absent.csv")


def test_field_csv(grid, exporter):
    edges = VectorField.zeros(grid, Placement.EDGE)
    frame = pd.read_csv(io.StringIO(exporter.field_to_csv(edges)))
    assert list(frame.columns) == ["axis", "x", "y", "z", "value"]
    assert len(frame) == sum(int(np.prod(grid.shape(Placement.EDGE, a))) for a in range(3))
    u = ComplexField(grid, np.full(grid.dims, 3.0 + 4.0j))
    frame = pd.read_csv(io.StringIO(exporter.field_to_csv(u)))
    assert np.allclose(frame["modulus"], 5.0)


def test_json_and_tables(tmp_path, exporter):
    report = {"value": np.float64(1.5), "array": np.arange(3), "path": tmp_path}
    assert '"value": 1.5' in exporter.to_json(report)
    assert exporter.to_json({"bad": object()}) == ""
    assert exporter.write_text("", tmp_path / "empty.txt") == ""
    csv = exporter.table_to_csv([{"epsilon": 0.2, "free_energy": 1.0}])
    assert csv.splitlines()[0] == "epsilon,free_energy"
