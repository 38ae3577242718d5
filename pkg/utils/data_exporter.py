import hashlib
import io
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from utils.errors import ConfigurationError
from utils.geometry import PolyCurve
from utils.grid import ComplexField, Grid, Placement, ScalarField, VectorField
from utils.profile import VortexProfile

logger = logging.getLogger(__name__)

MAGIC = b"GLF1"
HEADER = struct.Struct("<4s3id3di")
COMPLEX_CODE = 4           # placement code of complex node fields (real part, then imaginary part)

Field = Union[ScalarField, VectorField, ComplexField]


def file_hash(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


class DataExporter:
    """Class to persist fields, curves and tables of a run"""

    def __init__(self, float_format: str = '%.6f'):
        self.float_format = float_format

    # Binary fields

    def encode_field(self, field: Field) -> bytes:
        """
        Encode a field in the GLF1 layout

        Header: magic, dims (3 x int32), spacing, origin (3 x float64), placement code (int32);
        then float64 values in x-fastest order, vector components one after the other.
        """
        grid = field.grid
        if isinstance(field, ComplexField):
            code, arrays = COMPLEX_CODE, [field.values.real, field.values.imag]
        elif isinstance(field, VectorField):
            code, arrays = int(field.placement), list(field.components)
        else:
            code, arrays = int(field.placement), [field.values]
        header = HEADER.pack(MAGIC, *grid.dims, grid.spacing, *grid.origin, code)
        body = b"".join(np.asarray(a, dtype="<f8").ravel(order="F").tobytes() for a in arrays)
        return header + body

    def decode_field(self, payload: bytes, grid: Optional[Grid] = None, name: str = "") -> Field:
        """
        Decode GLF1 bytes

        Args:
            payload: File contents
            grid: Known grid to attach; must agree with the header
            name: Field name

        Returns:
            ScalarField, VectorField or ComplexField
        """
        if len(payload) < HEADER.size:
            raise ConfigurationError("field file is shorter than its header")
        magic, nx, ny, nz, spacing, ox, oy, oz, code = HEADER.unpack_from(payload)
        if magic != MAGIC:
            raise ConfigurationError(f"bad field magic {magic!r}")
        if grid is None:
            grid = Grid((ox, oy, oz), spacing, (nx, ny, nz))
        elif grid.dims != (nx, ny, nz) or not np.isclose(grid.spacing, spacing) \
                or not np.allclose(grid.origin, (ox, oy, oz)):
            raise ConfigurationError("field file was written on a different grid")
        values = np.frombuffer(payload, dtype="<f8", offset=HEADER.size)

        def take(start: int, shape) -> np.ndarray:
            size = int(np.prod(shape))
            if start + size > values.size:
                raise ConfigurationError("field file is truncated")
            return values[start:start + size].reshape(shape, order="F")

        if code == COMPLEX_CODE:
            size = int(np.prod(grid.dims))
            return ComplexField(grid, take(0, grid.dims) + 1j * take(size, grid.dims), name)
        placement = Placement(code)
        if placement in (Placement.NODE, Placement.CELL):
            return ScalarField(grid, take(0, grid.shape(placement)), placement, name)
        comps, start = [], 0
        for a in range(3):
            shape = grid.shape(placement, a)
            comps.append(take(start, shape))
            start += int(np.prod(shape))
        return VectorField(grid, tuple(comps), placement, name)

    def write_field(self, field: Field, path: Union[str, Path]) -> str:
        """Write a GLF1 file and return its SHA-256, or an empty string on failure"""
        try:
            payload = self.encode_field(field)
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_bytes(payload)
            return hashlib.sha256(payload).hexdigest()
        except OSError as e:
            logger.error("Error writing field %s: %s", path, e)
            return ""

    def read_field(self, path: Union[str, Path], grid: Optional[Grid] = None, name: str = "") -> Field:
        try:
            payload = Path(path).read_bytes()
        except OSError as exc:
            raise ConfigurationError(f"cannot read field file {path}: {exc}") from exc
        return self.decode_field(payload, grid, name or Path(path).stem)

    # CSV exports

    def field_to_csv(self, field: Field) -> str:
        """
        One row per grid location with coordinates and values

        Vector fields get one row per staggered component location with an ``axis`` column.
        """
        try:
            grid = field.grid
            frames = []
            if isinstance(field, VectorField):
                for a, comp in enumerate(field.components):
                    pts = grid.points(field.placement, a).reshape(-1, 3)
                    frames.append(pd.DataFrame({'axis': a, 'x': pts[:, 0], 'y': pts[:, 1], 'z': pts[:, 2],
                                                'value': comp.ravel()}))
            else:
                pts = grid.points(field.placement).reshape(-1, 3)
                frame = pd.DataFrame({'x': pts[:, 0], 'y': pts[:, 1], 'z': pts[:, 2]})
                if isinstance(field, ComplexField):
                    frame['real'] = field.values.real.ravel()
                    frame['imag'] = field.values.imag.ravel()
                    frame['modulus'] = np.abs(field.values).ravel()
                else:
                    frame['value'] = field.values.ravel()
                frames.append(frame)
            csv_buffer = io.StringIO()
            pd.concat(frames, ignore_index=True).to_csv(csv_buffer, index=False, float_format=self.float_format)
            return csv_buffer.getvalue()
        except Exception as e:
            logger.error("Error exporting field %s: %s", getattr(field, 'name', ''), e)
            return ""

    def fields_to_csv(self, fields: Dict[str, Field]) -> Dict[str, str]:
        return {name: self.field_to_csv(f) for name, f in fields.items()}

    def curve_to_csv(self, curve: PolyCurve) -> str:
        """Curve vertices with a ``# closed=<bool>`` header line"""
        try:
            frame = pd.DataFrame(curve.vertices, columns=['x', 'y', 'z'])
            csv_buffer = io.StringIO()
            csv_buffer.write(f"# closed={'true' if curve.closed else 'false'}\n")
            frame.to_csv(csv_buffer, index=False, float_format='%.12g')
            return csv_buffer.getvalue()
        except Exception as e:
            logger.error("Error exporting curve %s: %s", curve.name, e)
            return ""

    def curve_from_csv(self, text: str, name: str = "curve") -> PolyCurve:
        """Parse curve CSV text (x, y, z columns, optional ``# closed=`` header)"""
        first = text.splitlines()[0].strip().lower() if text.strip() else ""
        closed = first.replace(" ", "") == "#closed=true"
        frame = pd.read_csv(io.StringIO(text), comment='#')
        missing = {'x', 'y', 'z'} - set(frame.columns)
        if missing:
            raise ConfigurationError(f"curve {name} lacks columns {sorted(missing)}")
        return PolyCurve(frame[['x', 'y', 'z']].to_numpy(dtype=float), closed=closed, name=name)

    def read_curve(self, path: Union[str, Path], name: Optional[str] = None) -> PolyCurve:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read curve file {path}: {exc}") from exc
        return self.curve_from_csv(text, name or Path(path).stem)

    def profile_to_csv(self, profile: VortexProfile) -> str:
        try:
            table = profile.table()
            csv_buffer = io.StringIO()
            pd.DataFrame(table).to_csv(
                csv_buffer, index=False, float_format='%.12g')
            return csv_buffer.getvalue()
        except Exception as e:
            logger.error("Error exporting profile: %s", e)
            return ""

    def table_to_csv(self, rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
        """Sweep and extrapolation tables"""
        try:
            frame = pd.DataFrame(list(rows), columns=columns)
            csv_buffer = io.StringIO()
            frame.to_csv(csv_buffer, index=False, float_format=self.float_format)
            return csv_buffer.getvalue()
        except Exception as e:
            logger.error("Error exporting table: %s", e)
            return ""

    # JSON reports and plain files

    def to_json(self, report: Dict[str, Any]) -> str:
        try:
            return json.dumps(report, sort_keys=True, indent=2, default=_json_default)
        except (TypeError, ValueError) as e:
            logger.error("Error serializing report: %s", e)
            return ""

    def write_text(self, text: str, path: Union[str, Path]) -> str:
        """Write text and return its SHA-256, or an empty string on failure"""
        if not text:
            return ""
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
            return hashlib.sha256(text.encode("utf-8")).hexdigest()
        except OSError as e:
            logger.error("Error writing %s: %s", path, e)
            return ""

    def write_json(self, report: Dict[str, Any], path: Union[str, Path]) -> str:
        return self.write_text(self.to_json(report), path)
