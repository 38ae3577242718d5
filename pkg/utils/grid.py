"""Uniform Cartesian grid, staggered fields and discrete vector calculus.

Placements follow a single convention throughout the package:

* ``NODE``  grid points ``origin + h*(i, j, k)``; scalars and the order parameter.
* ``EDGE``  midpoints of the links between neighbouring nodes; component ``a``
  lives on links along axis ``a``.  These are the faces of the finite-volume
  control cells centred on the nodes.
* ``FACE``  plaquette centres; component ``a`` lives on plaquettes normal to ``a``.
* ``CELL``  cube centres.

The primal operators ``grad: NODE->EDGE``, ``curl: EDGE->FACE`` and
``div: FACE->CELL`` are differences along one axis, and the dual operators
``grad: CELL->FACE``, ``curl: FACE->EDGE``, ``div: EDGE->NODE`` are their
negative transposes (zero padding outside the box), so both chains satisfy
``curl(grad) = 0`` and ``div(curl) = 0`` exactly.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn, idstn
from scipy.interpolate import RegularGridInterpolator

from utils.errors import ConfigurationError, PlacementError

logger = logging.getLogger(__name__)


class Placement(IntEnum):
    NODE = 0
    EDGE = 1
    FACE = 2
    CELL = 3


REGIONS = ("omega", "tube", "omega_minus_tube", "box")


@dataclass(frozen=True)
class Grid:
    """Uniform grid over a bounding box with an integer safety margin"""

    origin: Tuple[float, float, float]
    spacing: float
    dims: Tuple[int, int, int]
    pad: int = 8

    def __post_init__(self):
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise ConfigurationError(f"grid spacing must be positive, got {self.spacing}")
        if len(self.dims) != 3 or any(int(n) < 4 for n in self.dims):
            raise ConfigurationError(f"grid dims must be >= 4 per axis, got {self.dims}")
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def around_ball(cls, center: Sequence[float], radius: float, spacing: float, pad: int = 8) -> "Grid":
        """
        Build a grid whose box contains the ball with ``pad`` cells of margin

        The ball centre sits at a cell centre, so straight curves through the
        centre along a coordinate axis pierce plaquettes at their midpoints.

        Args:
            center: Ball centre
            radius: Ball radius
            spacing: Grid spacing h
            pad: Margin in cells

        Returns:
            Grid instance
        """
        if radius <= 0 or spacing <= 0:
            raise ConfigurationError("radius and spacing must be positive")
        m = int(np.ceil(radius / spacing - 1e-9)) + int(pad)
        origin = np.asarray(center, dtype=float) - (m + 0.5) * spacing
        n = 2 * m + 2
        return cls(tuple(origin), spacing, (n, n, n), int(pad))

    @property
    def h(self) -> float:
        return self.spacing

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + self.spacing * (np.asarray(self.dims) - 1)

    def shape(self, placement: Placement, axis: Optional[int] = None) -> Tuple[int, int, int]:
        dims = list(self.dims)
        if placement == Placement.NODE:
            return tuple(dims)
        if placement == Placement.CELL:
            return tuple(n - 1 for n in dims)
        if axis is None:
            raise PlacementError(f"{placement.name} arrays need a component axis")
        if placement == Placement.EDGE:
            dims[axis] -= 1
            return tuple(dims)
        return tuple(n - 1 if b != axis else n for b, n in enumerate(dims))

    def offsets(self, placement: Placement, axis: Optional[int] = None) -> np.ndarray:
        half = 0.5 * self.spacing
        if placement == Placement.NODE:
            return np.zeros(3)
        if placement == Placement.CELL:
            return np.full(3, half)
        offset = np.zeros(3)
        if placement == Placement.EDGE:
            offset[axis] = half
        else:
            offset[:] = half
            offset[axis] = 0.0
        return offset

    def axes(self, placement: Placement = Placement.NODE, axis: Optional[int] = None) -> Tuple[np.ndarray, ...]:
        shape = self.shape(placement, axis)
        offset = self.offsets(placement, axis)
        return tuple(self.origin[b] + offset[b] + self.spacing * np.arange(shape[b]) for b in range(3))

    def points(self, placement: Placement = Placement.NODE, axis: Optional[int] = None) -> np.ndarray:
        xs = self.axes(placement, axis)
        mesh = np.meshgrid(*xs, indexing="ij")
        return np.stack(mesh, axis=-1)

    def contains(self, lo: np.ndarray, hi: np.ndarray, margin: float = 0.0) -> bool:
        return bool(np.all(np.asarray(lo) - margin >= np.asarray(self.origin) - 1e-12)
                    and np.all(np.asarray(hi) + margin <= self.upper + 1e-12))


def _readonly(values: np.ndarray, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    placement: Placement = Placement.NODE
    name: str = ""
    units: str = ""

    def __post_init__(self):
        if self.placement not in (Placement.NODE, Placement.CELL):
            raise PlacementError("scalar fields live on nodes or cells")
        values = _readonly(self.values, float)
        if values.shape != self.grid.shape(self.placement):
            raise PlacementError(f"scalar values {values.shape} do not match grid {self.grid.shape(self.placement)}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    components: Tuple[np.ndarray, np.ndarray, np.ndarray]
    placement: Placement = Placement.EDGE
    name: str = ""
    units: str = ""

    def __post_init__(self):
        if self.placement not in (Placement.EDGE, Placement.FACE):
            raise PlacementError("vector fields are staggered on edges or faces")
        if len(self.components) != 3:
            raise PlacementError("vector fields need three components")
        comps = []
        for a, comp in enumerate(self.components):
            arr = _readonly(comp, float)
            if arr.shape != self.grid.shape(self.placement, a):
                raise PlacementError(
                    f"component {a} has shape {arr.shape}, expected {self.grid.shape(self.placement, a)}")
            comps.append(arr)
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def zeros(cls, grid: Grid, placement: Placement = Placement.EDGE, name: str = "") -> "VectorField":
        return cls(grid, tuple(np.zeros(grid.shape(placement, a)) for a in range(3)), placement, name)

    def flat(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.components])

    @classmethod
    def from_flat(cls, grid: Grid, values: np.ndarray, placement: Placement, name: str = "") -> "VectorField":
        comps, start = [], 0
        for a in range(3):
            shape = grid.shape(placement, a)
            size = int(np.prod(shape))
            comps.append(values[start:start + size].reshape(shape))
            start += size
        return cls(grid, tuple(comps), placement, name)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(c)) if c.size else 0.0 for c in self.components))

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_compatible(self, other)
        return VectorField(self.grid, tuple(a + b for a, b in zip(self.components, other.components)), self.placement)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_compatible(self, other)
        return VectorField(self.grid, tuple(a - b for a, b in zip(self.components, other.components)), self.placement)

    def scale(self, factor: float) -> "VectorField":
        return VectorField(self.grid, tuple(factor * c for c in self.components), self.placement, self.name)


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: Grid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        values = _readonly(self.values, complex)
        if values.shape != self.grid.dims:
            raise PlacementError(f"complex values {values.shape} do not match grid {self.grid.dims}")
        object.__setattr__(self, "values", values)

    @property
    def placement(self) -> Placement:
        return Placement.NODE

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)


def _check_compatible(a, b):
    if a.grid != b.grid:
        raise PlacementError("fields live on different grids")
    if a.placement != b.placement:
        raise PlacementError(f"placement mismatch: {a.placement.name} vs {b.placement.name}")


def _diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return np.diff(values, axis=axis) / h


def _dual_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    widths = [(0, 0)] * values.ndim
    widths[axis] = (1, 1)
    return np.diff(np.pad(values, widths), axis=axis) / h


def grad(f: ScalarField) -> VectorField:
    h = f.grid.spacing
    if f.placement == Placement.NODE:
        return VectorField(f.grid, tuple(_diff(f.values, a, h) for a in range(3)), Placement.EDGE, f"grad {f.name}")
    return VectorField(f.grid, tuple(_dual_diff(f.values, a, h) for a in range(3)), Placement.FACE, f"grad {f.name}")


def curl(v: VectorField) -> VectorField:
    h = v.grid.spacing
    d = _diff if v.placement == Placement.EDGE else _dual_diff
    vx, vy, vz = v.components
    comps = (
        d(vz, 1, h) - d(vy, 2, h),
        d(vx, 2, h) - d(vz, 0, h),
        d(vy, 0, h) - d(vx, 1, h),
    )
    target = Placement.FACE if v.placement == Placement.EDGE else Placement.EDGE
    return VectorField(v.grid, comps, target, f"curl {v.name}")


def div(v: VectorField) -> ScalarField:
    h = v.grid.spacing
    if v.placement == Placement.FACE:
        values = sum(_diff(c, a, h) for a, c in enumerate(v.components))
        return ScalarField(v.grid, values, Placement.CELL, f"div {v.name}")
    values = sum(_dual_diff(c, a, h) for a, c in enumerate(v.components))
    return ScalarField(v.grid, values, Placement.NODE, f"div {v.name}")


def sample_scalar(grid: Grid, fn: Callable[[np.ndarray], np.ndarray],
                  placement: Placement = Placement.NODE, name: str = "") -> ScalarField:
    return ScalarField(grid, fn(grid.points(placement)), placement, name)


def sample_vector(grid: Grid, fn: Callable[[np.ndarray], np.ndarray],
                  placement: Placement = Placement.EDGE, name: str = "") -> VectorField:
    """Sample a point function returning (..., 3) at each component's own positions"""
    comps = tuple(fn(grid.points(placement, a))[..., a] for a in range(3))
    return VectorField(grid, comps, placement, name)


def edge_average(grid: Grid, fn: Callable[[np.ndarray], np.ndarray], name: str = "") -> VectorField:
    """Link averages of a smooth point function by Simpson's rule (line integral / h)"""
    comps = []
    for a in range(3):
        mid = grid.points(Placement.EDGE, a)
        step = np.zeros(3)
        step[a] = 0.5 * grid.spacing
        value = (fn(mid - step)[..., a] + 4.0 * fn(mid)[..., a] + fn(mid + step)[..., a]) / 6.0
        comps.append(value)
    return VectorField(grid, tuple(comps), Placement.EDGE, name)


def interpolator(grid: Grid, values: np.ndarray, placement: Placement = Placement.NODE,
                 axis: Optional[int] = None) -> RegularGridInterpolator:
    """Trilinear interpolator over one staggered sub-grid, extrapolating linearly outside"""
    return RegularGridInterpolator(grid.axes(placement, axis), values, method="linear",
                                   bounds_error=False, fill_value=None)


def _d1(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _eye(n: int) -> sp.csr_matrix:
    return sp.identity(n, format="csr")


def _kron3(a, b, c) -> sp.csr_matrix:
    return sp.kron(sp.kron(a, b), c, format="csr")


class DiscreteOperators:
    """Sparse matrices of the primal operators acting on C-order flattened arrays"""

    def __init__(self, grid: Grid):
        self.grid = grid

    @cached_property
    def grad(self) -> sp.csr_matrix:
        n0, n1, n2 = self.grid.dims
        blocks = [
            _kron3(_d1(n0), _eye(n1), _eye(n2)),
            _kron3(_eye(n0), _d1(n1), _eye(n2)),
            _kron3(_eye(n0), _eye(n1), _d1(n2)),
        ]
        return (sp.vstack(blocks, format="csr") / self.grid.spacing).tocsr()

    @cached_property
    def curl(self) -> sp.csr_matrix:
        n0, n1, n2 = self.grid.dims
        dz_ey = _kron3(_eye(n0), _eye(n1 - 1), _d1(n2))
        dy_ez = _kron3(_eye(n0), _d1(n1), _eye(n2 - 1))
        dz_ex = _kron3(_eye(n0 - 1), _eye(n1), _d1(n2))
        dx_ez = _kron3(_d1(n0), _eye(n1), _eye(n2 - 1))
        dx_ey = _kron3(_d1(n0), _eye(n1 - 1), _eye(n2))
        dy_ex = _kron3(_eye(n0 - 1), _d1(n1), _eye(n2))
        blocks = [
            [None, -dz_ey, dy_ez],
            [dz_ex, None, -dx_ez],
            [-dy_ex, dx_ey, None],
        ]
        return (sp.bmat(blocks, format="csr") / self.grid.spacing).tocsr()

    @cached_property
    def div(self) -> sp.csr_matrix:
        n0, n1, n2 = self.grid.dims
        blocks = [[
            _kron3(_d1(n0), _eye(n1 - 1), _eye(n2 - 1)),
            _kron3(_eye(n0 - 1), _d1(n1), _eye(n2 - 1)),
            _kron3(_eye(n0 - 1), _eye(n1 - 1), _d1(n2)),
        ]]
        return (sp.bmat(blocks, format="csr") / self.grid.spacing).tocsr()

    @cached_property
    def cell_grad(self) -> sp.csr_matrix:
        return (-self.div.T).tocsr()


def dirichlet_poisson(source: np.ndarray, boundary: np.ndarray, h: float) -> np.ndarray:
    """
    Solve -Δu = source on the interior of a uniform box with Dirichlet data

    The 7-point Laplacian is diagonalised by the type-I sine transform, so the
    solve is exact up to rounding.

    Args:
        source: Right-hand side on the full array (outer layer ignored)
        boundary: Array whose outer layer holds the Dirichlet values
        h: Spacing

    Returns:
        Full array with the boundary layer copied and the interior solved
    """
    u = np.array(boundary, dtype=float, copy=True)
    rhs = np.array(source[1:-1, 1:-1, 1:-1], dtype=float, copy=True)
    inv_h2 = 1.0 / h ** 2
    rhs[0, :, :] += u[0, 1:-1, 1:-1] * inv_h2
    rhs[-1, :, :] += u[-1, 1:-1, 1:-1] * inv_h2
    rhs[:, 0, :] += u[1:-1, 0, 1:-1] * inv_h2
    rhs[:, -1, :] += u[1:-1, -1, 1:-1] * inv_h2
    rhs[:, :, 0] += u[1:-1, 1:-1, 0] * inv_h2
    rhs[:, :, -1] += u[1:-1, 1:-1, -1] * inv_h2
    eig = np.zeros(rhs.shape)
    for a, m in enumerate(rhs.shape):
        k = np.arange(1, m + 1)
        lam = (2.0 - 2.0 * np.cos(np.pi * k / (m + 1))) * inv_h2
        shape = [1, 1, 1]
        shape[a] = m
        eig = eig + lam.reshape(shape)
    u[1:-1, 1:-1, 1:-1] = idstn(dstn(rhs, type=1) / eig, type=1)
    return u


@dataclass
class NeumannOperator:
    """Finite-volume graph Laplacian on the active nodes of a domain"""

    active: np.ndarray            # flat node indices of active nodes
    position: np.ndarray          # flat node index -> active position or -1
    mass: np.ndarray              # node volume fractions of active nodes
    gradient: sp.csr_matrix       # active nodes -> active links, (f_j - f_i)/h
    link_weight: np.ndarray       # link volume fractions of active links
    link_axis: np.ndarray
    link_index: Tuple[np.ndarray, np.ndarray, np.ndarray]   # flat EDGE indices per axis
    link_tails: np.ndarray = field(repr=False, default=None)    # active position of the lower node
    link_heads: np.ndarray = field(repr=False, default=None)
    laplacian: sp.csr_matrix = field(repr=False, default=None)

    def __post_init__(self):
        if self.laplacian is None:
            w = sp.diags(self.link_weight)
            self.laplacian = (-(self.gradient.T @ w @ self.gradient)).tocsr()

    @property
    def size(self) -> int:
        return int(self.active.size)

    def links_to_edges(self, grid: Grid, values: np.ndarray) -> VectorField:
        comps, start = [], 0
        for a in range(3):
            arr = np.zeros(int(np.prod(grid.shape(Placement.EDGE, a))))
            count = self.link_index[a].size
            arr[self.link_index[a]] = values[start:start + count]
            start += count
            comps.append(arr.reshape(grid.shape(Placement.EDGE, a)))
        return VectorField(grid, tuple(comps), Placement.EDGE)

    def edges_to_links(self, v: VectorField) -> np.ndarray:
        return np.concatenate([v.components[a].ravel()[self.link_index[a]] for a in range(3)])

    def nodes_to_active(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).ravel()[self.active]

    def active_to_nodes(self, grid: Grid, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full(int(np.prod(grid.dims)), fill, dtype=np.result_type(values, float))
        out[self.active] = values
        return out.reshape(grid.dims)

    def weighted_divergence(self, link_values: np.ndarray) -> np.ndarray:
        """Net weighted outflow per active node, the adjoint of ``gradient``"""
        return -(self.gradient.T @ (self.link_weight * link_values))


class Domain:
    """Region Omega given by a signed distance function (negative inside) on a grid"""

    def __init__(self, grid: Grid, distance: Callable[[np.ndarray], np.ndarray],
                 normal: Callable[[np.ndarray], np.ndarray], center: Sequence[float],
                 bounding_radius: float, name: str = "domain"):
        self.grid = grid
        self._distance = distance
        self._normal = normal
        self.center = np.asarray(center, dtype=float)
        self.bounding_radius = float(bounding_radius)
        self.name = name

    def distance(self, points: np.ndarray) -> np.ndarray:
        return self._distance(np.asarray(points, dtype=float))

    def normal(self, points: np.ndarray) -> np.ndarray:
        return self._normal(np.asarray(points, dtype=float))

    def project_to_boundary(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        for _ in range(3):
            points = points - self.distance(points)[..., None] * self.normal(points)
        return points

    @cached_property
    def node_distance(self) -> np.ndarray:
        return self.distance(self.grid.points())

    @cached_property
    def inside(self) -> np.ndarray:
        return self.node_distance < 0.0

    @cached_property
    def node_fraction(self) -> np.ndarray:
        """Linear-ramp volume fraction of each node's control cell inside Omega"""
        normals = self.normal(self.grid.points())
        width = self.grid.spacing * np.maximum(np.sum(np.abs(normals), axis=-1), 1.0)
        return np.clip(0.5 - self.node_distance / width, 0.0, 1.0)

    @cached_property
    def active(self) -> np.ndarray:
        return self.node_fraction > 0.0

    def fraction(self, placement: Placement, axis: Optional[int] = None) -> np.ndarray:
        f = self.node_fraction
        if placement == Placement.NODE:
            return f
        averaged_axes = [axis] if placement == Placement.EDGE else (
            [b for b in range(3) if b != axis] if placement == Placement.FACE else [0, 1, 2])
        for b in averaged_axes:
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[b] = slice(None, -1)
            hi[b] = slice(1, None)
            f = 0.5 * (f[tuple(lo)] + f[tuple(hi)])
        return f

    @cached_property
    def link_weights(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Volume fraction of active links (both end nodes active), zero elsewhere"""
        weights = []
        for a in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            both = self.active[tuple(lo)] & self.active[tuple(hi)]
            weights.append(np.where(both, self.fraction(Placement.EDGE, a), 0.0))
        return tuple(weights)

    @cached_property
    def node_mass(self) -> np.ndarray:
        return np.where(self.active, self.node_fraction, 0.0)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Inside nodes with at least one face neighbour outside Omega"""
        inside = self.inside
        padded = np.pad(inside, 1, constant_values=False)
        outside_neighbour = np.zeros_like(inside)
        for a in range(3):
            for shift in (-1, 1):
                rolled = np.roll(padded, shift, axis=a)[1:-1, 1:-1, 1:-1]
                outside_neighbour |= ~rolled
        return inside & outside_neighbour

    @cached_property
    def operators(self) -> DiscreteOperators:
        return DiscreteOperators(self.grid)

    @cached_property
    def neumann(self) -> NeumannOperator:
        grid = self.grid
        n_nodes = int(np.prod(grid.dims))
        active = np.flatnonzero(self.active.ravel())
        position = -np.ones(n_nodes, dtype=np.int64)
        position[active] = np.arange(active.size)
        node_id = np.arange(n_nodes).reshape(grid.dims)
        rows, cols, vals, weights, axes, link_index, tails, heads = [], [], [], [], [], [], [], []
        offset = 0
        for a in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            w = self.link_weights[a].ravel()
            keep = np.flatnonzero(w > 0.0)
            i_nodes = position[node_id[tuple(lo)].ravel()[keep]]
            j_nodes = position[node_id[tuple(hi)].ravel()[keep]]
            ids = offset + np.arange(keep.size)
            rows.extend([ids, ids])
            cols.extend([i_nodes, j_nodes])
            vals.extend([-np.ones(keep.size), np.ones(keep.size)])
            weights.append(w[keep])
            axes.append(np.full(keep.size, a))
            link_index.append(keep)
            tails.append(i_nodes)
            heads.append(j_nodes)
            offset += keep.size
        gradient = sp.csr_matrix(
            (np.concatenate(vals) / grid.spacing, (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, active.size))
        logger.debug("neumann operator: %d nodes, %d links", active.size, offset)
        return NeumannOperator(
            active=active,
            position=position,
            mass=self.node_fraction.ravel()[active],
            gradient=gradient,
            link_weight=np.concatenate(weights),
            link_axis=np.concatenate(axes),
            link_index=tuple(link_index),
            link_tails=np.concatenate(tails),
            link_heads=np.concatenate(heads),
        )

    def quadrature_weights(self, placement: Placement, axis: Optional[int] = None, region: str = "omega",
                           distance: Optional[np.ndarray] = None, radius: Optional[float] = None) -> np.ndarray:
        if region not in REGIONS:
            raise ConfigurationError(f"unknown integration region '{region}'")
        grid = self.grid
        if region == "box":
            weights = np.full(grid.shape(placement, axis), grid.cell_volume)
            if placement == Placement.NODE:
                for a in range(3):
                    index = [slice(None)] * 3
                    for end in (0, -1):
                        index[a] = end
                        weights[tuple(index)] *= 0.5
            return weights
        if placement == Placement.NODE:
            weights = grid.cell_volume * self.node_mass
        elif placement == Placement.EDGE:
            weights = grid.cell_volume * self.link_weights[axis]
        else:
            weights = grid.cell_volume * self.fraction(placement, axis)
        if region == "omega":
            return weights
        if distance is None or radius is None:
            raise ConfigurationError("tube regions need a distance array and a radius")
        in_tube = np.asarray(distance) < radius
        return np.where(in_tube, weights, 0.0) if region == "tube" else np.where(in_tube, 0.0, weights)


def make_ball_domain(center: Sequence[float], radius: float, grid: Grid) -> Domain:
    """
    Ball domain with exact signed distance |x - center| - radius

    Args:
        center: Ball centre
        radius: Ball radius
        grid: Grid that must contain the ball with its pad margin

    Returns:
        Domain instance
    """
    c = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ConfigurationError(f"ball radius must be positive, got {radius}")
    if not grid.contains(c - radius, c + radius, margin=grid.pad * grid.spacing):
        raise ConfigurationError(
            f"ball (center {tuple(c)}, radius {radius}) with {grid.pad}-cell margin does not fit the grid box")

    def distance(points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - c, axis=-1) - radius

    def normal(points: np.ndarray) -> np.ndarray:
        rel = points - c
        norm = np.linalg.norm(rel, axis=-1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        out = rel / safe
        return np.where(norm > 0, out, np.array([0.0, 0.0, 1.0]))

    return Domain(grid, distance, normal, c, radius, name="ball")


def integrate(f: ScalarField, domain: Domain, region: str = "omega",
              distance: Optional[np.ndarray] = None, radius: Optional[float] = None) -> float:
    """
    Cut-cell quadrature of a scalar field

    Args:
        f: Scalar field on nodes or cells
        domain: Domain providing volume fractions
        region: One of 'omega', 'tube', 'omega_minus_tube', 'box'
        distance: Distance to the curve at the field's placement (tube regions)
        radius: Tube radius (tube regions)

    Returns:
        Integral value
    """
    if f.grid != domain.grid:
        raise PlacementError("field and domain live on different grids")
    weights = domain.quadrature_weights(f.placement, None, region, distance, radius)
    return float(np.sum(weights * f.values))


def describe(grid: Grid) -> Dict[str, object]:
    return {"origin": list(grid.origin), "spacing": grid.spacing, "dims": list(grid.dims), "pad": grid.pad}


def faces_touching_links(grid: Grid, link_flags: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Per face: True when any of its four bounding links is flagged"""
    out = []
    for a in range(3):
        b, c = [x for x in range(3) if x != a]
        hit = np.zeros(grid.shape(Placement.FACE, a), dtype=bool)
        for along, across in ((b, c), (c, b)):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[across] = slice(None, -1)
            hi[across] = slice(1, None)
            hit |= link_flags[along][tuple(lo)] | link_flags[along][tuple(hi)]
        out.append(hit)
    return out


def faces_touching_nodes(grid: Grid, node_flags: np.ndarray) -> List[np.ndarray]:
    """Per face: True when any of its four corner nodes is flagged"""
    out = []
    for a in range(3):
        b, c = [x for x in range(3) if x != a]
        hit = np.zeros(grid.shape(Placement.FACE, a), dtype=bool)
        for sb in (slice(None, -1), slice(1, None)):
            for sc in (slice(None, -1), slice(1, None)):
                index = [slice(None)] * 3
                index[b], index[c] = sb, sc
                hit |= node_flags[tuple(index)]
        out.append(hit)
    return out
