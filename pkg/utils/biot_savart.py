import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg

from utils.errors import ConvergenceError, GeometryError, SolverError
from utils.geometry import CurveLocator, FramedCurve, Tube, length_in_domain
from utils.grid import Domain, Placement, ScalarField, VectorField, curl, dirichlet_poisson, div
from utils.pinning import fill_inactive

logger = logging.getLogger(__name__)

SINGULAR_DISTANCE = 1e-12


def segment_field(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Closed-form field 1/2 int (G - p) x G' / |G - p|^3 of one straight segment

    Args:
        p: Points (..., 3)
        a: Segment start (3,) or broadcastable (..., 3)
        b: Segment end

    Returns:
        Field values (..., 3)
    """
    p = np.asarray(p, dtype=float)
    r1 = np.asarray(a, dtype=float) - p
    r2 = np.asarray(b, dtype=float) - p
    u = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    cross = np.cross(r1, u)
    cross2 = np.einsum("...c,...c->...", cross, cross)
    n1 = np.linalg.norm(r1, axis=-1)
    n2 = np.linalg.norm(r2, axis=-1)
    u2 = np.einsum("...c,...c->...", u, u)
    dist2 = cross2 / u2
    along = -np.einsum("...c,...c->...", r1, u) / u2
    on_segment = (dist2 < SINGULAR_DISTANCE ** 2) & (along >= -1e-12) & (along <= 1.0 + 1e-12)
    if np.any(on_segment):
        raise SolverError("Biot-Savart evaluation on the curve")
    collinear = dist2 < SINGULAR_DISTANCE ** 2
    scale = (np.einsum("...c,...c->...", u, r2) / n2 - np.einsum("...c,...c->...", u, r1) / n1)
    safe = np.where(collinear, 1.0, cross2)
    return np.where(collinear[..., None], 0.0, 0.5 * cross * (scale / safe)[..., None])


class BiotSavartField:
    """Class to evaluate the Biot-Savart field of a polyline"""

    def __init__(self, framed: FramedCurve, chunk_size: int = 2_000_000, require_closed: bool = True):
        if require_closed and not framed.closed:
            raise GeometryError("the Biot-Savart field needs a closed curve; extend the curve first")
        self.framed = framed
        self.chunk_size = chunk_size
        self._a = framed.curve.segment_starts
        self._b = framed.curve.segment_ends

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 3)
        out = np.zeros_like(flat)
        rows = max(1, self.chunk_size // max(len(self._a), 1))
        for start in range(0, len(flat), rows):
            p = flat[start:start + rows, None, :]
            out[start:start + rows] = segment_field(p, self._a[None], self._b[None]).sum(axis=1)
        return out.reshape(points.shape)

    def line_integral(self, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
        """Simpson line integrals of the field along straight pieces p0 -> p1"""
        mid = 0.5 * (p0 + p1)
        values = (self(p0) + 4.0 * self(mid) + self(p1)) / 6.0
        return np.einsum("nc,nc->n", values, p1 - p0)

    def circulation(self, loop: np.ndarray, pieces: int = 16) -> float:
        """Circulation around a closed polygon, each side split into ``pieces``"""
        loop = np.asarray(loop, dtype=float)
        starts = loop
        ends = np.roll(loop, -1, axis=0)
        t = np.arange(pieces) / pieces
        p0 = (starts[:, None, :] + t[None, :, None] * (ends - starts)[:, None, :]).reshape(-1, 3)
        p1 = (starts[:, None, :] + (t + 1.0 / pieces)[None, :, None] * (ends - starts)[:, None, :]).reshape(-1, 3)
        return float(np.sum(self.line_integral(p0, p1)))

    def sample(self, grid, placement: Placement = Placement.EDGE) -> VectorField:
        comps = tuple(self(grid.points(placement, a))[..., a] for a in range(3))
        return VectorField(grid, comps, placement, "X")


def eval_X(p: np.ndarray, framed: FramedCurve) -> np.ndarray:
    return BiotSavartField(framed)(p)


def near_split(p: np.ndarray, tube: Tube) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split X = Y + h near the curve, Y being the field of the tangent line at the nearest point

    Args:
        p: Points inside the tube (..., 3)
        tube: Tube around the source curve

    Returns:
        (Y, h) arrays of shape (..., 3)
    """
    p = np.asarray(p, dtype=float)
    c = tube.coords(p)
    if not np.all(c["inside"]):
        raise GeometryError("near_split evaluated outside the tube")
    offset = c["foot"] - p
    dist2 = np.einsum("...c,...c->...", offset, offset)
    if np.any(dist2 < SINGULAR_DISTANCE ** 2):
        raise SolverError("near_split evaluated on the curve")
    tangent = tube.framed.tangents[c["segment"]]
    y = np.cross(offset, tangent) / dist2[..., None]
    x = BiotSavartField(tube.framed, require_closed=False)(p)
    return y, x - y


def _azimuth(points: np.ndarray, origin: np.ndarray, tangent: np.ndarray, e1: np.ndarray) -> np.ndarray:
    rel = points - origin
    e2 = np.cross(tangent, e1)
    return np.arctan2(np.einsum("nc,nc->n", rel, e2), np.einsum("nc,nc->n", rel, e1))


def link_circulations(field_: BiotSavartField, p0: np.ndarray, p1: np.ndarray, locator: CurveLocator,
                      near_radius: float) -> np.ndarray:
    """
    Line integrals of X over straight links

    Far links use Simpson's rule.  Links whose midpoint lies within
    ``near_radius`` of the curve integrate the tangent-line part exactly as an
    azimuth difference and the smooth remainder by Simpson's rule.
    """
    mid = 0.5 * (p0 + p1)
    proj = locator.project(mid)
    near = proj["distance"] < near_radius
    out = np.empty(len(p0))
    far = ~near
    if np.any(far):
        out[far] = field_.line_integral(p0[far], p1[far])
    if np.any(near):
        q = proj["foot"][near]
        seg = proj["segment"][near]
        tangent = field_.framed.tangents[seg]
        e1 = field_.framed.e1[seg]
        a, b, m = p0[near], p1[near], mid[near]
        dtheta = _azimuth(b, q, tangent, e1) - _azimuth(a, q, tangent, e1)
        dtheta = (dtheta + np.pi) % (2.0 * np.pi) - np.pi

        def line_field(x: np.ndarray) -> np.ndarray:
            off = q - x
            off = off - np.einsum("nc,nc->n", off, tangent)[:, None] * tangent
            d2 = np.einsum("nc,nc->n", off, off)
            return np.cross(off, tangent) / d2[:, None]

        rem = ((field_(a) - line_field(a)) + 4.0 * (field_(m) - line_field(m)) + (field_(b) - line_field(b))) / 6.0
        out[near] = dtheta + np.einsum("nc,nc->n", rem, b - a)
    return out


def active_link_endpoints(domain: Domain) -> Tuple[np.ndarray, np.ndarray]:
    grid = domain.grid
    op = domain.neumann
    starts, ends = [], []
    for a in range(3):
        pts = grid.points(Placement.EDGE, a).reshape(-1, 3)[op.link_index[a]]
        step = np.zeros(3)
        step[a] = 0.5 * grid.spacing
        starts.append(pts - step)
        ends.append(pts + step)
    return np.vstack(starts), np.vstack(ends)


def newtonian_potential(targets: np.ndarray, sources: np.ndarray, charges: np.ndarray,
                        chunk_size: int = 4_000_000) -> np.ndarray:
    """(1/4pi) sum_k q_k / |x - y_k| by direct summation"""
    out = np.zeros(len(targets))
    keep = charges != 0.0
    sources, charges = sources[keep], charges[keep]
    if len(sources) == 0:
        return out
    rows = max(1, chunk_size // len(sources))
    for start in range(0, len(targets), rows):
        d = np.linalg.norm(targets[start:start + rows, None, :] - sources[None, :, :], axis=2)
        out[start:start + rows] = (charges[None, :] / d).sum(axis=1)
    return out / (4.0 * np.pi)


@dataclass(eq=False)
class CorrectedFields:
    """Current j, potential A and harmonic correction f of a curve in a domain"""

    x: VectorField
    j: VectorField
    A: VectorField
    f: ScalarField
    flux_residual: float
    compatibility_defect: float
    representation_residual: float
    div_A: float
    iterations: int
    history: List[float] = field(default_factory=list)
    defects: List[str] = field(default_factory=list)
    curve: Optional[FramedCurve] = None
    link_circulation: Optional[np.ndarray] = field(default=None, repr=False)

    def summary(self) -> Dict[str, Any]:
        return {
            "flux_residual": self.flux_residual,
            "compatibility_defect": self.compatibility_defect,
            "representation_residual": self.representation_residual,
            "div_A": self.div_A,
            "iterations": self.iterations,
            "defects": list(self.defects),
        }


class CorrectedFieldSolver:
    """Class to solve for (j, A, f) by fixed-point iteration between a Neumann and a Poisson solve"""

    def __init__(self, domain: Domain, tol: float = 1e-8, max_iter: int = 100, relaxation: float = 1.0,
                 near_radius_cells: float = 4.0, linear_rtol: float = 1e-12, boundary_stride: int = 1):
        self.domain = domain
        self.tol = tol
        self.max_iter = max_iter
        self.relaxation = relaxation
        self.near_radius_cells = near_radius_cells
        self.linear_rtol = linear_rtol
        self.boundary_stride = boundary_stride

    def _solve_f(self, rhs: np.ndarray) -> np.ndarray:
        op = self.domain.neumann
        matrix = (-op.laplacian).tocsr()
        precond = sp.diags(1.0 / np.maximum(matrix.diagonal(), 1e-300))
        f, info = cg(matrix, -rhs, rtol=self.linear_rtol, atol=0.0, maxiter=20 * len(rhs), M=precond)
        if info != 0:
            raise SolverError(f"Neumann solve for f did not converge (cg info {info})")
        return f - np.average(f, weights=op.mass)

    def _boundary_values(self, shape, axes, sources, charges) -> np.ndarray:
        """Newtonian potential on the outer layer of a staggered sub-grid"""
        boundary = np.zeros(shape)
        stride = self.boundary_stride
        for a in range(3):
            for end in (0, shape[a] - 1):
                others = [b for b in range(3) if b != a]
                coarse = []
                for b in others:
                    idx = np.arange(0, shape[b], stride)
                    if idx[-1] != shape[b] - 1:
                        idx = np.append(idx, shape[b] - 1)
                    coarse.append(idx)
                mesh = np.meshgrid(*[axes[b][i] for b, i in zip(others, coarse)], indexing="ij")
                pts = np.zeros(mesh[0].shape + (3,))
                pts[..., a] = axes[a][end]
                for b, m in zip(others, mesh):
                    pts[..., b] = m
                values = newtonian_potential(pts.reshape(-1, 3), sources, charges).reshape(mesh[0].shape)
                index = [slice(None)] * 3
                index[a] = end
                if stride > 1:
                    method = "cubic" if min(len(c) for c in coarse) >= 4 else "linear"
                    interp = RegularGridInterpolator([axes[b][i] for b, i in zip(others, coarse)], values,
                                                     method=method)
                    full = np.meshgrid(axes[others[0]], axes[others[1]], indexing="ij")
                    values = interp(np.stack(full, axis=-1))
                boundary[tuple(index)] = values
        return boundary

    def _solve_A(self, j_links: np.ndarray) -> VectorField:
        grid = self.domain.grid
        op = self.domain.neumann
        h3 = grid.cell_volume
        j_edges = op.links_to_edges(grid, op.link_weight * j_links)
        comps = []
        for a in range(3):
            shape = grid.shape(Placement.EDGE, a)
            source = j_edges.components[a]
            flat_ids = op.link_index[a]
            positions = grid.points(Placement.EDGE, a).reshape(-1, 3)[flat_ids]
            charges = h3 * source.ravel()[flat_ids]
            boundary = self._boundary_values(shape, grid.axes(Placement.EDGE, a), positions, charges)
            comps.append(dirichlet_poisson(source, boundary, grid.spacing))
        return VectorField(grid, tuple(comps), Placement.EDGE, "A")

    def solve(self, framed: FramedCurve) -> CorrectedFields:
        """
        Iterate f <- Neumann(A), j <- X - A + grad f, A <- Poisson(j 1_Omega)

        Args:
            framed: Closed source curve

        Returns:
            CorrectedFields
        """
        domain = self.domain
        grid = domain.grid
        op = domain.neumann
        bs = BiotSavartField(framed)
        p0, p1 = active_link_endpoints(domain)
        locator = CurveLocator(framed)
        circulation = link_circulations(bs, p0, p1, locator, self.near_radius_cells * grid.spacing)
        x_links = circulation / grid.spacing
        w = op.link_weight

        A = VectorField.zeros(grid, Placement.EDGE)
        history: List[float] = []
        defects: List[str] = []
        compat = 0.0
        for iteration in range(1, self.max_iter + 1):
            a_links = op.edges_to_links(A)
            rhs = op.gradient.T @ (w * (x_links - a_links))
            compat = float(abs(rhs.sum()) / max(np.abs(rhs).sum(), 1e-300))
            rhs = rhs - op.mass * rhs.sum() / op.mass.sum()
            f = self._solve_f(rhs)
            j_links = x_links - a_links + op.gradient @ f
            A_new = self._solve_A(j_links)
            if self.relaxation != 1.0:
                A_new = A.scale(1.0 - self.relaxation) + A_new.scale(self.relaxation)
            change = (A_new - A).max_abs() / max(A_new.max_abs(), 1e-300)
            history.append(float(change))
            logger.debug("jA iteration %d: relative change %.3e", iteration, change)
            A = A_new
            if change < self.tol:
                break
            if iteration >= 3 and history[-1] > history[-2] and history[-2] > history[-3]:
                raise SolverError("jA fixed point is not contracting; lower the relaxation", history)
        else:
            raise SolverError(f"jA fixed point did not converge in {self.max_iter} iterations", history)

        a_links = op.edges_to_links(A)
        rhs = op.gradient.T @ (w * (x_links - a_links))
        f = self._solve_f(rhs - op.mass * rhs.sum() / op.mass.sum())
        j_links = x_links - a_links + op.gradient @ f
        if compat > 1e-8:
            defects.append(f"Neumann compatibility defect {compat:.3e}")

        flux = op.weighted_divergence(j_links)
        boundary = op.nodes_to_active(domain.boundary_nodes)
        j_scale = max(float(np.max(np.abs(j_links))), 1e-300)
        flux_residual = float(np.max(np.abs(flux[boundary])) * grid.spacing / j_scale) if np.any(boundary) else 0.0
        representation = float(np.max(np.abs(j_links - (x_links - a_links + op.gradient @ f))))
        div_a = div(A).values
        div_A = float(np.max(np.abs(div_a[1:-1, 1:-1, 1:-1])) * grid.spacing / max(A.max_abs(), 1e-300))

        f_nodes = fill_inactive(op.active_to_nodes(grid, f), domain.active)
        logger.info("jA converged in %d iterations: flux residual %.2e, div A %.2e", len(history), flux_residual,
                    div_A)
        return CorrectedFields(
            x=op.links_to_edges(grid, x_links),
            j=op.links_to_edges(grid, j_links),
            A=A,
            f=ScalarField(grid, f_nodes, Placement.NODE, "f"),
            flux_residual=flux_residual,
            compatibility_defect=compat,
            representation_residual=representation,
            div_A=div_A,
            iterations=len(history),
            history=history,
            defects=defects,
            curve=framed,
            link_circulation=circulation,
        )


def solve_jA(curve: FramedCurve, domain: Domain, tol: float = 1e-8, **options) -> CorrectedFields:
    return CorrectedFieldSolver(domain, tol=tol, **options).solve(curve)


@dataclass(frozen=True)
class RenormalizedConstant:
    value: float
    magnetic: float
    uncertainty: float
    slope: float
    length_in_domain: float
    table: List[Dict[str, float]]

    def to_dict(self) -> Dict[str, Any]:
        return {"c_omega": self.value, "magnetic": self.magnetic, "uncertainty": self.uncertainty,
                "slope": self.slope, "length_in_domain": self.length_in_domain, "table": self.table}


def link_distances(domain: Domain, framed: FramedCurve) -> np.ndarray:
    """Distance from each active link midpoint to the curve"""
    p0, p1 = active_link_endpoints(domain)
    return CurveLocator(framed).distance(0.5 * (p0 + p1))


def c_omega(curve: FramedCurve, domain: Domain, fields: CorrectedFields,
            tube_radii: Optional[Sequence[float]] = None) -> RenormalizedConstant:
    """
    Renormalized self-energy: 1/2 |curl A|^2 over the box plus the rho -> 0 limit of
    1/2 int_{Omega minus tube_rho} |j|^2 + pi |curve in Omega| log rho

    Args:
        curve: Closed source curve
        domain: Domain
        fields: Solved corrected fields of the curve
        tube_radii: Decreasing radii, the smallest at least 3h

    Returns:
        RenormalizedConstant with the extrapolation table
    """
    grid = domain.grid
    h = grid.spacing
    radii = np.asarray(tube_radii if tube_radii is not None else h * np.arange(8.0, 2.0, -1.0), dtype=float)
    if np.any(np.diff(radii) >= 0) or radii[-1] < 3.0 * h * (1 - 1e-12):
        raise ConvergenceError("tube radii must decrease and stay at least 3h", [])
    op = domain.neumann
    j_links = op.edges_to_links(fields.j)
    energy = 0.5 * grid.cell_volume * op.link_weight * j_links ** 2
    dist = link_distances(domain, curve)
    length = length_in_domain(curve.curve, domain)
    brackets = np.array([energy[dist >= r].sum() + np.pi * length * np.log(r) for r in radii])

    b_field = curl(fields.A)
    magnetic = 0.5 * sum(float(np.sum(domain.quadrature_weights(Placement.FACE, a, "box") * c ** 2))
                         for a, c in enumerate(b_field.components))

    design = np.stack([np.ones_like(radii), radii], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(design, brackets, rcond=None)
    model = intercept + slope * radii
    misfit = float(np.max(np.abs(brackets - model)))
    table = [{"rho": float(r), "bracket": float(v), "model": float(m)} for r, v, m in zip(radii, brackets, model)]
    if not np.all(np.isfinite(brackets)) or misfit > 0.1 * (1.0 + abs(intercept)):
        raise ConvergenceError(f"c_omega bracket is not Cauchy (misfit {misfit:.3e})", table)
    value = magnetic + float(intercept)
    logger.info("C_Omega = %.6f (magnetic %.6f, bracket limit %.6f, misfit %.2e)", value, magnetic, intercept,
                misfit)
    return RenormalizedConstant(value, magnetic, misfit, float(slope), length, table)
