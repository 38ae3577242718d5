import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components, depth_first_order
from scipy.sparse.linalg import cg, spsolve

from utils.biot_savart import CorrectedFields
from utils.errors import ConfigurationError, ConstructionError, NumericalWarning, PlacementError
from utils.geometry import CurveLocator, FramedCurve, PolyCurve
from utils.grid import (ComplexField, Domain, Placement, VectorField, curl, faces_touching_links,
                        faces_touching_nodes)
from utils.pinning import Weight, fill_inactive
from utils.profile import VortexProfile, normalized_modulus

logger = logging.getLogger(__name__)


def wrap(angle: np.ndarray) -> np.ndarray:
    """Map angles to [-pi, pi)"""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def tube_exponent(n_exponent: float, alpha: float) -> float:
    return n_exponent / alpha + 1.0


def tube_radius(epsilon: float, n_exponent: float, alpha: float, spacing: Optional[float] = None) -> float:
    """
    r_eps = |log eps|^(-q) with q = N/alpha + 1

    Args:
        epsilon: Coherence length in (0, 1/e)
        n_exponent: Holder growth exponent N > 0
        alpha: Holder exponent in (0, 1)
        spacing: Grid spacing, enables the resolution warning

    Returns:
        Tube radius
    """
    if not 0.0 < epsilon < np.exp(-1.0):
        raise ConfigurationError(f"epsilon must lie in (0, 1/e), got {epsilon}")
    if not 0.0 < alpha < 1.0 or n_exponent <= 0:
        raise ConfigurationError(f"need alpha in (0, 1) and N > 0, got alpha={alpha}, N={n_exponent}")
    q = tube_exponent(n_exponent, alpha)
    radius = float(abs(np.log(epsilon)) ** (-q))
    if spacing is not None and radius < 4.0 * spacing:
        warnings.warn(f"tube radius {radius:.4g} is below 4h={4 * spacing:.4g}", NumericalWarning)
    if radius / epsilon < 10.0:
        warnings.warn(f"r_eps/eps = {radius / epsilon:.3g} < 10; profile normalization is far from 1",
                      NumericalWarning)
    return radius


def node_distances(domain: Domain, framed: FramedCurve) -> np.ndarray:
    """Distance to the curve at active nodes, +inf elsewhere"""
    out = np.full(domain.grid.dims, np.inf)
    active = domain.active
    out[active] = CurveLocator(framed).distance(domain.grid.points()[active])
    return out


def build_modulus(distance: np.ndarray, epsilon: float, radius: float, profile: VortexProfile,
                  spacing: float, core_fraction: float = 0.25) -> np.ndarray:
    """
    f0(d/eps) / f0(r_eps/eps) inside the tube, 1 outside, 0 on core nodes

    Args:
        distance: Node distances to the curve
        epsilon: Coherence length
        radius: Tube radius r_eps
        profile: Radial vortex profile
        spacing: Grid spacing
        core_fraction: Nodes closer than core_fraction*h are core nodes

    Returns:
        Modulus array on nodes
    """
    if radius < 4.0 * spacing:
        raise ConstructionError(f"tube radius {radius:.4g} is under-resolved (below 4h={4 * spacing:.4g})")
    modulus = normalized_modulus(profile, np.where(np.isfinite(distance), distance, radius), epsilon, radius)
    return np.where(distance < core_fraction * spacing, 0.0, modulus)


def _tree_phase(n: int, tails: np.ndarray, heads: np.ndarray, increments: np.ndarray, tree: str,
                root: Optional[int]) -> np.ndarray:
    ids = np.arange(len(tails)) + 1
    graph = sp.csr_matrix((np.concatenate([ids, -ids]), (np.concatenate([tails, heads]),
                                                         np.concatenate([heads, tails]))), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    phase = np.zeros(n)
    order_fn = breadth_first_order if tree == "bfs" else depth_first_order
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        start = int(root) if (root is not None and labels[root] == comp) else int(members[0])
        order, pred = order_fn(graph, start, directed=False, return_predecessors=True)
        children = order[1:]
        parents = pred[children]
        signed = np.asarray(graph[parents, children]).ravel()
        step = np.sign(signed) * increments[np.abs(signed).astype(np.int64) - 1]
        delta = np.zeros(n)
        delta[children] = step
        for child, parent in zip(children, parents):
            phase[child] = phase[parent] + delta[child]
    return phase


@dataclass(eq=False)
class PhaseField:
    phase: np.ndarray            # on active nodes
    increments: np.ndarray       # target 1-form on active links
    closure_residual: float


def build_phase(fields: CorrectedFields, domain: Domain, tree: str = "bfs", root: Optional[int] = None,
                rtol: float = 1e-13) -> PhaseField:
    """
    Integrate X + grad f along a spanning tree, then correct the closure in least squares

    Args:
        fields: Corrected fields carrying the link circulations of X
        domain: Domain whose active links carry the phase
        tree: 'bfs' or 'dfs' spanning tree
        root: Active-node position of the tree root

    Returns:
        PhaseField on active nodes
    """
    if fields.link_circulation is None:
        raise ConstructionError("corrected fields carry no link circulations")
    op = domain.neumann
    tails, heads = op.link_tails, op.link_heads
    f = op.nodes_to_active(fields.f.values)
    increments = fields.link_circulation + (f[heads] - f[tails])
    phase = _tree_phase(op.size, tails, heads, increments, tree, root)
    mismatch = wrap(phase[heads] - phase[tails] - increments)
    h = domain.grid.spacing
    lap = (op.gradient.T @ op.gradient).tocsr()
    rhs = -(op.gradient.T @ mismatch) / h
    precond = sp.diags(1.0 / np.maximum(lap.diagonal(), 1e-300))
    correction, info = cg(lap, rhs, rtol=rtol, atol=0.0, maxiter=20 * op.size, M=precond)
    if info != 0:
        logger.debug("phase correction cg info %d, using a direct solve with the root pinned", info)
        keep = np.arange(1, op.size)
        correction = np.zeros(op.size)
        correction[keep] = spsolve(lap[keep][:, keep].tocsc(), rhs[keep])
    phase = phase + correction
    residual = float(np.max(np.abs(wrap(phase[heads] - phase[tails] - increments)))) if len(tails) else 0.0
    logger.debug("phase built with %s tree: closure residual %.3e", tree, residual)
    return PhaseField(phase, increments, residual)


def plaquette_windings(u_phase: np.ndarray, domain: Domain) -> List[np.ndarray]:
    """Winding number per face from wrapped phase increments, NaN where a bounding link is inactive"""
    grid = domain.grid
    h = grid.spacing
    incs = []
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        d = wrap(u_phase[tuple(hi)] - u_phase[tuple(lo)])
        incs.append(np.where(domain.link_weights[a] > 0, d, np.nan))
    circulation = curl(VectorField(grid, tuple(np.nan_to_num(i) / h for i in incs), Placement.EDGE))
    missing = faces_touching_links(grid, [np.isnan(i) for i in incs])
    out = []
    for a in range(3):
        n = circulation.components[a] * h ** 2 / (2.0 * np.pi)
        out.append(np.where(missing[a], np.nan, n))
    return out


def pierce_counts(curve: PolyCurve, domain: Domain) -> List[np.ndarray]:
    """Signed number of times the curve crosses each face, by plane intersections"""
    grid = domain.grid
    h = grid.spacing
    origin = np.asarray(grid.origin)
    counts = [np.zeros(grid.shape(Placement.FACE, a), dtype=np.int64) for a in range(3)]
    starts, ends = curve.segment_starts, curve.segment_ends
    for a in range(3):
        b, c = [x for x in range(3) if x != a]
        shape = counts[a].shape
        lo_plane = (np.minimum(starts[:, a], ends[:, a]) - origin[a]) / h
        hi_plane = (np.maximum(starts[:, a], ends[:, a]) - origin[a]) / h
        for k in range(len(starts)):
            first = int(np.ceil(lo_plane[k]))
            last = int(np.floor(hi_plane[k]))
            if last < first or starts[k, a] == ends[k, a]:
                continue
            planes = np.arange(first, last + 1)
            # a crossing exactly at the segment end is counted by the next segment
            x_planes = origin[a] + h * planes
            keep = x_planes != ends[k, a]
            planes, x_planes = planes[keep], x_planes[keep]
            t = (x_planes - starts[k, a]) / (ends[k, a] - starts[k, a])
            pts = starts[k] + t[:, None] * (ends[k] - starts[k])
            ib = np.floor((pts[:, b] - origin[b]) / h).astype(int)
            ic = np.floor((pts[:, c] - origin[c]) / h).astype(int)
            sign = 1 if ends[k, a] > starts[k, a] else -1
            ok = (planes >= 0) & (planes < shape[a]) & (ib >= 0) & (ib < shape[b]) & (ic >= 0) & (ic < shape[c])
            index = [None, None, None]
            index[a], index[b], index[c] = planes[ok], ib[ok], ic[ok]
            np.add.at(counts[a], tuple(index), sign)
    return counts


@dataclass(eq=False)
class TestConfiguration:
    """Vortex-filament test configuration (u, A) around a curve"""

    __test__ = False

    u: ComplexField
    A: VectorField
    curve: FramedCurve
    source: PolyCurve
    epsilon: float
    r_eps: float
    q: float
    normalization: float
    node_distance: np.ndarray
    windings: List[np.ndarray]
    pierce: List[np.ndarray]
    closure_residual: float
    core_nodes: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "r_eps": self.r_eps,
            "q": self.q,
            "normalization": self.normalization,
            "closure_residual": self.closure_residual,
            "core_nodes": self.core_nodes,
            "pierced_faces": int(sum(np.count_nonzero(p) for p in self.pierce)),
            **self.metadata,
        }


def check_windings(windings: List[np.ndarray], pierce: List[np.ndarray], excluded: List[np.ndarray],
                   domain: Domain) -> int:
    """Compare phase windings with geometric pierce counts; returns the number of faces compared"""
    compared = 0
    for a in range(3):
        valid = ~np.isnan(windings[a]) & ~excluded[a]
        n = np.rint(np.nan_to_num(windings[a])).astype(np.int64)
        bad = valid & (n != pierce[a])
        compared += int(valid.sum())
        if np.any(bad):
            index = tuple(int(i) for i in np.argwhere(bad)[0])
            position = domain.grid.points(Placement.FACE, a)[index].tolist()
            raise ConstructionError(
                f"phase winding {int(n[index])} differs from pierce count {int(pierce[a][index])}",
                {"axis": a, "index": index, "position": position})
    return compared


def assemble(source: PolyCurve, framed: FramedCurve, epsilon: float, weight: Weight, profile: VortexProfile,
             fields: CorrectedFields, domain: Domain, n_exponent: float = 1.0, alpha: float = 0.5,
             r_eps: Optional[float] = None, core_fraction: float = 0.25, tree: str = "bfs",
             root: Optional[int] = None) -> TestConfiguration:
    """
    Assemble u = modulus * exp(i phase) and A = A_Gamma

    Args:
        source: The open curve inside the domain (lengths are measured on it)
        framed: Its closed extension, the source of the corrected fields
        epsilon: Coherence length
        weight: Weight rho on the same grid
        profile: Radial vortex profile
        fields: Corrected fields of ``framed``
        domain: Domain
        n_exponent, alpha: Holder hypothesis exponents fixing the tube exponent
        r_eps: Explicit tube radius (default from tube_radius)
        core_fraction: Core-node radius in units of h
        tree, root: Spanning tree choice

    Returns:
        TestConfiguration
    """
    grid = domain.grid
    if weight.grid != grid or fields.A.grid != grid:
        raise PlacementError("construction ingredients live on different grids")
    h = grid.spacing
    radius = r_eps if r_eps is not None else tube_radius(epsilon, n_exponent, alpha, h)
    if np.max(framed.curve.segment_lengths) > 0.5 * radius:
        raise ConstructionError("curve is under-resolved relative to the tube radius; resample it")
    distance = node_distances(domain, framed)
    modulus = build_modulus(distance, epsilon, radius, profile, h, core_fraction)
    phase = build_phase(fields, domain, tree, root)
    op = domain.neumann
    phase_nodes = fill_inactive(op.active_to_nodes(grid, phase.phase), domain.active)
    values = modulus * np.exp(1j * phase_nodes)

    windings = plaquette_windings(phase_nodes, domain)
    pierce = pierce_counts(framed.curve, domain)
    core = distance < core_fraction * h
    excluded = faces_touching_nodes(grid, core)
    n_core_faces = int(sum(e.sum() for e in excluded))
    if n_core_faces:
        warnings.warn(f"{n_core_faces} faces touch core nodes; their winding is indeterminate", NumericalWarning)
    compared = check_windings(windings, pierce, excluded, domain)
    normalization = float(profile(radius / epsilon))
    logger.info("assembled configuration: eps=%.4g r_eps=%.4g, %d faces checked, closure residual %.2e",
                epsilon, radius, compared, phase.closure_residual)
    return TestConfiguration(
        u=ComplexField(grid, values, "u"),
        A=fields.A,
        curve=framed,
        source=source,
        epsilon=float(epsilon),
        r_eps=float(radius),
        q=tube_exponent(n_exponent, alpha),
        normalization=normalization,
        node_distance=distance,
        windings=windings,
        pierce=pierce,
        closure_residual=phase.closure_residual,
        core_nodes=int(core.sum()),
        metadata={"tree": tree, "faces_checked": compared},
    )
