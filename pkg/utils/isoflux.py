"""Weighted isoflux problem: maximize the B0-circulation of a curve over its rho^2-weighted length."""

import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from utils.construction import TestConfiguration
from utils.energy import box_pairing, free_energy, remainder_term, vorticity
from utils.errors import ConfigurationError, ConvergenceError, GeometryError, SolverError, ThresholdError
from utils.geometry import (FramedCurve, PolyCurve, build_frame, drop_collinear, extend_open_curve,
                            line_integral_in_domain, smooth_corners, transversality, weighted_length)
from utils.grid import Domain, Placement, ScalarField, VectorField, interpolator
from utils.meissner import MeissnerState
from utils.pinning import Weight

logger = logging.getLogger(__name__)

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
                     if (i, j, k) > (0, 0, 0)])


def _simpson(fn, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    return (fn(p0) + 4.0 * fn(0.5 * (p0 + p1)) + fn(p1)) / 6.0


@dataclass(eq=False)
class LatticeGraph:
    """
    Undirected lattice graph with oriented edge circulations

    Traversing edge e from ``tails[e]`` to ``heads[e]`` collects ``circulation[e]``;
    the reverse traversal collects its negative. ``length`` is the rho^2-weighted
    length. Boundary nodes connect to the domain boundary through stubs.
    """

    positions: np.ndarray
    tails: np.ndarray
    heads: np.ndarray
    circulation: np.ndarray
    length: np.ndarray
    boundary: np.ndarray
    stub_points: Optional[np.ndarray] = None
    stub_circulation: Optional[np.ndarray] = None    # from the boundary point into the node
    stub_length: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.positions)
        if self.stub_circulation is None:
            self.stub_circulation = np.zeros(n)
        if self.stub_length is None:
            self.stub_length = np.zeros(n)
        if np.any(self.length <= 0):
            raise ConfigurationError("lattice edges need positive weighted length")

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @cached_property
    def directed(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(tails, heads, circulation, length) with both orientations of every edge"""
        return (np.concatenate([self.tails, self.heads]), np.concatenate([self.heads, self.tails]),
                np.concatenate([self.circulation, -self.circulation]), np.concatenate([self.length, self.length]))

    def scaled(self, flux: float = 1.0, weight: float = 1.0) -> "LatticeGraph":
        return LatticeGraph(self.positions, self.tails, self.heads, flux * self.circulation, weight * self.length,
                            self.boundary, self.stub_points, flux * self.stub_circulation,
                            weight * self.stub_length)


@dataclass(eq=False)
class GraphCurve:
    nodes: List[int]
    edges: List[int]          # directed edge ids
    kind: str                 # 'path' or 'cycle'
    circulation: float
    length: float

    @property
    def ratio(self) -> float:
        return self.circulation / self.length


def _curve_totals(graph: LatticeGraph, nodes: List[int], edges: List[int], kind: str) -> GraphCurve:
    _, _, circ, length = graph.directed
    c = float(np.sum(circ[edges]))
    ell = float(np.sum(length[edges]))
    if kind == "path":
        c += graph.stub_circulation[nodes[0]] - graph.stub_circulation[nodes[-1]]
        ell += graph.stub_length[nodes[0]] + graph.stub_length[nodes[-1]]
    return GraphCurve(list(map(int, nodes)), list(map(int, edges)), kind, c, ell)


def _relax(tails, heads, weights, dist, pred, pred_edge, atol) -> bool:
    cand = dist[tails] + weights
    best = dist.copy()
    np.maximum.at(best, heads, cand)
    improved = best > dist + atol
    if not np.any(improved):
        return False
    hit = np.flatnonzero(improved[heads] & (cand >= best[heads]))
    pred[heads[hit]] = tails[hit]
    pred_edge[heads[hit]] = hit
    np.copyto(dist, best, where=improved)
    return True


def _node_on_pred_cycle(pred: np.ndarray) -> int:
    """A node lying on a cycle of the predecessor graph, or -1, by pointer doubling"""
    n = pred.size
    jump = np.where(pred < 0, n, pred)
    jump = np.append(jump, n)
    for _ in range(int(np.ceil(np.log2(n + 1))) + 1):
        jump = jump[jump]
    on_cycle = np.flatnonzero(jump[:n] != n)
    return int(jump[on_cycle[0]]) if on_cycle.size else -1


def _trace_cycle(start: int, pred: np.ndarray, pred_edge: np.ndarray) -> Tuple[List[int], List[int]]:
    nodes, edges = [start], [int(pred_edge[start])]
    node = int(pred[start])
    while node != start:
        nodes.append(node)
        edges.append(int(pred_edge[node]))
        node = int(pred[node])
    return nodes[::-1], edges[::-1]


def find_positive_cycle(graph: LatticeGraph, lam: float) -> Optional[GraphCurve]:
    """
    Directed cycle with positive weight sum(circulation - lam * length), if one exists

    Bellman-Ford longest-path relaxation from a virtual source joined to every node;
    the predecessor graph is checked for cycles after each pass.
    """
    tails, heads, circ, length = graph.directed
    weights = circ - lam * length
    n = graph.n_nodes
    scale = max(float(np.max(np.abs(weights))), 1e-300)
    atol = 1e-12 * scale
    dist = np.zeros(n)
    pred = -np.ones(n, dtype=np.int64)
    pred_edge = -np.ones(n, dtype=np.int64)
    for _ in range(2 * n + 2):
        if not _relax(tails, heads, weights, dist, pred, pred_edge, atol):
            return None
        start = _node_on_pred_cycle(pred)
        if start >= 0:
            nodes, edges = _trace_cycle(start, pred, pred_edge)
            if float(np.sum(weights[edges])) > atol * len(edges) and len(nodes) >= 3:
                return _curve_totals(graph, nodes, edges, "cycle")
    raise SolverError(f"positive cycle search did not isolate a cycle at lambda={lam:.6g}")


def best_path(graph: LatticeGraph, lam: float) -> Tuple[Optional[GraphCurve], float]:
    """Boundary-to-boundary path maximizing sum(circulation - lam * length); requires no positive cycle"""
    tails, heads, circ, length = graph.directed
    weights = circ - lam * length
    n = graph.n_nodes
    if not np.any(graph.boundary):
        return None, -np.inf
    scale = max(float(np.max(np.abs(weights))), 1e-300)
    atol = 1e-12 * scale
    entry = graph.stub_circulation - lam * graph.stub_length
    exit_ = -graph.stub_circulation - lam * graph.stub_length
    dist = np.where(graph.boundary, entry, -np.inf)
    pred = -np.ones(n, dtype=np.int64)
    pred_edge = -np.ones(n, dtype=np.int64)
    for _ in range(n + 1):
        if not _relax(tails, heads, weights, dist, pred, pred_edge, atol):
            break
    else:
        raise SolverError("path relaxation did not settle; a positive cycle is present")
    totals = np.where(graph.boundary, dist + exit_, -np.inf)
    end = int(np.argmax(totals))
    value = float(totals[end])
    nodes, edges = [end], []
    seen = {end}
    node = end
    while pred[node] >= 0:
        edges.append(int(pred_edge[node]))
        node = int(pred[node])
        if node in seen:
            raise SolverError("predecessor chain of the best path is not simple")
        seen.add(node)
        nodes.append(node)
    if not edges:
        return None, value
    return _curve_totals(graph, nodes[::-1], edges[::-1], "path"), value


@dataclass(eq=False)
class GraphOptimum:
    curve: Optional[GraphCurve]
    ratio: float
    history: List[float]
    iterations: int
    diagnostics: List[str] = field(default_factory=list)


def maximize_graph_ratio(graph: LatticeGraph, max_iter: int = 200, lam0: float = 0.0) -> GraphOptimum:
    """
    Dinkelbach iteration for max circulation / length over simple paths and cycles

    Each step either finds a positive cycle for the current lambda or the best
    boundary path; lambda moves to the ratio of the structure found and stops when
    neither is positive.
    """
    lam = float(lam0)
    history = [lam]
    best = None
    for it in range(1, max_iter + 1):
        found = find_positive_cycle(graph, lam)
        if found is None:
            found, value = best_path(graph, lam)
            if found is None or value <= 1e-12 * max(1.0, abs(lam)) * max(1.0, float(np.max(graph.length))):
                logger.debug("dinkelbach converged after %d iterations at lambda=%.10g", it - 1, lam)
                break
        ratio = found.ratio
        if ratio <= lam:
            raise SolverError(f"dinkelbach step did not increase lambda ({ratio:.12g} <= {lam:.12g})", history)
        lam = ratio
        best = found
        history.append(lam)
        logger.debug("dinkelbach iteration %d: %s of %d edges, lambda=%.10g", it, found.kind, len(found.edges), lam)
    else:
        raise ConvergenceError(f"dinkelbach did not converge in {max_iter} iterations",
                               [{"lambda": v} for v in history])
    if best is None:
        return GraphOptimum(None, 0.0, history, len(history) - 1, ["no curve with positive circulation"])
    return GraphOptimum(best, lam, history, len(history) - 1)


class IsofluxInstance:
    """Class to hold B0, rho^2 and the lattice graph of one isoflux problem"""

    def __init__(self, B0: VectorField, rho2: ScalarField, domain: Domain, stride: int = 1,
                 trace_tol: float = 1e-6, trace_residual: float = 0.0):
        if B0.placement != Placement.FACE or B0.grid != domain.grid or rho2.grid != domain.grid:
            raise ConfigurationError("isoflux instance needs FACE B0 and NODE rho^2 on the domain grid")
        if stride < 1:
            raise ConfigurationError("lattice stride must be a positive integer")
        inside = domain.node_distance <= 0
        if np.any(rho2.values[inside] <= 0):
            raise ConfigurationError("rho^2 must be positive in the domain")
        if trace_residual > trace_tol:
            raise ConfigurationError(f"B0 tangential trace {trace_residual:.3e} exceeds {trace_tol:.1e}")
        self.B0 = B0
        self.rho2 = rho2
        self.domain = domain
        self.stride = stride
        self._b = [interpolator(domain.grid, c, Placement.FACE, a) for a, c in enumerate(B0.components)]
        self._w = interpolator(domain.grid, rho2.values, Placement.NODE)

    @property
    def rho(self) -> ScalarField:
        return ScalarField(self.rho2.grid, np.sqrt(np.maximum(self.rho2.values, 0.0)), Placement.NODE, "rho")

    def field(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.stack([f(pts) for f in self._b], axis=1)

    def weight(self, points: np.ndarray) -> np.ndarray:
        return self._w(np.atleast_2d(points))

    def segment_terms(self, p0: np.ndarray, p1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Simpson circulation and weighted length of straight segments"""
        d = p1 - p0
        circ = np.einsum("nc,nc->n", _simpson(self.field, p0, p1), d)
        length = _simpson(self.weight, p0, p1) * np.linalg.norm(d, axis=1)
        return circ, length

    @cached_property
    def lattice(self) -> LatticeGraph:
        domain = self.domain
        grid = domain.grid
        s = self.stride
        centre = np.rint((domain.center - np.asarray(grid.origin)) / grid.spacing).astype(int)
        start = centre % s
        sub = tuple(slice(int(o), None, s) for o in start)
        points = grid.points()[sub]
        inside = domain.node_distance[sub] <= 0
        ids = -np.ones(inside.shape, dtype=np.int64)
        ids[inside] = np.arange(int(inside.sum()))
        positions = points[inside]
        tails, heads = [], []
        for off in _OFFSETS:
            src = tuple(slice(max(0, -o), inside.shape[b] - max(0, o)) for b, o in enumerate(off))
            dst = tuple(slice(max(0, o), inside.shape[b] - max(0, -o)) for b, o in enumerate(off))
            a, b = ids[src].ravel(), ids[dst].ravel()
            keep = (a >= 0) & (b >= 0)
            tails.append(a[keep])
            heads.append(b[keep])
        tails = np.concatenate(tails)
        heads = np.concatenate(heads)
        mid = 0.5 * (positions[tails] + positions[heads])
        keep = domain.distance(mid) <= 0
        tails, heads = tails[keep], heads[keep]
        degree = np.bincount(np.concatenate([tails, heads]), minlength=len(positions))
        boundary = degree < 2 * len(_OFFSETS)
        circ, length = self.segment_terms(positions[tails], positions[heads])
        stub_points = positions.copy()
        stub_points[boundary] = domain.project_to_boundary(positions[boundary])
        stub_circ = np.zeros(len(positions))
        stub_len = np.zeros(len(positions))
        moved = boundary & (np.linalg.norm(stub_points - positions, axis=1) > 1e-12 * grid.spacing)
        if np.any(moved):
            stub_circ[moved], stub_len[moved] = self.segment_terms(stub_points[moved], positions[moved])
        logger.info("isoflux lattice: %d nodes (%d on the boundary), %d edges, stride %d",
                    len(positions), int(boundary.sum()), len(tails), s)
        return LatticeGraph(positions, tails, heads, circ, length, boundary, stub_points, stub_circ, stub_len)

    def curve_points(self, curve: GraphCurve) -> np.ndarray:
        graph = self.lattice
        pts = graph.positions[curve.nodes]
        if curve.kind == "cycle":
            return pts
        first, last = graph.stub_points[curve.nodes[0]], graph.stub_points[curve.nodes[-1]]
        out = [pts]
        if np.linalg.norm(first - pts[0]) > 1e-12:
            out.insert(0, first[None])
        if np.linalg.norm(last - pts[-1]) > 1e-12:
            out.append(last[None])
        return np.vstack(out)


def instance_from_meissner(state: MeissnerState, weight: Weight, domain: Domain, stride: int = 1,
                           trace_tol: float = 1e-6) -> IsofluxInstance:
    rho2 = ScalarField(domain.grid, weight.rho_squared, Placement.NODE, "rho2")
    return IsofluxInstance(state.B0, rho2, domain, stride, trace_tol, state.trace_residual)


def ratio(curve: PolyCurve, inst: IsofluxInstance) -> float:
    """<curve, B0> / |rho^2 curve| over the part of the curve inside the domain"""
    length = weighted_length(curve, inst.rho, inst.domain)
    if length <= 0:
        raise GeometryError(f"{curve.name} has zero weighted length in the domain")
    return line_integral_in_domain(curve, inst.field, inst.domain) / length


def _polyline_ratio(inst: IsofluxInstance, points: np.ndarray, closed: bool) -> float:
    p0 = points if closed else points[:-1]
    p1 = np.roll(points, -1, axis=0) if closed else points[1:]
    circ, length = inst.segment_terms(p0, p1)
    return float(np.sum(circ) / max(np.sum(length), 1e-300))


def _vertex_curvature(points: np.ndarray, closed: bool) -> float:
    p = np.vstack([points[-1:], points, points[:1]]) if closed else points
    d0 = p[1:-1] - p[:-2]
    d1 = p[2:] - p[1:-1]
    l0 = np.linalg.norm(d0, axis=1)
    l1 = np.linalg.norm(d1, axis=1)
    cos = np.clip(np.einsum("nc,nc->n", d0, d1) / np.maximum(l0 * l1, 1e-300), -1.0, 1.0)
    return float(np.max(np.arccos(cos) / np.maximum(0.5 * (l0 + l1), 1e-300))) if len(cos) else 0.0


def polish(inst: IsofluxInstance, points: np.ndarray, closed: bool, max_iter: int = 200,
           curvature_limit: Optional[float] = None, smoothing_steps: int = 50) -> np.ndarray:
    """
    Continuous ascent of the ratio in the vertex positions, then local averaging until
    the vertex curvature is below ``curvature_limit``

    Path endpoints are kept on the boundary by projection.
    """
    domain = inst.domain
    pts = np.asarray(points, dtype=float)
    mids = 0.5 * (pts[:-1] + pts[1:]) if not closed else 0.5 * (pts + np.roll(pts, -1, axis=0))
    dense = np.empty((len(pts) + len(mids), 3))
    dense[0::2] = pts
    dense[1::2] = mids
    shape = dense.shape

    def clamp(x: np.ndarray) -> np.ndarray:
        p = x.reshape(shape).copy()
        outside = domain.distance(p) > 0
        if np.any(outside):
            p[outside] = domain.project_to_boundary(p[outside])
        if not closed:
            p[[0, -1]] = domain.project_to_boundary(p[[0, -1]])
        return p

    def objective(x: np.ndarray) -> float:
        return -_polyline_ratio(inst, clamp(x), closed)

    result = minimize(objective, dense.ravel(), method="L-BFGS-B", options={"maxiter": max_iter})
    polished = clamp(result.x)
    limit = curvature_limit if curvature_limit is not None else 0.5 / (inst.stride * domain.grid.spacing)
    for _ in range(smoothing_steps):
        if _vertex_curvature(polished, closed) <= limit:
            break
        if closed:
            polished = 0.5 * polished + 0.25 * (np.roll(polished, 1, axis=0) + np.roll(polished, -1, axis=0))
        else:
            polished[1:-1] = 0.5 * polished[1:-1] + 0.25 * (polished[:-2] + polished[2:])
        polished = clamp(polished.ravel())
    logger.debug("polish: ratio %.8f -> %.8f (%s)", _polyline_ratio(inst, dense, closed),
                 _polyline_ratio(inst, polished, closed), result.message)
    return polished


def extend_curve(curve: PolyCurve, domain: Domain, delta: float, max_step: Optional[float] = None,
                 max_turn_deg: float = 5.0) -> Tuple[PolyCurve, FramedCurve]:
    """
    Turn an optimal curve into the closed, framed source of the vortex construction

    Open curves are continued straight by 3*delta along their exit tangents and capped
    outside the domain; corners are cut until the frame is well defined.

    Args:
        curve: Open boundary-to-boundary curve or closed curve
        domain: Domain
        delta: Tube radius of the construction
        max_step: Longest segment of the closed curve (default delta/4)
        max_turn_deg: Largest tangent turn per vertex

    Returns:
        (smoothed source curve, framed closed curve)
    """
    source = smooth_corners(curve, max_turn_deg)
    if source.closed:
        closed = source
    else:
        extended = extend_open_curve(source, domain, delta)
        n = len(source)
        outside = drop_collinear(np.vstack([extended.vertices[n - 1:], extended.vertices[:1]]))
        outside = smooth_corners(PolyCurve(outside, False, "cap"), max_turn_deg).vertices
        closed = PolyCurve(np.vstack([source.vertices, outside[1:-1]]), True, f"{curve.name} (closed)")
    points, _, _ = closed.refine(max_step if max_step is not None else 0.25 * delta)
    closed = PolyCurve(points, True, closed.name)
    if not closed.is_simple(0.5 * domain.grid.h):
        raise GeometryError(f"{curve.name} crosses itself within h/2 once closed")
    logger.info("extended %s to a closed curve of length %.4g (%d vertices)", curve.name, closed.length, len(closed))
    return source, build_frame(closed)


def hc1(R: float, epsilon: float) -> float:
    """|log eps| / (2 R)"""
    if R <= 0:
        raise ThresholdError(f"H_c1 is undefined for a non-positive isoflux ratio ({R})")
    return float(abs(np.log(epsilon)) / (2.0 * R))


@dataclass(eq=False)
class IsofluxResult:
    curve: Optional[PolyCurve]
    ratio: float
    graph_ratio: float
    kind: str
    history: List[float]
    iterations: int
    hc1: Optional[float] = None
    epsilon: Optional[float] = None
    diagnostics: List[str] = field(default_factory=list)
    hypotheses: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ratio": self.ratio,
            "graph_ratio": self.graph_ratio,
            "kind": self.kind,
            "lambda_history": self.history,
            "iterations": self.iterations,
            "hc1": self.hc1,
            "epsilon": self.epsilon,
            "n_vertices": len(self.curve) if self.curve is not None else 0,
            "diagnostics": self.diagnostics,
            "hypotheses": self.hypotheses,
        }


def maximize_ratio(inst: IsofluxInstance, epsilon: Optional[float] = None, polish_curve: bool = True,
                   max_iter: int = 200) -> IsofluxResult:
    """
    Lattice Dinkelbach optimum followed by continuous polishing

    Args:
        inst: Isoflux instance
        epsilon: When given, H_c1 is reported
        polish_curve: Run the continuous polishing step
        max_iter: Dinkelbach iteration cap

    Returns:
        IsofluxResult whose ratio is recomputed on the final curve
    """
    optimum = maximize_graph_ratio(inst.lattice, max_iter=max_iter)
    if optimum.curve is None:
        logger.warning("isoflux: no positive-ratio curve on the lattice")
        return IsofluxResult(None, 0.0, 0.0, "none", optimum.history, optimum.iterations, None, epsilon,
                             optimum.diagnostics)
    closed = optimum.curve.kind == "cycle"
    points = inst.curve_points(optimum.curve)
    lattice_curve = PolyCurve(points, closed=closed, name="lattice-optimum")
    best_curve, best_ratio = lattice_curve, ratio(lattice_curve, inst)
    diagnostics = list(optimum.diagnostics)
    if polish_curve:
        try:
            polished = PolyCurve(polish(inst, points, closed), closed=closed, name="isoflux-optimum")
            if not polished.is_simple(0.5 * inst.domain.grid.h):
                raise GeometryError("polished curve crosses itself")
            polished_ratio = ratio(polished, inst)
            if polished_ratio >= best_ratio:
                best_curve, best_ratio = polished, polished_ratio
            else:
                diagnostics.append(f"polishing lowered the ratio to {polished_ratio:.6g}; lattice curve kept")
        except GeometryError as exc:
            diagnostics.append(f"polishing failed: {exc}")
    best_curve.name = "isoflux-optimum"
    threshold = hc1(best_ratio, epsilon) if (epsilon is not None and best_ratio > 0) else None
    logger.info("isoflux: lattice ratio %.6f, final ratio %.6f (%s, %d vertices)", optimum.ratio, best_ratio,
                optimum.curve.kind, len(best_curve))
    return IsofluxResult(best_curve, float(best_ratio), float(optimum.ratio), optimum.curve.kind, optimum.history,
                         optimum.iterations, threshold, epsilon, diagnostics)


def check_hypotheses(result: IsofluxResult, inst: IsofluxInstance, epsilon: float, c0_bound: float,
                     c_omega: Optional[float] = None, b: Optional[float] = None,
                     h_ex: Optional[float] = None, eta: Optional[float] = None) -> Dict[str, Any]:
    """Report the near-optimality, length and self-energy hypotheses on the optimal curve"""
    report: Dict[str, Any] = {"epsilon": epsilon}
    if result.curve is None:
        report["status"] = "no curve"
        return report
    log_eps = abs(np.log(epsilon))
    length = weighted_length(result.curve, None, inst.domain)
    c0 = weighted_length(result.curve, inst.rho, inst.domain)
    gap = result.graph_ratio - result.ratio
    report.update({
        "ratio_gap": gap,
        "ratio_gap_scaled": gap * log_eps,
        "length": length,
        "length_ok": bool(length <= c0_bound),
        "c0": c0,
    })
    if b is not None:
        report["weighted_length_ok"] = bool(c0 >= b * length * (1 - 1e-6))
    if c_omega is not None:
        report["c_omega"] = c_omega
        report["c_omega_ok"] = bool(c_omega <= c0_bound * np.log(log_eps))
    if not result.curve.closed:
        try:
            crossings = transversality(result.curve, inst.domain)
            report["transversal"] = not any(c.flagged for c in crossings)
            report["min_crossing_deg"] = min((c.angle_deg for c in crossings), default=None)
        except GeometryError as exc:
            report["transversal"] = False
            report["transversality_error"] = str(exc)
    if h_ex is not None and eta is not None:
        report["h_ex_ok"] = bool(h_ex <= epsilon ** (-eta))
    report["hc1"] = hc1(result.ratio, epsilon) if result.ratio > 0 else None
    result.hypotheses = report
    return report


def _boundary_arc(p: np.ndarray, q: np.ndarray, via: np.ndarray, domain: Domain, n: int) -> np.ndarray:
    """Boundary path p -> via -> q following projected straight chords"""
    t = np.linspace(0.0, 1.0, n)[:, None]
    first = domain.project_to_boundary(p + t * (via - p))
    second = domain.project_to_boundary(via + t * (q - via))
    return np.vstack([first, second[1:]])


def stokes_closure(curve: PolyCurve, inst: IsofluxInstance, closures: int = 5, seed: int = 0,
                   points_per_arc: int = 64) -> List[Dict[str, float]]:
    """
    Close an open boundary-to-boundary curve by arcs on the boundary and compare circulations

    The arc circulation vanishes when B0 has zero tangential trace.
    """
    if curve.closed:
        raise GeometryError("stokes closure needs an open curve")
    domain = inst.domain
    rng = np.random.default_rng(seed)
    start, end = curve.endpoints
    p, q = domain.project_to_boundary(np.vstack([start, end]))
    open_circ = line_integral_in_domain(curve, inst.field, domain)
    out = []
    for k in range(closures):
        via = domain.project_to_boundary((domain.center + domain.bounding_radius * rng.normal(size=3))[None])[0]
        arc = _boundary_arc(q, p, via, domain, points_per_arc)
        step = np.linalg.norm(np.diff(arc, axis=0), axis=1) > 1e-12
        arc = np.vstack([arc[:1], arc[1:][step]])
        circ = float(np.sum(np.einsum("nc,nc->n", _simpson(inst.field, arc[:-1], arc[1:]), np.diff(arc, axis=0))))
        out.append({"closure": k, "arc_circulation": circ, "open_circulation": open_circ,
                    "closed_circulation": open_circ + circ, "defect": abs(circ)})
    return out


@dataclass
class OnsetReport:
    epsilon: float
    h_grid: List[float]
    delta_e: List[float]
    free: float
    pairing: float
    remainder_coefficient: float
    crossing: Optional[float]
    hc1: Optional[float]
    normalized_crossing: Optional[float]
    monotone: bool
    diagnostics: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def onset_experiment(epsilon: float, h_grid: Sequence[float], cfg: TestConfiguration, weight: Weight,
                     meissner: MeissnerState, domain: Domain, R_eps: float, bisection_tol: float = 1e-10,
                     max_bisections: int = 200) -> OnsetReport:
    """
    Energy balance Delta E(h) = F(u, A) - h <mu, B0> + r(h) of the vortex configuration against
    the Meissner state, and the field h* where it changes sign

    Args:
        epsilon: Coherence length of the configuration
        h_grid: Increasing applied-field intensities
        cfg: Vortex configuration built on the optimal curve
        weight: Weight rho
        meissner: Meissner state per unit intensity
        domain: Domain
        R_eps: Isoflux ratio of the curve

    Returns:
        OnsetReport
    """
    h_values = np.asarray(h_grid, dtype=float)
    if h_values.size < 2 or np.any(np.diff(h_values) <= 0):
        raise ConfigurationError("onset needs at least two increasing h_ex values")
    free = free_energy(cfg, weight, domain).total
    mu = vorticity(cfg.u, cfg.A, domain, mode="current", restrict=False)
    pairing = mu.pairing(meissner.B0)
    exterior = box_pairing(mu.values, meissner.B_tilde) - pairing
    r1 = remainder_term(meissner, cfg.u, weight, 1.0, domain)

    def delta(h: float) -> float:
        return free - h * (pairing + exterior) + h ** 2 * r1

    values = np.array([delta(h) for h in h_values])
    monotone = bool(np.all(np.diff(values) < 0))
    diagnostics = []
    if pairing <= 0:
        diagnostics.append(f"vorticity pairing with B0 is {pairing:.4g}; the field term does not favour vortices")
    crossing = None
    sign_change = np.flatnonzero((values[:-1] > 0) & (values[1:] <= 0))
    if sign_change.size:
        lo, hi = h_values[sign_change[0]], h_values[sign_change[0] + 1]
        for _ in range(max_bisections):
            mid = 0.5 * (lo + hi)
            if delta(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= bisection_tol * max(1.0, hi):
                break
        crossing = 0.5 * (lo + hi)
    else:
        diagnostics.append(f"no sign change of Delta E on [{h_values[0]:.4g}, {h_values[-1]:.4g}]"
                           f" (monotone decreasing: {monotone})")
    threshold = hc1(R_eps, epsilon) if R_eps > 0 else None
    normalized = crossing * 2.0 * R_eps / abs(np.log(epsilon)) if (crossing is not None and R_eps > 0) else None
    logger.info("onset at eps=%.4g: h*=%s, H_c1=%s", epsilon, crossing, threshold)
    return OnsetReport(float(epsilon), h_values.tolist(), values.tolist(), float(free), float(pairing + exterior),
                       float(r1), crossing, threshold, normalized, monotone, diagnostics)
