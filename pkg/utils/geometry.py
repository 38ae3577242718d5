"""Polyline curves, parallel-transport frames and tubular neighbourhoods."""

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from utils.errors import GeometryError, NumericalWarning
from utils.grid import Domain, ScalarField, interpolator

logger = logging.getLogger(__name__)

MAX_FRAME_STEP_DEG = 10.0
MIN_CROSSING_DEG = 5.0


class PolyCurve:
    """Class to hold an oriented polyline parametrized by arc length"""

    def __init__(self, vertices: Sequence[Sequence[float]], closed: bool = False, name: str = "curve"):
        pts = np.array(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"curve vertices must be (n, 3), got {pts.shape}")
        if closed and len(pts) > 1 and np.allclose(pts[0], pts[-1], rtol=0.0, atol=1e-14):
            pts = pts[:-1]
        if len(pts) < 2 or (closed and len(pts) < 3):
            raise GeometryError("curve needs at least one segment (three vertices if closed)")
        self.closed = bool(closed)
        self.name = name
        self.vertices = pts
        self.vertices.flags.writeable = False
        lengths = np.linalg.norm(self.segment_vectors, axis=1)
        scale = max(float(np.max(np.abs(pts))), 1.0)
        bad = np.flatnonzero(lengths <= 1e-13 * scale)
        if bad.size:
            raise GeometryError(f"zero-length segment at vertex {int(bad[0])}")
        self.segment_lengths = lengths
        self.arclength = np.concatenate([[0.0], np.cumsum(lengths)])

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        kind = "closed" if self.closed else "open"
        return f"PolyCurve({self.name!r}, {len(self)} vertices, {kind}, length={self.length:.6g})"

    @property
    def segment_starts(self) -> np.ndarray:
        return self.vertices if self.closed else self.vertices[:-1]

    @property
    def segment_ends(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) if self.closed else self.vertices[1:]

    @property
    def segment_vectors(self) -> np.ndarray:
        return self.segment_ends - self.segment_starts

    @property
    def n_segments(self) -> int:
        return len(self.segment_starts)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    @property
    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices[0], self.vertices[-1]

    def point_at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.closed:
            s = np.mod(s, self.length)
        s = np.clip(s, 0.0, self.length)
        k = np.clip(np.searchsorted(self.arclength, s, side="right") - 1, 0, self.n_segments - 1)
        t = np.asarray((s - self.arclength[k]) / self.segment_lengths[k])
        return self.segment_starts[k] + t[..., None] * self.segment_vectors[k]

    def refine(self, max_step: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Split every segment into equal pieces no longer than ``max_step``

        Returns:
            (points, arclength, parent segment per piece); the end point of the
            last segment is appended, so closed curves repeat their first point.
        """
        counts = np.maximum(np.ceil(self.segment_lengths / max_step - 1e-9).astype(int), 1)
        parent = np.repeat(np.arange(self.n_segments), counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        t = (np.arange(parent.size) - first) / counts[parent]
        pts = self.segment_starts[parent] + t[:, None] * self.segment_vectors[parent]
        arc = self.arclength[parent] + t * self.segment_lengths[parent]
        pts = np.vstack([pts, self.segment_ends[-1][None, :]])
        arc = np.concatenate([arc, [self.length]])
        return pts, arc, parent

    def resample(self, n: int) -> "PolyCurve":
        count = n if self.closed else n + 1
        s = np.linspace(0.0, self.length, count, endpoint=not self.closed)
        return PolyCurve(self.point_at(s), self.closed, self.name)

    def reversed(self) -> "PolyCurve":
        return PolyCurve(self.vertices[::-1], self.closed, self.name)

    def concatenate(self, other: "PolyCurve") -> "PolyCurve":
        if self.closed or other.closed:
            raise GeometryError("only open curves can be concatenated")
        tail = other.vertices[1:] if np.allclose(self.vertices[-1], other.vertices[0]) else other.vertices
        return PolyCurve(np.vstack([self.vertices, tail]), False, self.name)

    def self_distance(self, min_separation: float, max_distance: float, max_step: Optional[float] = None,
                      critical_only: bool = False) -> float:
        """
        Smallest distance between curve points at least ``min_separation`` apart in arc length

        Only pairs closer than ``max_distance`` are examined; ``inf`` means none.
        With ``critical_only`` the chord must be nearly normal to the curve at
        both ends (a local minimum of the distance).
        """
        step = max_step or max(min(min_separation, max_distance) / 4.0, self.length / 20000.0)
        pts, arc, parent = self.refine(step)
        if self.closed:
            pts, arc, parent = pts[:-1], arc[:-1], parent
        else:
            parent = np.concatenate([parent, parent[-1:]])
        tree = cKDTree(pts)
        pairs = tree.query_pairs(r=max_distance, output_type="ndarray")
        if len(pairs) == 0:
            return np.inf
        sep = np.abs(arc[pairs[:, 0]] - arc[pairs[:, 1]])
        if self.closed:
            sep = np.minimum(sep, self.length - sep)
        keep = sep >= min_separation
        chord = pts[pairs[:, 1]] - pts[pairs[:, 0]]
        dist = np.linalg.norm(chord, axis=1)
        if critical_only:
            tangents = self.segment_vectors / self.segment_lengths[:, None]
            unit = chord / np.maximum(dist, 1e-300)[:, None]
            for end in (0, 1):
                cos = np.abs(np.einsum("nc,nc->n", unit, tangents[parent[pairs[:, end]]]))
                keep &= cos < 0.2
        if not np.any(keep):
            return np.inf
        return float(np.min(dist[keep]))

    def is_simple(self, tol: float) -> bool:
        return self.self_distance(3.0 * tol, tol, max_step=tol / 2.0) > tol


@dataclass(frozen=True, eq=False)
class FramedCurve:
    """PolyCurve with a rotation-minimizing frame per segment"""

    curve: PolyCurve
    tangents: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    vertex_curvature: np.ndarray
    closure_defect_deg: float = 0.0
    max_step_deg: float = 0.0
    metadata: Dict[str, float] = field(default_factory=dict)

    @property
    def closed(self) -> bool:
        return self.curve.closed

    @property
    def max_curvature(self) -> float:
        return float(np.max(np.linalg.norm(self.vertex_curvature, axis=1)))

    def orthonormality_residual(self) -> float:
        frame = np.stack([self.tangents, self.e1, self.e2], axis=1)
        gram = np.einsum("kia,kja->kij", frame, frame)
        det = np.linalg.det(frame)
        return float(max(np.max(np.abs(gram - np.eye(3))), np.max(np.abs(det - 1.0))))

    def curvature_at(self, segment: np.ndarray, t: np.ndarray) -> np.ndarray:
        k0 = segment
        k1 = (segment + 1) % len(self.curve) if self.closed else segment + 1
        return (1.0 - t)[..., None] * self.vertex_curvature[k0] + t[..., None] * self.vertex_curvature[k1]

    @cached_property
    def reach(self) -> float:
        """Curvature radius, capped by half the critical self-distance and by any crossing"""
        kappa = self.max_curvature
        if kappa <= 1e-12:
            # a straight polyline never returns to itself
            return np.inf
        curvature_limit, separation, search = 1.0 / kappa, 0.5 / kappa, 2.0 / kappa
        far = np.pi / kappa
        if self.closed:
            separation = min(separation, 0.45 * self.curve.length)
            far = min(far, 0.45 * self.curve.length)
        distance_limit = 0.5 * self.curve.self_distance(separation, search, critical_only=True)
        # arcs shorter than pi/kappa have chords of at least 2/kappa; nearer pairs are crossings
        crossing_limit = self.curve.self_distance(far, search)
        return float(min(curvature_limit, distance_limit, crossing_limit))


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    return (v * np.cos(angle) + np.cross(axis, v) * np.sin(angle)
            + axis * np.dot(axis, v) * (1.0 - np.cos(angle)))


def _transport(v: np.ndarray, t_from: np.ndarray, t_to: np.ndarray) -> np.ndarray:
    axis = np.cross(t_from, t_to)
    sin = np.linalg.norm(axis)
    cos = float(np.dot(t_from, t_to))
    if sin < 1e-15:
        if cos < 0:
            raise GeometryError("curve reverses direction (cusp)")
        return v
    return _rotate(v, axis / sin, float(np.arctan2(sin, cos)))


def build_frame(curve: PolyCurve) -> FramedCurve:
    """
    Rotation-minimizing frame by discrete parallel transport of e1

    Args:
        curve: Curve with at least two segments

    Returns:
        FramedCurve with one (T, e1, e2) triple per segment
    """
    if curve.n_segments < 2:
        raise GeometryError("framing needs at least two segments")
    tangents = curve.segment_vectors / curve.segment_lengths[:, None]
    t0 = tangents[0]
    seed = np.eye(3)[int(np.argmin(np.abs(t0)))]
    e1 = seed - np.dot(seed, t0) * t0
    e1 /= np.linalg.norm(e1)
    frames = [e1]
    max_step = 0.0
    for k in range(1, len(tangents)):
        nxt = _transport(frames[-1], tangents[k - 1], tangents[k])
        nxt = nxt - np.dot(nxt, tangents[k]) * tangents[k]
        nxt /= np.linalg.norm(nxt)
        step = np.degrees(np.arccos(np.clip(np.dot(nxt, frames[-1]), -1.0, 1.0)))
        max_step = max(max_step, step)
        frames.append(nxt)
    if max_step > MAX_FRAME_STEP_DEG:
        raise GeometryError(f"frame jumps by {max_step:.2f} degrees between samples; refine the curve")
    e1s = np.array(frames)
    e2s = np.cross(tangents, e1s)

    closure = 0.0
    if curve.closed:
        back = _transport(e1s[-1], tangents[-1], tangents[0])
        back = back - np.dot(back, tangents[0]) * tangents[0]
        back /= np.linalg.norm(back)
        closure = float(np.degrees(np.arctan2(np.dot(np.cross(e1s[0], back), tangents[0]), np.dot(e1s[0], back))))

    n_vertices = len(curve)
    curvature = np.zeros((n_vertices, 3))
    lengths = curve.segment_lengths
    if curve.closed:
        prev = np.roll(tangents, 1, axis=0)
        prev_len = np.roll(lengths, 1)
        curvature = (tangents - prev) / (0.5 * (lengths + prev_len))[:, None]
    else:
        curvature[1:-1] = (tangents[1:] - tangents[:-1]) / (0.5 * (lengths[1:] + lengths[:-1]))[:, None]
        curvature[0] = curvature[1]
        curvature[-1] = curvature[-2]

    logger.debug("framed %r: closure defect %.3g deg, max step %.3g deg", curve, closure, max_step)
    return FramedCurve(curve, tangents, e1s, e2s, curvature, closure, max_step)


class CurveLocator:
    """Nearest-point projection onto a polyline with a KD-tree prefilter"""

    def __init__(self, framed: FramedCurve, max_step: Optional[float] = None, candidates: int = 6):
        self.framed = framed
        curve = framed.curve
        step = max_step or max(float(np.min(curve.segment_lengths)), curve.length / 20000.0)
        pts, arc, parent = curve.refine(step)
        self._starts = pts[:-1]
        self._vectors = pts[1:] - pts[:-1]
        self._arc = arc[:-1]
        self._parent = parent
        self._lengths = np.linalg.norm(self._vectors, axis=1)
        self._tree = cKDTree(self._starts + 0.5 * self._vectors)
        self._k = min(candidates, len(self._starts))

    def project(self, points: np.ndarray, chunk: int = 65536) -> Dict[str, np.ndarray]:
        """
        Project points onto the curve

        Returns:
            dict with 'distance', 's', 'foot', 'segment' (original segment index)
            and 't' (position within that segment)
        """
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 3)
        out = {
            "distance": np.empty(len(flat)),
            "s": np.empty(len(flat)),
            "foot": np.empty((len(flat), 3)),
            "segment": np.empty(len(flat), dtype=np.int64),
        }
        for start in range(0, len(flat), chunk):
            p = flat[start:start + chunk]
            _, idx = self._tree.query(p, k=self._k)
            idx = np.asarray(idx).reshape(len(p), -1)
            a = self._starts[idx]
            d = self._vectors[idx]
            t = np.einsum("nkc,nkc->nk", p[:, None, :] - a, d) / self._lengths[idx] ** 2
            t = np.clip(t, 0.0, 1.0)
            foot = a + t[..., None] * d
            dist = np.linalg.norm(p[:, None, :] - foot, axis=2)
            order = np.argmin(dist, axis=1)
            rows = np.arange(len(p))
            best = idx[rows, order]
            out["distance"][start:start + chunk] = dist[rows, order]
            out["s"][start:start + chunk] = self._arc[best] + t[rows, order] * self._lengths[best]
            out["foot"][start:start + chunk] = foot[rows, order]
            out["segment"][start:start + chunk] = self._parent[best]
        curve = self.framed.curve
        seg = out["segment"]
        out["t"] = np.clip((out["s"] - curve.arclength[seg]) / curve.segment_lengths[seg], 0.0, 1.0)
        shape = points.shape[:-1]
        return {key: value.reshape(shape + value.shape[1:]) for key, value in out.items()}

    def distance(self, points: np.ndarray) -> np.ndarray:
        return self.project(points)["distance"]


class Tube:
    """Tubular neighbourhood of thickness delta around a framed curve"""

    def __init__(self, framed: FramedCurve, delta: float):
        if delta <= 0:
            raise GeometryError("tube thickness must be positive")
        if delta >= framed.reach:
            raise GeometryError(
                f"tube thickness {delta:.4g} is not below the reach {framed.reach:.4g}; projection is ambiguous")
        self.framed = framed
        self.delta = float(delta)
        self.locator = CurveLocator(framed)

    def segment_of(self, s: np.ndarray) -> np.ndarray:
        curve = self.framed.curve
        s = np.asarray(s, dtype=float)
        if curve.closed:
            s = np.mod(s, curve.length)
        return np.clip(np.searchsorted(curve.arclength, s, side="right") - 1, 0, curve.n_segments - 1)

    def point(self, s: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        k = self.segment_of(s)
        return (self.framed.curve.point_at(s) + np.asarray(v)[..., None] * self.framed.e1[k]
                + np.asarray(w)[..., None] * self.framed.e2[k])

    def coords(self, points: np.ndarray) -> Dict[str, np.ndarray]:
        proj = self.locator.project(points)
        offset = np.asarray(points, dtype=float) - proj["foot"]
        k = proj["segment"]
        proj["v"] = np.einsum("...c,...c->...", offset, self.framed.e1[k])
        proj["w"] = np.einsum("...c,...c->...", offset, self.framed.e2[k])
        proj["inside"] = proj["distance"] < self.delta
        return proj

    def tubular_coords(self, x: Sequence[float]) -> Optional[Tuple[float, float, float]]:
        """(s, v, w) of a point inside the tube, None outside"""
        c = self.coords(np.asarray(x, dtype=float)[None, :])
        if not c["inside"][0]:
            return None
        return float(c["s"][0]), float(c["v"][0]), float(c["w"][0])

    def volume_jacobian(self, s: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """J = 1 - x_perp . curvature vector at s"""
        s = np.asarray(s, dtype=float)
        k = self.segment_of(s)
        curve = self.framed.curve
        t = (np.mod(s, curve.length) if curve.closed else s) - curve.arclength[k]
        t = np.clip(t / curve.segment_lengths[k], 0.0, 1.0)
        x_perp = np.asarray(v)[..., None] * self.framed.e1[k] + np.asarray(w)[..., None] * self.framed.e2[k]
        kappa = self.framed.curvature_at(k, t)
        return 1.0 - np.einsum("...c,...c->...", x_perp, kappa)


def _pieces_inside(d0: np.ndarray, d1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inside sub-interval [t0, t1] of each piece from linear interpolation of d"""
    t0 = np.zeros_like(d0)
    t1 = np.ones_like(d0)
    cross = (d0 < 0) != (d1 < 0)
    tc = np.where(cross, d0 / np.where(cross, d0 - d1, 1.0), 0.0)
    t1 = np.where(cross & (d0 < 0), tc, t1)
    t0 = np.where(cross & (d1 < 0), tc, t0)
    outside = (d0 >= 0) & (d1 >= 0)
    t1 = np.where(outside, t0, t1)
    return t0, t1


def weighted_length(curve: PolyCurve, rho: Optional[ScalarField], domain: Domain) -> float:
    """
    Integral of rho^2 along the part of the curve inside the domain

    Args:
        curve: Curve (any orientation)
        rho: Weight on nodes; None measures plain length inside the domain
        domain: Domain restricting the integral

    Returns:
        Weighted length
    """
    h = domain.grid.spacing
    pts, arc, _ = curve.refine(0.5 * h)
    d = domain.distance(pts)
    t0, t1 = _pieces_inside(d[:-1], d[1:])
    seg = pts[1:] - pts[:-1]
    lengths = np.diff(arc)
    inside_len = (t1 - t0) * lengths
    if not np.any(inside_len > 0):
        warnings.warn(f"{curve.name} does not meet the domain; weighted length is 0", NumericalWarning)
        return 0.0
    if rho is None:
        return float(np.sum(inside_len))
    rho2 = interpolator(domain.grid, rho.values ** 2, rho.placement)
    p0 = pts[:-1] + t0[:, None] * seg
    p1 = pts[:-1] + t1[:, None] * seg
    active = inside_len > 0
    values = 0.5 * (rho2(p0[active]) + rho2(p1[active]))
    return float(np.sum(values * inside_len[active]))


def length_in_domain(curve: PolyCurve, domain: Domain) -> float:
    return weighted_length(curve, None, domain)


def line_integral_in_domain(curve: PolyCurve, fn: Callable[[np.ndarray], np.ndarray], domain: Domain) -> float:
    """Simpson line integral of a vector field along the part of the curve inside the domain"""
    pts, _, _ = curve.refine(0.5 * domain.grid.spacing)
    d = domain.distance(pts)
    t0, t1 = _pieces_inside(d[:-1], d[1:])
    keep = t1 > t0
    if not np.any(keep):
        return 0.0
    seg = (pts[1:] - pts[:-1])[keep]
    p0 = pts[:-1][keep] + t0[keep, None] * seg
    p1 = pts[:-1][keep] + t1[keep, None] * seg
    mean = (fn(p0) + 4.0 * fn(0.5 * (p0 + p1)) + fn(p1)) / 6.0
    return float(np.einsum("nc,nc->", mean, p1 - p0))


@dataclass
class Crossing:
    position: np.ndarray
    s: float
    angle_deg: float
    entering: bool
    flagged: bool


def transversality(curve: PolyCurve, domain: Domain, samples: int = 400,
                   graze_tol: Optional[float] = None) -> List[Crossing]:
    """
    Crossing angles between the curve and the boundary's tangent plane

    Args:
        curve: Curve to test
        domain: Domain whose boundary is crossed
        samples: Minimum number of samples along the curve
        graze_tol: Distance below which a touching without sign change is a violation

    Returns:
        One Crossing per sign change of the signed distance
    """
    step = min(curve.length / samples, 0.5 * domain.grid.spacing)
    pts, arc, parent = curve.refine(step)
    d = domain.distance(pts)
    tol = graze_tol if graze_tol is not None else 1e-3 * max(domain.bounding_radius, domain.grid.spacing)
    interior = np.arange(1, len(d) - 1)
    touching = interior[(np.abs(d[interior]) < tol)
                        & (np.sign(d[interior - 1]) == np.sign(d[interior + 1]))
                        & (np.abs(d[interior]) <= np.abs(d[interior - 1]))
                        & (np.abs(d[interior]) <= np.abs(d[interior + 1]))]
    if touching.size:
        k = int(touching[0])
        raise GeometryError(f"{curve.name} grazes the boundary without crossing near s={arc[k]:.4g}")
    crossings = []
    tangents = curve.segment_vectors / curve.segment_lengths[:, None]
    for k in np.flatnonzero((d[:-1] < 0) != (d[1:] < 0)):
        t = d[k] / (d[k] - d[k + 1])
        pos = pts[k] + t * (pts[k + 1] - pts[k])
        s = arc[k] + t * (arc[k + 1] - arc[k])
        normal = domain.normal(pos[None, :])[0]
        sin = abs(float(np.dot(tangents[parent[k]], normal)))
        angle = float(np.degrees(np.arcsin(min(sin, 1.0))))
        crossings.append(Crossing(pos, float(s), angle, bool(d[k + 1] < 0), angle < MIN_CROSSING_DEG))
        if angle < MIN_CROSSING_DEG:
            logger.warning("shallow boundary crossing of %s: %.2f deg at s=%.4g", curve.name, angle, s)
    return crossings


def _slerp(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    ua, ub = a / np.linalg.norm(a), b / np.linalg.norm(b)
    cos = float(np.clip(np.dot(ua, ub), -1.0, 1.0))
    angle = np.arccos(cos)
    if angle < 1e-12:
        return np.array([a])
    if np.pi - angle < 1e-9:
        helper = np.eye(3)[int(np.argmin(np.abs(ua)))]
        axis = np.cross(ua, helper)
        axis /= np.linalg.norm(axis)
        ts = np.linspace(0.0, np.pi, n + 1)
        return np.array([np.linalg.norm(a) * _rotate(ua, axis, t) for t in ts])
    ts = np.linspace(0.0, 1.0, n + 1)
    radius = np.linalg.norm(a) + ts * (np.linalg.norm(b) - np.linalg.norm(a))
    dirs = (np.sin((1 - ts) * angle)[:, None] * ua + np.sin(ts * angle)[:, None] * ub) / np.sin(angle)
    return radius[:, None] * dirs


def _straight(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    n = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    return a + t[:, None] * (b - a)


def extend_open_curve(curve: PolyCurve, domain: Domain, delta: float, cap_scale: float = 1.5,
                      arc_points: int = 64) -> PolyCurve:
    """
    Close an open curve outside the domain

    Each end is continued straight along its exit tangent by 3*delta, lifted
    radially to a sphere enclosing the domain and joined by a great-circle arc.

    Args:
        curve: Open curve whose endpoints lie on or outside the boundary
        domain: Domain to avoid
        delta: Tube thickness used for the straight extension
        cap_scale: Cap sphere radius as a multiple of the domain's bounding radius
        arc_points: Number of arc pieces on the cap sphere

    Returns:
        Closed PolyCurve
    """
    if curve.closed:
        return curve
    c = domain.center
    tangents = curve.segment_vectors / curve.segment_lengths[:, None]
    start, end = curve.endpoints
    out_end = end + 3.0 * delta * tangents[-1]
    out_start = start - 3.0 * delta * tangents[0]
    if domain.distance(out_end[None, :])[0] <= 0 or domain.distance(out_start[None, :])[0] <= 0:
        raise GeometryError("curve extension re-enters the domain; endpoints must exit transversally")
    r_cap = cap_scale * domain.bounding_radius + 3.0 * delta
    step = max(delta, 1e-3 * r_cap)

    def lift(p: np.ndarray) -> np.ndarray:
        rel = p - c
        return c + r_cap * rel / np.linalg.norm(rel)

    pieces = [curve.vertices]
    pieces.append(_straight(end, out_end, step)[1:])
    if np.linalg.norm(out_end - c) < r_cap - 1e-12:
        pieces.append(_straight(out_end, lift(out_end), step)[1:])
    arc = c + _slerp(lift(out_end) - c, lift(out_start) - c, arc_points)
    pieces.append(arc[1:])
    if np.linalg.norm(out_start - c) < r_cap - 1e-12:
        pieces.append(_straight(lift(out_start), out_start, step)[1:])
    pieces.append(_straight(out_start, start, step)[1:-1])
    vertices = np.vstack(pieces)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(vertices, axis=0), axis=1) > 1e-12])
    closed = PolyCurve(vertices[keep], closed=True, name=f"{curve.name} (closed)")
    logger.debug("extended %s: cap radius %.4g, %d vertices", curve.name, r_cap, len(closed))
    return closed


def turning_angles(curve: PolyCurve) -> np.ndarray:
    """Tangent turning angle in degrees at interior vertices (at every vertex if closed)"""
    t = curve.segment_vectors / curve.segment_lengths[:, None]
    if curve.closed:
        prev, nxt = np.roll(t, 1, axis=0), t
    else:
        prev, nxt = t[:-1], t[1:]
    return np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", prev, nxt), -1.0, 1.0)))


def drop_collinear(points: np.ndarray, tol_deg: float = 1e-6) -> np.ndarray:
    """Remove interior vertices of an open polyline where it does not turn"""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return pts
    turns = turning_angles(PolyCurve(pts, False))
    keep = np.concatenate([[True], turns > tol_deg, [True]])
    return pts[keep]


def smooth_corners(curve: PolyCurve, max_turn_deg: float = 5.0, max_passes: int = 12) -> PolyCurve:
    """
    Chaikin corner cutting until no vertex turns by more than ``max_turn_deg``

    Open curves keep their endpoints and end tangents.
    """
    pts = curve.vertices
    current = curve
    for _ in range(max_passes):
        if current.n_segments < 2 or np.max(turning_angles(current)) <= max_turn_deg:
            return current
        ends = np.roll(pts, -1, axis=0) if curve.closed else pts[1:]
        starts = pts if curve.closed else pts[:-1]
        cut = np.empty((2 * len(starts), 3))
        cut[0::2] = 0.75 * starts + 0.25 * ends
        cut[1::2] = 0.25 * starts + 0.75 * ends
        pts = cut if curve.closed else np.vstack([pts[:1], cut[1:-1], pts[-1:]])
        current = PolyCurve(pts, curve.closed, curve.name)
    if current.n_segments >= 2 and np.max(turning_angles(current)) > max_turn_deg:
        raise GeometryError(f"corner smoothing of {curve.name} did not reach {max_turn_deg} degrees per vertex")
    return current


def straight_curve(a: Sequence[float], b: Sequence[float], n: int = 64, name: str = "segment") -> PolyCurve:
    t = np.linspace(0.0, 1.0, n + 1)
    a, b = np.asarray(a, float), np.asarray(b, float)
    return PolyCurve(a + t[:, None] * (b - a), False, name)


def circle_curve(center: Sequence[float], radius: float, n: int = 256, normal_axis: int = 2,
                 name: str = "circle") -> PolyCurve:
    t = 2.0 * np.pi * np.arange(n) / n
    pts = np.zeros((n, 3))
    u, v = [b for b in range(3) if b != normal_axis]
    pts[:, u] = radius * np.cos(t)
    pts[:, v] = radius * np.sin(t)
    return PolyCurve(pts + np.asarray(center, float), True, name)


def helix_curve(turns: float = 2.0, pitch: float = 0.25, n: int = 512, name: str = "helix") -> PolyCurve:
    t = np.linspace(0.0, 2.0 * np.pi * turns, n + 1)
    return PolyCurve(np.stack([np.cos(t), np.sin(t), pitch * t], axis=1), False, name)
