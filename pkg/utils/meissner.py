"""Vortexless Meissner state of the weighted functional.

The state is the minimizer over edge potentials A of

    1/2 sum_{links in Omega} V rho_i rho_j A^2 + 1/2 sum_{box faces} h^3 |curl A - H0|^2,

a weighted London problem.  From it

* ``B_tilde = H0 - curl A`` on faces, so that ``curl* B_tilde = w rho rho A`` on links in Omega;
* ``B0`` is ``B_tilde`` plus a dual gradient that cancels it on the faces outside
  Omega, so ``B0`` vanishes there (zero tangential trace) and keeps the same dual curl;
* the Coulomb split ``A = A_C - grad(phi)`` with ``div A_C = 0``.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from utils.errors import ConfigurationError, NumericalWarning, SolverError
from utils.grid import (Domain, Grid, Placement, ScalarField, VectorField, curl, dirichlet_poisson, div, grad,
                        interpolator)
from utils.pinning import Weight, link_density

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AppliedField:
    """Divergence-free applied field H0 on faces with intensity h_ex"""

    H0: VectorField
    h_ex: float = 1.0
    tol: float = 1e-10

    def __post_init__(self):
        if self.H0.placement != Placement.FACE:
            raise ConfigurationError("the applied field lives on faces")
        residual = np.max(np.abs(div(self.H0).values)) * self.H0.grid.spacing
        if residual > self.tol * max(self.H0.max_abs(), 1.0):
            raise ConfigurationError(f"applied field is not divergence-free (residual {residual:.3e})")

    def scaled(self) -> VectorField:
        return self.H0.scale(self.h_ex)


def uniform_applied_field(grid: Grid, direction: Sequence[float] = (0.0, 0.0, 1.0), h_ex: float = 1.0) -> AppliedField:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    comps = tuple(np.full(grid.shape(Placement.FACE, a), d[a]) for a in range(3))
    return AppliedField(VectorField(grid, comps, Placement.FACE, "H0"), h_ex)


def exterior_faces(domain: Domain) -> List[np.ndarray]:
    """Faces whose four bounding links all lie outside Omega"""
    w = domain.link_weights
    masks = []
    for a in range(3):
        b, c = [x for x in range(3) if x != a]
        zero = np.ones(domain.grid.shape(Placement.FACE, a), dtype=bool)
        for along, across in ((b, c), (c, b)):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[across] = slice(None, -1)
            hi[across] = slice(1, None)
            zero &= (w[along][tuple(lo)] == 0.0) & (w[along][tuple(hi)] == 0.0)
        masks.append(zero)
    return masks


@dataclass(eq=False)
class MeissnerState:
    A0: VectorField
    A0_coulomb: VectorField
    phi0: ScalarField
    B_tilde: VectorField
    B0: VectorField
    exterior: List[np.ndarray]
    energy_coefficient: float
    relation_residual: float
    div_residual: float
    trace_residual: float
    surface_trace: float
    exterior_gradient_residual: float
    defects: List[str] = field(default_factory=list)

    @property
    def current(self) -> VectorField:
        """m = A0_C - grad(phi0), the gauge-invariant Meissner current potential"""
        return self.A0_coulomb - grad(self.phi0)

    def residuals(self) -> Dict[str, float]:
        return {
            "relation": self.relation_residual,
            "div_B0": self.div_residual,
            "tangential_trace": self.trace_residual,
            "surface_trace": self.surface_trace,
            "exterior_gradient": self.exterior_gradient_residual,
        }


class MeissnerSolver:
    """Class to compute the Meissner state for a weight and an applied field"""

    def __init__(self, domain: Domain, rtol: float = 1e-10, max_iter: int = 50000, tol: float = 1e-6):
        self.domain = domain
        self.rtol = rtol
        self.max_iter = max_iter
        self.tol = tol

    def _cg(self, matrix: sp.csr_matrix, rhs: np.ndarray, what: str) -> np.ndarray:
        precond = sp.diags(1.0 / np.maximum(matrix.diagonal(), 1e-300))
        x, info = cg(matrix, rhs, rtol=self.rtol, atol=0.0, maxiter=self.max_iter, M=precond)
        if info != 0:
            raise SolverError(f"{what}: conjugate gradients did not converge (info {info})")
        return x

    def _link_mass(self, weight: Weight) -> np.ndarray:
        op = self.domain.neumann
        mass = np.zeros(sum(int(np.prod(self.domain.grid.shape(Placement.EDGE, a))) for a in range(3)))
        values = op.link_weight * link_density(weight, self.domain)
        offset_edges, offset_links = 0, 0
        for a in range(3):
            count = op.link_index[a].size
            mass[offset_edges + op.link_index[a]] = values[offset_links:offset_links + count]
            offset_edges += int(np.prod(self.domain.grid.shape(Placement.EDGE, a)))
            offset_links += count
        return mass

    def _minimize(self, weight: Weight, applied: AppliedField) -> VectorField:
        grid = self.domain.grid
        C = self.domain.operators.curl
        mass = self._link_mass(weight)
        K = (sp.diags(mass) + C.T @ C).tocsr()
        rhs = C.T @ applied.H0.flat()
        x = self._cg(K, rhs, "weighted London problem")
        return VectorField.from_flat(grid, x, Placement.EDGE, "A0")

    def _trace_potential(self, B_tilde: VectorField, exterior: List[np.ndarray]) -> np.ndarray:
        grid = self.domain.grid
        G = self.domain.operators.cell_grad
        rows = []
        for a in range(3):
            keep = exterior[a].copy()
            index = [slice(None)] * 3
            for end in (0, -1):
                index[a] = end
                keep[tuple(index)] = False
            rows.append(keep.ravel())
        rows = np.concatenate(rows)
        Gz = G[rows]
        touched = np.asarray(abs(Gz).sum(axis=0)).ravel() > 0
        psi = np.zeros(G.shape[1])
        if not np.any(touched):
            return psi
        Gzt = Gz[:, touched]
        normal = (Gzt.T @ Gzt).tocsr()
        psi[touched] = self._cg(normal, -(Gzt.T @ B_tilde.flat()[rows]), "exterior potential")
        free = ~touched
        if np.any(free):
            lap = (G.T @ G).tocsr()
            rhs = -(lap[free][:, touched] @ psi[touched])
            psi[free] = self._cg(lap[free][:, free], rhs, "harmonic extension")
        return psi

    def solve(self, weight: Weight, applied: AppliedField) -> MeissnerState:
        """
        Solve the weighted London problem and assemble (A0, phi0, B0)

        Args:
            weight: Solved weight rho
            applied: Applied field H0 (its intensity is ignored; states are per unit h_ex)

        Returns:
            MeissnerState with independently re-evaluated residuals
        """
        domain = self.domain
        grid = domain.grid
        if weight.grid != grid or applied.H0.grid != grid:
            raise ConfigurationError("weight, applied field and domain live on different grids")
        op = domain.neumann

        A0 = self._minimize(weight, applied)
        B_tilde = applied.H0 - curl(A0)
        exterior = exterior_faces(domain)
        psi = self._trace_potential(B_tilde, exterior)
        shift = VectorField.from_flat(grid, domain.operators.cell_grad @ psi, Placement.FACE)
        corrected = B_tilde + shift
        B0 = VectorField(grid, tuple(np.where(z, 0.0, c) for z, c in zip(exterior, corrected.components)),
                         Placement.FACE, "B0")

        chi = dirichlet_poisson(-div(A0).values, np.zeros(grid.dims), grid.spacing)
        A0_coulomb = A0 - grad(ScalarField(grid, chi))
        phi0 = ScalarField(grid, -chi, Placement.NODE, "phi0")

        m_links = op.edges_to_links(A0)
        density = op.link_weight * link_density(weight, domain)
        dual_curl = op.edges_to_links(curl(B0))
        scale = max(float(np.max(np.abs(m_links))), 1e-300)
        relation = float(np.max(np.abs(m_links - dual_curl / density))) / scale

        b_scale = max(B0.max_abs(), 1e-300)
        div_b = div(B0).values
        interior_cells = np.ones(grid.shape(Placement.CELL), dtype=bool)
        for a in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            interior_cells &= ~exterior[a][tuple(lo)] & ~exterior[a][tuple(hi)]
        cell_in_omega = domain.fraction(Placement.CELL) > 0
        keep = interior_cells & cell_in_omega
        div_residual = float(np.max(np.abs(div_b[keep])) * grid.spacing / b_scale) if np.any(keep) else 0.0
        trace = max(float(np.max(np.abs(c[z]))) if np.any(z) else 0.0 for z, c in zip(exterior, B0.components))
        surface = self._surface_trace(B0) / b_scale
        gradient_gap = max(float(np.max(np.abs(c[z]))) if np.any(z) else 0.0
                           for z, c in zip(exterior, corrected.components)) / b_scale

        coefficient = meissner_energy_terms(A0, B_tilde, weight, domain)
        defects = []
        if relation > self.tol:
            defects.append(f"relation residual {relation:.3e}")
        if div_residual > self.tol:
            defects.append(f"div B0 residual {div_residual:.3e}")
        for d in defects:
            logger.warning("meissner state flagged: %s", d)
        logger.info("meissner state: energy coefficient %.6f, relation %.2e, div %.2e, surface trace %.2e",
                    coefficient, relation, div_residual, surface)
        return MeissnerState(A0, A0_coulomb, phi0, B_tilde, B0, exterior, coefficient, relation, div_residual,
                             trace / b_scale, surface, gradient_gap, defects)

    def _surface_trace(self, B0: VectorField, samples: int = 400) -> float:
        """max |B0 x nu| at points on a sphere-like sample of the boundary, by trilinear interpolation"""
        domain = self.domain
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(samples, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = domain.project_to_boundary(domain.center + domain.bounding_radius * dirs)
        field_ = np.stack([interpolator(domain.grid, c, Placement.FACE, a)(pts) for a, c in enumerate(B0.components)],
                          axis=1)
        normals = domain.normal(pts)
        return float(np.max(np.linalg.norm(np.cross(field_, normals), axis=1)))


def meissner_energy_terms(A0: VectorField, B_tilde: VectorField, weight: Weight, domain: Domain) -> float:
    op = domain.neumann
    grid = domain.grid
    m = op.edges_to_links(A0)
    kinetic = 0.5 * grid.cell_volume * np.sum(op.link_weight * link_density(weight, domain) * m ** 2)
    magnetic = 0.5 * grid.cell_volume * sum(float(np.sum(c ** 2)) for c in B_tilde.components)
    return float(kinetic + magnetic)


def solve_B0(weight: Weight, applied: AppliedField, domain: Domain, **options) -> MeissnerState:
    return MeissnerSolver(domain, **options).solve(weight, applied)


def meissner_energy(state: MeissnerState, weight: Weight, h_ex: float) -> float:
    """Energy of the Meissner configuration at intensity h_ex: h_ex^2 times the unit coefficient"""
    return float(h_ex ** 2 * state.energy_coefficient)


def curl_l4_norm(state: MeissnerState, domain: Domain) -> float:
    """Discrete L4(Omega) norm of curl B0, from node averages of the dual curl"""
    grid = domain.grid
    c = curl(state.B0)
    node = np.zeros(grid.dims + (3,))
    for a in range(3):
        comp = c.components[a]
        widths = [(0, 0)] * 3
        widths[a] = (1, 1)
        padded = np.pad(comp, widths)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        node[..., a] = 0.5 * (padded[tuple(lo)] + padded[tuple(hi)])
    weights = domain.quadrature_weights(Placement.NODE)
    return float(np.sum(weights * np.sum(node ** 2, axis=-1) ** 2) ** 0.25)


def check_epsilon_stability(norms: Sequence[float], tol: float = 0.1) -> bool:
    """True when successive curl-B0 norms vary by less than ``tol`` relatively"""
    values = np.asarray(norms, dtype=float)
    if values.size < 2:
        return True
    variation = np.abs(np.diff(values)) / np.maximum(np.abs(values[:-1]), 1e-300)
    if np.any(variation >= tol):
        warnings.warn(f"curl B0 norm varies by {variation.max():.1%} under epsilon refinement", NumericalWarning)
        return False
    return True
