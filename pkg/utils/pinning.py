import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import cg, spsolve

from utils.errors import ConfigurationError, NumericalWarning, SolverError
from utils.grid import Domain, Placement, ScalarField

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PinningModel:
    """Pinning term a (values in [b, 1]), lower bound b and coherence length epsilon"""

    a: ScalarField
    b: float
    epsilon: float
    generator: str = "custom"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise ConfigurationError(f"b must lie in (0, 1), got {self.b}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        values = self.a.values
        if values.min() < self.b - 1e-12 or values.max() > 1.0 + 1e-12:
            raise ConfigurationError(
                f"pinning term must take values in [b, 1] = [{self.b}, 1], got [{values.min():.6g}, {values.max():.6g}]")


@dataclass(frozen=True)
class HolderReport:
    alpha: float
    estimate: float
    pairs: int
    c1: Optional[float] = None
    n_exponent: Optional[float] = None
    implied_n: Optional[float] = None
    passes: Optional[bool] = None

    @property
    def label(self) -> str:
        if self.passes is None:
            return "unverified hypothesis"
        return "hypothesis holds (sampled lower bound)" if self.passes else "hypothesis violated"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "estimate": self.estimate,
            "pairs": self.pairs,
            "C1": self.c1,
            "N": self.n_exponent,
            "implied_N": self.implied_n,
            "label": self.label,
        }


@dataclass(eq=False)
class Weight:
    """Solved weight rho with its residual and postcondition defects"""

    rho: ScalarField
    model: PinningModel
    residual: float
    iterations: int
    history: List[float] = field(default_factory=list)
    defects: List[str] = field(default_factory=list)
    holder: Optional[HolderReport] = None

    @property
    def grid(self):
        return self.rho.grid

    @property
    def rho_squared(self) -> np.ndarray:
        return self.rho.values ** 2

    @property
    def epsilon(self) -> float:
        return self.model.epsilon

    def summary(self, domain: Domain) -> Dict[str, Any]:
        rho2 = self.rho_squared[domain.active]
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "min_rho2": float(rho2.min()),
            "max_rho2": float(rho2.max()),
            "epsilon": self.model.epsilon,
            "b": self.model.b,
            "generator": self.model.generator,
            "defects": list(self.defects),
            "holder": self.holder.to_dict() if self.holder else None,
        }


def constant_pinning(domain: Domain, value: float = 1.0) -> ScalarField:
    return ScalarField(domain.grid, np.full(domain.grid.dims, float(value)), Placement.NODE, "a", "1")


def bump_pinning(domain: Domain, b: float, centers: Sequence[Sequence[float]], sigma: float) -> ScalarField:
    """Smooth impurities: 1 - (1 - b) * max_k exp(-|x - x_k|^2 / sigma^2)"""
    pts = domain.grid.points()
    dip = np.zeros(domain.grid.dims)
    for c in centers:
        r2 = np.sum((pts - np.asarray(c, float)) ** 2, axis=-1)
        dip = np.maximum(dip, np.exp(-r2 / sigma ** 2))
    return ScalarField(domain.grid, 1.0 - (1.0 - b) * dip, Placement.NODE, "a", "1")


def periodic_pinning(domain: Domain, b: float, wavelength: float) -> ScalarField:
    pts = domain.grid.points()
    wave = np.prod(np.cos(2.0 * np.pi * pts / wavelength), axis=-1)
    return ScalarField(domain.grid, b + (1.0 - b) * 0.5 * (1.0 + wave), Placement.NODE, "a", "1")


def make_model(domain: Domain, generator: str, b: float, epsilon: float, **params) -> PinningModel:
    """
    Build a pinning model from one of the shipped generators

    Args:
        domain: Domain the model lives on
        generator: 'constant', 'bump' or 'periodic'
        b: Lower bound of the pinning term
        epsilon: Coherence length
        **params: Generator parameters ('value'; 'centers', 'sigma'; 'wavelength')

    Returns:
        PinningModel
    """
    if generator == "constant":
        a = constant_pinning(domain, params.get("value", 1.0))
    elif generator == "bump":
        a = bump_pinning(domain, b, params.get("centers", [domain.center.tolist()]), params.get("sigma", 0.25))
    elif generator == "periodic":
        a = periodic_pinning(domain, b, params.get("wavelength", 0.5))
    else:
        raise ConfigurationError(f"unknown pinning generator '{generator}'")
    return PinningModel(a, b, epsilon, generator, dict(params))


def fill_inactive(values: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Copy each inactive node's value from its nearest active node"""
    if np.all(active):
        return values
    _, index = ndimage.distance_transform_edt(~active, return_indices=True)
    return values[tuple(index)]


class PinningSolver:
    """Class to solve the semilinear Neumann problem for the weight rho"""

    def __init__(self, domain: Domain, tol: float = 1e-10, max_iter: int = 50,
                 linear_rtol: float = 1e-12, max_halvings: int = 30):
        self.domain = domain
        self.tol = tol
        self.max_iter = max_iter
        self.linear_rtol = linear_rtol
        self.max_halvings = max_halvings

    def residual_vector(self, rho: np.ndarray, a: np.ndarray, epsilon: float) -> np.ndarray:
        op = self.domain.neumann
        return op.laplacian @ rho + op.mass * rho * (a - rho ** 2) / epsilon ** 2

    def residual(self, rho: np.ndarray, a: np.ndarray, epsilon: float) -> float:
        """Max-norm of the discrete equation scaled by epsilon^2"""
        return float(epsilon ** 2 * np.max(np.abs(self.residual_vector(rho, a, epsilon))))

    def _newton_step(self, rho: np.ndarray, a: np.ndarray, epsilon: float, g: np.ndarray) -> np.ndarray:
        op = self.domain.neumann
        diag = op.mass * (a - 3.0 * rho ** 2) / epsilon ** 2
        matrix = (-(op.laplacian + sp.diags(diag))).tocsr()
        precond = sp.diags(1.0 / np.maximum(matrix.diagonal(), 1e-300))
        step, info = cg(matrix, g, rtol=self.linear_rtol, atol=0.0, maxiter=10 * len(g), M=precond)
        if info != 0:
            logger.debug("cg returned %d, falling back to a direct solve", info)
            step = spsolve(matrix.tocsc(), g)
        return step

    def solve(self, model: PinningModel) -> Weight:
        """
        Damped Newton iteration from rho = sqrt(a)

        Args:
            model: Pinning model on this solver's domain

        Returns:
            Weight with an independently re-evaluated residual
        """
        grid = self.domain.grid
        if model.a.grid != grid:
            raise ConfigurationError("pinning model and domain live on different grids")
        eps = model.epsilon
        if eps < 2.0 * grid.spacing:
            warnings.warn(f"epsilon={eps:.4g} is below 2h={2 * grid.spacing:.4g}; the weight is under-resolved",
                          NumericalWarning)
        op = self.domain.neumann
        a = op.nodes_to_active(model.a.values)
        rho = np.sqrt(a)
        g = self.residual_vector(rho, a, eps)
        norm = eps ** 2 * np.max(np.abs(g))
        history = [float(norm)]
        iterations = 0
        while norm > self.tol:
            if iterations >= self.max_iter:
                raise SolverError(f"pinning Newton did not converge in {self.max_iter} iterations", history)
            step = self._newton_step(rho, a, eps, g)
            t = 1.0
            for _ in range(self.max_halvings):
                trial = rho + t * step
                g_trial = self.residual_vector(trial, a, eps)
                norm_trial = eps ** 2 * np.max(np.abs(g_trial))
                if norm_trial < norm or norm_trial <= self.tol:
                    break
                t *= 0.5
            else:
                raise SolverError("pinning line search failed to reduce the residual", history)
            rho, g, norm = trial, g_trial, norm_trial
            iterations += 1
            history.append(float(norm))
            logger.debug("pinning newton %d: residual %.3e (step %.3g)", iterations, norm, t)

        values = fill_inactive(op.active_to_nodes(grid, rho), self.domain.active)
        residual = self.residual(op.nodes_to_active(values), a, eps)
        defects = []
        lo, hi = np.sqrt(model.b), 1.0
        if rho.min() < lo - BOUND_TOL or rho.max() > hi + BOUND_TOL:
            defects.append(f"bounds violated: rho in [{rho.min():.10g}, {rho.max():.10g}], expected [{lo:.10g}, 1]")
            logger.warning("pinning weight %s", defects[-1])
        logger.info("pinning solved in %d Newton steps, residual %.3e", iterations, residual)
        weight = ScalarField(grid, values, Placement.NODE, "rho", "1")
        return Weight(weight, model, residual, iterations, history, defects)


def solve_rho(model: PinningModel, domain: Domain, tol: float = 1e-10, **options) -> Weight:
    return PinningSolver(domain, tol=tol, **options).solve(model)


def unit_weight(domain: Domain, epsilon: float, b: float = 0.5) -> Weight:
    """The weight of a constant pinning term a = 1 without running the solver"""
    model = PinningModel(constant_pinning(domain, 1.0), b, epsilon, "constant", {"value": 1.0})
    rho = ScalarField(domain.grid, np.ones(domain.grid.dims), Placement.NODE, "rho", "1")
    return Weight(rho, model, 0.0, 0)


def holder_report(rho: ScalarField, alpha: float, sample_pairs: int = 20000, active: Optional[np.ndarray] = None,
                  seed: int = 0, c1: Optional[float] = None, n_exponent: Optional[float] = None,
                  epsilon: Optional[float] = None) -> HolderReport:
    """
    Sampled lower bound of the alpha-Holder seminorm of rho

    Args:
        rho: Node field
        alpha: Exponent in (0, 1)
        sample_pairs: Number of random node pairs
        active: Optional mask restricting the pairs
        seed: Seed of the pair sampler
        c1, n_exponent, epsilon: Optional bound C1 |log eps|^N to test against

    Returns:
        HolderReport
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    grid = rho.grid
    h = grid.spacing
    values = rho.values
    mask = np.ones(grid.dims, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    best = 0.0
    count = 0

    for axis in range(3):
        offset = 1
        while offset < grid.dims[axis]:
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -offset)
            hi[axis] = slice(offset, None)
            ok = mask[tuple(lo)] & mask[tuple(hi)]
            if np.any(ok):
                diff = np.abs(values[tuple(hi)] - values[tuple(lo)])[ok]
                best = max(best, float(diff.max()) / (offset * h) ** alpha)
                count += int(ok.sum())
            offset *= 2

    rng = np.random.default_rng(seed)
    nodes = np.argwhere(mask)
    if len(nodes) > 1 and sample_pairs > 0:
        i = nodes[rng.integers(len(nodes), size=sample_pairs)]
        j = nodes[rng.integers(len(nodes), size=sample_pairs)]
        dist = h * np.linalg.norm(i - j, axis=1)
        keep = dist >= h
        diff = np.abs(values[tuple(i[keep].T)] - values[tuple(j[keep].T)])
        if np.any(keep):
            best = max(best, float(np.max(diff / dist[keep] ** alpha)))
        count += int(keep.sum())

    implied = passes = None
    if c1 is not None and epsilon is not None:
        log_eps = abs(np.log(epsilon))
        implied = float(max(np.log(best / c1) / np.log(log_eps), 0.0)) if best > 0 and log_eps > 1 else 0.0
        if n_exponent is not None:
            passes = bool(best <= c1 * log_eps ** n_exponent)
    logger.debug("holder estimate %.4g over %d pairs (alpha=%.2f)", best, count, alpha)
    return HolderReport(alpha, best, count, c1, n_exponent, implied, passes)


def interior_gap(weight: Weight, domain: Domain, margin: float) -> float:
    """max |rho^2 - a| over nodes at least ``margin`` inside the boundary"""
    keep = domain.node_distance < -margin
    return float(np.max(np.abs(weight.rho_squared - weight.model.a.values)[keep]))


def link_density(weight: Weight, domain: Domain) -> np.ndarray:
    """rho_i * rho_j on every active link, in the link order of the domain's Neumann operator"""
    op = domain.neumann
    rho = op.nodes_to_active(weight.rho.values)
    return rho[op.link_tails] * rho[op.link_heads]
