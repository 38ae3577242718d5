"""Degree-one radial vortex profile and its core energy constant."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_bvp

from utils.errors import ConfigurationError, ConvergenceError, SolverError

logger = logging.getLogger(__name__)

# g = f / r solves g'' + 3 g' / r + g (1 - r^2 g^2) = 0; the singular term has eigenvalues 0 and -3
_SINGULAR = np.array([[0.0, 0.0], [0.0, -3.0]])


def far_field(r: np.ndarray) -> np.ndarray:
    """Two-term expansion 1 - 1/(2r^2) - 9/(8r^4) of the profile at infinity"""
    r = np.asarray(r, dtype=float)
    return 1.0 - 0.5 / r ** 2 - 1.125 / r ** 4


@dataclass(eq=False)
class VortexProfile:
    r_max: float
    r: np.ndarray
    f: np.ndarray
    df: np.ndarray
    slope: float
    residual: float
    solution: Any = field(repr=False, default=None)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        inner = np.minimum(r, self.r_max)
        values = inner * self.solution.sol(inner)[0]
        return np.where(r > self.r_max, far_field(np.maximum(r, self.r_max)), values)

    def derivative(self, r: np.ndarray) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        inner = np.clip(r, 0.0, self.r_max)
        g, dg = self.solution.sol(inner)
        values = g + inner * dg
        outside = np.maximum(r, self.r_max)
        return np.where(r > self.r_max, 1.0 / outside ** 3 + 4.5 / outside ** 5, values)

    def table(self) -> Dict[str, np.ndarray]:
        return {"r": self.r, "f0": self.f, "df0": self.df}


@dataclass(frozen=True)
class GammaEstimate:
    value: float
    uncertainty: float
    table: List[Dict[str, float]]
    converged: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"gamma": self.value, "uncertainty": self.uncertainty, "converged": self.converged,
                "table": self.table}


class ProfileSolver:
    """Class to solve f'' + f'/r - f/r^2 + f(1 - f^2) = 0, f(0) = 0, f(inf) = 1"""

    def __init__(self, tol: float = 1e-10, max_nodes: int = 1000000):
        self.tol = tol
        self.max_nodes = max_nodes

    @staticmethod
    def _rhs(r: np.ndarray, y: np.ndarray) -> np.ndarray:
        g, dg = y
        return np.vstack([dg, -g * (1.0 - (r * g) ** 2)])

    @staticmethod
    def _equation_residual(sol, r: np.ndarray) -> float:
        """Largest |g'' + 3 g'/r + g (1 - r^2 g^2)| of the interpolant away from the axis"""
        g, dg = sol.sol(r)
        d2g = sol.sol(r, 1)[1]
        return float(np.max(np.abs(d2g + 3.0 * dg / r + g * (1.0 - (r * g) ** 2))))

    def solve(self, r_max: float = 100.0, n: int = 4000) -> VortexProfile:
        """
        Collocation solve on [0, r_max] with the far-field expansion as boundary value

        The unknowns are (g, g') with f = r g, so the 3/r term is a regular singular
        point handled by the collocation scheme and g'(0) = 0 is the axis condition.

        Args:
            r_max: Outer radius (at least 20)
            n: Initial mesh size (at least 2000)

        Returns:
            VortexProfile with f0 increasing and below 1
        """
        if r_max < 20 or n < 2000:
            raise ConfigurationError(f"profile needs r_max >= 20 and n >= 2000, got {r_max}, {n}")
        r = np.linspace(0.0, r_max, n)
        guess = np.vstack([1.0 / np.sqrt(r ** 2 + 2.0), -r / (r ** 2 + 2.0) ** 1.5])
        outer = float(far_field(r_max))

        def bc(ya, yb):
            return np.array([ya[1], r_max * yb[0] - outer])

        sol = solve_bvp(self._rhs, bc, r, guess, S=_SINGULAR, tol=self.tol, bc_tol=self.tol,
                        max_nodes=self.max_nodes)
        if sol.status != 0:
            raise SolverError(f"profile collocation failed: {sol.message}",
                              [float(np.max(sol.rms_residuals))] if sol.rms_residuals is not None else [])
        mesh = sol.x
        g, dg = sol.y
        f = mesh * g
        df = g + mesh * dg
        slope = float(g[0])
        residual = float(np.max(sol.rms_residuals))
        quarter = mesh[:-1] + 0.25 * np.diff(mesh)
        pointwise = self._equation_residual(sol, quarter[quarter > 1e-6])
        if np.any(np.diff(f) < -self.tol) or f.max() >= 1.0:
            raise SolverError(f"profile is not increasing below 1 (max f = {f.max():.12g})", [residual])
        logger.info("vortex profile on [0, %g]: %d nodes, residual %.2e (pointwise %.2e), slope %.8f",
                    r_max, mesh.size, residual, pointwise, slope)
        return VortexProfile(float(r_max), mesh, f, df, slope, residual, sol)


def solve_profile(r_max: float = 100.0, n: int = 4000, tol: float = 1e-10) -> VortexProfile:
    return ProfileSolver(tol=tol).solve(r_max, n)


def energy_functional(f: Callable[[np.ndarray], np.ndarray], df: Callable[[np.ndarray], np.ndarray],
                      R: float, breakpoints: np.ndarray, order: int = 8) -> float:
    """
    I(R) = 1/2 int_0^R (f'^2 + f^2/r^2 + (1 - f^2)^2 / 2) r dr, without the angular factor

    Gauss-Legendre quadrature on each interval of ``breakpoints`` below R.
    """
    if R <= 0:
        return 0.0
    knots = np.concatenate([[0.0], breakpoints[(breakpoints > 0) & (breakpoints < R)], [R]])
    nodes, weights = leggauss(order)
    a, b = knots[:-1, None], knots[1:, None]
    r = 0.5 * (b - a) * nodes + 0.5 * (a + b)
    w = 0.5 * (b - a) * weights
    fv = f(r)
    density = df(r) ** 2 + fv ** 2 / r ** 2 + 0.5 * (1.0 - fv ** 2) ** 2
    return float(0.5 * np.sum(w * density * r))


def radial_energy(profile: VortexProfile, R: float) -> float:
    if R > profile.r_max * (1 + 1e-12):
        raise ConfigurationError(f"R={R} exceeds the profile radius {profile.r_max}")
    return energy_functional(profile, profile.derivative, R, profile.r)


def core_remainder(profile: VortexProfile, R: float, gamma: float) -> float:
    """2*pi*I(R) - (pi log R + gamma)"""
    return 2.0 * np.pi * radial_energy(profile, R) - (np.pi * np.log(R) + gamma)


def gamma_constant(profile: VortexProfile, levels: int = 5) -> GammaEstimate:
    """
    Extrapolate 2*pi*I(R) - pi*log(R) to R -> infinity

    Radii R_k = r_max / 2^k, combined pairwise by Richardson extrapolation in 1/R^2.

    Args:
        profile: Solved profile with r_max >= 50
        levels: Number of radii

    Returns:
        GammaEstimate whose uncertainty is the last extrapolant difference
    """
    if profile.r_max < 50:
        raise ConfigurationError("gamma extraction needs r_max >= 50")
    radii = profile.r_max / 2.0 ** np.arange(levels, 0, -1)
    finite = [2.0 * np.pi * radial_energy(profile, R) - np.pi * np.log(R) for R in radii]
    extrapolants = [(4.0 * finite[i + 1] - finite[i]) / 3.0 for i in range(len(radii) - 1)]
    table = [{"R": float(R), "finite_part": float(g), "extrapolant": float(e) if e is not None else None}
             for R, g, e in zip(radii, finite, [None] + extrapolants)]
    steps = np.abs(np.diff(extrapolants))
    converged = bool(np.all(steps[1:] <= steps[:-1] + 1e-12)) if len(steps) > 1 else True
    if not converged:
        raise ConvergenceError("gamma extrapolants are not monotonically converging", table)
    value = float(extrapolants[-1])
    uncertainty = float(steps[-1]) if len(steps) else float(abs(extrapolants[-1] - finite[-1]))
    logger.info("gamma = %.8f +- %.2e", value, uncertainty)
    return GammaEstimate(value, uncertainty, table, converged)


def normalized_modulus(profile: VortexProfile, distance: np.ndarray, epsilon: float, radius: float) -> np.ndarray:
    """f0(d / eps) / f0(radius / eps) inside the tube d < radius, 1 outside"""
    d = np.asarray(distance, dtype=float)
    norm = float(profile(radius / epsilon))
    return np.where(d < radius, profile(np.minimum(d, radius) / epsilon) / norm, 1.0)
