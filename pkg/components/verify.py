"""Desk-resolution property checks behind ``glpin verify``."""

import logging
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from utils.biot_savart import BiotSavartField, solve_jA
from utils.construction import assemble, tube_radius
from utils.energy import free_energy, split_energy
from utils.errors import ConfigurationError, GlpinError
from utils.geometry import build_frame, circle_curve, straight_curve
from utils.grid import Grid, Placement, ScalarField, VectorField, curl, div, grad, make_ball_domain
from utils.isoflux import LatticeGraph, extend_curve, maximize_graph_ratio
from utils.meissner import solve_B0, uniform_applied_field
from utils.pinning import make_model, solve_rho, unit_weight
from utils.profile import gamma_constant, solve_profile

logger = logging.getLogger(__name__)

DESK_SPACING = 0.125
DESK_EPSILON = 0.2
DESK_N = 0.1
DESK_ALPHA = 0.5

Row = Dict[str, Any]


def _row(module: str, check: str, value: float, tolerance: float, passed: Optional[bool] = None) -> Row:
    value = float(value)
    return {"module": module, "check": check, "value": value, "tolerance": tolerance,
            "passed": bool(value <= tolerance) if passed is None else bool(passed)}


def desk_domain(spacing: float = DESK_SPACING, pad: int = 4):
    grid = Grid.around_ball((0.0, 0.0, 0.0), 1.0, spacing, pad)
    return make_ball_domain((0.0, 0.0, 0.0), 1.0, grid)


def check_grid(seed: int = 0) -> List[Row]:
    rng = np.random.default_rng(seed)
    grid = Grid((0.0, 0.0, 0.0), 0.1, (9, 10, 11), 1)
    worst_cg, worst_dc, worst_dual = 0.0, 0.0, 0.0
    for _ in range(100):
        f = ScalarField(grid, rng.normal(size=grid.shape(Placement.NODE)))
        v = VectorField(grid, tuple(rng.normal(size=grid.shape(Placement.EDGE, a)) for a in range(3)))
        w = VectorField(grid, tuple(rng.normal(size=grid.shape(Placement.FACE, a)) for a in range(3)),
                        Placement.FACE)
        worst_cg = max(worst_cg, curl(grad(f)).max_abs())
        worst_dc = max(worst_dc, float(np.max(np.abs(div(curl(v)).values))))
        worst_dual = max(worst_dual, float(np.max(np.abs(div(curl(w)).values))))
    return [_row("grid", "curl grad = 0", worst_cg, 1e-12 / grid.h ** 2),
            _row("grid", "div curl = 0", worst_dc, 1e-12 / grid.h ** 2),
            _row("grid", "dual div curl = 0", worst_dual, 1e-12 / grid.h ** 2)]


def check_pinning(seed: int = 0) -> List[Row]:
    domain = desk_domain()
    weight = solve_rho(make_model(domain, "constant", 0.5, DESK_EPSILON, value=0.64), domain)
    exact = float(np.max(np.abs(weight.rho.values[domain.active] - 0.8)))
    bump = solve_rho(make_model(domain, "bump", 0.5, DESK_EPSILON, centers=[[0.2, 0.0, 0.0]], sigma=0.3), domain)
    rho2 = bump.rho_squared[domain.active]
    return [_row("pinning", "a = c gives rho = sqrt(c)", exact, 1e-10),
            _row("pinning", "bump residual", bump.residual, 1e-8),
            _row("pinning", "b <= rho^2 <= 1", max(0.5 - rho2.min(), rho2.max() - 1.0, 0.0), 1e-8)]


def check_profile(seed: int = 0) -> List[Row]:
    coarse = solve_profile(100.0, 2000)
    fine = solve_profile(100.0, 4000)
    g1, g2 = gamma_constant(coarse).value, gamma_constant(fine).value
    return [_row("profile", "ode residual", fine.residual, 1e-8),
            _row("profile", "gamma resolution agreement", abs(g1 - g2) / abs(g2), 5e-5),
            _row("profile", "0 <= f0 < 1", max(-fine.f.min(), fine.f.max() - 1.0, 0.0), 1e-10,
                 passed=fine.f.min() >= -1e-10 and fine.f.max() < 1.0),
            _row("profile", "f0 increasing", max(-float(np.min(np.diff(fine.f))), 0.0), 1e-10)]


def _square_loop(center, half: float, normal_axis: int) -> np.ndarray:
    u, v = [b for b in range(3) if b != normal_axis]
    loop = np.zeros((4, 3))
    for k, (s, t) in enumerate(((-1, -1), (1, -1), (1, 1), (-1, 1))):
        loop[k, u], loop[k, v] = s * half, t * half
    return loop + np.asarray(center, dtype=float)


def check_biot_savart(seed: int = 0) -> List[Row]:
    n = 256
    field = BiotSavartField(build_frame(circle_curve((0.0, 0.0, 0.0), 1.0, n)))
    center = field(np.zeros((1, 3)))[0]
    exact = n * np.tan(np.pi / n)
    linked = abs(field.circulation(_square_loop((1.0, 0.0, 0.0), 0.2, 1)))
    unlinked = abs(field.circulation(_square_loop((2.0, 0.0, 0.0), 0.2, 1)))

    domain = desk_domain()
    radius = tube_radius(DESK_EPSILON, DESK_N, DESK_ALPHA)
    _, framed = extend_curve(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 32), domain, radius)
    fields = solve_jA(framed, domain)
    return [_row("biot_savart", "circle centre value", abs(center[2] - exact) + abs(center[:2]).sum(), 1e-10),
            _row("biot_savart", "circulation of a linked loop", abs(linked - 2.0 * np.pi) / (2.0 * np.pi), 0.02),
            _row("biot_savart", "circulation of an unlinked loop", unlinked, 0.02),
            _row("biot_savart", "corrected field defects", len(fields.defects), 0)]


def check_meissner(seed: int = 0) -> List[Row]:
    domain = desk_domain()
    weight = unit_weight(domain, DESK_EPSILON)
    state = solve_B0(weight, uniform_applied_field(domain.grid), domain)
    return [_row("meissner", "energy coefficient positive", -state.energy_coefficient, 0.0),
            _row("meissner", "div B0", state.div_residual, 1e-8),
            _row("meissner", "invariant defects", len(state.defects), 0)]


def _desk_configuration(domain):
    weight = unit_weight(domain, DESK_EPSILON)
    radius = tube_radius(DESK_EPSILON, DESK_N, DESK_ALPHA)
    source, framed = extend_curve(straight_curve((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 32), domain, radius)
    fields = solve_jA(framed, domain)
    cfg = assemble(source, framed, DESK_EPSILON, weight, solve_profile(), fields, domain, DESK_N, DESK_ALPHA)
    return weight, cfg


def check_construction(seed: int = 0) -> List[Row]:
    domain = desk_domain()
    try:
        _, cfg = _desk_configuration(domain)
    except GlpinError as exc:
        logger.error("construction check failed: %s", exc)
        return [_row("construction", f"assembly ({type(exc).__name__})", 1.0, 0.0)]
    modulus = cfg.u.modulus[domain.active]
    checked = int(cfg.metadata["faces_checked"])
    return [_row("construction", "faces with winding = piercing", -checked, 0.0, passed=checked > 0),
            _row("construction", "phase closure residual", cfg.closure_residual, 1e-3),
            _row("construction", "|u| <= 1", max(modulus.max() - 1.0, 0.0), 1e-12)]


def check_energy(seed: int = 0) -> List[Row]:
    domain = desk_domain()
    weight, cfg = _desk_configuration(domain)
    state = solve_B0(weight, uniform_applied_field(domain.grid), domain)
    report = free_energy(cfg, weight, domain)
    split = split_energy(cfg, weight, state, 1.0, domain)
    return [_row("energy", "free energy positive", -report.total, 0.0),
            _row("energy", "splitting identity", split.relative_defect, 5.0 * domain.grid.h ** 2)]


def random_lattice(rng: np.random.Generator, shape=(3, 3, 1)) -> LatticeGraph:
    """Small lattice with random circulations and lengths; its outer nodes touch the boundary"""
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, 3)
    lookup = {tuple(p): k for k, p in enumerate(idx)}
    tails, heads = [], []
    for k, p in enumerate(idx):
        for a in range(3):
            q = p.copy()
            q[a] += 1
            if tuple(q) in lookup:
                tails.append(k)
                heads.append(lookup[tuple(q)])
    m = len(tails)
    boundary = np.array([any(p[a] in (0, shape[a] - 1) and shape[a] > 1 for a in range(3)) for p in idx])
    return LatticeGraph(idx.astype(float), np.array(tails), np.array(heads), rng.normal(size=m),
                        rng.uniform(0.5, 1.5, size=m), boundary)


def check_isoflux(seed: int = 0) -> List[Row]:
    rng = np.random.default_rng(seed)
    worst_step, worst_scaling = np.inf, 0.0
    for _ in range(20):
        graph = random_lattice(rng)
        optimum = maximize_graph_ratio(graph)
        worst_step = min(worst_step, float(np.min(np.diff(optimum.history))) if len(optimum.history) > 1 else np.inf)
        scaled = maximize_graph_ratio(graph.scaled(flux=3.0, weight=0.5))
        worst_scaling = max(worst_scaling, abs(scaled.ratio - 6.0 * optimum.ratio) / max(abs(optimum.ratio), 1e-12))
    return [_row("isoflux", "lambda strictly increasing", -worst_step, 0.0, passed=worst_step > 0),
            _row("isoflux", "ratio homogeneity", worst_scaling, 1e-10)]


CHECKS: Dict[str, Callable[[int], List[Row]]] = {
    "grid": check_grid,
    "pinning": check_pinning,
    "profile": check_profile,
    "biot_savart": check_biot_savart,
    "meissner": check_meissner,
    "construction": check_construction,
    "energy": check_energy,
    "isoflux": check_isoflux,
}


def run_checks(module: str = "all", seed: int = 0) -> pd.DataFrame:
    """
    Run the property checks of one module, or of all of them

    Args:
        module: Module name or ``all``
        seed: Seed of the random samples

    Returns:
        DataFrame with one row per check and a boolean ``passed`` column
    """
    if module != "all" and module not in CHECKS:
        raise ConfigurationError(f"unknown module {module!r}; choose from all, {', '.join(CHECKS)}")
    rows: List[Row] = []
    for name in (CHECKS if module == "all" else [module]):
        try:
            rows.extend(CHECKS[name](seed))
        except GlpinError as exc:
            logger.error("checks of %s raised %s", name, exc)
            rows.append(_row(name, f"raised {type(exc).__name__}: {exc}", 1.0, 0.0, passed=False))
    return pd.DataFrame(rows, columns=["module", "check", "value", "tolerance", "passed"])
