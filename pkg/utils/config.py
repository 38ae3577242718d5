import hashlib
import json
import logging
import tomllib
import warnings
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from utils.construction import tube_exponent
from utils.errors import ConfigurationError, NumericalWarning

logger = logging.getLogger(__name__)

BUILTIN_CONFIGS = ("ball-rho1",)


@dataclass(frozen=True)
class DomainConfig:
    shape: str = "ball"
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    spacing: float = 0.0625
    pad: int = 8


@dataclass(frozen=True)
class PinningConfig:
    """Pinning term generator, its parameters and the epsilon list"""

    generator: str = "constant"
    value: float = 1.0
    b: float = 0.5
    centers: Tuple[Tuple[float, float, float], ...] = ((0.0, 0.0, 0.0),)
    sigma: float = 0.2
    wavelength: float = 0.5
    epsilon: Tuple[float, ...] = (0.2, 0.14, 0.1)
    n_exponent: float = 0.25
    alpha: float = 0.5


@dataclass(frozen=True)
class AppliedConfig:
    """Applied field direction, onset intensities and the eta guard"""

    direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    h_ex: Tuple[float, ...] = ()
    h_points: int = 41
    h_span: float = 3.0
    eta: float = 0.45


@dataclass(frozen=True)
class CurveConfig:
    source: str = "isoflux"          # isoflux | file | diameter
    path: str = ""
    axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    max_step: float = 0.0            # 0 means a quarter of the tube radius


@dataclass(frozen=True)
class ConstructionConfig:
    core_fraction: float = 0.25
    tree: str = "bfs"
    profile_rmax: float = 100.0
    profile_n: int = 4000
    test_fields: int = 64
    beta: float = 0.5


@dataclass(frozen=True)
class IsofluxConfig:
    stride: int = 2
    polish: bool = True
    max_iter: int = 200
    c0_bound: float = 10.0


@dataclass(frozen=True)
class TolerancesConfig:
    pinning: float = 1e-10
    profile: float = 1e-10
    biot_savart: float = 1e-8
    meissner: float = 1e-10
    trace: float = 1e-6


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "glpin-out"
    plot: bool = False


_SECTIONS = {
    "domain": DomainConfig,
    "grid": GridConfig,
    "pinning": PinningConfig,
    "applied": AppliedConfig,
    "curve": CurveConfig,
    "construction": ConstructionConfig,
    "isoflux": IsofluxConfig,
    "tolerances": TolerancesConfig,
    "output": OutputConfig,
}


def _freeze(value: Any) -> Any:
    """Turn TOML arrays into nested tuples so sections stay hashable"""
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _section(cls, data: Dict[str, Any], name: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    return cls(**{k: _freeze(v) for k, v in data.items()})


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration, one frozen dataclass per TOML section"""

    name: str = "run"
    seed: int = 0
    domain: DomainConfig = field(default_factory=DomainConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    pinning: PinningConfig = field(default_factory=PinningConfig)
    applied: AppliedConfig = field(default_factory=AppliedConfig)
    curve: CurveConfig = field(default_factory=CurveConfig)
    construction: ConstructionConfig = field(default_factory=ConstructionConfig)
    isoflux: IsofluxConfig = field(default_factory=IsofluxConfig)
    tolerances: TolerancesConfig = field(default_factory=TolerancesConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(data) - set(_SECTIONS) - {"name", "seed"})
        if unknown:
            raise ConfigurationError(f"unknown top-level keys: {', '.join(unknown)}")
        sections = {key: _section(klass, data.get(key, {}), key) for key, klass in _SECTIONS.items()}
        return cls(name=str(data.get("name", "run")), seed=int(data.get("seed", 0)), **sections)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_section(self, section: str, **changes) -> "RunConfig":
        """Copy with some keys of one section replaced"""
        current = getattr(self, section, None)
        if not is_dataclass(current):
            raise ConfigurationError(f"unknown section {section!r}")
        try:
            updated = replace(current, **{k: _freeze(v) for k, v in changes.items()})
        except TypeError as exc:
            raise ConfigurationError(f"bad override for [{section}]: {exc}") from exc
        return replace(self, **{section: updated})

    def tube_radius(self, epsilon: float) -> float:
        return float(abs(np.log(epsilon)) ** (-tube_exponent(self.pinning.n_exponent, self.pinning.alpha)))

    def resolution_problem(self, epsilon: float) -> Optional[str]:
        """Reason why epsilon is not resolved on the grid, or None"""
        h = self.grid.spacing
        if epsilon < 1.5 * h:
            return f"eps={epsilon:.4g} is below 1.5h={1.5 * h:.4g}"
        radius = self.tube_radius(epsilon)
        if radius < 4.0 * h:
            return f"eps={epsilon:.4g}: tube radius {radius:.4g} is below 4h={4 * h:.4g}"
        return None

    def admissible_epsilons(self, sweep: bool = False) -> List[float]:
        """
        The epsilon list filtered by resolution

        In sweep mode under-resolved values are dropped with a warning, otherwise they are rejected.
        """
        keep = []
        for eps in self.pinning.epsilon:
            problem = self.resolution_problem(eps)
            if problem is None:
                keep.append(float(eps))
            elif sweep:
                warnings.warn(f"skipping {problem}", NumericalWarning)
            else:
                raise ConfigurationError(problem)
        return keep

    @property
    def epsilon(self) -> float:
        """Finest epsilon of the list, used by the single-epsilon stages"""
        return float(min(self.pinning.epsilon))

    def validate(self, sweep: bool = False) -> "RunConfig":
        g, p, a, t = self.grid, self.pinning, self.applied, self.tolerances
        if g.spacing <= 0:
            raise ConfigurationError(f"grid spacing must be positive, got {g.spacing}")
        if g.pad < 1:
            raise ConfigurationError(f"grid pad must be at least 1, got {g.pad}")
        if self.domain.shape != "ball":
            raise ConfigurationError(f"unsupported domain shape {self.domain.shape!r}")
        if self.domain.radius <= 0:
            raise ConfigurationError("domain radius must be positive")
        if p.generator not in ("constant", "bump", "periodic"):
            raise ConfigurationError(f"unknown pinning generator {p.generator!r}")
        if not 0.0 < p.b < 1.0:
            raise ConfigurationError(f"b must lie in (0, 1), got {p.b}")
        if p.generator == "constant" and not p.b <= p.value <= 1.0:
            raise ConfigurationError(f"constant pinning value {p.value} is outside [b, 1]")
        if not 0.0 < p.alpha < 1.0 or p.n_exponent <= 0:
            raise ConfigurationError("need alpha in (0, 1) and n_exponent > 0")
        if not p.epsilon:
            raise ConfigurationError("the epsilon list is empty")
        for eps in p.epsilon:
            if not 0.0 < eps < np.exp(-1.0):
                raise ConfigurationError(f"epsilon must lie in (0, 1/e), got {eps}")
        if not 0.0 < a.eta < 0.5:
            raise ConfigurationError(f"eta must lie in (0, 1/2), got {a.eta}")
        if a.h_ex:
            if any(np.diff(a.h_ex) <= 0) or min(a.h_ex) < 0:
                raise ConfigurationError("h_ex values must be non-negative and increasing")
            for eps in p.epsilon:
                cap = eps ** (-a.eta)
                if max(a.h_ex) > cap:
                    raise ConfigurationError(
                        f"h_ex={max(a.h_ex):.4g} exceeds eps^-eta={cap:.4g} at eps={eps:.4g}")
        if a.h_points < 2 or a.h_span <= 0:
            raise ConfigurationError("need h_points >= 2 and h_span > 0")
        if np.linalg.norm(a.direction) == 0:
            raise ConfigurationError("applied field direction is zero")
        if self.curve.source not in ("isoflux", "file", "diameter"):
            raise ConfigurationError(f"unknown curve source {self.curve.source!r}")
        if self.curve.source == "file" and not self.curve.path:
            raise ConfigurationError("curve source 'file' needs curve.path")
        c = self.construction
        if c.tree not in ("bfs", "dfs"):
            raise ConfigurationError(f"unknown spanning tree {c.tree!r}")
        if not 0.0 <= c.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {c.beta}")
        if self.isoflux.stride < 1 or self.isoflux.max_iter < 1:
            raise ConfigurationError("isoflux stride and max_iter must be positive")
        for name, value in asdict(t).items():
            if value <= 0:
                raise ConfigurationError(f"tolerance {name} must be positive, got {value}")
        if not self.admissible_epsilons(sweep=sweep):
            raise ConfigurationError("no resolved epsilon left in the list")
        return self


def builtin_config(name: str) -> RunConfig:
    """Reference configurations available without a file"""
    if name == "ball-rho1":
        return RunConfig(name="ball-rho1")
    raise ConfigurationError(f"unknown built-in config {name!r}; choose from {', '.join(BUILTIN_CONFIGS)}")


def load_config(source: str, sweep: bool = False) -> RunConfig:
    """
    Load and validate a run configuration

    Args:
        source: Path to a TOML file or the name of a built-in config
        sweep: Filter under-resolved epsilons instead of rejecting them

    Returns:
        Validated RunConfig
    """
    if source in BUILTIN_CONFIGS:
        config = builtin_config(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigurationError(f"config file {source} not found")
        try:
            with path.open("rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse {source}: {exc}") from exc
        config = RunConfig.from_dict(data)
    logger.info("loaded config %s (hash %s)", config.name, config.config_hash[:12])
    return config.validate(sweep=sweep)
