"""Command handlers of the glpin CLI, one ``run_*`` function per subcommand."""

import functools
import json
import logging
import sys
from argparse import Namespace
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from components.pipeline import Lab, epsilon_sweep, run_pipeline
from components.verify import run_checks
from utils.cache_manager import RunManifest
from utils.config import RunConfig, load_config
from utils.data_exporter import DataExporter
from utils.errors import ConfigurationError, GlpinError
from utils.isoflux import hc1

logger = logging.getLogger(__name__)

exporter = DataExporter()


def _emit(summary: Dict[str, Any]) -> None:
    print(exporter.to_json(summary))


def handles_errors(command: Callable[[Namespace], int]) -> Callable[[Namespace], int]:
    """Map library errors to exit codes: 2 for invalid input, 3 for solver failures"""

    @functools.wraps(command)
    def wrapper(args: Namespace) -> int:
        try:
            return command(args)
        except GlpinError as exc:
            logger.error("%s failed: %s", command.__name__, exc)
            print(f"error: {exc}", file=sys.stderr)
            return exc.exit_code

    return wrapper


def _config(args: Namespace, sweep: bool = False) -> RunConfig:
    """The run configuration with the command-line overrides applied"""
    override_eps = getattr(args, "epsilon", None) is not None
    config = load_config(getattr(args, "config", None) or "ball-rho1", sweep=sweep or override_eps)
    if getattr(args, "curve", None):
        config = config.with_section("curve", source="file", path=str(args.curve))
    if override_eps:
        config = config.with_section("pinning", epsilon=(float(args.epsilon),))
    if getattr(args, "plot", False):
        config = config.with_section("output", plot=True)
    return config.validate(sweep=sweep)


def _lab(args: Namespace, config: RunConfig) -> Lab:
    return Lab(config, getattr(args, "out", None))


def _upstream_curve(lab: Lab, epsilon: float):
    """Pinning weight, isoflux result (isoflux source only) and the framed curve"""
    weight = lab.pinning(epsilon)
    result = None
    if lab.config.curve.source == "isoflux":
        state = lab.meissner(weight, epsilon)
        result = lab.isoflux(state, weight, epsilon)
    source, framed = lab.curve(result, epsilon)
    return weight, result, source, framed


@handles_errors
def run_pinning(args: Namespace) -> int:
    config = _config(args)
    lab = _lab(args, config)
    weight = lab.pinning(config.epsilon)
    summary = weight.summary(lab.domain)
    _emit({k: summary[k] for k in ("residual", "min_rho2", "max_rho2", "holder", "defects")})
    return 0


@handles_errors
def run_profile(args: Namespace) -> int:
    config = _config(args)
    changes = {}
    if args.rmax is not None:
        changes["profile_rmax"] = float(args.rmax)
    if args.n is not None:
        changes["profile_n"] = int(args.n)
    if changes:
        config = config.with_section("construction", **changes)
    lab = _lab(args, config)
    profile, gamma = lab.profile()
    _emit({"gamma": gamma.value, "uncertainty": gamma.uncertainty, "residual": profile.residual,
           "profile_csv": str(lab.cache.stage_dir("profile") / "profile.csv")})
    if config.output.plot:
        lab.render_charts()
    return 0


@handles_errors
def run_bs(args: Namespace) -> int:
    config = _config(args)
    lab = _lab(args, config)
    eps = config.epsilon
    _, _, source, framed = _upstream_curve(lab, eps)
    fields, constant = lab.bs(source, framed, eps)
    summary = {"flux_residual": fields.flux_residual, "representation_residual": fields.representation_residual,
               "c_omega": constant.value if constant else None, "table": constant.table if constant else [],
               "defects": fields.defects}
    _emit(summary)
    return 0


@handles_errors
def run_meissner(args: Namespace) -> int:
    config = _config(args)
    lab = _lab(args, config)
    eps = config.epsilon
    state = lab.meissner(lab.pinning(eps), eps)
    _emit({"energy_coefficient": state.energy_coefficient, "residuals": state.residuals(),
           "defects": state.defects})
    return 0


@handles_errors
def run_construct(args: Namespace) -> int:
    config = _config(args)
    lab = _lab(args, config)
    eps = config.epsilon
    weight, _, source, framed = _upstream_curve(lab, eps)
    profile, _ = lab.profile()
    fields, _ = lab.bs(source, framed, eps)
    cfg = lab.construct(source, framed, eps, weight, profile, fields)
    _emit({**cfg.summary(), "manifest": str(lab.cache.manifest_path)})
    return 0


def _config_from_manifest(path: str) -> RunConfig:
    try:
        manifest = RunManifest.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
    if not manifest.config:
        raise ConfigurationError(f"manifest {path} carries no configuration")
    return RunConfig.from_dict(manifest.config).validate()


@handles_errors
def run_energy(args: Namespace) -> int:
    if args.cfg:
        config = _config_from_manifest(args.cfg)
        directory = args.out or str(Path(args.cfg).parent)
    else:
        config = _config(args)
        directory = args.out
    if args.sweep:
        table = epsilon_sweep(config, directory=directory)
        _emit({"sweep": table.to_dict("records"), **{k: table.attrs.get(k) for k in
                                                   ("slope", "target_slope", "slope_error", "slope_ok", "sublinear")}})
        return 0
    lab = Lab(config, directory)
    eps = config.epsilon
    weight, result, source, framed = _upstream_curve(lab, eps)
    profile, gamma = lab.profile()
    fields, constant = lab.bs(source, framed, eps)
    cfg = lab.construct(source, framed, eps, weight, profile, fields)
    state = lab.meissner(weight, eps)
    R = lab.curve_ratio(source, result, state, weight)
    _emit(lab.energy(cfg, weight, state, profile, gamma, constant, R))
    return 0


@handles_errors
def run_isoflux(args: Namespace) -> int:
    config = _config(args)
    lab = _lab(args, config)
    eps = config.epsilon
    weight = lab.pinning(eps)
    result = lab.isoflux(lab.meissner(weight, eps), weight, eps)
    _emit({**result.to_dict(), "curve_csv": str(lab.cache.stage_dir(f"isoflux/eps-{eps:.6g}") / "curve.csv")})
    if config.output.plot:
        lab.render_charts()
    return 0


@handles_errors
def run_hc1(args: Namespace) -> int:
    """Isoflux ratio and first critical field for every resolved epsilon of the configuration"""
    config = _config(args, sweep=True)
    lab = _lab(args, config)
    rows = []
    for eps in sorted(config.admissible_epsilons(sweep=True), reverse=True):
        weight = lab.pinning(eps)
        result = lab.isoflux(lab.meissner(weight, eps), weight, eps)
        rows.append({"epsilon": eps, "ratio": result.ratio, "kind": result.kind,
                     "hc1": hc1(result.ratio, eps) if result.ratio > 0 else None,
                     "h_ex_cap": eps ** (-config.applied.eta)})
    _emit({"hc1": rows})
    return 0


@handles_errors
def run_onset(args: Namespace) -> int:
    config = _config(args)
    lab = _lab(args, config)
    results = lab.run()
    _emit(results["onset"].to_dict())
    if config.output.plot:
        lab.render_charts()
    return 0


@handles_errors
def run_sweep(args: Namespace) -> int:
    config = _config(args, sweep=True)
    epsilons = [float(e) for e in args.epsilons.split(",")] if args.epsilons else None
    table = epsilon_sweep(config, epsilons, args.out)
    _emit({k: table.attrs.get(k) for k in ("slope", "target_slope", "slope_error", "slope_ok", "sublinear")})
    return 0


@handles_errors
def run_all(args: Namespace) -> int:
    config = _config(args)
    manifest = run_pipeline(config, args.out)
    _emit({"config_hash": manifest.config_hash, "ok": manifest.ok, "failed": manifest.failed_stages,
           "stages": {k: r.status for k, r in manifest.stages.items()}})
    if manifest.ok:
        return 0
    failed = manifest.stages[manifest.failed_stages[0]] if manifest.failed_stages else None
    return 2 if failed is not None and failed.error_type == "ConfigurationError" else 3


@handles_errors
def run_verify(args: Namespace) -> int:
    table = run_checks(args.module, seed=args.seed)
    print(table.to_string(index=False))
    return 0 if bool(table["passed"].all()) else 3


COMMANDS: Dict[str, Callable[[Namespace], int]] = {
    "pinning": run_pinning,
    "profile": run_profile,
    "bs": run_bs,
    "meissner": run_meissner,
    "construct": run_construct,
    "energy": run_energy,
    "isoflux": run_isoflux,
    "hc1": run_hc1,
    "onset": run_onset,
    "sweep": run_sweep,
    "run": run_all,
    "verify": run_verify,
}


def dispatch(args: Namespace) -> Optional[int]:
    command = COMMANDS.get(args.command)
    if command is None:
        return None
    return command(args)
