"""Stage orchestration of a run: pinning -> profile -> meissner -> isoflux -> construct -> energy -> onset."""

import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.biot_savart import CorrectedFields, RenormalizedConstant, c_omega, solve_jA
from utils.cache_manager import CacheManager, RunManifest, StageArtifacts
from utils.chart_generator import ChartGenerator
from utils.config import RunConfig
from utils.construction import TestConfiguration, assemble, tube_exponent
from utils.data_exporter import DataExporter
from utils.energy import (build_test_fields, dual_norm, exterior_estimate, free_energy, remainder_bound,
                          split_energy, tube_estimate, upper_bound, vorticity)
from utils.errors import ConfigurationError, ConvergenceError, GeometryError, GlpinError
from utils.geometry import FramedCurve, PolyCurve, straight_curve, weighted_length
from utils.grid import Domain, Grid, make_ball_domain
from utils.isoflux import (IsofluxInstance, IsofluxResult, OnsetReport, check_hypotheses, extend_curve, hc1,
                           instance_from_meissner, maximize_ratio, onset_experiment, ratio, stokes_closure)
from utils.meissner import MeissnerState, curl_l4_norm, exterior_faces, solve_B0, uniform_applied_field
from utils.metrics_calculator import MetricsCalculator
from utils.pinning import HolderReport, PinningModel, Weight, holder_report, make_model, solve_rho
from utils.profile import GammaEstimate, VortexProfile, gamma_constant, solve_profile

logger = logging.getLogger(__name__)

PIPELINE = ("pinning", "profile", "meissner", "isoflux", "bs", "construct", "energy", "onset")


def build_domain(config: RunConfig) -> Domain:
    d = config.domain
    grid = Grid.around_ball(d.center, d.radius, config.grid.spacing, config.grid.pad)
    return make_ball_domain(d.center, d.radius, grid)


def stage_key(stage: str, epsilon: Optional[float] = None) -> str:
    return stage if epsilon is None else f"{stage}/eps-{epsilon:.6g}"


def _holder_from_dict(data: Optional[Dict[str, Any]]) -> Optional[HolderReport]:
    if not data:
        return None
    label = data.get("label", "")
    passes = None if label == "unverified hypothesis" else label.startswith("hypothesis holds")
    return HolderReport(data["alpha"], data["estimate"], data["pairs"], data.get("C1"), data.get("N"),
                        data.get("implied_N"), passes)


class Lab:
    """Class to run the stages of one configuration against its run directory"""

    def __init__(self, config: RunConfig, directory: Optional[str] = None):
        self.config = config
        self.directory = directory or config.output.directory
        self.domain = build_domain(config)
        self.exporter = DataExporter()
        self.cache = CacheManager.open(self.directory, config.config_hash, config.name, config.seed,
                                       config.to_dict())
        self.results: Dict[str, Any] = {}

    @property
    def manifest(self) -> RunManifest:
        return self.cache.manifest

    def _stage(self, key: str, compute: Callable[[], Tuple[Any, Dict[str, Any]]],
               restore: Optional[Callable[[StageArtifacts], Any]] = None) -> Any:
        """
        Serve a stage from the cache or compute it, persisting its outputs

        ``compute`` returns the stage value and a dictionary with the optional keys
        fields, report, arrays, text and residuals.
        """
        if restore is not None:
            cached = self.cache.fetch(key, self.domain.grid)
            if cached is not None:
                try:
                    return restore(cached)
                except (GlpinError, KeyError, ValueError, TypeError) as exc:
                    logger.warning("cached %s is unusable (%s); recomputing", key, exc)
        self.cache.start(key)
        logger.info("stage %s", key)
        try:
            value, outputs = compute()
        except GlpinError as exc:
            self.cache.fail(key, exc)
            raise
        self.cache.store(key, outputs.get("fields"), outputs.get("report"), outputs.get("arrays"),
                         outputs.get("text"))
        self.cache.finish(key, outputs.get("residuals"))
        return value

    # Stages

    def pinning_model(self, epsilon: float) -> PinningModel:
        p = self.config.pinning
        params: Dict[str, Any] = {}
        if p.generator == "constant":
            params["value"] = p.value
        elif p.generator == "bump":
            params.update(centers=[list(c) for c in p.centers], sigma=p.sigma)
        else:
            params["wavelength"] = p.wavelength
        return make_model(self.domain, p.generator, p.b, epsilon, **params)

    def pinning(self, epsilon: float) -> Weight:
        config, domain = self.config, self.domain
        p = config.pinning

        def compute():
            model = self.pinning_model(epsilon)
            weight = solve_rho(model, domain, tol=config.tolerances.pinning)
            weight.holder = holder_report(weight.rho, p.alpha, active=domain.active, seed=config.seed,
                                          n_exponent=p.n_exponent, epsilon=epsilon)
            report = weight.summary(domain)
            return weight, {"fields": {"rho": weight.rho, "a": model.a}, "report": report,
                            "residuals": {"residual": weight.residual}}

        def restore(art: StageArtifacts) -> Weight:
            r = art.report
            return Weight(art.fields["rho"], self.pinning_model(epsilon), r["residual"], r["iterations"],
                          [], list(r.get("defects", [])), _holder_from_dict(r.get("holder")))

        return self._stage(stage_key("pinning", epsilon), compute, restore)

    def profile(self) -> Tuple[VortexProfile, GammaEstimate]:
        c, tol = self.config.construction, self.config.tolerances.profile

        def compute():
            profile = solve_profile(c.profile_rmax, c.profile_n, tol)
            gamma = gamma_constant(profile)
            report = {**gamma.to_dict(), "residual": profile.residual, "slope": profile.slope,
                      "r_max": profile.r_max}
            return (profile, gamma), {"report": report, "text": {"profile.csv": self.exporter.profile_to_csv(profile)},
                                      "residuals": {"ode": profile.residual, "gamma_uncertainty": gamma.uncertainty}}

        value = self._stage("profile", compute)
        self.results["profile"] = value[0]
        return value

    def meissner(self, weight: Weight, epsilon: float) -> MeissnerState:
        config, domain = self.config, self.domain

        def compute():
            applied = uniform_applied_field(domain.grid, config.applied.direction)
            state = solve_B0(weight, applied, domain, rtol=config.tolerances.meissner)
            report = {"energy_coefficient": state.energy_coefficient, "residuals": state.residuals(),
                      "curl_l4": curl_l4_norm(state, domain), "defects": state.defects}
            fields = {"A0": state.A0, "A0_coulomb": state.A0_coulomb, "phi0": state.phi0,
                      "B_tilde": state.B_tilde, "B0": state.B0}
            return state, {"fields": fields, "report": report, "residuals": state.residuals()}

        def restore(art: StageArtifacts) -> MeissnerState:
            f, r = art.fields, art.report
            res = r["residuals"]
            return MeissnerState(f["A0"], f["A0_coulomb"], f["phi0"], f["B_tilde"], f["B0"], exterior_faces(domain),
                                 r["energy_coefficient"], res["relation"], res["div_B0"], res["tangential_trace"],
                                 res["surface_trace"], res["exterior_gradient"], list(r.get("defects", [])))

        return self._stage(stage_key("meissner", epsilon), compute, restore)

    def instance(self, state: MeissnerState, weight: Weight) -> IsofluxInstance:
        return instance_from_meissner(state, weight, self.domain, self.config.isoflux.stride,
                                      self.config.tolerances.trace)

    def isoflux(self, state: MeissnerState, weight: Weight, epsilon: float) -> IsofluxResult:
        config = self.config
        iso = config.isoflux

        def compute():
            inst = self.instance(state, weight)
            result = maximize_ratio(inst, epsilon, iso.polish, iso.max_iter)
            h_ex = max(config.applied.h_ex) if config.applied.h_ex else None
            check_hypotheses(result, inst, epsilon, iso.c0_bound, b=config.pinning.b, h_ex=h_ex,
                             eta=config.applied.eta)
            report = result.to_dict()
            text = {}
            if result.curve is not None:
                text["curve.csv"] = self.exporter.curve_to_csv(result.curve)
                if not result.curve.closed:
                    report["stokes_closure"] = stokes_closure(result.curve, inst, seed=config.seed)
            return result, {"report": report, "text": text,
                            "residuals": {"ratio": result.ratio, "graph_ratio": result.graph_ratio}}

        def restore(art: StageArtifacts) -> IsofluxResult:
            r = art.report
            curve = (self.exporter.curve_from_csv(art.text["curve.csv"], "isoflux-optimum")
                     if "curve.csv" in art.text else None)
            return IsofluxResult(curve, r["ratio"], r["graph_ratio"], r["kind"], list(r["lambda_history"]),
                                 r["iterations"], r.get("hc1"), r.get("epsilon"), list(r.get("diagnostics", [])),
                                 dict(r.get("hypotheses", {})))

        result = self._stage(stage_key("isoflux", epsilon), compute, restore)
        self.results["isoflux"] = result
        return result

    def curve(self, result: Optional[IsofluxResult], epsilon: float,
              radius: Optional[float] = None) -> Tuple[PolyCurve, FramedCurve]:
        """The source curve of the construction and its closed, framed extension clearing tubes of ``radius``"""
        c = self.config.curve
        radius = radius or self.config.tube_radius(epsilon)
        if c.source == "isoflux":
            if result is None or result.curve is None:
                raise GeometryError("the isoflux optimizer found no curve with positive ratio")
            raw = result.curve
        elif c.source == "diameter":
            d = self.config.domain
            axis = np.asarray(c.axis, dtype=float)
            axis = axis / np.linalg.norm(axis)
            center = np.asarray(d.center, dtype=float)
            n = int(np.ceil(2.0 * d.radius / (0.25 * radius)))
            raw = straight_curve(center - d.radius * axis, center + d.radius * axis, n, "diameter")
        else:
            raw = self.exporter.read_curve(c.path)
        return extend_curve(raw, self.domain, radius, c.max_step or 0.25 * radius)

    def bs(self, source: PolyCurve, framed: FramedCurve, epsilon: float, key: Optional[str] = None
           ) -> Tuple[CorrectedFields, Optional[RenormalizedConstant]]:
        config, domain = self.config, self.domain

        def compute():
            fields = solve_jA(framed, domain, tol=config.tolerances.biot_savart)
            report = fields.summary()
            try:
                constant = c_omega(framed, domain, fields)
                report["c_omega"] = constant.to_dict()
            except ConvergenceError as exc:
                constant = None
                report["c_omega"] = None
                report["defects"].append(f"C_Omega: {exc}")
                logger.warning("renormalized constant unavailable: %s", exc)
            outputs = {"fields": {"X": fields.x, "j": fields.j, "A": fields.A, "f": fields.f}, "report": report,
                       "text": {"curve.csv": self.exporter.curve_to_csv(source),
                                "curve_closed.csv": self.exporter.curve_to_csv(framed.curve)},
                       "residuals": {"flux": fields.flux_residual, "representation": fields.representation_residual}}
            if fields.link_circulation is not None:
                outputs["arrays"] = {"link_circulation": fields.link_circulation}
            return (fields, constant), outputs

        def restore(art: StageArtifacts):
            r, f = art.report, art.fields
            fields = CorrectedFields(f["X"], f["j"], f["A"], f["f"], r["flux_residual"], r["compatibility_defect"],
                                     r["representation_residual"], r["div_A"], r["iterations"], [],
                                     list(r.get("defects", [])), framed, art.arrays.get("link_circulation"))
            c = r.get("c_omega")
            constant = (RenormalizedConstant(c["c_omega"], c["magnetic"], c["uncertainty"], c["slope"],
                                             c["length_in_domain"], c["table"]) if c else None)
            return fields, constant

        return self._stage(key or stage_key("bs", epsilon), compute, restore)

    def construct(self, source: PolyCurve, framed: FramedCurve, epsilon: float, weight: Weight,
                  profile: VortexProfile, fields: CorrectedFields) -> TestConfiguration:
        p, c = self.config.pinning, self.config.construction

        def compute():
            cfg = assemble(source, framed, epsilon, weight, profile, fields, self.domain, p.n_exponent, p.alpha,
                           core_fraction=c.core_fraction, tree=c.tree)
            return cfg, {"fields": {"u": cfg.u, "A": cfg.A}, "report": cfg.summary(),
                         "residuals": {"closure": cfg.closure_residual}}

        return self._stage(stage_key("construct", epsilon), compute)

    def reference_field(self, epsilon: float, R: Optional[float]) -> float:
        """Applied intensity used for the splitting identity: H_c1 capped by eps^-eta"""
        cap = epsilon ** (-self.config.applied.eta)
        if R is None or R <= 0:
            return float(min(1.0, cap))
        return float(min(hc1(R, epsilon), cap))

    def energy(self, cfg: TestConfiguration, weight: Weight, state: MeissnerState, profile: VortexProfile,
               gamma: GammaEstimate, constant: Optional[RenormalizedConstant], R: Optional[float]) -> Dict[str, Any]:
        config, domain = self.config, self.domain
        p, c = config.pinning, config.construction
        epsilon = cfg.epsilon

        def compute():
            report = free_energy(cfg, weight, domain)
            tube = tube_estimate(cfg, weight, profile, gamma.value, domain)
            report.tube_prediction = tube["prediction"]
            out: Dict[str, Any] = {"tube_estimate": tube}
            if constant is not None:
                ext = exterior_estimate(cfg, constant.value, weight, domain)
                report.exterior_prediction = ext["prediction"]
                bound = upper_bound(epsilon, p.n_exponent, p.alpha, tube["weighted_length"], constant.value)
                out["exterior_estimate"] = ext
                out["upper_bound"] = {"bound": bound, "free_energy": report.total,
                                      "slack": bound - report.total}
            out["free_energy"] = report.to_dict()
            mu = vorticity(cfg.u, cfg.A, domain)
            library = build_test_fields(domain, size=c.test_fields, seed=config.seed)
            out["vorticity"] = {"total_winding": mu.total_winding, "indeterminate": mu.indeterminate,
                                "dual_norm": dual_norm(mu, cfg.source, c.beta, library, domain).to_dict()}
            h_ref = self.reference_field(epsilon, R)
            split = split_energy(cfg, weight, state, h_ref, domain)
            out["split"] = split.to_dict()
            out["remainder_bound"] = remainder_bound(state, cfg, weight, h_ref, domain)
            return out, {"report": out, "residuals": {"split_defect": split.defect,
                                                      "split_relative_defect": split.relative_defect}}

        return self._stage(stage_key("energy", epsilon), compute)

    def onset(self, cfg: TestConfiguration, weight: Weight, state: MeissnerState, R: float) -> OnsetReport:
        config = self.config
        a = config.applied
        epsilon = cfg.epsilon

        def compute():
            if a.h_ex:
                h_grid = list(a.h_ex)
            else:
                if R <= 0:
                    raise ConfigurationError("onset needs a curve with positive isoflux ratio")
                h_grid = np.linspace(0.0, a.h_span * hc1(R, epsilon), a.h_points).tolist()
            report = onset_experiment(epsilon, h_grid, cfg, weight, state, self.domain, R)
            out = report.to_dict()
            out["h_ex_cap"] = epsilon ** (-a.eta)
            table = self.exporter.table_to_csv([{"h_ex": h, "delta_e": e} for h, e in zip(report.h_grid,
                                                                                          report.delta_e)])
            return report, {"report": out, "text": {"onset.csv": table},
                            "residuals": {"crossing": report.crossing, "hc1": report.hc1}}

        report = self._stage(stage_key("onset", epsilon), compute)
        self.results["onset"] = report
        return report

    # Runs

    def curve_ratio(self, source: PolyCurve, result: Optional[IsofluxResult], state: MeissnerState,
                    weight: Weight) -> float:
        if self.config.curve.source == "isoflux" and result is not None:
            return result.ratio
        return ratio(source, self.instance(state, weight))

    def run(self) -> Dict[str, Any]:
        """All stages at the finest epsilon of the configuration"""
        epsilon = self.config.epsilon
        weight = self.pinning(epsilon)
        profile, gamma = self.profile()
        state = self.meissner(weight, epsilon)
        result = self.isoflux(state, weight, epsilon)
        source, framed = self.curve(result, epsilon)
        fields, constant = self.bs(source, framed, epsilon)
        cfg = self.construct(source, framed, epsilon, weight, profile, fields)
        R = self.curve_ratio(source, result, state, weight)
        energy = self.energy(cfg, weight, state, profile, gamma, constant, R)
        onset = self.onset(cfg, weight, state, R)
        return {"weight": weight, "profile": profile, "gamma": gamma, "meissner": state, "isoflux": result,
                "curve": source, "fields": fields, "c_omega": constant, "configuration": cfg, "energy": energy,
                "onset": onset}

    def skip_unfinished(self, stages: Sequence[str]) -> None:
        for key in stages:
            rec = self.cache.record(key)
            if rec.status == "pending":
                rec.status = "skipped"
        self.cache.save()

    def render_charts(self) -> List[str]:
        return ChartGenerator().render_all(self.results, self.directory)


def run_pipeline(config: RunConfig, directory: Optional[str] = None, plot: Optional[bool] = None) -> RunManifest:
    """
    Execute every stage of a configuration and write the manifest

    A failing stage is recorded with its error; the stages after it are marked skipped.
    """
    lab = Lab(config, directory)
    epsilon = config.epsilon
    planned = [stage_key(s, None if s == "profile" else epsilon) for s in PIPELINE]
    try:
        lab.run()
    except GlpinError as exc:
        logger.error("pipeline stopped: %s", exc)
    lab.skip_unfinished(planned)
    if plot if plot is not None else config.output.plot:
        lab.render_charts()
    logger.info("pipeline %s finished: %s", config.name, "ok" if lab.manifest.ok else
                f"failed at {', '.join(lab.manifest.failed_stages)}")
    return lab.manifest


def epsilon_sweep(config: RunConfig, epsilons: Optional[Sequence[float]] = None,
                  directory: Optional[str] = None) -> pd.DataFrame:
    """
    Energy of the vortex configuration of one fixed curve across epsilon

    Args:
        config: Run configuration
        epsilons: Overrides the epsilon list of the configuration
        directory: Run directory

    Returns:
        Sweep table with the fitted slope in ``attrs``; also written to sweep/sweep.csv
    """
    if epsilons is not None:
        config = config.with_section("pinning", epsilon=tuple(float(e) for e in epsilons))
    values = config.validate(sweep=True).admissible_epsilons(sweep=True)
    if len(values) < 3:
        raise ConfigurationError(f"the sweep needs at least three resolved epsilon values, got {len(values)}")
    lab = Lab(config, directory)
    domain = lab.domain
    p = config.pinning
    finest = min(values)

    weight = lab.pinning(finest)
    profile, gamma = lab.profile()
    result = None
    if config.curve.source == "isoflux":
        state = lab.meissner(weight, finest)
        result = lab.isoflux(state, weight, finest)
    # the extension has to clear the widest tube of the sweep
    source, framed = lab.curve(result, finest, max(config.tube_radius(e) for e in values))
    fields, constant = lab.bs(source, framed, finest, key="sweep/bs")

    rows = []
    for eps in sorted(values, reverse=True):
        w = weight if eps == finest else lab.pinning(eps)
        cfg = lab.construct(source, framed, eps, w, profile, fields)
        report = free_energy(cfg, w, domain)
        length = weighted_length(source, w.rho, domain)
        row = {"epsilon": eps, "free_energy": report.total, "tube": report.tube["total"],
               "exterior": report.exterior["total"], "weighted_length": length, "r_eps": cfg.r_eps}
        if constant is not None:
            row["upper_bound"] = upper_bound(eps, p.n_exponent, p.alpha, length, constant.value)
        rows.append(row)

    table = MetricsCalculator().sweep_table(rows, tube_exponent(p.n_exponent, p.alpha) * np.pi)
    summary = {k: table.attrs.get(k) for k in ("slope", "target_slope", "slope_error", "slope_ok", "sublinear")}
    lab.cache.start("sweep")
    lab.cache.store("sweep", report=summary, text={"sweep.csv": lab.exporter.table_to_csv(table.to_dict("records"))})
    lab.cache.finish("sweep", {"slope_error": summary["slope_error"]})
    lab.results["sweep"] = table
    if config.output.plot:
        lab.render_charts()
    logger.info("sweep over %d epsilons: slope %s (target %.6g)", len(values), summary["slope"],
                summary["target_slope"])
    return table
