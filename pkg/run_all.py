"""
Main entry point for AnosovLab.

Every subcommand loads a scenario, applies the command-line overrides,
runs one stage of the pipeline and writes its artifacts under the output
directory, together with a manifest that is enough to re-run it:

    ball          enumerate the word ball and diagnose the Anosov condition
    exponent      critical exponent of the run form
    cone          limit cone and growth indicator
    limits        limit set sample
    premetric     premetric matrix and quasi-metric constants
    dimension     box dimensions (Riemannian and d_psi)
    ps            Patterson-Sullivan approximation and its checks
    coarse        triangle defect and Gromov product checks
    bounds        dimension bounds, growth bound and temperedness criterion
    teich-scan    exponent and dimension along the scenario's [family]
    radius-sweep  shadow lemma over several shadow radii
    all           every stage from ball to bounds, then teich-scan if a family exists
    check-config  validate the scenario and print it
"""

import argparse
import dataclasses
import itertools
import json
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from bounds import (
    c_theta,
    c_theta_grid,
    c_theta_table,
    dimension_bounds_report,
    growth_bound_check,
    smilga_check,
    temperedness_verdict,
)
from coarse_geometry import gromov_vs_geodesic, quasi_isometry_fit, triangle_defect
from config import RESULTS_DIR, VERBOSE_OUTPUT
from dimension import (
    auto_scales,
    box_dimension,
    psi_dimension_report,
    riemannian_dimension,
    riemannian_distances,
    subsample_stability,
)
from lie_core import PRODUCT, AVector, GroupDescriptor, LinearForm, builtin_forms, symmetrize_form
from limit_sampler import FlagSample, pairwise_antipodal_margins, sample_limit_set
from poincare import critical_exponent, growth_indicator, rigidity_bound, symmetrization_report, tangent_normalize
from premetric import comparison_ratio, pq_form, premetric_matrix, premetric_rows, quasi_metric_constants
from ps_measure import (
    AtomicMeasure,
    ahlfors_check,
    ball_shadow_check,
    conformality_check,
    ps_approx,
    radius_sweep,
    shadow_lemma_check,
)
from scenario import RunSettings, Scenario, load_scenario, scale_grid
from utils import get_logger
from utils.charts import covering_chart, cone_chart, exponent_chart, ratio_band_chart, scan_chart
from utils.errors import ConfigError, InsufficientScales, LabError
from utils.export import artifact_list, write_csv, write_json
from utils.logger import run_log, set_level
from word_engine import (
    GeneratorSet,
    OrbitBall,
    anosov_diagnostic,
    build_ball,
    enumerate_ball,
    limit_cone_estimate,
    save_ball_cache,
)

# Set up logger
logger = get_logger(__name__)

PACKAGES = ("numpy", "scipy", "pandas", "sympy", "joblib", "matplotlib", "jsonschema", "rich", "tqdm")
PREMETRIC_CSV_MAX = 600
RECORDS_CSV_MAX = 5000
SCALING_FACTORS = (0.5, 2.0, 3.0)
DEFAULT_RADII = (0.5, 1.0, 2.0, 4.0, 8.0)
ALL_STEPS = ("ball", "exponent", "cone", "limits", "premetric", "dimension", "ps", "coarse", "bounds")

COLUMNS = {
    "ball": "shells.csv: length, count, min_alpha_ratio; records.csv: word, length, mu0..mu{rank-1} (first records)",
    "exponent": "counts.csv: T, N",
    "cone": "cone_directions.csv: x0..x{rank-1} (orthonormal chart coordinates)",
    "limits": "limit_set.csv: word, f0..f{k} (frame entries, row-major)",
    "premetric": "premetric.csv: i, j, value",
    "dimension": "covering.csv: r, N, in_window; covering_psi.csv: r, N, in_window; dimension_pq.csv: p, q, dim, "
                 "ci_lo, ci_hi, delta_pq",
    "ps": "measure.csv: weight, word, f0..f{k}; shadow_ratios.csv: word, length, mass, ratio; "
          "ahlfors.csv: exponent, r, p5, p50, p95, resolved",
    "coarse": "defect_histogram.csv: lo, hi, count",
    "bounds": "growth_margins.csv: direction, growth_indicator, margin, rho_margin, rho_cone_margin",
    "teich-scan": "teich_scan.csv: t, delta_pq, delta_1, delta_2, bound, gap, tolerance, dim",
    "radius-sweep": "radius_sweep.csv: radius, c0, empty_shadows, pass",
}


class LabRun:
    """
    One invocation of the front end.

    Holds the scenario, the output directory, the single seeded random
    generator and the artifacts written so far. The ball and the limit set
    samples are built on first use and shared by later stages.
    """

    def __init__(self, scenario: Scenario, out_dir: Path, command: str):
        self.scenario = scenario
        self.run: RunSettings = scenario.run
        self.out_dir = Path(out_dir)
        self.command = command
        self.rng = np.random.default_rng(self.run.seed)
        self.artifacts: List[Path] = []
        self._ball: Optional[OrbitBall] = None
        self._samples: Dict[tuple, FlagSample] = {}
        self._riemannian: Optional[Dict[str, Any]] = None
        self._riemannian_distances: Optional[np.ndarray] = None
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def descriptor(self) -> GroupDescriptor:
        return self.scenario.descriptor

    @property
    def charts_dir(self) -> Path:
        return self.out_dir / "charts"

    @property
    def form(self) -> LinearForm:
        return self.scenario.form()

    @property
    def scales(self) -> Optional[np.ndarray]:
        return scale_grid(self.run.scales) if self.run.scales else None

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def record(self, path: Optional[Path]) -> Optional[Path]:
        if path is not None:
            self.artifacts.append(Path(path))
        return path

    @property
    def ball(self) -> OrbitBall:
        if self._ball is None:
            gens = GeneratorSet.from_scenario(self.scenario)
            self._ball = build_ball(gens, self.run.ball_length, self.run.budget, self.run.workers)
        return self._ball

    def sample(self, theta: Optional[Sequence[int]] = None) -> FlagSample:
        """Limit set sample of the given flag type (the scenario's theta by default)."""
        theta = tuple(theta) if theta is not None else self.scenario.theta
        if theta not in self._samples:
            self._samples[theta] = sample_limit_set(
                self.ball, theta, self.run.dedupe_eps, self.run.max_sample, self.rng, self.run.effective_shell_min
            )
        return self._samples[theta]

    @property
    def riemannian_distances(self) -> np.ndarray:
        if self._riemannian_distances is None:
            self._riemannian_distances = riemannian_distances(self.sample(), self.run.workers)
        return self._riemannian_distances

    @property
    def riemannian(self) -> Dict[str, Any]:
        if self._riemannian is None:
            self._riemannian = riemannian_dimension(self.sample(), self.scales, distances=self.riemannian_distances)
        return self._riemannian

    def write_manifest(self) -> Path:
        """manifest.json: config digest, seed, workers, run settings, versions and artifact digests."""
        manifest = {
            "command": self.command,
            "scenario": self.scenario.name,
            "config_path": str(self.scenario.path) if self.scenario.path else None,
            "config_sha256": self.scenario.config_hash,
            "seed": self.run.seed,
            "workers": self.run.workers,
            "run": dataclasses.asdict(self.run),
            "versions": package_versions(),
            "artifacts": artifact_list(self.out_dir, self.artifacts),
        }
        return write_json(self.path("manifest.json"), manifest)


def package_versions() -> Dict[str, str]:
    """Installed versions of the numerical stack and the interpreter."""
    versions = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


# ---------------------------------------------------------------------- stages


def _record_rows(gens: GeneratorSet, length: int, budget: int) -> pd.DataFrame:
    records = itertools.islice(enumerate_ball(gens, length, budget), RECORDS_CSV_MAX)
    rows = []
    for record in records:
        row = {"word": record.word, "length": record.length}
        row.update({f"mu{i}": float(x) for i, x in enumerate(record.cartan.coords)})
        rows.append(row)
    return pd.DataFrame(rows)


def run_ball(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Enumerate the ball and diagnose the Anosov condition."""
    ball = lab.ball
    diagnostic = anosov_diagnostic(ball, lab.scenario.theta)
    rows = [
        {"length": k, "count": ball.shell(k).stop - ball.shell(k).start,
         "min_alpha_ratio": diagnostic["per_shell_min_ratio"][k - 1] if k > 0 else float("nan")}
        for k in range(ball.length + 1)
    ]
    lab.record(write_csv(lab.path("shells.csv"), rows, ["length", "count", "min_alpha_ratio"]))
    lab.record(write_csv(lab.path("records.csv"), _record_rows(ball.generators, ball.length, lab.run.budget)))
    lab.record(write_json(lab.path("ball.json"), {
        "scenario": lab.scenario.describe(),
        "records": len(ball),
        "ball_length": ball.length,
        "generator_fingerprint": ball.generators.fingerprint(),
        "diagnostic": diagnostic,
    }))
    if getattr(args, "cache", False):
        lab.record(save_ball_cache(ball, lab.path("ball.bin")))
    return {"records": len(ball), "C_fit": diagnostic["C_fit"], "anosov": diagnostic["pass"]}


def run_exponent(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Critical exponent of the run form, its symmetrization and the scaling law."""
    ball, psi = lab.ball, lab.form
    report = critical_exponent(ball, psi)
    symmetrization = symmetrization_report(ball, psi)
    scaling = []
    for c in SCALING_FACTORS:
        scaled = critical_exponent(ball, psi * c)
        scaling.append({"c": c, "delta": scaled.delta, "ratio": scaled.delta * c / report.delta})

    counts = pd.DataFrame([{"T": t, "N": n} for t, n in report.counts])
    lab.record(write_csv(lab.path("counts.csv"), counts, ["T", "N"]))
    lab.record(write_json(lab.path("exponent.json"), {
        "form": psi.describe(),
        "report": report.to_dict(),
        "symmetrization": symmetrization,
        "scaling": scaling,
    }))
    lab.record(exponent_chart(counts[counts["N"] > 0], report.delta_count, report.intercept, lab.charts_dir))
    return {"delta": report.delta, "uncertainty": report.uncertainty, "delta_bar": symmetrization["delta_psi_bar"]}


def run_cone(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Limit cone directions and the growth indicator along its mean direction."""
    ball = lab.ball
    cone = limit_cone_estimate(ball, lab.run.effective_shell_min)
    mean = AVector(lab.descriptor, cone.mean_direction())
    apertures = sorted({min(a, np.pi / 4) for a in (lab.run.aperture / 2, lab.run.aperture, 2 * lab.run.aperture)})
    indicator = [
        {"aperture": a, "growth_indicator": growth_indicator(ball, mean, a, lab.scenario.theta)}
        for a in apertures
    ]
    chart = pd.DataFrame(cone.chart, columns=[f"x{i}" for i in range(cone.chart.shape[1])])
    lab.record(write_csv(lab.path("cone_directions.csv"), chart))
    lab.record(write_json(lab.path("cone.json"), {
        "cone": cone.describe(),
        "min_form": cone.min_form(lab.form),
        "growth_indicator_mean_direction": indicator,
    }))
    lab.record(cone_chart(cone.chart, lab.charts_dir))
    return {"angular_spread": cone.angular_spread, "min_form": cone.min_form(lab.form)}


def run_limits(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Limit set sample with its antipodality and separation statistics."""
    sample = lab.sample()
    margins = pairwise_antipodal_margins(sample.frames, sample.descriptor, sample.theta)
    off = ~np.eye(len(sample), dtype=bool)
    width = max((len(w) for w in sample.words), default=1)
    lab.record(sample.export_csv(lab.path("limit_set.csv")))
    lab.record(sample.export_binary(lab.path("limit_set.bin"), width))
    lab.record(write_json(lab.path("limits.json"), {
        "sample": sample.describe(),
        "min_antipodal_margin": float(margins[off].min()) if off.any() else float("nan"),
        "min_pairwise_distance": sample.min_pairwise_distance(),
    }))
    return {"size": len(sample), "skipped": sample.skipped}


def run_premetric(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Premetric matrix of the run form on the sample and its quasi-metric constants."""
    sample, psi = lab.sample(), lab.form
    cone = limit_cone_estimate(lab.ball, lab.run.effective_shell_min)
    matrix = premetric_matrix(sample, psi, workers=lab.run.workers, min_on_cone=cone.min_form(psi))
    constants = quasi_metric_constants(matrix, rng=lab.rng)
    if len(matrix) <= PREMETRIC_CSV_MAX:
        lab.record(matrix.export_csv(lab.path("premetric.csv")))
    else:
        logger.info(f"Premetric matrix has {len(matrix)} rows; writing the binary form only")
    lab.record(matrix.export_binary(lab.path("premetric.bin")))
    lab.record(write_json(lab.path("premetric.json"), {
        "form": psi.describe(),
        "size": len(matrix),
        "symmetric": matrix.is_symmetric(),
        "excluded_pairs": matrix.excluded_pairs,
        "asymmetry": comparison_ratio(matrix, matrix.swapped()),
        "constants": constants,
    }))
    return {"N_est": constants["N_est"], "R_est": constants["R_est"]}


def run_dimension(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Riemannian and d_psi box dimensions; (p, q)-dimensions on products of two factors."""
    sample, psi = lab.sample(), lab.form
    riemannian = lab.riemannian
    psi_report = psi_dimension_report(sample, psi, lab.ball, lab.scales, lab.run.workers)
    lab.record(write_csv(lab.path("covering.csv"), riemannian["table"], ["r", "N", "in_window"]))
    lab.record(write_csv(lab.path("covering_psi.csv"), psi_report["table"], ["r", "N", "in_window"]))
    lab.record(covering_chart(pd.DataFrame(riemannian["table"]), riemannian, lab.charts_dir))

    pq_rows = []
    d = lab.descriptor
    if d.kind == PRODUCT and d.size == 2:
        for p, q in lab.run.pq:
            report = psi_dimension_report(sample, pq_form(d, p, q), lab.ball, lab.scales, lab.run.workers)
            pq_rows.append({"p": p, "q": q, "dim": report["dim"], "ci_lo": report["ci"][0],
                            "ci_hi": report["ci"][1], "delta_pq": report["delta_psi"]})
        lab.record(write_csv(lab.path("dimension_pq.csv"), pq_rows,
                             ["p", "q", "dim", "ci_lo", "ci_hi", "delta_pq"]))

    try:
        scales = [row["r"] for row in riemannian["table"]]
        stability = subsample_stability(lab.riemannian_distances, scales, rng=lab.rng)
    except InsufficientScales as e:
        logger.warning(f"Subsample dimension unresolved: {e.message}")
        stability = None

    lab.record(write_json(lab.path("dimension.json"), {
        "riemannian": {k: v for k, v in riemannian.items() if k != "table"},
        "subsample": stability,
        "psi": {k: v for k, v in psi_report.items() if k != "table"},
        "pq": pq_rows,
        "sample_size": len(sample),
    }))
    return {"dim": riemannian["dim"], "ci": riemannian["ci"], "dim_psi": psi_report["dim"]}


def _tangent_measure(lab: LabRun) -> AtomicMeasure:
    tangent = tangent_normalize(lab.form, lab.ball)
    return ps_approx(lab.ball, tangent, shell_min=lab.run.effective_shell_min)


def _ahlfors_scales(lab: LabRun, measure: AtomicMeasure) -> np.ndarray:
    if lab.scales is not None:
        return lab.scales
    count = min(200, len(measure))
    rows = premetric_rows(measure.frames[:count], measure.frames, measure.form)
    return auto_scales(rows, decades=2.5)


def run_ps(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Patterson-Sullivan approximation of the tangent form with the shadow, Ahlfors and conformality checks."""
    ball = lab.ball
    measure = _tangent_measure(lab)
    tangent = measure.form
    shadow = shadow_lemma_check(measure, ball, lab.run.radius, rng=lab.rng)
    scales = _ahlfors_scales(lab, measure)
    ahlfors = [ahlfors_check(measure, tangent, scales, 1.0, rng=lab.rng)]
    if not tangent.is_symmetric():
        delta_bar = critical_exponent(ball, symmetrize_form(tangent)).delta
        ahlfors.append(ahlfors_check(measure, tangent, scales, delta_bar, rng=lab.rng))
    shadows_vs_balls = ball_shadow_check(lab.sample(lab.descriptor.simple_roots), ball, tangent,
                                         lab.run.radius, rng=lab.rng)
    conformality = conformality_check(measure, ball, ball.generators.labels[0])

    lab.record(measure.export_csv(lab.path("measure.csv")))
    lab.record(write_csv(lab.path("shadow_ratios.csv"), shadow["ratios"], ["word", "length", "mass", "ratio"]))
    ahlfors_rows = [{"exponent": check["exponent"], **row} for check in ahlfors for row in check["table"]]
    lab.record(write_csv(lab.path("ahlfors.csv"), ahlfors_rows, ["exponent", "r", "p5", "p50", "p95", "resolved"]))
    lab.record(write_json(lab.path("ps.json"), {
        "measure": measure.describe(),
        "shadow_lemma": shadow,
        "ahlfors": ahlfors,
        "ball_shadow": shadows_vs_balls,
        "conformality": conformality,
    }))

    ratios = pd.DataFrame(shadow["ratios"])
    if len(ratios):
        bands = ratios[ratios["ratio"] > 0].groupby("length")["ratio"].quantile([0.05, 0.5, 0.95]).unstack()
        bands.columns = ["p5", "p50", "p95"]
        lab.record(ratio_band_chart(bands.reset_index(), "length", lab.charts_dir, "shadow_ratios.png",
                                    "Shadow ratios"))
    lab.record(ratio_band_chart(pd.DataFrame(ahlfors[0]["table"]), "r", lab.charts_dir, "ahlfors.png",
                                "Ball mass / r"))
    return {"shadow_c0": shadow["c0"], "shadow_pass": shadow["pass"],
            "ahlfors": [(a["exponent"], a["pass"]) for a in ahlfors]}


def run_coarse(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Triangle defect, Gromov product against geodesics, and the quasi-isometry fit."""
    ball, psi = lab.ball, lab.form
    triangle = triangle_defect(ball, psi, lab.run.triples, lab.rng)
    gromov = gromov_vs_geodesic(lab.sample(), ball.generators, psi, rng=lab.rng)
    fit = quasi_isometry_fit(ball, psi)
    lab.record(write_csv(lab.path("defect_histogram.csv"), triangle["histogram"], ["lo", "hi", "count"]))
    lab.record(write_json(lab.path("coarse.json"), {
        "triangle": {k: v for k, v in triangle.items() if k != "histogram"},
        "gromov_vs_geodesic": gromov,
        "quasi_isometry": fit,
    }))
    return {"D_est": triangle["D_est"], "gromov_pass": gromov["pass"], "qi_slope": fit["slope"]}


def run_bounds(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Weight inequalities, dimension bounds, growth bound and the temperedness criterion."""
    d, theta, ball = lab.descriptor, lab.scenario.theta, lab.ball
    cone = limit_cone_estimate(ball, lab.run.effective_shell_min)
    dim_result = lab.riemannian
    report = dimension_bounds_report(ball, lab.sample(), theta, lab.scales, dim_result)
    growth = growth_bound_check(ball, theta, dim_result["dim"], lab.run.aperture)
    verdict = temperedness_verdict(dim_result["dim"], dim_result["ci"], theta, d, cone)
    constants = {
        "c_theta": c_theta(d, theta),
        "c_theta_grid": c_theta_grid(d, theta),
        "c_Pi_table": c_theta_table(),
        "smilga": smilga_check(d),
    }

    margins = [{**row, "direction": " ".join(f"{x:.6g}" for x in row["direction"])} for row in growth["directions"]]
    lab.record(write_csv(lab.path("growth_margins.csv"), margins,
                         ["direction", "growth_indicator", "margin", "rho_margin", "rho_cone_margin"]))
    lab.record(write_json(lab.path("bounds.json"), {
        "constants": constants,
        "dimension_bounds": report,
        "growth_bound": growth,
        "temperedness": verdict,
    }))
    return {"lower": report["lower"], "dim": report["dim_est"], "upper": report["upper"],
            "consistent": report["consistent"], "tempered_criterion": verdict["verdict"]}


def _scan_point(
    descriptor: GroupDescriptor,
    generators: Dict[str, np.ndarray],
    t: float,
    run: RunSettings,
    theta: Sequence[int],
    psi: LinearForm,
    p: float,
    q: float,
    scales: Optional[np.ndarray],
) -> Dict[str, Any]:
    """Exponents and dimension of one member of the family."""
    ball = build_ball(GeneratorSet(descriptor, generators), run.ball_length, run.budget)
    rng = np.random.default_rng(run.seed)
    sample = sample_limit_set(ball, theta, run.dedupe_eps, run.max_sample, rng, run.effective_shell_min)
    row: Dict[str, Any] = {"t": float(t)}
    if descriptor.kind == PRODUCT and descriptor.size == 2:
        form = pq_form(descriptor, p, q)
        joint = critical_exponent(ball, form)
        forms = builtin_forms(descriptor)
        first = critical_exponent(ball, forms["alpha1"])
        second = critical_exponent(ball, forms["alpha2"])
        bound = rigidity_bound(first.delta, second.delta, p, q)
        row.update({
            "delta_pq": joint.delta,
            "delta_1": first.delta,
            "delta_2": second.delta,
            "bound": bound,
            "gap": bound - joint.delta,
            "tolerance": joint.uncertainty + first.uncertainty + second.uncertainty,
        })
    else:
        form = psi
        report = critical_exponent(ball, psi)
        row.update({"delta_pq": report.delta, "delta_1": float("nan"), "delta_2": float("nan"),
                    "bound": float("nan"), "gap": float("nan"), "tolerance": report.uncertainty})
    try:
        if descriptor.kind == PRODUCT:
            matrix = premetric_matrix(sample, form)
            row["dim"] = box_dimension(matrix, scales if scales is not None else auto_scales(matrix.symmetrized()))["dim"]
        else:
            distances = riemannian_distances(sample)
            row["dim"] = box_dimension(distances, scales if scales is not None else auto_scales(distances))["dim"]
    except InsufficientScales as e:
        logger.warning(f"No dimension at t={t}: {e.message}")
        row["dim"] = float("nan")
    return row


def run_teich_scan(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Exponent and dimension curves along the scenario's deformation family."""
    family = lab.scenario.family
    if family is None:
        raise ConfigError("teich-scan needs a [family] section", field="family")
    grid = [float(t) for t in family.grid]
    members = [lab.scenario.generators_at(t) for t in grid]
    call = [
        delayed(_scan_point)(lab.descriptor, gens, t, lab.run, lab.scenario.theta, lab.form,
                             family.p, family.q, lab.scales)
        for t, gens in zip(grid, members)
    ]
    if lab.run.workers > 1:
        rows = Parallel(n_jobs=lab.run.workers)(call)
    else:
        rows = [fn(*a, **kw) for fn, a, kw in tqdm(call, desc="Family", disable=not VERBOSE_OUTPUT)]

    columns = ["t", "delta_pq", "delta_1", "delta_2", "bound", "gap", "tolerance", "dim"]
    table = pd.DataFrame(rows, columns=columns)
    peak = float(table["t"].iloc[int(table["delta_pq"].to_numpy().argmax())])
    respected = bool(np.all((table["delta_pq"] <= table["bound"] + table["tolerance"]) | table["bound"].isna()))
    lab.record(write_csv(lab.path("teich_scan.csv"), table, columns))
    lab.record(write_json(lab.path("teich_scan.json"), {
        "parameter": family.parameter,
        "p": family.p,
        "q": family.q,
        "peak_t": peak,
        "bound_respected": respected,
        "rows": rows,
    }))
    lab.record(scan_chart(table, ["delta_pq", "bound"] if table["bound"].notna().any() else ["delta_pq"],
                          lab.charts_dir))
    return {"points": len(rows), "peak_t": peak, "bound_respected": respected}


def run_radius_sweep(lab: LabRun, args: argparse.Namespace) -> Dict[str, Any]:
    """Shadow-lemma constant as a function of the shadow radius."""
    radii = [float(r) for r in (getattr(args, "radii", None) or DEFAULT_RADII)]
    measure = _tangent_measure(lab)
    rows = radius_sweep(measure, lab.ball, radii, seed=lab.run.seed)
    lab.record(write_csv(lab.path("radius_sweep.csv"), rows, ["radius", "c0", "empty_shadows", "pass"]))
    lab.record(write_json(lab.path("radius_sweep.json"), {"form": measure.form.describe(), "rows": rows}))
    passing = [r["radius"] for r in rows if r["pass"]]
    return {"smallest_passing_radius": min(passing) if passing else None}


STEPS: Dict[str, Callable[[LabRun, argparse.Namespace], Dict[str, Any]]] = {
    "ball": run_ball,
    "exponent": run_exponent,
    "cone": run_cone,
    "limits": run_limits,
    "premetric": run_premetric,
    "dimension": run_dimension,
    "ps": run_ps,
    "coarse": run_coarse,
    "bounds": run_bounds,
    "teich-scan": run_teich_scan,
    "radius-sweep": run_radius_sweep,
}


# ---------------------------------------------------------------------- front end


def print_summary(command: str, scenario: Scenario, summary: Dict[str, Dict[str, Any]], out_dir: Path) -> None:
    """
    Print the headline numbers of each stage.

    Args:
        command: Subcommand that ran
        scenario: The scenario
        summary: Stage name to headline numbers
        out_dir: Where the artifacts went
    """
    print("\n" + "=" * 60)
    print(f"AnosovLab {command}: {scenario.name} ({scenario.descriptor.key})")
    print("=" * 60)
    for stage, values in summary.items():
        print(f"\n{stage}:")
        for key, value in values.items():
            if isinstance(value, float):
                value = f"{value:.6g}"
            print(f"  - {key}: {value}")
    print(f"\nArtifacts saved to: {out_dir}")


def build_parser() -> argparse.ArgumentParser:
    """Subcommand parser; every subcommand takes the shared run flags."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, required=True, help="Scenario TOML file")
    common.add_argument("--out", "-o", type=str, default=None,
                        help="Output directory (default: RESULTS_DIR/<scenario>/<command>)")
    common.add_argument("--seed", type=int, default=None, help="Random seed (overrides [run] seed)")
    common.add_argument("--workers", "-j", type=int, default=None, help="joblib workers (overrides [run] workers)")
    common.add_argument("--ball-length", "-L", type=int, default=None, help="Maximal word length")
    common.add_argument("--scales", type=str, default=None, help="Scale grid lo:hi:n")
    common.add_argument("--radius", "-R", type=float, default=None, help="Shadow radius")
    common.add_argument("--form", type=str, default=None, help="Name of the linear form to use")
    common.add_argument("--log-level", type=str, default=None, help="Logging level (DEBUG, INFO, ...)")

    parser = argparse.ArgumentParser(description="AnosovLab - numerical laboratory for Anosov subgroups")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STEPS) + ["all", "check-config"]:
        doc = STEPS[name].__doc__ if name in STEPS else (
            "Run every stage in order" if name == "all" else "Validate the scenario file and exit")
        epilog = f"Output columns: {COLUMNS[name]}" if name in COLUMNS else None
        command = sub.add_parser(name, parents=[common], help=doc, description=doc, epilog=epilog)
        if name in ("ball", "all"):
            command.add_argument("--cache", action="store_true", help="Also write the binary ball cache")
        if name == "radius-sweep":
            command.add_argument("--radii", type=float, nargs="+", default=None, help="Shadow radii to try")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point for AnosovLab.

    Returns:
        Process exit code: 0 on success, 2 for configuration errors, 1 for
        computation errors
    """
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    out_dir = Path(args.out) if args.out else None
    try:
        scenario = load_scenario(args.config).with_overrides(
            seed=args.seed,
            workers=args.workers,
            ball_length=args.ball_length,
            scales=args.scales,
            radius=args.radius,
            form=args.form,
        )
        if args.command == "check-config":
            print(json.dumps(scenario.describe(), indent=2, sort_keys=True))
            return 0

        out_dir = out_dir or RESULTS_DIR / scenario.name / args.command
        lab = LabRun(scenario, out_dir, args.command)
        if args.command == "all":
            steps = list(ALL_STEPS) + (["teich-scan"] if scenario.family else [])
        else:
            steps = [args.command]
        summary = {}
        with run_log(lab.path("run.log")):
            for step in steps:
                logger.info(f"Running {step} on {scenario.name}")
                summary[step] = STEPS[step](lab, args)
        lab.write_manifest()
        print_summary(args.command, scenario, summary, out_dir)
        return 0
    except LabError as e:
        document = e.to_dict()
        target = out_dir or RESULTS_DIR
        write_json(target / "error.json", document)
        logger.error(f"{e.code}: {e.message}")
        print(json.dumps(document, indent=2, sort_keys=True, default=str))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
