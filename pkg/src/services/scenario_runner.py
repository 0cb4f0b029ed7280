"""
Scenario orchestration: parse TOML configs, run the configured checks through the
geometry -> flow -> arrival -> flow-line -> spectral pipeline, and write
deterministic reports plus plot-ready tables.
"""

import logging
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import tomli_w
from pydantic import ValidationError
from scipy import ndimage

from src.models.schema import CheckResult, CheckSpec, ScenarioConfig, ScenarioReport
from src.services import drift_spectral as ds
from src.services.arrival_time import (
    GridConfig, compute_arrival, critical_analysis, curvature_identity, exponent_fit, gradient_samples,
    lojasiewicz_ratio, pde_residual, synthetic_degenerate_samples,
)
from src.services.flowline import (
    TraceConfig, asymptotics, curvature_diagnostics, dyadic_diagnostics, limit_estimators, spiral_field,
    trace, trace_many,
)
from src.services.geometry_core import GaussianQuadrature, ShrinkerCylinder, fit_cylinder
from src.services.mcf_engine import RescaledConfig, delta_partial_sum_increments, run_rescaled
from src.services.shapes import BUILDERS, build_surface
from src.utils.errors import ArtifactError, ConfigError, GraphFailureError, LabError, PartialFieldError
from src.utils.fitting import geometric_rate
from src.utils.io import read_json, read_table, to_jsonable, write_field, write_json, write_surface_csv, write_table
from src.utils.polynomial import Polynomial
from src.utils.settings import SCENARIO_DIR, TOOL_NAME, TOOL_VERSION

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# --------------------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------------------

def load_config(source: Union[PathLike, Dict[str, Any]]) -> ScenarioConfig:
    """
    Parse and validate a scenario. Raises ConfigError naming the offending key
    for syntax errors, schema violations, unknown checks and unknown shapes.
    """
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"scenario file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid scenario field '{key}': {first['msg']}", key=key) from exc
    for i, check in enumerate(config.checks):
        if check.name not in CHECKS:
            raise ConfigError(f"unknown check '{check.name}' at checks[{i}].name", key=f"checks[{i}].name")
        if CHECKS[check.name].needs_geometry and config.geometry is None:
            raise ConfigError(f"check '{check.name}' needs a [geometry] section", key="geometry")
    if config.geometry is not None and config.geometry.shape not in BUILDERS:
        raise ConfigError(f"unknown shape '{config.geometry.shape}'", key="geometry.shape")
    return config


def dump_config(config: ScenarioConfig) -> str:
    return tomli_w.dumps(config.model_dump(exclude_none=True))


def list_bundled() -> List[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def bundled_path(name: str) -> Path:
    path = SCENARIO_DIR / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"no bundled scenario named '{name}' (known: {list_bundled()})", key="bundled")
    return path


# --------------------------------------------------------------------------------------
# pipeline context
# --------------------------------------------------------------------------------------

class ScenarioContext:
    """Lazily evaluated pipeline stages shared by the checks of one scenario."""

    def __init__(self, config: ScenarioConfig, out_dir: Path, threads: int = 1):
        self.config = config
        self.tol = config.tolerances
        self.out_dir = out_dir
        self.threads = threads
        self.rng = np.random.default_rng(config.seed)
        self.notes: Dict[str, Any] = {}

    @property
    def params(self) -> Dict[str, Any]:
        return self.config.geometry.params if self.config.geometry else {}

    @cached_property
    def surface(self):
        surface = build_surface(self.config.geometry.shape, self.params)
        write_surface_csv(surface, self.out_dir / "surface.csv")
        return surface

    @cached_property
    def arrival(self):
        cfg = GridConfig(spacing=self.tol.grid_spacing, margin_cells=self.tol.margin_cells,
                         cfl_fraction=self.tol.cfl_fraction)
        try:
            field = compute_arrival(self.surface, cfg)
        except PartialFieldError as exc:
            field = exc.field
            self.notes["unswept_cells"] = int(exc.unswept.sum())
        write_field(field, self.out_dir / "arrival")
        return field

    @cached_property
    def critical(self):
        return critical_analysis(self.arrival, hessian_method=self.tol.hessian_method, strict=False)

    @property
    def k(self) -> int:
        return self.critical.k if self.tol.k is None else self.tol.k

    @cached_property
    def axis(self) -> Optional[np.ndarray]:
        basis = self.critical.kernel_basis
        return basis[:, :2] if basis.size else None

    @cached_property
    def lines(self):
        field, crit = self.arrival, self.critical
        center = crit.points[0].position
        idx = crit.points[0].index
        clearance = float(ndimage.distance_transform_edt(field.mask)[idx]) * field.spacing
        radius = self.tol.start_fraction * clearance
        offset = float(self.rng.uniform())
        angles = 2.0 * np.pi * (np.arange(self.tol.lines) + offset) / self.tol.lines
        starts = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
        cfg = TraceConfig(stop_factor=self.tol.stop_factor, rtol=self.tol.trace_rtol,
                          samples=self.tol.trace_samples)
        positions = np.array([p.position for p in crit.points])
        lines = trace_many(field, starts, cfg, threads=self.threads, critical_points=positions, axis=self.axis)
        rows = []
        for i, line in enumerate(lines):
            rows.extend({"line": i, **row} for row in line.rows())
        write_table(rows, self.out_dir / "lines.csv")
        return lines

    @cached_property
    def rescaled(self):
        cfg = RescaledConfig(anchor=self.params.get("anchor", "auto"), k=self.tol.k,
                             cfl_fraction=self.tol.cfl_fraction,
                             quad=GaussianQuadrature(truncation_radius=self.tol.quadrature_radius),
                             graph_radius=self.tol.graph_radius)
        trace_ = run_rescaled(self.surface, self.tol.t_end, cfg)
        rows = trace_.rows()
        partial = np.nan_to_num(np.asarray(trace_.deltas, dtype=float), nan=0.0) ** 0.9
        for row, total in zip(rows, np.cumsum(partial)):
            row["delta_partial_0.9"] = float(total)
        write_table(rows, self.out_dir / "rescaled.csv")
        return trace_


# --------------------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------------------

CheckOutcome = Tuple[float, Dict[str, Any]]


@dataclass(frozen=True)
class CheckDef:
    func: Callable[[ScenarioContext, CheckSpec], CheckOutcome]
    compare: str = "le"
    default_threshold: Optional[float] = None
    needs_geometry: bool = True


def _arrival_oracle(ctx: ScenarioContext, spec: CheckSpec) -> CheckOutcome:
    field = ctx.arrival
    n = field.n
    radius = float(spec.params.get("radius", ctx.params.get("radius", 1.0)))
    coords = field.coordinates
    dist2 = np.sum(coords ** 2, axis=-1)
    inner = field.mask & (np.sqrt(dist2) <= spec.params.get("inner_fraction", 0.8) * radius)
    exact = -dist2[inner] / (2.0 * n)
    err = float(np.max(np.abs(field.values[inner] - exact)) / np.max(np.abs(exact)))
    return err, {"relative_linf": err, "cells": int(inner.sum()), **field.summary()}


def _pde_residual(ctx, spec):
    report = pde_residual(ctx.arrival)
    return report.l2_norm, report.as_dict()


def _curvature_identity(ctx, spec):
    report = curvature_identity(ctx.arrival)
    return report.median_relative_error, {"max_relative_error": report.max_relative_error,
                                          "median_relative_error": report.median_relative_error}


def _lojasiewicz(ctx, spec):
    curves = lojasiewicz_ratio(ctx.arrival, critical=ctx.critical, localize=spec.params.get("localize"),
                               fit_bins=int(spec.params.get("fit_bins", 6)))
    rows = [row for c in curves for row in c.rows()]
    write_table(rows, ctx.out_dir / "ratio.csv")
    target = 2.0 / (ctx.arrival.n - ctx.k)
    limits = [c.limit for c in curves if np.isfinite(c.limit)]
    dev = float(max(abs(lim - target) for lim in limits)) if limits else float("inf")
    return dev, {"target": target, "limits": limits, "curves": [c.as_dict() for c in curves]}


def _hessian_structure(ctx, spec):
    crit = ctx.critical
    value = max(crit.max_eigenvalue_error, crit.laplacian_error)
    expected = spec.params.get("k")
    if expected is not None and crit.k != int(expected):
        value = float("inf")
    return value, crit.as_dict()


def _gradient_exponent(ctx, spec):
    fit = exponent_fit(gradient_samples(ctx.arrival, ctx.critical),
                       min_decades=float(spec.params.get("min_decades", 2.0)))
    return abs(fit.exponent - 2.0), fit.as_dict()


def _synthetic_exponent(ctx, spec):
    m = int(spec.params.get("m", 3))
    fit = exponent_fit(synthetic_degenerate_samples(m))
    return abs(fit.exponent - m / (m - 1.0)), {"m": m, **fit.as_dict()}


def _line_asymptotics(ctx, spec):
    reports = [asymptotics(line, ctx.k, axis=ctx.axis) for line in ctx.lines]
    value = max(max(r["value_deviation"], r["gradient_deviation"]) for r in reports)
    return value, {"lines": reports}


def _line_finite_length(ctx, spec):
    ratios = [line.tail_lengths()[-1] / line.length for line in ctx.lines]
    return float(max(ratios)), {"lengths": [line.length for line in ctx.lines], "final_tail_ratios": ratios}


def _line_axis_projection(ctx, spec):
    reports = [asymptotics(line, ctx.k, axis=ctx.axis) for line in ctx.lines]
    value = max(r["axis_projection_tail_max"] for r in reports)
    return value, {"axis": None if ctx.axis is None else ctx.axis.tolist(),
                   "tail_max": [r["axis_projection_tail_max"] for r in reports]}


def _line_tangent_limit(ctx, spec):
    reports = [limit_estimators(line, axis=ctx.axis) for line in ctx.lines]
    rows = []
    for i, r in enumerate(reports):
        rows.extend({"line": i, "kind": "secant", "tail": t, "oscillation": o}
                    for t, o in enumerate(r["secant_oscillation"]))
        rows.extend({"line": i, "kind": "tangent", "tail": t, "oscillation": o}
                    for t, o in enumerate(r["tangent_oscillation"]))
    write_table(rows, ctx.out_dir / "oscillation.csv")
    value = max(r["final_tangent_oscillation"] for r in reports)
    return value, {"limit_detected": [r["limit_detected"] for r in reports],
                   "secant_tangent_angle": [r["secant_tangent_angle"] for r in reports]}


def _line_curvature(ctx, spec):
    reports = [curvature_diagnostics(line, float(spec.params.get("Lambda", 2.0))) for line in ctx.lines]
    for r in reports:
        r.pop("window_curve")
    return max(r["fd_formula_discrepancy"] for r in reports), {"lines": reports}


def _line_dyadic(ctx, spec):
    reports = [dyadic_diagnostics(line, ctx.k) for line in ctx.lines]
    return max(r["offset_tail_error"] for r in reports), {"lines": reports}


def _spiral_control(ctx, spec):
    line = trace(spiral_field(float(spec.params.get("epsilon", 0.1))), [1.0, 0.0])
    report = limit_estimators(line)
    return float(report["no_limit_detected"]), {"final_secant_oscillation": report["final_secant_oscillation"],
                                                "oscillation_non_decreasing": report["oscillation_non_decreasing"]}


def _rescaled_monotonicity(ctx, spec):
    trace_ = ctx.rescaled
    return trace_.max_area_increase, trace_.summary()


def _rescaled_radius(ctx, spec):
    trace_ = ctx.rescaled
    n, k = trace_.n, trace_.k
    target = float(np.sqrt(2.0 * (n - k)))
    if k == 0:
        last = trace_.snapshots[-1]
        radius = float(np.mean(np.linalg.norm(last.samples, axis=1)))
    else:
        fits = [f for f in trace_.fits if f is not None]
        radius = fits[-1].measured_radius if fits else float("nan")
    return abs(radius - target), {"radius": radius, "target": target, "time": trace_.j[-1] if trace_.j else None}


def _rescaled_displacement(ctx, spec):
    trace_ = ctx.rescaled
    return float(trace_.displacement_violations), {
        "violations": trace_.displacement_violations,
        "max_displacement_ratio": trace_.max_displacement_ratio,
        "displacements": trace_.displacements,
    }


def _delta_decay(ctx, spec):
    """Tail increment of sum delta_j^beta, absolute or relative to the partial sum; inf unless the deltas decay."""
    trace_ = ctx.rescaled
    deltas = np.asarray([d for d in trace_.deltas if np.isfinite(d)])
    rate = geometric_rate(deltas) if deltas.size > 2 else None
    rate = float("nan") if rate is None else rate
    beta = float(spec.params.get("beta", 0.9))
    increments = delta_partial_sum_increments(trace_, beta)
    tail = float(increments[-1]) if increments.size else float("inf")
    total = float(np.sum(increments)) if increments.size else float("inf")
    relative = bool(spec.params.get("relative", False))
    value = tail / total if relative and total > 0.0 else tail
    stationary = deltas.size > 0 and not np.any(deltas > 0.0)
    if not (stationary or (np.isfinite(rate) and rate < 1.0)):
        value = float("inf")
    return value, {"rate": rate, "tail_increment": tail, "partial_sum": total, "relative": relative,
                   "beta": beta, "clamps": trace_.clamp_count}


def _axis_sum(ctx, spec):
    values = np.asarray(ctx.rescaled.axis_values, dtype=float)
    partial = np.cumsum(values)
    rate = None
    if spec.params.get("mode", "round") == "round":
        # A_j vanish identically
        value = float(np.max(np.abs(values))) if values.size else 0.0
    else:
        # Cauchy: last increment of the partial sums relative to the sum so far
        rate = geometric_rate(values) if values.size > 2 else None
        tail = float(values[-1]) if values.size else float("inf")
        value = tail / float(partial[-1]) if values.size and partial[-1] > 0.0 else tail
        if rate is None or rate >= 1.0:
            value = float("inf")
    return value, {"A": values.tolist(), "partial_sums": partial.tolist(), "rate": rate}


def _extinction_fit(ctx, spec):
    trace_ = ctx.rescaled
    expected = float(spec.params.get("n_minus_k", trace_.n - trace_.k))
    measured = trace_.extinction.n_minus_k if trace_.extinction else float("nan")
    return abs(measured - expected) / expected, {"measured_n_minus_k": measured, "expected": expected}


def _neck_cylinder_fit(ctx, spec):
    trace_ = ctx.rescaled
    fits = [f for f in trace_.fits if f is not None]
    radius_graph = float(spec.params.get("graph_radius", 2.0))
    if not fits:
        for snap in trace_.snapshots[-3:]:
            try:
                fits.append(fit_cylinder(snap, 1, graph_radius=radius_graph))
            except GraphFailureError as exc:
                logger.info(f"⚠️ Neck fit failed at t = {snap.time:.4g}: {exc}")
    radii = [f.measured_radius for f in fits]
    target = float(np.sqrt(2.0 * (trace_.n - 1)))
    value = abs(radii[-1] - target) if radii else float("inf")
    return value, {"fitted_radii": radii, "target": target, "termination": trace_.termination,
                   **ctx.notes}


def _pairs(spec, default):
    return [tuple(int(v) for v in p) for p in spec.params.get("pairs", default)]


def _spectral_identities(ctx, spec):
    worst = 0.0
    for n, k in _pairs(spec, [[2, 1], [3, 1], [3, 2]]):
        cyl = ShrinkerCylinder.standard(n, k)
        pts = ds.cylinder_points(cyl, 100, seed=ctx.config.seed)
        for element in ds.kernel_basis(n, k):
            worst = max(worst, ds.eigen_residual(element.function(cyl), 1.0, pts))
    for n in (1, 2, 3):
        pts = ctx.rng.normal(size=(100, n)) * 2.0
        for two_lam in range(0, 5):
            for v in ds.hermite_eigen(n, two_lam):
                worst = max(worst, ds.eigen_residual(v, two_lam / 2.0, pts))
                for i in range(n):
                    dv = v.derivative(i)
                    if not dv.is_zero():
                        worst = max(worst, ds.eigen_residual(dv, two_lam / 2.0 - 0.5, pts))
    return worst, {"max_residual": worst}


def _kernel_dimension(ctx, spec):
    ok, dims = True, {}
    for n, k in _pairs(spec, [[2, 1], [3, 1], [3, 2]]):
        basis = ds.kernel_basis(n, k)
        cyl = ShrinkerCylinder.standard(n, k)
        local = cyl.local_coordinates(ds.cylinder_points(cyl, 200, seed=ctx.config.seed))
        table = np.column_stack([b.polynomial.value(local) for b in basis])
        rank = int(np.linalg.matrix_rank(table))
        expected = k + k * (k - 1) // 2 + k * (n - k + 1)
        dims[f"{n},{k}"] = {"count": len(basis), "rank": rank, "expected": expected}
        ok = ok and len(basis) == expected and rank == expected
    return float(ok), dims


def _projection_sweep(ctx, spec):
    n, k = int(spec.params.get("n", 2)), int(spec.params.get("k", 1))
    deltas = spec.params.get("deltas", [1e-4, 1e-3, 1e-2, 1e-1])
    result = ds.projection_sweep(n, k, deltas, seed=ctx.config.seed)
    return result["nu"], result


def _projection_idempotence(ctx, spec):
    n, k = int(spec.params.get("n", 2)), int(spec.params.get("k", 1))
    cyl = ShrinkerCylinder.standard(n, k)
    element = ds.KernelElement.from_coefficients(n, k, ctx.rng.normal(size=ds.kernel_dimension(n, k)))
    projected = ds.kernel_project(element.polynomial, cyl, seed=ctx.config.seed)
    again = ds.kernel_project(projected.element.polynomial, cyl, seed=ctx.config.seed)
    drift = float(np.max(np.abs(again.element.coefficients() - projected.element.coefficients())))
    return max(again.remainder_sup, drift), {"remainder_sup": again.remainder_sup, "coefficient_drift": drift}


def _linearization(ctx, spec):
    n, k = int(spec.params.get("n", 2)), int(spec.params.get("k", 1))
    result = ds.linearization_sweep(n, k, spec.params.get("epsilons", [0.01, 0.02, 0.04, 0.08]))
    return abs(result["slope"] - 2.0), result


def _cylinder_mean_curvature(ctx, spec):
    worst, values = 0.0, {}
    for n, k in _pairs(spec, [[1, 0], [2, 1], [3, 1]]):
        cyl = ShrinkerCylinder.standard(n, k)
        lin = ds.graph_H_linearize(0.0, cyl)
        err = float(np.max(np.abs(lin.exact - np.sqrt((n - k) / 2.0))))
        values[f"{n},{k}"] = float(np.mean(lin.exact))
        worst = max(worst, err)
    return worst, {"mean_curvatures": values}


def _frequency_problems(n: int) -> List[Tuple[str, ds.FrequencyProblem]]:
    x1 = Polynomial.coordinate(n, 0)
    return [("x1", ds.FrequencyProblem(n=n, u=x1, potential=0.5, r_max=8.0)),
            ("x1^2-2", ds.FrequencyProblem(n=n, u=x1 * x1 - 2.0, potential=1.0, r_max=8.0))]


def _frequency_power(ctx, spec):
    n = int(spec.params.get("n", 2))
    radii = spec.params.get("radii", [0.5, 1.0, 2.0, 4.0, 8.0])
    worst, rows = 0.0, []
    for d in spec.params.get("degrees", [1, 2, 3]):
        prob = ds.FrequencyProblem(n=n, u=ds.RadialFunction.power(float(d), n), r_max=max(radii) + 1.0)
        for r in radii:
            point = ds.frequency(prob, r)
            worst = max(worst, abs(point.U - d))
            rows.append({"series": f"|x|^{d}", "r": r, "U": point.U})
    _append_frequency_rows(ctx, rows)
    return worst, {"max_error": worst}


def _append_frequency_rows(ctx, rows):
    path = ctx.out_dir / "frequency.csv"
    frame = pd.DataFrame(rows)
    if path.exists():
        frame = pd.concat([read_table(path), frame], ignore_index=True)
    write_table(frame, path)


def _frequency_curves(ctx, spec):
    n = int(spec.params.get("n", 2))
    radii = spec.params.get("radii", [0.5, 1.0, 2.0, 3.0, 4.0])
    curves = {name: ds.frequency_curve(prob, radii) for name, prob in _frequency_problems(n)}
    rows = [{"series": name, **row} for name, curve in curves.items() for row in curve.rows()]
    return curves, rows


def _frequency_agreement(ctx, spec):
    curves, rows = _frequency_curves(ctx, spec)
    _append_frequency_rows(ctx, [{k: r[k] for k in ("series", "r", "U", "I", "D_surface", "D_bulk")} for r in rows])
    worst = max(p.discrepancy for c in curves.values() for p in c.points)
    return worst, {"max_discrepancy": worst}


def _frequency_log_identity(ctx, spec):
    curves, _ = _frequency_curves(ctx, spec)
    worst = float(max(np.max(np.abs(c.log_I_residual)) for c in curves.values()))
    return worst, {"max_residual": worst}


def _dichotomy(ctx, spec):
    p = spec.params
    result = ds.dichotomy_probe(lam=float(p.get("lam", 0.0)), u0=float(p.get("u0", 1.0)),
                                du0=float(p.get("du0", 10.0)), r0=float(p.get("r0", 1.0)),
                                r_max=float(p.get("r_max", 20.0)), n=int(p.get("n", 2)),
                                r1=float(p.get("r1", 6.0)), delta=float(p.get("delta", 0.5)),
                                eps=float(p.get("eps", 0.5)))
    path = ctx.out_dir / "dichotomy.csv"
    rows = [{"series": p.get("label", f"lambda={result.lam}"), **row} for row in result.rows()]
    frame = pd.DataFrame(rows)
    if path.exists():
        frame = pd.concat([read_table(path), frame], ignore_index=True)
    write_table(frame, path)
    return float(result.verdict == p.get("expect", "exponential")), result.as_dict()


def _rayleigh(ctx, spec):
    ok = True
    for n in (1, 2):
        for two_lam in range(0, 5):
            for v in ds.hermite_eigen(n, two_lam):
                ok = ok and ds.rayleigh_check(v, n, two_lam / 2.0)["satisfied"]
    return float(ok), {}


CHECKS: Dict[str, CheckDef] = {
    "arrival_oracle": CheckDef(_arrival_oracle, "le", 0.02),
    "pde_residual": CheckDef(_pde_residual, "le", None),
    "curvature_identity": CheckDef(_curvature_identity, "le", 0.05),
    "lojasiewicz_ratio": CheckDef(_lojasiewicz, "le", 1e-2),
    "hessian_structure": CheckDef(_hessian_structure, "le", 0.05),
    "gradient_exponent": CheckDef(_gradient_exponent, "le", 0.1),
    "synthetic_exponent": CheckDef(_synthetic_exponent, "le", 0.05, needs_geometry=False),
    "flowline_asymptotics": CheckDef(_line_asymptotics, "le", 0.02),
    "flowline_finite_length": CheckDef(_line_finite_length, "le", 1e-2),
    "flowline_axis_projection": CheckDef(_line_axis_projection, "le", 0.05),
    "flowline_tangent_limit": CheckDef(_line_tangent_limit, "le", 1e-2),
    "flowline_curvature": CheckDef(_line_curvature, "le", 0.05),
    "flowline_dyadic": CheckDef(_line_dyadic, "le", 0.1),
    "spiral_control": CheckDef(_spiral_control, "bool", None, needs_geometry=False),
    "rescaled_monotonicity": CheckDef(_rescaled_monotonicity, "le", 1e-9),
    "rescaled_radius": CheckDef(_rescaled_radius, "le", 1e-3),
    "rescaled_displacement": CheckDef(_rescaled_displacement, "le", 0.0),
    "delta_decay": CheckDef(_delta_decay, "le", 1e-8),
    "axis_sum": CheckDef(_axis_sum, "le", 1e-12),
    "extinction_fit": CheckDef(_extinction_fit, "le", 0.05),
    "neck_cylinder_fit": CheckDef(_neck_cylinder_fit, "le", 0.1),
    "spectral_identities": CheckDef(_spectral_identities, "le", 1e-9, needs_geometry=False),
    "kernel_dimension": CheckDef(_kernel_dimension, "bool", None, needs_geometry=False),
    "projection_sweep": CheckDef(_projection_sweep, "ge", 0.9, needs_geometry=False),
    "projection_idempotence": CheckDef(_projection_idempotence, "le", 1e-10, needs_geometry=False),
    "linearization_sweep": CheckDef(_linearization, "le", 0.1, needs_geometry=False),
    "cylinder_mean_curvature": CheckDef(_cylinder_mean_curvature, "le", 1e-10, needs_geometry=False),
    "frequency_power": CheckDef(_frequency_power, "le", 1e-6, needs_geometry=False),
    "frequency_agreement": CheckDef(_frequency_agreement, "le", 1e-7, needs_geometry=False),
    "frequency_log_identity": CheckDef(_frequency_log_identity, "le", 1e-5, needs_geometry=False),
    "dichotomy": CheckDef(_dichotomy, "bool", None, needs_geometry=False),
    "rayleigh_bound": CheckDef(_rayleigh, "bool", None, needs_geometry=False),
}


def _judge(definition: CheckDef, spec: CheckSpec, value: float, scale: float) -> Tuple[str, Optional[float]]:
    threshold = spec.threshold if spec.threshold is not None else definition.default_threshold
    if definition.compare == "bool":
        passed = bool(value)
    elif threshold is None:
        return "measured", None
    elif definition.compare == "ge":
        threshold = threshold / scale
        passed = bool(value >= threshold)
    else:
        threshold = threshold * scale
        passed = bool(value <= threshold)
    if spec.mode == "measured":
        return "measured", threshold
    return ("pass" if passed else "fail"), threshold


# --------------------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------------------

def run_scenario(config: Union[ScenarioConfig, PathLike], out_dir: PathLike, seed: Optional[int] = None,
                 tolerance_scale: float = 1.0, threads: int = 1) -> ScenarioReport:
    """
    Execute every configured check and write summary.json (deterministic),
    run_meta.json (timestamps, runtime), config.toml and the check artifacts.
    """
    if not isinstance(config, ScenarioConfig):
        config = load_config(config)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stale in ("frequency.csv", "dichotomy.csv"):
        (out_dir / stale).unlink(missing_ok=True)
    started = time.perf_counter()
    ctx = ScenarioContext(config, out_dir, threads=threads)

    results: List[CheckResult] = []
    for spec in config.checks:
        definition = CHECKS[spec.name]
        try:
            value, measured = definition.func(ctx, spec)
            verdict, threshold = _judge(definition, spec, float(value), tolerance_scale)
            results.append(CheckResult(name=spec.name, verdict=verdict,
                                       value=float(value) if np.isfinite(value) else None,
                                       threshold=threshold, measured=to_jsonable(measured)))
            status = {"pass": "✅", "fail": "❌", "measured": "📊"}[verdict]
            logger.info(f"{status} {config.name}/{spec.name}: {verdict} (value {float(value):.4g})")
        except (LabError, ValueError, ArithmeticError) as exc:
            logger.error(f"❌ {config.name}/{spec.name}: {type(exc).__name__}: {exc}")
            results.append(CheckResult(name=spec.name, verdict="error", error=f"{type(exc).__name__}: {exc}"))

    errors = sum(r.verdict == "error" for r in results)
    passed = all(r.verdict in ("pass", "measured") for r in results)
    report = ScenarioReport(scenario=config.name, seed=config.seed, grid_spacing=config.tolerances.grid_spacing,
                            tool=TOOL_NAME, version=TOOL_VERSION, tolerance_scale=tolerance_scale,
                            checks=results, passed=passed, errors=errors)
    write_json(report.model_dump(), out_dir / "summary.json")
    (out_dir / "config.toml").write_text(dump_config(config), encoding="utf-8")
    write_json({"started": datetime.now(timezone.utc).isoformat(),
                "runtime_seconds": time.perf_counter() - started,
                "tool": TOOL_NAME, "version": TOOL_VERSION, "threads": threads}, out_dir / "run_meta.json")
    logger.info(f"📊 Scenario {config.name}: {'passed' if passed else 'failed'} "
                f"({len(results)} checks, {errors} errors)")
    return report


def _run_one(args: Tuple[ScenarioConfig, str, Optional[int], float]) -> ScenarioReport:
    config, out_dir, seed, scale = args
    return run_scenario(config, out_dir, seed=seed, tolerance_scale=scale)


def run_batch(sources: Sequence[PathLike], out_root: PathLike, threads: int = 1, seed: Optional[int] = None,
              tolerance_scale: float = 1.0) -> List[ScenarioReport]:
    """Run several scenarios across a process pool; reports are ordered by scenario name."""
    configs = sorted((load_config(s) for s in sources), key=lambda c: c.name)
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique within a batch", key="name")
    out_root = Path(out_root)
    jobs = [(c, str(out_root / c.name), seed, tolerance_scale) for c in configs]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(job) for job in jobs]
    write_json({"scenarios": [{"scenario": r.scenario, "passed": r.passed, "errors": r.errors}
                              for r in reports]}, out_root / "batch_summary.json")
    return reports


# --------------------------------------------------------------------------------------
# plot data
# --------------------------------------------------------------------------------------

def _ratio_plot(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[["component", "minus_u", "ratio_mean"]].dropna()


def _frequency_plot(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[["series", "r", "U"]].sort_values(["series", "r"], kind="stable")


def _delta_plot(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[["j", "delta", "delta_partial_0.9"]]


def _axis_plot(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[["line", "s", "axis_projection"]]


def _osc_plot(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[["line", "kind", "tail", "oscillation"]]


def _dichotomy_plot(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[["series", "r", "U", "lower_bound"]]


PLOTS = {
    "ratio.csv": ("ratio_vs_minus_u.csv", _ratio_plot),
    "frequency.csv": ("U_vs_r.csv", _frequency_plot),
    "rescaled.csv": ("delta_vs_j.csv", _delta_plot),
    "lines.csv": ("axis_projection_vs_s.csv", _axis_plot),
    "oscillation.csv": ("osc_vs_tail.csv", _osc_plot),
    "dichotomy.csv": ("dichotomy_U_vs_r.csv", _dichotomy_plot),
}


def emit_plots(report_dir: PathLike) -> List[Path]:
    """Write long-format plotting tables under `<report_dir>/plots` from the run's artifacts."""
    report_dir = Path(report_dir)
    read_json(report_dir / "summary.json")
    written = []
    for source, (target, transform) in PLOTS.items():
        path = report_dir / source
        if not path.exists():
            continue
        written.append(write_table(transform(read_table(path)), report_dir / "plots" / target))
    if not written:
        raise ArtifactError(f"no plot-ready artifacts in {report_dir}")
    logger.info(f"✅ Wrote {len(written)} plot tables to {report_dir / 'plots'}")
    return written
