"""
Sub-command implementations. Each takes a validated RunConfig, writes its data files, and returns the
paths written together with any flags raised along the way; a non-empty flag list means the run did
not complete cleanly.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.cli.config import RunConfig
from src.cli.outputs import normalize_curves, sidecar_path, write_json, write_table
from src.cli.plotting import Figure, render_svg
from src.core.errors import DomainError, FitFailure, UsageError
from src.core.psf import PsfModel, psf_from_descriptor
from src.estimation.adaptive import AdaptiveSchedule, adaptive_experiment
from src.estimation.experiments import crlb_experiment
from src.limits.fisher import PARAMETER_ORDER, SourceParams
from src.limits.quantum import (
    compatibility_residual,
    qfim_closed,
    qfim_numeric,
    quantum_precisions,
    small_separation_approx,
)
from src.measurement.analysis import (
    MEASURED_COLUMNS,
    NAN_PRECISIONS,
    SCAN_COLUMNS,
    LorentzianFit,
    ScanRow,
    displacement_grid,
    evaluate_scan_point,
    lorentzian_fit,
    optimal_displacement,
    peak_displacement,
    safe_precisions,
)
from src.measurement.povm import build_phi_family
from src.modes.basis import build_basis

logger = logging.getLogger(__name__)

QFIM_COLUMNS = (
    "s0", "s", "q",
    "Q_s0s0", "Q_s0s", "Q_s0q", "Q_ss", "Q_sq", "Q_qq",
    "numeric_rel_error",
    "Hq_s0", "Hq_s", "Hq_q",
    "compat_residual",
    "Happrox_s0", "Happrox_s", "Happrox_q",
)
DUAL_PATH_RTOL = 1e-6
COMPATIBILITY_TOL = 1e-8


@dataclass
class CommandResult:
    outputs: List[str] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    def flag(self, *flags: str) -> None:
        for f in flags:
            if f not in self.flags:
                self.flags.append(f)


def map_points(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Evaluate fn over tasks on a process pool of size jobs; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def psf_model(config: RunConfig) -> PsfModel:
    return psf_from_descriptor(config.psf, config.sigma, config.nodes)


def _record(result: CommandResult, path: Optional[str]) -> None:
    if path is not None:
        result.outputs.append(path)


# ─── qfim ─────────────────────────────────────────────────────────────────────

def _qfim_point(task: Tuple[PsfModel, SourceParams, int]) -> Tuple[tuple, List[str]]:
    model, theta, dimension = task
    flags: List[str] = []
    closed = qfim_closed(model, theta)
    basis = build_basis(model, theta.s0, dimension)
    numeric = qfim_numeric(basis, theta)
    if closed.diverging:
        flags.append("qfim-diverging")
        rel_error = float("nan")
    else:
        rel_error = float(np.linalg.norm(numeric.matrix - closed.matrix) / np.linalg.norm(closed.matrix))
    compat = float(np.max(np.abs(compatibility_residual(basis, theta))))
    if not rel_error <= DUAL_PATH_RTOL:
        flags.append("qfim-path-mismatch")
    if not compat <= COMPATIBILITY_TOL:
        flags.append("incompatible")
    exact = safe_precisions(lambda: quantum_precisions(model, theta), "quantum", flags)
    try:
        approx = small_separation_approx(model, theta)
    except DomainError:
        approx = NAN_PRECISIONS
    m = closed.matrix
    row = (
        theta.s0, theta.s, theta.q,
        m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2],
        rel_error,
        exact.H_s0, exact.H_s, exact.H_q,
        compat,
        approx.H_s0, approx.H_s, approx.H_q,
    )
    return tuple(float(v) for v in row), flags


def cmd_qfim(config: RunConfig) -> CommandResult:
    model = psf_model(config)
    thetas = [SourceParams(config.s0, s, q) for q, s in product(config.q, config.s)]
    points = map_points(_qfim_point, [(model, theta, config.dim) for theta in thetas], config.jobs)

    result = CommandResult()
    for theta, (_, flags) in zip(thetas, points):
        if flags:
            logger.warning(f"QFIM: {', '.join(flags)} at {theta}")
        result.flag(*flags)
    rows = [row for row, _ in points]
    write_table(QFIM_COLUMNS, rows, config.out, config.format.value)
    _record(result, config.out)

    if config.svg:
        figure = Figure(xlabel="s / sigma", ylabel="quantum precision", logx=True, logy=True)
        for q in config.q:
            curve = [r for r in rows if r[2] == q and r[1] > 0]
            figure.add(f"H_s q={q:g}", [r[1] for r in curve], [r[11] for r in curve])
            figure.add(f"H_q q={q:g}", [r[1] for r in curve], [r[12] for r in curve], "--")
        render_svg(figure, config.svg)
        _record(result, config.svg)
    return result


# ─── scans ────────────────────────────────────────────────────────────────────

def _scan_point(task: Tuple[PsfModel, SourceParams, float, float, int]) -> ScanRow:
    model, theta, phi, x0, dimension = task
    return evaluate_scan_point(model, theta, phi, x0, dimension)


def _scan_rows(config: RunConfig, model: PsfModel, curves: List[Tuple[SourceParams, float, Sequence[float]]]) -> List[ScanRow]:
    tasks = [(model, theta, phi, float(x0), config.dim) for theta, phi, grid in curves for x0 in grid]
    return map_points(_scan_point, tasks, config.jobs)


def _scan_dicts(rows: Sequence[ScanRow]) -> List[Dict[str, float]]:
    return [dict(zip(SCAN_COLUMNS, row.values())) for row in rows]


def _write_scan(config: RunConfig, rows: Sequence[ScanRow], curve_keys: Sequence[str], result: CommandResult) -> None:
    records = _scan_dicts(rows)
    if config.normalize:
        records = normalize_curves(records, curve_keys, MEASURED_COLUMNS)
    table = [tuple(record[c] for c in SCAN_COLUMNS) for record in records]
    write_table(SCAN_COLUMNS, table, config.out, config.format.value)
    _record(result, config.out)
    for row in rows:
        result.flag(*row.flags)


def _displacement_curves(config: RunConfig) -> List[Tuple[SourceParams, float, Sequence[float]]]:
    curves = []
    for s, q, phi in product(config.s, config.q, config.phi):
        theta = SourceParams(config.s0, s, q)
        grid = config.x0 if config.x0 is not None else displacement_grid(theta, config.points, config.span)
        curves.append((theta, phi, grid))
    return curves


def _split_curves(rows: List[ScanRow], curves: list) -> List[List[ScanRow]]:
    split, start = [], 0
    for _, _, grid in curves:
        split.append(rows[start:start + len(grid)])
        start += len(grid)
    return split


def _fit_curve(theta: SourceParams, phi: float, rows: List[ScanRow], result: CommandResult) -> Tuple[dict, Optional[LorentzianFit]]:
    fit = None
    entry = {
        "s": theta.s, "q": theta.q, "phi": phi, "s0": theta.s0,
        "x0_opt": optimal_displacement(theta),
        "l2_small_separation": 1.0 / (theta.q * (1.0 - theta.q)),
    }
    try:
        entry["x0_peak"] = peak_displacement(rows)
    except DomainError:
        entry["x0_peak"] = float("nan")
    if theta.s == 0:
        entry["fit"] = None
        return entry, None
    try:
        fit = lorentzian_fit([(r.x0, r.H_s) for r in rows], theta.s, theta.s0)
        entry["fit"] = fit.to_dict()
    except (FitFailure, UsageError) as e:
        logger.warning(f"FIT: curve s={theta.s:g} q={theta.q:g} phi={phi:.6g}: {e}")
        entry["fit"] = None
        result.flag("fit-failed")
    return entry, fit


def cmd_scan_displacement(config: RunConfig) -> CommandResult:
    model = psf_model(config)
    curves = _displacement_curves(config)
    rows = _scan_rows(config, model, curves)
    result = CommandResult()
    _write_scan(config, rows, ("s", "q", "phi"), result)

    per_curve = _split_curves(rows, curves)
    fitted = [_fit_curve(theta, phi, curve_rows, result) for (theta, phi, _), curve_rows in zip(curves, per_curve)]
    fits = [entry for entry, _ in fitted]
    document = {"order": list(PARAMETER_ORDER), "psf": model.descriptor(), "dimension": config.dim, "fits": fits}
    sidecar = sidecar_path(config.out)
    if sidecar is not None:
        write_json(document, sidecar)
        _record(result, sidecar)
    else:
        for entry in fits:
            logger.info(f"FIT: {entry}")

    if config.svg:
        figure = Figure(xlabel="x0 / sigma", ylabel="H_s")
        for (theta, phi, _), curve_rows, (_, fit) in zip(curves, per_curve, fitted):
            label = f"s={theta.s:g} q={theta.q:g} phi={phi:.4g}"
            x = [r.x0 for r in curve_rows]
            figure.add(label, x, [r.H_s for r in curve_rows])
            if fit is not None:
                figure.add(f"fit {label}", x, fit.evaluate(x), ":")
        render_svg(figure, config.svg)
        _record(result, config.svg)
    return result


def cmd_scan_separation(config: RunConfig) -> CommandResult:
    model = psf_model(config)
    curves = []
    for q, phi in product(config.q, config.phi):
        for s in config.s:
            theta = SourceParams(config.s0, s, q)
            curves.append((theta, phi, [optimal_displacement(theta)]))
    rows = _scan_rows(config, model, curves)
    result = CommandResult()
    _write_scan(config, rows, ("q", "phi"), result)

    if config.svg:
        figure = Figure(xlabel="s / sigma", ylabel="H_s / quantum H_s", logx=True)
        for q, phi in product(config.q, config.phi):
            curve = [r for r in rows if r.q == q and r.phi == phi and r.s > 0]
            figure.add(f"q={q:g} phi={phi:.4g}", [r.s for r in curve], [r.H_s / r.Hq_s for r in curve])
        render_svg(figure, config.svg)
        _record(result, config.svg)
    return result


def cmd_robustness(config: RunConfig) -> CommandResult:
    model = psf_model(config)
    curves = _displacement_curves(config)
    rows = _scan_rows(config, model, curves)
    result = CommandResult()
    _write_scan(config, rows, ("s", "q", "phi"), result)

    if config.svg:
        figure = Figure(xlabel="x0 / sigma", ylabel="H_s", logy=True)
        for (theta, phi, _), curve_rows in zip(curves, _split_curves(rows, curves)):
            x = [r.x0 for r in curve_rows]
            figure.add(f"phi={phi:.4g} s={theta.s:g} q={theta.q:g}", x, [r.H_s for r in curve_rows])
        reference = _split_curves(rows, curves)[0]
        x = [r.x0 for r in reference]
        figure.add("quantum", x, [r.Hq_s for r in reference], "k--")
        figure.add("direct imaging", x, [r.Hdir_s for r in reference], "k:")
        render_svg(figure, config.svg)
        _record(result, config.svg)
    return result


# ─── Monte Carlo ──────────────────────────────────────────────────────────────

def cmd_simulate(config: RunConfig) -> CommandResult:
    model = psf_model(config)
    result = CommandResult()
    experiments = []
    for s, q, phi in product(config.s, config.q, config.phi):
        theta = SourceParams(config.s0, s, q)
        x0 = config.x0[0] if config.x0 else optimal_displacement(theta)
        basis = build_basis(model, x0, config.dim)
        summary = crlb_experiment(theta, build_phi_family(phi, x0), basis, config.photons, config.reps, config.seed, config.jobs)
        if summary.flagged:
            result.flag("replications-failed" if summary.failures else "unconverged")
        experiments.append(summary.model_dump())
    write_json({"experiments": experiments}, config.out)
    _record(result, config.out)

    if config.svg:
        figure = Figure(xlabel="parameter", ylabel="variance / quantum bound")
        for index, summary in enumerate(experiments):
            figure.add(f"run {index}", range(3), summary["variance_to_quantum"], "o-")
        render_svg(figure, config.svg)
        _record(result, config.svg)
    return result


def cmd_adaptive(config: RunConfig) -> CommandResult:
    model = psf_model(config)
    result = CommandResult()
    reports = []
    for s, q, phi in product(config.s, config.q, config.phi):
        theta = SourceParams(config.s0, s, q)
        schedule = AdaptiveSchedule(total_photons=config.photons, fraction=config.fraction, phi=phi, dimension=config.dim)
        summary = adaptive_experiment(schedule, theta, config.seed, config.reps, model, config.jobs)
        if summary.failures:
            result.flag("replications-failed")
        if summary.fallbacks:
            result.flag("stage1-fallback")
        reports.append(summary.model_dump())
    write_json({"adaptive": reports}, config.out)
    _record(result, config.out)

    if config.svg:
        figure = Figure(xlabel="run", ylabel="variance of s estimate", logy=True)
        runs = list(range(len(reports)))
        figure.add("stage 1", runs, [r["stage1_variance_s"] for r in reports], "o")
        figure.add("stage 2", runs, [r["stage2_variance_s"] for r in reports], "s")
        figure.add("direct imaging only", runs, [r["direct_variance_s"] for r in reports], "^")
        render_svg(figure, config.svg)
        _record(result, config.svg)
    return result


COMMANDS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "qfim": cmd_qfim,
    "scan-displacement": cmd_scan_displacement,
    "scan-separation": cmd_scan_separation,
    "robustness": cmd_robustness,
    "simulate": cmd_simulate,
    "adaptive": cmd_adaptive,
}
