"""
Small-separation analysis of displaced measurements: the optimal displacement, the predicted
precision ratio, the Lorentzian shape of H_s as a function of misalignment, and the per-point
evaluation behind displacement and separation scans.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares, minimize

from src.core.errors import DomainError, FitFailure, SingularFisherError, UsageError
from src.core.psf import PsfModel
from src.limits.fisher import PrecisionTriple, SourceParams, precisions_from_fisher
from src.limits.quantum import quantum_precisions
from src.measurement.direct_imaging import direct_imaging_fim
from src.measurement.povm import QualityReport, build_phi_family, classical_fim
from src.modes.basis import DEFAULT_DIMENSION, build_basis

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 7
FIT_MAX_ITERATIONS = 500
FIT_XTOL = 1e-10

SCAN_COLUMNS = ("x0", "s", "q", "phi", "H_s0", "H_s", "H_q", "Hq_s0", "Hq_s", "Hq_q", "Hdir_s")
MEASURED_COLUMNS = ("H_s0", "H_s", "H_q")


def optimal_displacement(theta: SourceParams) -> float:
    """The intensity-weighted centroid s0 - s (1 - 2q) / 2."""
    return theta.s0 - 0.5 * theta.s * (1.0 - 2.0 * theta.q)


def lambda_prediction(q: float, report: QualityReport) -> float:
    """lambda = 4q(1 - q) A: the fraction of the quantum limit an aligned measurement keeps as s -> 0."""
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"POVM: relative intensity must lie in [0, 1], got {q}")
    return report.lambda_factor(q)


@dataclass(frozen=True)
class LorentzianFit:
    """H(x0) = l1 s^2 / (1 + l2 (x0 - s0 + l3 s)^2 / s^2); residual is RMS relative to the peak."""
    l1: float
    l2: float
    l3: float
    residual: float
    s: float
    s0: float = 0.0
    iterations: int = 0

    @property
    def center(self) -> float:
        return self.s0 - self.l3 * self.s

    @property
    def half_width(self) -> float:
        """Half width at half maximum."""
        return self.s / np.sqrt(self.l2)

    @property
    def peak(self) -> float:
        return self.l1 * self.s ** 2

    def evaluate(self, x0) -> np.ndarray:
        return lorentzian_model(np.asarray(x0, dtype=float), self.l1, self.l2, self.l3, self.s, self.s0)

    def to_dict(self) -> dict:
        return {
            "l1": self.l1, "l2": self.l2, "l3": self.l3, "residual": self.residual,
            "center": self.center, "half_width": self.half_width, "s": self.s, "s0": self.s0,
            "iterations": self.iterations,
        }


def lorentzian_model(x0: np.ndarray, l1: float, l2: float, l3: float, s: float, s0: float = 0.0) -> np.ndarray:
    return l1 * s ** 2 / (1.0 + l2 * (x0 - s0 + l3 * s) ** 2 / s ** 2)


def _initial_guess(x: np.ndarray, y: np.ndarray, s: float, s0: float) -> np.ndarray:
    peak = int(np.argmax(y))
    top = y[peak]
    centre = x[peak]
    if 0 < peak < len(x) - 1:
        # vertex of the parabola through the three samples around the peak
        (xa, xb, xc), (ya, yb, yc) = x[peak - 1:peak + 2], y[peak - 1:peak + 2]
        denominator = (xa - xb) * (xa - xc) * (xb - xc)
        a = (xc * (yb - ya) + xb * (ya - yc) + xa * (yc - yb)) / denominator
        b = (xc ** 2 * (ya - yb) + xb ** 2 * (yc - ya) + xa ** 2 * (yb - yc)) / denominator
        if a < 0:
            centre = -b / (2.0 * a)

    crossings = []
    below = np.nonzero(y[:peak] < 0.5 * top)[0]
    if below.size:
        i = below[-1]
        crossings.append(centre - np.interp(0.5 * top, [y[i], y[i + 1]], [x[i], x[i + 1]]))
    above = np.nonzero(y[peak:] < 0.5 * top)[0]
    if above.size:
        i = peak + above[0]
        crossings.append(np.interp(0.5 * top, [y[i], y[i - 1]], [x[i], x[i - 1]]) - centre)
    half_width = np.mean(np.abs(crossings)) if crossings else 0.5 * (x[-1] - x[0])
    half_width = max(half_width, np.finfo(float).eps * max(1.0, abs(centre)))

    return np.array([np.log(top / s ** 2), np.log(s ** 2 / half_width ** 2), (s0 - centre) / s])


def lorentzian_fit(samples: Sequence[Tuple[float, float]], s: float, s0: float = 0.0) -> LorentzianFit:
    """
    Fit the Lorentzian displacement profile to (x0, H) samples. A Nelder-Mead search on
    (log l1, log l2, l3) from the peak / half-width estimate is polished by least squares.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < MIN_FIT_SAMPLES:
        raise UsageError(f"FIT: need at least {MIN_FIT_SAMPLES} (x0, H) samples")
    if not s > 0:
        raise DomainError(f"FIT: separation scale must be positive, got {s}")
    data = data[np.argsort(data[:, 0])]
    x, y = data[:, 0], data[:, 1]
    if not np.all(np.isfinite(y)) or np.max(y) <= 0:
        raise FitFailure("FIT: samples must be finite with a positive peak", {"samples": len(y)})
    peak_index = int(np.argmax(y))
    if peak_index in (0, len(y) - 1):
        raise UsageError("FIT: samples do not bracket the peak")
    scale = y[peak_index]

    def residuals(params: np.ndarray) -> np.ndarray:
        return (lorentzian_model(x, np.exp(params[0]), np.exp(params[1]), params[2], s, s0) - y) / scale

    start = _initial_guess(x, y, s, s0)
    simplex = minimize(
        lambda p: float(np.sum(residuals(p) ** 2)),
        start,
        method="Nelder-Mead",
        options={"maxiter": FIT_MAX_ITERATIONS, "xatol": FIT_XTOL, "fatol": 1e-30},
    )
    polish = least_squares(residuals, simplex.x, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    best = polish.x if polish.status > 0 else simplex.x
    rms = float(np.sqrt(np.mean(residuals(best) ** 2)))
    diagnostics = {
        "simplex_message": simplex.message,
        "simplex_iterations": int(simplex.nit),
        "polish_status": int(polish.status),
        "rms_residual": rms,
        "start": start.tolist(),
    }
    if not np.isfinite(rms) or (polish.status <= 0 and not simplex.success):
        raise FitFailure("FIT: Lorentzian fit did not converge", diagnostics)
    logger.debug(f"FIT: converged after {simplex.nit} simplex steps, rms residual {rms:.2e}")
    return LorentzianFit(
        l1=float(np.exp(best[0])),
        l2=float(np.exp(best[1])),
        l3=float(best[2]),
        residual=rms,
        s=float(s),
        s0=float(s0),
        iterations=int(simplex.nit) + int(polish.nfev),
    )


@dataclass(frozen=True)
class ScanRow:
    x0: float
    s: float
    q: float
    phi: float
    H_s0: float
    H_s: float
    H_q: float
    Hq_s0: float
    Hq_s: float
    Hq_q: float
    Hdir_s: float
    flags: Tuple[str, ...] = field(default=())

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, column) for column in SCAN_COLUMNS)


NAN_PRECISIONS = PrecisionTriple(np.nan, np.nan, np.nan)


def safe_precisions(fisher, label: str, flags: List[str]) -> PrecisionTriple:
    """Precisions of a Fisher matrix, or of a zero-argument callable returning them; NaN and a flag when singular."""
    try:
        if callable(fisher):
            return fisher()
        return precisions_from_fisher(fisher)
    except (SingularFisherError, DomainError) as e:
        flags.append(f"{label}-singular")
        logger.warning(f"SCAN: {label} precisions unavailable: {e}")
        return NAN_PRECISIONS


def evaluate_scan_point(
    model: PsfModel,
    theta: SourceParams,
    phi: float,
    x0: float,
    dimension: int = DEFAULT_DIMENSION,
) -> ScanRow:
    """Measured, quantum and direct-imaging precisions for the phi-family displaced to x0."""
    flags: List[str] = []
    basis = build_basis(model, x0, dimension)
    measured_fim = classical_fim(build_phi_family(phi, x0), basis, theta)
    if measured_fim.unbounded:
        flags.append("unbounded")
    measured = safe_precisions(measured_fim, "measured", flags)
    quantum = safe_precisions(lambda: quantum_precisions(model, theta), "quantum", flags)
    direct = safe_precisions(direct_imaging_fim(model, theta), "direct", flags)
    return ScanRow(
        x0=float(x0), s=theta.s, q=theta.q, phi=float(phi),
        H_s0=measured.H_s0, H_s=measured.H_s, H_q=measured.H_q,
        Hq_s0=quantum.H_s0, Hq_s=quantum.H_s, Hq_q=quantum.H_q,
        Hdir_s=direct.H_s,
        flags=tuple(flags),
    )


def displacement_grid(theta: SourceParams, points: int = 201, half_span: Optional[float] = None) -> np.ndarray:
    """Uniform x0 grid over s0 +- half_span (default 5 s)."""
    half_span = 5.0 * theta.s if half_span is None else half_span
    if not half_span > 0:
        raise DomainError(f"SCAN: displacement span must be positive, got {half_span}")
    return np.linspace(theta.s0 - half_span, theta.s0 + half_span, points)


def peak_displacement(rows: Sequence[ScanRow]) -> float:
    """x0 of the largest finite measured H_s in a displacement scan."""
    values = np.array([row.H_s for row in rows])
    if not np.any(np.isfinite(values)):
        raise DomainError("SCAN: no finite precision in the scan")
    return rows[int(np.nanargmax(values))].x0
