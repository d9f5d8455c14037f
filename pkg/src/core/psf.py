"""
Real-amplitude point-spread functions and the scalar moments built from them.

Lengths are in units of the PSF width sigma. A shift acts as (e^{isP} f)(x) = f(x + s), which
fixes the sign of the imaginary overlap p_imag below.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.interpolate import BSpline, make_interp_spline
from scipy.special import comb, eval_hermitenorm

from src.core.errors import CapabilityError, DomainError, UsageError
from src.core.quadrature import (
    DEFAULT_NODES,
    QuadratureRule,
    check_refinement,
    composite_legendre_rule,
    gauss_hermite_rule,
)

logger = logging.getLogger(__name__)

GAUSSIAN_MAX_ORDER = 64
TABULATED_MAX_ORDER = 4
SPLINE_DEGREE = 5
BASE_STEP = 1e-4
MAX_PANELS = 20000
NORMALIZATION_TOL = 1e-10
MOMENT_RTOL = 1e-10
DIFFERENCE_MOMENT_RTOL = 1e-7
RESIDUAL_RTOL = 1e-7


class PsfKind(str, Enum):
    GAUSSIAN = "gaussian"
    TABULATED = "tabulated"


class DerivativeMethod(str, Enum):
    HERMITE_CLOSED_FORM = "hermite-closed-form"
    RICHARDSON = "richardson-central-difference"


@dataclass(frozen=True, eq=False)
class PsfTable:
    """Normalized samples of a tabulated amplitude PSF and their interpolant."""
    x: np.ndarray
    y: np.ndarray
    spline: BSpline
    source: Optional[str] = None

    @property
    def spacing(self) -> float:
        return float(np.min(np.diff(self.x)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        values = self.spline(np.asarray(x, dtype=float), extrapolate=False)
        return np.nan_to_num(values, nan=0.0)


@dataclass(frozen=True, eq=False)
class PsfModel:
    """
    A real amplitude PSF Psi(x) centered at the origin, normalized so that the integral of Psi^2 is 1.

    kind selects the representation; derivative_method records how d^n Psi / dx^n is obtained;
    n_nodes is the Gauss-Hermite node count used for Gaussian-matched quadrature.
    """
    kind: PsfKind
    sigma: float = 1.0
    derivative_method: DerivativeMethod = DerivativeMethod.HERMITE_CLOSED_FORM
    n_nodes: int = DEFAULT_NODES
    table: Optional[PsfTable] = field(default=None, repr=False)

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"PSF: width sigma must be positive, got {self.sigma}")
        if (self.kind == PsfKind.TABULATED) != (self.table is not None):
            raise UsageError("PSF: a tabulated PSF needs a table and a Gaussian PSF must not have one")

    @property
    def max_order(self) -> int:
        return GAUSSIAN_MAX_ORDER if self.kind == PsfKind.GAUSSIAN else TABULATED_MAX_ORDER

    def amplitude(self, x, order: int = 0) -> np.ndarray:
        """d^order Psi / dx^order evaluated at x."""
        if order < 0 or order > self.max_order:
            raise CapabilityError(
                f"PSF: derivative order {order} is not supported by the {self.kind.value} PSF "
                f"(maximum {self.max_order})"
            )
        x = np.asarray(x, dtype=float)
        if self.kind == PsfKind.GAUSSIAN:
            return _gaussian_derivative(x, order, self.sigma)
        if order == 0:
            return self.table(x)
        return richardson_derivative(self.table, x, order, _difference_step(order, self.sigma))

    def shift_difference(self, x, s: float) -> np.ndarray:
        """Psi(x + s) - Psi(x), evaluated without cancellation for the Gaussian."""
        x = np.asarray(x, dtype=float)
        if self.kind == PsfKind.GAUSSIAN:
            return self.amplitude(x) * np.expm1(-(2.0 * x * s + s * s) / (4.0 * self.sigma ** 2))
        return self.table(x + s) - self.table(x)

    def quadrature_rule(self, center: float = 0.0, reach: float = 0.0) -> QuadratureRule:
        """
        A rule suited to products of this PSF (and its derivatives) shifted by up to `reach`
        around `center`.
        """
        if self.kind == PsfKind.GAUSSIAN:
            return gauss_hermite_rule(self.n_nodes, center, self.sigma)
        lower = self.table.x[0] + center - abs(reach)
        upper = self.table.x[-1] + center + abs(reach)
        panels = int(min(MAX_PANELS, np.ceil(2.0 * (upper - lower) / self.table.spacing)))
        return composite_legendre_rule(lower, upper, max(panels, 16))

    def descriptor(self) -> dict:
        described = {
            "kind": self.kind.value,
            "sigma": self.sigma,
            "derivative_method": self.derivative_method.value,
            "quadrature": self.quadrature_rule().descriptor(),
        }
        if self.table is not None:
            described["table"] = self.table.source
        return described


def _gaussian_derivative(x: np.ndarray, order: int, sigma: float) -> np.ndarray:
    base = (2.0 * np.pi * sigma ** 2) ** -0.25 * np.exp(-x ** 2 / (4.0 * sigma ** 2))
    if order == 0:
        return base
    scale = np.sqrt(2.0) * sigma
    return (-1.0) ** order * scale ** -order * eval_hermitenorm(order, x / scale) * base


def _difference_step(order: int, sigma: float) -> float:
    if order <= 2:
        return BASE_STEP * sigma
    # balance the O(h^4) truncation of the extrapolated stencil against eps / h^order roundoff
    return sigma * np.finfo(float).eps ** (1.0 / (order + 4))


def richardson_derivative(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, order: int, step: float) -> np.ndarray:
    k = np.arange(order + 1)
    coefficients = (-1.0) ** k * comb(order, k)
    offsets = 0.5 * order - k

    def central(h: float) -> np.ndarray:
        total = sum(c * f(x + o * h) for c, o in zip(coefficients, offsets))
        return total / h ** order

    return (4.0 * central(0.5 * step) - central(step)) / 3.0


def eval_psf(model: PsfModel, order: int, x) -> np.ndarray:
    """d^n Psi / dx^n at x; exact for the Gaussian kind."""
    return model.amplitude(x, order)


def gaussian_psf(sigma: float = 1.0, n_nodes: int = DEFAULT_NODES) -> PsfModel:
    return PsfModel(kind=PsfKind.GAUSSIAN, sigma=float(sigma), n_nodes=int(n_nodes))


def tabulated_psf(x, y, source: Optional[str] = None, sigma: Optional[float] = None) -> PsfModel:
    """
    Build a PSF from samples. The amplitude is interpolated by a quintic spline, taken as zero
    outside the table, and rescaled to unit norm. sigma defaults to the RMS width of Psi^2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise UsageError("PSF: table needs two columns of equal length")
    if len(x) <= SPLINE_DEGREE:
        raise UsageError(f"PSF: table needs more than {SPLINE_DEGREE} rows, got {len(x)}")
    if np.iscomplexobj(y) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UsageError("PSF: table values must be finite real numbers")
    if np.any(np.diff(x) <= 0):
        raise UsageError("PSF: table abscissae must be strictly increasing")

    raw = PsfTable(x=x, y=y, spline=make_interp_spline(x, y, k=SPLINE_DEGREE), source=source)
    width = float(sigma) if sigma is not None else 1.0
    unnormalized = PsfModel(kind=PsfKind.TABULATED, sigma=width, derivative_method=DerivativeMethod.RICHARDSON, table=raw)
    rule = unnormalized.quadrature_rule()
    norm = float(np.sqrt(rule.integrate(raw(rule.nodes) ** 2)))
    if not norm > 0:
        raise UsageError("PSF: table has zero norm")
    y = y / norm
    table = PsfTable(x=x, y=y, spline=make_interp_spline(x, y, k=SPLINE_DEGREE), source=source)

    if sigma is None:
        intensity = table(rule.nodes) ** 2
        mean = rule.integrate(rule.nodes * intensity)
        width = float(np.sqrt(rule.integrate((rule.nodes - mean) ** 2 * intensity)))

    model = PsfModel(kind=PsfKind.TABULATED, sigma=width, derivative_method=DerivativeMethod.RICHARDSON, table=table)
    check = float(model.quadrature_rule().refined().integrate(table(model.quadrature_rule().refined().nodes) ** 2))
    if abs(check - 1.0) > NORMALIZATION_TOL:
        logger.warning(f"PSF: tabulated normalization off by {check - 1.0:.2e} under refinement")
    logger.info(f"PSF: loaded {len(x)} samples from {source or 'memory'}, rms width {width:.4g}")
    return model


def load_tabulated_psf(path: Union[str, Path], sigma: Optional[float] = None) -> PsfModel:
    """Read a whitespace-separated two-column (x, Psi(x)) file."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"PSF: table file {path} does not exist")
    try:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    except ValueError as e:
        raise UsageError(f"PSF: could not parse {path}: {e}") from e
    if data.shape[1] != 2:
        raise UsageError(f"PSF: {path} must have exactly two columns, found {data.shape[1]}")
    return tabulated_psf(data[:, 0], data[:, 1], source=str(path), sigma=sigma)


def psf_from_descriptor(descriptor: str, sigma: float = 1.0, n_nodes: int = DEFAULT_NODES) -> PsfModel:
    """Parse the command-line form 'gaussian' or 'table:<path>'."""
    if descriptor == PsfKind.GAUSSIAN.value:
        return gaussian_psf(sigma, n_nodes)
    if descriptor.startswith("table:"):
        return load_tabulated_psf(descriptor.split(":", 1)[1])
    raise UsageError(f"PSF: unknown descriptor '{descriptor}', expected 'gaussian' or 'table:<path>'")


@dataclass(frozen=True)
class PsfMoments:
    """
    Scalar quantities the closed-form information matrix depends on, at separation s:
    p_squared = <P^2>, w = <Psi|e^{isP}|Psi>, p_imag = Im <Psi|e^{isP} P|Psi>, fourth_moment = <P^4>.
    one_minus_w is integrated directly so that small separations keep full relative accuracy.
    """
    separation: float
    p_squared: float
    w: float
    p_imag: float
    fourth_moment: float
    one_minus_w: float

    @property
    def var_p_squared(self) -> float:
        return self.fourth_moment - self.p_squared ** 2

    @property
    def one_minus_w_squared(self) -> float:
        return self.one_minus_w * (1.0 + self.w)


def compute_moments(model: PsfModel, s: float) -> PsfMoments:
    """Moments entering the closed-form qFIM. Signed s is accepted: w is even, p_imag odd."""
    s = float(s)
    if not np.isfinite(s):
        raise DomainError(f"PSF: separation must be finite, got {s}")
    p_squared, fourth = _shape_moments(model)
    w, p_imag, one_minus_w = _overlap_moments(model, s)
    return PsfMoments(
        separation=s,
        p_squared=p_squared,
        w=w,
        p_imag=p_imag,
        fourth_moment=fourth,
        one_minus_w=one_minus_w,
    )


@lru_cache(maxsize=64)
def _shape_moments(model: PsfModel) -> Tuple[float, float]:
    def integrate(rule: QuadratureRule) -> np.ndarray:
        d1 = model.amplitude(rule.nodes, 1)
        d2 = model.amplitude(rule.nodes, 2)
        return rule.integrate(np.vstack([d1 * d1, d2 * d2]))

    rule = model.quadrature_rule()
    coarse, fine = integrate(rule), integrate(rule.refined())
    # second derivatives of a tabulated PSF carry finite-difference roundoff
    rtol = MOMENT_RTOL if model.kind == PsfKind.GAUSSIAN else DIFFERENCE_MOMENT_RTOL
    check_refinement(coarse[0], fine[0], fine[0], "<P^2>", rtol)
    check_refinement(coarse[1], fine[1], fine[1], "<P^4>", rtol)
    return float(fine[0]), float(fine[1])


@lru_cache(maxsize=4096)
def _overlap_moments(model: PsfModel, s: float) -> Tuple[float, float, float]:
    def integrate(rule: QuadratureRule) -> np.ndarray:
        psi = model.amplitude(rule.nodes, 0)
        shifted = model.amplitude(rule.nodes + s, 0)
        shifted_d1 = model.amplitude(rule.nodes + s, 1)
        step = model.shift_difference(rule.nodes, s)
        return rule.integrate(np.vstack([psi * shifted, -psi * shifted_d1, 0.5 * step ** 2]))

    rule = model.quadrature_rule(center=-0.5 * s, reach=0.5 * abs(s))
    coarse, fine = integrate(rule), integrate(rule.refined())
    p_scale = np.sqrt(_shape_moments(model)[0])
    check_refinement(coarse[0], fine[0], 1.0, "w(s)", MOMENT_RTOL)
    check_refinement(coarse[1], fine[1], p_scale, "Im p(s)", MOMENT_RTOL)
    check_refinement(coarse[2], fine[2], max(fine[2], 1e-300), "1 - w(s)", 1e-8)
    return float(fine[0]), float(fine[1]), float(fine[2])


def intensity_moments(model: PsfModel) -> Tuple[float, float]:
    """Mean and variance of the intensity PSF Psi^2."""
    rule = model.quadrature_rule()
    intensity = model.amplitude(rule.nodes) ** 2
    mean = float(rule.integrate(rule.nodes * intensity))
    variance = float(rule.integrate((rule.nodes - mean) ** 2 * intensity))
    return mean, variance


@lru_cache(maxsize=4096)
def shift_residual(model: PsfModel, s: float) -> float:
    """
    Squared norm of the part of Psi(x + s) lying outside span{Psi, Psi'}.

    p_squared times this equals p_squared (1 - w^2) - p_imag^2, the Gram determinant of
    {Psi, Psi', Psi(. + s)}. The residual is formed pointwise, so it keeps its relative accuracy
    at separations where the two terms of that difference agree to most digits.
    """
    s = float(s)
    moments = compute_moments(model, s)
    slope = moments.p_imag / moments.p_squared

    def integrate(rule: QuadratureRule) -> float:
        psi = model.amplitude(rule.nodes)
        residual = (
            model.shift_difference(rule.nodes, s)
            + moments.one_minus_w * psi
            - slope * model.amplitude(rule.nodes, 1)
        )
        return float(rule.integrate(residual ** 2))

    rule = model.quadrature_rule(center=-0.5 * s, reach=0.5 * abs(s))
    coarse, fine = integrate(rule), integrate(rule.refined())
    check_refinement(coarse, fine, fine, "shift residual", RESIDUAL_RTOL)
    return fine
